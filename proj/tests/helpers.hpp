#pragma once

#include <doctest.h>

#include <filesystem>
#include <string>

#include <unistd.h>

#include "coseg/error.hpp"
#include "coseg/grid.hpp"
#include "coseg/rng.hpp"

// Checks that `expr` throws coseg::Error with the given code.
#define CHECK_THROWS_CODE(expr, expected_code)                                   \
  do {                                                                           \
    bool thrown_ = false;                                                        \
    try {                                                                        \
      (void)(expr);                                                              \
    } catch (const coseg::Error& e_) {                                           \
      thrown_ = true;                                                            \
      CHECK_MESSAGE(e_.code() == (expected_code), coseg::error_code_name(e_.code())); \
    }                                                                            \
    CHECK_MESSAGE(thrown_, "expected coseg::Error from " #expr);                 \
  } while (false)

namespace testutil {

inline coseg::BinaryMask random_mask(int w, int h, coseg::SplitMix64& rng, double p = 0.5) {
  coseg::BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, rng.uniform() < p);
  return m;
}

inline bool two_class(const coseg::BinaryMask& m) {
  const auto fg = m.count_foreground();
  return fg > 0 && fg < m.size();
}

inline coseg::BinaryMask mask_from(int w, int h, const std::string& rows) {
  coseg::BinaryMask m(w, h);
  for (int i = 0; i < w * h; ++i) m.set(i % w, i / w, rows[static_cast<std::size_t>(i)] == '#');
  return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("coseg_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
