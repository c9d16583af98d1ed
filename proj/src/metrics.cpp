#include "coseg/metrics.hpp"

#include <json.hpp>

#include "coseg/error.hpp"

namespace coseg {

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts confusion(const BinaryMask& seg, const BinaryMask& gt) {
  if (seg.width() != gt.width() || seg.height() != gt.height()) {
    throw Error(ErrorCode::ShapeMismatch, "segmentation and ground truth differ in shape");
  }
  Counts c;
  const auto s = seg.labels();
  const auto g = gt.labels();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] && g[i]) ++c.tp;
    else if (s[i]) ++c.fp;
    else if (g[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

nlohmann::ordered_json scores_json(const MetricScores& s) {
  return {{"precision", s.precision}, {"pixel_accuracy", s.pixel_accuracy}, {"jaccard", s.jaccard}};
}

}  // namespace

double precision(const BinaryMask& seg, const BinaryMask& gt) {
  const Counts c = confusion(seg, gt);
  const std::size_t seg_size = c.tp + c.fp;
  if (seg_size == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(seg_size);
}

double pixel_accuracy(const BinaryMask& seg, const BinaryMask& gt) {
  const Counts c = confusion(seg, gt);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(seg.size());
}

double jaccard(const BinaryMask& seg, const BinaryMask& gt) {
  const Counts c = confusion(seg, gt);
  const std::size_t uni = c.tp + c.fp + c.fn;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(uni);
}

MetricScores score(const BinaryMask& seg, const BinaryMask& gt) {
  return {precision(seg, gt), pixel_accuracy(seg, gt), jaccard(seg, gt)};
}

void MetricsReport::finalize() {
  mean = {};
  if (items.empty()) return;
  for (const auto& item : items) {
    mean.precision += item.scores.precision;
    mean.pixel_accuracy += item.scores.pixel_accuracy;
    mean.jaccard += item.scores.jaccard;
  }
  const double n = static_cast<double>(items.size());
  mean.precision /= n;
  mean.pixel_accuracy /= n;
  mean.jaccard /= n;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["items"] = nlohmann::ordered_json::array();
  for (const auto& item : items) {
    nlohmann::ordered_json entry;
    entry["id"] = item.id;
    entry.update(scores_json(item.scores));
    doc["items"].push_back(std::move(entry));
  }
  doc["mean"] = scores_json(mean);
  return doc.dump(2) + "\n";
}

}  // namespace coseg
