#pragma once

#include <string>
#include <vector>

#include "coseg/grid.hpp"

namespace coseg {

/// |seg ∩ gt| / |seg|. Empty seg scores 1 against empty gt and 0 otherwise.
double precision(const BinaryMask& seg, const BinaryMask& gt);

/// (TP + TN) / pixel count.
double pixel_accuracy(const BinaryMask& seg, const BinaryMask& gt);

/// |seg ∩ gt| / |seg ∪ gt|; 1 when both are empty.
double jaccard(const BinaryMask& seg, const BinaryMask& gt);

struct MetricScores {
  double precision = 0.0;
  double pixel_accuracy = 0.0;
  double jaccard = 0.0;
};

MetricScores score(const BinaryMask& seg, const BinaryMask& gt);

struct MetricsItem {
  std::string id;
  MetricScores scores;
};

struct MetricsReport {
  std::vector<MetricsItem> items;
  MetricScores mean;

  /// Recomputes `mean` as the arithmetic mean of the items.
  void finalize();
  /// {"items":[{"id",...,"precision","pixel_accuracy","jaccard"}],"mean":{...}}
  std::string to_json() const;
};

}  // namespace coseg
