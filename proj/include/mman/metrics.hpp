#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mman/data.hpp"
#include "mman/trace.hpp"

namespace mman {

struct IouResult {
  // Per-class IoU; classes absent from both maps carry no value and are
  // excluded from the mean (or count as 1 when absent_as_one is set).
  std::vector<std::optional<double>> per_class;
  double miou = 0;
};

IouResult iou(const IndexMap& pred, const IndexMap& gt, bool absent_as_one = false);

// Dataset-level IoU: intersections and unions aggregate over many map pairs
// before the ratio is taken.
class IouAccumulator {
 public:
  explicit IouAccumulator(int classes);
  void add(const IndexMap& pred, const IndexMap& gt);
  IouResult result(bool absent_as_one = false) const;

 private:
  std::vector<std::int64_t> inter_, pred_n_, gt_n_;
};

double pixel_accuracy(const IndexMap& pred, const IndexMap& gt);

// Percentage of pixels with no same-label neighbor under the chosen
// connectivity (4 or 8); border pixels use their existing neighbors only.
double ipr(const IndexMap& map, int connectivity = 4);

// iou applied to 1/16-scale maps.
double low_res_miou(const IndexMap& pred_low, const IndexMap& gt_low);

struct MetricsReport {
  int classes = 0;
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0;
  double low_res_miou = 0;
  double ipr_percent = 0;
  double pixel_acc = 0;

  std::string to_csv() const;
  std::string to_table() const;
};

enum class Convergence { good, poor, indeterminate };

std::string to_string(Convergence c);

struct ConvergenceVerdict {
  Convergence overall = Convergence::indeterminate;
  std::vector<std::pair<std::string, Convergence>> per_discriminator;
};

// Over the trailing tail_fraction of the trace: good when mean d_real and
// d_fake both sit within tol of 0.5 (generator fools the discriminator);
// poor when mean d_real >= 1-tol and mean d_fake <= tol (discriminator wins
// outright). Overall: good iff all good, poor iff any poor.
ConvergenceVerdict classify_convergence(const ConvergenceTrace& trace,
                                        double tail_fraction = 0.2,
                                        double tol = 0.1);

}  // namespace mman
