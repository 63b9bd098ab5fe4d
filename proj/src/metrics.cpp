#include "mman/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace mman {

IouResult iou(const IndexMap& pred, const IndexMap& gt, bool absent_as_one) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("iou: map extents differ");
  const int classes = std::max(pred.classes, gt.classes);
  std::vector<std::int64_t> inter(static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> pred_n(inter.size(), 0);
  std::vector<std::int64_t> gt_n(inter.size(), 0);
  for (std::size_t i = 0; i < pred.at.size(); ++i) {
    const std::int32_t p = pred.at[i], g = gt.at[i];
    if (p < 0 || p >= classes || g < 0 || g >= classes)
      throw std::invalid_argument("iou: class id out of range");
    ++pred_n[static_cast<std::size_t>(p)];
    ++gt_n[static_cast<std::size_t>(g)];
    if (p == g) ++inter[static_cast<std::size_t>(p)];
  }
  IouResult out;
  out.per_class.resize(inter.size());
  double sum = 0;
  int counted = 0;
  for (std::size_t c = 0; c < inter.size(); ++c) {
    const std::int64_t uni = pred_n[c] + gt_n[c] - inter[c];
    if (uni == 0) {
      if (absent_as_one) {
        out.per_class[c] = 1.0;
        sum += 1.0;
        ++counted;
      }
      continue;
    }
    const double v = static_cast<double>(inter[c]) / static_cast<double>(uni);
    out.per_class[c] = v;
    sum += v;
    ++counted;
  }
  out.miou = counted ? sum / counted : 0.0;
  return out;
}

double pixel_accuracy(const IndexMap& pred, const IndexMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("pixel_accuracy: map extents differ");
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < pred.at.size(); ++i) hit += pred.at[i] == gt.at[i];
  return static_cast<double>(hit) / static_cast<double>(pred.at.size());
}

double ipr(const IndexMap& map, int connectivity) {
  if (map.h < 1 || map.w < 1) throw std::invalid_argument("ipr: empty map");
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("ipr: connectivity must be 4 or 8");
  static constexpr int dy8[] = {-1, 1, 0, 0, -1, -1, 1, 1};
  static constexpr int dx8[] = {0, 0, -1, 1, -1, 1, -1, 1};
  std::int64_t isolated = 0;
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const std::int32_t c = map(y, x);
      bool matched = false;
      for (int k = 0; k < connectivity && !matched; ++k) {
        const int ny = y + dy8[k], nx = x + dx8[k];
        if (ny < 0 || ny >= map.h || nx < 0 || nx >= map.w) continue;
        matched = map(ny, nx) == c;
      }
      isolated += !matched;
    }
  }
  return 100.0 * static_cast<double>(isolated) /
         static_cast<double>(map.at.size());
}

double low_res_miou(const IndexMap& pred_low, const IndexMap& gt_low) {
  return iou(pred_low, gt_low).miou;
}

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  os << "miou," << fmt4(miou) << "\n";
  os << "low_res_miou," << fmt4(low_res_miou) << "\n";
  os << "ipr_percent," << fmt4(ipr_percent) << "\n";
  os << "pixel_acc," << fmt4(pixel_acc) << "\n";
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    os << "iou_class_" << c << ",";
    os << (per_class_iou[c] ? fmt4(*per_class_iou[c]) : std::string("absent"));
    os << "\n";
  }
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << "  mIoU          " << fmt4(miou) << "\n";
  os << "  mIoU (low)    " << fmt4(low_res_miou) << "\n";
  os << "  IPR           " << fmt4(ipr_percent) << "%\n";
  os << "  pixel acc     " << fmt4(pixel_acc) << "\n";
  os << "  per-class IoU ";
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    if (c) os << " ";
    os << (per_class_iou[c] ? fmt4(*per_class_iou[c]) : std::string("-"));
  }
  os << "\n";
  return os.str();
}

std::string to_string(Convergence c) {
  switch (c) {
    case Convergence::good: return "good";
    case Convergence::poor: return "poor";
    case Convergence::indeterminate: return "indeterminate";
  }
  return "?";
}

ConvergenceVerdict classify_convergence(const ConvergenceTrace& trace,
                                        double tail_fraction, double tol) {
  trace.validate();
  if (trace.rows.size() < 10)
    throw std::invalid_argument("classify_convergence: trace shorter than 10 rows");
  if (!(tail_fraction > 0 && tail_fraction <= 1))
    throw std::invalid_argument("classify_convergence: tail fraction outside (0,1]");
  const std::size_t n = trace.rows.size();
  const std::size_t tail =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * tail_fraction)));

  ConvergenceVerdict verdict;
  bool all_good = !trace.disc_names.empty();
  bool any_poor = false;
  for (std::size_t d = 0; d < trace.disc_names.size(); ++d) {
    double mr = 0, mf = 0;
    for (std::size_t i = n - tail; i < n; ++i) {
      mr += trace.rows[i].d[d].d_real;
      mf += trace.rows[i].d[d].d_fake;
    }
    mr /= static_cast<double>(tail);
    mf /= static_cast<double>(tail);
    Convergence c = Convergence::indeterminate;
    if (std::fabs(mr - 0.5) <= tol && std::fabs(mf - 0.5) <= tol)
      c = Convergence::good;
    else if (mr >= 1.0 - tol && mf <= tol)
      c = Convergence::poor;
    verdict.per_discriminator.emplace_back(trace.disc_names[d], c);
    all_good = all_good && c == Convergence::good;
    any_poor = any_poor || c == Convergence::poor;
  }
  verdict.overall = any_poor ? Convergence::poor
                    : all_good ? Convergence::good
                               : Convergence::indeterminate;
  return verdict;
}

}  // namespace mman
