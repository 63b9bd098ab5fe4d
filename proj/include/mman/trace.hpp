#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mman {

// One training iteration: generator-side loss components plus the raw
// discriminator outputs observed during the discriminator phase.
struct TraceRow {
  std::int64_t iter = 0;
  double mce_low = 0;
  double mce_high = 0;
  double adv_macro = 0;
  double adv_micro = 0;
  struct DPair {
    double d_real = 0;
    double d_fake = 0;
  };
  std::vector<DPair> d;  // aligned with ConvergenceTrace::disc_names
};

struct ConvergenceTrace {
  std::vector<std::string> disc_names;  // canonical order: macro, micro, extra
  std::vector<TraceRow> rows;

  // monotone iteration index, finite values, aligned discriminator columns
  void validate() const;
};

// CSV schema: iter,L_mce_low,L_mce_high,L_adv_macro,L_adv_micro, then
// d_real_<name>,d_fake_<name> per discriminator.
std::string trace_csv(const ConvergenceTrace& trace);
void write_trace_csv(const ConvergenceTrace& trace, const std::string& path);
ConvergenceTrace read_trace_csv(const std::string& path);

}  // namespace mman
