#include "mman/trace.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mman {

void ConvergenceTrace::validate() const {
  std::int64_t prev = -1;
  for (const TraceRow& r : rows) {
    if (r.iter <= prev)
      throw std::runtime_error("trace: iteration index not strictly increasing at " +
                               std::to_string(r.iter));
    prev = r.iter;
    if (r.d.size() != disc_names.size())
      throw std::runtime_error("trace: discriminator column count mismatch");
    const double vals[] = {r.mce_low, r.mce_high, r.adv_macro, r.adv_micro};
    for (double v : vals)
      if (!std::isfinite(v))
        throw std::runtime_error("trace: non-finite loss at iteration " +
                                 std::to_string(r.iter));
    for (const auto& p : r.d)
      if (!std::isfinite(p.d_real) || !std::isfinite(p.d_fake))
        throw std::runtime_error("trace: non-finite score at iteration " +
                                 std::to_string(r.iter));
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string trace_csv(const ConvergenceTrace& trace) {
  std::ostringstream os;
  os << "iter,L_mce_low,L_mce_high,L_adv_macro,L_adv_micro";
  for (const auto& n : trace.disc_names) os << ",d_real_" << n << ",d_fake_" << n;
  os << "\n";
  for (const TraceRow& r : trace.rows) {
    os << r.iter << ',' << fmt(r.mce_low) << ',' << fmt(r.mce_high) << ','
       << fmt(r.adv_macro) << ',' << fmt(r.adv_micro);
    for (const auto& p : r.d) os << ',' << fmt(p.d_real) << ',' << fmt(p.d_fake);
    os << "\n";
  }
  return os.str();
}

void write_trace_csv(const ConvergenceTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("trace: cannot write '" + path + "'");
  f << trace_csv(trace);
}

ConvergenceTrace read_trace_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("trace: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("trace: empty file '" + path + "'");

  ConvergenceTrace trace;
  {
    std::istringstream hs(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    const std::vector<std::string> fixed = {"iter", "L_mce_low", "L_mce_high",
                                            "L_adv_macro", "L_adv_micro"};
    if (cols.size() < fixed.size() || (cols.size() - fixed.size()) % 2)
      throw std::runtime_error("trace: malformed header in '" + path + "'");
    for (std::size_t i = 0; i < fixed.size(); ++i)
      if (cols[i] != fixed[i])
        throw std::runtime_error("trace: unexpected column '" + cols[i] + "'");
    for (std::size_t i = fixed.size(); i < cols.size(); i += 2) {
      if (cols[i].rfind("d_real_", 0) != 0 || cols[i + 1].rfind("d_fake_", 0) != 0)
        throw std::runtime_error("trace: unexpected column '" + cols[i] + "'");
      trace.disc_names.push_back(cols[i].substr(7));
    }
  }

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5 + 2 * trace.disc_names.size())
      throw std::runtime_error("trace: malformed row in '" + path + "'");
    TraceRow r;
    r.iter = std::stoll(cells[0]);
    r.mce_low = std::stod(cells[1]);
    r.mce_high = std::stod(cells[2]);
    r.adv_macro = std::stod(cells[3]);
    r.adv_micro = std::stod(cells[4]);
    for (std::size_t i = 0; i < trace.disc_names.size(); ++i)
      r.d.push_back({std::stod(cells[5 + 2 * i]), std::stod(cells[6 + 2 * i])});
    trace.rows.push_back(std::move(r));
  }
  trace.validate();
  return trace;
}

}  // namespace mman
