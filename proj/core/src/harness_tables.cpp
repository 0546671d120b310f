#include <algorithm>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"

namespace deffiller::harness {

void FidTable::add_row(std::string label, std::vector<double> values) {
  require(values.size() == categories.size(), "FID row '{}' has {} values for {} categories", label, values.size(),
          categories.size());
  require(!values.empty(), "FID row '{}' is empty", label);
  const double average = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  rows.push_back({std::move(label), std::move(values), average});
}

std::size_t FidTable::best_row() const {
  require(!rows.empty(), "FID table has no rows");
  const auto it = std::min_element(rows.begin(), rows.end(),
                                   [](const Row& a, const Row& b) { return a.average < b.average; });
  return static_cast<std::size_t>(it - rows.begin());
}

std::string FidTable::to_csv() const {
  std::string out = row_header;
  for (const auto& c : categories) out += "," + c;
  out += ",AVG,best\n";
  const auto best = rows.empty() ? rows.size() : best_row();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += rows[r].label;
    for (double v : rows[r].values) out += fmt::format(",{:.17g}", v);
    out += fmt::format(",{:.17g},{}\n", rows[r].average, r == best ? 1 : 0);
  }
  return out;
}

std::string FidTable::to_table() const {
  std::string out = fmt::format("{:<10}", row_header);
  for (const auto& c : categories) out += fmt::format(" {:>10}", c);
  out += fmt::format(" {:>10}\n", "AVG");
  const auto best = rows.empty() ? rows.size() : best_row();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += fmt::format("{:<10}", rows[r].label + (r == best ? " *" : ""));
    for (double v : rows[r].values) out += fmt::format(" {:>10.4f}", v);
    out += fmt::format(" {:>10.4f}\n", rows[r].average);
  }
  out += fmt::format("FID on features '{}'; lower is better, * marks the best AVG. Values compare only within one "
                     "extractor.\n",
                     extractor_id);
  return out;
}

std::string ProtocolReport::to_csv() const {
  std::string out = "detector,arm,seed,category,metric,value\n";
  for (const auto& row : rows) {
    for (const auto& [category, s] : row.report.saliency) {
      const auto prefix = fmt::format("{},{},{},{}", row.detector, row.arm, row.seed, category);
      out += fmt::format("{},s_alpha,{:.17g}\n", prefix, s.s_alpha);
      out += fmt::format("{},mae,{:.17g}\n", prefix, s.mae);
      out += fmt::format("{},e_max,{:.17g}\n", prefix, s.e_max);
      out += fmt::format("{},f_max,{:.17g}\n", prefix, s.f_max);
    }
  }
  return out;
}

namespace {

struct Means {
  double s = 0.0, m = 0.0, e = 0.0, f = 0.0;
  int n = 0;
};

const metrics::SaliencyScores& overall(const ProtocolRow& row) {
  const auto it = row.report.saliency.find("all");
  require(it != row.report.saliency.end(), "protocol row for {}/{} has no aggregate scores", row.detector, row.arm);
  return it->second;
}

std::vector<std::string> detector_order(const std::vector<ProtocolRow>& rows) {
  std::vector<std::string> names;
  for (const auto& row : rows) {
    if (std::find(names.begin(), names.end(), row.detector) == names.end()) names.push_back(row.detector);
  }
  return names;
}

}  // namespace

std::string ProtocolReport::to_table() const {
  std::string out = fmt::format("{} (train {}, test {}, added {})\n", protocol, train_pairs, test_pairs, added_pairs);
  const auto header = fmt::format("{:<14} {:<10} {:>9} {:>9} {:>9} {:>9}\n", "detector", "arm", "S_alpha↑", "M↓",
                                  "E_max↑", "F_max↑");
  out += header;
  for (const auto& detector : detector_order(rows)) {
    for (const auto& arm : arms) {
      Means m;
      for (const auto& row : rows) {
        if (row.detector != detector || row.arm != arm) continue;
        const auto& s = overall(row);
        m.s += s.s_alpha;
        m.m += s.mae;
        m.e += s.e_max;
        m.f += s.f_max;
        ++m.n;
      }
      if (m.n == 0) continue;
      out += fmt::format("{:<14} {:<10} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", detector, arm, m.s / m.n, m.m / m.n,
                         m.e / m.n, m.f / m.n);
    }
  }
  out += "per seed\n";
  out += fmt::format("{:<14} {:<10} {:>6} {:>9} {:>9} {:>9} {:>9}\n", "detector", "arm", "seed", "S_alpha↑", "M↓",
                     "E_max↑", "F_max↑");
  for (const auto& row : rows) {
    const auto& s = overall(row);
    out += fmt::format("{:<14} {:<10} {:>6} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", row.detector, row.arm, row.seed,
                       s.s_alpha, s.mae, s.e_max, s.f_max);
  }
  return out;
}

double ProtocolReport::mean_s_alpha_delta(const std::string& arm) const {
  require(!arms.empty(), "protocol report has no arms");
  double total = 0.0;
  int count = 0;
  for (const auto& row : rows) {
    if (row.arm != arm) continue;
    for (const auto& base : rows) {
      if (base.arm == arms.front() && base.detector == row.detector && base.seed == row.seed) {
        total += overall(row).s_alpha - overall(base).s_alpha;
        ++count;
      }
    }
  }
  require(count > 0, "no rows of arm '{}' pair with the baseline arm", arm);
  return total / count;
}

}  // namespace deffiller::harness
