#include <fmt/format.h>

#include "deffiller/metrics.hpp"

namespace deffiller::metrics {

std::string MetricReport::to_csv() const {
  std::string out = "category,metric,value\n";
  for (const auto& [category, s] : saliency) {
    out += fmt::format("{},s_alpha,{:.17g}\n", category, s.s_alpha);
    out += fmt::format("{},mae,{:.17g}\n", category, s.mae);
    out += fmt::format("{},e_max,{:.17g}\n", category, s.e_max);
    out += fmt::format("{},f_max,{:.17g}\n", category, s.f_max);
    out += fmt::format("{},count,{}\n", category, s.count);
    out += fmt::format("{},f_excluded,{}\n", category, s.f_excluded);
  }
  for (const auto& [category, value] : fid) out += fmt::format("{},fid,{:.17g}\n", category, value);
  return out;
}

std::string MetricReport::to_table() const {
  std::string out = fmt::format("{:<12} {:>9} {:>9} {:>9} {:>9}\n", "category", "S_alpha↑", "M↓", "E_max↑", "F_max↑");
  for (const auto& [category, s] : saliency) {
    out += fmt::format("{:<12} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", category, s.s_alpha, s.mae, s.e_max, s.f_max);
  }
  if (!fid.empty()) {
    out += fmt::format("FID ({})\n", extractor_id.empty() ? "unknown extractor" : extractor_id);
    for (const auto& [category, value] : fid) out += fmt::format("{:<12} {:>9.4f}\n", category, value);
  }
  return out;
}

}  // namespace deffiller::metrics
