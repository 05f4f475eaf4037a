#include <cstdio>
#include <stdexcept>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

std::optional<double> asr(std::size_t n_total, std::size_t n_misclassified, std::size_t n_adv) {
  if (n_misclassified > n_total) throw std::invalid_argument("more misclassified images than images");
  const std::size_t attacked = n_total - n_misclassified;
  if (n_adv > attacked) throw std::invalid_argument("more successes than attacked images");
  if (attacked == 0) return std::nullopt;
  return 100.0 * static_cast<double>(n_adv) / static_cast<double>(attacked);
}

std::optional<double> asr(const std::vector<ImageRecord>& records) {
  const Metrics m = summarize(records);
  return m.asr;
}

std::optional<double> aq(const std::vector<ImageRecord>& records) {
  std::size_t n_adv = 0;
  double total = 0.0;
  for (const auto& r : records) {
    if (r.skipped || !r.success) continue;
    ++n_adv;
    total += static_cast<double>(r.queries);
  }
  if (n_adv == 0) return std::nullopt;
  return total / static_cast<double>(n_adv);
}

Metrics summarize(const std::vector<ImageRecord>& records) {
  Metrics m;
  m.n_total = records.size();
  for (const auto& r : records) {
    if (r.skipped) {
      ++m.n_misclassified;
    } else if (r.success) {
      ++m.n_adv;
    } else {
      ++m.n_failed;
    }
  }
  m.asr = asr(m.n_total, m.n_misclassified, m.n_adv);
  m.aq = aq(records);
  return m;
}

Confusion confusion_matrix(const std::vector<ImageRecord>& records, std::size_t classes) {
  Confusion c(classes, std::vector<std::size_t>(classes, 0));
  for (const auto& r : records) {
    if (r.skipped) continue;
    if (r.true_label >= classes || r.post_label >= classes) {
      throw std::invalid_argument("record " + r.id + " has a label outside the class list");
    }
    ++c[r.true_label][r.post_label];
  }
  return c;
}

std::string format_optional(const std::optional<double>& v, int decimals) {
  if (!v) return "null";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return buf;
}

}  // namespace cloudadv::harness
