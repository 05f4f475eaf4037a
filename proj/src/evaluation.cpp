#include <cstdio>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

namespace {

void check_labels(const CampaignReport& report, models::TargetModel& model) {
  if (report.labels.size() != model.label_count()) {
    throw std::invalid_argument("report has " + std::to_string(report.labels.size()) + " classes but the model has " +
                                std::to_string(model.label_count()));
  }
}

std::size_t predict(models::TargetModel& model, const Image& img) { return models::argmax(model.classify(img)); }

Image load_artifact(const fs::path& dir, const ImageRecord& r, const std::string& rel) {
  if (rel.empty()) throw std::runtime_error("record " + r.id + " has no saved image");
  return imaging::load_png(dir / rel);
}

}  // namespace

TransferResult transfer_eval(const fs::path& report_dir, models::TargetModel& target) {
  const CampaignReport report = read_report(report_dir);
  check_labels(report, target);
  TransferResult out;
  for (const auto& r : report.records) {
    if (r.skipped || !r.success) continue;
    ++out.candidates;
    if (predict(target, load_artifact(report_dir, r, r.clean_path)) != r.true_label) continue;
    ++out.clean_correct;
    if (predict(target, load_artifact(report_dir, r, r.adversarial_path)) != r.true_label) ++out.fooled;
  }
  if (out.clean_correct > 0) out.tasr = 100.0 * static_cast<double>(out.fooled) / static_cast<double>(out.clean_correct);
  return out;
}

DefenseResult defense_eval(const fs::path& report_dir, int quality, models::TargetModel& model) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("JPEG quality must be within 1..100");
  const CampaignReport report = read_report(report_dir);
  check_labels(report, model);
  DefenseResult out;
  out.quality = quality;
  std::size_t skipped = 0;
  for (const auto& r : report.records) {
    if (r.skipped) {
      ++skipped;
      continue;
    }
    ++out.attacked;
    const Image clean = load_artifact(report_dir, r, r.clean_path);
    if (predict(model, imaging::jpeg_roundtrip(clean, quality)) != r.true_label) ++out.clean_flips;
    if (!r.success) continue;
    ++out.original_successes;
    const Image adv = load_artifact(report_dir, r, r.adversarial_path);
    if (predict(model, imaging::jpeg_roundtrip(adv, quality)) != r.true_label) ++out.defended_successes;
  }
  const std::size_t total = report.records.size();
  out.original_asr = asr(total, skipped, out.original_successes);
  out.defended_asr = asr(total, skipped, out.defended_successes);
  return out;
}

std::vector<SweepRow> sweep_q(const std::vector<std::size_t>& qs,
                              const std::function<pggn::GeneratorWeights(std::size_t)>& generator_for,
                              const models::Dataset& data, models::TargetModel& model, const CampaignConfig& cfg,
                              const fs::path& out_dir, const Sources& sources) {
  if (qs.empty()) throw std::invalid_argument("sweep needs at least one q");
  std::vector<SweepRow> rows;
  for (std::size_t q : qs) {
    const pggn::GeneratorWeights g = generator_for(q);
    if (g.latent_dim() != q) {
      throw std::invalid_argument("generator for q = " + std::to_string(q) + " has latent dimension " +
                                  std::to_string(g.latent_dim()));
    }
    const fs::path dir = out_dir.empty() ? fs::path() : out_dir / ("q" + std::to_string(q));
    Sources src = sources;
    if (src.generator.empty()) src.generator = "q" + std::to_string(q);
    const CampaignReport r = run_campaign(data, model, g, cfg, dir, src);
    rows.push_back({q, r.metrics});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "q,n_total,n_misclassified,n_adv,n_failed,asr,aq\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out += std::to_string(r.q) + "," + std::to_string(m.n_total) + "," + std::to_string(m.n_misclassified) + "," +
           std::to_string(m.n_adv) + "," + std::to_string(m.n_failed) + "," + format_optional(m.asr, 4) + "," +
           format_optional(m.aq, 4) + "\n";
  }
  return out;
}

}  // namespace cloudadv::harness
