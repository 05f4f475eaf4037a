#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

namespace {

ImageRecord attack_one(const models::LabeledImage& item, std::size_t index, models::TargetModel& model,
                       const pggn::GeneratorWeights& generator, const CampaignConfig& cfg, const fs::path& out_dir) {
  ImageRecord rec;
  rec.id = item.id;
  rec.true_label = item.label;
  rec.pre_label = models::argmax(model.classify(item.image));
  rec.post_label = rec.pre_label;
  if (rec.pre_label != item.label) {
    rec.skipped = true;
    return rec;
  }
  attack::AttackConfig acfg = cfg.attack;
  acfg.seed = derive_seed(cfg.seed, index);
  const attack::AttackResult res = cfg.mode == AttackMode::RandomCloud
                                       ? attack::random_cloud(item.image, item.label, model, generator, acfg)
                                       : attack::run_attack(item.image, item.label, model, generator, acfg);
  rec.success = res.success;
  rec.queries = res.queries;
  rec.post_label = res.predicted_label;
  rec.adversarial_loss = res.adversarial_loss;
  rec.mse = res.mse;
  rec.fitness = res.fitness;
  if (!out_dir.empty() && cfg.save_images) {
    rec.clean_path = (fs::path("clean") / (item.id + ".png")).generic_string();
    rec.adversarial_path = (fs::path("adv") / (item.id + ".png")).generic_string();
    fs::create_directories((out_dir / rec.clean_path).parent_path());
    fs::create_directories((out_dir / rec.adversarial_path).parent_path());
    imaging::save_png(item.image, out_dir / rec.clean_path);
    imaging::save_png(res.adversarial, out_dir / rec.adversarial_path);
  }
  return rec;
}

}  // namespace

CampaignReport run_campaign(const models::Dataset& source, models::TargetModel& model,
                            const pggn::GeneratorWeights& generator, const CampaignConfig& cfg,
                            const fs::path& out_dir, const Sources& sources, const ProgressCallback& progress) {
  cfg.attack.validate(generator.latent_dim());
  const models::Dataset data = align_labels(source, model.labels());
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = cfg.max_images == 0 ? data.items.size() : std::min(cfg.max_images, data.items.size());
  std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, n));
  if (model.concurrency() != models::Concurrency::Safe) workers = 1;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  std::vector<std::optional<ImageRecord>> slots(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  std::size_t done = 0;

  auto work = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        ImageRecord rec = attack_one(data.items[i], i, model, generator, cfg, out_dir);
        std::lock_guard lock(mu);
        slots[i] = rec;
        ++done;
        spdlog::debug("image {} ({}): {}", i, rec.id, rec.skipped ? "skipped" : rec.success ? "success" : "failed");
        if (progress) progress(done, n, rec);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  CampaignReport report;
  report.sources = sources;
  report.labels = data.labels;
  report.config = cfg;
  report.latent_dim = generator.latent_dim();
  for (auto& s : slots) {
    if (s) report.records.push_back(std::move(*s));
  }
  report.metrics = summarize(report.records);
  report.confusion = confusion_matrix(report.records, data.labels.size());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.complete = !error;
  if (!out_dir.empty()) write_report(report, out_dir);
  if (error) std::rethrow_exception(error);
  return report;
}

pggn::GeneratorWeights frozen_generator(std::size_t q, std::uint64_t seed) {
  Rng rng(seed);
  return pggn::GeneratorWeights::random(q, rng);
}

}  // namespace cloudadv::harness
