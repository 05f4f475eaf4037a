// cloudadv command-line front end.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cloudadv/harness.hpp"

namespace fs = std::filesystem;
using namespace cloudadv;

namespace {

constexpr std::uint64_t kFrozenGeneratorSeed = 7;

// How remote endpoints are called. Config keys remote_concurrent,
// remote_retries and remote_timeout_ms apply when the flag is absent.
struct RemoteFlags {
  std::optional<bool> concurrent;
  std::optional<std::size_t> retries, timeout_ms;

  void add(CLI::App* app) {
    app->add_option("--remote-concurrent", concurrent, "remote endpoint accepts concurrent queries (false)");
    app->add_option("--remote-retries", retries, "extra attempts after a timeout, network error or 5xx (2)");
    app->add_option("--remote-timeout-ms", timeout_ms, "per-request timeout (30000)");
  }

  models::RemoteOptions options(const harness::ConfigMap& file = {}) const {
    auto from_file = [&](const char* key) -> std::optional<std::string> {
      if (auto it = file.find(key); it != file.end()) return it->second;
      return std::nullopt;
    };
    models::RemoteOptions o;
    o.retries = 2;
    bool safe = false;
    if (concurrent) {
      safe = *concurrent;
    } else if (auto v = from_file("remote_concurrent")) {
      if (*v != "true" && *v != "false") throw std::invalid_argument("config key 'remote_concurrent': expected true or false");
      safe = *v == "true";
    }
    if (safe) o.concurrency = models::Concurrency::Safe;
    if (retries) {
      o.retries = *retries;
    } else if (auto v = from_file("remote_retries")) {
      o.retries = std::stoul(*v);
    }
    if (timeout_ms) {
      o.timeout = std::chrono::milliseconds(*timeout_ms);
    } else if (auto v = from_file("remote_timeout_ms")) {
      o.timeout = std::chrono::milliseconds(std::stoul(*v));
    }
    return o;
  }
};

// Attack/campaign flags shared by several subcommands. Each one overrides
// the config file only when given.
struct AttackFlags {
  std::optional<std::size_t> np, mq, q, workers, image_workers, max_images;
  std::optional<double> cr, f, alpha, t_lower, t_upper;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, dataset, out, pggn, mode, cloud_color;
  std::optional<bool> channel_effects;
  std::string config;
  RemoteFlags remote;

  void add(CLI::App* app, bool with_dataset) {
    remote.add(app);
    app->add_option("--np", np, "DE population size (100)");
    app->add_option("--cr", cr, "DE crossover probability (0.8)");
    app->add_option("--f", f, "DE differential weight (0.5)");
    app->add_option("--alpha", alpha, "weight of the MSE term in the fitness (0.25)");
    app->add_option("--mq", mq, "query budget per image (3000)");
    app->add_option("--q", q, "latent dimension of the frozen generator (52)");
    app->add_option("--seed", seed, "campaign seed (0)");
    app->add_option("--model", model, "toy:<weights.json> or remote:<http://host:port>");
    app->add_option("--pggn", pggn, "generator weight file; a frozen random generator otherwise");
    app->add_option("--out", out, "output path");
    app->add_option("--workers", workers, "concurrent queries inside one attack (model must be safe)");
    app->add_option("--t-lower", t_lower, "lower thickness bound (0.1)");
    app->add_option("--t-upper", t_upper, "upper thickness bound (0.65)");
    app->add_option("--cloud-color", cloud_color, "mean_to_white or white");
    app->add_option("--channel-effects", channel_effects, "enable channel misalignment and magnitudes");
    app->add_option("--config", config, "key = value config file; flags win over it");
    if (with_dataset) {
      app->add_option("--dataset", dataset, "class-per-subdirectory PNG folder or synthetic[:n:size:seed]");
      app->add_option("--image-workers", image_workers, "images attacked concurrently");
      app->add_option("--max-images", max_images, "attack at most this many images");
      app->add_option("--mode", mode, "optimized or random (one random cloud per image)");
    }
  }

  // defaults < file < flags
  harness::CampaignConfig campaign(harness::ConfigMap& file) const {
    if (!config.empty()) file = harness::load_config(config);
    harness::CampaignConfig cfg;
    harness::apply_config(file, cfg);
    harness::ConfigMap flags;
    auto put = [&](const char* key, const auto& v) {
      if (v) {
        std::ostringstream s;
        s << *v;
        flags[key] = s.str();
      }
    };
    put("np", np);
    put("cr", cr);
    put("f", f);
    put("alpha", alpha);
    put("mq", mq);
    put("seed", seed);
    put("workers", workers);
    put("image_workers", image_workers);
    put("max_images", max_images);
    put("t_lower", t_lower);
    put("t_upper", t_upper);
    put("mode", mode);
    put("cloud_color", cloud_color);
    if (channel_effects) flags["channel_effects"] = *channel_effects ? "true" : "false";
    harness::apply_config(flags, cfg);
    return cfg;
  }

  std::string pick(const std::optional<std::string>& flag, const harness::ConfigMap& file, const char* key,
                   const std::string& fallback = "") const {
    if (flag) return *flag;
    if (auto it = file.find(key); it != file.end()) return it->second;
    if (fallback.empty()) throw CLI::ValidationError(std::string("--") + key, "is required (flag or config file)");
    return fallback;
  }

  std::size_t latent(const harness::ConfigMap& file) const {
    if (q) return *q;
    if (auto it = file.find("q"); it != file.end()) return std::stoul(it->second);
    return pggn::kDefaultLatentDim;
  }

  // Trained weights when given, else the frozen random generator.
  std::pair<pggn::GeneratorWeights, std::string> generator(const harness::ConfigMap& file) const {
    const std::string path = pggn ? *pggn : (file.count("pggn") ? file.at("pggn") : "");
    if (!path.empty()) {
      auto w = pggn::load_weights(path).generator;
      if (q && w.latent_dim() != *q) {
        throw std::runtime_error("generator in " + path + " has q = " + std::to_string(w.latent_dim()));
      }
      return {std::move(w), path};
    }
    const std::size_t dim = latent(file);
    return {harness::frozen_generator(dim, kFrozenGeneratorSeed),
            "frozen:q" + std::to_string(dim) + ":seed" + std::to_string(kFrozenGeneratorSeed)};
  }
};

void print_metrics(const harness::Metrics& m) {
  std::printf("images %zu  misclassified %zu  successes %zu  failures %zu\n", m.n_total, m.n_misclassified, m.n_adv,
              m.n_failed);
  std::printf("ASR %s %%  AQ %s\n", harness::format_optional(m.asr).c_str(), harness::format_optional(m.aq).c_str());
}

int cmd_train_pggn(const pggn::TrainConfig& cfg, const std::string& out, const std::string& history) {
  std::FILE* hist = history.empty() ? nullptr : std::fopen(history.c_str(), "w");
  if (!history.empty() && !hist) throw std::runtime_error("cannot write " + history);
  if (hist) std::fprintf(hist, "epoch,discriminator_loss,generator_loss\n");
  const auto result = pggn::train(cfg, [&](std::size_t epoch, const pggn::EpochLoss& l, const pggn::TrainResult&) {
    std::printf("epoch %3zu  D %.5f  G %.5f\n", epoch, l.discriminator, l.generator);
    std::fflush(stdout);
    if (hist) std::fprintf(hist, "%zu,%.9g,%.9g\n", epoch, l.discriminator, l.generator);
  });
  if (hist) std::fclose(hist);
  pggn::save_weights({result.generator, result.discriminator}, out);
  const auto probe = pggn::probe_discriminator(result.generator, result.discriminator, 200, cfg.seed + 1);
  std::printf("D(real) %.4f  D(fake) %.4f  accuracy %.3f\n", probe.mean_real, probe.mean_fake, probe.accuracy);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_attack(const AttackFlags& flags, const std::string& image_path, const std::string& record_path) {
  harness::ConfigMap file;
  auto cfg = flags.campaign(file);
  auto model = models::open_model(flags.pick(flags.model, file, "model"), flags.remote.options(file));
  const auto [gen, gen_source] = flags.generator(file);
  const auto image = imaging::load_png(image_path);
  const std::size_t c = models::argmax(model->classify(image));
  cfg.attack.seed = cfg.seed;
  const auto res = attack::run_attack(image, c, *model, gen, cfg.attack);
  const std::string out = flags.pick(flags.out, file, "out", "adversarial.png");
  imaging::save_png(res.adversarial, out);
  std::printf("label %s -> %s  success %s  queries %zu  L_f %.6f  f_c %.6f  mse %.6f\n",
              model->labels()[c].c_str(), model->labels()[res.predicted_label].c_str(), res.success ? "yes" : "no",
              res.queries, res.fitness, res.adversarial_loss, res.mse);
  if (!record_path.empty()) {
    const nlohmann::json j{{"image", image_path},
                           {"adversarial", out},
                           {"original_label", model->labels()[c]},
                           {"predicted_label", model->labels()[res.predicted_label]},
                           {"success", res.success},
                           {"queries", res.queries},
                           {"fitness", res.fitness},
                           {"adversarial_loss", res.adversarial_loss},
                           {"mse", res.mse},
                           {"generations", res.generations},
                           {"seed", cfg.seed},
                           {"generator", gen_source},
                           {"params", res.params},
                           {"channel_dx", res.effects.dx},
                           {"channel_dy", res.effects.dy},
                           {"channel_magnitude", res.effects.magnitude}};
    std::ofstream(record_path) << j.dump(2) << '\n';
  }
  return res.success ? 0 : 3;
}

int cmd_campaign(const AttackFlags& flags) {
  harness::ConfigMap file;
  const auto cfg = flags.campaign(file);
  harness::Sources src;
  src.model = flags.pick(flags.model, file, "model");
  src.dataset = flags.pick(flags.dataset, file, "dataset");
  auto model = models::open_model(src.model, flags.remote.options(file));
  const auto data = harness::open_dataset(src.dataset);
  auto [gen, gen_source] = flags.generator(file);
  src.generator = gen_source;
  const fs::path out = flags.pick(flags.out, file, "out", "campaign");
  const auto report = harness::run_campaign(
      data, *model, gen, cfg, out, src, [](std::size_t done, std::size_t total, const harness::ImageRecord& r) {
        std::printf("[%zu/%zu] %s %s queries %zu\n", done, total, r.id.c_str(),
                    r.skipped ? "skipped" : (r.success ? "success" : "failed"), r.queries);
        std::fflush(stdout);
      });
  print_metrics(report.metrics);
  std::printf("report written to %s\n", out.string().c_str());
  return 0;
}

int cmd_sweep(const AttackFlags& flags, std::vector<std::size_t> qs, const std::string& pattern) {
  harness::ConfigMap file;
  const auto cfg = flags.campaign(file);
  harness::Sources src;
  src.model = flags.pick(flags.model, file, "model");
  src.dataset = flags.pick(flags.dataset, file, "dataset");
  auto model = models::open_model(src.model, flags.remote.options(file));
  const auto data = harness::open_dataset(src.dataset);
  const fs::path out = flags.pick(flags.out, file, "out", "sweep");
  if (qs.empty()) qs = harness::kDefaultSweepQ;
  auto generator_for = [&](std::size_t q) {
    if (pattern.empty()) return harness::frozen_generator(q, kFrozenGeneratorSeed);
    std::string path = pattern;
    const auto at = path.find("{q}");
    if (at == std::string::npos) throw std::runtime_error("--pggn-pattern must contain {q}");
    path.replace(at, 3, std::to_string(q));
    if (!fs::exists(path)) throw std::runtime_error("no generator weights for q = " + std::to_string(q) + " at " + path);
    return pggn::load_weights(path).generator;
  };
  src.generator = pattern.empty() ? "frozen:seed" + std::to_string(kFrozenGeneratorSeed) : pattern;
  const auto rows = harness::sweep_q(qs, generator_for, data, *model, cfg, out, src);
  fs::create_directories(out);
  const std::string csv = harness::sweep_csv(rows);
  std::ofstream(out / "sweep.csv") << csv;
  std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud adversarial examples: Perlin clouds shaped by a grid generator and tuned by differential evolution"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  // train-pggn
  auto* tp = app.add_subcommand("train-pggn", "train the grid generator against a discriminator");
  pggn::TrainConfig tcfg;
  std::string tp_out = "pggn.bin", tp_history, tp_loss = "non-saturating";
  tp->add_option("--grids", tcfg.grids_per_size, "real grid sets drawn from classical Perlin")->capture_default_str();
  tp->add_option("--epochs", tcfg.epochs)->capture_default_str();
  tp->add_option("--batch", tcfg.batch_size)->capture_default_str();
  tp->add_option("--q", tcfg.latent_dim, "latent dimension")->capture_default_str();
  tp->add_option("--lr", tcfg.lr)->capture_default_str();
  tp->add_option("--beta1", tcfg.beta1)->capture_default_str();
  tp->add_option("--beta2", tcfg.beta2)->capture_default_str();
  tp->add_option("--seed", tcfg.seed)->capture_default_str();
  tp->add_option("--loss", tp_loss, "non-saturating or minimax")->capture_default_str();
  tp->add_option("--real-label", tcfg.real_label, "target for real grids")->capture_default_str();
  tp->add_option("--instance-noise", tcfg.instance_noise, "std of noise on discriminator inputs")
      ->capture_default_str();
  tp->add_option("--gen-steps", tcfg.generator_steps, "generator updates per discriminator update")
      ->capture_default_str();
  tp->add_option("--out", tp_out, "weight file")->capture_default_str();
  tp->add_option("--history", tp_history, "per-epoch loss CSV");

  // train-toy
  auto* tt = app.add_subcommand("train-toy", "train the built-in softmax classifier");
  models::ToyTrainConfig ycfg;
  std::string tt_data = "synthetic:100:64:1", tt_test = "synthetic:30:64:2", tt_out = "toy.json";
  tt->add_option("--dataset", tt_data, "training images")->capture_default_str();
  tt->add_option("--test", tt_test, "held-out images for the accuracy report")->capture_default_str();
  tt->add_option("--epochs", ycfg.epochs)->capture_default_str();
  tt->add_option("--lr", ycfg.lr)->capture_default_str();
  tt->add_option("--batch", ycfg.batch_size)->capture_default_str();
  tt->add_option("--seed", ycfg.seed)->capture_default_str();
  tt->add_option("--out", tt_out)->capture_default_str();

  // synth-data
  auto* sd = app.add_subcommand("synth-data", "write the procedural texture dataset as PNG folders");
  std::size_t sd_n = 50, sd_size = 64;
  std::uint64_t sd_seed = 2;
  std::string sd_out = "synthetic";
  sd->add_option("--n", sd_n, "images per class")->capture_default_str();
  sd->add_option("--size", sd_size, "image side in pixels")->capture_default_str();
  sd->add_option("--seed", sd_seed)->capture_default_str();
  sd->add_option("--out", sd_out)->capture_default_str();

  // attack
  auto* at = app.add_subcommand("attack", "attack a single PNG image");
  AttackFlags at_flags;
  std::string at_image, at_record;
  at_flags.add(at, false);
  at->add_option("--image", at_image, "clean PNG")->required();
  at->add_option("--record", at_record, "write a JSON record of the attack");

  // campaign
  auto* cp = app.add_subcommand("campaign", "attack a dataset and write a report");
  AttackFlags cp_flags;
  cp_flags.add(cp, true);

  // transfer
  auto* tr = app.add_subcommand("transfer", "replay a campaign's successful examples against another model");
  std::string tr_report, tr_model;
  RemoteFlags tr_remote;
  tr_remote.add(tr);
  tr->add_option("--report", tr_report, "campaign output directory")->required();
  tr->add_option("--model", tr_model, "target model")->required();

  // defend
  auto* df = app.add_subcommand("defend", "JPEG-compress saved adversarial examples and re-classify");
  std::string df_report, df_model;
  int df_quality = 50;
  RemoteFlags df_remote;
  df_remote.add(df);
  df->add_option("--report", df_report, "campaign output directory")->required();
  df->add_option("--model", df_model, "model the examples were made for")->required();
  df->add_option("--quality", df_quality, "JPEG quality 1..100")->capture_default_str();

  // sweep-q
  auto* sq = app.add_subcommand("sweep-q", "one campaign per latent dimension");
  AttackFlags sq_flags;
  std::vector<std::size_t> sq_qs;
  std::string sq_pattern;
  sq_flags.add(sq, true);
  sq->add_option("--qs", sq_qs, "latent dimensions (44 48 52 56 60)");
  sq->add_option("--pggn-pattern", sq_pattern, "weight path with {q}; frozen random generators otherwise");

  // verify-report
  auto* vr = app.add_subcommand("verify-report", "recompute a report's aggregates from its records");
  std::vector<std::string> vr_dirs;
  vr->add_option("reports", vr_dirs, "campaign output directories")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*tp) {
      if (tp_loss == "minimax") {
        tcfg.generator_loss = pggn::GeneratorLoss::Minimax;
      } else if (tp_loss != "non-saturating") {
        throw CLI::ValidationError("--loss", "expected non-saturating or minimax");
      }
      return cmd_train_pggn(tcfg, tp_out, tp_history);
    }
    if (*tt) {
      const auto train = harness::open_dataset(tt_data);
      std::vector<double> history;
      const auto clf = models::toy_train(train, ycfg, &history);
      for (std::size_t e = 0; e < history.size(); ++e) std::printf("epoch %3zu  loss %.6f\n", e, history[e]);
      auto copy = clf;
      std::printf("train accuracy %.4f\n", models::accuracy(copy, train));
      if (!tt_test.empty()) std::printf("held-out accuracy %.4f\n", models::accuracy(copy, harness::open_dataset(tt_test)));
      clf.save(tt_out);
      std::printf("wrote %s\n", tt_out.c_str());
      return 0;
    }
    if (*sd) {
      harness::save_dataset_dir(models::synth_dataset(sd_n, sd_size, sd_seed), sd_out);
      std::printf("wrote %zu images to %s\n", sd_n * models::kSyntheticLabels.size(), sd_out.c_str());
      return 0;
    }
    if (*at) return cmd_attack(at_flags, at_image, at_record);
    if (*cp) return cmd_campaign(cp_flags);
    if (*tr) {
      auto model = models::open_model(tr_model, tr_remote.options());
      const auto r = harness::transfer_eval(tr_report, *model);
      std::printf("surrogate successes %zu  clean-correct on target %zu  fooled %zu\n", r.candidates,
                  r.clean_correct, r.fooled);
      std::printf("TASR %s %%\n", harness::format_optional(r.tasr).c_str());
      return 0;
    }
    if (*df) {
      auto model = models::open_model(df_model, df_remote.options());
      const auto r = harness::defense_eval(df_report, df_quality, *model);
      std::printf("JPEG quality %d  attacked %zu\n", r.quality, r.attacked);
      std::printf("ASR original %s %%  after defense %s %%\n", harness::format_optional(r.original_asr).c_str(),
                  harness::format_optional(r.defended_asr).c_str());
      std::printf("clean images flipped by the defense alone: %zu\n", r.clean_flips);
      return 0;
    }
    if (*sq) return cmd_sweep(sq_flags, sq_qs, sq_pattern);
    if (*vr) {
      int status = 0;
      for (const auto& d : vr_dirs) {
        const auto v = harness::verify_report(d);
        std::printf("%s: %s\n", d.c_str(), v.ok ? "ok" : "MISMATCH");
        for (const auto& p : v.problems) std::printf("  %s\n", p.c_str());
        if (!v.ok) status = 1;
      }
      return status;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
