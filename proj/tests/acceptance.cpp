// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass a directory argument to keep the campaign artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "cloudadv/harness.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cloudadv;
namespace fs = std::filesystem;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_seconds) {
    out.pass = false;
    out.note("over the " + fmt("%.0f", budget_seconds) + " s budget");
  }
  failures += !out.pass;
  std::printf("%s  %-28s %7.1f s  %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), secs, out.detail.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------

Outcome perlin_correctness() {
  Outcome out;
  Rng rng(101);
  double lattice = 0.0;
  for (std::size_t cells : {1u, 4u, 8u, 16u, 64u}) {
    const auto g = perlin::random_unit_grid(cells, rng);
    for (std::size_t j = 0; j < cells; ++j) {
      for (std::size_t i = 0; i < cells; ++i) {
        lattice = std::max(lattice, std::abs(perlin::perlin_value(g, double(i), double(j))));
      }
    }
  }
  out.require(lattice <= 1e-12, "lattice value " + fmt("%.3g", lattice));

  double peak = 0.0;
  const auto g8 = perlin::random_unit_grid(8, rng);
  for (int n = 0; n < 100000; ++n) {
    if (n % 10000 == 0 && n > 0) {
      const auto g = perlin::random_unit_grid(8, rng);
      peak = std::max(peak, std::abs(perlin::perlin_value(g, uniform(rng, 0, 8), uniform(rng, 0, 8))));
    }
    peak = std::max(peak, std::abs(perlin::perlin_value(g8, uniform(rng, 0, 7.999999), uniform(rng, 0, 7.999999))));
  }
  out.require(peak <= std::numbers::sqrt2 / 2 + 1e-9, "peak " + fmt("%.6f", peak));

  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t cells = 1 + rng() % 8, h = 1 + rng() % 16, w = 1 + rng() % 16;
    perlin::GradientGrid g(cells);
    for (auto& v : g.vectors()) v = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const auto m = perlin::render_mask(g, h, w);
    for (std::size_t v = 0; v < h; ++v) {
      for (std::size_t u = 0; u < w; ++u) {
        const double x = (u + 0.5) / double(w) * double(cells), y = (v + 0.5) / double(h) * double(cells);
        worst = std::max(worst, std::abs(m.at(v, u) - testing::oracle_value(g, x, y)));
      }
    }
  }
  out.require(worst <= 1e-12, "renderer deviation " + fmt("%.3g", worst));
  out.note("lattice " + fmt("%.1e", lattice) + ", peak " + fmt("%.4f", peak) + ", renderer " + fmt("%.1e", worst));
  return out;
}

Outcome mask_fusion_identities(const pggn::GeneratorWeights& gen) {
  Outcome out;
  Rng rng(202);
  std::size_t cases = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t h = 4 + rng() % 40, w = 4 + rng() % 40;
    std::array<perlin::Mask, 5> masks;
    for (std::size_t i = 0; i < 5; ++i) masks[i] = perlin::render_mask(perlin::random_unit_grid(pggn::kGridCells[i], rng), h, w);
    std::array<double, 5> k;
    for (double& v : k) v = uniform(rng, 0, 1);
    const double t = uniform(rng, 0.01, 1.0);
    const auto m = perlin::compose_masks(masks, k, t);
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    out.require(*lo == 0.0 && *hi == t, "case " + std::to_string(c) + " spans [" + fmt("%.17g", *lo) + ", " +
                                            fmt("%.17g", *hi) + "] for t " + fmt("%.17g", t));
    ++cases;
  }
  const auto data = models::synth_dataset(2, 48, 3);
  attack::AttackConfig cfg;
  const auto effects = attack::channel_effects_for(cfg);
  for (const auto& it : data.items) {
    attack::CloudParams p{pggn::sample_latent(gen.latent_dim(), rng), attack::kDefaultKUpper, 0.0};
    const auto mask = attack::synthesize_cloud(p, gen, 48, 48, effects);
    const bool zero = std::all_of(mask.values().begin(), mask.values().end(), [](double v) { return v == 0.0; });
    const auto fused = attack::fuse(it.image, mask, attack::cloud_color_image(it.image, mask));
    const auto rendered = attack::render_candidate(it.image, p, gen, effects, attack::CloudColor::MeanToWhite);
    out.require(zero && fused == it.image && rendered == it.image, "t = 0 altered " + it.id);
  }
  out.note(std::to_string(cases) + " compositions, " + std::to_string(data.items.size()) + " identity images");
  return out;
}

Outcome tensor_gradients() {
  Outcome out;
  Rng rng(303);
  using testing::gradient_check;
  using testing::random_tensor;
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  using Build = testing::BuildFn<double>;
  struct Case {
    std::vector<Tensor<double>> inputs;
    Build build;
  };
  const std::vector<std::pair<std::string, std::function<Case()>>> ops{
      {"fully_connected",
       [&] {
         const std::size_t b = pick(1, 4), in = pick(1, 6), o = pick(1, 5);
         return Case{{random_tensor<double>({b, in}, rng), random_tensor<double>({in, o}, rng),
                      random_tensor<double>({o}, rng)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return t.fully_connected(v[0], v[1], v[2]); }};
       }},
      {"conv2d",
       [&] {
         const std::size_t b = pick(1, 2), ci = pick(1, 3), co = pick(1, 3), k = pick(1, 3), s = pick(1, 2),
                           p = pick(0, 1), hw = pick(k, 6);
         return Case{{random_tensor<double>({b, ci, hw, hw}, rng), random_tensor<double>({co, ci, k, k}, rng),
                      random_tensor<double>({co}, rng)},
                     [s, p](Tape<double>& t, const std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2], s, p); }};
       }},
      {"deconv2d",
       [&] {
         const std::size_t b = pick(1, 2), ci = pick(1, 3), co = pick(1, 3), k = 3, s = pick(1, 2), p = pick(0, 1),
                           hw = pick(1, 4);
         return Case{{random_tensor<double>({b, ci, hw, hw}, rng), random_tensor<double>({ci, co, k, k}, rng),
                      random_tensor<double>({co}, rng)},
                     [s, p](Tape<double>& t, const std::vector<Var>& v) { return t.deconv2d(v[0], v[1], v[2], s, p); }};
       }},
      {"leaky_relu",
       [&] {
         auto x = random_tensor<double>({pick(1, 3), pick(1, 5)}, rng, -2, 2);
         testing::push_away_from_zero(x);
         return Case{{x}, [](Tape<double>& t, const std::vector<Var>& v) { return t.leaky_relu(v[0]); }};
       }},
      {"tanh",
       [&] {
         return Case{{random_tensor<double>({pick(1, 3), pick(1, 5)}, rng, -2, 2)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return t.tanh(v[0]); }};
       }},
      {"sigmoid",
       [&] {
         return Case{{random_tensor<double>({pick(1, 3), pick(1, 5)}, rng, -3, 3)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); }};
       }},
      {"concat_channels",
       [&] {
         const std::size_t b = pick(1, 2), h = pick(1, 3);
         return Case{{random_tensor<double>({b, pick(1, 3), h, h}, rng), random_tensor<double>({b, pick(1, 3), h, h}, rng)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return t.concat_channels(v[0], v[1]); }};
       }},
      {"slice_channels",
       [&] {
         const std::size_t c = pick(2, 5), lo = pick(0, c - 1), hi = pick(lo + 1, c);
         return Case{{random_tensor<double>({pick(1, 2), c, 2, 3}, rng)},
                     [lo, hi](Tape<double>& t, const std::vector<Var>& v) { return t.slice_channels(v[0], lo, hi); }};
       }},
      {"reshape",
       [&] {
         const std::size_t a = pick(1, 4), b = pick(1, 4);
         return Case{{random_tensor<double>({a, b, 2}, rng)},
                     [a, b](Tape<double>& t, const std::vector<Var>& v) { return t.reshape(v[0], {b, 2 * a}); }};
       }},
      {"add",
       [&] {
         const tensor::Shape s{pick(1, 3), pick(1, 4)};
         return Case{{random_tensor<double>(s, rng), random_tensor<double>(s, rng)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }};
       }},
      {"scale",
       [&] {
         const double f = uniform(rng, -2, 2);
         return Case{{random_tensor<double>({pick(1, 3), pick(1, 4)}, rng)},
                     [f](Tape<double>& t, const std::vector<Var>& v) { return t.scale(v[0], f); }};
       }},
      {"bce_loss",
       [&] {
         const double target = double(rng() % 2);
         return Case{{random_tensor<double>({pick(1, 6), 1}, rng, 0.05, 0.95)},
                     [target](Tape<double>& t, const std::vector<Var>& v) { return t.bce_loss(v[0], target); }};
       }},
      {"bce_with_logits",
       [&] {
         const double target = uniform(rng, 0, 1);
         return Case{{random_tensor<double>({pick(1, 6), 1}, rng, -4, 4)},
                     [target](Tape<double>& t, const std::vector<Var>& v) { return t.bce_with_logits(v[0], target); }};
       }},
      {"softmax_cross_entropy",
       [&] {
         const std::size_t b = pick(1, 4), m = pick(2, 6);
         std::vector<std::size_t> labels(b);
         for (auto& l : labels) l = rng() % m;
         return Case{{random_tensor<double>({b, m}, rng, -3, 3)},
                     [labels](Tape<double>& t, const std::vector<Var>& v) { return t.softmax_cross_entropy(v[0], labels); }};
       }},
  };
  double worst = 0.0;
  for (const auto& [name, make] : ops) {
    double op_worst = 0.0;
    for (int shape = 0; shape < 20; ++shape) {
      const Case c = make();
      op_worst = std::max(op_worst, gradient_check<double>(c.inputs, c.build, rng));
    }
    out.require(op_worst < 1e-6, name + " relative error " + fmt("%.2g", op_worst));
    worst = std::max(worst, op_worst);
  }
  out.note(std::to_string(ops.size()) + " ops x 20 shapes, worst " + fmt("%.2g", worst));
  return out;
}

Outcome de_properties() {
  Outcome out;
  const de::Bounds b{{-2, -1, 0, 0.1, -5}, {2, 1, 1, 0.65, 5}};
  std::size_t calls = 0;
  bool inside = true, monotone = true;
  double best = std::numeric_limits<double>::infinity();
  de::Config cfg;
  cfg.np = 15;
  cfg.max_evals = 2011;
  cfg.f = 1.4;
  cfg.seed = 77;
  auto rugged = [&](std::span<const double> x) {
    ++calls;
    inside = inside && b.contains(x);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::sin(7 * x[i] * (i + 1)) + 0.1 * x[i] * x[i];
    return s;
  };
  const auto r = de::run(rugged, b, cfg, [&](const de::Evaluation& e) {
    if (e.is_best) {
      monotone = monotone && e.fitness <= best;
      best = e.fitness;
    }
    return false;
  });
  out.require(inside, "vector outside bounds");
  out.require(monotone && std::is_sorted(r.history.rbegin(), r.history.rend()), "best-so-far increased");
  out.require(calls == r.evaluations && calls == cfg.max_evals, "evaluation count " + std::to_string(calls));

  de::Config sc;
  sc.np = 50;
  sc.max_evals = 20000;
  sc.seed = 2024;
  const de::Bounds box{std::vector<double>(10, -5.0), std::vector<double>(10, 5.0)};
  const auto s = de::run(
      [](std::span<const double> x) {
        double v = 0.0;
        for (double c : x) v += c * c;
        return v;
      },
      box, sc);
  out.require(s.best_fitness < 1e-2, "sphere best " + fmt("%.3g", s.best_fitness));
  out.note("sphere best " + fmt("%.2e", s.best_fitness) + " in " + std::to_string(s.evaluations) + " evaluations");
  return out;
}

Outcome pggn_training(pggn::TrainResult& trained) {
  Outcome out;
  const pggn::TrainConfig cfg;  // desk defaults: 500 grids per size, 50 epochs
  trained = pggn::train(cfg);   // throws on a NaN loss
  bool finite = trained.history.size() == cfg.epochs;
  for (const auto& l : trained.history) finite = finite && std::isfinite(l.discriminator) && std::isfinite(l.generator);
  out.require(finite, "non-finite loss history");

  std::vector<pggn::GridSet> real, fake;
  Rng rng(9001);
  for (int i = 0; i < 200; ++i) {
    real.push_back(pggn::sample_real_gridset(rng()));
    fake.push_back(pggn::generate(pggn::sample_latent(cfg.latent_dim, rng), trained.generator));
  }
  const auto rs = pggn::component_stats(real), fs = pggn::component_stats(fake);
  out.require(std::abs(fs.mean - rs.mean) <= 0.1, "mean off by " + fmt("%.3f", fs.mean - rs.mean));
  out.require(std::abs(fs.stddev - rs.stddev) <= 0.15, "std off by " + fmt("%.3f", fs.stddev - rs.stddev));
  const auto probe = pggn::probe_discriminator(trained.generator, trained.discriminator, 200, 424242);
  out.require(probe.mean_real - probe.mean_fake > 0, "D(real) - D(fake) = " + fmt("%.3f", probe.mean_real - probe.mean_fake));
  out.note("fake mean " + fmt("%.3f", fs.mean) + " std " + fmt("%.3f", fs.stddev) + " vs real " +
           fmt("%.3f", rs.mean) + "/" + fmt("%.3f", rs.stddev) + ", D gap " +
           fmt("%.3f", probe.mean_real - probe.mean_fake));
  return out;
}

struct Campaigns {
  fs::path optimized, random;
  harness::CampaignReport opt_report, rand_report;
};

Outcome attack_efficacy(const pggn::GeneratorWeights& gen, models::ToyClassifier& toy, const fs::path& root,
                        Campaigns& c) {
  Outcome out;
  auto data = models::synth_dataset(9, 64, 2);
  data.items.resize(50);
  harness::CampaignConfig cfg;  // np 100, cr 0.8, f 0.5, alpha 0.25, mq 3000
  cfg.seed = 5;
  c.optimized = root / "optimized";
  c.random = root / "random";
  fs::remove_all(c.optimized);
  fs::remove_all(c.random);
  c.opt_report = harness::run_campaign(data, toy, gen, cfg, c.optimized, {"toy", "synthetic:9:64:2", "trained"});
  cfg.mode = harness::AttackMode::RandomCloud;
  c.rand_report = harness::run_campaign(data, toy, gen, cfg, c.random, {"toy", "synthetic:9:64:2", "trained"});

  const auto& om = c.opt_report.metrics;
  const auto& rm = c.rand_report.metrics;
  out.require(om.asr && rm.asr, "no attackable images");
  if (!out.pass) return out;
  out.require(*om.asr - *rm.asr >= 20.0, "ASR gap " + fmt("%.1f", *om.asr - *rm.asr));
  out.require(!om.aq || *om.aq <= 3000.0, "AQ " + fmt("%.1f", om.aq.value_or(0)));
  std::size_t reverified = 0;
  for (const auto& r : c.opt_report.records) {
    if (!r.success) continue;
    const auto back = imaging::load_png(c.optimized / r.adversarial_path);
    reverified += models::argmax(toy.classify(back)) != r.true_label;
  }
  out.require(reverified == om.n_adv, std::to_string(om.n_adv - reverified) + " successes do not re-verify");
  out.note("ASR " + harness::format_optional(om.asr, 1) + " vs random " + harness::format_optional(rm.asr, 1) +
           ", AQ " + harness::format_optional(om.aq, 1) + ", " + std::to_string(reverified) + " re-verified");
  return out;
}

Outcome metrics_arithmetic(const Campaigns& c) {
  Outcome out;
  out.require(harness::format_optional(harness::asr(400, 29, 345), 1) == "93.0", "345/(400-29)");
  std::vector<harness::ImageRecord> rs(5);
  for (std::size_t i = 0; i < 5; ++i) {
    rs[i].id = std::to_string(i);
    rs[i].success = i < 3;
    rs[i].queries = 100 * (i + 1);
    rs[i].post_label = rs[i].success ? 1 : 0;
  }
  rs[4].skipped = true;
  const auto m = harness::summarize(rs);
  out.require(m.asr && *m.asr == 75.0, "ASR of 3 of 4");
  out.require(m.aq && *m.aq == 200.0, "AQ of 100/200/300");
  for (const auto& dir : {c.optimized, c.random}) {
    if (dir.empty()) {
      out.require(false, "no campaign report to verify");
      continue;
    }
    const auto v = harness::verify_report(dir);
    out.require(v.ok, dir.filename().string() + ": " + (v.problems.empty() ? "" : v.problems.front()));
  }
  out.note("93.0 reproduced; both campaign reports verify");
  return out;
}

Outcome defense_pipeline(const Campaigns& c, models::ToyClassifier& toy) {
  Outcome out;
  if (c.optimized.empty()) {
    out.require(false, "no campaign report");
    return out;
  }
  const auto q50 = harness::defense_eval(c.optimized, 50, toy);
  const auto q100 = harness::defense_eval(c.optimized, 100, toy);
  out.require(q50.original_asr.has_value() && q50.defended_asr.has_value(), "quality 50 produced no rates");
  out.require(q100.original_asr && q100.defended_asr && std::abs(*q100.defended_asr - *q100.original_asr) <= 5.0,
              "quality 100 moved ASR by more than 5 points");
  out.note("ASR " + harness::format_optional(q50.original_asr, 1) + " -> q50 " +
           harness::format_optional(q50.defended_asr, 1) + ", q100 " + harness::format_optional(q100.defended_asr, 1) +
           ", clean flips at q50 " + std::to_string(q50.clean_flips));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cloudadv_acceptance";
  fs::create_directories(root);

  pggn::TrainResult trained;
  bool have_generator = false;
  Campaigns campaigns;
  auto toy = models::toy_train(models::synth_dataset(100, 64, 1), {});

  criterion("perlin-correctness", 10, perlin_correctness);
  criterion("mask-fusion-identities", 60, [] { return mask_fusion_identities(harness::frozen_generator(52, 7)); });
  criterion("tensor-gradients", 60, tensor_gradients);
  criterion("de-properties", 30, de_properties);
  criterion("pggn-desk-training", 15 * 60, [&] {
    auto o = pggn_training(trained);
    have_generator = !trained.history.empty();
    return o;
  });
  criterion("attack-efficacy", 20 * 60, [&] {
    // The trained generator drives the attack; the frozen one stands in
    // only if training itself aborted.
    const auto gen = have_generator ? trained.generator : harness::frozen_generator(52, 7);
    auto o = attack_efficacy(gen, toy, root, campaigns);
    if (!have_generator) o.note("frozen generator");
    return o;
  });
  criterion("metrics-arithmetic", 30, [&] { return metrics_arithmetic(campaigns); });
  criterion("defense-pipeline", 120, [&] { return defense_pipeline(campaigns, toy); });

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
