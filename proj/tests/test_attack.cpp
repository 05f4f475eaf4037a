#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cloudadv/attack.hpp"

using namespace cloudadv;
using namespace cloudadv::attack;
using models::ProbVector;

namespace {

const std::vector<std::string> kTwoLabels{"clear", "cloudy"};

double mean_brightness(const Image& img) {
  return std::accumulate(img.values().begin(), img.values().end(), 0.0) / static_cast<double>(img.size());
}

// Always answers class 0.
class ConstantModel : public models::TargetModel {
 public:
  explicit ConstantModel(double p0 = 0.9) : p0_(p0) {}
  ProbVector classify(const Image&) override { return {p0_, 1.0 - p0_}; }
  const std::vector<std::string>& labels() const override { return kTwoLabels; }

 private:
  double p0_;
};

// Flips to class 1 once mean brightness rises `step` above the reference.
class BrightnessModel : public models::TargetModel {
 public:
  BrightnessModel(double reference, double step) : reference_(reference), step_(step) {}
  ProbVector classify(const Image& img) override {
    const double rise = mean_brightness(img) - reference_;
    const double p = std::clamp(0.5 + (rise - step_) * 5.0, 0.01, 0.99);
    return {1.0 - p, p};
  }
  const std::vector<std::string>& labels() const override { return kTwoLabels; }
  models::Concurrency concurrency() const override { return models::Concurrency::Safe; }

 private:
  double reference_, step_;
};

class FailingModel : public models::TargetModel {
 public:
  explicit FailingModel(std::size_t fail_at) : fail_at_(fail_at) {}
  ProbVector classify(const Image&) override {
    if (++calls_ == fail_at_) throw models::RemoteError(models::RemoteError::Kind::Network, "injected");
    return {0.9, 0.1};
  }
  const std::vector<std::string>& labels() const override { return kTwoLabels; }

 private:
  std::size_t fail_at_, calls_ = 0;
};

const pggn::GeneratorWeights& generator() {
  static const pggn::GeneratorWeights g = [] {
    Rng rng(7);
    return pggn::GeneratorWeights::random(pggn::kDefaultLatentDim, rng);
  }();
  return g;
}

AttackConfig small_config(std::size_t np = 10, std::size_t mq = 200) {
  AttackConfig cfg;
  cfg.de.np = np;
  cfg.de.max_evals = mq;
  cfg.seed = 3;
  return cfg;
}

double neighbor_roughness(const Mask& m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x + 1 < m.width(); ++x, ++n) s += std::abs(m.at(y, x + 1, 0) - m.at(y, x, 0));
  }
  return s / static_cast<double>(n);
}

CloudParams params_with(std::array<double, kMixCount> k, double t, std::uint64_t seed) {
  Rng rng(seed);
  return {pggn::sample_latent(pggn::kDefaultLatentDim, rng), k, t};
}

}  // namespace

TEST(Params, LayoutAndBounds) {
  const std::size_t q = pggn::kDefaultLatentDim;
  EXPECT_EQ(param_dim(q), 58u);
  const auto b = param_bounds(AttackConfig{}, q);
  ASSERT_EQ(b.dim(), 58u);
  EXPECT_EQ(decode(b.lower, q).t, 0.1);
  EXPECT_EQ(decode(b.upper, q).t, 0.65);
  const auto lo = decode(b.lower, q), hi = decode(b.upper, q);
  EXPECT_EQ(lo.k, (std::array<double, 5>{0.0, 0.0, 0.0, 0.4, 0.6}));
  EXPECT_EQ(hi.k, (std::array<double, 5>{0.1, 0.2, 0.3, 0.8, 1.0}));
  for (std::size_t i = 0; i < q; ++i) {
    EXPECT_EQ(lo.z[i], -1.0);
    EXPECT_EQ(hi.z[i], 1.0);
  }
  EXPECT_THROW(decode(std::vector<double>(57, 0.0), q), std::invalid_argument);
}

TEST(Params, EncodeDecodeRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> r(param_dim(16));
    for (double& v : r) v = uniform(rng, -1.0, 1.0);
    EXPECT_EQ(encode(decode(r, 16)), r);
  }
}

TEST(Config, ValidationRejectsBadBounds) {
  AttackConfig cfg;
  EXPECT_NO_THROW(cfg.validate(52));
  cfg.t_upper = 1.5;
  EXPECT_THROW(cfg.validate(52), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.k_lower[2] = 0.9;
  EXPECT_THROW(cfg.validate(52), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.alpha = -1;
  EXPECT_THROW(cfg.validate(52), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.de.np = 3;
  EXPECT_THROW(cfg.validate(52), std::invalid_argument);
}

TEST(Synthesize, RangeEndpointsAndDeterminism) {
  const auto p = params_with(kDefaultKLower, 0.1, 4);
  for (bool effects : {false, true}) {
    AttackConfig cfg;
    cfg.channel_effects = effects;
    const Mask m = synthesize_cloud(p, generator(), 48, 40, channel_effects_for(cfg));
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    EXPECT_GE(*lo, 0.0);
    EXPECT_LE(*hi, 0.1 + 1e-15);
    EXPECT_EQ(m.channels(), 3u);
    if (!effects) {
      EXPECT_DOUBLE_EQ(*hi, 0.1);
      EXPECT_DOUBLE_EQ(*lo, 0.0);
    }
    EXPECT_EQ(m, synthesize_cloud(p, generator(), 48, 40, channel_effects_for(cfg)));
  }
}

TEST(Synthesize, CoarseWeightsGiveSmootherMasks) {
  double coarse = 0.0, fine = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    coarse += neighbor_roughness(synthesize_cloud(params_with({1, 0, 0, 0, 0}, 1.0, s), generator(), 64, 64, {}));
    fine += neighbor_roughness(synthesize_cloud(params_with({0, 0, 0, 0, 1}, 1.0, s), generator(), 64, 64, {}));
  }
  EXPECT_LT(coarse, fine);
}

TEST(CloudColor, Examples) {
  Image clear(2, 2, 3, 0.4);
  Mask zero(2, 2, 3, 0.0), one(2, 2, 3, 1.0), half(2, 2, 3, 0.5);
  const Image a = cloud_color_image(clear, zero), b = cloud_color_image(clear, one),
              c = cloud_color_image(clear, half), d = cloud_color_image(clear, half, CloudColor::White);
  for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 0.4);
  for (double v : b.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : c.values()) EXPECT_NEAR(v, 0.7, 1e-15);
  for (double v : d.values()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(cloud_color_image(clear, Mask(3, 2, 3, 0.0)), imaging::ImageError);
}

TEST(CloudColor, UsesPerChannelMean) {
  Image clear(1, 2, 3);
  clear.at(0, 0, 0) = 0.2;
  clear.at(0, 1, 0) = 0.4;  // red mean 0.3
  const Image cloud = cloud_color_image(clear, Mask(1, 2, 3, 0.0));
  EXPECT_NEAR(cloud.at(0, 0, 0), 0.3, 1e-15);
  EXPECT_EQ(cloud.at(0, 0, 1), 0.0);
}

TEST(Fuse, Examples) {
  const Image clear(3, 3, 3, 0.2), cloud(3, 3, 3, 0.8);
  const Image fused = fuse(clear, Mask(3, 3, 3, 0.25), cloud);
  for (double v : fused.values()) EXPECT_NEAR(v, 0.35, 1e-15);
  EXPECT_EQ(fuse(clear, Mask(3, 3, 3, 0.0), cloud), clear);
  EXPECT_EQ(fuse(clear, Mask(3, 3, 3, 1.0), cloud), cloud);
  EXPECT_THROW(fuse(clear, Mask(3, 3, 1, 0.0), cloud), imaging::ImageError);
}

TEST(Fuse, ZeroThicknessIsBitExactIdentity) {
  const auto ds = models::synth_dataset(1, 32, 5);
  for (const auto& it : ds.items) {
    const auto p = params_with(kDefaultKUpper, 0.0, 9);
    AttackConfig cfg;
    const Image out = render_candidate(it.image, p, generator(), channel_effects_for(cfg), CloudColor::MeanToWhite);
    EXPECT_EQ(out, it.image);
  }
}

TEST(Fitness, Arithmetic) {
  ConstantModel model(0.8);
  const Image clear(2, 2, 3, 0.5);
  Image shifted = clear;
  for (double& v : shifted.values()) v += 0.2;
  const auto f = evaluate_candidate(clear, shifted, 0, model, 0.25);
  EXPECT_NEAR(f.mse, 0.04, 1e-15);
  EXPECT_NEAR(f.adversarial, 0.8, 1e-15);
  EXPECT_NEAR(f.fitness, 0.81, 1e-15);
  EXPECT_EQ(f.predicted, 0u);

  const auto same = evaluate_candidate(clear, clear, 0, model, 0.25);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_EQ(same.fitness, same.adversarial);
  EXPECT_THROW(evaluate_candidate(clear, clear, 2, model, 0.25), std::invalid_argument);
}

TEST(RunAttack, UnattackableModelSpendsTheBudget) {
  auto counter = models::CountingModel(std::make_shared<ConstantModel>());
  const Image clear(32, 32, 3, 0.3);
  const auto cfg = small_config(10, 120);
  const auto r = run_attack(clear, 0, counter, generator(), cfg);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.queries, 120u);
  EXPECT_EQ(counter.count(), r.queries);
  EXPECT_EQ(r.predicted_label, 0u);
  EXPECT_EQ(r.history.size(), r.generations + 1);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
}

TEST(RunAttack, SusceptibleModelFallsInFirstGeneration) {
  const Image clear(32, 32, 3, 0.3);
  auto counter = models::CountingModel(std::make_shared<BrightnessModel>(mean_brightness(clear), 0.05));
  ASSERT_EQ(models::argmax(counter.classify(clear)), 0u);
  counter.reset();
  auto cfg = small_config(100, 3000);
  const auto r = run_attack(clear, 0, counter, generator(), cfg);
  EXPECT_TRUE(r.success);
  EXPECT_LE(r.queries, cfg.de.np);
  EXPECT_EQ(r.generations, 0u);
  EXPECT_EQ(counter.count(), r.queries);
  // The returned image is what the model saw.
  EXPECT_EQ(models::argmax(counter.classify(r.adversarial)), r.predicted_label);
  EXPECT_NE(r.predicted_label, 0u);
  EXPECT_EQ(r.adversarial, imaging::quantized(r.adversarial));
  EXPECT_NEAR(r.mse, imaging::mse(clear, r.adversarial), 1e-15);
}

TEST(RunAttack, QueriesCountedExactlyWithParallelWorkers) {
  const Image clear(24, 24, 3, 0.3);
  for (std::size_t workers : {1u, 3u}) {
    auto counter = models::CountingModel(std::make_shared<BrightnessModel>(mean_brightness(clear), 0.2));
    auto cfg = small_config(12, 150);
    cfg.de.workers = workers;
    const auto r = run_attack(clear, 0, counter, generator(), cfg);
    EXPECT_EQ(counter.count(), r.queries);
    EXPECT_LE(r.queries, cfg.de.max_evals + cfg.de.np);
    if (workers == 1) EXPECT_LE(r.queries, cfg.de.max_evals);
  }
}

TEST(RunAttack, SuccessReverifiesAfterPngRoundTrip) {
  auto clf = std::make_shared<models::ToyClassifier>(models::toy_train(models::synth_dataset(30, 32, 1), {}));
  const auto ds = models::synth_dataset(2, 32, 2);
  std::size_t successes = 0;
  for (const auto& it : ds.items) {
    const std::size_t c = models::argmax(clf->classify(it.image));
    if (c != it.label) continue;
    const auto r = run_attack(it.image, c, *clf, generator(), small_config(20, 400));
    if (!r.success) continue;
    ++successes;
    const Image back = imaging::decode_png(imaging::encode_png(r.adversarial));
    EXPECT_EQ(back, r.adversarial);
    EXPECT_NE(models::argmax(clf->classify(back)), c);
  }
  EXPECT_GT(successes, 0u);
}

TEST(RunAttack, DeterministicPerSeed) {
  const Image clear(24, 24, 3, 0.3);
  BrightnessModel model(mean_brightness(clear), 0.15);
  const auto a = run_attack(clear, 0, model, generator(), small_config(10, 100));
  const auto b = run_attack(clear, 0, model, generator(), small_config(10, 100));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.queries, b.queries);
  EXPECT_EQ(a.adversarial, b.adversarial);
}

TEST(RunAttack, ModelFailurePropagates) {
  const Image clear(16, 16, 3, 0.3);
  auto counter = models::CountingModel(std::make_shared<FailingModel>(7));
  EXPECT_THROW(run_attack(clear, 0, counter, generator(), small_config(10, 100)), models::RemoteError);
  EXPECT_EQ(counter.count(), 7u);
}

TEST(RunAttack, RejectsBadInputs) {
  ConstantModel model;
  EXPECT_THROW(run_attack(Image(8, 8, 3, 0.3), 5, model, generator(), small_config()), std::invalid_argument);
  EXPECT_THROW(run_attack(Image(8, 8, 1, 0.3), 0, model, generator(), small_config()), imaging::ImageError);
}

TEST(RandomCloud, OneQueryWithinBounds) {
  const Image clear(24, 24, 3, 0.3);
  auto counter = models::CountingModel(std::make_shared<BrightnessModel>(mean_brightness(clear), 0.05));
  const auto cfg = small_config();
  const auto r = random_cloud(clear, 0, counter, generator(), cfg);
  EXPECT_EQ(r.queries, 1u);
  EXPECT_EQ(counter.count(), 1u);
  const auto b = param_bounds(cfg, pggn::kDefaultLatentDim);
  for (std::size_t j = 0; j < r.params.size(); ++j) {
    EXPECT_GE(r.params[j], b.lower[j]);
    EXPECT_LE(r.params[j], b.upper[j]);
  }
  EXPECT_EQ(r.params, random_cloud(clear, 0, counter, generator(), cfg).params);
}
