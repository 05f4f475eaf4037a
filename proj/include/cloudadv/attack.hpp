#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cloudadv/de.hpp"
#include "cloudadv/imaging.hpp"
#include "cloudadv/models.hpp"
#include "cloudadv/perlin.hpp"
#include "cloudadv/pggn.hpp"

namespace cloudadv::attack {

using imaging::Image;
using perlin::Mask;

// Layout of the search vector r = [z (q), k (5), t (1)].
inline constexpr std::size_t kMixCount = 5;
inline constexpr std::size_t kLayoutVersion = 1;

inline constexpr std::array<double, kMixCount> kDefaultKLower{0.0, 0.0, 0.0, 0.4, 0.6};
// Only four upper bounds are published; the fifth is taken as 1.0.
inline constexpr std::array<double, kMixCount> kDefaultKUpper{0.1, 0.2, 0.3, 0.8, 1.0};
inline constexpr double kDefaultTLower = 0.1;
inline constexpr double kDefaultTUpper = 0.65;

struct CloudParams {
  std::vector<double> z;
  std::array<double, kMixCount> k{};
  double t = 0.0;
  friend bool operator==(const CloudParams&, const CloudParams&) = default;
};

inline std::size_t param_dim(std::size_t q) { return q + kMixCount + 1; }

// Throws std::invalid_argument unless r.size() == q + 6.
CloudParams decode(std::span<const double> r, std::size_t q);
std::vector<double> encode(const CloudParams& p);

// How the cloud layer's own color is formed from the scene.
enum class CloudColor {
  MeanToWhite,  // (1 - M) * mu + M, per channel
  White,        // plain white
};

struct AttackConfig {
  double alpha = 0.25;
  de::Config de;  // np 100, cr 0.8, f 0.5, mq 3000
  std::array<double, kMixCount> k_lower = kDefaultKLower;
  std::array<double, kMixCount> k_upper = kDefaultKUpper;
  double t_lower = kDefaultTLower;
  double t_upper = kDefaultTUpper;
  double z_bound = 1.0;
  bool channel_effects = true;
  int max_channel_offset = 2;
  std::array<double, 3> channel_magnitude = perlin::kDefaultChannelMagnitudes;
  CloudColor cloud_color = CloudColor::MeanToWhite;
  // Seeds the channel offsets and the DE stream.
  std::uint64_t seed = 0;

  void validate(std::size_t q) const;
};

de::Bounds param_bounds(const AttackConfig& cfg, std::size_t q);

// Offsets drawn from the attack seed; fixed for the whole run.
perlin::ChannelEffectConfig channel_effects_for(const AttackConfig& cfg);

// generate(z) -> render each grid at height x width -> compose with (k, t)
// -> channel effects. Values lie in [0, t].
Mask synthesize_cloud(const CloudParams& params, const pggn::GeneratorWeights& generator, std::size_t height,
                      std::size_t width, const perlin::ChannelEffectConfig& effects);

// I_cloud(e, c) = (1 - M(e, c)) * mu_c + M(e, c), or white.
Image cloud_color_image(const Image& clear, const Mask& mask, CloudColor color = CloudColor::MeanToWhite);

// I_adv = I_clear * (1 - M) + I_cloud * M, per sample.
Image fuse(const Image& clear, const Mask& mask, const Image& cloud);

// Full pipeline to the 8-bit adversarial candidate that the model sees.
Image render_candidate(const Image& clear, const CloudParams& params, const pggn::GeneratorWeights& generator,
                       const perlin::ChannelEffectConfig& effects, CloudColor color);

struct FitnessValue {
  double fitness = 0.0;  // adversarial + alpha * mse
  double adversarial = 0.0;  // probability of the original class
  double mse = 0.0;
  std::size_t predicted = 0;
  models::ProbVector probs;
};

// One model query on an already rendered candidate.
FitnessValue evaluate_candidate(const Image& clear, const Image& candidate, std::size_t true_class,
                                models::TargetModel& model, double alpha);

struct AttackResult {
  Image adversarial;
  std::size_t queries = 0;
  bool success = false;
  std::size_t original_label = 0;
  std::size_t predicted_label = 0;
  double adversarial_loss = 0.0;
  double mse = 0.0;
  double fitness = 0.0;
  std::size_t generations = 0;
  std::vector<double> params;
  perlin::ChannelEffectConfig effects;
  std::vector<double> history;  // best fitness per generation
};

// Untargeted cloud attack against `true_class`, which should be the model's
// current prediction on `clear`. Stops as soon as the best candidate so far
// is misclassified. Queries issued concurrently when the model declares
// itself safe and cfg.de.workers > 1.
AttackResult run_attack(const Image& clear, std::size_t true_class, models::TargetModel& model,
                        const pggn::GeneratorWeights& generator, const AttackConfig& cfg);

// Baseline: one cloud with r drawn uniformly from the bounds, one query.
AttackResult random_cloud(const Image& clear, std::size_t true_class, models::TargetModel& model,
                          const pggn::GeneratorWeights& generator, const AttackConfig& cfg);

}  // namespace cloudadv::attack
