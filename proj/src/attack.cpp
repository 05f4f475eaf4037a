#include "cloudadv/attack.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

namespace cloudadv::attack {

CloudParams decode(std::span<const double> r, std::size_t q) {
  if (r.size() != param_dim(q)) {
    throw std::invalid_argument("cloud parameter vector has length " + std::to_string(r.size()) + ", expected " +
                                std::to_string(param_dim(q)));
  }
  CloudParams p;
  p.z.assign(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(q));
  std::copy_n(r.begin() + static_cast<std::ptrdiff_t>(q), kMixCount, p.k.begin());
  p.t = r[q + kMixCount];
  return p;
}

std::vector<double> encode(const CloudParams& p) {
  std::vector<double> r(p.z);
  r.insert(r.end(), p.k.begin(), p.k.end());
  r.push_back(p.t);
  return r;
}

void AttackConfig::validate(std::size_t q) const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (q == 0) throw std::invalid_argument("latent dimension must be positive");
  if (!(z_bound > 0.0)) throw std::invalid_argument("z bound must be positive");
  for (std::size_t i = 0; i < kMixCount; ++i) {
    if (!(k_lower[i] <= k_upper[i])) throw std::invalid_argument("k lower bound exceeds k upper bound");
  }
  if (!(t_lower >= 0.0 && t_lower <= t_upper && t_upper <= 1.0)) {
    throw std::invalid_argument("thickness bounds must satisfy 0 <= t_lower <= t_upper <= 1");
  }
  if (max_channel_offset < 0) throw std::invalid_argument("channel offset bound must be non-negative");
  for (double m : channel_magnitude) {
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("channel magnitudes must lie in (0, 1]");
  }
  de.validate();
}

de::Bounds param_bounds(const AttackConfig& cfg, std::size_t q) {
  de::Bounds b;
  b.lower.assign(q, -cfg.z_bound);
  b.upper.assign(q, cfg.z_bound);
  b.lower.insert(b.lower.end(), cfg.k_lower.begin(), cfg.k_lower.end());
  b.upper.insert(b.upper.end(), cfg.k_upper.begin(), cfg.k_upper.end());
  b.lower.push_back(cfg.t_lower);
  b.upper.push_back(cfg.t_upper);
  return b;
}

perlin::ChannelEffectConfig channel_effects_for(const AttackConfig& cfg) {
  if (!cfg.channel_effects) return {};
  Rng rng(derive_seed(cfg.seed, 0xC0FFEE));
  return perlin::sample_channel_effects(rng, cfg.max_channel_offset, cfg.channel_magnitude);
}

Mask synthesize_cloud(const CloudParams& params, const pggn::GeneratorWeights& generator, std::size_t height,
                      std::size_t width, const perlin::ChannelEffectConfig& effects) {
  const pggn::GridSet grids = pggn::generate(params.z, generator);
  std::array<Mask, kMixCount> masks;
  for (std::size_t i = 0; i < kMixCount; ++i) masks[i] = perlin::render_mask(grids[i], height, width);
  const Mask m = perlin::compose_masks(masks, params.k, params.t);
  return perlin::apply_channel_effects(m, effects);
}

Image cloud_color_image(const Image& clear, const Mask& mask, CloudColor color) {
  if (clear.height() != mask.height() || clear.width() != mask.width() || clear.channels() != mask.channels()) {
    throw imaging::ImageError(imaging::ImageError::Kind::DimensionMismatch, "cloud mask and image differ in shape");
  }
  Image out(clear.height(), clear.width(), clear.channels());
  if (color == CloudColor::White) {
    for (double& v : out.values()) v = 1.0;
    return out;
  }
  const auto mu = imaging::mean_color(clear);
  const std::size_t c = clear.channels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = mask[i];
    out[i] = (1.0 - m) * mu[i % c] + m;
  }
  return out;
}

Image fuse(const Image& clear, const Mask& mask, const Image& cloud) {
  if (!clear.same_shape(mask) || !clear.same_shape(cloud)) {
    throw imaging::ImageError(imaging::ImageError::Kind::DimensionMismatch, "fuse: operands differ in shape");
  }
  Image out(clear.height(), clear.width(), clear.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = mask[i];
    out[i] = clear[i] * (1.0 - m) + cloud[i] * m;
  }
  return out;
}

Image render_candidate(const Image& clear, const CloudParams& params, const pggn::GeneratorWeights& generator,
                       const perlin::ChannelEffectConfig& effects, CloudColor color) {
  if (clear.channels() != 3) {
    throw imaging::ImageError(imaging::ImageError::Kind::UnsupportedChannels, "attack needs a 3-channel image");
  }
  const Mask mask = synthesize_cloud(params, generator, clear.height(), clear.width(), effects);
  return imaging::quantized(fuse(clear, mask, cloud_color_image(clear, mask, color)));
}

FitnessValue evaluate_candidate(const Image& clear, const Image& candidate, std::size_t true_class,
                                models::TargetModel& model, double alpha) {
  FitnessValue v;
  v.probs = model.classify(candidate);
  if (true_class >= v.probs.size()) throw std::invalid_argument("true class index exceeds model label count");
  v.adversarial = v.probs[true_class];
  v.mse = imaging::mse(clear, candidate);
  v.fitness = v.adversarial + alpha * v.mse;
  v.predicted = models::argmax(v.probs);
  return v;
}

namespace {

AttackResult finish(const Image& clear, std::size_t true_class, const std::vector<double>& r,
                    const FitnessValue& value, const pggn::GeneratorWeights& generator,
                    const perlin::ChannelEffectConfig& effects, const AttackConfig& cfg) {
  AttackResult out;
  out.adversarial = render_candidate(clear, decode(r, generator.latent_dim()), generator, effects, cfg.cloud_color);
  out.original_label = true_class;
  out.predicted_label = value.predicted;
  out.success = value.predicted != true_class;
  out.adversarial_loss = value.adversarial;
  out.mse = value.mse;
  out.fitness = value.fitness;
  out.params = r;
  out.effects = effects;
  return out;
}

}  // namespace

AttackResult run_attack(const Image& clear, std::size_t true_class, models::TargetModel& model,
                        const pggn::GeneratorWeights& generator, const AttackConfig& cfg) {
  const std::size_t q = generator.latent_dim();
  cfg.validate(q);
  if (true_class >= model.label_count()) throw std::invalid_argument("true class index exceeds model label count");
  const auto effects = channel_effects_for(cfg);
  const de::Bounds bounds = param_bounds(cfg, q);

  de::Config dc = cfg.de;
  dc.seed = derive_seed(cfg.seed, 1);
  if (model.concurrency() != models::Concurrency::Safe) dc.workers = 1;

  // Outcome of every query, keyed by the vector that produced it, so the
  // stop predicate and the final report need no extra queries.
  std::mutex mu;
  std::map<std::vector<double>, FitnessValue> seen;
  std::atomic<std::size_t> queries{0};

  const de::Fitness fitness = [&](std::span<const double> r) {
    const Image candidate = render_candidate(clear, decode(r, q), generator, effects, cfg.cloud_color);
    ++queries;
    FitnessValue v = evaluate_candidate(clear, candidate, true_class, model, cfg.alpha);
    const double f = v.fitness;
    std::lock_guard lock(mu);
    seen.insert_or_assign(std::vector<double>(r.begin(), r.end()), std::move(v));
    return f;
  };
  const de::StopPredicate stop = [&](const de::Evaluation& e) {
    if (!e.is_best) return false;
    std::lock_guard lock(mu);
    const auto it = seen.find(std::vector<double>(e.x.begin(), e.x.end()));
    return it != seen.end() && it->second.predicted != true_class;
  };

  const de::RunResult run = de::run(fitness, bounds, dc, stop);
  const std::vector<double>& chosen = run.success ? run.stop_vector : run.best;
  AttackResult out = finish(clear, true_class, chosen, seen.at(chosen), generator, effects, cfg);
  out.queries = queries.load();
  out.generations = run.generations;
  out.history = run.history;
  return out;
}

AttackResult random_cloud(const Image& clear, std::size_t true_class, models::TargetModel& model,
                          const pggn::GeneratorWeights& generator, const AttackConfig& cfg) {
  const std::size_t q = generator.latent_dim();
  cfg.validate(q);
  const auto effects = channel_effects_for(cfg);
  const de::Bounds bounds = param_bounds(cfg, q);
  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<double> r(bounds.dim());
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = uniform(rng, bounds.lower[j], bounds.upper[j]);
  const Image candidate = render_candidate(clear, decode(r, q), generator, effects, cfg.cloud_color);
  const FitnessValue v = evaluate_candidate(clear, candidate, true_class, model, cfg.alpha);
  AttackResult out = finish(clear, true_class, r, v, generator, effects, cfg);
  out.queries = 1;
  return out;
}

}  // namespace cloudadv::attack
