#include <algorithm>
#include <array>
#include <cmath>

#include "cloudadv/models.hpp"
#include "cloudadv/random.hpp"

namespace cloudadv::models {

namespace {

using Color = std::array<double, 3>;

struct Palette {
  Color mid;
  double contrast;  // pattern swings mid +- contrast
};

// One palette per class, in kSyntheticLabels order. Mean colors sit close
// together so overall brightness carries part of the class signal.
constexpr std::array<Palette, 6> kPalettes{{
    {{0.22, 0.22, 0.22}, 0.03},
    {{0.30, 0.30, 0.30}, 0.03},
    {{0.38, 0.38, 0.38}, 0.03},
    {{0.46, 0.46, 0.46}, 0.03},
    {{0.54, 0.54, 0.54}, 0.03},
    {{0.62, 0.62, 0.62}, 0.03},
}};

constexpr double kTwoPi = 6.283185307179586;

// Pattern strength in [0, 1] at normalized coordinates (u, v).
class Pattern {
 public:
  Pattern(std::size_t label, Rng& rng) : label_(label) {
    phase_u_ = uniform(rng, -0.08, 0.08);
    phase_v_ = uniform(rng, -0.08, 0.08);
    center_u_ = 0.5 + uniform(rng, -0.08, 0.08);
    center_v_ = 0.5 + uniform(rng, -0.08, 0.08);
    for (auto& b : blobs_) b = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.12, 0.22)};
  }

  double at(double u, double v, Rng& rng) const {
    switch (label_) {
      case 0: return 0.5 + 0.5 * std::sin(kTwoPi * (4.0 * v + phase_v_));
      case 1: return 0.5 + 0.5 * std::sin(kTwoPi * (4.0 * u + phase_u_));
      case 2: {
        const auto cu = static_cast<long>(std::floor(4.0 * u + phase_u_));
        const auto cv = static_cast<long>(std::floor(4.0 * v + phase_v_));
        return ((cu + cv) % 2 + 2) % 2 == 0 ? 1.0 : 0.0;
      }
      case 3: {
        const double r = std::hypot(u - center_u_, v - center_v_);
        return std::clamp(1.0 - r / 0.6, 0.0, 1.0);
      }
      case 4: return unit_open(rng);
      default: {
        double s = 0.0;
        for (const auto& [bu, bv, radius] : blobs_) {
          const double d2 = (u - bu) * (u - bu) + (v - bv) * (v - bv);
          s = std::max(s, std::exp(-d2 / (2 * radius * radius)));
        }
        return s;
      }
    }
  }

 private:
  std::size_t label_;
  double phase_u_, phase_v_, center_u_, center_v_;
  std::array<std::array<double, 3>, 3> blobs_;
};

Image render(std::size_t label, std::size_t size, Rng& rng) {
  const Palette& pal = kPalettes[label];
  const Pattern pattern(label, rng);
  const double brightness = uniform(rng, -0.02, 0.02);
  Color tint;
  for (double& t : tint) t = uniform(rng, -0.01, 0.01);

  Image img(size, size, 3);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (x + 0.5) / static_cast<double>(size);
      const double v = (y + 0.5) / static_cast<double>(size);
      const double s = pattern.at(u, v, rng);
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = pal.mid[c] + (2.0 * s - 1.0) * pal.contrast;
        const double noise = uniform(rng, -0.04, 0.04);
        img.at(y, x, c) = std::clamp(base + brightness + tint[c] + noise, 0.0, 1.0);
      }
    }
  }
  return imaging::quantized(img);
}

}  // namespace

Dataset synth_dataset(std::size_t n_per_class, std::size_t size, std::uint64_t seed) {
  if (n_per_class == 0) throw std::invalid_argument("synth_dataset: n_per_class must be at least 1");
  if (size == 0) throw std::invalid_argument("synth_dataset: size must be positive");
  Dataset ds;
  ds.labels = kSyntheticLabels;
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t label = 0; label < kSyntheticLabels.size(); ++label) {
      const std::size_t index = i * kSyntheticLabels.size() + label;
      Rng rng(derive_seed(seed, index));
      char id[32];
      std::snprintf(id, sizeof id, "syn%05zu", index);
      ds.items.push_back({id, render(label, size, rng), label});
    }
  }
  return ds;
}

}  // namespace cloudadv::models
