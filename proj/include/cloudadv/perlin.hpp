#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cloudadv/imaging.hpp"
#include "cloudadv/random.hpp"

namespace cloudadv::perlin {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

// An n x n cell lattice carrying one 2D gradient at each of its (n+1) x (n+1)
// vertices. Vertex (i, j) is column i (x) and row j (y).
class GradientGrid {
 public:
  GradientGrid() = default;
  explicit GradientGrid(std::size_t cells);
  GradientGrid(std::size_t cells, std::vector<Vec2> vectors);

  std::size_t cells() const noexcept { return cells_; }
  std::size_t vertices_per_side() const noexcept { return cells_ + 1; }

  Vec2& at(std::size_t i, std::size_t j) { return vectors_[j * (cells_ + 1) + i]; }
  const Vec2& at(std::size_t i, std::size_t j) const { return vectors_[j * (cells_ + 1) + i]; }

  std::span<const Vec2> vectors() const noexcept { return vectors_; }
  std::span<Vec2> vectors() noexcept { return vectors_; }

  friend bool operator==(const GradientGrid&, const GradientGrid&) = default;

 private:
  std::size_t cells_ = 0;
  std::vector<Vec2> vectors_;
};

// Opacity field. Single channel straight out of composition, three channels
// after channel effects.
class Mask : public imaging::Raster {
 public:
  using imaging::Raster::Raster;
};

struct ChannelEffectConfig {
  std::array<int, 3> dx{0, 0, 0};
  std::array<int, 3> dy{0, 0, 0};
  std::array<double, 3> magnitude{1.0, 1.0, 1.0};
};

inline constexpr std::array<double, 3> kDefaultChannelMagnitudes{1.00, 0.97, 0.94};

// Classical lattice: every vertex gets an independent unit vector with a
// uniformly distributed angle.
GradientGrid random_unit_grid(std::size_t cells, Rng& rng);
GradientGrid random_unit_grid(std::size_t cells, std::uint64_t seed);

// Smoothstep 3t^2 - 2t^3. Arguments outside [0, 1] are clamped.
double fade(double t) noexcept;

// Noise value at cell coordinates (x, y), 0 <= x, y < n. Throws
// std::out_of_range otherwise.
double perlin_value(const GradientGrid& grid, double x, double y);

// Pixel (u, v) samples the lattice at its center,
// ((u + 0.5) / width * n, (v + 0.5) / height * n).
Mask render_mask(const GradientGrid& grid, std::size_t height, std::size_t width);

// t * normalize(sum_i k_i * M_i) into [0, t]. A flat weighted sum yields the
// zero mask.
Mask compose_masks(std::span<const Mask> masks, std::span<const double> k, double t);

// Draws integer offsets uniformly from [-max_offset, max_offset] per channel.
ChannelEffectConfig sample_channel_effects(Rng& rng, int max_offset = 2,
                                           std::array<double, 3> magnitude = kDefaultChannelMagnitudes);

// Channel c = shift(mask, dx_c, dy_c) * magnitude_c, with borders padded by
// edge replication. A positive dx moves content right, a positive dy down.
Mask apply_channel_effects(const Mask& mask, const ChannelEffectConfig& cfg);

}  // namespace cloudadv::perlin
