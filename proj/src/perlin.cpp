#include "cloudadv/perlin.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cloudadv::perlin {

GradientGrid::GradientGrid(std::size_t cells)
    : cells_(cells), vectors_((cells + 1) * (cells + 1)) {}

GradientGrid::GradientGrid(std::size_t cells, std::vector<Vec2> vectors)
    : cells_(cells), vectors_(std::move(vectors)) {
  if (vectors_.size() != (cells + 1) * (cells + 1)) {
    throw std::invalid_argument("GradientGrid: expected " + std::to_string((cells + 1) * (cells + 1)) +
                                " vectors, got " + std::to_string(vectors_.size()));
  }
}

GradientGrid random_unit_grid(std::size_t cells, Rng& rng) {
  if (cells == 0) throw std::invalid_argument("random_unit_grid: cell count must be >= 1");
  GradientGrid grid(cells);
  for (Vec2& g : grid.vectors()) {
    const double angle = 2.0 * std::numbers::pi * unit_open(rng);
    g = {std::cos(angle), std::sin(angle)};
  }
  return grid;
}

GradientGrid random_unit_grid(std::size_t cells, std::uint64_t seed) {
  Rng rng(seed);
  return random_unit_grid(cells, rng);
}

double fade(double t) noexcept {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double perlin_value(const GradientGrid& grid, double x, double y) {
  const auto n = static_cast<double>(grid.cells());
  if (!(x >= 0.0 && x < n && y >= 0.0 && y < n)) {
    throw std::out_of_range("perlin_value: point outside the lattice");
  }
  const auto l = static_cast<std::size_t>(std::floor(x));
  const auto d = static_cast<std::size_t>(std::floor(y));
  const double dx = x - static_cast<double>(l);
  const double dy = y - static_cast<double>(d);

  const Vec2& g_ld = grid.at(l, d);
  const Vec2& g_rd = grid.at(l + 1, d);
  const Vec2& g_lu = grid.at(l, d + 1);
  const Vec2& g_ru = grid.at(l + 1, d + 1);

  const double s_ld = dx * g_ld.x + dy * g_ld.y;
  const double s_rd = (dx - 1.0) * g_rd.x + dy * g_rd.y;
  const double s_lu = dx * g_lu.x + (dy - 1.0) * g_lu.y;
  const double s_ru = (dx - 1.0) * g_ru.x + (dy - 1.0) * g_ru.y;

  const double fx0 = fade(1.0 - dx);
  const double fx1 = fade(dx);
  const double fy0 = fade(1.0 - dy);
  const double fy1 = fade(dy);
  return fx0 * fy0 * s_ld + fx1 * fy0 * s_rd + fx0 * fy1 * s_lu + fx1 * fy1 * s_ru;
}

namespace {

// Per-axis sampling positions for one render: lattice cell, fractional offset
// and both fade weights.
struct AxisSamples {
  std::vector<std::size_t> cell;
  std::vector<double> offset;
  std::vector<double> fade_low;
  std::vector<double> fade_high;
};

AxisSamples axis_samples(std::size_t pixels, std::size_t cells) {
  AxisSamples s;
  s.cell.resize(pixels);
  s.offset.resize(pixels);
  s.fade_low.resize(pixels);
  s.fade_high.resize(pixels);
  const auto n = static_cast<double>(cells);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double coord = (static_cast<double>(p) + 0.5) / static_cast<double>(pixels) * n;
    const auto c = std::min(static_cast<std::size_t>(std::floor(coord)), cells - 1);
    const double off = coord - static_cast<double>(c);
    s.cell[p] = c;
    s.offset[p] = off;
    s.fade_low[p] = fade(1.0 - off);
    s.fade_high[p] = fade(off);
  }
  return s;
}

}  // namespace

Mask render_mask(const GradientGrid& grid, std::size_t height, std::size_t width) {
  if (grid.cells() == 0) throw std::invalid_argument("render_mask: empty grid");
  Mask mask(height, width, 1);
  const AxisSamples xs = axis_samples(width, grid.cells());
  const AxisSamples ys = axis_samples(height, grid.cells());
  const std::size_t stride = grid.vertices_per_side();
  const auto vectors = grid.vectors();

  for (std::size_t v = 0; v < height; ++v) {
    const std::size_t d = ys.cell[v];
    const double dy = ys.offset[v];
    const double fy0 = ys.fade_low[v];
    const double fy1 = ys.fade_high[v];
    const Vec2* row_d = vectors.data() + d * stride;
    const Vec2* row_u = row_d + stride;
    double* out = &mask.at(v, 0);
    for (std::size_t u = 0; u < width; ++u) {
      const std::size_t l = xs.cell[u];
      const double dx = xs.offset[u];
      const double s_ld = dx * row_d[l].x + dy * row_d[l].y;
      const double s_rd = (dx - 1.0) * row_d[l + 1].x + dy * row_d[l + 1].y;
      const double s_lu = dx * row_u[l].x + (dy - 1.0) * row_u[l].y;
      const double s_ru = (dx - 1.0) * row_u[l + 1].x + (dy - 1.0) * row_u[l + 1].y;
      const double fx0 = xs.fade_low[u];
      const double fx1 = xs.fade_high[u];
      out[u] = fx0 * fy0 * s_ld + fx1 * fy0 * s_rd + fx0 * fy1 * s_lu + fx1 * fy1 * s_ru;
    }
  }
  return mask;
}

Mask compose_masks(std::span<const Mask> masks, std::span<const double> k, double t) {
  if (masks.empty()) throw std::invalid_argument("compose_masks: no masks");
  if (masks.size() != k.size()) {
    throw std::invalid_argument("compose_masks: " + std::to_string(masks.size()) + " masks but " +
                                std::to_string(k.size()) + " coefficients");
  }
  if (t < 0.0) throw std::invalid_argument("compose_masks: thickness must be >= 0");
  const Mask& first = masks.front();
  for (const Mask& m : masks) {
    if (!m.same_shape(first) || m.channels() != 1) {
      throw imaging::ImageError(imaging::ImageError::Kind::DimensionMismatch,
                                "compose_masks: masks must share one single-channel shape");
    }
  }

  Mask sum(first.height(), first.width(), 1);
  auto out = sum.values();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto in = masks[i].values();
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += k[i] * in[e];
  }

  if (out.empty()) return sum;
  const auto [lo_it, hi_it] = std::minmax_element(out.begin(), out.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.begin(), out.end(), 0.0);
    return sum;
  }
  const double range = hi - lo;
  for (double& v : out) v = t * ((v - lo) / range);
  return sum;
}

ChannelEffectConfig sample_channel_effects(Rng& rng, int max_offset, std::array<double, 3> magnitude) {
  if (max_offset < 0) throw std::invalid_argument("sample_channel_effects: max_offset must be >= 0");
  for (double m : magnitude) {
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("channel magnitude must lie in (0, 1]");
  }
  ChannelEffectConfig cfg;
  const auto span = static_cast<std::uint64_t>(2 * max_offset + 1);
  for (std::size_t c = 0; c < 3; ++c) {
    cfg.dx[c] = static_cast<int>(uniform_index(rng, span)) - max_offset;
    cfg.dy[c] = static_cast<int>(uniform_index(rng, span)) - max_offset;
  }
  cfg.magnitude = magnitude;
  return cfg;
}

Mask apply_channel_effects(const Mask& mask, const ChannelEffectConfig& cfg) {
  if (mask.channels() != 1) {
    throw imaging::ImageError(imaging::ImageError::Kind::UnsupportedChannels,
                              "apply_channel_effects expects a single-channel mask");
  }
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  Mask out(h, w, 3);
  if (h == 0 || w == 0) return out;
  const auto last_x = static_cast<long>(w) - 1;
  const auto last_y = static_cast<long>(h) - 1;
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = cfg.magnitude[c];
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = static_cast<std::size_t>(std::clamp(static_cast<long>(y) - cfg.dy[c], 0L, last_y));
      for (std::size_t x = 0; x < w; ++x) {
        const auto sx = static_cast<std::size_t>(std::clamp(static_cast<long>(x) - cfg.dx[c], 0L, last_x));
        out.at(y, x, c) = mask.at(sy, sx) * m;
      }
    }
  }
  return out;
}

}  // namespace cloudadv::perlin
