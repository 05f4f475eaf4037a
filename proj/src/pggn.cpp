#include "cloudadv/pggn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cloudadv::pggn {

using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPadding = 1;

std::size_t vertices(std::size_t i) { return kGridCells[i] + 1; }

std::size_t final_feature_size() {
  return (kDiscriminatorChannels.back() + 2) * vertices(0) * vertices(0);
}

}  // namespace

GeneratorWeights GeneratorWeights::random(std::size_t latent_dim, Rng& rng) {
  if (latent_dim == 0) throw PggnError(PggnError::Kind::Dimension, "latent dimension must be positive");
  GeneratorWeights w;
  const std::size_t seed_features = kSeedChannels * kSeedSize * kSeedSize;
  w.fc_w = tensor::uniform_init<float>({latent_dim, seed_features}, latent_dim, rng);
  w.fc_b = Tensor<float>({seed_features});
  std::size_t in = kSeedChannels;
  for (std::size_t s = 0; s < 5; ++s) {
    const std::size_t out = kGeneratorChannels[s];
    w.deconv_w[s] = tensor::uniform_init<float>({in, out, kKernel, kKernel}, in * kKernel * kKernel, rng);
    w.deconv_b[s] = Tensor<float>({out});
    in = out;
  }
  return w;
}

DiscriminatorWeights DiscriminatorWeights::random(Rng& rng) {
  DiscriminatorWeights w;
  std::size_t in = 2;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = kDiscriminatorChannels[s];
    w.conv_w[s] = tensor::uniform_init<float>({out, in, kKernel, kKernel}, in * kKernel * kKernel, rng);
    w.conv_b[s] = Tensor<float>({out});
    in = out + 2;
  }
  w.fc_w = tensor::uniform_init<float>({final_feature_size(), 1}, final_feature_size(), rng);
  w.fc_b = Tensor<float>({1});
  return w;
}

GeneratorVars bind(Tape<float>& tape, const GeneratorWeights& w, bool requires_grad) {
  GeneratorVars v;
  v.fc_w = tape.leaf(w.fc_w, requires_grad);
  v.fc_b = tape.leaf(w.fc_b, requires_grad);
  for (std::size_t s = 0; s < 5; ++s) {
    v.deconv_w[s] = tape.leaf(w.deconv_w[s], requires_grad);
    v.deconv_b[s] = tape.leaf(w.deconv_b[s], requires_grad);
  }
  return v;
}

DiscriminatorVars bind(Tape<float>& tape, const DiscriminatorWeights& w, bool requires_grad) {
  DiscriminatorVars v;
  for (std::size_t s = 0; s < 4; ++s) {
    v.conv_w[s] = tape.leaf(w.conv_w[s], requires_grad);
    v.conv_b[s] = tape.leaf(w.conv_b[s], requires_grad);
  }
  v.fc_w = tape.leaf(w.fc_w, requires_grad);
  v.fc_b = tape.leaf(w.fc_b, requires_grad);
  return v;
}

std::array<Var, 5> generator_graph(Tape<float>& tape, Var z, const GeneratorVars& g) {
  const std::size_t batch = tape.value(z).dim(0);
  Var h = tape.leaky_relu(tape.fully_connected(z, g.fc_w, g.fc_b));
  h = tape.reshape(h, {batch, kSeedChannels, kSeedSize, kSeedSize});
  std::array<Var, 5> grids;
  for (std::size_t s = 0; s < 5; ++s) {
    const Var y = tape.deconv2d(h, g.deconv_w[s], g.deconv_b[s], kStride, kPadding);
    const std::size_t c = kGeneratorChannels[s];
    if (c == 2) {
      h = tape.tanh(y);
      grids[s] = h;
    } else {
      const Var grid = tape.tanh(tape.slice_channels(y, c - 2, c));
      h = tape.concat_channels(tape.leaky_relu(tape.slice_channels(y, 0, c - 2)), grid);
      grids[s] = grid;
    }
  }
  return grids;
}

Var discriminator_graph(Tape<float>& tape, const std::array<Var, 5>& grids, const DiscriminatorVars& d) {
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& shape = tape.value(grids[i]).shape();
    if (shape.size() != 4 || shape[1] != 2 || shape[2] != vertices(i) || shape[3] != vertices(i)) {
      throw PggnError(PggnError::Kind::Dimension,
                      "grid " + std::to_string(i) + " has shape " + tensor::shape_string(shape));
    }
  }
  const std::size_t batch = tape.value(grids[4]).dim(0);
  Var h = grids[4];
  for (std::size_t s = 0; s < 4; ++s) {
    h = tape.leaky_relu(tape.conv2d(h, d.conv_w[s], d.conv_b[s], kStride, kPadding));
    h = tape.concat_channels(h, grids[3 - s]);
  }
  h = tape.reshape(h, {batch, final_feature_size()});
  return tape.fully_connected(h, d.fc_w, d.fc_b);
}

std::array<Tensor<float>, 5> to_tensors(std::span<const GridSet> batch) {
  std::array<Tensor<float>, 5> out;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t n = vertices(i);
    out[i] = Tensor<float>({batch.size(), 2, n, n});
    auto data = out[i].data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const perlin::GradientGrid& g = batch[b][i];
      if (g.vertices_per_side() != n) {
        throw PggnError(PggnError::Kind::Dimension, "grid " + std::to_string(i) + " has " +
                                                        std::to_string(g.cells()) + " cells, expected " +
                                                        std::to_string(kGridCells[i]));
      }
      float* xs = data.data() + (b * 2) * n * n;
      float* ys = xs + n * n;
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) {
          xs[j * n + k] = static_cast<float>(g.at(k, j).x);
          ys[j * n + k] = static_cast<float>(g.at(k, j).y);
        }
      }
    }
  }
  return out;
}

GridSet from_tensors(const std::array<Tensor<float>, 5>& tensors, std::size_t index) {
  GridSet set;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t n = vertices(i);
    perlin::GradientGrid g(kGridCells[i]);
    const float* xs = tensors[i].data().data() + (index * 2) * n * n;
    const float* ys = xs + n * n;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) g.at(k, j) = {xs[j * n + k], ys[j * n + k]};
    }
    set[i] = std::move(g);
  }
  return set;
}

GridSet generate(std::span<const double> z, const GeneratorWeights& weights) {
  if (z.size() != weights.latent_dim()) {
    throw PggnError(PggnError::Kind::Dimension, "latent vector has " + std::to_string(z.size()) +
                                                    " entries, generator expects " +
                                                    std::to_string(weights.latent_dim()));
  }
  Tape<float> tape;
  Tensor<float> zt({1, z.size()});
  for (std::size_t i = 0; i < z.size(); ++i) zt[i] = static_cast<float>(z[i]);
  const auto grids = generator_graph(tape, tape.leaf(std::move(zt)), bind(tape, weights, false));
  std::array<Tensor<float>, 5> values;
  for (std::size_t i = 0; i < 5; ++i) values[i] = tape.value(grids[i]);
  return from_tensors(values, 0);
}

double discriminate(const GridSet& grids, const DiscriminatorWeights& weights) {
  Tape<float> tape;
  const auto tensors = to_tensors(std::span<const GridSet>(&grids, 1));
  std::array<Var, 5> vars;
  for (std::size_t i = 0; i < 5; ++i) vars[i] = tape.leaf(tensors[i]);
  return tape.value(tape.sigmoid(discriminator_graph(tape, vars, bind(tape, weights, false))))[0];
}

GridSet sample_real_gridset(std::uint64_t seed) {
  Rng rng(seed);
  GridSet set;
  for (std::size_t i = 0; i < 5; ++i) set[i] = perlin::random_unit_grid(kGridCells[i], rng);
  return set;
}

std::vector<double> sample_latent(std::size_t q, Rng& rng) {
  std::vector<double> z(q);
  for (double& v : z) v = uniform(rng, -1.0, 1.0);
  return z;
}

ComponentStats component_stats(std::span<const GridSet> sets) {
  ComponentStats s;
  double sum = 0.0, sum2 = 0.0;
  for (const GridSet& set : sets) {
    for (const auto& grid : set) {
      for (const perlin::Vec2& v : grid.vectors()) {
        sum += v.x + v.y;
        sum2 += v.x * v.x + v.y * v.y;
        s.count += 2;
      }
    }
  }
  if (s.count == 0) return s;
  const double n = static_cast<double>(s.count);
  s.mean = sum / n;
  s.stddev = std::sqrt(std::max(0.0, sum2 / n - s.mean * s.mean));
  return s;
}

DiscriminatorProbe probe_discriminator(const GeneratorWeights& g, const DiscriminatorWeights& d, std::size_t n,
                                       std::uint64_t seed) {
  DiscriminatorProbe probe;
  if (n == 0) return probe;
  Rng rng(seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double real = discriminate(sample_real_gridset(rng()), d);
    const double fake = discriminate(generate(sample_latent(g.latent_dim(), rng), g), d);
    probe.mean_real += real;
    probe.mean_fake += fake;
    correct += (real >= 0.5) + (fake < 0.5);
  }
  probe.mean_real /= static_cast<double>(n);
  probe.mean_fake /= static_cast<double>(n);
  probe.accuracy = static_cast<double>(correct) / static_cast<double>(2 * n);
  return probe;
}

}  // namespace cloudadv::pggn
