#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cloudadv/perlin.hpp"
#include "cloudadv/random.hpp"
#include "cloudadv/tensor.hpp"

namespace cloudadv::pggn {

// Cell counts of the five grids, smallest first. Vertex counts are one more.
inline constexpr std::array<std::size_t, 5> kGridCells{4, 8, 16, 32, 64};
inline constexpr std::size_t kDefaultLatentDim = 52;

// Generator channel plan after the 3x3x128 seed feature.
inline constexpr std::size_t kSeedChannels = 128;
inline constexpr std::size_t kSeedSize = 3;
inline constexpr std::array<std::size_t, 5> kGeneratorChannels{64, 32, 16, 8, 2};
// Discriminator conv widths; each conv is followed by concatenation of the
// next smaller grid.
inline constexpr std::array<std::size_t, 4> kDiscriminatorChannels{16, 32, 64, 128};

// Grid i has kGridCells[i] cells.
using GridSet = std::array<perlin::GradientGrid, 5>;

class PggnError : public std::runtime_error {
 public:
  enum class Kind { Format, Version, Checksum, Truncated, Io, Dimension, Divergence };
  PggnError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct GeneratorWeights {
  tensor::Tensor<float> fc_w;  // [q, 128*3*3]
  tensor::Tensor<float> fc_b;  // [128*3*3]
  std::array<tensor::Tensor<float>, 5> deconv_w;  // [Ci, Co, 3, 3]
  std::array<tensor::Tensor<float>, 5> deconv_b;  // [Co]

  std::size_t latent_dim() const { return fc_w.empty() ? 0 : fc_w.dim(0); }
  static GeneratorWeights random(std::size_t latent_dim, Rng& rng);
  friend bool operator==(const GeneratorWeights&, const GeneratorWeights&) = default;
};

struct DiscriminatorWeights {
  std::array<tensor::Tensor<float>, 4> conv_w;  // [Co, Ci, 3, 3]
  std::array<tensor::Tensor<float>, 4> conv_b;
  tensor::Tensor<float> fc_w;  // [130*5*5, 1]
  tensor::Tensor<float> fc_b;  // [1]

  static DiscriminatorWeights random(Rng& rng);
  friend bool operator==(const DiscriminatorWeights&, const DiscriminatorWeights&) = default;
};

// Grid i is the last two channels of deconv stage i after activation, read
// as (x, y) component planes.
GridSet generate(std::span<const double> z, const GeneratorWeights& weights);

// Probability that the grid set is real.
double discriminate(const GridSet& grids, const DiscriminatorWeights& weights);

// Five classical unit-vector grids drawn from one seed.
GridSet sample_real_gridset(std::uint64_t seed);

// Latent vector uniform on [-1, 1]^q.
std::vector<double> sample_latent(std::size_t q, Rng& rng);

// Tensor layout used by the networks: [B, 2, s, s] per grid, channel 0 holding
// x components and channel 1 y components, row index = vertex j.
std::array<tensor::Tensor<float>, 5> to_tensors(std::span<const GridSet> batch);
GridSet from_tensors(const std::array<tensor::Tensor<float>, 5>& tensors, std::size_t index);

// Records the forward passes on a tape. Parameters come in as Vars so the
// same graph serves inference and both halves of training.
struct GeneratorVars {
  tensor::Var fc_w, fc_b;
  std::array<tensor::Var, 5> deconv_w, deconv_b;
};
struct DiscriminatorVars {
  std::array<tensor::Var, 4> conv_w, conv_b;
  tensor::Var fc_w, fc_b;
};

GeneratorVars bind(tensor::Tape<float>& tape, const GeneratorWeights& w, bool requires_grad);
DiscriminatorVars bind(tensor::Tape<float>& tape, const DiscriminatorWeights& w, bool requires_grad);
std::array<tensor::Var, 5> generator_graph(tensor::Tape<float>& tape, tensor::Var z, const GeneratorVars& g);
// Returns the pre-sigmoid logit [B, 1]; discriminate() applies the sigmoid.
tensor::Var discriminator_graph(tensor::Tape<float>& tape, const std::array<tensor::Var, 5>& grids,
                                const DiscriminatorVars& d);

enum class GeneratorLoss {
  NonSaturating,  // minimize -log D(G(z))
  Minimax,        // minimize log(1 - D(G(z)))
};

struct TrainConfig {
  std::size_t grids_per_size = 500;
  std::size_t epochs = 50;
  // Batch size and instance noise were fixed by a calibration run at the
  // default seed; the generated grid statistics are sensitive to both.
  std::size_t batch_size = 104;
  std::size_t latent_dim = kDefaultLatentDim;
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  std::uint64_t seed = 1;
  GeneratorLoss generator_loss = GeneratorLoss::NonSaturating;
  // Target used for real grids in the discriminator loss; below 1 is
  // one-sided label smoothing.
  float real_label = 1.0f;
  // Generator updates per discriminator update.
  std::size_t generator_steps = 1;
  // Std of Gaussian noise added to every grid the discriminator sees during
  // training, real and generated alike.
  float instance_noise = 0.35f;
};

struct EpochLoss {
  double discriminator = 0.0;  // mean over batches
  double generator = 0.0;
  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct TrainResult {
  GeneratorWeights generator;
  DiscriminatorWeights discriminator;
  std::vector<EpochLoss> history;
};

// Receives the weights as they stand at the end of the epoch.
using EpochCallback = std::function<void(std::size_t epoch, const EpochLoss&, const TrainResult& state)>;

// Throws PggnError(Divergence) as soon as a loss turns NaN.
TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct ComponentStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

// Pools every x and y component of every grid.
ComponentStats component_stats(std::span<const GridSet> sets);

struct DiscriminatorProbe {
  double mean_real = 0.0;
  double mean_fake = 0.0;
  double accuracy = 0.0;  // threshold 0.5, balanced real/fake
};

// Scores n fresh real sets and n generated sets, all drawn from `seed`.
DiscriminatorProbe probe_discriminator(const GeneratorWeights& g, const DiscriminatorWeights& d, std::size_t n,
                                       std::uint64_t seed);

// Named float tensors in a checksummed little-endian container.
using NamedTensors = std::vector<std::pair<std::string, tensor::Tensor<float>>>;

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(std::span<const std::uint8_t> bytes);
void save_tensors(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_tensors(const std::filesystem::path& path);

struct Weights {
  GeneratorWeights generator;
  DiscriminatorWeights discriminator;
};

void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);

}  // namespace cloudadv::pggn
