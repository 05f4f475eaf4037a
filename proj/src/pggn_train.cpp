#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cloudadv/pggn.hpp"

namespace cloudadv::pggn {

using tensor::AdamState;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

std::vector<Tensor<float>*> parameters(GeneratorWeights& w) {
  std::vector<Tensor<float>*> p{&w.fc_w, &w.fc_b};
  for (std::size_t s = 0; s < 5; ++s) {
    p.push_back(&w.deconv_w[s]);
    p.push_back(&w.deconv_b[s]);
  }
  return p;
}

std::vector<Var> vars(const GeneratorVars& v) {
  std::vector<Var> out{v.fc_w, v.fc_b};
  for (std::size_t s = 0; s < 5; ++s) {
    out.push_back(v.deconv_w[s]);
    out.push_back(v.deconv_b[s]);
  }
  return out;
}

std::vector<Tensor<float>*> parameters(DiscriminatorWeights& w) {
  std::vector<Tensor<float>*> p;
  for (std::size_t s = 0; s < 4; ++s) {
    p.push_back(&w.conv_w[s]);
    p.push_back(&w.conv_b[s]);
  }
  p.push_back(&w.fc_w);
  p.push_back(&w.fc_b);
  return p;
}

std::vector<Var> vars(const DiscriminatorVars& v) {
  std::vector<Var> out;
  for (std::size_t s = 0; s < 4; ++s) {
    out.push_back(v.conv_w[s]);
    out.push_back(v.conv_b[s]);
  }
  out.push_back(v.fc_w);
  out.push_back(v.fc_b);
  return out;
}

Tensor<float> latent_batch(std::size_t batch, std::size_t q, Rng& rng) {
  Tensor<float> z({batch, q});
  for (float& v : z.data()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return z;
}

// Box-Muller on the portable uniform draw.
double gaussian(Rng& rng) {
  return std::sqrt(-2.0 * std::log(unit_open(rng))) * std::cos(6.283185307179586 * unit_open(rng));
}

Tensor<float> noisy(Tensor<float> t, float stddev, Rng& rng) {
  if (stddev > 0.0f) {
    for (float& v : t.data()) v += static_cast<float>(stddev * gaussian(rng));
  }
  return t;
}

void check_finite(double loss, const char* which, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw PggnError(PggnError::Kind::Divergence, std::string(which) + " loss became " + std::to_string(loss) +
                                                     " at epoch " + std::to_string(epoch) + ", batch " +
                                                     std::to_string(batch));
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.grids_per_size == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.latent_dim == 0 || !(cfg.lr > 0)) {
    throw std::invalid_argument("train: grids, epochs, batch size, latent dimension and lr must be positive");
  }
  Rng rng(cfg.seed);
  TrainResult result;
  result.generator = GeneratorWeights::random(cfg.latent_dim, rng);
  result.discriminator = DiscriminatorWeights::random(rng);

  std::vector<GridSet> real;
  real.reserve(cfg.grids_per_size);
  for (std::size_t i = 0; i < cfg.grids_per_size; ++i) real.push_back(sample_real_gridset(rng()));

  AdamState<float> g_state, d_state;
  for (auto* s : {&g_state, &d_state}) {
    s->lr = cfg.lr;
    s->beta1 = cfg.beta1;
    s->beta2 = cfg.beta2;
  }
  auto g_params = parameters(result.generator);
  auto d_params = parameters(result.discriminator);

  std::vector<std::size_t> order(real.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss epoch_loss;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t batch = std::min(cfg.batch_size, order.size() - start);
      std::vector<GridSet> real_batch;
      real_batch.reserve(batch);
      for (std::size_t i = 0; i < batch; ++i) real_batch.push_back(real[order[start + i]]);
      const auto real_tensors = to_tensors(real_batch);

      // Discriminator: push D(R) toward 1 and D(G(z)) toward 0.
      double d_loss = 0.0;
      {
        Tape<float> tape;
        const auto g = bind(tape, result.generator, false);
        const auto fake = generator_graph(tape, tape.leaf(latent_batch(batch, cfg.latent_dim, rng)), g);
        std::array<Var, 5> fake_values, real_values;
        for (std::size_t i = 0; i < 5; ++i) {
          fake_values[i] = tape.leaf(noisy(tape.value(fake[i]), cfg.instance_noise, rng));
          real_values[i] = tape.leaf(noisy(real_tensors[i], cfg.instance_noise, rng));
        }
        const auto d = bind(tape, result.discriminator, true);
        const Var loss = tape.add(tape.bce_with_logits(discriminator_graph(tape, real_values, d), cfg.real_label),
                                  tape.bce_with_logits(discriminator_graph(tape, fake_values, d), 0.0f));
        d_loss = tape.value(loss)[0];
        check_finite(d_loss, "discriminator", epoch, batches);
        tape.backward(loss);
        std::vector<Tensor<float>> grads;
        for (Var v : vars(d)) grads.push_back(tape.grad(v));
        tensor::adam_step<float>(d_params, grads, d_state);
      }

      // Generator: fool the updated discriminator with a fresh latent batch.
      double g_loss = 0.0;
      for (std::size_t step = 0; step < cfg.generator_steps; ++step) {
        Tape<float> tape;
        const auto g = bind(tape, result.generator, true);
        auto fake = generator_graph(tape, tape.leaf(latent_batch(batch, cfg.latent_dim, rng)), g);
        if (cfg.instance_noise > 0.0f) {
          for (Var& v : fake) {
            v = tape.add(v, tape.leaf(noisy(Tensor<float>(tape.value(v).shape()), cfg.instance_noise, rng)));
          }
        }
        const Var logit = discriminator_graph(tape, fake, bind(tape, result.discriminator, false));
        const Var loss = cfg.generator_loss == GeneratorLoss::NonSaturating
                             ? tape.bce_with_logits(logit, 1.0f)
                             : tape.scale(tape.bce_with_logits(logit, 0.0f), -1.0f);
        g_loss = tape.value(loss)[0];
        check_finite(g_loss, "generator", epoch, batches);
        tape.backward(loss);
        std::vector<Tensor<float>> grads;
        for (Var v : vars(g)) grads.push_back(tape.grad(v));
        tensor::adam_step<float>(g_params, grads, g_state);
      }

      epoch_loss.discriminator += d_loss;
      epoch_loss.generator += g_loss;
      ++batches;
    }
    epoch_loss.discriminator /= static_cast<double>(batches);
    epoch_loss.generator /= static_cast<double>(batches);
    result.history.push_back(epoch_loss);
    spdlog::debug("pggn epoch {}: D loss {:.4f}, G loss {:.4f}", epoch, epoch_loss.discriminator,
                  epoch_loss.generator);
    if (on_epoch) on_epoch(epoch, epoch_loss, result);
  }
  return result;
}

}  // namespace cloudadv::pggn
