#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "cloudadv/models.hpp"
#include "cloudadv/random.hpp"
#include "cloudadv/tensor.hpp"

namespace cloudadv::models {

namespace {

constexpr const char* kFormat = "cloudadv-toy-classifier";
constexpr int kVersion = 1;

// weights[u][x] = overlap of source pixel x with output cell u, divided by
// the cell width, for n source pixels mapped onto kToyInputSize cells.
std::vector<std::vector<std::pair<std::size_t, double>>> coverage(std::size_t n) {
  std::vector<std::vector<std::pair<std::size_t, double>>> out(kToyInputSize);
  const double cell = static_cast<double>(n) / kToyInputSize;
  for (std::size_t u = 0; u < kToyInputSize; ++u) {
    const double lo = u * cell, hi = (u + 1) * cell;
    for (auto x = static_cast<std::size_t>(lo); x < n && static_cast<double>(x) < hi; ++x) {
      const double overlap = std::min(hi, x + 1.0) - std::max(lo, static_cast<double>(x));
      if (overlap > 0) out[u].emplace_back(x, overlap / cell);
    }
  }
  return out;
}

}  // namespace

std::vector<double> toy_features(const Image& image) {
  if (image.channels() != 3 || image.empty()) {
    throw imaging::ImageError(imaging::ImageError::Kind::UnsupportedChannels,
                              "toy classifier expects a non-empty 3-channel image");
  }
  const auto rows = coverage(image.height());
  const auto cols = coverage(image.width());
  std::vector<double> f(kToyFeatureDim, 0.0);
  for (std::size_t v = 0; v < kToyInputSize; ++v) {
    for (std::size_t u = 0; u < kToyInputSize; ++u) {
      double* out = &f[(v * kToyInputSize + u) * 3];
      for (const auto& [y, wy] : rows[v]) {
        for (const auto& [x, wx] : cols[u]) {
          const double w = wy * wx;
          for (std::size_t c = 0; c < 3; ++c) out[c] += w * image.at(y, x, c);
        }
      }
    }
  }
  return f;
}

ToyClassifier::ToyClassifier(std::vector<std::string> labels, std::vector<double> weights, std::vector<double> bias)
    : labels_(std::move(labels)), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (labels_.empty()) throw std::invalid_argument("toy classifier needs at least one label");
  if (weights_.size() != kToyFeatureDim * labels_.size() || bias_.size() != labels_.size()) {
    throw std::invalid_argument("toy classifier weights do not match " + std::to_string(labels_.size()) + " labels");
  }
}

ProbVector ToyClassifier::classify_features(std::span<const double> features) const {
  const std::size_t m = labels_.size();
  std::vector<double> logits(bias_);
  for (std::size_t i = 0; i < kToyFeatureDim; ++i) {
    const double x = features[i];
    const double* row = &weights_[i * m];
    for (std::size_t k = 0; k < m; ++k) logits[k] += x * row[k];
  }
  return softmax(logits);
}

ProbVector ToyClassifier::classify(const Image& image) { return classify_features(toy_features(image)); }

void ToyClassifier::save(const std::filesystem::path& path) const {
  const nlohmann::json j{{"format", kFormat},       {"version", kVersion}, {"input_size", kToyInputSize},
                         {"labels", labels_},       {"weights", weights_}, {"bias", bias_}};
  std::ofstream f(path);
  f << j.dump() << '\n';
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

ToyClassifier ToyClassifier::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open toy classifier " + path.string());
  nlohmann::json j;
  try {
    f >> j;
    if (j.at("format") != kFormat) throw std::runtime_error("not a toy classifier file");
    if (j.at("version") != kVersion) throw std::runtime_error("unsupported toy classifier version");
    if (j.at("input_size") != kToyInputSize) throw std::runtime_error("toy classifier input size mismatch");
    return ToyClassifier(j.at("labels").get<std::vector<std::string>>(), j.at("weights").get<std::vector<double>>(),
                         j.at("bias").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

constexpr double kTrainCenter = 0.5;

ToyClassifier toy_train(const Dataset& data, const ToyTrainConfig& cfg, std::vector<double>* loss_history) {
  if (data.items.empty()) throw std::invalid_argument("toy_train: empty dataset");
  if (data.labels.empty()) throw std::invalid_argument("toy_train: dataset has no labels");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0)) {
    throw std::invalid_argument("toy_train: epochs, batch size and lr must be positive");
  }
  const std::size_t m = data.labels.size();
  std::vector<std::vector<double>> features;
  features.reserve(data.items.size());
  for (const auto& item : data.items) {
    if (item.label >= m) throw std::invalid_argument("toy_train: label out of range for item " + item.id);
    // Training runs on features centred at mid-grey so the bias is not
    // starved relative to 768 positive inputs; folded back below.
    auto f = toy_features(item.image);
    for (double& v : f) v -= kTrainCenter;
    features.push_back(std::move(f));
  }

  Rng rng(cfg.seed);
  tensor::Tensor<double> w = tensor::uniform_init<double>({kToyFeatureDim, m}, kToyFeatureDim, rng);
  tensor::Tensor<double> b({m});
  std::vector<std::size_t> order(data.items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (loss_history) loss_history->clear();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t batch = std::min(cfg.batch_size, order.size() - start);
      tensor::Tensor<double> x({batch, kToyFeatureDim});
      std::vector<std::size_t> labels(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t idx = order[start + i];
        std::copy(features[idx].begin(), features[idx].end(), x.data().begin() + i * kToyFeatureDim);
        labels[i] = data.items[idx].label;
      }
      tensor::Tape<double> tape;
      const auto wv = tape.leaf(w, true);
      const auto bv = tape.leaf(b, true);
      const auto loss = tape.softmax_cross_entropy(tape.fully_connected(tape.leaf(std::move(x)), wv, bv), labels);
      total += tape.value(loss)[0] * static_cast<double>(batch);
      tape.backward(loss);
      const auto gw = tape.grad(wv);
      const auto gb = tape.grad(bv);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * gw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= cfg.lr * gb[i];
    }
    if (loss_history) loss_history->push_back(total / static_cast<double>(order.size()));
  }
  std::vector<double> bias(b.data().begin(), b.data().end());
  for (std::size_t i = 0; i < kToyFeatureDim; ++i) {
    for (std::size_t k = 0; k < m; ++k) bias[k] -= kTrainCenter * w[i * m + k];
  }
  return ToyClassifier(data.labels, {w.data().begin(), w.data().end()}, std::move(bias));
}

}  // namespace cloudadv::models
