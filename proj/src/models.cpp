#include <algorithm>
#include <cmath>

#include "cloudadv/models.hpp"

namespace cloudadv::models {

std::size_t argmax(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

bool is_probability_vector(std::span<const double> probs, double tolerance) {
  if (probs.empty()) return false;
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tolerance;
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double peak = *std::max_element(logits.begin(), logits.end());
  ProbVector p(logits.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) norm += p[i] = std::exp(logits[i] - peak);
  for (double& v : p) v /= norm;
  return p;
}

CountingModel::CountingModel(std::shared_ptr<TargetModel> inner) : inner_(std::move(inner)) {
  if (!inner_) throw std::invalid_argument("CountingModel needs a model");
}

ProbVector CountingModel::classify(const Image& image) {
  ++count_;
  if (inner_->concurrency() == Concurrency::Serialize) {
    std::lock_guard lock(serial_);
    return inner_->classify(image);
  }
  return inner_->classify(image);
}

double accuracy(TargetModel& model, const Dataset& data) {
  if (data.items.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& item : data.items) correct += argmax(model.classify(item.image)) == item.label;
  return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

std::shared_ptr<TargetModel> open_model(const std::string& spec, RemoteOptions remote) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "toy" && !rest.empty()) return std::make_shared<ToyClassifier>(ToyClassifier::load(rest));
  if (kind == "remote" && !rest.empty()) return std::make_shared<RemoteModel>(rest, remote);
  throw std::invalid_argument("model spec must be toy:<weights.json> or remote:<url>, got '" + spec + "'");
}

}  // namespace cloudadv::models
