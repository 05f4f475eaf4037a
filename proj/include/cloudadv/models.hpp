#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloudadv/imaging.hpp"

namespace cloudadv::models {

using imaging::Image;

// Class probabilities; entries in [0, 1] summing to 1.
using ProbVector = std::vector<double>;

enum class Concurrency { Safe, Serialize };

// Black-box image classifier. Only probabilities cross this boundary.
class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual ProbVector classify(const Image& image) = 0;
  virtual const std::vector<std::string>& labels() const = 0;
  std::size_t label_count() const { return labels().size(); }
  virtual Concurrency concurrency() const { return Concurrency::Serialize; }
};

std::size_t argmax(std::span<const double> probs);

// Entries within [0, 1] and sum within 1 +- tolerance.
bool is_probability_vector(std::span<const double> probs, double tolerance = 1e-5);

// Numerically stable softmax.
ProbVector softmax(std::span<const double> logits);

// Counts every classify call. Calls to a Serialize model are funnelled
// through one mutex.
class CountingModel : public TargetModel {
 public:
  explicit CountingModel(std::shared_ptr<TargetModel> inner);

  ProbVector classify(const Image& image) override;
  const std::vector<std::string>& labels() const override { return inner_->labels(); }
  Concurrency concurrency() const override { return Concurrency::Safe; }

  std::size_t count() const noexcept { return count_.load(); }
  void reset() noexcept { count_ = 0; }
  TargetModel& inner() { return *inner_; }

 private:
  std::shared_ptr<TargetModel> inner_;
  std::atomic<std::size_t> count_{0};
  std::mutex serial_;
};

// ---------------------------------------------------------------------------
// Labeled images

struct LabeledImage {
  std::string id;
  Image image;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<std::string> labels;
  std::vector<LabeledImage> items;
};

inline const std::vector<std::string> kSyntheticLabels{"horizontal_stripes", "vertical_stripes", "checkerboard",
                                                       "radial_gradient",    "speckle",          "blobs"};

// Six procedural texture classes, n_per_class each, interleaved by class.
// Images are on the 8-bit grid so they survive PNG storage unchanged.
Dataset synth_dataset(std::size_t n_per_class, std::size_t size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Toy classifier: softmax regression over a 16x16 area-average of the image.

inline constexpr std::size_t kToyInputSize = 16;
inline constexpr std::size_t kToyFeatureDim = kToyInputSize * kToyInputSize * 3;

// Area-average downsample to 16x16x3 with fractional pixel coverage,
// flattened in HWC order.
std::vector<double> toy_features(const Image& image);

class ToyClassifier : public TargetModel {
 public:
  ToyClassifier() = default;
  // weights [kToyFeatureDim x classes] row-major, bias [classes].
  ToyClassifier(std::vector<std::string> labels, std::vector<double> weights, std::vector<double> bias);

  ProbVector classify(const Image& image) override;
  const std::vector<std::string>& labels() const override { return labels_; }
  Concurrency concurrency() const override { return Concurrency::Safe; }

  ProbVector classify_features(std::span<const double> features) const;
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }

  void save(const std::filesystem::path& path) const;
  static ToyClassifier load(const std::filesystem::path& path);

  friend bool operator==(const ToyClassifier& a, const ToyClassifier& b) {
    return a.labels_ == b.labels_ && a.weights_ == b.weights_ && a.bias_ == b.bias_;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

struct ToyTrainConfig {
  std::size_t epochs = 40;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

// Mini-batch gradient descent on mean cross-entropy. `loss_history`, when
// given, receives the mean training loss of every epoch.
ToyClassifier toy_train(const Dataset& data, const ToyTrainConfig& cfg, std::vector<double>* loss_history = nullptr);

double accuracy(TargetModel& model, const Dataset& data);

// ---------------------------------------------------------------------------
// Remote models speaking the JSON wire protocol:
//   GET  /health   -> {"status": "ok"}
//   GET  /labels   -> {"labels": [string, ...]}
//   POST /classify {"image_png_b64": ...} -> {"probs": [...], "label": int}

class RemoteError : public std::runtime_error {
 public:
  enum class Kind { Network, Timeout, BadStatus, MalformedBody, ProtocolViolation };
  RemoteError(Kind kind, const std::string& message, int status = 0)
      : std::runtime_error(message), kind_(kind), status_(status) {}
  Kind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }
  // Network failures, timeouts and 5xx responses may succeed on retry.
  bool retryable() const noexcept;

 private:
  Kind kind_;
  int status_;
};

struct RemoteOptions {
  std::chrono::milliseconds timeout{30000};
  Concurrency concurrency = Concurrency::Serialize;
  // Extra attempts for retryable failures.
  std::size_t retries = 0;
};

class RemoteModel : public TargetModel {
 public:
  // Fetches /labels immediately; throws RemoteError when that fails.
  explicit RemoteModel(std::string base_url, RemoteOptions options = {});

  ProbVector classify(const Image& image) override;
  const std::vector<std::string>& labels() const override { return labels_; }
  Concurrency concurrency() const override { return options_.concurrency; }
  bool healthy();

 private:
  std::string get(const std::string& path);
  std::string post(const std::string& path, const std::string& body);

  std::string base_url_;
  RemoteOptions options_;
  std::vector<std::string> labels_;
};

// Wire-format helpers, exposed for servers and tests.
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);
std::string classify_request_body(const Image& image);
// Validates a /classify response against the advertised label count.
ProbVector parse_classify_response(const std::string& body, std::size_t label_count);
std::vector<std::string> parse_labels_response(const std::string& body);

// "toy:<weights.json>" or "remote:<http://host:port>".
std::shared_ptr<TargetModel> open_model(const std::string& spec, RemoteOptions remote = {});

}  // namespace cloudadv::models
