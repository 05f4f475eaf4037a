#include <httplib.h>
#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <thread>

#include "cloudadv/models.hpp"

namespace cloudadv::models {

namespace {

using Clock = std::chrono::steady_clock;

RemoteError malformed(const std::string& what) { return RemoteError(RemoteError::Kind::MalformedBody, what); }

RemoteError violation(const std::string& what) { return RemoteError(RemoteError::Kind::ProtocolViolation, what); }

template <typename Fn>
auto with_retries(std::size_t retries, Fn&& fn) {
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const RemoteError& e) {
      if (!e.retryable() || attempt >= retries) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(100) * (1 << std::min<std::size_t>(attempt, 5)));
    }
  }
}

}  // namespace

bool RemoteError::retryable() const noexcept {
  switch (kind_) {
    case Kind::Network:
    case Kind::Timeout: return true;
    case Kind::BadStatus: return status_ >= 500;
    default: return false;
  }
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 text length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("invalid base64 text");
  std::size_t padding = 0;
  for (auto it = text.rbegin(); it != text.rend() && *it == '=' && padding < 2; ++it) ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

std::string classify_request_body(const Image& image) {
  return nlohmann::json{{"image_png_b64", base64_encode(imaging::encode_png(image))}}.dump();
}

std::vector<std::string> parse_labels_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw malformed(std::string("labels response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array()) {
    throw violation("labels response lacks a \"labels\" array");
  }
  std::vector<std::string> labels;
  for (const auto& v : j["labels"]) {
    if (!v.is_string()) throw violation("labels must be strings");
    labels.push_back(v.get<std::string>());
  }
  if (labels.empty()) throw violation("server advertises no labels");
  return labels;
}

ProbVector parse_classify_response(const std::string& body, std::size_t label_count) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw malformed(std::string("classify response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("probs") || !j["probs"].is_array()) {
    throw violation("classify response lacks a \"probs\" array");
  }
  ProbVector probs;
  for (const auto& v : j["probs"]) {
    if (!v.is_number()) throw violation("probs must be numbers");
    probs.push_back(v.get<double>());
  }
  if (probs.size() != label_count) {
    throw violation("server returned " + std::to_string(probs.size()) + " probabilities but advertises " +
                    std::to_string(label_count) + " labels");
  }
  if (!is_probability_vector(probs, 1e-3)) throw violation("probabilities leave [0, 1] or do not sum to 1 +- 1e-3");
  if (j.contains("label")) {
    const auto& label = j["label"];
    if (!label.is_number_integer() || label.get<long long>() < 0 ||
        label.get<long long>() >= static_cast<long long>(label_count)) {
      throw violation("label field is not a valid class index");
    }
  } else {
    throw violation("classify response lacks \"label\"");
  }
  double sum = 0.0;
  for (double p : probs) sum += p;
  for (double& p : probs) p /= sum;
  return probs;
}

RemoteModel::RemoteModel(std::string base_url, RemoteOptions options)
    : base_url_(std::move(base_url)), options_(options) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  if (base_url_.rfind("http://", 0) != 0) {
    throw std::invalid_argument("remote model URL must start with http://, got '" + base_url_ + "'");
  }
  labels_ = with_retries(options_.retries, [&] { return parse_labels_response(get("/labels")); });
}

bool RemoteModel::healthy() {
  try {
    const auto j = nlohmann::json::parse(get("/health"));
    return j.value("status", "") == "ok";
  } catch (const std::exception&) {
    return false;
  }
}

ProbVector RemoteModel::classify(const Image& image) {
  const std::string body = classify_request_body(image);
  return with_retries(options_.retries,
                      [&] { return parse_classify_response(post("/classify", body), labels_.size()); });
}

namespace {

std::string unwrap(httplib::Result& res, Clock::time_point start, std::chrono::milliseconds timeout,
                   const std::string& what) {
  if (!res) {
    const auto err = res.error();
    const auto elapsed = Clock::now() - start;
    // httplib reports a read timeout as a plain read error.
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           ((err == httplib::Error::Read || err == httplib::Error::Write) && elapsed >= timeout * 9 / 10);
    throw RemoteError(timed_out ? RemoteError::Kind::Timeout : RemoteError::Kind::Network,
                      what + ": " + httplib::to_string(err));
  }
  if (res->status != 200) {
    throw RemoteError(RemoteError::Kind::BadStatus, what + ": HTTP " + std::to_string(res->status), res->status);
  }
  return res->body;
}

httplib::Client make_client(const std::string& url, std::chrono::milliseconds timeout) {
  httplib::Client cli(url);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  return cli;
}

}  // namespace

std::string RemoteModel::get(const std::string& path) {
  auto cli = make_client(base_url_, options_.timeout);
  const auto start = Clock::now();
  auto res = cli.Get(path);
  return unwrap(res, start, options_.timeout, "GET " + path);
}

std::string RemoteModel::post(const std::string& path, const std::string& body) {
  auto cli = make_client(base_url_, options_.timeout);
  const auto start = Clock::now();
  auto res = cli.Post(path, body, "application/json");
  return unwrap(res, start, options_.timeout, "POST " + path);
}

}  // namespace cloudadv::models
