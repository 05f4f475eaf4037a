#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cloudadv::imaging {

// Dense H x W x C raster of doubles. Samples are interleaved (HWC) and rows
// are stored top to bottom, so sample (y, x, c) lives at
// (y * width + x) * channels + c.
class Raster {
 public:
  Raster() = default;
  Raster(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  Raster(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Raster& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

// A picture with every sample in [0, 1].
class Image : public Raster {
 public:
  using Raster::Raster;
};

class ImageError : public std::runtime_error {
 public:
  enum class Kind {
    MissingFile,
    MalformedPng,
    UnsupportedDepth,
    Unwritable,
    Codec,
    DimensionMismatch,
    UnsupportedChannels,
  };

  ImageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// 8-bit quantization: round(v * 255) with halves rounded away from zero, after
// clamping v into [0, 1].
std::uint8_t quantize(double v);
double dequantize(std::uint8_t byte) noexcept;

// Snaps every sample to the nearest 8-bit level. Idempotent.
Image quantized(const Image& img);

// Grayscale and palette files are promoted to RGB by replication; alpha is
// dropped. 16-bit files are rejected.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

// Per-channel arithmetic mean.
std::vector<double> mean_color(const Image& img);

// Mean squared error where the divisor counts every scalar sample
// (pixels x channels).
double mse(const Image& a, const Image& b);

// Baseline JPEG encode at `quality` (1..100) then decode. Requires 3 channels.
Image jpeg_roundtrip(const Image& img, int quality);

}  // namespace cloudadv::imaging
