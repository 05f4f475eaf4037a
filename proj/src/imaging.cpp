#include "cloudadv/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cloudadv::imaging {

Raster::Raster(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}

Raster::Raster(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (data_.size() != height * width * channels) {
    throw ImageError(ImageError::Kind::DimensionMismatch,
                     "raster data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(height) + "x" + std::to_string(width) + "x" +
                         std::to_string(channels));
  }
}

std::uint8_t quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

double dequantize(std::uint8_t byte) noexcept { return static_cast<double>(byte) / 255.0; }

Image quantized(const Image& img) {
  Image out = img;
  for (double& v : out.values()) v = dequantize(quantize(v));
  return out;
}

std::vector<double> mean_color(const Image& img) {
  std::vector<double> mean(img.channels(), 0.0);
  if (img.pixel_count() == 0) return mean;
  const auto values = img.values();
  const std::size_t c = img.channels();
  for (std::size_t i = 0; i < values.size(); ++i) mean[i % c] += values[i];
  for (double& m : mean) m /= static_cast<double>(img.pixel_count());
  return mean;
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw ImageError(ImageError::Kind::DimensionMismatch, "mse: image shapes differ");
  }
  if (a.size() == 0) return 0.0;
  const auto va = a.values();
  const auto vb = b.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sum += d * d;
  }
  return sum / static_cast<double>(va.size());
}

}  // namespace cloudadv::imaging
