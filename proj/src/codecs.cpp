#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

// jpeglib.h relies on size_t and FILE being declared first.
#include <jpeglib.h>

#include "cloudadv/imaging.hpp"

namespace cloudadv::imaging {

namespace {

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  const auto values = img.values();
  for (std::size_t i = 0; i < values.size(); ++i) bytes[i] = quantize(values[i]);
  return bytes;
}

Image from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                 const std::vector<std::uint8_t>& bytes) {
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = dequantize(bytes[i]);
  return Image(height, width, channels, std::move(data));
}

void check_channels(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ImageError(ImageError::Kind::UnsupportedChannels,
                     "expected 1 or 3 channels, got " + std::to_string(img.channels()));
  }
}

// Shared tail of the file and memory readers once the header has been parsed.
Image finish_png_read(png_image& image, const std::string& source) {
  if ((image.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    png_image_free(&image);
    throw ImageError(ImageError::Kind::UnsupportedDepth, source + ": 16-bit PNG is not supported");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw ImageError(ImageError::Kind::MalformedPng, source + ": " + message);
  }
  return from_bytes(image.height, image.width, 3, bytes);
}

png_image make_write_header(const Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  return image;
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw ImageError(ImageError::Kind::MissingFile, path.string() + ": no such file");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw ImageError(ImageError::Kind::MalformedPng, path.string() + ": " + message);
  }
  return finish_png_read(image, path.string());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw ImageError(ImageError::Kind::MalformedPng, "in-memory PNG: " + message);
  }
  return finish_png_read(image, "in-memory PNG");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  check_channels(img);
  const auto pixels = to_bytes(img);
  png_image image = make_write_header(img);
  png_alloc_size_t size = 0;
  if (png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr) == 0) {
    throw ImageError(ImageError::Kind::Codec, std::string("PNG size query failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr) == 0) {
    throw ImageError(ImageError::Kind::Codec, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  const auto encoded = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError(ImageError::Kind::Unwritable, path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(encoded.data()), static_cast<std::streamsize>(encoded.size()));
  if (!out) throw ImageError(ImageError::Kind::Unwritable, path.string() + ": write failed");
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Both helpers keep only trivially destructible locals between setjmp and any
// libjpeg call, so a longjmp out of the library skips no destructors.
bool jpeg_encode(const std::uint8_t* pixels, unsigned width, unsigned height, int quality,
                 unsigned char** out, unsigned long* out_size, char* message) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, out, out_size);
  cinfo.image_width = width;
  cinfo.image_height = height;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(pixels + static_cast<std::size_t>(cinfo.next_scanline) * width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

bool jpeg_decode(const unsigned char* data, unsigned long size, std::uint8_t* pixels, unsigned width,
                 unsigned height, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, size);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width != width || cinfo.output_height != height || cinfo.output_components != 3) {
    std::strncpy(message, "decoded JPEG geometry differs from source", JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

Image jpeg_roundtrip(const Image& img, int quality) {
  if (img.channels() != 3) {
    throw ImageError(ImageError::Kind::UnsupportedChannels, "jpeg_roundtrip expects a 3-channel image");
  }
  if (quality < 1 || quality > 100) {
    throw ImageError(ImageError::Kind::Codec, "JPEG quality must be in 1..100");
  }
  if (img.pixel_count() == 0) return img;

  const auto pixels = to_bytes(img);
  const auto width = static_cast<unsigned>(img.width());
  const auto height = static_cast<unsigned>(img.height());
  char message[JMSG_LENGTH_MAX] = {0};

  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;
  if (!jpeg_encode(pixels.data(), width, height, quality, &encoded, &encoded_size, message)) {
    std::free(encoded);
    throw ImageError(ImageError::Kind::Codec, std::string("JPEG encode failed: ") + message);
  }
  std::vector<std::uint8_t> decoded(pixels.size());
  const bool ok = jpeg_decode(encoded, encoded_size, decoded.data(), width, height, message);
  std::free(encoded);
  if (!ok) throw ImageError(ImageError::Kind::Codec, std::string("JPEG decode failed: ") + message);
  return from_bytes(img.height(), img.width(), 3, decoded);
}

}  // namespace cloudadv::imaging
