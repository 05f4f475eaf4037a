#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "cloudadv/pggn.hpp"

// Layout, all integers little-endian:
//   "PGGN" | u16 version | u32 tensor count
//   per tensor: u16 name length | name | u8 rank | u32 dims[rank] | u64 data offset
//   f32 payload (offsets are relative to the payload start)
//   u32 CRC-32 of every preceding byte

namespace cloudadv::pggn {

using tensor::Tensor;

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr char kMagic[4] = {'P', 'G', 'G', 'N'};

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw PggnError(PggnError::Kind::Truncated, "weight file is truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(c, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (name.size() > UINT16_MAX) throw PggnError(PggnError::Kind::Format, "tensor name too long");
    if (t.rank() > UINT8_MAX) throw PggnError(PggnError::Kind::Format, "tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(out, offset);
    offset += 4 * t.size();
  }
  for (const auto& entry : tensors) {
    for (float v : entry.second.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  put<std::uint32_t>(out, crc(out));
  return out;
}

NamedTensors decode_tensors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw PggnError(PggnError::Kind::Format, "not a PGGN weight file (bad magic)");
  }
  if (bytes.size() < 14) throw PggnError(PggnError::Kind::Truncated, "weight file is truncated");
  Reader header(bytes.subspan(4));
  const auto version = header.get<std::uint16_t>();
  if (version != kVersion) {
    throw PggnError(PggnError::Kind::Version,
                    "weight file version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.get<std::uint32_t>() != crc(body)) throw PggnError(PggnError::Kind::Checksum, "weight file checksum mismatch");

  Reader r(body.subspan(6));
  const auto count = r.get<std::uint32_t>();
  struct Entry {
    std::string name;
    tensor::Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.get<std::uint16_t>();
    const auto name = r.take(len);
    e.name.assign(name.begin(), name.end());
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.get<std::uint32_t>());
    e.offset = r.get<std::uint64_t>();
    entries.push_back(std::move(e));
  }
  const auto payload = body.subspan(6 + r.position());
  NamedTensors out;
  for (const Entry& e : entries) {
    const std::size_t n = tensor::shape_size(e.shape);
    if (e.offset > payload.size() || (payload.size() - e.offset) / 4 < n) {
      throw PggnError(PggnError::Kind::Truncated, "tensor " + e.name + " runs past the payload");
    }
    Reader data(payload.subspan(static_cast<std::size_t>(e.offset), 4 * n));
    std::vector<float> values(n);
    for (float& v : values) v = std::bit_cast<float>(data.get<std::uint32_t>());
    out.emplace_back(e.name, Tensor<float>(e.shape, std::move(values)));
  }
  return out;
}

void save_tensors(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw PggnError(PggnError::Kind::Io, "cannot write " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PggnError(PggnError::Kind::Io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return decode_tensors(bytes);
}

void save_weights(const Weights& weights, const std::filesystem::path& path) {
  const GeneratorWeights& g = weights.generator;
  const DiscriminatorWeights& d = weights.discriminator;
  NamedTensors t{{"gen.fc_w", g.fc_w}, {"gen.fc_b", g.fc_b}};
  for (std::size_t s = 0; s < 5; ++s) {
    t.emplace_back("gen.deconv" + std::to_string(s) + "_w", g.deconv_w[s]);
    t.emplace_back("gen.deconv" + std::to_string(s) + "_b", g.deconv_b[s]);
  }
  for (std::size_t s = 0; s < 4; ++s) {
    t.emplace_back("disc.conv" + std::to_string(s) + "_w", d.conv_w[s]);
    t.emplace_back("disc.conv" + std::to_string(s) + "_b", d.conv_b[s]);
  }
  t.emplace_back("disc.fc_w", d.fc_w);
  t.emplace_back("disc.fc_b", d.fc_b);
  save_tensors(t, path);
}

Weights load_weights(const std::filesystem::path& path) {
  std::map<std::string, Tensor<float>> by_name;
  for (auto& [name, t] : load_tensors(path)) by_name[name] = std::move(t);

  // Shapes are checked against a freshly initialized network of the same
  // latent size.
  auto take = [&](const std::string& name, const Tensor<float>& like) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw PggnError(PggnError::Kind::Format, "weight file lacks tensor " + name);
    if (it->second.shape() != like.shape()) {
      throw PggnError(PggnError::Kind::Dimension, "tensor " + name + " has shape " +
                                                      tensor::shape_string(it->second.shape()) + ", expected " +
                                                      tensor::shape_string(like.shape()));
    }
    return std::move(it->second);
  };
  auto fc = by_name.find("gen.fc_w");
  if (fc == by_name.end() || fc->second.rank() != 2) {
    throw PggnError(PggnError::Kind::Format, "weight file lacks a generator input layer");
  }
  Rng rng(0);
  Weights w{GeneratorWeights::random(fc->second.dim(0), rng), DiscriminatorWeights::random(rng)};
  GeneratorWeights& g = w.generator;
  DiscriminatorWeights& d = w.discriminator;
  g.fc_w = take("gen.fc_w", g.fc_w);
  g.fc_b = take("gen.fc_b", g.fc_b);
  for (std::size_t s = 0; s < 5; ++s) {
    g.deconv_w[s] = take("gen.deconv" + std::to_string(s) + "_w", g.deconv_w[s]);
    g.deconv_b[s] = take("gen.deconv" + std::to_string(s) + "_b", g.deconv_b[s]);
  }
  for (std::size_t s = 0; s < 4; ++s) {
    d.conv_w[s] = take("disc.conv" + std::to_string(s) + "_w", d.conv_w[s]);
    d.conv_b[s] = take("disc.conv" + std::to_string(s) + "_b", d.conv_b[s]);
  }
  d.fc_w = take("disc.fc_w", d.fc_w);
  d.fc_b = take("disc.fc_b", d.fc_b);
  return w;
}

}  // namespace cloudadv::pggn
