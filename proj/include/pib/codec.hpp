#pragma once

// Quantization, entropy coding of latents, and the per-frame bitstream.
//
// Frame wire format (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "PIBF"
//   4       1     format version (1)
//   5       1     tau (temporal context length used by the Z model)
//   6       2     camera id (u16)
//   8       4     frame index (u32)
//   12      4     model revision (u32)
//   16      6     Z shape C, H, W (3 x u16)
//   22      6     V shape C, H, W (3 x u16)
//   28      4     V payload length in bytes (u32)
//   32      4     Z payload length in bytes (u32)
//   36      ...   V payload, then Z payload
//
// A decoder reads V first, rebuilds the conditional model for Z from it, then
// reads Z. A tensor with zero elements has an empty payload.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pib/codec/range_coder.hpp"
#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"
#include "pib/random.hpp"
#include "pib/temporal_entropy.hpp"

namespace pib::codec {

using entropy::DiscretizedGaussian;
using entropy::kLatentSupport;
using entropy::Support;

inline constexpr std::array<std::uint8_t, 4> kMagic{'P', 'I', 'B', 'F'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 36;

struct QuantizedFeature {
  Shape shape;
  std::vector<int> values;
  std::uint16_t camera_id = 0;
  std::uint32_t frame_index = 0;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const QuantizedFeature&, const QuantizedFeature&) = default;
};

// Round half away from zero, then clamp to the alphabet.
inline int quantize_value(double v, Support support = kLatentSupport) {
  if (!std::isfinite(v)) throw DomainError("quantize: non-finite value");
  const double r = std::round(v);
  if (r <= support.lo) return support.lo;
  if (r >= support.hi) return support.hi;
  return static_cast<int>(r);
}

inline QuantizedFeature quantize(const Tensor& z, Support support = kLatentSupport) {
  QuantizedFeature q{z.shape(), std::vector<int>(z.size()), 0, 0};
  for (std::size_t i = 0; i < z.size(); ++i) q.values[i] = quantize_value(z[i], support);
  return q;
}

inline Tensor dequantize(const QuantizedFeature& q) {
  Tensor t(q.shape);
  for (std::size_t i = 0; i < q.size(); ++i) t[i] = q.values[i];
  return t;
}

// Training-time stand-in for rounding: additive uniform(-1/2, 1/2) noise.
inline Tensor uniform_noise(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform() - 0.5;
  return t;
}

// Cumulative frequencies over the support summing to kFreqTotal; every
// symbol gets at least one count so any in-support value is codable.
class FrequencyTable {
 public:
  FrequencyTable(const DiscretizedGaussian& model, Support support = kLatentSupport) : support_(support) {
    const std::vector<double> p = entropy::pmf_table(model, support);
    const std::size_t n = p.size();
    if (n == 0 || n > kFreqTotal / 2) throw CoderError("frequency table: unsupported alphabet size");
    freq_.resize(n);
    const double budget = static_cast<double>(kFreqTotal - n);
    std::uint32_t used = 0;
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < n; ++i) {
      freq_[i] = 1u + static_cast<std::uint32_t>(std::floor(std::clamp(p[i], 0.0, 1.0) * budget));
      used += freq_[i];
      if (p[i] > p[argmax]) argmax = i;
    }
    if (used > kFreqTotal) throw CoderError("frequency table: scaling overflow");
    freq_[argmax] += kFreqTotal - used;
    cum_.resize(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) cum_[i + 1] = cum_[i] + freq_[i];
  }

  std::uint32_t cum(int symbol) const { return cum_[index(symbol)]; }
  std::uint32_t freq(int symbol) const { return freq_[index(symbol)]; }

  // Symbol whose interval contains `target`.
  int lookup(std::uint32_t target) const {
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
    return support_.lo + static_cast<int>(it - cum_.begin()) - 1;
  }

 private:
  std::size_t index(int symbol) const {
    if (!support_.contains(symbol)) throw CoderError("symbol " + std::to_string(symbol) + " outside alphabet");
    return static_cast<std::size_t>(symbol - support_.lo);
  }

  Support support_;
  std::vector<std::uint32_t> freq_;
  std::vector<std::uint32_t> cum_;
};

inline std::vector<std::uint8_t> encode_symbols(std::span<const int> values, std::span<const DiscretizedGaussian> models,
                                                Support support = kLatentSupport) {
  if (values.size() != models.size()) throw CoderError("encode: model count does not match element count");
  if (values.empty()) return {};
  RangeEncoder enc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const FrequencyTable table(models[i], support);
    enc.encode(table.cum(values[i]), table.freq(values[i]));
  }
  return enc.finish();
}

inline std::vector<int> decode_symbols(std::span<const std::uint8_t> payload, std::span<const DiscretizedGaussian> models,
                                       Support support = kLatentSupport, std::size_t base_offset = 0) {
  std::vector<int> out(models.size());
  if (models.empty()) {
    if (!payload.empty()) throw DecodeError("decode: payload present for empty tensor", base_offset);
    return out;
  }
  RangeDecoder dec(payload, base_offset);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const FrequencyTable table(models[i], support);
    const int s = table.lookup(dec.peek());
    dec.consume(table.cum(s), table.freq(s));
    out[i] = s;
  }
  if (!dec.exhausted()) throw DecodeError("decode: trailing bytes after payload", base_offset + dec.position());
  return out;
}

// Ideal code length sum(-log2 pmf(value)) in bits.
inline double rate_estimate(std::span<const int> values, std::span<const DiscretizedGaussian> models,
                            Support support = kLatentSupport) {
  if (values.size() != models.size()) throw CoderError("rate_estimate: model count does not match element count");
  double bits = 0.0;
  // Probabilities that underflow are held at the smallest normal double.
  for (std::size_t i = 0; i < values.size(); ++i) {
    bits -= std::log2(std::max(entropy::pmf(models[i], values[i], support), std::numeric_limits<double>::min()));
  }
  return bits;
}

inline double rate_estimate(const QuantizedFeature& q, std::span<const DiscretizedGaussian> models,
                            Support support = kLatentSupport) {
  return rate_estimate(std::span<const int>(q.values), models, support);
}

// -------------------------------------------------------------------------
// Frame bitstream

struct FrameHeader {
  std::uint16_t camera_id = 0;
  std::uint32_t frame_index = 0;
  std::uint8_t tau = 0;
  std::uint32_t model_revision = 0;
  std::array<std::uint16_t, 3> z_shape{0, 0, 0};
  std::array<std::uint16_t, 3> v_shape{0, 0, 0};

  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct Bitstream {
  FrameHeader header;
  std::vector<std::uint8_t> v_payload;
  std::vector<std::uint8_t> z_payload;

  std::size_t payload_bits() const { return 8 * (v_payload.size() + z_payload.size()); }
  std::size_t total_bits() const { return 8 * kHeaderSize + payload_bits(); }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + v_payload.size() + z_payload.size());
    auto put = [&out](std::uint64_t v, int bytes) {
      for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    for (std::uint8_t b : kMagic) out.push_back(b);
    put(kFormatVersion, 1);
    put(header.tau, 1);
    put(header.camera_id, 2);
    put(header.frame_index, 4);
    put(header.model_revision, 4);
    for (auto d : header.z_shape) put(d, 2);
    for (auto d : header.v_shape) put(d, 2);
    put(v_payload.size(), 4);
    put(z_payload.size(), 4);
    for (std::uint8_t b : v_payload) out.push_back(b);
    for (std::uint8_t b : z_payload) out.push_back(b);
    return out;
  }

  static Bitstream parse(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) throw DecodeError("bitstream: truncated header", bytes.size());
    for (std::size_t i = 0; i < kMagic.size(); ++i) {
      if (bytes[i] != kMagic[i]) throw DecodeError("bitstream: bad magic", i);
    }
    if (bytes[4] != kFormatVersion) throw DecodeError("bitstream: unsupported version " + std::to_string(bytes[4]), 4);
    std::size_t pos = 5;
    auto get = [&](int n) {
      std::uint64_t v = 0;
      for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
      pos += static_cast<std::size_t>(n);
      return v;
    };
    Bitstream bs;
    bs.header.tau = static_cast<std::uint8_t>(get(1));
    bs.header.camera_id = static_cast<std::uint16_t>(get(2));
    bs.header.frame_index = static_cast<std::uint32_t>(get(4));
    bs.header.model_revision = static_cast<std::uint32_t>(get(4));
    for (auto& d : bs.header.z_shape) d = static_cast<std::uint16_t>(get(2));
    for (auto& d : bs.header.v_shape) d = static_cast<std::uint16_t>(get(2));
    const std::size_t v_len = get(4);
    const std::size_t z_len = get(4);
    if (bytes.size() != kHeaderSize + v_len + z_len) {
      throw DecodeError("bitstream: payload length mismatch (header says " + std::to_string(v_len + z_len) +
                            " bytes, have " + std::to_string(bytes.size() - kHeaderSize) + ")",
                        28);
    }
    bs.v_payload.assign(bytes.begin() + kHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + v_len));
    bs.z_payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + v_len), bytes.end());
    return bs;
  }
};

inline std::array<std::uint16_t, 3> wire_shape(const Shape& s) {
  if (s.empty() || (s.size() == 1 && s[0] == 0)) return {0, 0, 0};
  if (s.size() != 3) throw CoderError("bitstream: tensors must be C x H x W");
  std::array<std::uint16_t, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (s[i] > 0xFFFF) throw CoderError("bitstream: dimension exceeds 16 bits");
    out[i] = static_cast<std::uint16_t>(s[i]);
  }
  return out;
}

inline Shape tensor_shape(const std::array<std::uint16_t, 3>& s) {
  if (s[0] == 0 && s[1] == 0 && s[2] == 0) return Shape{0};
  return Shape{s[0], s[1], s[2]};
}

// Codes V (with its prior) then Z (with the conditional model).
inline Bitstream encode_frame(const QuantizedFeature& v, std::span<const DiscretizedGaussian> v_models,
                              const QuantizedFeature& z, std::span<const DiscretizedGaussian> z_models,
                              std::uint8_t tau = 0, std::uint32_t model_revision = 0) {
  Bitstream bs;
  bs.header.camera_id = z.camera_id;
  bs.header.frame_index = z.frame_index;
  bs.header.tau = tau;
  bs.header.model_revision = model_revision;
  bs.header.z_shape = wire_shape(z.shape);
  bs.header.v_shape = wire_shape(v.shape);
  bs.v_payload = encode_symbols(v.values, v_models);
  bs.z_payload = encode_symbols(z.values, z_models);
  return bs;
}

// Single-tensor stream without side information.
inline Bitstream encode(const QuantizedFeature& z, std::span<const DiscretizedGaussian> models) {
  return encode_frame(QuantizedFeature{Shape{0}, {}, z.camera_id, z.frame_index}, {}, z, models);
}

struct DecodedFrame {
  QuantizedFeature v;
  QuantizedFeature z;
};

// Z models are built from the decoded V (side information first).
using ZModelFn = std::function<std::vector<DiscretizedGaussian>(const QuantizedFeature& v)>;

inline DecodedFrame decode_frame(const Bitstream& bs, std::span<const DiscretizedGaussian> v_models,
                                 const ZModelFn& z_models_for) {
  DecodedFrame out;
  out.v.shape = tensor_shape(bs.header.v_shape);
  out.z.shape = tensor_shape(bs.header.z_shape);
  out.v.camera_id = out.z.camera_id = bs.header.camera_id;
  out.v.frame_index = out.z.frame_index = bs.header.frame_index;
  const std::size_t v_count = element_count(out.v.shape);
  if (v_models.size() != v_count) throw CoderError("decode: V model count does not match header shape");
  out.v.values = decode_symbols(bs.v_payload, v_models, kLatentSupport, kHeaderSize);
  const std::vector<DiscretizedGaussian> z_models = z_models_for(out.v);
  if (z_models.size() != element_count(out.z.shape)) throw CoderError("decode: Z model count does not match header shape");
  out.z.values = decode_symbols(bs.z_payload, z_models, kLatentSupport, kHeaderSize + bs.v_payload.size());
  return out;
}

inline QuantizedFeature decode(const Bitstream& bs, std::span<const DiscretizedGaussian> models) {
  const std::vector<DiscretizedGaussian> z_models(models.begin(), models.end());
  return decode_frame(bs, {}, [&](const QuantizedFeature&) { return z_models; }).z;
}

}  // namespace pib::codec
