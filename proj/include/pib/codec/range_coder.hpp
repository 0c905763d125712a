#pragma once

// Byte-oriented range coder with a 32-bit range, a 33-bit low register and
// deferred carry propagation (cache byte + run of pending 0xFF bytes).
// Symbol frequencies are scaled to a fixed 16-bit total. The encoder ends on
// the value in the final interval with the most trailing zero bits and drops
// trailing zero bytes; the decoder reads zeros past the end of its input.

#include <cstdint>
#include <span>
#include <vector>

#include "pib/error.hpp"

namespace pib::codec {

inline constexpr unsigned kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;
inline constexpr std::uint32_t kTop = 1u << 24;

class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    if (freq == 0 || cum + freq > kFreqTotal) throw CoderError("range encoder: invalid frequency interval");
    range_ >>= kFreqBits;
    low_ += static_cast<std::uint64_t>(range_) * cum;
    range_ *= freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<std::uint8_t> finish() {
    const std::uint64_t last = low_ + range_ - 1;
    for (int k = 32; k >= 0; --k) {
      const std::uint64_t mask = (std::uint64_t{1} << k) - 1;
      const std::uint64_t v = (low_ + mask) & ~mask;
      if (v <= last) {
        low_ = v;
        break;
      }
    }
    for (int i = 0; i < 5; ++i) shift_low();
    while (!out_.empty() && out_.back() == 0) out_.pop_back();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t pending = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(pending + carry));
        pending = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  // `base` is added to byte positions reported in errors.
  explicit RangeDecoder(std::span<const std::uint8_t> in, std::size_t base = 0) : in_(in), base_(base) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
  }

  // Returns the scaled target in [0, kFreqTotal); follow with consume().
  std::uint32_t peek() {
    range_ >>= kFreqBits;
    const std::uint32_t v = code_ / range_;
    if (v >= kFreqTotal) throw DecodeError("range decoder: corrupt payload", base_ + pos_);
    return v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

  std::size_t position() const { return pos_; }
  // True once every input byte has been read.
  bool exhausted() const { return pos_ >= in_.size(); }

 private:
  std::uint32_t next_byte() {
    const std::uint32_t b = pos_ < in_.size() ? in_[pos_] : 0u;
    ++pos_;
    return b;
  }

  std::span<const std::uint8_t> in_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace pib::codec
