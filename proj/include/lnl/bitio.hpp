#pragma once
// Bit-level writer/reader, MSB-first within bytes.

#include <cstdint>
#include <vector>

#include "lnl/common.hpp"

namespace lnl {

class BitWriter {
 public:
  void put_bit(uint32_t b) {
    acc_ = (acc_ << 1) | (b & 1u);
    if (++nbits_ == 8) {
      bytes_.push_back(static_cast<uint8_t>(acc_));
      acc_ = 0;
      nbits_ = 0;
    }
  }

  // n low bits of v, most significant first. n <= 32.
  void put_bits(uint32_t v, int n) {
    for (int i = n - 1; i >= 0; --i) put_bit((v >> i) & 1u);
  }

  size_t bit_count() const { return bytes_.size() * 8 + nbits_; }

  // Zero-pads the final partial byte.
  std::vector<uint8_t> finish() {
    if (nbits_ > 0) {
      bytes_.push_back(static_cast<uint8_t>(acc_ << (8 - nbits_)));
      acc_ = 0;
      nbits_ = 0;
    }
    return std::move(bytes_);
  }

 private:
  std::vector<uint8_t> bytes_;
  uint32_t acc_ = 0;
  int nbits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  uint32_t get_bit() {
    if (pos_ >= bytes_.size() * 8)
      throw StreamError("corrupt stream: exhausted mid-symbol");
    const uint32_t b = (bytes_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u;
    ++pos_;
    return b;
  }

  uint32_t get_bits(int n) {
    uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | get_bit();
    return v;
  }

  size_t bits_left() const { return bytes_.size() * 8 - pos_; }

  // After the last symbol: anything but zero padding within the final byte
  // is garbage.
  void expect_only_padding() const {
    const size_t left = bits_left();
    if (left >= 8)
      throw StreamError("corrupt stream: trailing garbage after payload");
    for (size_t i = 0; i < left; ++i) {
      const size_t p = pos_ + i;
      if ((bytes_[p >> 3] >> (7 - (p & 7))) & 1u)
        throw StreamError("corrupt stream: nonzero padding bits");
    }
  }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace lnl
