#pragma once

// Tensor containers shared by every kernel.
//
// All feature maps are stored height-major with channels innermost
// ([H][W][C]). Binary tensors pack 32 channels into each uint32_t word, so a
// pixel occupies ceil(C/32) consecutive words and the inner loop of a binary
// convolution walks one contiguous word stream per filter row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "binsed/errors.hpp"

namespace binsed {

inline constexpr int kWordBits = 32;

constexpr int words_for(int channels) { return (channels + kWordBits - 1) / kWordBits; }

// Dense [H][W][C] container.
template <typename T>
struct Tensor3 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {
    if (h < 0 || w < 0 || c < 0) throw ShapeError("negative tensor extent");
  }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  T& operator()(int y, int x, int c) { return data[index(y, x, c)]; }
  const T& operator()(int y, int x, int c) const { return data[index(y, x, c)]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

using SignTensor = Tensor3<std::int8_t>;   // logical ±1 values
using AccTensor = Tensor3<std::int32_t>;   // convolution accumulators
using RealTensor = Tensor3<double>;

// Convolution filters in [out][ky][kx][in] order.
template <typename T>
struct Filters {
  int out_channels = 0;
  int kernel_y = 0;
  int kernel_x = 0;
  int in_channels = 0;
  std::vector<T> data;

  Filters() = default;
  Filters(int out, int ky, int kx, int in, T fill = T{})
      : out_channels(out), kernel_y(ky), kernel_x(kx), in_channels(in),
        data(static_cast<std::size_t>(out) * ky * kx * in, fill) {
    if (out < 0 || ky < 0 || kx < 0 || in < 0) throw ShapeError("negative filter extent");
  }

  std::size_t index(int k, int dy, int dx, int c) const {
    return ((static_cast<std::size_t>(k) * kernel_y + dy) * kernel_x + dx) * in_channels + c;
  }
  T& operator()(int k, int dy, int dx, int c) { return data[index(k, dy, dx, c)]; }
  const T& operator()(int k, int dy, int dx, int c) const { return data[index(k, dy, dx, c)]; }

  friend bool operator==(const Filters&, const Filters&) = default;
};

// Signed integer tensor carrying a Q-format: real value = integer * 2^-qformat.
struct FixedTensor {
  Tensor3<std::int32_t> values;
  int qformat = 0;
  int bitwidth = 16;

  FixedTensor() = default;
  FixedTensor(int h, int w, int c, int q, int bits) : values(h, w, c), qformat(q), bitwidth(bits) {
    if (bits != 16 && bits != 32) throw ShapeError("fixed-point bitwidth must be 16 or 32");
  }

  int height() const { return values.height; }
  int width() const { return values.width; }
  int channels() const { return values.channels; }
  std::int32_t& operator()(int y, int x, int c) { return values(y, x, c); }
  std::int32_t operator()(int y, int x, int c) const { return values(y, x, c); }

  double real(int y, int x, int c) const { return std::ldexp(static_cast<double>(values(y, x, c)), -qformat); }

  // True when every stored integer fits `bitwidth` signed bits.
  bool in_range() const {
    const std::int64_t lo = -(std::int64_t{1} << (bitwidth - 1));
    const std::int64_t hi = (std::int64_t{1} << (bitwidth - 1)) - 1;
    for (auto v : values.data)
      if (v < lo || v > hi) return false;
    return true;
  }

  friend bool operator==(const FixedTensor&, const FixedTensor&) = default;
};

// Bit-packed ±1 feature map. Bit 1 encodes +1, bit 0 encodes -1. Bits past
// `channels` in the last word of a pixel are kept zero.
class BinaryTensor {
 public:
  BinaryTensor() = default;
  BinaryTensor(int h, int w, int c)
      : height_(h), width_(w), channels_(c), words_per_pixel_(words_for(c)),
        words_(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(words_for(c)), 0u) {
    if (h < 0 || w < 0 || c <= 0) throw ShapeError("binary tensor needs positive channel count");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int words_per_pixel() const { return words_per_pixel_; }

  std::size_t pixel_offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) *
           static_cast<std::size_t>(words_per_pixel_);
  }
  std::span<const std::uint32_t> pixel(int y, int x) const {
    return {words_.data() + pixel_offset(y, x), static_cast<std::size_t>(words_per_pixel_)};
  }
  std::span<std::uint32_t> pixel(int y, int x) {
    return {words_.data() + pixel_offset(y, x), static_cast<std::size_t>(words_per_pixel_)};
  }

  bool bit(int y, int x, int c) const {
    return (words_[pixel_offset(y, x) + static_cast<std::size_t>(c / kWordBits)] >> (c % kWordBits)) & 1u;
  }
  void set_bit(int y, int x, int c, bool on) {
    auto& w = words_[pixel_offset(y, x) + static_cast<std::size_t>(c / kWordBits)];
    const std::uint32_t m = 1u << (c % kWordBits);
    w = on ? (w | m) : (w & ~m);
  }

  std::span<const std::uint32_t> words() const { return words_; }
  std::span<std::uint32_t> words() { return words_; }

  // Mask of the valid channel bits in the last word of a pixel.
  std::uint32_t tail_mask() const {
    const int rem = channels_ % kWordBits;
    return rem == 0 ? 0xFFFFFFFFu : ((1u << rem) - 1u);
  }

  bool padding_clear() const {
    const std::uint32_t pad = ~tail_mask();
    if (pad == 0 || words_.empty()) return true;
    for (std::size_t i = static_cast<std::size_t>(words_per_pixel_) - 1; i < words_.size();
         i += static_cast<std::size_t>(words_per_pixel_))
      if (words_[i] & pad) return false;
    return true;
  }

  friend bool operator==(const BinaryTensor&, const BinaryTensor&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  int words_per_pixel_ = 0;
  std::vector<std::uint32_t> words_;
};

// Packed ±1 filters, [out][ky][kx][ceil(in/32)] words, same bit encoding and
// padding rule as BinaryTensor.
class PackedBinaryWeights {
 public:
  PackedBinaryWeights() = default;
  PackedBinaryWeights(int out, int in, int ky, int kx)
      : out_(out), in_(in), ky_(ky), kx_(kx), wpp_(words_for(in)),
        words_(static_cast<std::size_t>(out) * ky * kx * words_for(in), 0u) {
    if (out <= 0 || in <= 0 || ky <= 0 || kx <= 0) throw ShapeError("binary weights need positive extents");
  }

  int out_channels() const { return out_; }
  int in_channels() const { return in_; }
  int kernel_y() const { return ky_; }
  int kernel_x() const { return kx_; }
  int words_per_tap() const { return wpp_; }

  std::size_t tap_offset(int k, int dy, int dx) const {
    return ((static_cast<std::size_t>(k) * ky_ + dy) * kx_ + dx) * wpp_;
  }
  const std::uint32_t* tap(int k, int dy, int dx) const { return words_.data() + tap_offset(k, dy, dx); }

  bool bit(int k, int dy, int dx, int c) const {
    return (words_[tap_offset(k, dy, dx) + static_cast<std::size_t>(c / kWordBits)] >> (c % kWordBits)) & 1u;
  }
  void set_bit(int k, int dy, int dx, int c, bool on) {
    auto& w = words_[tap_offset(k, dy, dx) + static_cast<std::size_t>(c / kWordBits)];
    const std::uint32_t m = 1u << (c % kWordBits);
    w = on ? (w | m) : (w & ~m);
  }

  std::span<const std::uint32_t> words() const { return words_; }
  std::span<std::uint32_t> words() { return words_; }

  // Storage at one bit per weight, as it would be laid out on the device.
  std::size_t packed_bytes() const { return static_cast<std::size_t>(out_) * ky_ * kx_ * in_ / 8; }

  bool padding_clear() const {
    const int rem = in_ % kWordBits;
    if (rem == 0) return true;
    const std::uint32_t pad = ~((1u << rem) - 1u);
    for (std::size_t i = static_cast<std::size_t>(wpp_) - 1; i < words_.size(); i += static_cast<std::size_t>(wpp_))
      if (words_[i] & pad) return false;
    return true;
  }

  friend bool operator==(const PackedBinaryWeights&, const PackedBinaryWeights&) = default;

 private:
  int out_ = 0;
  int in_ = 0;
  int ky_ = 0;
  int kx_ = 0;
  int wpp_ = 0;
  std::vector<std::uint32_t> words_;
};

inline BinaryTensor pack(const SignTensor& dense) {
  BinaryTensor out(dense.height, dense.width, dense.channels);
  for (std::size_t i = 0; i < dense.data.size(); ++i) {
    const auto v = dense.data[i];
    if (v != 1 && v != -1) throw ValueError("pack: element " + std::to_string(v) + " is not -1 or +1", i);
  }
  for (int y = 0; y < dense.height; ++y)
    for (int x = 0; x < dense.width; ++x) {
      auto px = out.pixel(y, x);
      for (int c = 0; c < dense.channels; ++c)
        if (dense(y, x, c) == 1) px[static_cast<std::size_t>(c / kWordBits)] |= 1u << (c % kWordBits);
    }
  return out;
}

inline SignTensor unpack(const BinaryTensor& t) {
  SignTensor out(t.height(), t.width(), t.channels());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < t.channels(); ++c) out(y, x, c) = t.bit(y, x, c) ? 1 : -1;
  return out;
}

inline PackedBinaryWeights pack_weights(const Filters<std::int8_t>& dense) {
  PackedBinaryWeights out(dense.out_channels, dense.in_channels, dense.kernel_y, dense.kernel_x);
  for (std::size_t i = 0; i < dense.data.size(); ++i) {
    const auto v = dense.data[i];
    if (v != 1 && v != -1) throw ValueError("pack_weights: element " + std::to_string(v) + " is not -1 or +1", i);
  }
  for (int k = 0; k < dense.out_channels; ++k)
    for (int dy = 0; dy < dense.kernel_y; ++dy)
      for (int dx = 0; dx < dense.kernel_x; ++dx)
        for (int c = 0; c < dense.in_channels; ++c)
          if (dense(k, dy, dx, c) == 1) out.set_bit(k, dy, dx, c, true);
  return out;
}

inline Filters<std::int8_t> unpack_weights(const PackedBinaryWeights& w) {
  Filters<std::int8_t> out(w.out_channels(), w.kernel_y(), w.kernel_x(), w.in_channels());
  for (int k = 0; k < w.out_channels(); ++k)
    for (int dy = 0; dy < w.kernel_y(); ++dy)
      for (int dx = 0; dx < w.kernel_x(); ++dx)
        for (int c = 0; c < w.in_channels(); ++c) out(k, dy, dx, c) = w.bit(k, dy, dx, c) ? 1 : -1;
  return out;
}

// --- fixed-point quantization -------------------------------------------

inline std::int64_t signed_max(int bits) {
  return bits >= 64 ? std::numeric_limits<std::int64_t>::max() : (std::int64_t{1} << (bits - 1)) - 1;
}
inline std::int64_t signed_min(int bits) {
  return bits >= 64 ? std::numeric_limits<std::int64_t>::min() : -(std::int64_t{1} << (bits - 1));
}

inline std::int64_t saturate(std::int64_t v, int bits) {
  const auto lo = signed_min(bits);
  const auto hi = signed_max(bits);
  return v < lo ? lo : (v > hi ? hi : v);
}

// round(value * 2^f), ties away from zero, saturated to `bits`.
// Sets *saturated when clipping happened.
inline std::int64_t quantize_value(double value, int f, int bits, bool* saturated = nullptr) {
  if (std::isnan(value)) throw FormatError("quantize: NaN value");
  const double scaled = std::round(std::ldexp(value, f));
  // 2^(bits-1) is exact in double; the signed max is not for 64 bits.
  const double bound = std::ldexp(1.0, bits - 1);
  bool clip = false;
  std::int64_t q;
  if (scaled < -bound) {
    q = signed_min(bits);
    clip = true;
  } else if (scaled >= bound) {
    q = signed_max(bits);
    clip = true;
  } else {
    q = static_cast<std::int64_t>(scaled);
  }
  if (saturated) *saturated = clip;
  return q;
}

struct QuantizedTensor {
  FixedTensor tensor;
  std::size_t saturated = 0;
};

inline QuantizedTensor quantize_real(const RealTensor& values, int f, int bitwidth) {
  if (f < 0) throw std::invalid_argument("quantize_real: fractional bits must be >= 0");
  QuantizedTensor r{FixedTensor(values.height, values.width, values.channels, f, bitwidth), 0};
  for (std::size_t i = 0; i < values.data.size(); ++i) {
    bool clip = false;
    r.tensor.values.data[i] = static_cast<std::int32_t>(quantize_value(values.data[i], f, bitwidth, &clip));
    r.saturated += clip ? 1 : 0;
  }
  return r;
}

inline RealTensor to_real(const FixedTensor& t) {
  RealTensor out(t.height(), t.width(), t.channels());
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::ldexp(static_cast<double>(t.values.data[i]), -t.qformat);
  return out;
}

// ±1 activations as a Q0 fixed tensor.
inline FixedTensor to_fixed(const BinaryTensor& t) {
  FixedTensor out(t.height(), t.width(), t.channels(), 0, 16);
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < t.channels(); ++c) out(y, x, c) = t.bit(y, x, c) ? 1 : -1;
  return out;
}

}  // namespace binsed
