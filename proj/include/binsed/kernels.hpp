#pragma once

// Compute primitives of the inference path: fixed-point convolution,
// xor/popcount binary convolution, folded batch-norm thresholds, global
// average pooling and argmax. Everything here is integer arithmetic; results
// do not depend on the thread count.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/popcount.hpp"
#include "binsed/tensors.hpp"

namespace binsed {

// Per-output-channel binarization: bit = 1 iff polarity * x >= threshold.
// An input exactly on the threshold maps to +1.
struct BnFold {
  std::vector<std::int8_t> polarity;
  std::vector<std::int32_t> threshold;

  std::size_t size() const { return threshold.size(); }
  bool fires(std::size_t k, std::int64_t x) const {
    return static_cast<std::int64_t>(polarity[k]) * x >= static_cast<std::int64_t>(threshold[k]);
  }

  friend bool operator==(const BnFold&, const BnFold&) = default;
};

struct FixedConvParams {
  Filters<std::int32_t> weights;
  std::vector<std::int64_t> bias;  // Q(input_qformat + weight_qformat)
  int input_qformat = 0;
  int input_bitwidth = 16;
  bool binary_input = false;  // inputs are ±1 activations, |x| <= 1
  int weight_qformat = 0;
  int weight_bitwidth = 16;
  int output_shift = 0;
  int output_bitwidth = 16;
  int accumulator_bits = 32;

  int accumulator_qformat() const { return input_qformat + weight_qformat; }
  int output_qformat() const { return accumulator_qformat() - output_shift; }

  // Largest |accumulator| any input of `input_bitwidth` bits can produce on
  // output channel k, expressed as a check against the accumulator width.
  bool headroom_ok(int k) const {
    std::uint64_t sum_w = 0;
    const std::size_t per = static_cast<std::size_t>(weights.kernel_y) * weights.kernel_x * weights.in_channels;
    for (std::size_t i = 0; i < per; ++i)
      sum_w += static_cast<std::uint64_t>(std::llabs(weights.data[static_cast<std::size_t>(k) * per + i]));
    const std::uint64_t limit = static_cast<std::uint64_t>(signed_max(accumulator_bits));
    const std::uint64_t max_x = binary_input ? 1 : std::uint64_t{1} << (input_bitwidth - 1);
    const std::uint64_t b = static_cast<std::uint64_t>(std::llabs(bias[static_cast<std::size_t>(k)]));
    if (b > limit) return false;
    return sum_w <= (limit - b) / max_x;
  }

  void validate() const {
    const auto bits_ok = [](int b) { return b == 16 || b == 32; };
    if (!bits_ok(input_bitwidth) || !bits_ok(weight_bitwidth) || !bits_ok(output_bitwidth))
      throw ModelError("fixed conv: bitwidths must be 16 or 32");
    if (accumulator_bits != 32 && accumulator_bits != 64) throw ModelError("fixed conv: accumulator must be 32 or 64 bits");
    if (output_shift < 0 || output_shift > 62) throw ModelError("fixed conv: output shift out of range");
    if (bias.size() != static_cast<std::size_t>(weights.out_channels))
      throw ModelError("fixed conv: bias length differs from output channels");
    for (auto w : weights.data)
      if (w < signed_min(weight_bitwidth) || w > signed_max(weight_bitwidth))
        throw ModelError("fixed conv: weight exceeds its bitwidth");
    for (int k = 0; k < weights.out_channels; ++k)
      if (!headroom_ok(k))
        throw OverflowRiskError("fixed conv: worst-case accumulator of output channel " + std::to_string(k) +
                                " exceeds " + std::to_string(accumulator_bits) + " bits");
  }

  friend bool operator==(const FixedConvParams&, const FixedConvParams&) = default;
};

// Rounding arithmetic right shift: adds 2^(s-1) then shifts (floor).
constexpr std::int64_t rshift_round(std::int64_t v, int s) {
  return s == 0 ? v : ((v + (std::int64_t{1} << (s - 1))) >> s);
}

// Selects a column slab of a feature map in global image coordinates. The
// default processes the whole tensor. Tiled execution hands each kernel a
// slice of the input starting at `input_offset` and asks for global output
// columns [output_begin, output_end); border rules always refer to the full
// image of width `global_width`.
struct ColumnWindow {
  int input_offset = 0;
  int global_width = -1;
  int output_begin = 0;
  int output_end = -1;
};

namespace detail {

// Valid taps [begin, end) of a centred "same" window at output position `pos`;
// `first` is the input coordinate of tap `begin`.
struct TapRange {
  int begin;
  int end;
  int first;
};

inline TapRange tap_range(int pos, int stride, int kernel, int extent) {
  const int origin = pos * stride - (kernel - 1) / 2;
  const int b = std::max(0, -origin);
  const int e = std::min(kernel, extent - origin);
  return {b, e, origin + b};
}

struct ResolvedWindow {
  int offset;
  int global_width;
  int begin;
  int end;
};

inline ResolvedWindow resolve(const ColumnWindow& w, int local_width, int kernel_x, int stride) {
  ResolvedWindow r{w.input_offset, w.global_width < 0 ? local_width : w.global_width, w.output_begin, w.output_end};
  const int full_out = (r.global_width + stride - 1) / stride;
  if (r.end < 0) r.end = full_out;
  if (r.begin < 0 || r.begin > r.end || r.end > full_out) throw PlanError("column window outside the output");
  if (r.offset < 0 || r.offset + local_width > r.global_width) throw PlanError("input slab outside the image");
  for (int ox : {r.begin, r.end - 1}) {
    if (r.begin == r.end) break;
    const auto t = tap_range(ox, stride, kernel_x, r.global_width);
    if (t.first < r.offset || t.first + (t.end - t.begin) > r.offset + local_width)
      throw PlanError("column window needs input outside the provided slab");
  }
  return r;
}

inline void check_stride(int stride) {
  if (stride < 1) throw ShapeError("stride must be positive");
}

inline std::int64_t fixed_accumulate(const FixedTensor& in, const FixedConvParams& p, const TapRange& ty,
                                     const TapRange& tx, int local_x, int k) {
  const auto& w = p.weights;
  const int cin = w.in_channels;
  std::int64_t acc = p.bias[static_cast<std::size_t>(k)];
  for (int dy = ty.begin; dy < ty.end; ++dy) {
    const int iy = ty.first + (dy - ty.begin);
    for (int dx = tx.begin; dx < tx.end; ++dx) {
      const int ix = local_x + (dx - tx.begin);
      const std::int32_t* xi = &in.values.data[in.values.index(iy, ix, 0)];
      const std::int32_t* wi = &w.data[w.index(k, dy, dx, 0)];
      for (int c = 0; c < cin; ++c) acc += static_cast<std::int64_t>(xi[c]) * wi[c];
    }
  }
  return acc;
}

inline void check_fixed_input(const FixedTensor& in, const FixedConvParams& p) {
  if (in.channels() != p.weights.in_channels)
    throw ShapeError("conv2d_fixed: input has " + std::to_string(in.channels()) + " channels, weights expect " +
                     std::to_string(p.weights.in_channels));
  if (in.qformat != p.input_qformat)
    throw ShapeError("conv2d_fixed: input Q-format " + std::to_string(in.qformat) + " differs from expected " +
                     std::to_string(p.input_qformat));
  if (in.bitwidth > p.input_bitwidth) throw ShapeError("conv2d_fixed: input wider than the declared input bitwidth");
}

}  // namespace detail

// Zero-padded "same" convolution with a rounding rescale to the output
// Q-format. Output is ceil(H/stride) x ceil(W/stride) x out_channels.
inline FixedTensor conv2d_fixed(const FixedTensor& in, const FixedConvParams& p, int stride,
                                const ColumnWindow& window = {}, int threads = 1) {
  detail::check_stride(stride);
  detail::check_fixed_input(in, p);
  const auto win = detail::resolve(window, in.width(), p.weights.kernel_x, stride);
  const int out_h = (in.height() + stride - 1) / stride;
  const int out_w = win.end - win.begin;
  const int kout = p.weights.out_channels;
  FixedTensor out(out_h, out_w, kout, p.output_qformat(), p.output_bitwidth);

#pragma omp parallel for num_threads(threads) schedule(static)
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::tap_range(oy, stride, p.weights.kernel_y, in.height());
    for (int ox = win.begin; ox < win.end; ++ox) {
      const auto tx = detail::tap_range(ox, stride, p.weights.kernel_x, win.global_width);
      for (int k = 0; k < kout; ++k) {
        const auto acc = detail::fixed_accumulate(in, p, ty, tx, tx.first - win.offset, k);
        out(oy, ox - win.begin, k) =
            static_cast<std::int32_t>(saturate(rshift_round(acc, p.output_shift), p.output_bitwidth));
      }
    }
  }
  return out;
}

inline BinaryTensor binarize_sign(const FixedTensor& x, const BnFold& fold) {
  if (static_cast<std::size_t>(x.channels()) != fold.size())
    throw ShapeError("binarize_sign: channel count differs from fold size");
  BinaryTensor out(x.height(), x.width(), x.channels());
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx) {
      auto px = out.pixel(y, xx);
      for (int c = 0; c < x.channels(); ++c)
        if (fold.fires(static_cast<std::size_t>(c), x(y, xx, c))) px[static_cast<std::size_t>(c / kWordBits)] |= 1u << (c % kWordBits);
    }
  return out;
}

inline BinaryTensor threshold_activation(const AccTensor& acc, const BnFold& fold) {
  if (static_cast<std::size_t>(acc.channels) != fold.size())
    throw ShapeError("threshold_activation: channel count differs from fold size");
  BinaryTensor out(acc.height, acc.width, acc.channels);
  for (int y = 0; y < acc.height; ++y)
    for (int x = 0; x < acc.width; ++x) {
      auto px = out.pixel(y, x);
      for (int c = 0; c < acc.channels; ++c)
        if (fold.fires(static_cast<std::size_t>(c), acc(y, x, c))) px[static_cast<std::size_t>(c / kWordBits)] |= 1u << (c % kWordBits);
    }
  return out;
}

// First layer fused with its binarization: same result as
// binarize_sign(conv2d_fixed(...)) without materializing the fixed output.
inline BinaryTensor conv2d_fixed_binarize(const FixedTensor& in, const FixedConvParams& p, const BnFold& fold,
                                          int stride, const ColumnWindow& window = {}, int threads = 1) {
  detail::check_stride(stride);
  detail::check_fixed_input(in, p);
  if (fold.size() != static_cast<std::size_t>(p.weights.out_channels))
    throw ShapeError("conv2d_fixed_binarize: fold size differs from output channels");
  const auto win = detail::resolve(window, in.width(), p.weights.kernel_x, stride);
  const int out_h = (in.height() + stride - 1) / stride;
  const int kout = p.weights.out_channels;
  BinaryTensor out(out_h, win.end - win.begin, kout);

#pragma omp parallel for num_threads(threads) schedule(static)
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::tap_range(oy, stride, p.weights.kernel_y, in.height());
    for (int ox = win.begin; ox < win.end; ++ox) {
      const auto tx = detail::tap_range(ox, stride, p.weights.kernel_x, win.global_width);
      auto px = out.pixel(oy, ox - win.begin);
      for (int k = 0; k < kout; ++k) {
        const auto acc = detail::fixed_accumulate(in, p, ty, tx, tx.first - win.offset, k);
        const auto v = saturate(rshift_round(acc, p.output_shift), p.output_bitwidth);
        if (fold.fires(static_cast<std::size_t>(k), v)) px[static_cast<std::size_t>(k / kWordBits)] |= 1u << (k % kWordBits);
      }
    }
  }
  return out;
}

namespace detail {

inline void check_binary_input(const BinaryTensor& in, const PackedBinaryWeights& w) {
  if (in.channels() != w.in_channels())
    throw ShapeError("conv2d_binary: input has " + std::to_string(in.channels()) + " channels, weights expect " +
                     std::to_string(w.in_channels()));
}

// Exact ±1 dot products over the in-image taps of one output pixel, for
// every output channel; emit(k, acc) receives each result. Padding bits are
// zero on both operands, so they never reach the popcount; the n_valid * C
// term accounts for the channels actually present.
template <Popcount P, class Emit>
inline void binary_pixel(const BinaryTensor& in, const PackedBinaryWeights& w, const TapRange& ty,
                         const TapRange& tx, int local_x, Emit&& emit) {
  const int wpp = w.words_per_tap();
  const int run = (tx.end - tx.begin) * wpp;
  const int rows = ty.end - ty.begin;
  const std::size_t in_row = static_cast<std::size_t>(in.width()) * static_cast<std::size_t>(wpp);
  const std::size_t w_row = static_cast<std::size_t>(w.kernel_x()) * static_cast<std::size_t>(wpp);
  const std::size_t w_filter = static_cast<std::size_t>(w.kernel_y()) * w_row;
  const std::uint32_t* in_base = in.words().data() + in.pixel_offset(ty.first, local_x);
  const std::uint32_t* w_base = w.tap(0, ty.begin, tx.begin);
  const int base = rows * (tx.end - tx.begin) * in.channels();
  for (int k = 0; k < w.out_channels(); ++k) {
    const std::uint32_t* ip = in_base;
    const std::uint32_t* wp = w_base + static_cast<std::size_t>(k) * w_filter;
    int pc = 0;
    for (int r = 0; r < rows; ++r, ip += in_row, wp += w_row) pc += xor_popcount<P>(ip, wp, run);
    emit(k, base - 2 * pc);
  }
}

}  // namespace detail

// xor/popcount convolution. Border taps that fall outside the image are
// excluded, so the result equals the ±1 dot product over the valid receptive
// field.
template <Popcount P = Popcount::native>
AccTensor conv2d_binary(const BinaryTensor& in, const PackedBinaryWeights& w, int stride,
                        const ColumnWindow& window = {}, int threads = 1) {
  detail::check_stride(stride);
  detail::check_binary_input(in, w);
  const auto win = detail::resolve(window, in.width(), w.kernel_x(), stride);
  const int out_h = (in.height() + stride - 1) / stride;
  const int kout = w.out_channels();
  AccTensor out(out_h, win.end - win.begin, kout);

#pragma omp parallel for num_threads(threads) schedule(static)
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::tap_range(oy, stride, w.kernel_y(), in.height());
    for (int ox = win.begin; ox < win.end; ++ox) {
      const auto tx = detail::tap_range(ox, stride, w.kernel_x(), win.global_width);
      std::int32_t* o = &out(oy, ox - win.begin, 0);
      detail::binary_pixel<P>(in, w, ty, tx, tx.first - win.offset, [o](int k, std::int32_t acc) { o[k] = acc; });
    }
  }
  return out;
}

// A complete binary layer: conv2d_binary followed by threshold_activation,
// without the intermediate accumulator tensor.
template <Popcount P = Popcount::native>
BinaryTensor binary_conv_threshold(const BinaryTensor& in, const PackedBinaryWeights& w, const BnFold& fold,
                                   int stride, const ColumnWindow& window = {}, int threads = 1) {
  detail::check_stride(stride);
  detail::check_binary_input(in, w);
  if (fold.size() != static_cast<std::size_t>(w.out_channels()))
    throw ShapeError("binary_conv_threshold: fold size differs from output channels");
  const auto win = detail::resolve(window, in.width(), w.kernel_x(), stride);
  const int out_h = (in.height() + stride - 1) / stride;
  const int kout = w.out_channels();
  BinaryTensor out(out_h, win.end - win.begin, kout);

#pragma omp parallel for num_threads(threads) schedule(static)
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::tap_range(oy, stride, w.kernel_y(), in.height());
    for (int ox = win.begin; ox < win.end; ++ox) {
      const auto tx = detail::tap_range(ox, stride, w.kernel_x(), win.global_width);
      std::uint32_t* px = out.pixel(oy, ox - win.begin).data();
      const std::int8_t* pol = fold.polarity.data();
      const std::int32_t* thr = fold.threshold.data();
      std::uint32_t word = 0;
      detail::binary_pixel<P>(in, w, ty, tx, tx.first - win.offset, [&](int k, std::int32_t acc) {
        word |= static_cast<std::uint32_t>(static_cast<std::int64_t>(pol[k]) * acc >= thr[k]) << (k % kWordBits);
        if (k % kWordBits == kWordBits - 1 || k + 1 == kout) {
          px[k / kWordBits] = word;
          word = 0;
        }
      });
    }
  }
  return out;
}

// Class scores kept as exact sums; the mean is sum / count.
struct PoolResult {
  std::vector<std::int64_t> sums;
  std::int64_t count = 0;

  double mean(std::size_t k) const { return static_cast<double>(sums[k]) / static_cast<double>(count); }
  friend bool operator==(const PoolResult&, const PoolResult&) = default;
};

inline PoolResult global_avg_pool(const AccTensor& x) {
  PoolResult r{std::vector<std::int64_t>(static_cast<std::size_t>(x.channels), 0),
               static_cast<std::int64_t>(x.height) * x.width};
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx)
      for (int k = 0; k < x.channels; ++k) r.sums[static_cast<std::size_t>(k)] += x(y, xx, k);
  return r;
}

// Index of the largest score; the lowest index wins ties.
inline std::size_t predict(std::span<const std::int64_t> scores) {
  if (scores.empty()) throw std::invalid_argument("predict: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace binsed
