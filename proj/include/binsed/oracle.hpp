#pragma once

// Slow reference implementations used as ground truth. Nothing here calls
// the fast kernels: dense ±1 integers, plain loops, explicit borders. Only
// the storage containers and the model's stored parameters are shared.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "binsed/model.hpp"
#include "binsed/tensors.hpp"

namespace binsed::oracle {

using LongTensor = Tensor3<std::int64_t>;

// Textbook ±1 convolution, output ceil(H/s) x ceil(W/s); taps outside the
// image contribute nothing.
inline LongTensor naive_binary_conv(const SignTensor& in, const Filters<std::int8_t>& w, int stride) {
  const int oh = (in.height + stride - 1) / stride;
  const int ow = (in.width + stride - 1) / stride;
  LongTensor out(oh, ow, w.out_channels);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int k = 0; k < w.out_channels; ++k) {
        std::int64_t s = 0;
        for (int dy = 0; dy < w.kernel_y; ++dy)
          for (int dx = 0; dx < w.kernel_x; ++dx) {
            const int y = oy * stride + dy - w.kernel_y / 2;
            const int x = ox * stride + dx - w.kernel_x / 2;
            if (y < 0 || x < 0 || y >= in.height || x >= in.width) continue;
            for (int c = 0; c < w.in_channels; ++c) s += in(y, x, c) * w(k, dy, dx, c);
          }
        out(oy, ox, k) = s;
      }
  return out;
}

// Round half up of acc / 2^shift, by integer floor division.
inline std::int64_t round_shift(std::int64_t acc, int shift) {
  if (shift == 0) return acc;
  const std::int64_t d = std::int64_t{1} << shift;
  const std::int64_t n = acc + d / 2;
  std::int64_t q = n / d;
  if ((n % d != 0) && (n < 0)) --q;
  return q;
}

inline std::int64_t clip_bits(std::int64_t v, int bits) {
  const std::int64_t hi = bits >= 64 ? INT64_MAX : (std::int64_t{1} << (bits - 1)) - 1;
  const std::int64_t lo = -hi - 1;
  return v < lo ? lo : (v > hi ? hi : v);
}

// Same-padded fixed-point convolution with bias, rounding shift and
// saturation.
inline LongTensor naive_fixed_conv(const LongTensor& in, const Filters<std::int32_t>& w,
                                   std::span<const std::int64_t> bias, int stride, int shift, int out_bits) {
  const int oh = (in.height + stride - 1) / stride;
  const int ow = (in.width + stride - 1) / stride;
  LongTensor out(oh, ow, w.out_channels);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int k = 0; k < w.out_channels; ++k) {
        std::int64_t s = bias[static_cast<std::size_t>(k)];
        for (int dy = 0; dy < w.kernel_y; ++dy)
          for (int dx = 0; dx < w.kernel_x; ++dx) {
            const int y = oy * stride + dy - w.kernel_y / 2;
            const int x = ox * stride + dx - w.kernel_x / 2;
            if (y < 0 || x < 0 || y >= in.height || x >= in.width) continue;
            for (int c = 0; c < w.in_channels; ++c) s += in(y, x, c) * static_cast<std::int64_t>(w(k, dy, dx, c));
          }
        out(oy, ox, k) = clip_bits(round_shift(s, shift), out_bits);
      }
  return out;
}

// Batch norm followed by sign, sgn(0) = +1.
inline int bn_sign(double gamma, double beta, double mean, double sigma, double x) {
  return gamma * ((x - mean) / sigma) + beta >= 0.0 ? 1 : -1;
}

inline Filters<std::int8_t> dense_weights(const PackedBinaryWeights& w) {
  Filters<std::int8_t> d(w.out_channels(), w.kernel_y(), w.kernel_x(), w.in_channels());
  for (int k = 0; k < d.out_channels; ++k)
    for (int dy = 0; dy < d.kernel_y; ++dy)
      for (int dx = 0; dx < d.kernel_x; ++dx)
        for (int c = 0; c < d.in_channels; ++c) d(k, dy, dx, c) = w.bit(k, dy, dx, c) ? 1 : -1;
  return d;
}

inline SignTensor threshold(const LongTensor& acc, const BnFold& f) {
  SignTensor s(acc.height, acc.width, acc.channels);
  for (int y = 0; y < acc.height; ++y)
    for (int x = 0; x < acc.width; ++x)
      for (int k = 0; k < acc.channels; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        s(y, x, k) = f.polarity[kk] * acc(y, x, k) >= f.threshold[kk] ? 1 : -1;
      }
  return s;
}

struct IntegerResult {
  LongTensor final_map;
  std::vector<std::int64_t> sums;
};

// Whole integer network on dense tensors.
inline IntegerResult naive_integer_inference(const Model& m, const FixedTensor& input) {
  LongTensor x(input.height(), input.width(), input.channels());
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = input.values.data[i];
  SignTensor act;
  IntegerResult r;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& ls = m.spec.layers[i];
    const auto& lp = m.layers[i];
    if (ls.kind == LayerKind::fixed_conv) {
      const auto& p = lp.fixed();
      act = threshold(naive_fixed_conv(x, p.weights, p.bias, ls.stride, p.output_shift, p.output_bitwidth), *lp.fold);
    } else if (ls.kind == LayerKind::binary_conv) {
      act = threshold(naive_binary_conv(act, dense_weights(lp.binary()), ls.stride), *lp.fold);
    } else {
      const auto& p = lp.fixed();
      LongTensor in(act.height, act.width, act.channels);
      for (std::size_t j = 0; j < in.data.size(); ++j) in.data[j] = act.data[j];
      r.final_map = naive_fixed_conv(in, p.weights, p.bias, ls.stride, p.output_shift, p.output_bitwidth);
    }
  }
  r.sums.assign(static_cast<std::size_t>(r.final_map.channels), 0);
  for (int y = 0; y < r.final_map.height; ++y)
    for (int xx = 0; xx < r.final_map.width; ++xx)
      for (int k = 0; k < r.final_map.channels; ++k) r.sums[static_cast<std::size_t>(k)] += r.final_map(y, xx, k);
  return r;
}

// ---- float network ----

inline RealTensor float_conv(const RealTensor& in, const Filters<double>& w, std::span<const double> bias,
                             int stride) {
  const int oh = (in.height + stride - 1) / stride;
  const int ow = (in.width + stride - 1) / stride;
  RealTensor out(oh, ow, w.out_channels);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int k = 0; k < w.out_channels; ++k) {
        double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(k)];
        for (int dy = 0; dy < w.kernel_y; ++dy)
          for (int dx = 0; dx < w.kernel_x; ++dx) {
            const int y = oy * stride + dy - w.kernel_y / 2;
            const int x = ox * stride + dx - w.kernel_x / 2;
            if (y < 0 || x < 0 || y >= in.height || x >= in.width) continue;
            for (int c = 0; c < w.in_channels; ++c) s += in(y, x, c) * w(k, dy, dx, c);
          }
        out(oy, ox, k) = s;
      }
  return out;
}

// Float convolutions, float batch norm, sign to ±1, float average pool.
// Binary layers use sign(weight) with sign(0) = +1.
inline std::vector<double> float_reference_inference(const FloatModel& fm, const RealTensor& mel) {
  RealTensor x = mel;
  std::vector<double> scores;
  for (std::size_t i = 0; i < fm.layers.size(); ++i) {
    const auto& ls = fm.spec.layers[i];
    const auto& l = fm.layers[i];
    Filters<double> w = l.weights;
    if (ls.kind == LayerKind::binary_conv)
      for (auto& v : w.data) v = v >= 0.0 ? 1.0 : -1.0;
    auto y = float_conv(x, w, l.bias, ls.stride);
    if (l.bn) {
      for (int yy = 0; yy < y.height; ++yy)
        for (int xx = 0; xx < y.width; ++xx)
          for (int k = 0; k < y.channels; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            y(yy, xx, k) = bn_sign(l.bn->gamma[kk], l.bn->beta[kk], l.bn->mean[kk], l.bn->sigma[kk], y(yy, xx, k));
          }
      x = std::move(y);
    } else {
      scores.assign(static_cast<std::size_t>(y.channels), 0.0);
      for (int yy = 0; yy < y.height; ++yy)
        for (int xx = 0; xx < y.width; ++xx)
          for (int k = 0; k < y.channels; ++k) scores[static_cast<std::size_t>(k)] += y(yy, xx, k);
      for (auto& s : scores) s /= static_cast<double>(y.height) * y.width;
    }
  }
  return scores;
}

// ---- spectra ----

// Definition-based DFT of a complex sequence.
inline std::vector<std::complex<double>> direct_dft(std::span<const std::complex<double>> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays small and accurate.
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      s += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = s;
  }
  return out;
}

// Non-negative frequency bins 0..N/2 of a real frame.
inline std::vector<std::complex<double>> direct_dft(std::span<const double> frame) {
  std::vector<std::complex<double>> c(frame.begin(), frame.end());
  auto full = direct_dft(std::span<const std::complex<double>>(c));
  full.resize(frame.size() / 2 + 1);
  return full;
}

}  // namespace binsed::oracle
