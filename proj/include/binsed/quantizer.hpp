#pragma once

// Float parameters -> deployable integer model: Q-format selection, batch-norm
// folding into integer thresholds, weight binarization, and seeded random
// models for testing without trained weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/frontend.hpp"
#include "binsed/kernels.hpp"
#include "binsed/model.hpp"
#include "binsed/qformat.hpp"
#include "binsed/random.hpp"

namespace binsed {

// Inclusive range of integers a layer can feed into its activation.
struct AccRange {
  std::int64_t lo;
  std::int64_t hi;
};

inline AccRange binary_acc_range(const LayerSpec& l) {
  const std::int64_t m = static_cast<std::int64_t>(l.kernel_y) * l.kernel_x * l.in_channels;
  return {-m, m};
}

inline AccRange saturation_range(int bits) { return {signed_min(bits), signed_max(bits)}; }

// The activation being folded: sgn(gamma * ((x - mean) / sigma) + beta) with
// sgn(0) = +1, evaluated in double precision.
inline bool bn_nonnegative(double gamma, double beta, double mean, double sigma, std::int64_t x) {
  return gamma * ((static_cast<double>(x) - mean) / sigma) + beta >= 0.0;
}

// Ranges up to this many integers are verified point by point.
inline constexpr std::int64_t kExhaustiveFoldLimit = std::int64_t{1} << 24;

// Folds per-channel batch norm into polarity/threshold pairs. The threshold
// is the exact boundary of the batch-norm sign over `range`: a closed-form
// candidate, corrected against the double-precision predicate (which is
// monotone in x) and then verified over the whole range. Ranges larger than
// kExhaustiveFoldLimit are verified at the boundary only.
inline BnFold fold_batchnorm(std::span<const double> gamma, std::span<const double> beta,
                             std::span<const double> mean, std::span<const double> sigma, AccRange range) {
  const std::size_t n = gamma.size();
  if (beta.size() != n || mean.size() != n || sigma.size() != n)
    throw FoldError("fold_batchnorm: parameter vectors differ in length");
  if (range.lo > range.hi) throw FoldError("fold_batchnorm: empty accumulator range");
  BnFold fold;
  fold.polarity.resize(n);
  fold.threshold.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double g = gamma[k], b = beta[k], m = mean[k], s = sigma[k];
    const std::string ch = "channel " + std::to_string(k);
    if (!std::isfinite(g) || !std::isfinite(b) || !std::isfinite(m) || !std::isfinite(s))
      throw FoldError("fold_batchnorm: non-finite parameter on " + ch);
    if (!(s > 0.0)) throw FoldError("fold_batchnorm: sigma must be positive on " + ch);
    if (g == 0.0) throw FoldError("fold_batchnorm: gamma == 0 makes " + ch + " constant; prune it before export");
    const auto pred = [&](std::int64_t x) { return bn_nonnegative(g, b, m, s, x); };
    const long double c = static_cast<long double>(m) - static_cast<long double>(b) * s / g;
    const auto clampd = [](long double v, std::int64_t lo, std::int64_t hi) {
      if (!(v > static_cast<long double>(lo))) return lo;
      if (!(v < static_cast<long double>(hi))) return hi;
      return static_cast<std::int64_t>(v);
    };
    std::int64_t t;
    if (g > 0.0) {
      // Smallest t in [lo, hi + 1] with pred(t); hi + 1 means never.
      t = clampd(std::ceil(c), range.lo, range.hi + 1);
      while (t > range.lo && pred(t - 1)) --t;
      while (t <= range.hi && !pred(t)) ++t;
      fold.polarity[k] = 1;
    } else {
      // Largest u in [lo - 1, hi] with pred(u); fires iff -x >= -u.
      std::int64_t u = clampd(std::floor(c), range.lo - 1, range.hi);
      while (u < range.hi && pred(u + 1)) ++u;
      while (u >= range.lo && !pred(u)) --u;
      t = -u;
      fold.polarity[k] = -1;
    }
    if (t < std::numeric_limits<std::int32_t>::min() || t > std::numeric_limits<std::int32_t>::max())
      throw FoldError("fold_batchnorm: threshold of " + ch + " does not fit 32 bits");
    fold.threshold[k] = static_cast<std::int32_t>(t);

    const auto agrees = [&](std::int64_t x) { return fold.fires(k, x) == pred(x); };
    if (range.hi - range.lo < kExhaustiveFoldLimit) {
      for (std::int64_t x = range.lo; x <= range.hi; ++x)
        if (!agrees(x)) throw FoldError("fold_batchnorm: verification failed on " + ch + " at x=" + std::to_string(x));
    } else {
      const std::int64_t edge = fold.polarity[k] > 0 ? t : -t;
      for (std::int64_t x : {range.lo, range.hi, edge - 1, edge, edge + 1})
        if (x >= range.lo && x <= range.hi && !agrees(x))
          throw FoldError("fold_batchnorm: boundary verification failed on " + ch);
    }
  }
  return fold;
}

// Batch norm applied to integers that represent real values x_int * 2^-f.
inline BnFold fold_batchnorm(const FloatBatchNorm& bn, AccRange range, int input_qformat = 0) {
  std::vector<double> mean(bn.mean.size()), sigma(bn.sigma.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = std::ldexp(bn.mean[i], input_qformat);
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::ldexp(bn.sigma[i], input_qformat);
  return fold_batchnorm(bn.gamma, bn.beta, mean, sigma, range);
}

// Sign binarization of trained weights, sign(0) = +1.
inline PackedBinaryWeights binarize_weights(const Filters<double>& w) {
  Filters<std::int8_t> s(w.out_channels, w.kernel_y, w.kernel_x, w.in_channels);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    if (std::isnan(w.data[i])) throw FormatError("binarize_weights: NaN weight at flat index " + std::to_string(i));
    s.data[i] = w.data[i] >= 0.0 ? 1 : -1;
  }
  return pack_weights(s);
}

struct QuantizeOptions {
  FrontendConfig frontend{};   // output_qformat is the first layer's input Q-format
  int weight_bitwidth = 16;
  int activation_bitwidth = 16;  // first-layer output, before binarization
  int first_accumulator_bits = 32;
  std::vector<RealTensor> calibration;  // first-layer inputs; synthetic when empty
  std::uint64_t calibration_seed = 0;
};

namespace detail {

inline RealTensor float_conv_same(const RealTensor& in, const Filters<double>& w, std::span<const double> bias,
                                  int stride) {
  const int oh = (in.height + stride - 1) / stride, ow = (in.width + stride - 1) / stride;
  RealTensor out(oh, ow, w.out_channels);
  const int py = (w.kernel_y - 1) / 2, px = (w.kernel_x - 1) / 2;
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int k = 0; k < w.out_channels; ++k) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(k)];
        for (int dy = 0; dy < w.kernel_y; ++dy) {
          const int iy = oy * stride - py + dy;
          if (iy < 0 || iy >= in.height) continue;
          for (int dx = 0; dx < w.kernel_x; ++dx) {
            const int ix = ox * stride - px + dx;
            if (ix < 0 || ix >= in.width) continue;
            for (int c = 0; c < w.in_channels; ++c) acc += in(iy, ix, c) * w(k, dy, dx, c);
          }
        }
        out(oy, ox, k) = acc;
      }
  return out;
}

// Quantizes fixed-point weights and bias at the largest Q-format that both
// covers 99.9% of the weights and keeps the worst-case accumulator inside the
// accumulator width.
inline FixedConvParams quantize_fixed_layer(const FloatLayer& l, int input_qformat, int input_bitwidth,
                                            bool binary_input, int weight_bitwidth, int accumulator_bits) {
  FixedConvParams p;
  p.input_qformat = input_qformat;
  p.input_bitwidth = input_bitwidth;
  p.binary_input = binary_input;
  p.weight_bitwidth = weight_bitwidth;
  p.accumulator_bits = accumulator_bits;
  p.weights = Filters<std::int32_t>(l.weights.out_channels, l.weights.kernel_y, l.weights.kernel_x,
                                    l.weights.in_channels);
  p.bias.assign(l.bias.size(), 0);
  for (int fw = choose_qformat(l.weights.data, weight_bitwidth);; --fw) {
    if (fw < kMinFractionalBits) throw ModelError("quantize: no weight Q-format keeps the accumulator in range");
    p.weight_qformat = fw;
    for (std::size_t i = 0; i < l.weights.data.size(); ++i)
      p.weights.data[i] = static_cast<std::int32_t>(quantize_value(l.weights.data[i], fw, weight_bitwidth));
    for (std::size_t i = 0; i < l.bias.size(); ++i)
      p.bias[i] = quantize_value(l.bias[i], input_qformat + fw, accumulator_bits);
    bool ok = true;
    for (int k = 0; k < p.weights.out_channels && ok; ++k) ok = p.headroom_ok(k);
    if (ok) break;
  }
  return p;
}

}  // namespace detail

// A few frontend patches of seeded noise at several levels, plus silence, as
// first-layer calibration inputs.
inline std::vector<RealTensor> synthetic_calibration(const FrontendConfig& cfg, std::uint64_t seed, int count = 2) {
  Frontend fe(cfg);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<RealTensor> out;
  const auto n = static_cast<std::size_t>(cfg.patch_samples());
  for (int i = 0; i < count; ++i) {
    std::vector<float> clip(n, 0.0f);
    const double level = std::pow(10.0, rng.uniform(-3.0, -0.5));
    // Second half left silent on every other clip.
    const std::size_t end = (i % 2 == 1) ? n / 2 : n;
    for (std::size_t s = 0; s < end; ++s) clip[s] = static_cast<float>(level * rng.uniform(-1.0, 1.0));
    auto q = fe.mel_spectrogram(clip).tensor;
    out.push_back(to_real(q));
  }
  return out;
}

// Float model -> integer model. The first layer's output Q-format is chosen
// by the 99.9% rule over its outputs on the calibration inputs.
inline Model quantize(const FloatModel& fm, const QuantizeOptions& opt = {}) {
  fm.validate();
  opt.frontend.validate();
  Model m;
  m.spec = fm.spec;
  m.frontend = opt.frontend;
  if (fm.spec.input_height != opt.frontend.mel_bins || fm.spec.input_width != opt.frontend.frames)
    throw ShapeError("quantize: network input differs from the frontend patch shape");
  const auto calibration =
      opt.calibration.empty() ? synthetic_calibration(opt.frontend, opt.calibration_seed) : opt.calibration;

  for (std::size_t i = 0; i < fm.layers.size(); ++i) {
    const auto& ls = fm.spec.layers[i];
    const auto& fl = fm.layers[i];
    LayerParams lp;
    if (ls.kind == LayerKind::fixed_conv) {
      auto p = detail::quantize_fixed_layer(fl, opt.frontend.output_qformat, opt.frontend.output_bitwidth, false,
                                            opt.weight_bitwidth, opt.first_accumulator_bits);
      p.output_bitwidth = opt.activation_bitwidth;
      // Real-valued outputs of the quantized weights on the calibration set.
      Filters<double> wq(p.weights.out_channels, p.weights.kernel_y, p.weights.kernel_x, p.weights.in_channels);
      for (std::size_t j = 0; j < wq.data.size(); ++j) wq.data[j] = std::ldexp(static_cast<double>(p.weights.data[j]), -p.weight_qformat);
      std::vector<double> bq(p.bias.size());
      for (std::size_t j = 0; j < bq.size(); ++j) bq[j] = std::ldexp(static_cast<double>(p.bias[j]), -p.accumulator_qformat());
      std::vector<double> outputs;
      for (const auto& x : calibration) {
        if (x.height != fm.spec.input_height || x.width != fm.spec.input_width || x.channels != ls.in_channels)
          throw ShapeError("quantize: calibration input shape differs from the network input");
        const auto y = detail::float_conv_same(x, wq, bq, ls.stride);
        outputs.insert(outputs.end(), y.data.begin(), y.data.end());
      }
      const int fo = std::min(choose_qformat(outputs, opt.activation_bitwidth), p.accumulator_qformat());
      p.output_shift = std::min(p.accumulator_qformat() - fo, 62);
      lp.fold = fold_batchnorm(*fl.bn, saturation_range(opt.activation_bitwidth), p.output_qformat());
      lp.weights = std::move(p);
    } else if (ls.kind == LayerKind::binary_conv) {
      lp.weights = binarize_weights(fl.weights);
      lp.fold = fold_batchnorm(*fl.bn, binary_acc_range(ls), 0);
    } else {
      auto p = detail::quantize_fixed_layer(fl, 0, 16, true, opt.weight_bitwidth, 32);
      p.output_bitwidth = 32;
      p.output_shift = 0;
      lp.weights = std::move(p);
    }
    m.layers.push_back(std::move(lp));
  }
  m.validate();
  return m;
}

// Seeded float model with plausible batch-norm statistics: the first layer's
// mean/sigma come from its actual outputs on the calibration patches, binary
// layers use the spread of a random ±1 dot product.
inline FloatModel gen_random_float_model(std::uint64_t seed, const NetworkSpec& spec = reference_network(),
                                         const std::vector<RealTensor>& calibration = {}) {
  propagate_shapes(spec);
  Rng rng(seed);
  FloatModel fm;
  fm.spec = spec;
  const auto random_gamma = [&] { return rng.uniform(0.5, 1.5) * (rng.coin(0.1) ? -1.0 : 1.0); };
  for (const auto& ls : spec.layers) {
    FloatLayer fl;
    fl.weights = Filters<double>(ls.out_channels, ls.kernel_y, ls.kernel_x, ls.in_channels);
    const auto n = static_cast<std::size_t>(ls.out_channels);
    if (ls.kind == LayerKind::fixed_conv) {
      for (auto& w : fl.weights.data) w = rng.normal(0.0, 0.3);
      fl.bias.resize(n);
      for (auto& b : fl.bias) b = rng.normal(0.0, 0.1);
      FloatBatchNorm bn;
      bn.mean.assign(n, 0.0);
      bn.sigma.assign(n, 1.0);
      if (!calibration.empty()) {
        std::vector<double> sum(n, 0.0), sq(n, 0.0);
        double count = 0;
        for (const auto& x : calibration) {
          const auto y = detail::float_conv_same(x, fl.weights, fl.bias, ls.stride);
          for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx)
              for (std::size_t k = 0; k < n; ++k) {
                const double v = y(yy, xx, static_cast<int>(k));
                sum[k] += v;
                sq[k] += v * v;
              }
          count += static_cast<double>(y.height) * y.width;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mu = sum[k] / count;
          const double var = std::max(sq[k] / count - mu * mu, 1e-6);
          bn.mean[k] = mu + rng.normal(0.0, 0.1) * std::sqrt(var);
          bn.sigma[k] = std::sqrt(var) * rng.uniform(0.8, 1.2);
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        bn.gamma.push_back(random_gamma());
        bn.beta.push_back(rng.normal(0.0, 0.2));
      }
      fl.bn = bn;
    } else if (ls.kind == LayerKind::binary_conv) {
      for (auto& w : fl.weights.data) w = rng.normal(0.0, 1.0);
      const double spread = std::sqrt(static_cast<double>(ls.kernel_y) * ls.kernel_x * ls.in_channels);
      FloatBatchNorm bn;
      for (std::size_t k = 0; k < n; ++k) {
        bn.gamma.push_back(random_gamma());
        bn.beta.push_back(rng.normal(0.0, 0.3));
        bn.mean.push_back(rng.normal(0.0, 0.1 * spread));
        bn.sigma.push_back(spread * rng.uniform(0.5, 1.5));
      }
      fl.bn = bn;
    } else {
      for (auto& w : fl.weights.data) w = rng.normal(0.0, 0.1);
      fl.bias.resize(n);
      for (auto& b : fl.bias) b = rng.normal(0.0, 0.05);
    }
    fm.layers.push_back(std::move(fl));
  }
  return fm;
}

// Frontend configuration whose patch matches the network input.
inline FrontendConfig frontend_for(const NetworkSpec& spec, FrontendConfig base = {}) {
  base.mel_bins = spec.input_height;
  base.frames = spec.input_width;
  return base;
}

// Deterministic per seed: same seed, same model, same bytes.
inline Model gen_random_model(std::uint64_t seed, const NetworkSpec& spec = reference_network()) {
  QuantizeOptions opt;
  opt.frontend = frontend_for(spec);
  opt.calibration = synthetic_calibration(opt.frontend, seed);
  const auto fm = gen_random_float_model(seed, spec, opt.calibration);
  return quantize(fm, opt);
}

}  // namespace binsed
