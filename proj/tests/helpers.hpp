#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "binsed/binsed.hpp"

namespace test {

using namespace binsed;

inline SignTensor random_signs(Rng& rng, int h, int w, int c) {
  SignTensor t(h, w, c);
  for (auto& v : t.data) v = static_cast<std::int8_t>(rng.sign());
  return t;
}

inline Filters<std::int8_t> random_sign_filters(Rng& rng, int k, int ky, int kx, int c) {
  Filters<std::int8_t> f(k, ky, kx, c);
  for (auto& v : f.data) v = static_cast<std::int8_t>(rng.sign());
  return f;
}

inline std::vector<float> noise(Rng& rng, std::size_t n, double level) {
  std::vector<float> a(n);
  for (auto& s : a) s = static_cast<float>(level * rng.uniform(-1.0, 1.0));
  return a;
}

// Network input drawn uniformly over the 16-bit range at the model's format;
// exercises saturation and thresholds better than realistic spectra.
inline FixedTensor random_input(Rng& rng, const Model& m, std::int32_t lo = -32768, std::int32_t hi = 32767) {
  FixedTensor t(m.spec.input_height, m.spec.input_width, m.spec.input_channels, m.input_qformat(),
                m.frontend.output_bitwidth);
  for (auto& v : t.values.data) v = lo + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(hi - lo) + 1));
  return t;
}

// Input produced by the frontend from seeded noise.
inline FixedTensor noise_input(std::uint64_t seed, const Model& m) {
  Rng rng(seed);
  const auto audio = noise(rng, static_cast<std::size_t>(m.frontend.patch_samples()), 0.05 + 0.3 * rng.uniform());
  return Frontend(m.frontend).mel_spectrogram(audio).tensor;
}

// A smaller network with the same layer pattern, for tests that need many
// models quickly.
inline NetworkSpec small_network(int h = 16, int w = 64) {
  NetworkSpec n;
  n.input_height = h;
  n.input_width = w;
  n.classes = 5;
  n.layers = {
      {LayerKind::fixed_conv, 3, 3, 1, 8, 1},      //
      {LayerKind::binary_conv, 3, 3, 8, 37, 2},    //
      {LayerKind::binary_conv, 3, 3, 37, 32, 1},   //
      {LayerKind::binary_conv, 3, 3, 32, 64, 2},   //
      {LayerKind::binary_conv, 3, 3, 64, 40, 1},   //
      {LayerKind::binary_conv, 1, 1, 40, 33, 1},   //
      {LayerKind::final_conv, 1, 1, 33, 5, 1},
  };
  return n;
}

inline Model small_model(std::uint64_t seed, const NetworkSpec& spec = small_network()) {
  QuantizeOptions q;
  q.frontend = frontend_for(spec);
  Rng rng(seed + 1000);
  // Calibrate on uniform inputs at the frontend's format.
  RealTensor cal(spec.input_height, spec.input_width, 1);
  for (auto& v : cal.data) v = std::ldexp(std::round(rng.uniform(-32768.0, 32767.0)), -q.frontend.output_qformat);
  q.calibration = {cal};
  return quantize(gen_random_float_model(seed, spec, q.calibration), q);
}

// Second scalar ±1 convolution, written independently of the oracle: it
// zero-pads a dense buffer, keeps a validity mask for the padding, and
// counts agreements (xnor) instead of summing products.
inline Tensor3<std::int64_t> agreement_conv(const SignTensor& in, const Filters<std::int8_t>& w, int stride) {
  const int ry = w.kernel_y / 2, rx = w.kernel_x / 2;
  const int ph = in.height + 2 * ry, pw = in.width + 2 * rx;
  std::vector<std::int8_t> buf(static_cast<std::size_t>(ph) * pw * in.channels, 0);
  std::vector<char> valid(static_cast<std::size_t>(ph) * pw, 0);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      valid[static_cast<std::size_t>(y + ry) * pw + (x + rx)] = 1;
      for (int c = 0; c < in.channels; ++c)
        buf[(static_cast<std::size_t>(y + ry) * pw + (x + rx)) * in.channels + c] = in(y, x, c);
    }
  const int oh = (in.height - 1) / stride + 1, ow = (in.width - 1) / stride + 1;
  Tensor3<std::int64_t> out(oh, ow, w.out_channels);
  for (int k = 0; k < w.out_channels; ++k)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::int64_t agree = 0, taps = 0;
        for (int dy = 0; dy < w.kernel_y; ++dy)
          for (int dx = 0; dx < w.kernel_x; ++dx) {
            const int py = oy * stride + dy, px = ox * stride + dx;
            if (!valid[static_cast<std::size_t>(py) * pw + px]) continue;
            ++taps;
            for (int c = 0; c < in.channels; ++c)
              agree += buf[(static_cast<std::size_t>(py) * pw + px) * in.channels + c] == w(k, dy, dx, c);
          }
        out(oy, ox, k) = 2 * agree - taps * in.channels;
      }
  return out;
}

// Band whose triangle is highest at `hz`, from the HTK formula written out
// here rather than taken from the library.
inline int expected_mel_band(double hz, int bands, double fmax) {
  const auto to_mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  const auto to_hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  const double top = to_mel(fmax);
  int best = -1;
  double best_w = -1;
  for (int j = 0; j < bands; ++j) {
    const double l = to_hz(top * j / (bands + 1)), c = to_hz(top * (j + 1) / (bands + 1)),
                 r = to_hz(top * (j + 2) / (bands + 1));
    double w = 0;
    if (hz > l && hz <= c) w = (hz - l) / (c - l);
    if (hz > c && hz < r) w = (r - hz) / (r - c);
    if (w > best_w) best_w = w, best = j;
  }
  return best;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("binsed_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace test
