#pragma once

// Audio frontend: 16 kHz mono samples -> 64 x 400 fixed-point log-Mel patch.
//
// Framing is centre-aligned: frame t is the 512-sample Hann-windowed segment
// centred on sample t * hop, with reflect padding at both ends, so 3.2 s of
// audio gives exactly 400 frames.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/qformat.hpp"
#include "binsed/tensors.hpp"

namespace binsed {

struct FrontendConfig {
  int sample_rate = 16000;
  int window = 512;  // 32 ms
  int hop = 128;     // 8 ms
  int fft_size = 512;
  int mel_bins = 64;
  int frames = 400;  // 3.2 s
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  bool log_compress = true;
  int output_qformat = 10;
  int output_bitwidth = 16;

  int spectrum_bins() const { return fft_size / 2 + 1; }
  int patch_samples() const { return frames * hop; }

  void validate() const {
    if (sample_rate <= 0 || window <= 0 || hop <= 0 || frames <= 0 || mel_bins <= 0)
      throw FormatError("frontend: non-positive extent");
    if (fft_size < window || (fft_size & (fft_size - 1)) != 0)
      throw FormatError("frontend: fft_size must be a power of two >= window");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) throw FormatError("frontend: bad fmin/fmax");
    if (!(log_floor > 0.0)) throw FormatError("frontend: log_floor must be positive");
    if (output_bitwidth != 16 && output_bitwidth != 32) throw FormatError("frontend: output bitwidth must be 16 or 32");
    if (output_qformat < 0 || output_qformat > 30) throw FormatError("frontend: output Q-format out of range");
  }

  friend bool operator==(const FrontendConfig&, const FrontendConfig&) = default;
};

// HTK Mel scale.
inline double mel_scale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with edges equally spaced on the Mel scale between fmin
// and fmax, evaluated at the FFT bin frequencies; peak weight 1.
class MelFilterbank {
 public:
  explicit MelFilterbank(const FrontendConfig& cfg)
      : bands_(cfg.mel_bins), bins_(cfg.spectrum_bins()), weights_(static_cast<std::size_t>(bands_) * bins_, 0.0) {
    const double m_lo = mel_scale(cfg.fmin);
    const double m_hi = mel_scale(cfg.fmax);
    edges_hz_.resize(static_cast<std::size_t>(bands_) + 2);
    for (int i = 0; i < bands_ + 2; ++i) edges_hz_[static_cast<std::size_t>(i)] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (bands_ + 1));
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    for (int j = 0; j < bands_; ++j) {
      const double l = edges_hz_[static_cast<std::size_t>(j)];
      const double c = edges_hz_[static_cast<std::size_t>(j) + 1];
      const double r = edges_hz_[static_cast<std::size_t>(j) + 2];
      for (int k = 0; k < bins_; ++k) {
        const double f = k * bin_hz;
        double v = 0.0;
        if (f > l && f <= c)
          v = (f - l) / (c - l);
        else if (f > c && f < r)
          v = (r - f) / (r - c);
        weights_[static_cast<std::size_t>(j) * bins_ + k] = v;
      }
    }
  }

  int bands() const { return bands_; }
  int bins() const { return bins_; }
  double weight(int band, int bin) const { return weights_[static_cast<std::size_t>(band) * bins_ + bin]; }
  std::span<const double> row(int band) const {
    return {weights_.data() + static_cast<std::size_t>(band) * bins_, static_cast<std::size_t>(bins_)};
  }
  double center_hz(int band) const { return edges_hz_[static_cast<std::size_t>(band) + 1]; }
  double left_hz(int band) const { return edges_hz_[static_cast<std::size_t>(band)]; }
  double right_hz(int band) const { return edges_hz_[static_cast<std::size_t>(band) + 2]; }

 private:
  int bands_;
  int bins_;
  std::vector<double> weights_;
  std::vector<double> edges_hz_;
};

// In-place iterative radix-2 FFT of a fixed power-of-two size.
class Fft {
 public:
  explicit Fft(int n) : n_(n), twiddle_(static_cast<std::size_t>(n / 2)), rev_(static_cast<std::size_t>(n)) {
    if (n < 2 || (n & (n - 1)) != 0) throw std::invalid_argument("Fft: size must be a power of two");
    for (int k = 0; k < n / 2; ++k)
      twiddle_[static_cast<std::size_t>(k)] = std::polar(1.0, -2.0 * std::numbers::pi * k / n);
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < bits; ++b)
        if (i & (1 << b)) r |= 1 << (bits - 1 - b);
      rev_[static_cast<std::size_t>(i)] = r;
    }
  }

  int size() const { return n_; }

  void transform(std::span<std::complex<double>> x) const {
    if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("Fft: buffer size mismatch");
    for (int i = 0; i < n_; ++i) {
      const int r = rev_[static_cast<std::size_t>(i)];
      if (i < r) std::swap(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(r)]);
    }
    for (int len = 2; len <= n_; len <<= 1) {
      const int half = len / 2;
      const int step = n_ / len;
      for (int start = 0; start < n_; start += len)
        for (int j = 0; j < half; ++j) {
          const auto t = twiddle_[static_cast<std::size_t>(j * step)] * x[static_cast<std::size_t>(start + j + half)];
          const auto u = x[static_cast<std::size_t>(start + j)];
          x[static_cast<std::size_t>(start + j)] = u + t;
          x[static_cast<std::size_t>(start + j + half)] = u - t;
        }
    }
  }

 private:
  int n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<int> rev_;
};

// Row-major [bins][frames] real matrix.
struct Spectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<double> values;

  double& operator()(int k, int t) { return values[static_cast<std::size_t>(k) * frames + t]; }
  double operator()(int k, int t) const { return values[static_cast<std::size_t>(k) * frames + t]; }
};

class Frontend {
 public:
  explicit Frontend(FrontendConfig cfg = {})
      : cfg_((cfg.validate(), cfg)), fb_(cfg_), fft_(cfg_.fft_size), window_(static_cast<std::size_t>(cfg_.window)) {
    // Periodic Hann.
    for (int n = 0; n < cfg_.window; ++n)
      window_[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg_.window);
  }

  const FrontendConfig& config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return fb_; }
  std::span<const double> window() const { return window_; }

  // Windowed samples of frame t, after zero padding to the patch length and
  // reflect padding by window/2 at both ends.
  std::vector<double> frame(std::span<const float> audio, int t) const {
    const auto n = static_cast<long>(cfg_.patch_samples());
    check_length(audio);
    const long half = cfg_.window / 2;
    std::vector<double> out(static_cast<std::size_t>(cfg_.window));
    for (int i = 0; i < cfg_.window; ++i) {
      long src = static_cast<long>(t) * cfg_.hop - half + i;
      if (src < 0) src = -src;
      if (src >= n) src = 2 * (n - 1) - src;
      const double s = src < static_cast<long>(audio.size()) ? static_cast<double>(audio[static_cast<std::size_t>(src)]) : 0.0;
      out[static_cast<std::size_t>(i)] = s * window_[static_cast<std::size_t>(i)];
    }
    return out;
  }

  // One-sided power |X[k]|^2 for k = 0..fft_size/2, all frames.
  Spectrogram stft_power(std::span<const float> audio, int threads = 1) const {
    check_length(audio);
    Spectrogram s{cfg_.spectrum_bins(), cfg_.frames, {}};
    s.values.assign(static_cast<std::size_t>(s.bins) * s.frames, 0.0);
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int t = 0; t < cfg_.frames; ++t) {
      const auto seg = frame(audio, t);
      std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg_.fft_size));
      for (std::size_t i = 0; i < seg.size(); ++i) buf[i] = seg[i];
      fft_.transform(buf);
      for (int k = 0; k < s.bins; ++k) s(k, t) = std::norm(buf[static_cast<std::size_t>(k)]);
    }
    return s;
  }

  // Filterbank energies, log-compressed when configured, before quantization.
  RealTensor mel_features(std::span<const float> audio, int threads = 1) const {
    const auto p = stft_power(audio, threads);
    RealTensor out(cfg_.mel_bins, cfg_.frames, 1);
    for (int j = 0; j < cfg_.mel_bins; ++j) {
      const auto row = fb_.row(j);
      for (int t = 0; t < cfg_.frames; ++t) {
        double e = 0.0;
        for (int k = 0; k < p.bins; ++k) e += row[static_cast<std::size_t>(k)] * p(k, t);
        out(j, t, 0) = cfg_.log_compress ? std::log(std::max(e, cfg_.log_floor)) : e;
      }
    }
    return out;
  }

  // 64 (mel) x 400 (time) x 1 patch at the configured output format.
  QuantizedTensor mel_spectrogram(std::span<const float> audio, int threads = 1) const {
    return quantize_real(mel_features(audio, threads), cfg_.output_qformat, cfg_.output_bitwidth);
  }

 private:
  void check_length(std::span<const float> audio) const {
    if (audio.size() > static_cast<std::size_t>(cfg_.patch_samples()))
      throw FormatError("frontend: " + std::to_string(audio.size()) + " samples exceed one " +
                        std::to_string(cfg_.patch_samples()) + "-sample patch");
  }

  FrontendConfig cfg_;
  MelFilterbank fb_;
  Fft fft_;
  std::vector<double> window_;
};

inline Spectrogram stft_power(std::span<const float> audio, const FrontendConfig& cfg = {}) {
  return Frontend(cfg).stft_power(audio);
}

inline FixedTensor mel_spectrogram(std::span<const float> audio, const FrontendConfig& cfg = {}) {
  return Frontend(cfg).mel_spectrogram(audio).tensor;
}

// Picks the output Q-format over a calibration set of clips.
inline int calibrate_output_qformat(const FrontendConfig& cfg, std::span<const std::vector<float>> clips) {
  Frontend fe(cfg);
  std::vector<double> all;
  for (const auto& c : clips) {
    const auto m = fe.mel_features(c);
    all.insert(all.end(), m.data.begin(), m.data.end());
  }
  return choose_qformat(all, 16);
}

}  // namespace binsed
