#pragma once

// Per-layer timing of the inference pipeline. Times are medians over
// repetitions after one discarded warm-up run, measured with steady_clock.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "binsed/executor.hpp"
#include "binsed/frontend.hpp"
#include "binsed/kernels.hpp"
#include "binsed/model.hpp"
#include "binsed/oracle.hpp"

namespace binsed {

// Median wall time of fn in seconds.
inline double time_median(const std::function<void()>& fn, int repetitions, bool warmup = true) {
  using clock = std::chrono::steady_clock;
  if (warmup) fn();
  std::vector<double> t;
  for (int i = 0; i < std::max(1, repetitions); ++i) {
    const auto a = clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  const auto n = t.size();
  return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

struct BenchRow {
  std::string name;
  std::uint64_t macs = 0;  // executed (same-padded) work; 0 for the frontend
  double seconds = 0;

  double macs_per_second() const { return seconds > 0 ? static_cast<double>(macs) / seconds : 0.0; }
};

struct KernelComparison {
  std::string name;
  double fast_seconds = 0;
  double slow_seconds = 0;

  double speedup() const { return fast_seconds > 0 ? slow_seconds / fast_seconds : 0.0; }
};

struct BenchReport {
  int threads = 1;
  int repetitions = 1;
  Popcount popcount = Popcount::native;
  std::vector<BenchRow> rows;  // Mel bins, each network layer
  BenchRow merged_tail;        // last binary layer + classifier
  BenchRow total;
  std::vector<KernelComparison> packed_vs_naive;  // one per binary layer
  std::optional<KernelComparison> popcount_native_vs_portable;
};

struct BenchOptions {
  int repetitions = 5;
  int threads = 1;
  Popcount popcount = Popcount::native;
  bool compare_naive = true;
  bool compare_popcount = true;
};

namespace detail {

template <Popcount P>
void run_binary_stack(const Model& m, const BinaryTensor& first, int threads) {
  BinaryTensor act = first;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.spec.layers[i].kind == LayerKind::binary_conv)
      act = binary_conv_threshold<P>(act, m.layers[i].binary(), *m.layers[i].fold, m.spec.layers[i].stride, {},
                                     threads);
}

}  // namespace detail

// Times the frontend on `audio` and every layer on the activations the model
// actually produces for it.
inline BenchReport bench(const Model& m, std::span<const float> audio, const BenchOptions& opt = {}) {
  BenchReport r;
  r.threads = opt.threads;
  r.repetitions = opt.repetitions;
  r.popcount = opt.popcount;
  const auto macs = count_macs(m.spec);
  Frontend fe(m.frontend);

  FixedTensor input;
  const double t_mel = time_median([&] { input = fe.mel_spectrogram(audio, opt.threads).tensor; }, opt.repetitions);
  r.rows.push_back({"Mel bins", 0, t_mel});

  // Collect each layer's input once, then time layers in isolation.
  std::vector<BinaryTensor> acts;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& ls = m.spec.layers[i];
    const auto& lp = m.layers[i];
    double t = 0;
    if (ls.kind == LayerKind::fixed_conv) {
      BinaryTensor out;
      t = time_median([&] { out = conv2d_fixed_binarize(input, lp.fixed(), *lp.fold, ls.stride, {}, opt.threads); },
                      opt.repetitions);
      acts.push_back(std::move(out));
    } else if (ls.kind == LayerKind::binary_conv) {
      BinaryTensor out;
      const auto& in = acts.back();
      t = opt.popcount == Popcount::native
              ? time_median([&] { out = binary_conv_threshold<Popcount::native>(in, lp.binary(), *lp.fold, ls.stride, {}, opt.threads); },
                            opt.repetitions)
              : time_median([&] { out = binary_conv_threshold<Popcount::portable>(in, lp.binary(), *lp.fold, ls.stride, {}, opt.threads); },
                            opt.repetitions);
      if (opt.compare_naive) {
        const double fast = opt.popcount == Popcount::native
                                ? time_median([&] { (void)conv2d_binary<Popcount::native>(in, lp.binary(), ls.stride); }, opt.repetitions)
                                : time_median([&] { (void)conv2d_binary<Popcount::portable>(in, lp.binary(), ls.stride); }, opt.repetitions);
        const auto dense_in = unpack(in);
        const auto dense_w = oracle::dense_weights(lp.binary());
        const double slow = time_median([&] { (void)oracle::naive_binary_conv(dense_in, dense_w, ls.stride); }, 1, false);
        r.packed_vs_naive.push_back({layer_name(m.spec, i), fast, slow});
      }
      acts.push_back(std::move(out));
    } else {
      FixedTensor out;
      const auto& in = acts.back();
      t = time_median(
          [&] {
            out = conv2d_fixed(to_fixed(in), lp.fixed(), ls.stride, {}, opt.threads);
            (void)predict(global_avg_pool(out.values).sums);
          },
          opt.repetitions);
    }
    r.rows.push_back({layer_name(m.spec, i), macs.layers[i].same, t});
  }

  // The final binary layer and the classifier, reported together as well.
  const std::size_t n = r.rows.size();
  r.merged_tail = {"5./6. Layer", r.rows[n - 2].macs + r.rows[n - 1].macs, r.rows[n - 2].seconds + r.rows[n - 1].seconds};
  if (m.spec.layers.size() >= 2 && m.spec.layers[m.spec.layers.size() - 2].kind == LayerKind::binary_conv) {
    const int ordinal = static_cast<int>(std::count_if(m.spec.layers.begin(), m.spec.layers.end(),
                                                       [](const LayerSpec& l) { return l.kind == LayerKind::binary_conv; }));
    r.merged_tail.name = std::to_string(ordinal) + "./" + std::to_string(ordinal + 1) + ". Layer";
  }
  r.total.name = "Total";
  for (const auto& row : r.rows) {
    r.total.macs += row.macs;
    r.total.seconds += row.seconds;
  }

  if (opt.compare_popcount && !acts.empty()) {
    const auto& first = acts.front();
    KernelComparison c{"binary layers", 0, 0};
    c.fast_seconds = time_median([&] { detail::run_binary_stack<Popcount::native>(m, first, opt.threads); }, opt.repetitions);
    c.slow_seconds = time_median([&] { detail::run_binary_stack<Popcount::portable>(m, first, opt.threads); }, opt.repetitions);
    r.popcount_native_vs_portable = c;
  }
  return r;
}

}  // namespace binsed
