// Acceptance checks. One PASS/FAIL line per criterion; every tolerance and
// case count is a named constant below. `acceptance --criterion N` runs one,
// no argument runs all. Exit status is 0 only if every selected check passes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "binsed/bench.hpp"
#include "binsed/binsed.hpp"
#include "binsed/oracle.hpp"
#include "helpers.hpp"

using namespace binsed;

namespace {

// Criterion 1
constexpr int kConvCases = 10000;
constexpr double kConvSeconds = 120;
// Criterion 2
constexpr int kFoldSetsPerShape = 1000;
constexpr double kFoldSeconds = 60;
// Criterion 3
constexpr int kTilingModels = 25;
constexpr int kTilingInputsPerModel = 4;
constexpr int kTilingTiles = 4;
constexpr int kReferenceHalo = 20;
constexpr double kTilingSeconds = 120;
// Criterion 4, in KiB
constexpr double kWeightKiBLo = 57, kWeightKiBHi = 60;
constexpr double kBudgetKiB = 512;
constexpr double kFixed16WeightsKiB = 815;
constexpr double kApproxRel = 0.10;  // what "≈" is taken to mean
// Criterion 5
constexpr double kMacRel = 0.10;
constexpr double kPublishedTotalM = 884, kPublishedFirstM = 7;
// Criterion 6
constexpr int kFftFrames = 1000;
constexpr double kFftRel = 1e-6;  // relative to the frame's largest DFT magnitude
constexpr int kToneBin = 32;
constexpr int kPatchFrames = 400;
// Criterion 7
constexpr double kPackedSpeedup = 10;
constexpr int kThreadsMany = 8;
constexpr double kPopcountSlack = 1.05;  // native may be at most 5% slower (timer noise)
constexpr int kBenchReps = 5;
// Criterion 8
constexpr int kOracleModels = 3;
constexpr int kSurrogateSeeds = 3;
constexpr double kSurrogateRel = 1e-4;
constexpr int kAgreementSeeds = 20;

struct Check {
  std::string what;
  bool ok;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool report(int n, const std::string& title, const std::vector<Check>& checks) {
  bool all = true;
  for (const auto& c : checks) {
    std::printf("  [%s] %s\n", c.ok ? "ok" : "FAIL", c.what.c_str());
    all = all && c.ok;
  }
  std::printf("criterion %d: %s  %s\n", n, all ? "PASS" : "FAIL", title.c_str());
  std::fflush(stdout);
  return all;
}

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

AccTensor narrow(const oracle::LongTensor& t) {
  AccTensor a(t.height, t.width, t.channels);
  for (std::size_t i = 0; i < t.data.size(); ++i) a.data[i] = static_cast<std::int32_t>(t.data[i]);
  return a;
}

bool criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  const int channels[] = {32, 64, 96, 128, 37};
  int cases = 0, mismatches = 0;
  for (; cases < kConvCases; ++cases) {
    const int c = channels[rng.below(5)];
    const int h = rng.range(1, 16), w = rng.range(1, 32);
    const int k = rng.range(1, 8), stride = rng.range(1, 2), ks = rng.coin(0.75) ? 3 : 1;
    const auto in = test::random_signs(rng, h, w, c);
    const auto f = test::random_sign_filters(rng, k, ks, ks, c);
    const auto expect = narrow(oracle::naive_binary_conv(in, f, stride));
    const auto pin = pack(in);
    const auto pw = pack_weights(f);
    const bool same = (cases % 2 ? conv2d_binary<Popcount::portable>(pin, pw, stride)
                                 : conv2d_binary<Popcount::native>(pin, pw, stride)) == expect;
    mismatches += !same;
  }
  const double s = seconds_since(t0);
  return report(1, "packed binary convolution equals the naive oracle",
                {{fmt("%d randomized cases (>= %d)", cases, kConvCases), cases >= kConvCases},
                 {fmt("%d mismatches (tolerance 0)", mismatches), mismatches == 0},
                 {fmt("runtime %.1f s (< %.0f s)", s, kConvSeconds), s < kConvSeconds}});
}

// One random batch-norm parameter set scaled to an accumulator range.
FloatBatchNorm random_bn(Rng& rng, double m) {
  const double g = std::pow(10.0, rng.uniform(-2, 1)) * rng.sign();
  double mu = rng.uniform(-1.2, 1.2) * m;
  if (rng.coin(0.2)) mu = std::round(mu);  // boundaries on the integer grid
  const double sigma = std::pow(10.0, rng.uniform(-1, 1)) * std::sqrt(m);
  const double beta = rng.coin(0.2) ? 0.0 : rng.normal(0.0, 1.0);
  return {{g}, {beta}, {mu}, {sigma}};
}

bool criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2002);
  struct Shape {
    std::string name;
    AccRange range;
    bool fixed;
  };
  std::vector<Shape> shapes;
  const auto net = reference_network();
  shapes.push_back({layer_name(net, 0) + " (16-bit output)", saturation_range(16), true});
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind != LayerKind::binary_conv) continue;
    const auto r = binary_acc_range(net.layers[i]);
    // B3 and B4 have the same shape.
    if (std::any_of(shapes.begin(), shapes.end(), [&](const Shape& s) { return s.range.lo == r.lo && !s.fixed; }))
      continue;
    shapes.push_back({layer_name(net, i), r, false});
  }

  std::vector<Check> checks;
  for (const auto& s : shapes) {
    const auto width = static_cast<int>(s.range.hi - s.range.lo + 1);
    AccTensor acc(1, width, 1);
    for (int x = 0; x < width; ++x) acc(0, x, 0) = static_cast<std::int32_t>(s.range.lo + x);
    long long disagreements = 0, points = 0;
    int sets = 0;
    for (; sets < kFoldSetsPerShape; ++sets) {
      const int fq = s.fixed ? rng.range(0, 15) : 0;
      const double scale = std::ldexp(1.0, -fq);
      auto bn = random_bn(rng, static_cast<double>(s.range.hi) * scale);
      const auto fold = fold_batchnorm(bn, s.range, fq);
      const auto bits = threshold_activation(acc, fold);
      for (int x = 0; x < width; ++x) {
        const double real = static_cast<double>(acc(0, x, 0)) * scale;
        const bool want = oracle::bn_sign(bn.gamma[0], bn.beta[0], bn.mean[0], bn.sigma[0], real) > 0;
        disagreements += bits.bit(0, x, 0) != want;
        ++points;
      }
    }
    checks.push_back({fmt("%s: %d sets over [%lld, %lld], %lld points, %lld disagreements", s.name.c_str(), sets,
                          static_cast<long long>(s.range.lo), static_cast<long long>(s.range.hi), points,
                          disagreements),
                      sets >= kFoldSetsPerShape && disagreements == 0});
  }
  const double t = seconds_since(t0);
  checks.push_back({fmt("runtime %.1f s (< %.0f s)", t, kFoldSeconds), t < kFoldSeconds});
  return report(2, "folded thresholds equal the float batch-norm sign", checks);
}

bool criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto net = reference_network();
  const int halo = receptive_halo(net);
  const auto plan = make_tile_plan(net, kTilingTiles);
  int pairs = 0, mismatches = 0;
  Rng rng(3003);
  for (int i = 0; i < kTilingModels; ++i) {
    const auto m = gen_random_model(static_cast<std::uint64_t>(3000 + i));
    for (int j = 0; j < kTilingInputsPerModel; ++j) {
      // Half realistic spectra, half uniform over the whole 16-bit range.
      const auto in = j % 2 ? test::random_input(rng, m) : test::noise_input(rng.next(), m);
      mismatches += !(run_tiled(m, in, plan) == run_monolithic(m, in));
      ++pairs;
    }
  }
  const double t = seconds_since(t0);
  bool small_halo_refused = false;
  try {
    (void)make_tile_plan(net, kTilingTiles, halo - 2);
  } catch (const PlanError&) {
    small_halo_refused = true;
  }
  return report(3, "tiled execution equals monolithic execution",
                {{fmt("derived halo %d (expected %d)", halo, kReferenceHalo), halo == kReferenceHalo},
                 {fmt("%d model/input pairs with %d tiles (>= 100)", pairs, kTilingTiles), pairs >= 100},
                 {fmt("%d mismatches (tolerance 0)", mismatches), mismatches == 0},
                 {fmt("halo %d is refused", halo - 2), small_halo_refused},
                 {fmt("runtime %.1f s (< %.0f s)", t, kTilingSeconds), t < kTilingSeconds}});
}

bool criterion_4() {
  const auto net = reference_network();
  const auto b = footprint(net);
  const auto f = footprint(net, {}, nullptr, WeightVariant::fixed16);
  const auto kib = [](std::size_t v) { return static_cast<double>(v) / 1024.0; };
  const double w = kib(b.weight_storage), total = kib(b.total), fw = kib(f.weights);
  std::printf("  binary: weights %zu B, thresholds %zu B, polarity %zu B, biases %zu B\n", b.weights, b.thresholds,
              b.polarity, b.biases);
  std::printf("  binary: activation peak %zu B, weight staging %zu B\n", b.activation_peak, b.weight_staging);
  std::printf("  fixed16: weights %zu B, storage %zu B, total %zu B\n", f.weights, f.weight_storage, f.total);
  return report(4, "memory footprint of the reference network",
                {{fmt("binary weight storage %.1f KiB in [%.0f, %.0f]", w, kWeightKiBLo, kWeightKiBHi),
                  w >= kWeightKiBLo && w <= kWeightKiBHi},
                 {fmt("binary total %.1f KiB below %.0f KiB", total, kBudgetKiB), total < kBudgetKiB && b.fits_l2},
                 {fmt("16-bit weights %.1f KiB within %.0f%% of %.0f", fw, kApproxRel * 100, kFixed16WeightsKiB),
                  std::fabs(fw - kFixed16WeightsKiB) <= kApproxRel * kFixed16WeightsKiB},
                 {fmt("16-bit total %.1f KiB exceeds the budget", kib(f.total)), !f.fits_l2}});
}

bool criterion_5() {
  const auto r = count_macs(reference_network());
  for (const auto& l : r.layers)
    std::printf("  %-12s same %11llu  valid %11llu  published %4.0fM  delta(valid) %+6.2fM\n", l.name.c_str(),
                static_cast<unsigned long long>(l.same), static_cast<unsigned long long>(l.valid), *l.published_m,
                static_cast<double>(l.valid) / 1e6 - *l.published_m);
  const double total = static_cast<double>(r.total_valid) / 1e6, first = static_cast<double>(r.layers[0].valid) / 1e6;
  std::printf("  same-padding total %.1fM (%+.1f%%), not the compared convention\n",
              static_cast<double>(r.total_same) / 1e6,
              100.0 * (static_cast<double>(r.total_same) / 1e6 / kPublishedTotalM - 1));
  return report(5, "MAC accounting (valid-window convention)",
                {{fmt("total %.1fM within %.0f%% of %.0fM", total, kMacRel * 100, kPublishedTotalM),
                  std::fabs(total - kPublishedTotalM) <= kMacRel * kPublishedTotalM},
                 {fmt("first layer %.2fM within %.0f%% of %.0fM", first, kMacRel * 100, kPublishedFirstM),
                  std::fabs(first - kPublishedFirstM) <= kMacRel * kPublishedFirstM}});
}

bool criterion_6() {
  const FrontendConfig cfg;
  const Fft fft(static_cast<std::size_t>(cfg.fft_size));
  Rng rng(6006);
  double worst = 0;
  for (int i = 0; i < kFftFrames; ++i) {
    std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size));
    const double level = std::pow(10.0, rng.uniform(-4, 0));
    for (auto& v : frame) v = level * rng.uniform(-1.0, 1.0);
    std::vector<std::complex<double>> buf(frame.begin(), frame.end());
    fft.transform(buf);
    const auto ref = oracle::direct_dft(std::span<const double>(frame));
    double peak = 0, err = 0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      peak = std::max(peak, std::abs(ref[k]));
      err = std::max(err, std::abs(buf[k] - ref[k]));
    }
    worst = std::max(worst, err / peak);
  }

  const Frontend fe(cfg);
  std::vector<float> tone(static_cast<std::size_t>(cfg.patch_samples()));
  for (std::size_t i = 0; i < tone.size(); ++i)
    tone[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 16000.0));
  const auto s = fe.stft_power(tone);
  const auto mel = fe.mel_features(tone);
  const int band = test::expected_mel_band(1000.0, cfg.mel_bins, cfg.fmax);
  int fft_miss = 0, mel_miss = 0;
  for (int t = 1; t + 1 < s.frames; ++t) {
    int kb = 0, jb = 0;
    for (int k = 1; k < s.bins; ++k)
      if (s(k, t) > s(kb, t)) kb = k;
    for (int j = 1; j < cfg.mel_bins; ++j)
      if (mel(j, t, 0) > mel(jb, t, 0)) jb = j;
    fft_miss += kb != kToneBin;
    mel_miss += jb != band;
  }
  const int frames = fe.mel_spectrogram(std::vector<float>(static_cast<std::size_t>(cfg.patch_samples()))).tensor.width();
  return report(6, "frontend: FFT, tone placement, frame count",
                {{fmt("%d random frames, worst error %.2e of peak (< %.0e)", kFftFrames, worst, kFftRel),
                  worst < kFftRel},
                 {fmt("1 kHz tone off bin %d in %d interior frames", kToneBin, fft_miss), fft_miss == 0},
                 {fmt("1 kHz tone off mel band %d in %d interior frames", band, mel_miss), mel_miss == 0},
                 {fmt("3.2 s input gives %d frames (expected %d)", frames, kPatchFrames), frames == kPatchFrames}});
}

bool criterion_7() {
  const auto m = gen_random_model(7007);
  Rng rng(7);
  const auto audio = test::noise(rng, static_cast<std::size_t>(m.frontend.patch_samples()), 0.1);
  BenchOptions bo;
  bo.repetitions = kBenchReps;
  bo.threads = 1;
  const auto r = bench(m, audio, bo);

  std::printf("  %-12s %12s %10s %12s\n", "Layer", "MACs", "ms", "MAC/s");
  for (const auto& row : r.rows)
    std::printf("  %-12s %12llu %10.3f %12.3g\n", row.name.c_str(), static_cast<unsigned long long>(row.macs),
                row.seconds * 1e3, row.macs_per_second());
  std::printf("  %-12s %12llu %10.3f %12.3g\n", r.merged_tail.name.c_str(),
              static_cast<unsigned long long>(r.merged_tail.macs), r.merged_tail.seconds * 1e3,
              r.merged_tail.macs_per_second());
  std::printf("  %-12s %12llu %10.3f %12.3g\n", "Total", static_cast<unsigned long long>(r.total.macs),
              r.total.seconds * 1e3, r.total.macs_per_second());

  std::vector<Check> checks;
  double min_speedup = std::numeric_limits<double>::infinity();
  for (const auto& c : r.packed_vs_naive) {
    std::printf("  packed vs naive %-10s %7.1fx\n", c.name.c_str(), c.speedup());
    min_speedup = std::min(min_speedup, c.speedup());
  }
  checks.push_back({fmt("packed >= %.0fx naive on every binary layer (min %.1fx)", kPackedSpeedup, min_speedup),
                    min_speedup >= kPackedSpeedup});

  const auto input = Frontend(m.frontend).mel_spectrogram(audio).tensor;
  const double t1 = time_median([&] { (void)run_monolithic(m, input, {1, Popcount::native}); }, kBenchReps);
  const double t8 = time_median([&] { (void)run_monolithic(m, input, {kThreadsMany, Popcount::native}); }, kBenchReps);
  checks.push_back({fmt("%d threads %.1f ms vs 1 thread %.1f ms (hardware threads: %u)", kThreadsMany, t8 * 1e3,
                        t1 * 1e3, std::thread::hardware_concurrency()),
                    t8 < t1});

  const auto& pc = *r.popcount_native_vs_portable;
  checks.push_back({fmt("native popcount %.1f ms vs portable %.1f ms (instruction: %s, slack %.0f%%)",
                        pc.fast_seconds * 1e3, pc.slow_seconds * 1e3, native_popcount_is_instruction() ? "yes" : "no",
                        (kPopcountSlack - 1) * 100),
                    pc.fast_seconds <= pc.slow_seconds * kPopcountSlack});

  // Table structure: Mel bins, seven layers, merged tail, total; binary
  // layers have the highest throughput.
  double slowest_binary = std::numeric_limits<double>::infinity(), fastest_other = 0;
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    const double v = r.rows[i].macs_per_second();
    if (m.spec.layers[i - 1].kind == LayerKind::binary_conv) slowest_binary = std::min(slowest_binary, v);
    else fastest_other = std::max(fastest_other, v);
  }
  checks.push_back({fmt("report rows: %zu layers + merged '%s' + total", r.rows.size(), r.merged_tail.name.c_str()),
                    r.rows.size() == 8 && r.rows.front().name == "Mel bins" && r.merged_tail.name == "5./6. Layer"});
  checks.push_back({fmt("binary layers most efficient (slowest binary %.3g MAC/s, fastest other %.3g)",
                        slowest_binary, fastest_other),
                    slowest_binary > fastest_other});
  return report(7, "performance smoke", checks);
}

bool criterion_8() {
  std::vector<Check> checks;
  int oracle_mismatch = 0;
  for (int i = 0; i < kOracleModels; ++i) {
    const auto m = gen_random_model(static_cast<std::uint64_t>(8000 + i));
    const auto in = test::noise_input(static_cast<std::uint64_t>(80 + i), m);
    const auto got = run_monolithic(m, in);
    const auto ref = oracle::naive_integer_inference(m, in);
    oracle_mismatch += got.pool.sums != ref.sums;
  }
  checks.push_back({fmt("%d reference models end to end against the integer oracle, %d mismatches", kOracleModels,
                        oracle_mismatch),
                    oracle_mismatch == 0});

  // High-precision surrogate of the integer pipeline against the float
  // network: checks the quantizer's folding and scaling.
  double worst = 0;
  for (int s = 1; s <= kSurrogateSeeds; ++s) {
    const auto spec = reference_network();
    QuantizeOptions q;
    q.frontend = frontend_for(spec);
    q.frontend.output_qformat = 24;
    q.frontend.output_bitwidth = 32;
    q.weight_bitwidth = q.activation_bitwidth = 32;
    q.first_accumulator_bits = 64;
    q.calibration = synthetic_calibration(q.frontend, static_cast<std::uint64_t>(s));
    const auto fm = gen_random_float_model(static_cast<std::uint64_t>(s), spec, q.calibration);
    const auto m = quantize(fm, q);
    const auto in = test::noise_input(static_cast<std::uint64_t>(s + 800), m);
    const auto got = run_monolithic(m, in);
    const auto ref = oracle::float_reference_inference(fm, to_real(in));
    const int fq = m.layers.back().fixed().output_qformat();
    double peak = 0, err = 0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      peak = std::max(peak, std::fabs(ref[k]));
      err = std::max(err, std::fabs(std::ldexp(got.pool.mean(k), -fq) - ref[k]));
    }
    worst = std::max(worst, err / peak);
  }
  checks.push_back({fmt("32-bit surrogate vs float network: worst score error %.2e of peak (< %.0e)", worst,
                        kSurrogateRel),
                    worst < kSurrogateRel});

  // Diagnostic only: the deployed 16-bit models vs their float sources.
  int agree = 0;
  for (int s = 1; s <= kAgreementSeeds; ++s) {
    const auto spec = reference_network();
    QuantizeOptions q;
    q.frontend = frontend_for(spec);
    q.calibration = synthetic_calibration(q.frontend, static_cast<std::uint64_t>(s));
    const auto fm = gen_random_float_model(static_cast<std::uint64_t>(s), spec, q.calibration);
    const auto m = quantize(fm, q);
    const auto in = test::noise_input(static_cast<std::uint64_t>(s + 900), m);
    const auto ref = oracle::float_reference_inference(fm, to_real(in));
    agree += run_monolithic(m, in).predicted ==
             static_cast<std::size_t>(std::max_element(ref.begin(), ref.end()) - ref.begin());
  }
  std::printf("  diagnostic: 16-bit vs float argmax agreement %d / %d (random weights, not a classification accuracy)\n",
              agree, kAgreementSeeds);
  std::printf("  classification accuracy is not measured: no dataset or trained weights\n");
  return report(8, "accuracy substitute: oracle equivalence and quantization diagnostic", checks);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<bool()>> all{criterion_1, criterion_2, criterion_3, criterion_4,
                                               criterion_5, criterion_6, criterion_7, criterion_8};
  bool ok = true;
  for (int i = 1; i <= 8; ++i)
    if (only == 0 || only == i) ok = all[static_cast<std::size_t>(i - 1)]() && ok;
  return ok ? 0 : 1;
}
