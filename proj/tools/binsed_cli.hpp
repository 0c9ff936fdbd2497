#pragma once

// The binsed command line, callable in-process so tests can drive it.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "binsed/binsed.hpp"
#include "binsed/oracle.hpp"

namespace binsed::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInputFormat = 2,
  kModelCorrupt = 3,
  kShapeMismatch = 4,
  kBudgetExceeded = 5,
  kOracleMismatch = 6,  // hidden --oracle check only
};

inline void setup_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::get("binsed");
    if (!logger) logger = spdlog::stderr_color_mt("binsed");
    spdlog::set_default_logger(logger);
    done = true;
  }
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("BINSED_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

inline int default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

inline std::string fmt_double(double v, int precision = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

struct Options {
  std::string model, wav, out, float_model, out_float, variant = "binary";
  bool tiled = false, monolithic = false, no_compare = false, json = false, strict = false, all_chunks = false, oracle = false;
  int tiles = 4;
  int threads = default_threads();
  int reps = 5;
  int qformat_bits = 16;
  std::uint64_t seed = 1;
};

inline Model model_or_random(const Options& o) {
  if (!o.model.empty()) return load_model_file(o.model);
  spdlog::info("no --model given, using gen_random_model({})", o.seed);
  return gen_random_model(o.seed);
}

// Patches of a WAV file, each at most one patch long.
inline std::vector<std::vector<float>> wav_patches(const std::string& path, const FrontendConfig& cfg, bool all) {
  const auto wav = read_wav(path, cfg.sample_rate);
  const auto audio = pcm_to_float(wav.samples);
  std::vector<std::vector<float>> out;
  for (const auto& c : clip_chunks(audio.size(), static_cast<std::size_t>(cfg.patch_samples()), all))
    out.emplace_back(audio.begin() + static_cast<std::ptrdiff_t>(c.begin),
                     audio.begin() + static_cast<std::ptrdiff_t>(c.end));
  spdlog::debug("{}: {} samples, {} patch(es)", path, audio.size(), out.size());
  return out;
}

inline std::filesystem::path numbered(const std::filesystem::path& p, std::size_t i, std::size_t n) {
  if (n == 1) return p;
  auto q = p;
  q.replace_filename(p.stem().string() + "." + std::to_string(i) + p.extension().string());
  return q;
}

inline int cmd_extract(const Options& o, std::ostream& out) {
  const FrontendConfig cfg;
  const Frontend fe(cfg);
  const auto patches = wav_patches(o.wav, cfg, o.all_chunks);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto q = fe.mel_spectrogram(patches[i], o.threads);
    const auto path = numbered(o.out, i, patches.size());
    write_file(path, save_features({cfg, q.tensor}));
    if (o.json)
      out << nlohmann::json{{"out", path.string()}, {"shape", {q.tensor.height(), q.tensor.width(), q.tensor.channels()}},
                            {"qformat", q.tensor.qformat}, {"saturated", q.saturated}}.dump()
          << "\n";
    else
      out << path.string() << ": " << q.tensor.height() << "x" << q.tensor.width() << " Q" << q.tensor.qformat
          << ", " << q.saturated << " saturated\n";
  }
  return kOk;
}

inline int cmd_infer(const Options& o, std::ostream& out, std::ostream& err) {
  using clock = std::chrono::steady_clock;
  const auto model = load_model_file(o.model);
  const Frontend fe(model.frontend);
  const auto patches = wav_patches(o.wav, model.frontend, o.all_chunks);
  const ExecOptions ex{o.threads, Popcount::native};
  const bool tiled = o.tiled && !o.monolithic;
  std::optional<TilePlan> plan;
  if (tiled) plan = make_tile_plan(model.spec, o.tiles);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto t0 = clock::now();
    const auto input = fe.mel_spectrogram(patches[i], o.threads).tensor;
    const auto t1 = clock::now();
    const auto r = tiled ? run_tiled(model, input, *plan, ex) : run_monolithic(model, input, ex);
    const auto t2 = clock::now();
    const double ms_fe = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double ms_net = std::chrono::duration<double, std::milli>(t2 - t1).count();

    std::vector<double> means;
    for (std::size_t k = 0; k < r.pool.sums.size(); ++k) means.push_back(r.pool.mean(k));
    if (o.json) {
      out << nlohmann::json{{"patch", i}, {"class", r.predicted}, {"scores", means}, {"sums", r.pool.sums},
                            {"pool_count", r.pool.count}, {"mode", tiled ? "tiled" : "monolithic"}}.dump()
          << "\n";
    } else {
      out << "patch " << i << ": class " << r.predicted << "\n";
      for (std::size_t k = 0; k < means.size(); ++k) out << "  " << std::setw(2) << k << "  " << fmt_double(means[k]) << "\n";
    }
    err << nlohmann::json{{"patch", i}, {"frontend_ms", ms_fe}, {"network_ms", ms_net}, {"threads", o.threads}}.dump()
        << "\n";
    if (o.oracle) {
      const auto ref = oracle::naive_integer_inference(model, input);
      const bool same = ref.sums == r.pool.sums;
      err << "oracle: " << (same ? "match" : "MISMATCH") << "\n";
      if (!same) return kOracleMismatch;
    }
  }
  return kOk;
}

inline void print_row(std::ostream& out, const std::string& name, std::uint64_t macs, double sec) {
  out << std::left << std::setw(14) << name << std::right << std::setw(12)
      << (macs ? fmt_double(static_cast<double>(macs) / 1e6, 2) + "M" : "-") << std::setw(12) << fmt_double(sec * 1e3, 3)
      << std::setw(14) << (macs && sec > 0 ? fmt_double(static_cast<double>(macs) / sec / 1e6, 1) + "M" : "-") << "\n";
}

inline int cmd_bench(const Options& o, std::ostream& out) {
  const auto model = model_or_random(o);
  std::vector<float> audio;
  if (!o.wav.empty()) {
    audio = wav_patches(o.wav, model.frontend, false).front();
  } else {
    Rng rng(o.seed);
    audio.resize(static_cast<std::size_t>(model.frontend.patch_samples()));
    for (auto& s : audio) s = static_cast<float>(0.1 * rng.uniform(-1.0, 1.0));
  }
  BenchOptions bo;
  bo.repetitions = o.reps;
  bo.threads = o.threads;
  bo.compare_naive = bo.compare_popcount = !o.no_compare;
  const auto r = bench(model, audio, bo);
  if (o.json) {
    for (const auto& row : r.rows)
      out << nlohmann::json{{"layer", row.name}, {"macs", row.macs}, {"time_ms", row.seconds * 1e3},
                            {"mac_per_s", row.macs_per_second()}, {"threads", r.threads}}.dump()
          << "\n";
    out << nlohmann::json{{"layer", r.total.name}, {"macs", r.total.macs}, {"time_ms", r.total.seconds * 1e3},
                          {"mac_per_s", r.total.macs_per_second()}, {"threads", r.threads}}.dump()
        << "\n";
    for (const auto& c : r.packed_vs_naive)
      out << nlohmann::json{{"compare", "packed_vs_naive"}, {"layer", c.name}, {"fast_ms", c.fast_seconds * 1e3},
                            {"slow_ms", c.slow_seconds * 1e3}, {"speedup", c.speedup()}}.dump()
          << "\n";
    if (r.popcount_native_vs_portable) {
      const auto& c = *r.popcount_native_vs_portable;
      out << nlohmann::json{{"compare", "popcount_native_vs_portable"}, {"native_ms", c.fast_seconds * 1e3},
                            {"portable_ms", c.slow_seconds * 1e3}, {"speedup", c.speedup()},
                            {"native_instruction", native_popcount_is_instruction()}}.dump()
          << "\n";
    }
    return kOk;
  }
  out << "threads " << r.threads << ", median of " << r.repetitions << "\n";
  out << std::left << std::setw(14) << "Layer" << std::right << std::setw(12) << "MACs" << std::setw(12) << "Time[ms]"
      << std::setw(14) << "MAC/s" << "\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    print_row(out, r.rows[i].name, r.rows[i].macs, r.rows[i].seconds);
    if (i + 1 == r.rows.size()) print_row(out, "(" + r.merged_tail.name + ")", r.merged_tail.macs, r.merged_tail.seconds);
  }
  print_row(out, r.total.name, r.total.macs, r.total.seconds);
  for (const auto& c : r.packed_vs_naive)
    out << "packed vs naive " << c.name << ": " << fmt_double(c.speedup(), 1) << "x\n";
  if (r.popcount_native_vs_portable)
    out << "native vs portable popcount: " << fmt_double(r.popcount_native_vs_portable->speedup(), 2) << "x\n";
  return kOk;
}

inline int cmd_footprint(const Options& o, std::ostream& out) {
  const NetworkSpec net = o.model.empty() ? reference_network() : load_model_file(o.model).spec;
  const auto variant = o.variant == "fixed16" ? WeightVariant::fixed16 : WeightVariant::binary;
  if (o.variant != "binary" && o.variant != "fixed16") throw FormatError("--variant must be binary or fixed16");
  std::optional<TilePlan> plan;
  if (o.tiles > 1 && variant == WeightVariant::binary) plan = make_tile_plan(net, o.tiles);
  const auto f = footprint(net, MemoryBudget{}, plan ? &*plan : nullptr, variant);
  const auto kib = [](std::size_t b) { return static_cast<double>(b) / static_cast<double>(kKiB); };
  if (o.json) {
    for (const auto& l : f.layers)
      out << nlohmann::json{{"row", "layer"}, {"layer", l.name}, {"weight_bytes", l.weight_bytes},
                            {"parameter_bytes", l.parameter_bytes}}.dump()
          << "\n";
    out << nlohmann::json{{"row", "weights"}, {"bytes", f.weight_storage}, {"kib", kib(f.weight_storage)},
                          {"weights", f.weights}, {"thresholds", f.thresholds}, {"polarity", f.polarity},
                          {"biases", f.biases}}.dump()
        << "\n";
    out << nlohmann::json{{"row", "total"}, {"bytes", f.total}, {"kib", kib(f.total)}, {"input", f.input},
                          {"activation_peak", f.activation_peak}, {"weight_staging", f.weight_staging},
                          {"tiles", f.tiles}}.dump()
        << "\n";
    out << nlohmann::json{{"row", "budget"}, {"l2_bytes", f.l2_bytes}, {"fits", f.fits_l2}}.dump() << "\n";
  } else {
    for (const auto& l : f.layers)
      out << std::left << std::setw(14) << l.name << std::right << std::setw(10) << l.parameter_bytes << " B\n";
    out << "weights        " << f.weight_storage << " B (" << fmt_double(kib(f.weight_storage), 1) << " kB)\n";
    out << "total          " << f.total << " B (" << fmt_double(kib(f.total), 1) << " kB)\n";
    out << "budget " << f.l2_bytes / kKiB << " kB: " << (f.fits_l2 ? "fits" : "EXCEEDED") << "\n";
  }
  return (o.strict && !f.fits_l2) ? kBudgetExceeded : kOk;
}

inline int cmd_macs(std::ostream& out, bool json) {
  const auto r = count_macs(reference_network());
  for (const auto& l : r.layers) {
    nlohmann::json j{{"layer", l.name}, {"macs_same", l.same}, {"macs_valid", l.valid}};
    if (l.published_m) j["published_m"] = *l.published_m;
    if (json) out << j.dump() << "\n";
    else
      out << std::left << std::setw(14) << l.name << std::right << std::setw(12) << l.same << std::setw(12) << l.valid
          << (l.published_m ? "   published " + fmt_double(*l.published_m, 0) + "M" : "") << "\n";
  }
  if (json) out << nlohmann::json{{"layer", "Total"}, {"macs_same", r.total_same}, {"macs_valid", r.total_valid}}.dump() << "\n";
  else out << std::left << std::setw(14) << "Total" << std::right << std::setw(12) << r.total_same << std::setw(12) << r.total_valid << "\n";
  return kOk;
}

inline int cmd_quantize(const Options& o, std::ostream& out) {
  const auto bytes = read_file(o.float_model);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("float model JSON: ") + e.what());
  }
  const auto fm = float_model_from_json(j);
  QuantizeOptions q;
  q.frontend = frontend_for(fm.spec);
  q.weight_bitwidth = o.qformat_bits;
  q.activation_bitwidth = o.qformat_bits;
  q.calibration_seed = o.seed;
  const auto m = quantize(fm, q);
  save_model_file(o.out, m);
  out << o.out << ": " << m.layers.size() << " layers\n";
  return kOk;
}

inline int cmd_gen_model(const Options& o, std::ostream& out) {
  const auto spec = reference_network();
  QuantizeOptions q;
  q.frontend = frontend_for(spec);
  q.weight_bitwidth = o.qformat_bits;
  q.activation_bitwidth = o.qformat_bits;
  q.calibration = synthetic_calibration(q.frontend, o.seed);
  const auto fm = gen_random_float_model(o.seed, spec, q.calibration);
  const auto m = quantize(fm, q);
  save_model_file(o.out, m);
  if (!o.out_float.empty()) write_file(o.out_float, to_json(fm).dump());
  out << o.out << ": seed " << o.seed << "\n";
  return kOk;
}

inline int cmd_export_spec(const Options& o, std::ostream& out) {
  const NetworkSpec net = o.model.empty() ? reference_network() : load_model_file(o.model).spec;
  const auto text = to_json(net).dump(2) + "\n";
  if (o.out.empty()) out << text;
  else write_file(o.out, text);
  return kOk;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  setup_logging();
  CLI::App app{"binary neural network sound event detection"};
  app.require_subcommand(1);
  Options o;

  auto* extract = app.add_subcommand("extract", "WAV -> 64x400 feature file");
  extract->add_option("--wav", o.wav)->required();
  extract->add_option("--out", o.out)->required();
  extract->add_flag("--all-chunks", o.all_chunks, "every 3.2 s chunk instead of one centred patch");

  auto* infer = app.add_subcommand("infer", "classify a WAV file");
  infer->add_option("--model", o.model)->required();
  infer->add_option("--wav", o.wav)->required();
  infer->add_flag("--tiled", o.tiled);
  infer->add_flag("--monolithic", o.monolithic);
  infer->add_option("--tiles", o.tiles)->check(CLI::PositiveNumber);
  infer->add_flag("--all-chunks", o.all_chunks);
  infer->add_flag("--oracle", o.oracle)->group("");

  auto* bench_cmd = app.add_subcommand("bench", "per-layer timing");
  bench_cmd->add_option("--model", o.model);
  bench_cmd->add_option("--wav", o.wav);
  bench_cmd->add_option("--reps", o.reps)->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--no-compare", o.no_compare, "skip the naive and portable-popcount comparisons");

  auto* fp = app.add_subcommand("footprint", "memory footprint against the 512 kB budget");
  fp->add_option("--model", o.model);
  fp->add_option("--tiles", o.tiles)->check(CLI::PositiveNumber);
  fp->add_option("--variant", o.variant, "binary or fixed16");
  fp->add_flag("--strict", o.strict, "exit 5 when over budget");

  auto* macs = app.add_subcommand("macs", "MAC counts per layer");

  auto* quant = app.add_subcommand("quantize", "float model JSON -> model file");
  quant->add_option("float-model", o.float_model)->required();
  quant->add_option("--out", o.out)->required();
  quant->add_option("--qformat-bits", o.qformat_bits)->check(CLI::IsMember({16, 32}));

  auto* gen = app.add_subcommand("gen-model", "seeded random model");
  gen->add_option("--out", o.out)->required();
  gen->add_option("--float-out", o.out_float, "also write the float model as JSON");
  gen->add_option("--qformat-bits", o.qformat_bits)->check(CLI::IsMember({16, 32}));

  auto* spec = app.add_subcommand("export-spec", "network topology as JSON");
  spec->add_option("--model", o.model);
  spec->add_option("--out", o.out);

  for (auto* sub : {extract, infer, bench_cmd, fp, macs, quant, gen, spec}) {
    sub->add_option("--threads", o.threads)->check(CLI::PositiveNumber);
    sub->add_flag("--json", o.json);
    sub->add_option("--seed", o.seed);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*extract) return cmd_extract(o, out);
    if (*infer) return cmd_infer(o, out, err);
    if (*bench_cmd) return cmd_bench(o, out);
    if (*fp) return cmd_footprint(o, out);
    if (*macs) return cmd_macs(out, o.json);
    if (*quant) return cmd_quantize(o, out);
    if (*gen) return cmd_gen_model(o, out);
    if (*spec) return cmd_export_spec(o, out);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kInputFormat;
  } catch (const ModelError& e) {
    err << "error: " << e.what() << "\n";
    return kModelCorrupt;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kShapeMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace binsed::cli
