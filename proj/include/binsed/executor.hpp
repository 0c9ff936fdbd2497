#pragma once

// End-to-end network execution (whole image or column tiles), MAC counting
// and memory footprint accounting.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/kernels.hpp"
#include "binsed/model.hpp"
#include "binsed/network.hpp"
#include "binsed/popcount.hpp"

namespace binsed {

struct ExecOptions {
  int threads = 1;
  Popcount popcount = Popcount::native;
};

struct InferenceResult {
  AccTensor final_map;  // classifier output before pooling
  PoolResult pool;
  std::size_t predicted = 0;

  std::span<const std::int64_t> scores() const { return pool.sums; }
  friend bool operator==(const InferenceResult&, const InferenceResult&) = default;
};

namespace detail {

inline void check_input(const Model& m, const FixedTensor& in) {
  const auto& s = m.spec;
  if (in.height() != s.input_height || in.width() != s.input_width || in.channels() != s.input_channels)
    throw ShapeError("layer 0 (" + layer_name(s, 0) + "): input is " + std::to_string(in.height()) + "x" +
                     std::to_string(in.width()) + "x" + std::to_string(in.channels()) + ", network expects " +
                     std::to_string(s.input_height) + "x" + std::to_string(s.input_width) + "x" +
                     std::to_string(s.input_channels));
  if (in.qformat != m.input_qformat())
    throw ShapeError("layer 0 (" + layer_name(s, 0) + "): input Q-format " + std::to_string(in.qformat) +
                     " differs from the model's " + std::to_string(m.input_qformat()));
}

// Runs every layer on a column slab. windows[i] selects the slab layer i
// reads and the global output columns it produces.
template <Popcount P>
AccTensor forward(const Model& m, const FixedTensor& in, std::span<const ColumnWindow> windows, int threads) {
  BinaryTensor act;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& ls = m.spec.layers[i];
    const auto& lp = m.layers[i];
    const auto& win = windows[i];
    try {
      switch (ls.kind) {
        case LayerKind::fixed_conv:
          act = conv2d_fixed_binarize(in, lp.fixed(), *lp.fold, ls.stride, win, threads);
          break;
        case LayerKind::binary_conv:
          act = binary_conv_threshold<P>(act, lp.binary(), *lp.fold, ls.stride, win, threads);
          break;
        case LayerKind::final_conv:
          return conv2d_fixed(to_fixed(act), lp.fixed(), ls.stride, win, threads).values;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + layer_name(m.spec, i) + "): " + e.what());
    }
  }
  throw ShapeError("network has no final layer");
}

inline AccTensor forward(const Model& m, const FixedTensor& in, std::span<const ColumnWindow> windows,
                         const ExecOptions& opt) {
  return opt.popcount == Popcount::native ? forward<Popcount::native>(m, in, windows, opt.threads)
                                          : forward<Popcount::portable>(m, in, windows, opt.threads);
}

inline InferenceResult finish(AccTensor map) {
  InferenceResult r;
  r.pool = global_avg_pool(map);
  r.predicted = predict(r.pool.sums);
  r.final_map = std::move(map);
  return r;
}

}  // namespace detail

inline InferenceResult run_monolithic(const Model& m, const FixedTensor& input, const ExecOptions& opt = {}) {
  detail::check_input(m, input);
  const std::vector<ColumnWindow> whole(m.layers.size());
  return detail::finish(detail::forward(m, input, whole, opt));
}

// ---- tiling ----

struct Tile {
  int input_begin = 0;  // global input columns [input_begin, input_end)
  int input_end = 0;
  int output_begin = 0;  // final-map columns produced by this tile
  int output_end = 0;
  std::vector<ColumnWindow> windows;  // per layer
  std::size_t peak_bytes = 0;         // largest input + output slab of any layer
};

struct TilePlan {
  int tile_count = 0;
  int halo = 0;       // total overlap between neighbours, in input columns
  int extension = 0;  // columns added on each side of a tile: ceil(halo / 2)
  std::vector<Tile> tiles;

  std::size_t peak_bytes() const {
    std::size_t p = 0;
    for (const auto& t : tiles) p = std::max(p, t.peak_bytes);
    return p;
  }
};

namespace detail {

// Device-side bytes of one layer's input or output slab: 16-bit network
// input, 1 bit per binary activation, 32-bit class scores.
inline std::size_t slab_bytes(LayerKind producer_or_input, int h, int w, int c) {
  const auto px = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  switch (producer_or_input) {
    case LayerKind::fixed_conv:
    case LayerKind::binary_conv: return px * static_cast<std::size_t>(words_for(c)) * 4;
    case LayerKind::final_conv: return px * static_cast<std::size_t>(c) * 4;
  }
  return 0;
}

inline std::size_t input_bytes(const NetworkSpec& s, int width) {
  return static_cast<std::size_t>(s.input_height) * static_cast<std::size_t>(width) *
         static_cast<std::size_t>(s.input_channels) * 2;
}

// Input columns the outputs [a, b) of a same-padded layer read.
inline std::pair<int, int> needed_columns(const LayerSpec& l, int in_width, int a, int b) {
  const int pad = (l.kernel_x - 1) / 2;
  return {std::max(0, a * l.stride - pad), std::min(in_width, (b - 1) * l.stride - pad + l.kernel_x)};
}

}  // namespace detail

// Splits the time axis into `tile_count` tiles with balanced final-map
// columns. Each tile reads its share of input columns extended by
// ceil(halo / 2) on both sides; the halo defaults to receptive_halo(net).
// Throws PlanError when a tile's extended input misses columns its outputs
// depend on.
inline TilePlan make_tile_plan(const NetworkSpec& net, int tile_count, std::optional<int> halo = std::nullopt) {
  const auto shapes = propagate_shapes(net);
  const int final_w = shapes.back().out_w;
  if (tile_count < 1 || tile_count > final_w)
    throw PlanError("tile count must lie in [1, " + std::to_string(final_w) + "]");
  TilePlan plan;
  plan.tile_count = tile_count;
  plan.halo = halo.value_or(receptive_halo(net));
  if (plan.halo < 0) throw PlanError("halo must be non-negative");
  plan.extension = (plan.halo + 1) / 2;
  const int jump = total_stride_x(net);
  const int in_w = net.input_width;
  const std::size_t n = net.layers.size();

  for (int t = 0; t < tile_count; ++t) {
    Tile tile;
    tile.output_begin = t * final_w / tile_count;
    tile.output_end = (t + 1) * final_w / tile_count;
    tile.input_begin = std::max(0, tile.output_begin * jump - plan.extension);
    tile.input_end = std::min(in_w, tile.output_end * jump + plan.extension);

    // What the outputs actually depend on, traced back layer by layer.
    int a = tile.output_begin, b = tile.output_end;
    for (std::size_t i = n; i-- > 0;) std::tie(a, b) = detail::needed_columns(net.layers[i], shapes[i].in_w, a, b);
    if (a < tile.input_begin || b > tile.input_end)
      throw PlanError("halo " + std::to_string(plan.halo) + " is too small: tile " + std::to_string(t) +
                      " needs input columns [" + std::to_string(a) + ", " + std::to_string(b) + "), has [" +
                      std::to_string(tile.input_begin) + ", " + std::to_string(tile.input_end) + ")");

    // Forward: each layer computes every output its slab fully determines;
    // the classifier is cropped to the tile's share.
    int lo = tile.input_begin, hi = tile.input_end;
    tile.windows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = net.layers[i];
      const auto& s = shapes[i];
      int ob = 0, oe = 0;
      bool started = false;
      for (int ox = 0; ox < s.out_w; ++ox) {
        const auto [c0, c1] = detail::needed_columns(l, s.in_w, ox, ox + 1);
        const bool ok = c0 >= lo && c1 <= hi;
        if (ok && !started) ob = ox, started = true;
        if (ok) oe = ox + 1;
      }
      if (i + 1 == n) {
        if (!started || ob > tile.output_begin || oe < tile.output_end)
          throw PlanError("tile " + std::to_string(t) + " cannot produce its output columns");
        ob = tile.output_begin;
        oe = tile.output_end;
      } else if (!started) {
        throw PlanError("tile " + std::to_string(t) + " slab empties at layer " + std::to_string(i));
      }
      tile.windows[i] = ColumnWindow{lo, s.in_w, ob, oe};
      const std::size_t in_bytes = i == 0 ? detail::input_bytes(net, hi - lo)
                                          : detail::slab_bytes(net.layers[i - 1].kind, s.in_h, hi - lo, s.in_c);
      const std::size_t out_bytes = detail::slab_bytes(l.kind, s.out_h, oe - ob, s.out_c);
      tile.peak_bytes = std::max(tile.peak_bytes, in_bytes + out_bytes);
      lo = ob;
      hi = oe;
    }
    plan.tiles.push_back(std::move(tile));
  }
  return plan;
}

inline FixedTensor slice_columns(const FixedTensor& t, int begin, int end) {
  FixedTensor out(t.height(), end - begin, t.channels(), t.qformat, t.bitwidth);
  for (int y = 0; y < t.height(); ++y)
    for (int x = begin; x < end; ++x)
      for (int c = 0; c < t.channels(); ++c) out(y, x - begin, c) = t(y, x, c);
  return out;
}

// Tiles run one after another in `order` (default 0..n-1); each tile's
// classifier columns are written into the full map before pooling.
inline InferenceResult run_tiled(const Model& m, const FixedTensor& input, const TilePlan& plan,
                                 const ExecOptions& opt = {}, std::span<const int> order = {}) {
  detail::check_input(m, input);
  const auto shapes = propagate_shapes(m.spec);
  const auto& last = shapes.back();
  std::vector<int> seq(plan.tiles.size());
  std::iota(seq.begin(), seq.end(), 0);
  if (!order.empty()) {
    std::vector<int> sorted(order.begin(), order.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted != seq) throw PlanError("tile order must be a permutation of the tiles");
    seq.assign(order.begin(), order.end());
  }
  std::vector<bool> covered(static_cast<std::size_t>(last.out_w), false);
  for (const auto& t : plan.tiles) {
    if (t.windows.size() != m.layers.size()) throw PlanError("tile plan was made for a different network");
    for (int x = t.output_begin; x < t.output_end; ++x) {
      if (covered[static_cast<std::size_t>(x)]) throw PlanError("tile outputs overlap");
      covered[static_cast<std::size_t>(x)] = true;
    }
  }
  if (std::find(covered.begin(), covered.end(), false) != covered.end())
    throw PlanError("tile outputs leave columns uncovered");

  AccTensor map(last.out_h, last.out_w, last.out_c);
  for (int idx : seq) {
    const auto& t = plan.tiles[static_cast<std::size_t>(idx)];
    const auto slab = slice_columns(input, t.input_begin, t.input_end);
    const auto part = detail::forward(m, slab, t.windows, opt);
    for (int y = 0; y < part.height; ++y)
      for (int x = 0; x < part.width; ++x)
        for (int c = 0; c < part.channels; ++c) map(y, t.output_begin + x, c) = part(y, x, c);
  }
  return detail::finish(std::move(map));
}

// ---- MAC accounting ----

// Published per-layer MACs of the reference network, in millions.
inline constexpr std::array<double, 7> kPublishedMacsM{7, 109, 405, 186, 154, 17, 6};
inline constexpr double kPublishedTotalMacsM = 884;

struct LayerMacs {
  std::string name;
  std::uint64_t same = 0;   // work executed here: same-padded output extent
  std::uint64_t valid = 0;  // outputs whose window lies fully inside the input
  std::optional<double> published_m;
};

struct MacReport {
  std::vector<LayerMacs> layers;
  std::uint64_t total_same = 0;
  std::uint64_t total_valid = 0;
  std::optional<double> published_total_m;
};

// out_h * out_w * out_c * ky * kx * in_c per layer, under both padding
// conventions. Published values are attached when `net` is the reference.
inline MacReport count_macs(const NetworkSpec& net) {
  const auto shapes = propagate_shapes(net);
  const bool reference = net == reference_network();
  MacReport r;
  int vh = net.input_height, vw = net.input_width;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const auto& s = shapes[i];
    const std::uint64_t per = static_cast<std::uint64_t>(l.kernel_y) * l.kernel_x * l.in_channels * l.out_channels;
    vh = (vh - l.kernel_y) / l.stride + 1;
    vw = (vw - l.kernel_x) / l.stride + 1;
    LayerMacs lm{layer_name(net, i), static_cast<std::uint64_t>(s.out_h) * s.out_w * per,
                 vh > 0 && vw > 0 ? static_cast<std::uint64_t>(vh) * vw * per : 0, std::nullopt};
    if (reference) lm.published_m = kPublishedMacsM[i];
    r.total_same += lm.same;
    r.total_valid += lm.valid;
    r.layers.push_back(std::move(lm));
  }
  if (reference) r.published_total_m = kPublishedTotalMacsM;
  return r;
}

// ---- memory footprint ----

inline constexpr std::size_t kKiB = 1024;

struct MemoryBudget {
  std::size_t l1_bytes = 64 * kKiB;
  std::size_t l2_bytes = 512 * kKiB;
  bool double_buffer_weights = true;
};

enum class WeightVariant { binary, fixed16 };

struct LayerFootprint {
  std::string name;
  std::size_t weight_bytes = 0;     // weights only
  std::size_t parameter_bytes = 0;  // weights + thresholds + polarity + bias
};

struct FootprintReport {
  WeightVariant variant = WeightVariant::binary;
  std::vector<LayerFootprint> layers;
  std::size_t weights = 0;
  std::size_t thresholds = 0;
  std::size_t polarity = 0;
  std::size_t biases = 0;
  std::size_t weight_storage = 0;  // sum of the four above
  std::size_t input = 0;
  std::size_t activation_peak = 0;  // includes the resident network input
  std::size_t weight_staging = 0;   // current + next layer parameters when double buffering
  std::size_t total = 0;
  int tiles = 1;
  std::size_t l1_bytes = 0;
  std::size_t l2_bytes = 0;
  bool fits_l2 = false;
  bool tile_fits_l1 = false;
};

// Storage model: binary weights 1 bit, fixed weights 2 bytes, folded
// thresholds 4 bytes and polarity 1 bit per binarized channel, biases
// 4 bytes (32-bit accumulator). The fixed16 variant stores every layer as
// 16-bit weights with batch norm folded into a 4-byte bias per channel.
inline FootprintReport footprint(const NetworkSpec& net, const MemoryBudget& budget = {},
                                 const TilePlan* plan = nullptr, WeightVariant variant = WeightVariant::binary) {
  const auto shapes = propagate_shapes(net);
  FootprintReport r;
  r.variant = variant;
  std::size_t binarized_channels = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const std::size_t count = static_cast<std::size_t>(l.kernel_y) * l.kernel_x * l.in_channels * l.out_channels;
    const auto ch = static_cast<std::size_t>(l.out_channels);
    LayerFootprint lf{layer_name(net, i), 0, 0};
    if (variant == WeightVariant::fixed16) {
      lf.weight_bytes = count * 2;
      lf.parameter_bytes = lf.weight_bytes + ch * 4;
      r.biases += ch * 4;
    } else {
      const bool binary = l.kind == LayerKind::binary_conv;
      lf.weight_bytes = binary ? count / 8 : count * 2;
      lf.parameter_bytes = lf.weight_bytes;
      if (l.kind != LayerKind::final_conv) {
        lf.parameter_bytes += ch * 4;
        r.thresholds += ch * 4;
        binarized_channels += ch;
      }
      if (!binary) {
        lf.parameter_bytes += ch * 4;
        r.biases += ch * 4;
      }
    }
    r.weights += lf.weight_bytes;
    r.layers.push_back(lf);
  }
  r.polarity = (binarized_channels + 31) / 32 * 4;
  r.weight_storage = r.weights + r.thresholds + r.polarity + r.biases;
  r.input = detail::input_bytes(net, net.input_width);

  if (plan) {
    // The whole input stays resident while tiles are cut from it.
    r.activation_peak = r.input + plan->peak_bytes();
    r.tiles = plan->tile_count;
  } else {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const auto& s = shapes[i];
      const auto in = i == 0 ? r.input : detail::slab_bytes(net.layers[i - 1].kind, s.in_h, s.in_w, s.in_c);
      const auto out = variant == WeightVariant::fixed16
                           ? static_cast<std::size_t>(s.out_h) * s.out_w * s.out_c * 2
                           : detail::slab_bytes(net.layers[i].kind, s.out_h, s.out_w, s.out_c);
      const auto in_v = variant == WeightVariant::fixed16 && i > 0
                            ? static_cast<std::size_t>(s.in_h) * s.in_w * s.in_c * 2
                            : in;
      r.activation_peak = std::max(r.activation_peak, in_v + out);
    }
  }
  if (budget.double_buffer_weights)
    for (std::size_t i = 0; i + 1 < r.layers.size(); ++i)
      r.weight_staging = std::max(r.weight_staging, r.layers[i].parameter_bytes + r.layers[i + 1].parameter_bytes);
  r.total = r.weight_storage + r.activation_peak + r.weight_staging;
  r.l1_bytes = budget.l1_bytes;
  r.l2_bytes = budget.l2_bytes;
  r.fits_l2 = r.total <= budget.l2_bytes;
  r.tile_fits_l1 = plan != nullptr && plan->peak_bytes() <= budget.l1_bytes;
  return r;
}

}  // namespace binsed
