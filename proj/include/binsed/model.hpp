#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/frontend.hpp"
#include "binsed/kernels.hpp"
#include "binsed/network.hpp"
#include "binsed/tensors.hpp"

namespace binsed {

// Parameters of one deployed layer. Fixed-point layers carry FixedConvParams,
// binary layers PackedBinaryWeights; every layer except the classifier has a
// fold that binarizes its output.
struct LayerParams {
  std::variant<FixedConvParams, PackedBinaryWeights> weights;
  std::optional<BnFold> fold;

  const FixedConvParams& fixed() const { return std::get<FixedConvParams>(weights); }
  const PackedBinaryWeights& binary() const { return std::get<PackedBinaryWeights>(weights); }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Model {
  NetworkSpec spec;
  FrontendConfig frontend;
  std::vector<LayerParams> layers;

  int input_qformat() const { return frontend.output_qformat; }

  // Full consistency check, including the accumulator headroom of every
  // fixed-point layer. Throws ModelError / ShapeError.
  void validate() const {
    frontend.validate();
    const auto shapes = propagate_shapes(spec);
    if (spec.input_height != frontend.mel_bins || spec.input_width != frontend.frames || spec.input_channels != 1)
      throw ShapeError("network input does not match the frontend patch shape");
    if (layers.size() != spec.layers.size()) throw ModelError("layer parameter count differs from topology");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& ls = spec.layers[i];
      const auto& lp = layers[i];
      const std::string where = "layer " + std::to_string(i) + ": ";
      if (ls.kind == LayerKind::binary_conv) {
        if (!std::holds_alternative<PackedBinaryWeights>(lp.weights)) throw ModelError(where + "expected binary weights");
        const auto& w = lp.binary();
        if (w.out_channels() != ls.out_channels || w.in_channels() != ls.in_channels || w.kernel_y() != ls.kernel_y ||
            w.kernel_x() != ls.kernel_x)
          throw ModelError(where + "binary weight shape differs from topology");
        if (!w.padding_clear()) throw ModelError(where + "binary weight padding bits set");
      } else {
        if (!std::holds_alternative<FixedConvParams>(lp.weights)) throw ModelError(where + "expected fixed weights");
        const auto& p = lp.fixed();
        const auto& w = p.weights;
        if (w.out_channels != ls.out_channels || w.in_channels != ls.in_channels || w.kernel_y != ls.kernel_y ||
            w.kernel_x != ls.kernel_x)
          throw ModelError(where + "fixed weight shape differs from topology");
        if (w.data.size() != static_cast<std::size_t>(w.out_channels) * w.kernel_y * w.kernel_x * w.in_channels)
          throw ModelError(where + "fixed weight storage size wrong");
        if (ls.kind == LayerKind::fixed_conv && p.input_qformat != input_qformat())
          throw ModelError(where + "first layer input format differs from frontend output");
        if (ls.kind == LayerKind::fixed_conv && p.input_bitwidth < frontend.output_bitwidth)
          throw ModelError(where + "first layer input narrower than frontend output");
        if (ls.kind == LayerKind::final_conv && (p.input_qformat != 0 || p.input_bitwidth != 16))
          throw ModelError(where + "classifier must consume Q0 +-1 activations");
        p.validate();
      }
      const bool wants_fold = ls.kind != LayerKind::final_conv;
      if (wants_fold != lp.fold.has_value()) throw ModelError(where + "fold presence wrong for layer kind");
      if (lp.fold) {
        if (lp.fold->size() != static_cast<std::size_t>(ls.out_channels) ||
            lp.fold->polarity.size() != lp.fold->threshold.size())
          throw ModelError(where + "fold size differs from output channels");
        for (auto s : lp.fold->polarity)
          if (s != 1 && s != -1) throw ModelError(where + "fold polarity must be +-1");
      }
    }
    (void)shapes;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

// Real-valued source parameters, before folding and quantization.
struct FloatBatchNorm {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> sigma;  // standard deviation, epsilon included

  friend bool operator==(const FloatBatchNorm&, const FloatBatchNorm&) = default;
};

struct FloatLayer {
  Filters<double> weights;
  std::vector<double> bias;  // empty for binary layers
  std::optional<FloatBatchNorm> bn;

  friend bool operator==(const FloatLayer&, const FloatLayer&) = default;
};

struct FloatModel {
  NetworkSpec spec;
  std::vector<FloatLayer> layers;

  void validate() const {
    propagate_shapes(spec);
    if (layers.size() != spec.layers.size()) throw ModelError("float model: layer count differs from topology");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& ls = spec.layers[i];
      const auto& l = layers[i];
      const std::string where = "float model layer " + std::to_string(i) + ": ";
      const auto& w = l.weights;
      if (w.out_channels != ls.out_channels || w.in_channels != ls.in_channels || w.kernel_y != ls.kernel_y ||
          w.kernel_x != ls.kernel_x ||
          w.data.size() != static_cast<std::size_t>(w.out_channels) * w.kernel_y * w.kernel_x * w.in_channels)
        throw ModelError(where + "weight shape differs from topology");
      const auto out = static_cast<std::size_t>(ls.out_channels);
      if (ls.kind != LayerKind::binary_conv && l.bias.size() != out) throw ModelError(where + "bias length wrong");
      if (ls.kind == LayerKind::binary_conv && !l.bias.empty()) throw ModelError(where + "binary layers carry no bias");
      const bool wants_bn = ls.kind != LayerKind::final_conv;
      if (wants_bn != l.bn.has_value()) throw ModelError(where + "batch-norm presence wrong for layer kind");
      if (l.bn && (l.bn->gamma.size() != out || l.bn->beta.size() != out || l.bn->mean.size() != out ||
                   l.bn->sigma.size() != out))
        throw ModelError(where + "batch-norm vector length wrong");
    }
  }

  friend bool operator==(const FloatModel&, const FloatModel&) = default;
};

}  // namespace binsed
