#pragma once

// Network topology: layer descriptors, shape propagation, receptive field.

#include <cstdint>
#include <string>
#include <vector>

#include "binsed/errors.hpp"

namespace binsed {

enum class LayerKind : std::uint8_t { fixed_conv = 0, binary_conv = 1, final_conv = 2 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::fixed_conv: return "fixed_conv";
    case LayerKind::binary_conv: return "binary_conv";
    case LayerKind::final_conv: return "final_conv";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::binary_conv;
  int kernel_y = 3;
  int kernel_x = 3;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  int input_height = 64;
  int input_width = 400;
  int input_channels = 1;
  int classes = 28;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// 1 fixed-point layer, 5 binary layers, 1 fixed-point classifier.
inline NetworkSpec reference_network() {
  NetworkSpec n;
  n.layers = {
      {LayerKind::fixed_conv, 3, 3, 1, 32, 1},     //
      {LayerKind::binary_conv, 3, 3, 32, 64, 2},   //
      {LayerKind::binary_conv, 3, 3, 64, 128, 1},  //
      {LayerKind::binary_conv, 3, 3, 128, 128, 2},
      {LayerKind::binary_conv, 3, 3, 128, 128, 1},
      {LayerKind::binary_conv, 1, 1, 128, 128, 1},
      {LayerKind::final_conv, 1, 1, 128, 28, 1},
  };
  return n;
}

// Display names in report order.
inline std::string layer_name(const NetworkSpec& net, std::size_t i) {
  const auto kind = net.layers[i].kind;
  if (kind == LayerKind::fixed_conv) return "First Layer";
  if (kind == LayerKind::final_conv) return "Last Layer";
  int ordinal = 0;
  for (std::size_t j = 0; j <= i; ++j)
    if (net.layers[j].kind == LayerKind::binary_conv) ++ordinal;
  return std::to_string(ordinal) + ". Bin Layer";
}

struct LayerShape {
  int in_h, in_w, in_c;
  int out_h, out_w, out_c;
};

constexpr int same_extent(int in, int stride) { return (in + stride - 1) / stride; }

// Checks layer ordering and channel chaining; returns per-layer shapes under
// "same" padding. Throws ShapeError naming the offending layer.
inline std::vector<LayerShape> propagate_shapes(const NetworkSpec& net) {
  if (net.layers.size() < 2) throw ShapeError("network needs at least a first and a final layer");
  if (net.input_height <= 0 || net.input_width <= 0 || net.input_channels <= 0 || net.classes <= 0)
    throw ShapeError("network input shape and class count must be positive");
  std::vector<LayerShape> shapes;
  int h = net.input_height, w = net.input_width, c = net.input_channels;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    const bool first = i == 0, last = i + 1 == net.layers.size();
    if (first != (l.kind == LayerKind::fixed_conv) || last != (l.kind == LayerKind::final_conv))
      throw ShapeError(where + ": expected fixed_conv first, final_conv last, binary_conv in between");
    if (l.kernel_y <= 0 || l.kernel_x <= 0 || l.kernel_y % 2 == 0 || l.kernel_x % 2 == 0)
      throw ShapeError(where + ": kernel extents must be positive and odd");
    if (l.stride < 1) throw ShapeError(where + ": stride must be positive");
    if (l.in_channels != c)
      throw ShapeError(where + ": expects " + std::to_string(l.in_channels) + " input channels, receives " +
                       std::to_string(c));
    if (l.out_channels <= 0) throw ShapeError(where + ": no output channels");
    LayerShape s{h, w, c, same_extent(h, l.stride), same_extent(w, l.stride), l.out_channels};
    shapes.push_back(s);
    h = s.out_h;
    w = s.out_w;
    c = s.out_c;
  }
  if (c != net.classes)
    throw ShapeError("final layer produces " + std::to_string(c) + " channels for " + std::to_string(net.classes) +
                     " classes");
  return shapes;
}

// Total overlap two neighbouring column tiles need: the sum over layers of
// (kx - 1) times the cumulative input stride ("jump") seen by that layer.
inline int receptive_halo(const NetworkSpec& net) {
  int jump = 1, halo = 0;
  for (const auto& l : net.layers) {
    halo += (l.kernel_x - 1) * jump;
    jump *= l.stride;
  }
  return halo;
}

inline int total_stride_x(const NetworkSpec& net) {
  int j = 1;
  for (const auto& l : net.layers) j *= l.stride;
  return j;
}

}  // namespace binsed
