#pragma once

// Binary model and feature files, plus JSON views of NetworkSpec and
// FloatModel. Layout is documented in docs/model_format.md. All multi-byte
// integers are little-endian regardless of host.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "binsed/errors.hpp"
#include "binsed/frontend.hpp"
#include "binsed/model.hpp"
#include "binsed/network.hpp"

namespace binsed {

inline constexpr std::array<char, 4> kModelMagic{'B', 'S', 'E', 'D'};
inline constexpr std::array<char, 4> kFeatureMagic{'B', 'S', 'F', 'T'};
inline constexpr std::uint16_t kModelVersion = 1;
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kHeaderBytes = 12;  // magic, version, reserved, payload length
inline constexpr std::size_t kTrailerBytes = 4;  // CRC32

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks to stay portable.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i8(std::int8_t v) { u8(static_cast<std::uint8_t>(v)); }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

// Reads from a payload whose CRC already matched; running past the end means
// the writer and reader disagree about the structure.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    if (remaining() < static_cast<std::size_t>(n)) throw TruncatedError("payload ends inside a field");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

namespace detail {

inline std::vector<std::uint8_t> wrap(const std::array<char, 4>& magic, std::uint16_t version,
                                      const std::vector<std::uint8_t>& payload) {
  ByteWriter w;
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(version);
  w.u16(0);
  if (payload.size() > 0xFFFFFFFFu) throw ModelError("payload exceeds 4 GiB");
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  w.u32(crc32_of(payload));
  return std::move(w.buffer());
}

// Validates the container in order: magic, version, length, checksum.
inline std::span<const std::uint8_t> unwrap(std::span<const std::uint8_t> bytes, const std::array<char, 4>& magic,
                                            std::uint16_t version, std::string_view what) {
  const std::string name(what);
  if (bytes.size() < 4) throw TruncatedError(name + ": shorter than its magic number");
  if (std::memcmp(bytes.data(), magic.data(), 4) != 0) throw BadMagicError(name + ": bad magic number");
  if (bytes.size() < kHeaderBytes) throw TruncatedError(name + ": header truncated");
  ByteReader h(bytes.subspan(4, 8));
  const auto v = h.u16();
  if (v != version)
    throw VersionError(name + ": format version " + std::to_string(v) + ", expected " + std::to_string(version));
  if (h.u16() != 0) throw ModelError(name + ": reserved header bytes are not zero");
  const std::size_t len = h.u32();
  const std::size_t need = kHeaderBytes + len + kTrailerBytes;
  if (bytes.size() < need) throw TruncatedError(name + ": truncated (" + std::to_string(bytes.size()) + " of " +
                                                std::to_string(need) + " bytes)");
  if (bytes.size() > need) throw TrailingBytesError(name + ": " + std::to_string(bytes.size() - need) + " trailing bytes");
  const auto payload = bytes.subspan(kHeaderBytes, len);
  ByteReader t(bytes.subspan(kHeaderBytes + len, kTrailerBytes));
  if (t.u32() != crc32_of(payload)) throw ChecksumError(name + ": CRC32 mismatch");
  return payload;
}

inline void write_spec(ByteWriter& w, const NetworkSpec& s) {
  w.i32(s.input_height);
  w.i32(s.input_width);
  w.i32(s.input_channels);
  w.i32(s.classes);
  w.u32(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.i32(l.kernel_y);
    w.i32(l.kernel_x);
    w.i32(l.in_channels);
    w.i32(l.out_channels);
    w.i32(l.stride);
  }
}

inline NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec s;
  s.input_height = r.i32();
  s.input_width = r.i32();
  s.input_channels = r.i32();
  s.classes = r.i32();
  const auto n = r.u32();
  if (n > 1024) throw ModelError("implausible layer count " + std::to_string(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const auto kind = r.u8();
    if (kind > 2) throw ModelError("unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.kernel_y = r.i32();
    l.kernel_x = r.i32();
    l.in_channels = r.i32();
    l.out_channels = r.i32();
    l.stride = r.i32();
    s.layers.push_back(l);
  }
  return s;
}

inline void write_frontend(ByteWriter& w, const FrontendConfig& c) {
  w.i32(c.sample_rate);
  w.i32(c.window);
  w.i32(c.hop);
  w.i32(c.fft_size);
  w.i32(c.mel_bins);
  w.i32(c.frames);
  w.f64(c.fmin);
  w.f64(c.fmax);
  w.f64(c.log_floor);
  w.u8(c.log_compress ? 1 : 0);
  w.i32(c.output_qformat);
  w.u8(static_cast<std::uint8_t>(c.output_bitwidth));
}

inline FrontendConfig read_frontend(ByteReader& r) {
  FrontendConfig c;
  c.sample_rate = r.i32();
  c.window = r.i32();
  c.hop = r.i32();
  c.fft_size = r.i32();
  c.mel_bins = r.i32();
  c.frames = r.i32();
  c.fmin = r.f64();
  c.fmax = r.f64();
  c.log_floor = r.f64();
  c.log_compress = r.u8() != 0;
  c.output_qformat = r.i32();
  c.output_bitwidth = r.u8();
  return c;
}

inline std::size_t checked_count(std::initializer_list<int> dims) {
  std::size_t n = 1;
  for (int d : dims) {
    if (d <= 0 || d > (1 << 20)) throw ModelError("implausible tensor extent " + std::to_string(d));
    n *= static_cast<std::size_t>(d);
  }
  if (n > (std::size_t{1} << 28)) throw ModelError("tensor too large");
  return n;
}

}  // namespace detail

inline std::vector<std::uint8_t> save_model(const Model& m) {
  m.validate();
  ByteWriter w;
  detail::write_spec(w, m.spec);
  detail::write_frontend(w, m.frontend);
  for (const auto& lp : m.layers) {
    if (const auto* p = std::get_if<FixedConvParams>(&lp.weights)) {
      w.u8(0);
      w.i32(p->input_qformat);
      w.u8(static_cast<std::uint8_t>(p->input_bitwidth));
      w.u8(p->binary_input ? 1 : 0);
      w.i32(p->weight_qformat);
      w.u8(static_cast<std::uint8_t>(p->weight_bitwidth));
      w.i32(p->output_shift);
      w.u8(static_cast<std::uint8_t>(p->output_bitwidth));
      w.u8(static_cast<std::uint8_t>(p->accumulator_bits));
      for (auto v : p->weights.data) {
        if (p->weight_bitwidth == 16) w.i16(static_cast<std::int16_t>(v));
        else w.i32(v);
      }
      for (auto b : p->bias) w.i64(b);
    } else {
      w.u8(1);
      for (auto word : lp.binary().words()) w.u32(word);
    }
    w.u8(lp.fold ? 1 : 0);
    if (lp.fold) {
      for (auto s : lp.fold->polarity) w.i8(s);
      for (auto t : lp.fold->threshold) w.i32(t);
    }
  }
  return detail::wrap(kModelMagic, kModelVersion, w.buffer());
}

inline Model load_model(std::span<const std::uint8_t> bytes) {
  const auto payload = detail::unwrap(bytes, kModelMagic, kModelVersion, "model");
  ByteReader r(payload);
  Model m;
  m.spec = detail::read_spec(r);
  propagate_shapes(m.spec);
  m.frontend = detail::read_frontend(r);
  for (const auto& ls : m.spec.layers) {
    LayerParams lp;
    const auto tag = r.u8();
    if (tag == 0) {
      FixedConvParams p;
      p.input_qformat = r.i32();
      p.input_bitwidth = r.u8();
      p.binary_input = r.u8() != 0;
      p.weight_qformat = r.i32();
      p.weight_bitwidth = r.u8();
      p.output_shift = r.i32();
      p.output_bitwidth = r.u8();
      p.accumulator_bits = r.u8();
      if (p.weight_bitwidth != 16 && p.weight_bitwidth != 32) throw ModelError("fixed weight bitwidth must be 16 or 32");
      const auto n = detail::checked_count({ls.out_channels, ls.kernel_y, ls.kernel_x, ls.in_channels});
      p.weights = Filters<std::int32_t>(ls.out_channels, ls.kernel_y, ls.kernel_x, ls.in_channels);
      for (std::size_t i = 0; i < n; ++i) p.weights.data[i] = p.weight_bitwidth == 16 ? r.i16() : r.i32();
      p.bias.resize(static_cast<std::size_t>(ls.out_channels));
      for (auto& b : p.bias) b = r.i64();
      lp.weights = std::move(p);
    } else if (tag == 1) {
      detail::checked_count({ls.out_channels, ls.kernel_y, ls.kernel_x, ls.in_channels});
      PackedBinaryWeights bw(ls.out_channels, ls.in_channels, ls.kernel_y, ls.kernel_x);
      for (auto& word : bw.words()) word = r.u32();
      lp.weights = std::move(bw);
    } else {
      throw ModelError("unknown layer payload tag " + std::to_string(tag));
    }
    if (r.u8() != 0) {
      BnFold f;
      const auto n = static_cast<std::size_t>(ls.out_channels);
      f.polarity.resize(n);
      f.threshold.resize(n);
      for (auto& s : f.polarity) s = r.i8();
      for (auto& t : f.threshold) t = r.i32();
      lp.fold = std::move(f);
    }
    m.layers.push_back(std::move(lp));
  }
  if (r.remaining() != 0) throw TrailingBytesError("model payload has " + std::to_string(r.remaining()) + " unread bytes");
  m.validate();
  return m;
}

// Feature patch with the frontend configuration that produced it.
struct FeatureFile {
  FrontendConfig frontend;
  FixedTensor features;

  friend bool operator==(const FeatureFile&, const FeatureFile&) = default;
};

inline std::vector<std::uint8_t> save_features(const FeatureFile& f) {
  ByteWriter w;
  detail::write_frontend(w, f.frontend);
  const auto& t = f.features;
  w.i32(t.height());
  w.i32(t.width());
  w.i32(t.channels());
  w.i32(t.qformat);
  w.u8(static_cast<std::uint8_t>(t.bitwidth));
  for (auto v : t.values.data) {
    if (t.bitwidth == 16) w.i16(static_cast<std::int16_t>(v));
    else w.i32(v);
  }
  return detail::wrap(kFeatureMagic, kFeatureVersion, w.buffer());
}

inline FeatureFile load_features(std::span<const std::uint8_t> bytes) {
  const auto payload = detail::unwrap(bytes, kFeatureMagic, kFeatureVersion, "feature file");
  ByteReader r(payload);
  FeatureFile f;
  f.frontend = detail::read_frontend(r);
  const int h = r.i32(), wd = r.i32(), c = r.i32(), q = r.i32();
  const int bits = r.u8();
  detail::checked_count({h, wd, c});
  f.features = FixedTensor(h, wd, c, q, bits);
  for (auto& v : f.features.values.data) v = bits == 16 ? r.i16() : r.i32();
  if (r.remaining() != 0) throw TrailingBytesError("feature payload has unread bytes");
  return f;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Model load_model_file(const std::filesystem::path& p) { return load_model(read_file(p)); }
inline void save_model_file(const std::filesystem::path& p, const Model& m) { write_file(p, save_model(m)); }

// ---- JSON views ----

using nlohmann::json;

inline json to_json(const NetworkSpec& s) {
  json layers = json::array();
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    layers.push_back({{"name", layer_name(s, i)},
                      {"kind", to_string(l.kind)},
                      {"kernel", {l.kernel_y, l.kernel_x}},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"stride", l.stride}});
  }
  return {{"input", {s.input_height, s.input_width, s.input_channels}}, {"classes", s.classes}, {"layers", layers}};
}

inline NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  const auto in = j.at("input");
  s.input_height = in.at(0).get<int>();
  s.input_width = in.at(1).get<int>();
  s.input_channels = in.at(2).get<int>();
  s.classes = j.at("classes").get<int>();
  for (const auto& l : j.at("layers")) {
    LayerSpec ls;
    const auto kind = l.at("kind").get<std::string>();
    if (kind == "fixed_conv") ls.kind = LayerKind::fixed_conv;
    else if (kind == "binary_conv") ls.kind = LayerKind::binary_conv;
    else if (kind == "final_conv") ls.kind = LayerKind::final_conv;
    else throw FormatError("unknown layer kind '" + kind + "'");
    ls.kernel_y = l.at("kernel").at(0).get<int>();
    ls.kernel_x = l.at("kernel").at(1).get<int>();
    ls.in_channels = l.at("in_channels").get<int>();
    ls.out_channels = l.at("out_channels").get<int>();
    ls.stride = l.at("stride").get<int>();
    s.layers.push_back(ls);
  }
  return s;
}

inline json to_json(const FloatModel& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    json jl{{"weights", l.weights.data}, {"bias", l.bias}};
    if (l.bn) jl["bn"] = {{"gamma", l.bn->gamma}, {"beta", l.bn->beta}, {"mean", l.bn->mean}, {"sigma", l.bn->sigma}};
    layers.push_back(std::move(jl));
  }
  return {{"spec", to_json(m.spec)}, {"layers", layers}};
}

// Weights are flat in [out][ky][kx][in] order.
inline FloatModel float_model_from_json(const json& j) {
  try {
    FloatModel m;
    m.spec = spec_from_json(j.at("spec"));
    propagate_shapes(m.spec);
    const auto& layers = j.at("layers");
    if (layers.size() != m.spec.layers.size()) throw ModelError("float model: layer count differs from topology");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& ls = m.spec.layers[i];
      const auto& jl = layers[i];
      FloatLayer l;
      l.weights = Filters<double>(ls.out_channels, ls.kernel_y, ls.kernel_x, ls.in_channels);
      const auto w = jl.at("weights").get<std::vector<double>>();
      if (w.size() != l.weights.data.size())
        throw ModelError("float model layer " + std::to_string(i) + ": weight count " + std::to_string(w.size()) +
                         ", expected " + std::to_string(l.weights.data.size()));
      l.weights.data = w;
      if (jl.contains("bias")) l.bias = jl.at("bias").get<std::vector<double>>();
      if (jl.contains("bn")) {
        const auto& b = jl.at("bn");
        l.bn = FloatBatchNorm{b.at("gamma").get<std::vector<double>>(), b.at("beta").get<std::vector<double>>(),
                              b.at("mean").get<std::vector<double>>(), b.at("sigma").get<std::vector<double>>()};
      }
      m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("float model JSON: ") + e.what());
  }
}

}  // namespace binsed
