#pragma once

// RIFF/WAVE reading and writing for 16 kHz mono 16-bit PCM, and the clip to
// patch chunking used before feature extraction.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binsed/errors.hpp"
#include "binsed/model_io.hpp"

namespace binsed {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  int format = 0;  // 1 = PCM
};

struct Wav {
  WavInfo info;
  std::vector<std::int16_t> samples;
};

// Parses any RIFF/WAVE with a PCM fmt chunk; validation of rate, channel
// count and depth is separate so callers can report all three.
inline Wav parse_wav(std::span<const std::uint8_t> b) {
  const auto u16 = [&](std::size_t p) { return static_cast<std::uint32_t>(b[p] | (b[p + 1] << 8)); };
  const auto u32 = [&](std::size_t p) { return u16(p) | (u16(p + 2) << 16); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");
  Wav w;
  bool have_fmt = false, have_data = false;
  std::size_t p = 12;
  while (p + 8 <= b.size()) {
    const std::uint32_t len = u32(p + 4);
    const std::size_t body = p + 8;
    if (len > b.size() - body) throw FormatError("WAV chunk runs past the end of the file");
    if (std::memcmp(b.data() + p, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("WAV fmt chunk too short");
      w.info.format = static_cast<int>(u16(body));
      w.info.channels = static_cast<int>(u16(body + 2));
      w.info.sample_rate = static_cast<int>(u32(body + 4));
      w.info.bits_per_sample = static_cast<int>(u16(body + 14));
      have_fmt = true;
    } else if (std::memcmp(b.data() + p, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("WAV data chunk before fmt chunk");
      if (w.info.format == 1 && w.info.bits_per_sample == 16) {
        w.samples.resize(len / 2);
        for (std::size_t i = 0; i < w.samples.size(); ++i)
          w.samples[i] = static_cast<std::int16_t>(u16(body + 2 * i));
      }
      have_data = true;
    }
    p = body + len + (len & 1u);
  }
  if (!have_fmt) throw FormatError("WAV has no fmt chunk");
  if (!have_data) throw FormatError("WAV has no data chunk");
  return w;
}

inline void require_mono16k(const WavInfo& i, int sample_rate = 16000) {
  if (i.format != 1) throw FormatError("WAV must be integer PCM (format 1), got format " + std::to_string(i.format));
  if (i.sample_rate != sample_rate)
    throw FormatError("WAV sample rate " + std::to_string(i.sample_rate) + " Hz, expected " +
                      std::to_string(sample_rate) + " (no resampling)");
  if (i.channels != 1) throw FormatError("WAV has " + std::to_string(i.channels) + " channels, expected mono");
  if (i.bits_per_sample != 16)
    throw FormatError("WAV bit depth " + std::to_string(i.bits_per_sample) + ", expected 16");
}

inline Wav read_wav(const std::filesystem::path& path, int sample_rate = 16000) {
  auto w = parse_wav(read_file(path));
  require_mono16k(w.info, sample_rate);
  return w;
}

inline std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> samples, int sample_rate = 16000,
                                            int channels = 1) {
  ByteWriter w;
  const auto put = [&](const char* tag) {
    for (int i = 0; i < 4; ++i) w.u8(static_cast<std::uint8_t>(tag[i]));
  };
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  put("RIFF");
  w.u32(36 + data_bytes);
  put("WAVE");
  put("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(channels));
  w.u32(static_cast<std::uint32_t>(sample_rate));
  w.u32(static_cast<std::uint32_t>(sample_rate * channels * 2));
  w.u16(static_cast<std::uint16_t>(channels * 2));
  w.u16(16);
  put("data");
  w.u32(data_bytes);
  for (auto s : samples) w.i16(s);
  return std::move(w.buffer());
}

inline std::vector<float> pcm_to_float(std::span<const std::int16_t> pcm) {
  std::vector<float> out(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) out[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return out;
}

// Sample ranges [begin, end) of the patches taken from a clip. Default: one
// patch centred on the middle of the clip. all_chunks: consecutive patches
// from the start; a trailing partial patch is dropped unless it is the only
// one. Short patches are zero-padded by the frontend.
struct ChunkRange {
  std::size_t begin;
  std::size_t end;
};

inline std::vector<ChunkRange> clip_chunks(std::size_t clip_len, std::size_t patch, bool all_chunks) {
  if (clip_len <= patch) return {{0, clip_len}};
  if (!all_chunks) {
    std::size_t start = clip_len / 2 > patch / 2 ? clip_len / 2 - patch / 2 : 0;
    start = std::min(start, clip_len - patch);
    return {{start, start + patch}};
  }
  std::vector<ChunkRange> r;
  for (std::size_t s = 0; s + patch <= clip_len; s += patch) r.push_back({s, s + patch});
  return r;
}

}  // namespace binsed
