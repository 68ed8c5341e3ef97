#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/error.hpp"

// RIFF/WAVE reader and writer. Supports PCM 16-bit and IEEE float 32-bit,
// mono or stereo, 16 kHz. Everything else is rejected.
namespace pldnet::wav {

enum class SampleFormat { kPcm16, kFloat32 };

namespace detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}
template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}
inline void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace detail

inline AudioBuffer decode(const std::vector<unsigned char>& bytes, const std::string& what = "wav") {
  using detail::read_u16;
  using detail::read_u32;
  auto fail = [&](const std::string& msg) { return InvalidInput(what + ": " + msg); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Tolerate a truncated data chunk, reject anything else.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("short fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && avail >= 26) format = read_u16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels != 1 && channels != 2) {
    throw fail("unsupported channel count " + std::to_string(channels));
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw fail("unsupported sample rate " + std::to_string(rate) + " (expected 16000)");
  }
  SampleFormat fmt;
  if (format == 1 && bits == 16) {
    fmt = SampleFormat::kPcm16;
  } else if (format == 3 && bits == 32) {
    fmt = SampleFormat::kFloat32;
  } else {
    throw fail("unsupported sample format (tag " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits); need PCM16 or float32");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  AudioBuffer out(channels, frames, static_cast<int>(rate));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      double v;
      if (fmt == SampleFormat::kPcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        v = static_cast<double>(s) / 32768.0;
      } else {
        float f;
        std::memcpy(&f, p, 4);
        v = static_cast<double>(f);
      }
      out.channel(c)[i] = v;
    }
  }
  if (!out.all_finite()) throw fail("non-finite samples");
  return out;
}

inline std::vector<unsigned char> encode(const AudioBuffer& audio,
                                         SampleFormat fmt = SampleFormat::kFloat32) {
  using detail::put;
  using detail::put_tag;
  if (audio.channels() != 1 && audio.channels() != 2) {
    throw InvalidInput("wav writer supports mono or stereo only");
  }
  require_pipeline_rate(audio);
  const std::uint16_t channels = static_cast<std::uint16_t>(audio.channels());
  const std::uint16_t bits = fmt == SampleFormat::kPcm16 ? 16 : 32;
  const std::uint16_t tag = fmt == SampleFormat::kPcm16 ? 1 : 3;
  const std::uint32_t block = channels * bits / 8;
  const std::uint32_t data_len = static_cast<std::uint32_t>(audio.num_samples() * block);
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put<std::uint32_t>(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, tag);
  put<std::uint16_t>(out, channels);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate_hz()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate_hz()) * block);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(block));
  put<std::uint16_t>(out, bits);
  put_tag(out, "data");
  put<std::uint32_t>(out, data_len);
  for (std::size_t i = 0; i < audio.num_samples(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = audio.channel(c)[i];
      if (fmt == SampleFormat::kPcm16) {
        const double clipped = std::clamp(v, -1.0, 32767.0 / 32768.0);
        put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
      } else {
        put<float>(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

inline AudioBuffer read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode(bytes, path);
}

inline void write(const std::string& path, const AudioBuffer& audio,
                  SampleFormat fmt = SampleFormat::kFloat32) {
  const auto bytes = encode(audio, fmt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidInput("write failed for " + path);
}

}  // namespace pldnet::wav
