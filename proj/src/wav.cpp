#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "attentron/dsp.hpp"
#include "binary_io.hpp"

namespace attentron::dsp {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

Waveform parse_wav(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes, "wav");
  if (r.tag() != "RIFF") throw FormatError("wav: missing RIFF header");
  r.u32();
  if (r.tag() != "WAVE") throw FormatError("wav: missing WAVE tag");

  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  while (true) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("wav: fmt chunk too small");
      r.need(size);
      std::uint16_t format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::size_t consumed = 16;
      if (format == kFormatExtensible && size >= 40) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the subformat GUID
        consumed += 10;
      }
      r.skip(size - consumed + (size & 1));
      if (format != kFormatPcm) {
        throw FormatError("wav: unsupported codec " + std::to_string(format) +
                          " (only PCM)");
      }
      if (bits != 16) {
        throw FormatError("wav: unsupported bit depth " + std::to_string(bits) +
                          " (only 16-bit)");
      }
      if (channels != 1 && channels != 2) {
        throw FormatError("wav: unsupported channel count " +
                          std::to_string(channels));
      }
      if (rate == 0) throw FormatError("wav: zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      r.need(size);
      const std::size_t frames = size / (2u * channels);
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        if (channels == 1) {
          w.samples[i] = static_cast<float>(r.i16()) / 32768.0f;
        } else {
          const float a = static_cast<float>(r.i16()) / 32768.0f;
          const float b = static_cast<float>(r.i16()) / 32768.0f;
          w.samples[i] = 0.5f * (a + b);
        }
      }
      if (w.sample_rate != kSampleRate) return resample_linear(w, kSampleRate);
      return w;
    } else {
      r.skip(size + (size & 1));
    }
  }
}

Waveform load_wav(const std::filesystem::path& path) {
  try {
    return parse_wav(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_wav(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  detail::ByteWriter out;
  out.tag("RIFF");
  out.u32(36 + 2 * n);
  out.tag("WAVE");
  out.tag("fmt ");
  out.u32(16);
  out.u16(kFormatPcm);
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(w.sample_rate));
  out.u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  out.u16(2);
  out.u16(16);
  out.tag("data");
  out.u32(2 * n);
  for (float s : w.samples) {
    const double v = std::round(static_cast<double>(s) * 32768.0);
    out.i16(static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0)));
  }
  return std::move(out.data());
}

void save_wav(const std::filesystem::path& path, const Waveform& w) {
  write_file_bytes(path, encode_wav(w));
}

Waveform resample_linear(const Waveform& w, int target_rate) {
  if (target_rate <= 0 || w.sample_rate <= 0) {
    throw ConfigError("resample: sample rates must be positive");
  }
  if (w.sample_rate == target_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_rate;
    return out;
  }
  const std::size_t n = w.samples.size();
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / w.sample_rate));
  const double step = static_cast<double>(w.sample_rate) / target_rate;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) {
      out.samples[i] = w.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = static_cast<float>(w.samples[lo] +
                                        frac * (w.samples[lo + 1] - w.samples[lo]));
  }
  return out;
}

}  // namespace attentron::dsp
