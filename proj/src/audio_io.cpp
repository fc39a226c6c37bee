#include "dpq/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dpq {

namespace {

uint16_t read_u16le(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

uint32_t read_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::NotFound, path);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open " + path);
  }
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorKind::MalformedWav, path + ": missing RIFF/WAVE header");
  }

  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    char id[5] = {0};
    std::memcpy(id, bytes.data() + pos, 4);
    uint32_t chunk_size = read_u32le(bytes.data() + pos + 4);
    size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) {
      throw Error(ErrorKind::MalformedWav, path + ": chunk '" + id + "' overruns file");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) {
        throw Error(ErrorKind::MalformedWav, path + ": fmt chunk too small");
      }
      audio_format = read_u16le(bytes.data() + body);
      channels = read_u16le(bytes.data() + body + 2);
      rate = read_u32le(bytes.data() + body + 4);
      bits = read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) {
        throw Error(ErrorKind::MalformedWav, path + ": data chunk before fmt");
      }
      if (audio_format != 1) {
        throw Error(ErrorKind::UnsupportedFormat,
                    path + ": audio format " + std::to_string(audio_format) +
                        " (PCM required)");
      }
      if (channels != 1) {
        throw Error(ErrorKind::UnsupportedFormat,
                    path + ": " + std::to_string(channels) + " channels (mono required)");
      }
      if (bits != 16) {
        throw Error(ErrorKind::UnsupportedFormat,
                    path + ": " + std::to_string(bits) + " bits per sample (16 required)");
      }
      if (rate != static_cast<uint32_t>(kSampleRateHz)) {
        throw Error(ErrorKind::UnsupportedFormat,
                    path + ": sample rate " + std::to_string(rate) + " Hz (16000 required)");
      }
      if (chunk_size % 2 != 0) {
        throw Error(ErrorKind::MalformedWav, path + ": odd data chunk size");
      }
      AudioBuffer buf;
      buf.sample_rate_hz = kSampleRateHz;
      size_t n = chunk_size / 2;
      buf.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t v = static_cast<int16_t>(read_u16le(bytes.data() + body + 2 * i));
        buf.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return buf;
    }
    pos = body + chunk_size + (chunk_size % 2);  // chunks are word-aligned
  }
  throw Error(ErrorKind::MalformedWav, path + ": no data chunk");
}

void write_wav(const std::string& path, const AudioBuffer& buf) {
  const uint32_t n = static_cast<uint32_t>(buf.samples.size());
  const uint32_t data_bytes = n * 2;

  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32le(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32le(out, 16);
  put_u16le(out, 1);  // PCM
  put_u16le(out, 1);  // mono
  put_u32le(out, kSampleRateHz);
  put_u32le(out, kSampleRateHz * 2);  // byte rate
  put_u16le(out, 2);                  // block align
  put_u16le(out, 16);                 // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32le(out, data_bytes);
  for (double s : buf.samples) {
    long q = std::lround(s * 32768.0);  // round half away from zero
    q = std::clamp(q, -32768L, 32767L);
    put_u16le(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  }
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw Error(ErrorKind::IoError, "short write to " + path);
  }
}

std::vector<std::vector<double>> segment_frames(const AudioBuffer& buf,
                                                int frame_len, int hop) {
  std::vector<std::vector<double>> frames;
  const long n = static_cast<long>(buf.samples.size());
  if (frame_len < 1 || hop < 1 || n < frame_len) {
    return frames;
  }
  const long count = (n - frame_len) / hop + 1;
  frames.reserve(static_cast<size_t>(count));
  for (long i = 0; i < count; ++i) {
    const auto begin = buf.samples.begin() + i * hop;
    frames.emplace_back(begin, begin + frame_len);
  }
  return frames;
}

AudioBuffer peak_normalize(const AudioBuffer& buf, double target_peak) {
  double peak = 0.0;
  for (double s : buf.samples) peak = std::max(peak, std::fabs(s));
  if (peak == 0.0) {
    throw Error(ErrorKind::SilentInput, "peak_normalize on all-zero buffer");
  }
  AudioBuffer out = buf;
  const double g = target_peak / peak;
  for (double& s : out.samples) s *= g;
  return out;
}

}  // namespace dpq
