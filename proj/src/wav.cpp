#include "bsync/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

namespace bsync {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  f.write(b, 4);
}

void put_u16(std::ofstream& f, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  f.write(b, 2);
}

}  // namespace

void write_wav_pcm16(const std::string& path, const Eigen::Ref<const ArrayXd>& samples,
                     double sample_rate_hz) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open for writing: " + path);

  const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
  const std::uint32_t rate = static_cast<std::uint32_t>(sample_rate_hz);
  const std::uint32_t data_bytes = n * 2;

  f.write("RIFF", 4);
  put_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(f, 16);
  put_u16(f, 1);  // PCM
  put_u16(f, 1);  // mono
  put_u32(f, rate);
  put_u32(f, rate * 2);
  put_u16(f, 2);
  put_u16(f, 16);
  f.write("data", 4);
  put_u32(f, data_bytes);
  for (Index i = 0; i < samples.size(); ++i) {
    const double clamped = std::clamp(samples[i], -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    put_u16(f, static_cast<std::uint16_t>(s));
  }
  if (!f) fail(errc::io, "write failed: " + path);
}

}  // namespace bsync
