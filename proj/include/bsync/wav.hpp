#pragma once

#include <string>

#include "bsync/common.hpp"

namespace bsync {

// Mono 16-bit PCM writer; samples are clamped to [-1, 1].
void write_wav_pcm16(const std::string& path, const Eigen::Ref<const ArrayXd>& samples,
                     double sample_rate_hz);

}  // namespace bsync
