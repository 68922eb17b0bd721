// Simulated wireless layer. Each device sees a complex block-fading
// coefficient per round (both minislots of a round reuse it; the product
// estimators rely on that) plus fresh additive noise per minislot. The server
// only ever consumes real parts; the channel's phase shift is absorbed into
// the gradient estimate rather than corrected.

#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "otafl/rng.hpp"

namespace otafl {

struct ChannelConfig {
  // Standard deviation of the real part of the fading coefficient. Re and Im
  // are drawn independently N(0, sigma_h^2), so E[h_real^2] = sigma_h^2 --
  // the moment all bounds consume.
  double sigma_h = 1.0;
  // Noise standard deviation per minislot. sigma_slot overrides individual
  // slots (index 0..2) when >= 0; used for bound experiments.
  double sigma_n = 0.0;
  double sigma_slot[3] = {-1.0, -1.0, -1.0};
  // Optional per-device sigma_h; empty means common.
  std::vector<double> sigma_h_per_device;

  double device_sigma_h(std::size_t device) const {
    if (sigma_h_per_device.empty()) return sigma_h;
    return sigma_h_per_device.at(device);
  }
  double slot_sigma(int slot) const {
    double s = sigma_slot[slot - 1];
    return s >= 0.0 ? s : sigma_n;
  }
  void validate() const {
    if (!(sigma_h > 0.0) && sigma_h_per_device.empty())
      throw std::invalid_argument("channel: sigma_h must be > 0");
    for (double s : sigma_h_per_device)
      if (!(s > 0.0))
        throw std::invalid_argument("channel: per-device sigma_h must be > 0");
    if (sigma_n < 0.0)
      throw std::invalid_argument("channel: sigma_n must be >= 0");
  }
};

struct ChannelDraw {
  std::complex<double> h_complex;
  double h_real = 0.0;  // Re(h_complex), the part that reaches the estimate
};

// Fading coefficient for (device, round). The slot tag defaults to 0: within
// a round both minislots share the draw (block fading). Distinct tags give
// independent draws for tests that need them.
inline ChannelDraw sample_channel(std::size_t device, std::size_t round,
                                  const ChannelConfig& cfg, uint64_t seed,
                                  std::size_t slot = 0) {
  Rng rng(seed, Stream::Channel, device, round, slot);
  double s = cfg.device_sigma_h(device);
  ChannelDraw draw;
  draw.h_complex = {rng.gaussian(0.0, s), rng.gaussian(0.0, s)};
  draw.h_real = draw.h_complex.real();
  return draw;
}

// Complex receiver noise for (round, slot), slot in {1, 2, 3}.
inline std::complex<double> sample_noise(std::size_t round, int slot,
                                         const ChannelConfig& cfg,
                                         uint64_t seed) {
  Rng rng(seed, Stream::Noise, round, static_cast<uint64_t>(slot));
  double s = cfg.slot_sigma(slot);
  return {rng.gaussian(0.0, s), rng.gaussian(0.0, s)};
}

struct Precoder {
  std::vector<double> a;  // a_i = 1 / E[h_{i,k}^2], one per device
};

// a_i = 1/sigma_{h,i}^2, so a_i * E[h_i^2] = 1 and the slot-product estimate
// recovers the unweighted gradient sum.
inline Precoder precoder_constants(const ChannelConfig& cfg,
                                   std::size_t n_devices) {
  Precoder p;
  p.a.resize(n_devices);
  for (std::size_t i = 0; i < n_devices; ++i) {
    double s = cfg.device_sigma_h(i);
    if (!(s > 0.0))
      throw std::invalid_argument("precoder: zero channel variance");
    p.a[i] = 1.0 / (s * s);
  }
  return p;
}

// Full complex superposition of one minislot: sum_i payload_i * h~_i + n~.
inline std::complex<double> ota_minislot_complex(
    const std::vector<double>& payloads, const std::vector<ChannelDraw>& draws,
    std::complex<double> noise) {
  if (payloads.size() != draws.size())
    throw std::invalid_argument("ota_minislot: payload/draw count mismatch");
  std::complex<double> acc = noise;
  for (std::size_t i = 0; i < payloads.size(); ++i)
    acc += payloads[i] * draws[i].h_complex;
  return acc;
}

// What the server keeps: Re(sum_i payload_i * h~_i + n~)
//                      = sum_i payload_i * h_i + Re(n~).
inline double ota_minislot(const std::vector<double>& payloads,
                           const std::vector<ChannelDraw>& draws,
                           std::complex<double> noise) {
  return ota_minislot_complex(payloads, draws, noise).real();
}

}  // namespace otafl
