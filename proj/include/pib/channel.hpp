#pragma once

// Per-camera wireless link: log-distance path loss with log-normal shadowing,
// SINR against a flat interference + thermal noise floor, Shannon capacity
// over a dedicated FDMA sub-band, and the resulting transmission delay.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pib/error.hpp"
#include "pib/random.hpp"

namespace pib::channel {

inline constexpr double kSpeedOfLight = 299792458.0;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

// Free-space loss at distance d for carrier f, in dB.
inline double free_space_loss_db(double carrier_hz, double distance_m) {
  return 20.0 * std::log10(4.0 * std::numbers::pi * distance_m * carrier_hz / kSpeedOfLight);
}

struct ChannelParams {
  double carrier_freq_hz = 2.4e9;
  double bandwidth_hz = 2e6;
  double path_loss_exponent = 3.5;
  double shadowing_sigma_db = 8.0;
  double tx_power_w = 1.0;
  // Aggregate interference at the receiver.
  double interference_power_w = 1e-15;
  double noise_density_dbm_hz = -174.0;
  double distance_m = 500.0;
  double reference_distance_m = 1.0;
  // Loss at the reference distance: free space at 2.4 GHz and 1 m with c = 3e8 m/s.
  double reference_loss_db = 40.045997;

  void validate() const {
    if (!(bandwidth_hz > 0.0)) throw ConfigError("channel: bandwidth must be positive");
    if (!(path_loss_exponent > 0.0)) throw ConfigError("channel: path loss exponent must be positive");
    if (!(reference_distance_m > 0.0)) throw ConfigError("channel: reference distance must be positive");
    if (!(distance_m > 0.0)) throw ConfigError("channel: distance must be positive");
    if (distance_m < reference_distance_m) throw ConfigError("channel: distance below reference distance");
    if (!(tx_power_w > 0.0)) throw ConfigError("channel: tx power must be positive");
    if (!(interference_power_w >= 0.0)) throw ConfigError("channel: interference power must be non-negative");
    if (!(shadowing_sigma_db >= 0.0)) throw ConfigError("channel: shadowing sigma must be non-negative");
  }
};

struct LinkState {
  double snr_linear = 0.0;
  double capacity_bps = 0.0;
  double payload_bits = 0.0;
  double delay_s = 0.0;
  double delay_norm = 0.0;
  double delay_max_s = 1.0;

  bool dead() const { return std::isinf(delay_s); }
};

inline double path_loss_db(const ChannelParams& p, double shadowing_db) {
  return p.reference_loss_db + 10.0 * p.path_loss_exponent * std::log10(p.distance_m / p.reference_distance_m) +
         shadowing_db;
}

inline double compute_sinr(const ChannelParams& p, double shadowing_db) {
  p.validate();
  const double rx_dbm = watts_to_dbm(p.tx_power_w) - path_loss_db(p, shadowing_db);
  const double noise_dbm = p.noise_density_dbm_hz + 10.0 * std::log10(p.bandwidth_hz);
  return dbm_to_watts(rx_dbm) / (p.interference_power_w + dbm_to_watts(noise_dbm));
}

inline double capacity(double bandwidth_hz, double snr_linear) {
  if (!(bandwidth_hz > 0.0)) throw ConfigError("capacity: bandwidth must be positive");
  if (!(snr_linear >= 0.0)) throw DomainError("capacity: SNR must be non-negative");
  // log1p keeps weak links distinguishable; log2 keeps log2(2) exact.
  if (snr_linear < 1e-3) return bandwidth_hz * std::log1p(snr_linear) / std::numbers::ln2;
  return bandwidth_hz * std::log2(1.0 + snr_linear);
}

// Infinite for a dead link (zero capacity).
inline double delay(double payload_bits, double capacity_bps) {
  if (!(payload_bits >= 0.0)) throw DomainError("delay: payload must be non-negative");
  if (!(capacity_bps >= 0.0)) throw DomainError("delay: capacity must be non-negative");
  if (capacity_bps == 0.0) return std::numeric_limits<double>::infinity();
  return payload_bits / capacity_bps;
}

inline double normalize_delay(double delay_s, double delay_max_s) {
  if (!(delay_max_s > 0.0)) throw ConfigError("normalize_delay: delay_max must be positive");
  if (!(delay_s >= 0.0)) throw DomainError("normalize_delay: delay must be non-negative");
  return std::min(delay_s / delay_max_s, 1.0);
}

inline double sample_shadowing(Rng& rng, const ChannelParams& p) { return rng.normal(0.0, p.shadowing_sigma_db); }

inline LinkState evaluate_link(const ChannelParams& p, double shadowing_db, double payload_bits, double delay_max_s) {
  LinkState s;
  s.snr_linear = compute_sinr(p, shadowing_db);
  s.capacity_bps = capacity(p.bandwidth_hz, s.snr_linear);
  s.payload_bits = payload_bits;
  s.delay_s = delay(payload_bits, s.capacity_bps);
  s.delay_max_s = delay_max_s;
  s.delay_norm = normalize_delay(s.delay_s, delay_max_s);
  return s;
}

}  // namespace pib::channel
