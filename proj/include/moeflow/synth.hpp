#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "moeflow/errors.hpp"
#include "moeflow/ingest.hpp"
#include "moeflow/rng.hpp"

namespace moeflow {

enum class AnomalyKind { Spike, LevelShift, CorrelationBreak };

inline const char* anomaly_kind_name(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::Spike: return "spike";
    case AnomalyKind::LevelShift: return "level-shift";
    case AnomalyKind::CorrelationBreak: return "correlation-break";
  }
  return "?";
}

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::Spike;
  std::size_t start = 0;
  std::size_t length = 1;
  double magnitude = 1.0;
  std::vector<std::size_t> entities;  // subset of [0, K)
};

struct SinusoidSpec {
  double freq = 0.01;  // cycles per step
  double amp = 1.0;
  double phase = 0.0;
};

struct GenConfig {
  std::size_t entities = 5;
  std::size_t length = 4000;
  std::uint64_t seed = 0;
  std::vector<SinusoidSpec> base;           // one per entity
  std::vector<std::vector<double>> coupling;  // K x K mixing matrix
  double noise_std = 0.1;
  std::vector<AnomalySpec> anomalies;
};

namespace detail {

inline double base_signal(const GenConfig& cfg, std::size_t j, std::size_t t) {
  const SinusoidSpec& s = cfg.base[j];
  return s.amp * std::sin(2.0 * std::numbers::pi * s.freq *
                              static_cast<double>(t) +
                          s.phase);
}

inline void validate_gen_config(const GenConfig& cfg) {
  const std::size_t k = cfg.entities;
  if (k == 0 || cfg.length == 0) raise(ErrorKind::Config, "empty generator config");
  if (cfg.base.size() != k)
    raise(ErrorKind::Config, "generator needs one sinusoid per entity");
  if (cfg.coupling.size() != k)
    raise(ErrorKind::Config, "coupling matrix must be K x K");
  for (const auto& row : cfg.coupling) {
    if (row.size() != k) raise(ErrorKind::Config, "coupling matrix must be K x K");
    for (double v : row)
      if (!std::isfinite(v)) raise(ErrorKind::Config, "coupling must be finite");
  }
  for (const AnomalySpec& a : cfg.anomalies) {
    if (a.length < 1) raise(ErrorKind::Config, "anomaly length must be >= 1");
    if (!std::isfinite(a.magnitude))
      raise(ErrorKind::Config, "anomaly magnitude must be finite");
    if (a.start + a.length > cfg.length)
      raise(ErrorKind::Config, "anomaly interval exceeds series length");
    for (std::size_t e : a.entities)
      if (e >= k) raise(ErrorKind::Config, "anomaly entity out of range");
  }
  // conflicting kinds on the same (entity, index) are rejected
  for (std::size_t i = 0; i < cfg.anomalies.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.anomalies.size(); ++j) {
      const AnomalySpec& a = cfg.anomalies[i];
      const AnomalySpec& b = cfg.anomalies[j];
      if (a.kind == b.kind) continue;
      const bool overlap_time =
          a.start < b.start + b.length && b.start < a.start + a.length;
      if (!overlap_time) continue;
      for (std::size_t ea : a.entities)
        for (std::size_t eb : b.entities)
          if (ea == eb)
            raise(ErrorKind::Config,
                  std::string("conflicting anomalies (") + anomaly_kind_name(a.kind) +
                      " vs " + anomaly_kind_name(b.kind) + ") overlap on entity " +
                      std::to_string(ea));
    }
}

}  // namespace detail

// Normal signal = coupling x sinusoids + Gaussian noise, anomalies injected on
// top, labels set exactly on anomaly-covered indices. The noise stream is
// counter-based on (seed, entity, index), so identical configs produce bitwise
// identical output regardless of generation order.
inline RawSeries generate(const GenConfig& cfg) {
  detail::validate_gen_config(cfg);
  const std::size_t k = cfg.entities;
  const std::size_t len = cfg.length;

  RawSeries out;
  out.entity_names.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.entity_names.push_back("e" + std::to_string(i));
  out.values.assign(k, std::vector<double>(len, 0.0));
  out.labels.assign(len, 0);

  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t t = 0; t < len; ++t) {
      double clean = 0.0;
      for (std::size_t j = 0; j < k; ++j)
        clean += cfg.coupling[i][j] * detail::base_signal(cfg, j, t);
      out.values[i][t] =
          clean + cfg.noise_std * counter_gaussian(cfg.seed, i, t);
    }

  for (const AnomalySpec& a : cfg.anomalies) {
    for (std::size_t t = a.start; t < a.start + a.length; ++t) {
      out.labels[t] = 1;
      for (std::size_t e : a.entities) {
        switch (a.kind) {
          case AnomalyKind::Spike:
          case AnomalyKind::LevelShift:
            out.values[e][t] += a.magnitude;
            break;
          case AnomalyKind::CorrelationBreak: {
            // decouple the entity: its own detuned sinusoid replaces the mix
            const SinusoidSpec& s = cfg.base[e];
            const double detuned =
                s.amp * std::sin(2.0 * std::numbers::pi * s.freq *
                                     (1.0 + 0.5 * std::abs(a.magnitude)) *
                                     static_cast<double>(t) +
                                 s.phase + 1.0);
            out.values[e][t] =
                detuned + cfg.noise_std * counter_gaussian(cfg.seed, e, t);
            break;
          }
        }
      }
    }
  }
  return out;
}

// Desk-scale default: 5 coupled entities, 4000 steps, 8 spikes and 2 level
// shifts covering ~4% of points. Magnitudes are kept moderate relative to the
// noise floor so the detection task is non-trivial.
inline GenConfig default_gen_config(std::uint64_t seed = 0) {
  GenConfig cfg;
  cfg.entities = 5;
  cfg.length = 4000;
  cfg.seed = seed;
  cfg.noise_std = 0.1;
  cfg.base = {
      {0.011, 1.00, 0.00}, {0.017, 0.90, 1.30}, {0.007, 1.10, 2.10},
      {0.023, 0.80, 0.70}, {0.013, 1.05, 2.80},
  };
  cfg.coupling = {
      {1.00, 0.45, 0.00, 0.30, 0.00},
      {0.40, 1.00, 0.35, 0.00, 0.00},
      {0.00, 0.30, 1.00, 0.00, 0.45},
      {0.35, 0.00, 0.00, 1.00, 0.30},
      {0.00, 0.00, 0.40, 0.25, 1.00},
  };
  // 8 spikes (5 points each) + 2 level shifts (60 points each): 160 of 4000
  // points, i.e. 4%. Both the 60% train and 40% test regions are contaminated.
  cfg.anomalies = {
      {AnomalyKind::Spike, 310, 5, 0.55, {0}},
      {AnomalyKind::Spike, 760, 5, -0.50, {2}},
      {AnomalyKind::Spike, 1150, 5, 0.45, {1, 3}},
      {AnomalyKind::Spike, 1630, 5, -0.55, {4}},
      {AnomalyKind::Spike, 2080, 5, 0.50, {2}},
      {AnomalyKind::Spike, 2660, 5, -0.45, {0, 4}},
      {AnomalyKind::Spike, 3090, 5, 0.55, {3}},
      {AnomalyKind::Spike, 3610, 5, -0.50, {1}},
      {AnomalyKind::LevelShift, 1840, 60, 0.40, {1}},
      {AnomalyKind::LevelShift, 3260, 60, -0.40, {3}},
  };
  return cfg;
}

inline void write_csv(const RawSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path);
  for (std::size_t i = 0; i < series.entity_names.size(); ++i) {
    if (i) out << ',';
    out << series.entity_names[i];
  }
  if (series.has_labels()) out << ",label";
  out << '\n';
  char buf[40];
  for (std::size_t t = 0; t < series.length(); ++t) {
    for (std::size_t i = 0; i < series.entities(); ++i) {
      if (i) out << ',';
      std::snprintf(buf, sizeof buf, "%.17g", series.values[i][t]);
      out << buf;
    }
    if (series.has_labels()) out << ',' << (series.labels[t] ? '1' : '0');
    out << '\n';
  }
  if (!out) raise(ErrorKind::Io, "write failed: " + path);
}

}  // namespace moeflow
