#pragma once

#include "affold/collapse.hpp"
#include "affold/data_io.hpp"
#include "affold/errors.hpp"
#include "affold/forward.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#if defined(__linux__)
#include <sched.h>
#endif

// Single-prediction timing of layered networks and collapsed maps.

namespace affold {

struct BenchReport {
  std::string variant;
  std::size_t reps = 0;
  double median_us = 0.0;
  double p25_us = 0.0;
  double p75_us = 0.0;
  std::size_t flops = 0;
  double speedup = 1.0; // baseline median / this median
};

struct BenchOptions {
  std::size_t reps = 1000;
  std::size_t warmup = 100;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinBenchReps = 30;

inline std::size_t input_length(const Model& m) {
  return std::visit([](const auto& v) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Network>) return v.input_shape.size();
    else return v.in_dim();
  }, m);
}

inline std::size_t flops(const Model& m) {
  return std::visit([](const auto& v) { return flops(v); }, m);
}

inline Vector predict_logits(const Model& m, std::span<const double> x) {
  if (const auto* net = std::get_if<Network>(&m)) return forward_layered(*net, x).logits;
  return forward_collapsed(std::get<AffineMap>(m), x);
}

/// Linear-interpolated quantile of sorted samples.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Restricts the calling thread to one logical core; returns false where unsupported.
inline bool pin_to_single_core() {
#if defined(__linux__)
  cpu_set_t current;
  CPU_ZERO(&current);
  if (sched_getaffinity(0, sizeof(current), &current) != 0) return false;
  for (int cpu = 0; cpu < CPU_SETSIZE; ++cpu) {
    if (CPU_ISSET(cpu, &current)) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(cpu, &one);
      return sched_setaffinity(0, sizeof(one), &one) == 0;
    }
  }
#endif
  return false;
}

inline std::vector<Vector> bench_inputs(std::size_t length, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> inputs(count, Vector(length));
  for (auto& x : inputs) {
    for (double& v : x) v = uniform01(rng);
  }
  return inputs;
}

namespace detail {

inline volatile double bench_sink = 0.0;

inline BenchReport time_model(const std::string& name, const Model& model, const std::vector<Vector>& inputs,
                              const BenchOptions& opt) {
  std::size_t cursor = 0;
  auto next = [&]() -> const Vector& {
    const Vector& x = inputs[cursor];
    cursor = (cursor + 1) % inputs.size();
    return x;
  };
  for (std::size_t w = 0; w < opt.warmup; ++w) bench_sink = bench_sink + predict_logits(model, next())[0];
  std::vector<double> samples;
  samples.reserve(opt.reps);
  for (std::size_t r = 0; r < opt.reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    double acc = 0.0;
    for (std::size_t b = 0; b < opt.batch; ++b) acc += predict_logits(model, next())[0];
    const auto stop = std::chrono::steady_clock::now();
    bench_sink = bench_sink + acc;
    samples.push_back(std::chrono::duration<double, std::micro>(stop - start).count() / static_cast<double>(opt.batch));
  }
  std::sort(samples.begin(), samples.end());
  BenchReport rep;
  rep.variant = name;
  rep.reps = opt.reps;
  rep.p25_us = quantile(samples, 0.25);
  rep.median_us = quantile(samples, 0.5);
  rep.p75_us = quantile(samples, 0.75);
  rep.flops = flops(model);
  return rep;
}

} // namespace detail

/// Times every model on the same seeded inputs. The first model is the
/// baseline; each report's speedup is baseline median / own median.
inline std::vector<BenchReport> bench_predict(const std::vector<std::pair<std::string, Model>>& models,
                                              const BenchOptions& opt) {
  if (models.empty()) return {};
  if (opt.reps < kMinBenchReps) throw ConfigError("benchmarks need at least " + std::to_string(kMinBenchReps) + " repetitions");
  if (opt.batch == 0) throw ConfigError("batch must be positive");
  const std::size_t len = input_length(models.front().second);
  for (const auto& [name, m] : models) {
    if (input_length(m) != len) throw DimensionError("model '" + name + "' takes a different input length");
  }
  const auto inputs = bench_inputs(len, 64, opt.seed);
  std::vector<BenchReport> reports;
  for (const auto& [name, m] : models) reports.push_back(detail::time_model(name, m, inputs, opt));
  for (auto& r : reports) r.speedup = reports.front().median_us / r.median_us;
  return reports;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& reports) {
  const auto old = os.precision(17);
  os << "variant,reps,median_us,p25_us,p75_us,flops,speedup\n";
  for (const auto& r : reports) {
    os << r.variant << ',' << r.reps << ',' << r.median_us << ',' << r.p25_us << ',' << r.p75_us << ',' << r.flops << ','
       << r.speedup << '\n';
  }
  os.precision(old);
}

} // namespace affold
