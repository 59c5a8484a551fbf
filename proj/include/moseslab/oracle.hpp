#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moseslab/space.hpp"

namespace moseslab {

// Simulated hardware target. The response model factors into a
// device-independent term (tiling and unroll fit) and a device term
// (parallelism, vector width, cache capacity), so tasks keep a shared
// structure across devices while the optimum moves.
struct DeviceSpec {
  std::string id;
  double peak_gflops = 0.0;
  double parallel_units = 1.0;
  double vector_lanes = 1.0;
  double cache_bytes = 0.0;
  double measure_overhead_ms = 0.0;  // fixed per-measurement wall cost
  double noise_std = 0.0;            // relative throughput noise
  int repeats = 1;                   // timed repetitions folded into wall cost
};

struct MeasurementRecord {
  std::string task_id;
  std::vector<std::int64_t> values;
  double throughput_gflops = 0.0;
  double latency_ms = 0.0;
  double wall_cost_ms = 0.0;
  std::string device_id;
  std::uint64_t seq = 0;
};

void validate_device(const DeviceSpec& device);

// Deterministic noise-free response components, each in (0, 1].
double shared_factor(const TaskSpec& task, const Configuration& config);
double device_factor(const DeviceSpec& device, const TaskSpec& task, const Configuration& config);

// Noise-free latency in milliseconds.
double clean_latency_ms(const DeviceSpec& device, const TaskSpec& task,
                        const Configuration& config);

// One simulated measurement. Noise is keyed on (seed, device, task, config
// hash) so repeated calls with the same arguments are bit-identical and
// independent of call order.
MeasurementRecord measure(const DeviceSpec& device, const TaskSpec& task,
                          const Configuration& config, std::uint64_t seed, std::uint64_t seq);

struct BestConfig {
  Configuration config;
  double latency_ms = 0.0;
};

// Exhaustive noise-free minimum; ties resolve to the lexicographically
// smallest configuration.
BestConfig true_best(const DeviceSpec& device, const TaskSpec& task,
                     std::uint64_t cap = kEnumerationCap);

DeviceSpec parse_device(const std::string& text, const std::string& origin);
DeviceSpec load_device(const std::string& path);

}  // namespace moseslab
