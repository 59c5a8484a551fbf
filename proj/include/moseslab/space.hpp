#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "moseslab/rng.hpp"

namespace moseslab {

enum class KnobKind { Pow2, EnumInt };

struct KnobSpec {
  std::string name;
  KnobKind kind = KnobKind::EnumInt;
  std::vector<std::int64_t> domain;  // non-empty, strictly increasing
};

// A synthetic subgraph tuning task. The four real-valued descriptors drive
// both the feature encoding and the simulated hardware response.
struct TaskSpec {
  std::string id;
  double work_gflops = 0.0;
  double bytes_per_unit = 0.0;
  double ideal_log2_tiles = 0.0;   // in [0, 16]
  double ideal_log2_unroll = 0.0;  // in [0, 10]
  std::vector<KnobSpec> knobs;
};

// One point in a task's knob space; values[i] comes from knobs[i].domain.
struct Configuration {
  std::vector<std::int64_t> values;

  friend bool operator==(const Configuration&, const Configuration&) = default;
  friend auto operator<=>(const Configuration& a, const Configuration& b) {
    return a.values <=> b.values;
  }
};

struct ConfigSpace {
  TaskSpec task;
  std::uint64_t size = 0;  // product of knob domain sizes
};

inline constexpr int kFeatureDim = 16;
using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

inline constexpr std::uint64_t kEnumerationCap = 1'000'000;

// The 5-knob template every shipped task uses: tile_x, tile_y (pow2 to 64),
// unroll {0,16,64,512}, vectorize (pow2 to 16), parallel (pow2 to 256).
std::vector<KnobSpec> default_knob_template();

// Throws invalid-task if any invariant fails (empty/unsorted domains, pow2
// violations, non-positive work or bytes, descriptor ranges).
void validate_task(const TaskSpec& task);

// Throws invalid-config on arity or domain-membership violations.
void validate_config(const TaskSpec& task, const Configuration& config);

ConfigSpace build_space(const TaskSpec& task);

// Uniform per knob; consumes one draw per knob in declaration order.
Configuration sample_config(const ConfigSpace& space, RngStream& rng);

// Re-draws exactly one knob (chosen uniformly among knobs with more than one
// value) to a different value, uniform over the remainder of its domain.
Configuration mutate_config(const ConfigSpace& space, const Configuration& config, RngStream& rng);

// Device-independent feature encoding. Entries 0..9 are fixed functions of
// the template knobs and the task descriptors; 10..15 are zero padding.
FeatureVector encode_features(const TaskSpec& task, const Configuration& config);

// Row-per-config feature matrix (n x 16), the shape the cost model consumes.
Eigen::MatrixXd encode_batch(const TaskSpec& task, const std::vector<Configuration>& configs);

// Lexicographic over knob indices, first knob most significant.
std::vector<Configuration> enumerate_configs(const ConfigSpace& space,
                                             std::uint64_t cap = kEnumerationCap);

// Canonical 64-bit FNV-1a over the knob values in order, each value hashed as
// 8 little-endian bytes. Measurement noise streams are keyed off this.
std::uint64_t config_hash(const Configuration& config);

// Values of the five template knobs, extracted by name.
struct KnobView {
  std::int64_t tile_x = 1;
  std::int64_t tile_y = 1;
  std::int64_t unroll = 0;
  std::int64_t vectorize = 1;
  std::int64_t parallel = 1;
};

KnobView knob_view(const TaskSpec& task, const Configuration& config);

// Task-set file: a JSON document {"tasks": [...]} with the TaskSpec field
// names verbatim; "knobs" may be omitted to get the default template.
std::vector<TaskSpec> load_tasks(const std::string& path);
std::vector<TaskSpec> parse_tasks(const std::string& text, const std::string& origin);

}  // namespace moseslab
