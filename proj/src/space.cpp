#include "moseslab/space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moseslab/errors.hpp"

namespace moseslab {
namespace {

bool is_pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

double log2d(double v) { return std::log2(v); }

const KnobSpec* find_knob(const TaskSpec& task, const std::string& name) {
  for (const auto& k : task.knobs) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace

std::vector<KnobSpec> default_knob_template() {
  return {
      {"tile_x", KnobKind::Pow2, {1, 2, 4, 8, 16, 32, 64}},
      {"tile_y", KnobKind::Pow2, {1, 2, 4, 8, 16, 32, 64}},
      {"unroll", KnobKind::EnumInt, {0, 16, 64, 512}},
      {"vectorize", KnobKind::Pow2, {1, 2, 4, 8, 16}},
      {"parallel", KnobKind::Pow2, {1, 2, 4, 8, 16, 32, 64, 128, 256}},
  };
}

void validate_task(const TaskSpec& task) {
  if (task.id.empty()) fail(ErrorCode::InvalidTask, "task id must be non-empty");
  if (!(task.work_gflops > 0.0) || !std::isfinite(task.work_gflops))
    fail(ErrorCode::InvalidTask, "task " + task.id + ": work_gflops must be positive");
  if (!(task.bytes_per_unit > 0.0) || !std::isfinite(task.bytes_per_unit))
    fail(ErrorCode::InvalidTask, "task " + task.id + ": bytes_per_unit must be positive");
  if (!(task.ideal_log2_tiles >= 0.0 && task.ideal_log2_tiles <= 16.0))
    fail(ErrorCode::InvalidTask, "task " + task.id + ": ideal_log2_tiles out of [0,16]");
  if (!(task.ideal_log2_unroll >= 0.0 && task.ideal_log2_unroll <= 10.0))
    fail(ErrorCode::InvalidTask, "task " + task.id + ": ideal_log2_unroll out of [0,10]");
  if (task.knobs.empty()) fail(ErrorCode::InvalidTask, "task " + task.id + ": no knobs");
  for (const auto& knob : task.knobs) {
    if (knob.name.empty())
      fail(ErrorCode::InvalidTask, "task " + task.id + ": knob with empty name");
    if (knob.domain.empty())
      fail(ErrorCode::InvalidTask, "task " + task.id + ": knob " + knob.name + " has empty domain");
    for (std::size_t i = 1; i < knob.domain.size(); ++i) {
      if (knob.domain[i - 1] >= knob.domain[i])
        fail(ErrorCode::InvalidTask,
             "task " + task.id + ": knob " + knob.name + " domain must be strictly increasing");
    }
    if (knob.kind == KnobKind::Pow2) {
      for (auto v : knob.domain) {
        if (!is_pow2(v))
          fail(ErrorCode::InvalidTask,
               "task " + task.id + ": knob " + knob.name + " has non-power-of-two value");
      }
    }
  }
}

void validate_config(const TaskSpec& task, const Configuration& config) {
  if (config.values.size() != task.knobs.size())
    fail(ErrorCode::InvalidConfig, "task " + task.id + ": config arity " +
                                       std::to_string(config.values.size()) + " != knob count " +
                                       std::to_string(task.knobs.size()));
  for (std::size_t i = 0; i < config.values.size(); ++i) {
    const auto& dom = task.knobs[i].domain;
    if (!std::binary_search(dom.begin(), dom.end(), config.values[i]))
      fail(ErrorCode::InvalidConfig, "task " + task.id + ": value " +
                                         std::to_string(config.values[i]) +
                                         " not in domain of knob " + task.knobs[i].name);
  }
}

ConfigSpace build_space(const TaskSpec& task) {
  validate_task(task);
  std::uint64_t size = 1;
  for (const auto& knob : task.knobs) {
    const std::uint64_t n = knob.domain.size();
    if (size > UINT64_MAX / n) fail(ErrorCode::SpaceTooLarge, "task " + task.id);
    size *= n;
  }
  return ConfigSpace{task, size};
}

Configuration sample_config(const ConfigSpace& space, RngStream& rng) {
  Configuration cfg;
  cfg.values.reserve(space.task.knobs.size());
  for (const auto& knob : space.task.knobs)
    cfg.values.push_back(knob.domain[rng.below(knob.domain.size())]);
  return cfg;
}

Configuration mutate_config(const ConfigSpace& space, const Configuration& config,
                            RngStream& rng) {
  validate_config(space.task, config);
  std::vector<std::size_t> mutable_knobs;
  for (std::size_t i = 0; i < space.task.knobs.size(); ++i) {
    if (space.task.knobs[i].domain.size() > 1) mutable_knobs.push_back(i);
  }
  if (mutable_knobs.empty())
    fail(ErrorCode::ImmutableSpace, "task " + space.task.id + ": every knob domain is a singleton");
  const std::size_t ki = mutable_knobs[rng.below(mutable_knobs.size())];
  const auto& dom = space.task.knobs[ki].domain;
  // Draw over the domain minus the current value: index past the old slot.
  const auto old_pos = static_cast<std::size_t>(
      std::lower_bound(dom.begin(), dom.end(), config.values[ki]) - dom.begin());
  std::size_t pick = static_cast<std::size_t>(rng.below(dom.size() - 1));
  if (pick >= old_pos) ++pick;
  Configuration out = config;
  out.values[ki] = dom[pick];
  return out;
}

KnobView knob_view(const TaskSpec& task, const Configuration& config) {
  validate_config(task, config);
  KnobView view;
  const auto value_of = [&](const std::string& name, std::int64_t fallback) {
    const KnobSpec* k = find_knob(task, name);
    if (k == nullptr) return fallback;
    const auto idx = static_cast<std::size_t>(k - task.knobs.data());
    return config.values[idx];
  };
  view.tile_x = value_of("tile_x", 1);
  view.tile_y = value_of("tile_y", 1);
  view.unroll = value_of("unroll", 0);
  view.vectorize = value_of("vectorize", 1);
  view.parallel = value_of("parallel", 1);
  return view;
}

FeatureVector encode_features(const TaskSpec& task, const Configuration& config) {
  const KnobView v = knob_view(task, config);
  const double tx = static_cast<double>(v.tile_x);
  const double ty = static_cast<double>(v.tile_y);
  const double un = static_cast<double>(v.unroll);
  const double footprint = task.bytes_per_unit * tx * ty * std::max<double>(1.0, un);

  FeatureVector f = FeatureVector::Zero();
  f[0] = log2d(tx) / 6.0;
  f[1] = log2d(ty) / 6.0;
  f[2] = log2d(1.0 + un) / 10.0;
  f[3] = log2d(static_cast<double>(v.vectorize)) / 4.0;
  f[4] = log2d(static_cast<double>(v.parallel)) / 8.0;
  f[5] = log2d(tx * ty) / 12.0;
  f[6] = log2d(footprint) / 24.0;
  f[7] = std::clamp(std::log10(task.work_gflops) / 3.0, 0.0, 1.0);
  f[8] = task.ideal_log2_tiles / 16.0;
  f[9] = task.ideal_log2_unroll / 10.0;
  return f;
}

Eigen::MatrixXd encode_batch(const TaskSpec& task, const std::vector<Configuration>& configs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(configs.size()), kFeatureDim);
  for (std::size_t i = 0; i < configs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode_features(task, configs[i]).transpose();
  return out;
}

std::vector<Configuration> enumerate_configs(const ConfigSpace& space, std::uint64_t cap) {
  if (space.size > cap)
    fail(ErrorCode::SpaceTooLarge, "task " + space.task.id + ": " + std::to_string(space.size) +
                                       " configs exceeds cap " + std::to_string(cap));
  const std::size_t nk = space.task.knobs.size();
  std::vector<Configuration> out;
  out.reserve(space.size);
  std::vector<std::size_t> idx(nk, 0);
  while (true) {
    Configuration cfg;
    cfg.values.reserve(nk);
    for (std::size_t i = 0; i < nk; ++i)
      cfg.values.push_back(space.task.knobs[i].domain[idx[i]]);
    out.push_back(std::move(cfg));
    // Odometer increment, last knob fastest.
    std::size_t i = nk;
    while (i > 0) {
      --i;
      if (++idx[i] < space.task.knobs[i].domain.size()) break;
      idx[i] = 0;
      if (i == 0) return out;
    }
  }
}

std::uint64_t config_hash(const Configuration& config) {
  KeyBuilder key;
  for (auto v : config.values) key.add(static_cast<std::uint64_t>(v));
  return key.value();
}

namespace {

TaskSpec parse_task(const nlohmann::json& j, const std::string& origin) {
  const auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field))
      fail(ErrorCode::MissingField, origin + ": task missing field '" + std::string(field) + "'");
    return j.at(field);
  };
  TaskSpec task;
  task.id = need("id").get<std::string>();
  task.work_gflops = need("work_gflops").get<double>();
  task.bytes_per_unit = need("bytes_per_unit").get<double>();
  task.ideal_log2_tiles = need("ideal_log2_tiles").get<double>();
  task.ideal_log2_unroll = need("ideal_log2_unroll").get<double>();
  if (j.contains("knobs")) {
    for (const auto& jk : j.at("knobs")) {
      KnobSpec knob;
      if (!jk.contains("name") || !jk.contains("kind") || !jk.contains("domain"))
        fail(ErrorCode::MissingField, origin + ": knob needs name, kind, domain");
      knob.name = jk.at("name").get<std::string>();
      const auto kind = jk.at("kind").get<std::string>();
      if (kind == "pow2")
        knob.kind = KnobKind::Pow2;
      else if (kind == "enum")
        knob.kind = KnobKind::EnumInt;
      else
        fail(ErrorCode::ParseError, origin + ": unknown knob kind '" + kind + "'");
      knob.domain = jk.at("domain").get<std::vector<std::int64_t>>();
      task.knobs.push_back(std::move(knob));
    }
  } else {
    task.knobs = default_knob_template();
  }
  validate_task(task);
  return task;
}

}  // namespace

std::vector<TaskSpec> parse_tasks(const std::string& text, const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
  if (!doc.contains("tasks") || !doc.at("tasks").is_array())
    fail(ErrorCode::MissingField, origin + ": expected top-level 'tasks' array");
  std::vector<TaskSpec> tasks;
  for (const auto& jt : doc.at("tasks")) tasks.push_back(parse_task(jt, origin));
  if (tasks.empty()) fail(ErrorCode::InvalidTask, origin + ": no tasks defined");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t k = i + 1; k < tasks.size(); ++k) {
      if (tasks[i].id == tasks[k].id)
        fail(ErrorCode::InvalidTask, origin + ": duplicate task id " + tasks[i].id);
    }
  }
  return tasks;
}

std::vector<TaskSpec> load_tasks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open task file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tasks(buf.str(), path);
}

}  // namespace moseslab
