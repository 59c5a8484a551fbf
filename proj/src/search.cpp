#include "moseslab/search.hpp"

#include <algorithm>

#include "moseslab/errors.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {
namespace {

void check_params(const SearchParams& p) {
  if (p.population < 1 || p.mutation_count < 1 || p.survivors < 1)
    fail(ErrorCode::InvalidConfig, "population, mutation_count and survivors must be positive");
  if (p.generations < 0) fail(ErrorCode::InvalidConfig, "generations must be non-negative");
  if (p.survivors > p.population)
    fail(ErrorCode::InvalidConfig, "survivors cannot exceed the population");
  if (p.epsilon_random < 0.0 || p.epsilon_random > 1.0)
    fail(ErrorCode::InvalidConfig, "epsilon_random must lie in [0,1]");
}

std::vector<ScoredCandidate> score_all(const ScoreFn& scorer, std::vector<Configuration> configs) {
  const std::vector<double> scores = scorer(configs);
  if (scores.size() != configs.size())
    fail(ErrorCode::DimMismatch, "scorer returned a wrong-length score list");
  std::vector<ScoredCandidate> out;
  out.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i)
    out.push_back({std::move(configs[i]), scores[i]});
  return out;
}

void sort_desc(std::vector<ScoredCandidate>& pop) {
  std::sort(pop.begin(), pop.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.config < b.config;
  });
}

}  // namespace

std::vector<ScoredCandidate> evolve(const ScoreFn& scorer, const ConfigSpace& space,
                                    const SearchParams& params) {
  check_params(params);
  KeyBuilder key;
  key.add(params.seed).add("evolve");
  RngStream rng(key.value());

  std::vector<Configuration> configs;
  configs.reserve(params.population);
  for (int i = 0; i < params.population; ++i) configs.push_back(sample_config(space, rng));
  std::vector<ScoredCandidate> pop = score_all(scorer, std::move(configs));
  sort_desc(pop);

  for (int gen = 0; gen < params.generations; ++gen) {
    const auto keep = std::min<std::size_t>(params.survivors, pop.size());
    std::vector<Configuration> next;
    next.reserve(keep * (1 + params.mutation_count));
    for (std::size_t s = 0; s < keep; ++s) next.push_back(pop[s].config);
    for (std::size_t s = 0; s < keep; ++s) {
      for (int k = 0; k < params.mutation_count; ++k) {
        if (rng.uniform01() < params.epsilon_random)
          next.push_back(sample_config(space, rng));
        else
          next.push_back(mutate_config(space, pop[s].config, rng));
      }
    }
    pop = score_all(scorer, std::move(next));
    sort_desc(pop);
  }
  return pop;
}

std::vector<ScoredCandidate> evolve(const CostModelParams& model, const ConfigSpace& space,
                                    const SearchParams& params) {
  const ScoreFn scorer = [&](const std::vector<Configuration>& configs) {
    const Eigen::VectorXd s = predict(model, encode_batch(space.task, configs));
    return std::vector<double>(s.data(), s.data() + s.size());
  };
  return evolve(scorer, space, params);
}

std::vector<ScoredCandidate> select_batch(const std::vector<ScoredCandidate>& candidates,
                                          const std::unordered_set<std::uint64_t>& already_measured,
                                          int batch_size) {
  if (batch_size < 1) fail(ErrorCode::InvalidConfig, "batch size must be positive");
  std::vector<ScoredCandidate> out;
  std::unordered_set<std::uint64_t> taken;
  for (const auto& cand : candidates) {
    if (static_cast<int>(out.size()) >= batch_size) break;
    const std::uint64_t h = config_hash(cand.config);
    if (already_measured.contains(h) || !taken.insert(h).second) continue;
    out.push_back(cand);
  }
  return out;
}

}  // namespace moseslab
