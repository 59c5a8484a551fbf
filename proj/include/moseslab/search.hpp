#pragma once

#include <cstdint>
#include <functional>
#include <unordered_set>
#include <vector>

#include "moseslab/model.hpp"
#include "moseslab/space.hpp"

namespace moseslab {

struct SearchParams {
  int population = 128;
  int generations = 4;
  int mutation_count = 4;  // mutants emitted per survivor
  int survivors = 32;
  double epsilon_random = 0.05;  // chance a mutant slot is a fresh random draw
  std::uint64_t seed = 0;
};

struct ScoredCandidate {
  Configuration config;
  double score = 0.0;
};

// Batch scorer: configurations in, one predicted score per configuration out.
using ScoreFn = std::function<std::vector<double>(const std::vector<Configuration>&)>;

// Elitist evolutionary search. Generation 0 is a uniform random population;
// each later generation keeps the top `survivors`, emits `mutation_count`
// single-knob mutants per survivor (a slot turns into a fresh random draw
// with probability epsilon_random), and the survivors stay in the pool. The
// returned population is sorted by score descending, ties by lexicographic
// config order, fully determined by the seed.
std::vector<ScoredCandidate> evolve(const ScoreFn& scorer, const ConfigSpace& space,
                                    const SearchParams& params);
std::vector<ScoredCandidate> evolve(const CostModelParams& model, const ConfigSpace& space,
                                    const SearchParams& params);

// Highest-scored candidates whose config hash is neither in already_measured
// nor earlier in the batch, preserving order, at most batch_size of them.
std::vector<ScoredCandidate> select_batch(const std::vector<ScoredCandidate>& candidates,
                                          const std::unordered_set<std::uint64_t>& already_measured,
                                          int batch_size);

}  // namespace moseslab
