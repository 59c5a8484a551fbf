#pragma once

#include <vector>

namespace moseslab {

// How one task's trial budget is spent: the first batch_sizes.size() batches
// are measured on hardware and train the model, the rest of the budget is
// prediction-only.
struct MeasurementPlan {
  int total_trials = 0;
  double train_fraction = 0.9;  // p
  int num_batches = 5;          // q
  std::vector<int> batch_sizes;
  int prediction_trials = 0;
};

struct ControllerState {
  std::vector<double> batch_means;
  double cv_threshold = 0.05;  // tau
  bool terminated = false;
};

// Balanced split: floor(p * total) measured trials across q batches whose
// sizes differ by at most one, the remainder prediction-only.
MeasurementPlan plan_split(int total_trials, double train_fraction, int num_batches);

// Population standard deviation over arithmetic mean.
double batch_cv(const std::vector<double>& batch_means);

// Appends the new batch mean; once at least 3 means are recorded and their
// dispersion |CV| drops below tau, the terminated flag latches true. The
// magnitude is used because the statistic is scale-free: a negative score
// scale must not flip the certainty test.
bool should_terminate(ControllerState& state, double new_batch_mean);

}  // namespace moseslab
