#include "moseslab/controller.hpp"

#include <cmath>
#include <string>

#include "moseslab/errors.hpp"

namespace moseslab {

MeasurementPlan plan_split(int total_trials, double train_fraction, int num_batches) {
  if (num_batches < 2) fail(ErrorCode::InvalidConfig, "need at least 2 batches");
  if (total_trials < num_batches)
    fail(ErrorCode::InvalidConfig, "total trials below the batch count");
  if (!(train_fraction > 0.0) || train_fraction > 1.0)
    fail(ErrorCode::InvalidConfig, "train fraction must lie in (0,1]");
  // The epsilon absorbs representation error in p so that e.g. 0.7 * 10
  // floors to 7, not 6.
  const int measured =
      static_cast<int>(std::floor(train_fraction * static_cast<double>(total_trials) + 1e-9));
  if (measured < num_batches)
    fail(ErrorCode::InfeasibleSplit, std::to_string(measured) + " measured trials cannot fill " +
                                         std::to_string(num_batches) + " batches");
  MeasurementPlan plan;
  plan.total_trials = total_trials;
  plan.train_fraction = train_fraction;
  plan.num_batches = num_batches;
  plan.prediction_trials = total_trials - measured;
  const int base = measured / num_batches;
  const int rem = measured % num_batches;
  for (int b = 0; b < num_batches; ++b) plan.batch_sizes.push_back(base + (b < rem ? 1 : 0));
  return plan;
}

double batch_cv(const std::vector<double>& batch_means) {
  if (batch_means.size() < 2)
    fail(ErrorCode::InsufficientBatches, "need at least 2 batch means");
  double mean = 0.0;
  for (double v : batch_means) mean += v;
  mean /= static_cast<double>(batch_means.size());
  if (mean == 0.0) fail(ErrorCode::ZeroMean, "mean of batch means is zero");
  double var = 0.0;
  for (double v : batch_means) var += (v - mean) * (v - mean);
  var /= static_cast<double>(batch_means.size());
  return std::sqrt(var) / mean;
}

bool should_terminate(ControllerState& state, double new_batch_mean) {
  state.batch_means.push_back(new_batch_mean);
  if (state.terminated) return true;
  if (state.batch_means.size() < 3) return false;
  double mean = 0.0;
  for (double v : state.batch_means) mean += v;
  if (mean == 0.0) return false;
  if (std::abs(batch_cv(state.batch_means)) < state.cv_threshold) state.terminated = true;
  return state.terminated;
}

}  // namespace moseslab
