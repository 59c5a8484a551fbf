#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "moseslab/model.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {

// Per-scalar saliency xi = |w * grad_w| over the flat parameter order
// (per level: weight array in storage order, then bias).
struct XiScores {
  Eigen::ArrayXd xi;
  bool normalized = false;
};

enum class PartitionMode { Threshold, Ratio };

// Transferable/variant split of the parameter scalars for one tuning phase.
// True marks a transferable scalar (receives gradient steps); false marks a
// variant scalar (suppressed by decay).
struct ParamMask {
  Eigen::Array<bool, Eigen::Dynamic, 1> transferable;
  int phase = 0;
  PartitionMode mode = PartitionMode::Ratio;
  double value = 0.0;  // rho in ratio mode, theta in threshold mode

  std::int64_t popcount() const { return transferable.count(); }
};

// Logistic domain discriminator over penultimate activations, plus the
// frozen source-feature replay rows it labels against incoming target rows.
struct AdversaryState {
  Eigen::VectorXd weight;         // penultimate width
  double bias = 0.0;
  Eigen::MatrixXd replay_features;  // m x D source rows, fixed at creation
  RngStream rng{0};
  double step_size = 0.1;
};

XiScores xi_scores(const CostModelParams& params, const GradientSet& grads, bool normalize);

// Threshold mode keeps scalars with normalized xi strictly above value;
// ratio mode keeps the top ceil(value * N) scalars by raw xi, ties broken by
// ascending flat index.
ParamMask partition(const XiScores& xi, PartitionMode mode, double value, int phase);

// w <- w - alpha * g on transferable scalars only.
void transferable_step(CostModelParams& params, const GradientSet& grads, const ParamMask& mask,
                       double alpha);

// w <- w * (1 - alpha * lambda) on variant scalars only. lambda == 0 leaves
// every bit untouched; alpha * lambda >= 1 would flip signs and is refused.
void variant_decay(CostModelParams& params, const ParamMask& mask, double alpha, double lambda);

struct AdversarialResult {
  double discriminator_loss = 0.0;     // mean binary cross-entropy, source=1 / target=0
  double confusion_contribution = 0.0; // -beta * discriminator_loss, the backbone's term
};

// (mean_s softplus(-z_s) + mean_t softplus(z_t)) / 2: the discriminator's
// binary cross-entropy with source rows labeled 1 and target rows labeled 0.
// Indistinguishable domains bottom out at ln 2.
double discriminator_cross_entropy(const Eigen::VectorXd& z_source,
                                   const Eigen::VectorXd& z_target);

// One discriminator ascent step on the given activation batches (source
// labeled 1, target 0), returning the losses. The backbone's confusion
// gradient is not produced here; gradients() folds it in against the
// discriminator state as it stood before this step.
AdversarialResult adversarial_term(AdversaryState& adversary, const Eigen::MatrixXd& hidden_source,
                                   const Eigen::MatrixXd& hidden_target, double beta);

// Fresh zero discriminator with the given replay rows.
AdversaryState make_adversary(const Eigen::MatrixXd& replay_features, int penultimate_dim,
                              std::uint64_t seed, double step_size = 0.1);

// Diagnostic dump: header (scalar count, phase, mode, value) + packed bits.
void write_mask(const ParamMask& mask, const std::string& path);
ParamMask read_mask(const std::string& path);

}  // namespace moseslab
