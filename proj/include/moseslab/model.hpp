#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace moseslab {

struct ParamMask;       // lottery.hpp
struct AdversaryState;  // lottery.hpp

// A fixed four-level perceptron scoring feature rows: two rectified hidden
// layers and a linear scalar output. Weights are stored out-by-in so a layer
// computes Z = X * W^T + b^T. Momentum buffers ride along; they are zero and
// unused outside offline training.
struct CostModelParams {
  std::vector<int> dims;             // {D, h1, h2, 1}
  std::vector<Eigen::MatrixXd> w;    // w[l] is dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> b;    // b[l] is dims[l+1]
  std::vector<Eigen::MatrixXd> mw;   // momentum, shape-matched to w
  std::vector<Eigen::VectorXd> mb;   // momentum, shape-matched to b
};

struct TrainHyper {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  int max_epochs = 30;
  int batch_size = 512;
  double momentum = 0.9;       // offline training only
  double adversary_beta = 0.01;
  std::uint64_t seed = 0;
};

// Rows of one task's measurements: features with their measured throughputs.
// Ranking pairs are only comparable within a task, hence the homogeneity.
struct RankingBatch {
  Eigen::MatrixXd features;  // n x D
  Eigen::VectorXd labels;    // n, positive throughputs
  std::string task_id;
};

struct GradientSet {
  std::vector<Eigen::MatrixXd> gw;
  std::vector<Eigen::VectorXd> gb;
};

// Flat scalar count over weights and biases (momentum excluded).
std::int64_t param_count(const CostModelParams& params);

// Glorot-style uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases,
// zero momentum. dims must be a 4-level shape with scalar output.
CostModelParams init_random(const std::vector<int>& dims, std::uint64_t seed);

// Scores for each feature row; higher means higher predicted throughput.
Eigen::VectorXd predict(const CostModelParams& params, const Eigen::MatrixXd& features);

// Second hidden-layer activations (n x dims[2]), the representation the
// domain discriminator consumes.
Eigen::MatrixXd penultimate_activations(const CostModelParams& params,
                                        const Eigen::MatrixXd& features);

// Mean over ordered pairs (i,j) with labels[i] > labels[j] of
// log(1 + exp(-(scores[i] - scores[j]))); zero when no such pair exists.
double pairwise_ranking_loss(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels);

// Analytic gradient of [ranking loss + beta * confusion loss] in every weight
// and bias. The adversary is read-only here: its discriminator labels the
// frozen replay rows as source and the batch rows as target, and the
// confusion term is the sign-reversed discriminator loss. Passing a null
// adversary or beta == 0 yields the pure ranking gradient, bit-for-bit.
GradientSet gradients(const CostModelParams& params, const RankingBatch& batch,
                      const AdversaryState* adversary = nullptr, double beta = 0.0,
                      double* loss_out = nullptr);

// The scalar objective gradients() differentiates, for derivative probes.
double objective(const CostModelParams& params, const RankingBatch& batch,
                 const AdversaryState* adversary = nullptr, double beta = 0.0);

// Gradient step. Without a mask every scalar moves; with a mask only
// mask-true scalars move and the rest are untouched (including momentum).
// use_momentum selects the offline rule v <- mu*v + g, w <- w - alpha*v.
void apply_update(CostModelParams& params, const GradientSet& grads, const TrainHyper& hyper,
                  const ParamMask* mask = nullptr, bool use_momentum = false);

// Fraction of correctly ordered pairs, pooled over batches; ties in either
// scores or labels count as incorrect. Batches without ordered pairs are
// skipped; no pairs anywhere gives 0.
double ranking_accuracy(const CostModelParams& params, const std::vector<RankingBatch>& batches);

// Binary image: magic "MOSM", u32 version, u32 D, then per level the weight
// array (column-major) and bias, weights and biases first, momentum after,
// all float64 little-endian. Only the canonical {D,512,512,1} shape has a
// file form.
std::string serialize(const CostModelParams& params);
CostModelParams deserialize(const std::string& bytes);
void save_model(const CostModelParams& params, const std::string& path);
CostModelParams load_model(const std::string& path);

}  // namespace moseslab
