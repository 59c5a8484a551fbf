#include "moseslab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "moseslab/errors.hpp"
#include "moseslab/lottery.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {
namespace {

constexpr char kMagic[4] = {'M', 'O', 'S', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void check_dims(const std::vector<int>& dims) {
  if (dims.size() != 4) fail(ErrorCode::BadDims, "expected 4 levels, got " + std::to_string(dims.size()));
  for (int d : dims)
    if (d <= 0) fail(ErrorCode::BadDims, "non-positive level width");
  if (dims.back() != 1) fail(ErrorCode::BadDims, "output width must be 1");
}

void check_params(const CostModelParams& p) {
  check_dims(p.dims);
  if (p.w.size() != 3 || p.b.size() != 3 || p.mw.size() != 3 || p.mb.size() != 3)
    fail(ErrorCode::ShapeMismatch, "expected 3 parameter levels");
  for (int l = 0; l < 3; ++l) {
    if (p.w[l].rows() != p.dims[l + 1] || p.w[l].cols() != p.dims[l] ||
        p.b[l].size() != p.dims[l + 1] || p.mw[l].rows() != p.w[l].rows() ||
        p.mw[l].cols() != p.w[l].cols() || p.mb[l].size() != p.b[l].size())
      fail(ErrorCode::ShapeMismatch, "parameter level " + std::to_string(l) + " shape is off");
  }
}

void check_grads(const CostModelParams& p, const GradientSet& g) {
  if (g.gw.size() != p.w.size() || g.gb.size() != p.b.size())
    fail(ErrorCode::ShapeMismatch, "gradient level count mismatch");
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    if (g.gw[l].rows() != p.w[l].rows() || g.gw[l].cols() != p.w[l].cols() ||
        g.gb[l].size() != p.b[l].size())
      fail(ErrorCode::ShapeMismatch, "gradient level " + std::to_string(l) + " shape is off");
  }
}

struct Forward {
  Eigen::MatrixXd z1, h1, z2, h2;  // n x h1 twice, n x h2 twice
  Eigen::VectorXd s;               // n
};

Forward run_forward(const CostModelParams& p, const Eigen::MatrixXd& x) {
  Forward f;
  f.z1 = (x * p.w[0].transpose()).rowwise() + p.b[0].transpose();
  f.h1 = f.z1.cwiseMax(0.0);
  f.z2 = (f.h1 * p.w[1].transpose()).rowwise() + p.b[1].transpose();
  f.h2 = f.z2.cwiseMax(0.0);
  f.s = ((f.h2 * p.w[2].transpose()).col(0).array() + p.b[2](0)).matrix();
  return f;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Loss and score-gradient of the pairwise term in one pass; one exp per pair.
void ranking_terms(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels, double* loss_out,
                   Eigen::VectorXd* gs_out) {
  const Eigen::Index n = scores.size();
  std::int64_t pairs = 0;
  double loss = 0.0;
  Eigen::VectorXd gs = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Eigen::Index hi, lo;
      if (labels[i] > labels[j]) {
        hi = i;
        lo = j;
      } else if (labels[j] > labels[i]) {
        hi = j;
        lo = i;
      } else {
        continue;
      }
      const double d = scores[hi] - scores[lo];
      const double e = std::exp(-std::abs(d));
      ++pairs;
      if (loss_out != nullptr) loss += d >= 0.0 ? std::log1p(e) : -d + std::log1p(e);
      if (gs_out != nullptr) {
        const double sig_neg = d >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
        gs[hi] -= sig_neg;
        gs[lo] += sig_neg;
      }
    }
  }
  if (pairs > 0) {
    loss /= static_cast<double>(pairs);
    gs /= static_cast<double>(pairs);
  }
  if (loss_out != nullptr) *loss_out = loss;
  if (gs_out != nullptr) *gs_out = std::move(gs);
}

// Accumulates d(objective)/d(level-0,1 params) given d(objective)/d(h2).
// Level 2 never depends on h2's upstream, so it is left alone.
void backprop_from_penultimate(const CostModelParams& p, const Forward& f,
                               const Eigen::MatrixXd& x, const Eigen::MatrixXd& dh2,
                               GradientSet& g) {
  const Eigen::MatrixXd dz2 = (dh2.array() * (f.z2.array() > 0.0).cast<double>()).matrix();
  g.gw[1] += dz2.transpose() * f.h1;
  g.gb[1] += dz2.colwise().sum().transpose();
  const Eigen::MatrixXd dh1 = dz2 * p.w[1];
  const Eigen::MatrixXd dz1 = (dh1.array() * (f.z1.array() > 0.0).cast<double>()).matrix();
  g.gw[0] += dz1.transpose() * x;
  g.gb[0] += dz1.colwise().sum().transpose();
}

void check_batch(const CostModelParams& p, const RankingBatch& batch) {
  if (batch.features.cols() != p.dims[0])
    fail(ErrorCode::DimMismatch, "batch feature width " + std::to_string(batch.features.cols()) +
                                     " != model input width " + std::to_string(p.dims[0]));
  if (batch.features.rows() != batch.labels.size())
    fail(ErrorCode::DimMismatch, "batch rows != label count");
}

void check_adversary(const CostModelParams& p, const AdversaryState& adv) {
  if (adv.weight.size() != p.dims[2])
    fail(ErrorCode::DimMismatch, "discriminator width != penultimate width");
  if (adv.replay_features.rows() == 0)
    fail(ErrorCode::AdversaryDisabled, "adversary has an empty replay buffer");
  if (adv.replay_features.cols() != p.dims[0])
    fail(ErrorCode::DimMismatch, "replay feature width != model input width");
}

}  // namespace

std::int64_t param_count(const CostModelParams& params) {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < params.w.size(); ++l) n += params.w[l].size() + params.b[l].size();
  return n;
}

CostModelParams init_random(const std::vector<int>& dims, std::uint64_t seed) {
  check_dims(dims);
  CostModelParams p;
  p.dims = dims;
  for (int l = 0; l < 3; ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    KeyBuilder key;
    key.add(seed).add("init").add(static_cast<std::uint64_t>(l));
    RngStream rng(key.value());
    double* data = w.data();
    for (Eigen::Index i = 0; i < w.size(); ++i) data[i] = (2.0 * rng.uniform01() - 1.0) * bound;
    p.w.push_back(std::move(w));
    p.b.push_back(Eigen::VectorXd::Zero(fan_out));
    p.mw.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
    p.mb.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

Eigen::VectorXd predict(const CostModelParams& params, const Eigen::MatrixXd& features) {
  check_params(params);
  if (features.cols() != params.dims[0])
    fail(ErrorCode::DimMismatch, "feature width " + std::to_string(features.cols()) +
                                     " != model input width " + std::to_string(params.dims[0]));
  return run_forward(params, features).s;
}

Eigen::MatrixXd penultimate_activations(const CostModelParams& params,
                                        const Eigen::MatrixXd& features) {
  check_params(params);
  if (features.cols() != params.dims[0])
    fail(ErrorCode::DimMismatch, "feature width != model input width");
  return run_forward(params, features).h2;
}

double pairwise_ranking_loss(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::DimMismatch, "scores/labels length mismatch");
  double loss = 0.0;
  ranking_terms(scores, labels, &loss, nullptr);
  return loss;
}

GradientSet gradients(const CostModelParams& params, const RankingBatch& batch,
                      const AdversaryState* adversary, double beta, double* loss_out) {
  check_params(params);
  check_batch(params, batch);

  GradientSet g;
  for (int l = 0; l < 3; ++l) {
    g.gw.push_back(Eigen::MatrixXd::Zero(params.w[l].rows(), params.w[l].cols()));
    g.gb.push_back(Eigen::VectorXd::Zero(params.b[l].size()));
  }

  const Forward f = run_forward(params, batch.features);
  double rank_loss = 0.0;
  Eigen::VectorXd gs;
  ranking_terms(f.s, batch.labels, loss_out != nullptr ? &rank_loss : nullptr, &gs);

  g.gw[2] = gs.transpose() * f.h2;
  g.gb[2](0) = gs.sum();
  Eigen::MatrixXd dh2 = gs * params.w[2];

  double total_loss = rank_loss;
  // The confusion term vanishes identically at beta == 0, so it is skipped
  // outright; the adversary-free gradient must come out bit-identical.
  if (adversary != nullptr && beta != 0.0 && batch.features.rows() > 0) {
    check_adversary(params, *adversary);
    const Eigen::Index m = adversary->replay_features.rows();
    const Eigen::Index n = batch.features.rows();
    const Forward fs = run_forward(params, adversary->replay_features);
    const Eigen::VectorXd zs =
        ((fs.h2 * adversary->weight).array() + adversary->bias).matrix();
    const Eigen::VectorXd zt = ((f.h2 * adversary->weight).array() + adversary->bias).matrix();

    // Reversed discriminator gradient: the backbone climbs the discriminator
    // loss, so dJ/dz_s = +0.5*beta*sigma(-z_s)/m and dJ/dz_t = -0.5*beta*sigma(z_t)/n.
    Eigen::VectorXd dzs(m);
    for (Eigen::Index i = 0; i < m; ++i)
      dzs[i] = 0.5 * beta * stable_sigmoid(-zs[i]) / static_cast<double>(m);
    Eigen::VectorXd dzt(n);
    for (Eigen::Index j = 0; j < n; ++j)
      dzt[j] = -0.5 * beta * stable_sigmoid(zt[j]) / static_cast<double>(n);

    dh2 += dzt * adversary->weight.transpose();
    const Eigen::MatrixXd dh2_source = dzs * adversary->weight.transpose();
    backprop_from_penultimate(params, fs, adversary->replay_features, dh2_source, g);

    if (loss_out != nullptr) total_loss += beta * -discriminator_cross_entropy(zs, zt);
  }

  backprop_from_penultimate(params, f, batch.features, dh2, g);

  if (loss_out != nullptr) *loss_out = total_loss;
  return g;
}

double objective(const CostModelParams& params, const RankingBatch& batch,
                 const AdversaryState* adversary, double beta) {
  check_params(params);
  check_batch(params, batch);
  const Forward f = run_forward(params, batch.features);
  double loss = 0.0;
  ranking_terms(f.s, batch.labels, &loss, nullptr);
  if (adversary != nullptr && beta != 0.0 && batch.features.rows() > 0) {
    check_adversary(params, *adversary);
    const Forward fs = run_forward(params, adversary->replay_features);
    const Eigen::VectorXd zs = ((fs.h2 * adversary->weight).array() + adversary->bias).matrix();
    const Eigen::VectorXd zt = ((f.h2 * adversary->weight).array() + adversary->bias).matrix();
    loss += beta * -discriminator_cross_entropy(zs, zt);
  }
  return loss;
}

void apply_update(CostModelParams& params, const GradientSet& grads, const TrainHyper& hyper,
                  const ParamMask* mask, bool use_momentum) {
  check_params(params);
  check_grads(params, grads);
  const bool* keep = nullptr;
  if (mask != nullptr) {
    if (mask->transferable.size() != param_count(params))
      fail(ErrorCode::ShapeMismatch, "mask length != parameter count");
    keep = mask->transferable.data();
  }
  const double lr = hyper.learning_rate;
  const double mu = hyper.momentum;
  std::int64_t off = 0;
  // One kernel for masked and unmasked steps: the per-scalar arithmetic must
  // not depend on which caller reached it.
  const auto step = [&](double* w, double* v, const double* g, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (keep != nullptr && !keep[off + i]) continue;
      if (use_momentum) {
        v[i] = mu * v[i] + g[i];
        const double delta = lr * v[i];
        w[i] -= delta;
      } else {
        const double delta = lr * g[i];
        w[i] -= delta;
      }
    }
    off += n;
  };
  for (std::size_t l = 0; l < params.w.size(); ++l) {
    step(params.w[l].data(), params.mw[l].data(), grads.gw[l].data(), params.w[l].size());
    step(params.b[l].data(), params.mb[l].data(), grads.gb[l].data(), params.b[l].size());
  }
}

double ranking_accuracy(const CostModelParams& params, const std::vector<RankingBatch>& batches) {
  std::int64_t pairs = 0;
  std::int64_t concordant = 0;
  for (const auto& batch : batches) {
    const Eigen::VectorXd scores = predict(params, batch.features);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      for (Eigen::Index j = 0; j < scores.size(); ++j) {
        if (batch.labels[i] <= batch.labels[j]) continue;
        ++pairs;
        if (scores[i] > scores[j]) ++concordant;
      }
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(concordant) / static_cast<double>(pairs);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

double get_f64(const std::string& in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return std::bit_cast<double>(v);
}

void check_canonical(const CostModelParams& p) {
  if (p.dims[1] != 512 || p.dims[2] != 512)
    fail(ErrorCode::BadDims, "only the {D,512,512,1} shape has a file form");
}

}  // namespace

std::string serialize(const CostModelParams& params) {
  check_params(params);
  check_canonical(params);
  std::string out;
  out.reserve(12 + static_cast<std::size_t>(param_count(params)) * 16);
  out.append(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(params.dims[0]));
  const auto put_level = [&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < w.size(); ++i) put_f64(out, w.data()[i]);
    for (Eigen::Index i = 0; i < b.size(); ++i) put_f64(out, b[i]);
  };
  for (int l = 0; l < 3; ++l) put_level(params.w[l], params.b[l]);
  for (int l = 0; l < 3; ++l) put_level(params.mw[l], params.mb[l]);
  return out;
}

CostModelParams deserialize(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::CorruptStream, "bad magic or truncated header");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion)
    fail(ErrorCode::VersionMismatch,
         "format version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  const std::uint32_t d = get_u32(bytes, 8);
  if (d == 0 || d > 4096) fail(ErrorCode::CorruptStream, "implausible input width");
  const std::vector<int> dims = {static_cast<int>(d), 512, 512, 1};
  std::int64_t scalars = 0;
  for (int l = 0; l < 3; ++l) scalars += static_cast<std::int64_t>(dims[l]) * dims[l + 1] + dims[l + 1];
  const std::size_t expect = 12 + static_cast<std::size_t>(scalars) * 16;
  if (bytes.size() != expect)
    fail(ErrorCode::CorruptStream, "stream is " + std::to_string(bytes.size()) + " bytes, expected " +
                                       std::to_string(expect));
  CostModelParams p;
  p.dims = dims;
  std::size_t off = 12;
  const auto get_level = [&](Eigen::MatrixXd& w, Eigen::VectorXd& b, int l) {
    w.resize(dims[l + 1], dims[l]);
    b.resize(dims[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i, off += 8) w.data()[i] = get_f64(bytes, off);
    for (Eigen::Index i = 0; i < b.size(); ++i, off += 8) b[i] = get_f64(bytes, off);
  };
  p.w.resize(3);
  p.b.resize(3);
  p.mw.resize(3);
  p.mb.resize(3);
  for (int l = 0; l < 3; ++l) get_level(p.w[l], p.b[l], l);
  for (int l = 0; l < 3; ++l) get_level(p.mw[l], p.mb[l], l);
  for (int l = 0; l < 3; ++l) {
    if (!p.w[l].allFinite() || !p.b[l].allFinite() || !p.mw[l].allFinite() || !p.mb[l].allFinite())
      fail(ErrorCode::CorruptStream, "non-finite parameter value");
  }
  return p;
}

void save_model(const CostModelParams& params, const std::string& path) {
  const std::string bytes = serialize(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

CostModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open model file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace moseslab
