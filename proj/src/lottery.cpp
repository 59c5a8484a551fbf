#include "moseslab/lottery.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "moseslab/errors.hpp"

namespace moseslab {
namespace {

constexpr char kMaskMagic[4] = {'M', 'O', 'S', 'K'};

void check_pair(const CostModelParams& params, const GradientSet& grads) {
  if (grads.gw.size() != params.w.size() || grads.gb.size() != params.b.size())
    fail(ErrorCode::ShapeMismatch, "gradient level count mismatch");
  for (std::size_t l = 0; l < params.w.size(); ++l) {
    if (grads.gw[l].rows() != params.w[l].rows() || grads.gw[l].cols() != params.w[l].cols() ||
        grads.gb[l].size() != params.b[l].size())
      fail(ErrorCode::ShapeMismatch, "gradient level " + std::to_string(l) + " shape is off");
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

XiScores xi_scores(const CostModelParams& params, const GradientSet& grads, bool normalize) {
  check_pair(params, grads);
  const std::int64_t total = param_count(params);
  XiScores out;
  out.xi.resize(total);
  std::int64_t off = 0;
  const auto fill = [&](const double* w, const double* g, std::int64_t n) {
    Eigen::Map<const Eigen::ArrayXd> wm(w, n);
    Eigen::Map<const Eigen::ArrayXd> gm(g, n);
    out.xi.segment(off, n) = (wm * gm).abs();
    off += n;
  };
  for (std::size_t l = 0; l < params.w.size(); ++l) {
    fill(params.w[l].data(), grads.gw[l].data(), params.w[l].size());
    fill(params.b[l].data(), grads.gb[l].data(), params.b[l].size());
  }
  if (normalize) {
    const double top = out.xi.maxCoeff();
    if (top > 0.0) out.xi /= top;
    out.normalized = true;
  }
  return out;
}

ParamMask partition(const XiScores& xi, PartitionMode mode, double value, int phase) {
  const std::int64_t n = xi.xi.size();
  if (n == 0) fail(ErrorCode::ShapeMismatch, "empty score array");
  ParamMask mask;
  mask.phase = phase;
  mask.mode = mode;
  mask.value = value;
  mask.transferable.setConstant(n, false);
  if (mode == PartitionMode::Threshold) {
    if (!xi.normalized)
      fail(ErrorCode::UnnormalizedThreshold, "threshold partition needs normalized scores");
    for (std::int64_t i = 0; i < n; ++i) mask.transferable[i] = xi.xi[i] > value;
    return mask;
  }
  if (!(value > 0.0) || value > 1.0)
    fail(ErrorCode::InvalidRatio, "ratio must lie in (0,1], got " + std::to_string(value));
  const auto keep = static_cast<std::int64_t>(std::ceil(value * static_cast<double>(n)));
  if (keep >= n) {
    mask.transferable.setConstant(n, true);
    return mask;
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  // Total order (score desc, index asc), so the kept set is unique.
  std::nth_element(order.begin(), order.begin() + keep, order.end(),
                   [&](std::int64_t a, std::int64_t b) {
                     if (xi.xi[a] != xi.xi[b]) return xi.xi[a] > xi.xi[b];
                     return a < b;
                   });
  for (std::int64_t i = 0; i < keep; ++i) mask.transferable[order[static_cast<std::size_t>(i)]] = true;
  return mask;
}

void transferable_step(CostModelParams& params, const GradientSet& grads, const ParamMask& mask,
                       double alpha) {
  TrainHyper hyper;
  hyper.learning_rate = alpha;
  apply_update(params, grads, hyper, &mask, false);
}

void variant_decay(CostModelParams& params, const ParamMask& mask, double alpha, double lambda) {
  if (mask.transferable.size() != param_count(params))
    fail(ErrorCode::ShapeMismatch, "mask length != parameter count");
  const double rate = alpha * lambda;
  if (!(rate >= 0.0) || rate >= 1.0)
    fail(ErrorCode::UnstableDecay,
         "decay rate alpha*lambda = " + std::to_string(rate) + " must lie in [0,1)");
  if (rate == 0.0) return;
  const double factor = 1.0 - rate;
  const bool* keep = mask.transferable.data();
  std::int64_t off = 0;
  const auto decay = [&](double* w, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!keep[off + i]) w[i] *= factor;
    }
    off += n;
  };
  for (std::size_t l = 0; l < params.w.size(); ++l) {
    decay(params.w[l].data(), params.w[l].size());
    decay(params.b[l].data(), params.b[l].size());
  }
}

double discriminator_cross_entropy(const Eigen::VectorXd& z_source,
                                   const Eigen::VectorXd& z_target) {
  const auto softplus = [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  };
  double ls = 0.0;
  for (Eigen::Index i = 0; i < z_source.size(); ++i) ls += softplus(-z_source[i]);
  double lt = 0.0;
  for (Eigen::Index j = 0; j < z_target.size(); ++j) lt += softplus(z_target[j]);
  return 0.5 * (ls / static_cast<double>(z_source.size()) +
                lt / static_cast<double>(z_target.size()));
}

AdversarialResult adversarial_term(AdversaryState& adversary, const Eigen::MatrixXd& hidden_source,
                                   const Eigen::MatrixXd& hidden_target, double beta) {
  if (adversary.replay_features.rows() == 0)
    fail(ErrorCode::AdversaryDisabled, "adversary has an empty replay buffer");
  if (hidden_source.rows() == 0 || hidden_target.rows() == 0)
    fail(ErrorCode::AdversaryDisabled, "empty activation batch");
  if (hidden_source.cols() != adversary.weight.size() ||
      hidden_target.cols() != adversary.weight.size())
    fail(ErrorCode::DimMismatch, "activation width != discriminator width");

  const Eigen::Index m = hidden_source.rows();
  const Eigen::Index n = hidden_target.rows();
  const Eigen::VectorXd zs = ((hidden_source * adversary.weight).array() + adversary.bias).matrix();
  const Eigen::VectorXd zt = ((hidden_target * adversary.weight).array() + adversary.bias).matrix();

  AdversarialResult result;
  result.discriminator_loss = discriminator_cross_entropy(zs, zt);
  result.confusion_contribution = -beta * result.discriminator_loss;

  // Descent on the cross-entropy: d/dz_s = -sigma(-z_s)/(2m), d/dz_t = sigma(z_t)/(2n).
  Eigen::VectorXd dzs(m);
  for (Eigen::Index i = 0; i < m; ++i) dzs[i] = -0.5 * stable_sigmoid(-zs[i]) / static_cast<double>(m);
  Eigen::VectorXd dzt(n);
  for (Eigen::Index j = 0; j < n; ++j) dzt[j] = 0.5 * stable_sigmoid(zt[j]) / static_cast<double>(n);
  const Eigen::VectorXd du = hidden_source.transpose() * dzs + hidden_target.transpose() * dzt;
  const double dc = dzs.sum() + dzt.sum();
  adversary.weight -= adversary.step_size * du;
  adversary.bias -= adversary.step_size * dc;
  return result;
}

AdversaryState make_adversary(const Eigen::MatrixXd& replay_features, int penultimate_dim,
                              std::uint64_t seed, double step_size) {
  if (replay_features.rows() == 0)
    fail(ErrorCode::AdversaryDisabled, "replay buffer must be non-empty");
  if (penultimate_dim <= 0) fail(ErrorCode::BadDims, "penultimate width must be positive");
  AdversaryState adv;
  adv.weight = Eigen::VectorXd::Zero(penultimate_dim);
  adv.bias = 0.0;
  adv.replay_features = replay_features;
  KeyBuilder key;
  key.add(seed).add("adversary");
  adv.rng = RngStream(key.value());
  adv.step_size = step_size;
  return adv;
}

void write_mask(const ParamMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  std::string buf;
  buf.append(kMaskMagic, 4);
  const auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u64(static_cast<std::uint64_t>(mask.transferable.size()));
  const auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<std::uint32_t>(mask.phase));
  buf.push_back(mask.mode == PartitionMode::Threshold ? '\x01' : '\x02');
  put_u64(std::bit_cast<std::uint64_t>(mask.value));
  const std::int64_t n = mask.transferable.size();
  std::string bits(static_cast<std::size_t>((n + 7) / 8), '\0');
  for (std::int64_t i = 0; i < n; ++i) {
    if (mask.transferable[i]) bits[static_cast<std::size_t>(i / 8)] |= static_cast<char>(1 << (i % 8));
  }
  buf += bits;
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

ParamMask read_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open mask file " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 25 || std::memcmp(buf.data(), kMaskMagic, 4) != 0)
    fail(ErrorCode::CorruptStream, "bad magic or truncated header");
  const auto get_u64 = [&](std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
  };
  const std::uint64_t n = get_u64(4);
  std::uint32_t phase = 0;
  for (int i = 0; i < 4; ++i)
    phase |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[12 + i])) << (8 * i);
  const char mode_byte = buf[16];
  if (mode_byte != '\x01' && mode_byte != '\x02') fail(ErrorCode::CorruptStream, "unknown mode byte");
  const double value = std::bit_cast<double>(get_u64(17));
  const std::size_t expect = 25 + static_cast<std::size_t>((n + 7) / 8);
  if (buf.size() != expect)
    fail(ErrorCode::CorruptStream,
         "mask file is " + std::to_string(buf.size()) + " bytes, expected " + std::to_string(expect));
  ParamMask mask;
  mask.phase = static_cast<int>(phase);
  mask.mode = mode_byte == '\x01' ? PartitionMode::Threshold : PartitionMode::Ratio;
  mask.value = value;
  mask.transferable.setConstant(static_cast<std::int64_t>(n), false);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto byte = static_cast<unsigned char>(buf[25 + i / 8]);
    mask.transferable[static_cast<std::int64_t>(i)] = (byte >> (i % 8)) & 1;
  }
  return mask;
}

}  // namespace moseslab
