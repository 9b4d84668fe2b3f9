#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dog/conditions.hpp"
#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/rng.hpp"
#include "dog/schedule.hpp"

namespace dog {

using Mat = Eigen::MatrixXd;

struct TrainingRecord {
  Vec x0;
  ConditionPair cond;
};

struct MlpShape {
  int sample_dim = 2;
  int d_content = 8;
  int d_style = 8;
  int time_features = 16;  // even; sin/cos pairs at octave frequencies
  int hidden_width = 128;
  int hidden_layers = 3;
  int T = 1000;

  int input_dim() const { return sample_dim + time_features + d_content + d_style; }

  void validate() const {
    if (sample_dim < 1) throw ConfigError("training.sample_dim", "must be >= 1");
    if (time_features < 2 || time_features % 2 != 0) throw ConfigError("training.time_features", "must be even and >= 2");
    if (hidden_width < 1) throw ConfigError("training.hidden_width", "must be >= 1");
    if (hidden_layers < 1 || hidden_layers > 5) throw ConfigError("training.hidden_layers", "must lie in [1, 5]");
    if (T < 2) throw ConfigError("training.T", "must be >= 2");
  }
};

namespace detail {

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

}  // namespace detail

/// Small MLP noise predictor over [x_t, time features, r_t, r_s].
///
/// The unconditional branch is a pair of learned null representations that
/// replace (r_t, r_s); it exists only when trained with condition dropout.
class MlpDenoiser {
 public:
  MlpDenoiser() = default;

  MlpDenoiser(MlpShape shape, Rng& rng) : shape_(shape) {
    shape_.validate();
    std::vector<int> widths{shape_.input_dim()};
    for (int i = 0; i < shape_.hidden_layers; ++i) widths.push_back(shape_.hidden_width);
    widths.push_back(shape_.sample_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int fan_in = widths[l];
      const double scale = std::sqrt((l + 2 == widths.size() ? 1.0 : 2.0) / fan_in);
      Mat w(widths[l + 1], fan_in);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
      weights_.push_back(std::move(w));
      biases_.push_back(Vec::Zero(widths[l + 1]));
    }
    null_content_ = Vec(shape_.d_content);
    null_style_ = Vec(shape_.d_style);
    for (Eigen::Index i = 0; i < null_content_.size(); ++i) null_content_[i] = 0.1 * normal(rng);
    for (Eigen::Index i = 0; i < null_style_.size(); ++i) null_style_[i] = 0.1 * normal(rng);
  }

  int dim() const { return shape_.sample_dim; }
  bool supports_null() const { return has_null_branch_; }
  const MlpShape& shape() const { return shape_; }

  void set_null_branch(bool on) { has_null_branch_ = on; }

  std::vector<Mat>& weights() { return weights_; }
  std::vector<Vec>& biases() { return biases_; }
  Vec& null_content() { return null_content_; }
  Vec& null_style() { return null_style_; }
  const std::vector<Mat>& weights() const { return weights_; }
  const std::vector<Vec>& biases() const { return biases_; }
  const Vec& null_content() const { return null_content_; }
  const Vec& null_style() const { return null_style_; }

  void write_time_features(int t, Eigen::Ref<Vec> out) const {
    const double tau = static_cast<double>(t) / shape_.T;
    for (int k = 0; k < shape_.time_features / 2; ++k) {
      const double w = std::numbers::pi * std::ldexp(1.0, k) * tau;
      out[2 * k] = std::sin(w);
      out[2 * k + 1] = std::cos(w);
    }
  }

  /// Input column for one example; `null` selects the learned null representations.
  Vec features(const Vec& x_t, int t, const Vec* content, const Vec* style) const {
    Vec in(shape_.input_dim());
    const int o_time = shape_.sample_dim;
    const int o_content = o_time + shape_.time_features;
    const int o_style = o_content + shape_.d_content;
    in.segment(0, shape_.sample_dim) = x_t;
    write_time_features(t, in.segment(o_time, shape_.time_features));
    in.segment(o_content, shape_.d_content) = content ? *content : null_content_;
    in.segment(o_style, shape_.d_style) = style ? *style : null_style_;
    return in;
  }

  NoisePrediction predict_eps(const Vec& x_t, int t, const Condition& cond) const {
    if (x_t.size() != dim()) throw DomainError("x_t dimension does not match the model");
    if (t < 1 || t > shape_.T) throw DomainError("timestep " + std::to_string(t) + " outside [1, T]");
    Vec in;
    if (is_null(cond)) {
      if (!has_null_branch_) throw ConfigError("denoiser", "model was trained without an unconditional branch");
      in = features(x_t, t, nullptr, nullptr);
    } else {
      const auto& p = std::get<ConditionPair>(cond);
      if (p.content.size() != shape_.d_content || p.style.size() != shape_.d_style) {
        throw DomainError("condition lengths do not match the model");
      }
      in = features(x_t, t, &p.content, &p.style);
    }
    Vec h = in;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Vec z = weights_[l] * h + biases_[l];
      if (l + 1 < weights_.size()) z = z.unaryExpr(&detail::silu);
      h = std::move(z);
    }
    return h;
  }

 private:
  MlpShape shape_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
  Vec null_content_;
  Vec null_style_;
  bool has_null_branch_ = false;
};

static_assert(NoisePredictor<MlpDenoiser>);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 40;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double cond_dropout = 0.2;
  std::uint64_t seed = 0;
  MlpShape shape;

  void validate() const {
    if (epochs < 1) throw ConfigError("training.epochs", "must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size", "must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate", "must be positive");
    if (!(cond_dropout >= 0.0 && cond_dropout < 1.0)) throw ConfigError("training.cond_dropout", "must lie in [0, 1)");
    shape.validate();
  }
};

struct TrainResult {
  MlpDenoiser model;
  std::vector<double> epoch_loss;  // mean per-entry squared eps error over each epoch
};

inline std::vector<TrainingRecord> make_toy_dataset(const ConditionalGMM& gmm, const ConditionVocab& vocab,
                                                    int samples_per_condition, std::uint64_t seed) {
  if (samples_per_condition < 1) throw ConfigError("dataset.samples_per_condition", "must be >= 1");
  std::vector<TrainingRecord> out;
  for (int c = 0; c < gmm.content_vocab(); ++c) {
    for (int s = 0; s < gmm.style_vocab(); ++s) {
      const ConditionPair cond = embed_condition(vocab, c, s);
      for (auto& x : sample_data(gmm, c, s, samples_per_condition, seed)) out.push_back(TrainingRecord{std::move(x), cond});
    }
  }
  return out;
}

namespace detail {

struct AdamSlot {
  Mat m;
  Mat v;
};

inline void adam_update(Eigen::Ref<Mat> param, const Mat& grad, AdamSlot& slot, double lr, int step) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (slot.m.size() == 0) {
    slot.m = Mat::Zero(param.rows(), param.cols());
    slot.v = Mat::Zero(param.rows(), param.cols());
  }
  slot.m = b1 * slot.m + (1.0 - b1) * grad;
  slot.v = b2 * slot.v + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  param.array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + eps);
}

}  // namespace detail

/// Minimizes per-entry MSE between true and predicted noise over uniformly drawn t,
/// with the condition replaced by the null representations at rate `cond_dropout`.
/// Single-threaded and deterministic in `cfg.seed`. `on_epoch(epoch, loss)` is called after each epoch.
inline TrainResult train_toy_denoiser(const std::vector<TrainingRecord>& dataset, const DiffusionSchedule& schedule,
                                      const TrainConfig& cfg,
                                      const std::function<void(int, double)>& on_epoch = {}) {
  if (dataset.empty()) throw ConfigError("dataset", "training dataset is empty");
  TrainConfig c = cfg;
  c.shape.T = schedule.T();
  c.shape.sample_dim = static_cast<int>(dataset.front().x0.size());
  c.shape.d_content = static_cast<int>(dataset.front().cond.content.size());
  c.shape.d_style = static_cast<int>(dataset.front().cond.style.size());
  c.validate();

  Rng rng = make_rng(c.seed, Stream::kTraining);
  TrainResult result{MlpDenoiser(c.shape, rng), {}};
  MlpDenoiser& model = result.model;
  model.set_null_branch(c.cond_dropout > 0.0);

  const MlpShape& sh = model.shape();
  const int o_content = sh.sample_dim + sh.time_features;
  const int o_style = o_content + sh.d_content;
  const std::size_t L = model.weights().size();
  std::vector<detail::AdamSlot> w_slots(L), b_slots(L);
  detail::AdamSlot nc_slot, ns_slot;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uniform_int_distribution<int> pick_t(1, schedule.T());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution drop(c.cond_dropout);

  const auto batches_per_epoch = (dataset.size() + c.batch_size - 1) / c.batch_size;
  const auto total_steps = static_cast<double>(batches_per_epoch * c.epochs);
  int step = 0;

  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const auto B = static_cast<Eigen::Index>(std::min<std::size_t>(c.batch_size, order.size() - start));
      Mat input(sh.input_dim(), B);
      Mat target(sh.sample_dim, B);
      std::vector<char> dropped(static_cast<std::size_t>(B));
      for (Eigen::Index j = 0; j < B; ++j) {
        const auto& rec = dataset[order[start + j]];
        const int t = pick_t(rng);
        Vec eps(sh.sample_dim);
        for (auto& e : eps) e = normal(rng);
        const double abar = schedule.alpha_bar(t);
        const Vec x_t = std::sqrt(abar) * rec.x0 + std::sqrt(1.0 - abar) * eps;
        dropped[j] = drop(rng) ? 1 : 0;
        input.col(j) = dropped[j] ? model.features(x_t, t, nullptr, nullptr)
                                  : model.features(x_t, t, &rec.cond.content, &rec.cond.style);
        target.col(j) = eps;
      }

      // forward
      std::vector<Mat> pre(L), act(L + 1);
      act[0] = input;
      for (std::size_t l = 0; l < L; ++l) {
        pre[l] = (model.weights()[l] * act[l]).colwise() + model.biases()[l];
        act[l + 1] = l + 1 < L ? Mat(pre[l].unaryExpr(&detail::silu)) : pre[l];
      }
      const Mat diff = act[L] - target;
      const double denom = static_cast<double>(diff.size());
      loss_sum += diff.squaredNorm();
      loss_count += static_cast<std::size_t>(diff.size());

      // backward
      Mat dz = (2.0 / denom) * diff;
      std::vector<Mat> gw(L);
      std::vector<Vec> gb(L);
      Mat d_input;
      for (std::size_t l = L; l-- > 0;) {
        gw[l] = dz * act[l].transpose();
        gb[l] = dz.rowwise().sum();
        Mat dh = model.weights()[l].transpose() * dz;
        if (l == 0) {
          d_input = std::move(dh);
        } else {
          dz = dh.cwiseProduct(pre[l - 1].unaryExpr(&detail::silu_grad));
        }
      }
      Vec g_null_c = Vec::Zero(sh.d_content);
      Vec g_null_s = Vec::Zero(sh.d_style);
      for (Eigen::Index j = 0; j < B; ++j) {
        if (!dropped[j]) continue;
        g_null_c += d_input.col(j).segment(o_content, sh.d_content);
        g_null_s += d_input.col(j).segment(o_style, sh.d_style);
      }

      ++step;
      const double lr = c.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - 1) / total_steps)));
      for (std::size_t l = 0; l < L; ++l) {
        detail::adam_update(model.weights()[l], gw[l], w_slots[l], lr, step);
        detail::adam_update(model.biases()[l], gb[l], b_slots[l], lr, step);
      }
      if (model.supports_null()) {
        detail::adam_update(model.null_content(), g_null_c, nc_slot, lr, step);
        detail::adam_update(model.null_style(), g_null_s, ns_slot, lr, step);
      }
    }
    const double epoch_loss = loss_sum / static_cast<double>(loss_count);
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

/// Mean per-entry squared disagreement between two predictors on `pairs`
/// forward-noised draws (uniform condition, uniform t).
template <NoisePredictor A, NoisePredictor B>
double eps_disagreement(const A& a, const B& b, const ConditionalGMM& gmm, const ConditionVocab& vocab,
                        const DiffusionSchedule& schedule, int pairs, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kData, 0xabcdefULL);
  std::uniform_int_distribution<int> pick_c(0, gmm.content_vocab() - 1);
  std::uniform_int_distribution<int> pick_s(0, gmm.style_vocab() - 1);
  std::uniform_int_distribution<int> pick_t(1, schedule.T());
  double total = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const int c = pick_c(rng);
    const int s = pick_s(rng);
    const int t = pick_t(rng);
    const Vec x0 = sample_data(gmm, c, s, 1, rng).front();
    const Vec eps = standard_normal(rng, gmm.dim());
    const double abar = schedule.alpha_bar(t);
    const Vec x_t = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
    const Condition cond = embed_condition(vocab, c, s);
    total += (a.predict_eps(x_t, t, cond) - b.predict_eps(x_t, t, cond)).squaredNorm() / gmm.dim();
  }
  return total / pairs;
}

// ---------------------------------------------------------------------------
// Checkpoint: line-oriented text, every real written as a C99 hex float so a
// load reproduces the weights bit for bit.
//
//   dog-mlp-checkpoint 1
//   sample_dim <n>  d_content <n>  d_style <n>  time_features <n>
//   hidden_width <n>  hidden_layers <n>  T <n>  null_branch <0|1>
//   digest <config digest or ->
//   layer <index> <rows> <cols>
//   W <rows*cols values, row-major>
//   b <rows values>
//   ... one layer block per affine layer ...
//   null_content <d_content values>
//   null_style <d_style values>
//   end

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_real(const std::string& tok) {
  std::size_t used = 0;
  const double v = std::stod(tok, &used);
  if (used != tok.size()) throw ConfigError("checkpoint", "malformed number '" + tok + "'");
  return v;
}

inline void expect_key(std::istream& in, const std::string& key) {
  std::string got;
  if (!(in >> got) || got != key) throw ConfigError("checkpoint", "expected '" + key + "', found '" + got + "'");
}

template <typename T>
T read_value(std::istream& in, const std::string& key) {
  expect_key(in, key);
  T v{};
  if (!(in >> v)) throw ConfigError("checkpoint", "missing value for '" + key + "'");
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const MlpDenoiser& m, const std::string& digest = "-") {
  const auto& sh = m.shape();
  out << "dog-mlp-checkpoint 1\n";
  out << "sample_dim " << sh.sample_dim << "\nd_content " << sh.d_content << "\nd_style " << sh.d_style
      << "\ntime_features " << sh.time_features << "\nhidden_width " << sh.hidden_width << "\nhidden_layers "
      << sh.hidden_layers << "\nT " << sh.T << "\nnull_branch " << (m.supports_null() ? 1 : 0) << "\n";
  out << "digest " << (digest.empty() ? "-" : digest) << "\n";
  for (std::size_t l = 0; l < m.weights().size(); ++l) {
    const Mat& w = m.weights()[l];
    out << "layer " << l << " " << w.rows() << " " << w.cols() << "\nW";
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) out << ' ' << detail::hexfloat(w(i, j));
    out << "\nb";
    for (double v : m.biases()[l]) out << ' ' << detail::hexfloat(v);
    out << "\n";
  }
  out << "null_content";
  for (double v : m.null_content()) out << ' ' << detail::hexfloat(v);
  out << "\nnull_style";
  for (double v : m.null_style()) out << ' ' << detail::hexfloat(v);
  out << "\nend\n";
}

inline MlpDenoiser load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "dog-mlp-checkpoint") throw ConfigError("checkpoint", "not a checkpoint file");
  if (version != 1) throw ConfigError("checkpoint", "unsupported checkpoint version " + std::to_string(version));
  MlpShape sh;
  sh.sample_dim = detail::read_value<int>(in, "sample_dim");
  sh.d_content = detail::read_value<int>(in, "d_content");
  sh.d_style = detail::read_value<int>(in, "d_style");
  sh.time_features = detail::read_value<int>(in, "time_features");
  sh.hidden_width = detail::read_value<int>(in, "hidden_width");
  sh.hidden_layers = detail::read_value<int>(in, "hidden_layers");
  sh.T = detail::read_value<int>(in, "T");
  const int null_branch = detail::read_value<int>(in, "null_branch");
  (void)detail::read_value<std::string>(in, "digest");
  sh.validate();

  Rng scratch(0);
  MlpDenoiser m(sh, scratch);
  m.set_null_branch(null_branch != 0);
  auto read_into = [&](auto& dst, Eigen::Index count) {
    std::string tok;
    for (Eigen::Index k = 0; k < count; ++k) {
      if (!(in >> tok)) throw ConfigError("checkpoint", "truncated weight block");
      dst(k) = detail::parse_real(tok);
    }
  };
  for (std::size_t l = 0; l < m.weights().size(); ++l) {
    Mat& w = m.weights()[l];
    const auto idx = detail::read_value<std::size_t>(in, "layer");
    Eigen::Index rows = 0, cols = 0;
    in >> rows >> cols;
    if (idx != l || rows != w.rows() || cols != w.cols()) throw ConfigError("checkpoint", "layer shape mismatch");
    detail::expect_key(in, "W");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    Eigen::Map<Vec> flat(rm.data(), rm.size());
    read_into(flat, rm.size());
    w = rm;
    detail::expect_key(in, "b");
    read_into(m.biases()[l], m.biases()[l].size());
  }
  detail::expect_key(in, "null_content");
  read_into(m.null_content(), m.null_content().size());
  detail::expect_key(in, "null_style");
  read_into(m.null_style(), m.null_style().size());
  detail::expect_key(in, "end");
  return m;
}

}  // namespace dog
