#include <gtest/gtest.h>

#include <sstream>

#include "dog/mlp.hpp"

using namespace dog;

namespace {
const DiffusionSchedule& sched() {
  static const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 64;
  c.shape.hidden_width = 32;
  c.shape.hidden_layers = 2;
  c.seed = 9;
  return c;
}

std::vector<TrainingRecord> small_dataset() {
  return make_toy_dataset(build_toy_gmm(2, 2, 3, 11), ConditionVocab{2, 2, 8, 8, 7}, 128, 3);
}

std::string checkpoint_text(const MlpDenoiser& m) {
  std::ostringstream out;
  save_checkpoint(out, m, "abc");
  return out.str();
}
}  // namespace

TEST(Mlp, ForwardShapesAndNullBranch) {
  Rng rng(1);
  MlpDenoiser m(MlpShape{}, rng);
  const auto cond = embed_condition(ConditionVocab{}, 0, 0);
  EXPECT_EQ(m.predict_eps(Vec::Zero(2), 10, cond).size(), 2);
  EXPECT_FALSE(m.supports_null());
  EXPECT_THROW(m.predict_eps(Vec::Zero(2), 10, NullCondition{}), ConfigError);
  m.set_null_branch(true);
  EXPECT_EQ(m.predict_eps(Vec::Zero(2), 10, NullCondition{}).size(), 2);
  EXPECT_THROW(m.predict_eps(Vec::Zero(3), 10, cond), DomainError);
  EXPECT_THROW(m.predict_eps(Vec::Zero(2), 0, cond), DomainError);
}

TEST(Mlp, ShapeValidation) {
  MlpShape s;
  s.hidden_layers = 6;
  EXPECT_THROW(s.validate(), ConfigError);
  s.hidden_layers = 2;
  s.time_features = 3;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Mlp, DatasetCoversEveryCondition) {
  const auto ds = small_dataset();
  ASSERT_EQ(ds.size(), 4u * 128u);
  EXPECT_EQ(ds.front().cond.content_id, 0);
  EXPECT_EQ(ds.back().cond.content_id, 1);
  EXPECT_EQ(ds.back().cond.style_id, 1);
}

TEST(Training, LossDecreasesAndIsDeterministic) {
  const auto ds = small_dataset();
  const auto a = train_toy_denoiser(ds, sched(), small_config());
  const auto b = train_toy_denoiser(ds, sched(), small_config());
  ASSERT_EQ(a.epoch_loss.size(), 4u);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(checkpoint_text(a.model), checkpoint_text(b.model));
  EXPECT_TRUE(a.model.supports_null());
}

TEST(Training, NoDropoutMeansNoNullBranch) {
  auto c = small_config();
  c.epochs = 1;
  c.cond_dropout = 0.0;
  EXPECT_FALSE(train_toy_denoiser(small_dataset(), sched(), c).model.supports_null());
}

TEST(Training, NullEmbeddingsLearnOnlyFromDroppedExamples) {
  auto c = small_config();
  c.epochs = 1;
  Rng init = make_rng(c.seed, Stream::kTraining);
  auto shape = c.shape;
  shape.d_content = shape.d_style = 8;
  const MlpDenoiser fresh(shape, init);
  const auto trained = train_toy_denoiser(small_dataset(), sched(), c).model;
  EXPECT_NE(trained.null_content(), fresh.null_content());
  c.cond_dropout = 0.0;
  const auto untouched = train_toy_denoiser(small_dataset(), sched(), c).model;
  EXPECT_EQ(untouched.null_content(), fresh.null_content());
}

TEST(Training, ConfigValidation) {
  auto c = small_config();
  c.cond_dropout = 1.0;
  EXPECT_THROW(train_toy_denoiser(small_dataset(), sched(), c), ConfigError);
  EXPECT_THROW(train_toy_denoiser({}, sched(), small_config()), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto c = small_config();
  c.epochs = 1;
  const auto m = train_toy_denoiser(small_dataset(), sched(), c).model;
  const std::string text = checkpoint_text(m);
  std::istringstream in(text);
  const MlpDenoiser back = load_checkpoint(in);
  EXPECT_EQ(checkpoint_text(back), text);
  const auto cond = embed_condition(ConditionVocab{2, 2, 8, 8, 7}, 1, 0);
  const Vec x(Eigen::Vector2d(0.3, -0.2));
  EXPECT_EQ(back.predict_eps(x, 321, cond), m.predict_eps(x, 321, cond));
  EXPECT_EQ(back.predict_eps(x, 321, NullCondition{}), m.predict_eps(x, 321, NullCondition{}));
}

TEST(Checkpoint, RejectsGarbage) {
  std::istringstream bad("not-a-checkpoint 1\n");
  EXPECT_THROW(load_checkpoint(bad), ConfigError);
  Rng rng(2);
  std::string text = checkpoint_text(MlpDenoiser(MlpShape{2, 8, 8, 4, 4, 1, 1000}, rng));
  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), ConfigError);
}

TEST(Disagreement, SelfIsZero) {
  const auto gmm = build_toy_gmm(2, 2, 3, 11);
  const ConditionVocab v{2, 2, 8, 8, 7};
  const AnalyticDenoiser a(gmm, v, sched());
  EXPECT_EQ(eps_disagreement(a, a, gmm, v, sched(), 200, 1), 0.0);
}
