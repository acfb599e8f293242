#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"

using namespace vigat;

namespace {

Dataset tiny_dataset(std::size_t n_train = 24, std::size_t n_test = 6) {
  SynthSpec spec;
  spec.classes = 3;
  spec.frames = 4;
  spec.objects = 2;
  spec.features = 5;
  spec.n_train = n_train;
  spec.n_test = n_test;
  spec.evidence_frames = 1;
  const auto sig = synth_signatures(spec);
  Dataset d;
  d.manifest.mode = OutputMode::kSinglelabel;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    (i < n_train ? d.train : d.test).push_back(synth_video(spec, sig, i).pack);
  }
  return d;
}

TrainConfig tiny_train(std::size_t workers = 1) {
  TrainConfig cfg;
  cfg.lr0 = 1e-2;
  cfg.epochs = 3;
  cfg.batch_size = 5;  // leaves a partial final batch
  cfg.seed = 4;
  cfg.mode = OutputMode::kSinglelabel;
  cfg.workers = workers;
  cfg.milestones = {1, 2};
  return cfg;
}

const HeadConfig kTinyHead{5, 3, 1, Tying::kTied, OutputMode::kSinglelabel, 0.5};

// Brute-force AP: for every positive, the fraction of items scored at least
// as high (ranked at or before it) that are positive.
double brute_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& rel) {
  double sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!rel[i]) continue;
    ++npos;
    std::size_t rank = 0, hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool before = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (before) {
        ++rank;
        hits += rel[j];
      }
    }
    sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return npos == 0 ? 0.0 : sum / static_cast<double>(npos);
}

}  // namespace

TEST(Loss, PerfectScoresGiveNearZeroLoss) {
  const auto s = Tensor2<double>::from_rows({{1.0, 0.0, 1.0}});
  const std::vector<std::uint8_t> y{1, 0, 1};
  EXPECT_LT(loss_and_grad(s, std::span<const std::uint8_t>(y), OutputMode::kMultilabel).loss, 1e-6);
  const auto soft = Tensor2<double>::from_rows({{0.0, 1.0}});
  const std::vector<std::uint8_t> one{0, 1};
  EXPECT_LT(loss_and_grad(soft, std::span<const std::uint8_t>(one), OutputMode::kSinglelabel).loss, 1e-6);
}

TEST(Loss, KnownValues) {
  const auto s = Tensor2<double>::from_rows({{0.5, 0.25}});
  const std::vector<std::uint8_t> y{1, 0};
  const auto ml = loss_and_grad(s, std::span<const std::uint8_t>(y), OutputMode::kMultilabel);
  EXPECT_NEAR(ml.loss, (std::log(2.0) - std::log(0.75)) / 2.0, 1e-12);
  EXPECT_NEAR(ml.grad[0], -1.0, 1e-12);
  EXPECT_NEAR(ml.grad[1], (1.0 / 0.75) / 2.0, 1e-12);
  const auto sl = loss_and_grad(s, std::span<const std::uint8_t>(y), OutputMode::kSinglelabel);
  EXPECT_NEAR(sl.loss, std::log(2.0), 1e-12);
}

TEST(Loss, ClippingKeepsLossFinite) {
  const auto s = Tensor2<double>::from_rows({{0.0, 1.0}});
  const std::vector<std::uint8_t> y{1, 0};
  const auto ml = loss_and_grad(s, std::span<const std::uint8_t>(y), OutputMode::kMultilabel);
  EXPECT_TRUE(std::isfinite(ml.loss));
  EXPECT_NEAR(ml.loss, -std::log(1e-7), 1e-6);
}

TEST(Loss, SinglelabelNeedsExactlyOnePositive) {
  const auto s = Tensor2<double>::from_rows({{0.5, 0.5}});
  const std::vector<std::uint8_t> none{0, 0}, two{1, 1};
  EXPECT_THROW(loss_and_grad(s, std::span<const std::uint8_t>(none), OutputMode::kSinglelabel), LabelError);
  EXPECT_THROW(loss_and_grad(s, std::span<const std::uint8_t>(two), OutputMode::kSinglelabel), LabelError);
  const std::vector<std::uint8_t> three{1, 0, 0};
  EXPECT_THROW(loss_and_grad(s, std::span<const std::uint8_t>(three), OutputMode::kMultilabel), DimensionError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(41);
  for (auto mode : {OutputMode::kMultilabel, OutputMode::kSinglelabel}) {
    Tensor2<double> s(1, 5);
    for (auto& v : s.values()) v = rng.uniform(0.05, 0.95);
    const auto y = vigat::testing::random_labels(5, mode, rng);
    const auto lg = loss_and_grad(s, std::span<const std::uint8_t>(y), mode);
    for (std::size_t j = 0; j < 5; ++j) {
      auto up = s, down = s;
      up[j] += 1e-6;
      down[j] -= 1e-6;
      const double fd = (loss_and_grad(up, std::span<const std::uint8_t>(y), mode).loss -
                         loss_and_grad(down, std::span<const std::uint8_t>(y), mode).loss) / 2e-6;
      EXPECT_LT(vigat::testing::rel_error(lg.grad[j], fd), 1e-6);
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor2<double> p = Tensor2<double>::row_vector({1.0, -2.0, 0.0});
  const Tensor2<double> g = Tensor2<double>::row_vector({0.5, -3.0, 0.0});
  AdamState<double> st;
  adam_update(st, {&p}, {&g}, 0.1);
  // Bias correction makes the first step lr * sign(g) (up to eps).
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -1.9, 1e-6);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MatchesHandComputedSecondStep) {
  Tensor2<double> p = Tensor2<double>::row_vector({0.0});
  AdamState<double> st;
  const auto g1 = Tensor2<double>::row_vector({1.0});
  const auto g2 = Tensor2<double>::row_vector({-2.0});
  adam_update(st, {&p}, {&g1}, 0.01);
  adam_update(st, {&p}, {&g2}, 0.01);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.998001);
  const double first = -0.01 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p[0], first - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-12);
}

TEST(Adam, RejectsBadInput) {
  Tensor2<double> p(1, 2);
  const Tensor2<double> g(1, 3);
  AdamState<double> st;
  EXPECT_THROW(adam_update(st, {&p}, {&g}, 0.1), DimensionError);
  const Tensor2<double> ok(1, 2);
  EXPECT_THROW(adam_update(st, {&p}, {&ok}, 0.0), ParameterError);
}

TEST(Schedule, MilestonesMultiplyByGamma) {
  TrainConfig cfg;
  cfg.lr0 = 1.0;
  cfg.epochs = 200;
  cfg.milestones = {50, 90};
  cfg.gamma = 0.1;
  EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 49), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 50), 0.1);
  EXPECT_NEAR(lr_at(cfg, 90), 0.01, 1e-15);
  EXPECT_NEAR(lr_at(cfg, 199), 0.01, 1e-15);
}

TEST(Schedule, ConfigValidation) {
  TrainConfig cfg;
  cfg.milestones = {90, 50};
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.milestones = {100};
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.milestones = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(Metrics, AveragePrecisionExample) {
  const std::vector<double> s{0.9, 0.8, 0.7};
  const std::vector<std::uint8_t> rel{1, 0, 1};
  EXPECT_NEAR(average_precision(s, rel), 5.0 / 6.0, 1e-15);
}

TEST(Metrics, AveragePrecisionMatchesBruteForce) {
  Rng rng(42);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<double> s(n);
    std::vector<std::uint8_t> rel(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6));  // many ties
      rel[i] = rng.uniform() < 0.4;
    }
    EXPECT_NEAR(average_precision(s, rel), brute_ap(s, rel), 1e-12);
  }
}

TEST(Metrics, MapSkipsClassesWithoutPositives) {
  const ScoreRows s{{0.9, 0.1, 0.5}, {0.2, 0.8, 0.4}};
  const LabelRows y{{1, 0, 0}, {0, 1, 0}};
  const auto r = mean_average_precision(s, y);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.skipped_classes, std::vector<std::size_t>{2});
}

TEST(Metrics, Top1Accuracy) {
  const ScoreRows s{{0.1, 0.9}, {0.6, 0.4}, {0.3, 0.7}};
  const LabelRows y{{0, 1}, {0, 1}, {1, 1}};
  EXPECT_NEAR(top1_accuracy(s, y), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(top1_accuracy(s, LabelRows{{0, 1}}), DimensionError);
}

TEST(Training, DeterministicForFixedSeed) {
  const Dataset d = tiny_dataset();
  const auto a = train_model(d, kTinyHead, tiny_train());
  const auto b = train_model(d, kTinyHead, tiny_train());
  EXPECT_EQ(epoch_log_csv(a.log), epoch_log_csv(b.log));
  EXPECT_EQ(encode_checkpoint(a.final_params), encode_checkpoint(b.final_params));
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_LE(a.best_epoch, 2u);
  EXPECT_EQ(a.best_metric, a.log[a.best_epoch].test_metric);
  EXPECT_EQ(a.final_metric, a.log.back().test_metric);
}

TEST(Training, WorkerCountKeepsResultsClose) {
  const Dataset d = tiny_dataset();
  const auto one = train_model(d, kTinyHead, tiny_train(1));
  const auto three = train_model(d, kTinyHead, tiny_train(3));
  const auto again = train_model(d, kTinyHead, tiny_train(3));
  EXPECT_EQ(encode_checkpoint(three.final_params), encode_checkpoint(again.final_params));
  // Different reduction order only changes float rounding.
  for (std::size_t e = 0; e < one.log.size(); ++e) {
    EXPECT_NEAR(one.log[e].train_loss, three.log[e].train_loss, 1e-3);
  }
}

TEST(Training, LogRecordsScheduledLearningRate) {
  const Dataset d = tiny_dataset();
  const auto r = train_model(d, kTinyHead, tiny_train());
  EXPECT_DOUBLE_EQ(r.log[0].lr, 1e-2);
  EXPECT_DOUBLE_EQ(r.log[1].lr, 1e-3);
  EXPECT_NEAR(r.log[2].lr, 1e-4, 1e-18);
  const std::string csv = epoch_log_csv(r.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,train_loss,test_metric");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Training, LossDecreasesOnLearnableData) {
  const Dataset d = tiny_dataset(60, 12);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 15;
  cfg.milestones = {};
  cfg.lr0 = 3e-3;
  const auto r = train_model(d, kTinyHead, cfg);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Training, RejectsInconsistentSetup) {
  Dataset d = tiny_dataset();
  HeadConfig head = kTinyHead;
  head.mode = OutputMode::kMultilabel;
  EXPECT_THROW(train_model(d, head, tiny_train()), ParameterError);
  d.test.clear();
  EXPECT_THROW(train_model(d, kTinyHead, tiny_train()), DatasetError);
}
