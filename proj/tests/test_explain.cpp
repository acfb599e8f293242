#include <gtest/gtest.h>

#include <numeric>

#include "reference.hpp"
#include "test_support.hpp"

using namespace vigat;
using vigat::testing::random_head;
using vigat::testing::random_input;

namespace {

const HeadConfig kCfg{6, 4, 2, Tying::kUntied, OutputMode::kMultilabel, 0.5};

}  // namespace

TEST(Criterion, ParseAndPrint) {
  for (auto c : {Criterion::kMean, Criterion::kMax, Criterion::kLocalOnly, Criterion::kGlobalOnly,
                 Criterion::kGradCam, Criterion::kRandom}) {
    EXPECT_EQ(parse_criterion(to_string(c)), c);
  }
  EXPECT_EQ(parse_criterion("beta"), Criterion::kMean);
  EXPECT_THROW(parse_criterion("median"), ParameterError);
}

TEST(Criterion, CombinesWids) {
  const std::vector<double> g{0.2, 1.8, 1.0}, l{1.0, 0.5, 1.5};
  const auto mean = frame_criterion(g, l, Criterion::kMean);
  const std::vector<double> want{0.6, 1.15, 1.25};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(mean[i], want[i], 1e-15);
  EXPECT_EQ(frame_criterion(g, l, Criterion::kMax), (std::vector<double>{1.0, 1.8, 1.5}));
  EXPECT_EQ(frame_criterion(g, l, Criterion::kLocalOnly), l);
  EXPECT_EQ(frame_criterion(g, l, Criterion::kGlobalOnly), g);
  EXPECT_THROW(frame_criterion(g, l, Criterion::kGradCam), ParameterError);
  EXPECT_THROW(frame_criterion(g, std::vector<double>{1.0}, Criterion::kMean), DimensionError);
}

TEST(Ranking, DescendingWithStableTies) {
  const std::vector<double> s{0.5, 2.0, 0.5, 3.0};
  EXPECT_EQ(rank_descending(s), (std::vector<std::size_t>{3, 1, 0, 2}));
}

TEST(FrameWids, MatchReferenceAndSumToFrameCount) {
  Rng rng(51);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_head<double>(kCfg, rng);
    const std::size_t n = 1 + rng.below(7);
    const auto in = random_input<double>(n, 3, 6, rng);
    const auto tr = head_forward(p, in);
    const auto ref = reference::head(p, in);
    const auto s = frame_saliency(p, tr, Criterion::kMean);
    double sg = 0.0, sl = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(s.global[i], ref.wid_global[i], 1e-10);
      EXPECT_NEAR(s.local[i], ref.wid_local[i], 1e-10);
      EXPECT_NEAR(s.beta[i], ref.beta[i], 1e-10);
      sg += s.global[i];
      sl += s.local[i];
      sb += s.beta[i];
    }
    EXPECT_NEAR(sg, static_cast<double>(n), 1e-9);
    EXPECT_NEAR(sl, static_cast<double>(n), 1e-9);
    EXPECT_NEAR(sb, static_cast<double>(n), 1e-9);
  }
}

TEST(ObjectWids, MatchReferenceAndCarryMetadata) {
  SynthSpec spec;
  spec.classes = 4;
  spec.features = 6;
  spec.frames = 3;
  spec.objects = 4;
  const auto pack = synth_video(spec, synth_signatures(spec), 2).pack;
  Rng rng(52);
  const auto p = random_head<double>(kCfg, rng);
  const auto in = to_input<double>(pack);
  const auto tr = head_forward(p, in);
  const auto ref = reference::head(p, in);
  const auto obj = object_wids(tr, &pack);
  ASSERT_EQ(obj.wid.size(), 3u);
  for (std::size_t n = 0; n < 3; ++n) {
    double total = 0.0;
    for (std::size_t l = 0; l < 4; ++l) {
      EXPECT_NEAR(obj.wid[n][l], ref.wid_objects[n][l], 1e-10);
      total += obj.wid[n][l];
    }
    EXPECT_NEAR(total, 4.0, 1e-9);
    for (std::size_t r = 1; r < 4; ++r) EXPECT_GE(obj.ranked[n][r - 1].wid, obj.ranked[n][r].wid);
    const auto& top = obj.ranked[n][0];
    EXPECT_EQ(top.class_name, pack.meta(n, top.object_index).class_name);
    EXPECT_FLOAT_EQ(static_cast<float>(top.confidence), pack.meta(n, top.object_index).confidence);
  }
}

TEST(GradCam, MatchesDefinitionAndIsNonNegative) {
  Rng rng(53);
  const auto p = random_head<double>(kCfg, rng);
  const auto in = random_input<double>(5, 2, 6, rng);
  const auto tr = head_forward(p, in);
  const std::size_t target = 1;

  // alpha: the pooled-output gradient shared equally by the N frame nodes.
  Tensor2<double> onehot(1, 4);
  onehot[target] = 1.0;
  const auto g_pooled = temporal_pooled_grad(p, tr, onehot);
  std::vector<double> alpha(6);
  for (std::size_t j = 0; j < 6; ++j) alpha[j] = g_pooled[j] / 5.0;
  const auto& xi = tr.omega3.output_nodes();

  const auto scores = gradcam_frame_scores(p, tr, target);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += alpha[j] * xi(i, j);
    EXPECT_NEAR(scores[i], std::max(0.0, s), 1e-12);
    EXPECT_GE(scores[i], 0.0);
  }
  EXPECT_THROW(gradcam_frame_scores(p, tr, 4), ParameterError);
}

TEST(GradCam, PooledGradientMatchesFiniteDifferences) {
  Rng rng(54);
  auto p = random_head<double>(kCfg, rng);
  const auto in = random_input<double>(3, 2, 6, rng);
  const auto tr = head_forward(p, in);
  Tensor2<double> onehot(1, 4);
  onehot[2] = 1.0;
  const auto g = temporal_pooled_grad(p, tr, onehot);
  // Perturb the temporal pooled output through the classifier directly.
  for (std::size_t j = 0; j < 6; ++j) {
    auto score_at = [&](double delta) {
      auto zeta = tr.zeta;
      zeta[6 + j] += delta;
      auto logits = ops::affine_rows(ops::affine_rows(zeta, p.u1_weight, p.u1_bias), p.u2_weight, p.u2_bias);
      return ops::sigmoid(logits)[2];
    };
    EXPECT_LT(vigat::testing::rel_error(g[j], (score_at(1e-6) - score_at(-1e-6)) / 2e-6), 1e-6);
  }
}

TEST(FrameSaliency, RankingFollowsCriterion) {
  Rng rng(55);
  const auto p = random_head<double>(kCfg, rng);
  const auto tr = head_forward(p, random_input<double>(6, 2, 6, rng));
  for (auto c : {Criterion::kMean, Criterion::kMax, Criterion::kLocalOnly, Criterion::kGlobalOnly,
                 Criterion::kGradCam}) {
    const auto s = frame_saliency(p, tr, c);
    EXPECT_EQ(s.ranking, rank_descending(s.scores));
    EXPECT_EQ(s.gradcam.has_value(), c == Criterion::kGradCam);
  }
  EXPECT_THROW(frame_saliency(p, tr, Criterion::kRandom), ParameterError);
}

TEST(RandomRanking, SeededPermutations) {
  const auto a = random_frame_ranking(8, 5, 3);
  EXPECT_EQ(a, random_frame_ranking(8, 5, 3));
  EXPECT_NE(a, random_frame_ranking(8, 5, 4));
  ASSERT_EQ(a.size(), 5u);
  for (const auto& r : a) {
    auto s = r;
    std::sort(s.begin(), s.end());
    std::vector<std::size_t> want(8);
    std::iota(want.begin(), want.end(), std::size_t{0});
    EXPECT_EQ(s, want);
  }
  EXPECT_THROW(random_frame_ranking(8, 0, 3), ParameterError);
}

TEST(PrecisionAtK, Example) {
  const std::vector<std::size_t> ranking{4, 1, 0, 2}, truth{1, 2};
  EXPECT_DOUBLE_EQ(precision_at_k(ranking, truth, 1), 0.0);
  EXPECT_DOUBLE_EQ(precision_at_k(ranking, truth, 2), 0.5);
  EXPECT_DOUBLE_EQ(precision_at_k(ranking, truth, 4), 0.5);
  EXPECT_THROW(precision_at_k(ranking, truth, 5), ParameterError);
}

TEST(ExplanationJson, HasFramesAndObjects) {
  SynthSpec spec;
  spec.classes = 4;
  spec.features = 6;
  spec.frames = 3;
  spec.objects = 2;
  const auto pack = synth_video(spec, synth_signatures(spec), 0).pack;
  Rng rng(56);
  const auto p = random_head<double>(kCfg, rng);
  const auto tr = head_forward(p, pack);
  const auto j = explanation_json(pack, p, tr, Criterion::kMean);
  EXPECT_EQ(j["video_id"], pack.video_id);
  EXPECT_EQ(j["ranked_frames"].size(), 3u);
  EXPECT_EQ(j["per_frame_objects"].size(), 3u);
  EXPECT_EQ(j["per_frame_objects"][0]["ranked"].size(), 2u);
  const auto r = explanation_json(pack, p, tr, Criterion::kRandom, 9);
  EXPECT_EQ(r["ranked_frames"], explanation_json(pack, p, tr, Criterion::kRandom, 9)["ranked_frames"]);
}
