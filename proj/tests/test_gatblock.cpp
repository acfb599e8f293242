#include <gtest/gtest.h>

#include "reference.hpp"
#include "test_support.hpp"

using namespace vigat;
using vigat::testing::random_tensor;

namespace {

GatBlockParams<double> random_block(std::size_t f, std::size_t m, Rng& rng) {
  GatBlockParams<double> p = GatBlockParams<double>::initialized(f, m, rng);
  p.for_each_tensor([&](Tensor2<double>& t) {
    for (auto& v : t.values()) v = 0.5 * rng.normal();
  });
  for (auto& g : p.ln_gain)
    for (auto& v : g.values()) v = 1.0 + 0.3 * rng.normal();
  return p;
}

Tensor2<double> permute_rows(const Tensor2<double>& x, const std::vector<std::size_t>& perm) {
  Tensor2<double> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(perm[i], j);
  return out;
}

}  // namespace

TEST(GatBlock, ParameterCountMatchesClosedForm) {
  Rng rng(1);
  for (std::size_t f : {1u, 3u, 16u})
    for (std::size_t m : {1u, 2u, 4u}) {
      EXPECT_EQ(GatBlockParams<double>::initialized(f, m, rng).parameter_count(),
                block_parameter_count(f, m));
    }
  EXPECT_EQ(block_parameter_count(768, 2), 2363904u);
  EXPECT_THROW(GatBlockParams<double>(0, 2), ParameterError);
}

TEST(GatBlock, SingleNodeHasUnitAdjacency) {
  Rng rng(2);
  const auto p = random_block(5, 2, rng);
  const auto tr = block_forward(p, random_tensor<double>(1, 5, rng));
  EXPECT_NEAR(tr.adjacency(0, 0), 1.0, 1e-9);
  EXPECT_EQ(tr.pooled, tr.output_nodes());
}

TEST(GatBlock, OrthogonalNodesGiveIdentityAdjacency) {
  GatBlockParams<double> p(4, 1);
  p.w_check = Tensor2<double>::identity(4);
  p.w_tilde = Tensor2<double>::identity(4);
  const auto tr = block_forward(p, Tensor2<double>::identity(4));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(tr.adjacency(k, l), k == l ? 1.0 : 0.0, 1e-9);
}

TEST(GatBlock, RejectsWrongWidthAndEmptyInput) {
  GatBlockParams<double> p(4, 1);
  EXPECT_THROW(block_forward(p, Tensor2<double>(3, 5)), DimensionError);
  EXPECT_THROW(block_forward(p, Tensor2<double>(0, 4)), DimensionError);
}

TEST(GatBlock, MatchesStraightLineReference) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = 1 + rng.below(6), f = 2 + rng.below(6), m = 1 + rng.below(3);
    const auto p = random_block(f, m, rng);
    const auto x = random_tensor<double>(k, f, rng);
    const auto tr = block_forward(p, x);
    const auto ref = reference::block(p, reference::to_mat(x));
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t l = 0; l < k; ++l) EXPECT_NEAR(tr.adjacency(r, l), ref.adjacency[r][l], 1e-12);
    for (std::size_t j = 0; j < f; ++j) EXPECT_NEAR(tr.pooled[j], ref.pooled[j], 1e-10);
  }
}

TEST(GatBlock, AdjacencyRowsSumToOneAndWidsSumToNodeCount) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + rng.below(9);
    const auto p = random_block(6, 1, rng);
    const auto tr = block_forward(p, random_tensor<double>(k, 6, rng));
    double total = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += tr.adjacency(r, l);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    for (double w : wid_column_sums(tr.adjacency)) total += w;
    EXPECT_NEAR(total, static_cast<double>(k), 1e-9);
  }
}

TEST(GatBlock, DuplicateNodesGetEqualWids) {
  Rng rng(5);
  const auto p = random_block(5, 2, rng);
  auto x = random_tensor<double>(4, 5, rng);
  for (std::size_t j = 0; j < 5; ++j) x(3, j) = x(1, j);
  const auto tr = block_forward(p, x);
  const auto w = wid_column_sums(tr.adjacency);
  EXPECT_NEAR(w[1], w[3], 1e-12);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(tr.output_nodes()(1, j), tr.output_nodes()(3, j), 1e-12);
}

TEST(GatBlock, PermutationEquivariance) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_block(6, 2, rng);
    const auto x = random_tensor<double>(7, 6, rng);
    const auto perm = rng.permutation(7);
    const auto a = block_forward(p, x);
    const auto b = block_forward(p, permute_rows(x, perm));
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j)
        EXPECT_NEAR(b.adjacency(i, j), a.adjacency(perm[i], perm[j]), 1e-12);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(b.pooled[j], a.pooled[j], 1e-12);
  }
}

TEST(GatBlock, AdjacencyInvariantToQueryScale) {
  Rng rng(7);
  auto p = random_block(5, 1, rng);
  const auto x = random_tensor<double>(4, 5, rng);
  const auto a = block_forward(p, x);
  p.w_check *= -3.0;
  p.b_check *= -3.0;
  const auto b = block_forward(p, x);
  for (std::size_t i = 0; i < a.adjacency.size(); ++i) EXPECT_NEAR(a.adjacency[i], b.adjacency[i], 1e-12);
}

TEST(GatBlock, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  const std::size_t k = 4, f = 5;
  const auto p = random_block(f, 2, rng);
  const auto x = random_tensor<double>(k, f, rng);
  const auto probe_pooled = random_tensor<double>(1, f, rng);
  const auto probe_adj = random_tensor<double>(k, k, rng);
  auto objective = [&](const GatBlockParams<double>& q, const Tensor2<double>& nodes) {
    const auto tr = block_forward(q, nodes);
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += tr.pooled[j] * probe_pooled[j];
    for (std::size_t i = 0; i < k * k; ++i) s += tr.adjacency[i] * probe_adj[i];
    return s;
  };

  const auto tr = block_forward(p, x);
  auto grads = GatBlockParams<double>::zeros_like(p);
  Tensor2<double> gx(k, f);
  block_backward(p, tr, BlockUpstream<double>{probe_pooled, probe_adj}, grads, &gx);

  const auto check = vigat::testing::finite_difference_check<GatBlockParams<double>>(
      p, grads, [&](const GatBlockParams<double>& q) { return objective(q, x); });
  EXPECT_LT(check.max_rel_error, 1e-5);
  EXPECT_EQ(check.checked, block_parameter_count(f, 2));

  auto xs = x;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double saved = xs[i];
    xs[i] = saved + 1e-6;
    const double up = objective(p, xs);
    xs[i] = saved - 1e-6;
    const double down = objective(p, xs);
    xs[i] = saved;
    EXPECT_LT(vigat::testing::rel_error(gx[i], (up - down) / 2e-6), 1e-5) << i;
  }
}

TEST(GatBlock, BackwardRejectsMismatchedTrace) {
  Rng rng(9);
  const auto p1 = random_block(4, 1, rng);
  const auto p2 = random_block(4, 2, rng);
  const auto tr = block_forward(p1, random_tensor<double>(3, 4, rng));
  auto g = GatBlockParams<double>::zeros_like(p2);
  EXPECT_THROW(block_backward(p2, tr, BlockUpstream<double>{Tensor2<double>(1, 4), {}}, g, nullptr),
               ConsistencyError);
}

TEST(GatBlock, WidOfNonSquareThrows) {
  EXPECT_THROW(wid_column_sums(Tensor2<double>(2, 3)), DimensionError);
  const auto w = wid_column_sums(Tensor2<double>::from_rows({{0.5, 0.5}, {0.0, 1.0}}));
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 1.5);
}
