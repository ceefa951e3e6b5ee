#include <gtest/gtest.h>

#include <numeric>

#include "gastgrn/graph.hpp"
#include "test_util.hpp"

using namespace gastgrn;
using testutil::max_abs_diff;
using testutil::max_fd_error;
using testutil::probe;
using testutil::random_tensor;

namespace {

using Mat = std::vector<double>;

Mat matmul_ref(const Mat& a, const Mat& b, std::size_t n) {
    Mat c(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < n; ++p) c[i * n + j] += a[i * n + p] * b[p * n + j];
    return c;
}

Mat power(const Mat& a, std::size_t k, std::size_t n) {
    Mat r(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) r[i * n + i] = 1.0;
    for (std::size_t i = 0; i < k; ++i) r = matmul_ref(r, a, n);
    return r;
}

// Explicit Chebyshev polynomials in the monomial basis.
Mat chebyshev_direct(const Mat& l, std::size_t k, std::size_t n) {
    static const std::vector<std::vector<double>> coeff{{1}, {0, 1}, {-1, 0, 2}, {0, -3, 0, 4}};
    Mat out(n * n, 0.0);
    for (std::size_t p = 0; p < coeff[k].size(); ++p) {
        const Mat lp = power(l, p, n);
        for (std::size_t i = 0; i < n * n; ++i) out[i] += coeff[k][p] * lp[i];
    }
    return out;
}

std::span<const double> slice(const Tensor& stack, std::size_t k, std::size_t t) {
    const std::size_t steps = stack.dim(1), nn = stack.dim(2) * stack.dim(3);
    return stack.values().subspan((k * steps + t) * nn, nn);
}

Tensor permute_rows(const Tensor& m, const std::vector<std::size_t>& perm) {
    // rows along axis 0
    const std::size_t rows = m.dim(0), width = m.numel() / rows;
    std::vector<double> out(m.numel());
    for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(m.values().begin() + perm[i] * width, width, out.begin() + i * width);
    return Tensor(m.shape(), std::move(out));
}

}  // namespace

TEST(Chebyshev, MatchesDirectPolynomialEvaluation) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + seed % 5;
        Tensor lap = random_tensor({2, n, n}, rng, false);
        for (std::size_t k = 1; k <= 3; ++k) {
            Tensor stack = chebyshev_stack(lap, k);
            ASSERT_EQ(stack.shape(), (Shape{k + 1, 2, n, n}));
            for (std::size_t t = 0; t < 2; ++t) {
                const auto l = lap.values().subspan(t * n * n, n * n);
                const Mat lm(l.begin(), l.end());
                for (std::size_t j = 0; j <= k; ++j) EXPECT_LT(max_abs_diff(slice(stack, j, t), chebyshev_direct(lm, j, n)), 1e-10);
            }
        }
    }
}

TEST(Chebyshev, UniformTwoNodeSecondOrder) {
    Tensor lap({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    Tensor stack = chebyshev_stack(lap, 2);
    const Mat expected{0, 1, 1, 0};
    EXPECT_LT(max_abs_diff(slice(stack, 2, 0), expected), 1e-12);
}

TEST(SequenceGraphs, IdenticalEmbeddingsGiveUniformRows) {
    ParameterStore store;
    Rng rng(1);
    auto bank = EmbeddingBank::create(store, "e.", 5, 3, 2, true, rng);
    for (std::size_t i = 0; i < 5; ++i) {
        bank.node.mutable_values()[i * 2] = 0.3;
        bank.node.mutable_values()[i * 2 + 1] = -0.7;
    }
    std::fill(bank.position.mutable_values().begin(), bank.position.mutable_values().end(), 0.0);
    GraphBundle g = build_sequence_graphs(bank, 2);
    for (double v : g.laplacians.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(SequenceGraphs, StepsDifferAndRowsAreStochastic) {
    ParameterStore store;
    Rng rng(3);
    auto bank = EmbeddingBank::create(store, "e.", 6, 4, 3, true, rng);
    GraphBundle g = build_sequence_graphs(bank, 3);
    ASSERT_EQ(g.laplacians.shape(), (Shape{4, 6, 6}));
    ASSERT_EQ(g.cheb_stack.shape(), (Shape{4, 4, 6, 6}));
    const auto l = g.laplacians.values();
    for (std::size_t r = 0; r < 24; ++r) EXPECT_NEAR(std::accumulate(l.begin() + r * 6, l.begin() + r * 6 + 6, 0.0), 1.0, 1e-9);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) EXPECT_GT(max_abs_diff(l.subspan(i * 36, 36), l.subspan(j * 36, 36)), 1e-6);
    // recurrence invariant
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t k = 1; k + 1 <= 3; ++k) {
            const auto tk = slice(g.cheb_stack, k, t), tkm = slice(g.cheb_stack, k - 1, t);
            const Mat lm(l.begin() + t * 36, l.begin() + t * 36 + 36);
            Mat next = matmul_ref(lm, Mat(tk.begin(), tk.end()), 6);
            for (std::size_t e = 0; e < 36; ++e) next[e] = 2 * next[e] - tkm[e];
            EXPECT_LT(max_abs_diff(slice(g.cheb_stack, k + 1, t), next), 1e-10);
        }
        EXPECT_LT(max_abs_diff(slice(g.cheb_stack, 1, t), l.subspan(t * 36, 36)), 1e-15);
    }
}

TEST(SequenceGraphs, GradientsReachEmbeddings) {
    ParameterStore store;
    Rng rng(5);
    auto bank = EmbeddingBank::create(store, "e.", 3, 2, 2, true, rng);
    std::vector<Tensor> params;
    for (const auto& e : store.entries()) params.push_back(e.tensor);
    EXPECT_LT(max_fd_error([&] { return probe(build_sequence_graphs(bank, 2).cheb_stack); }, params), 1e-6);
}

TEST(AdaptiveGraph, ReplicatedBitExact) {
    Rng rng(7);
    Tensor e = random_tensor({4, 3}, rng);
    GraphBundle g = build_adaptive_graph(e, 5, 2);
    const auto l = g.laplacians.values();
    for (std::size_t t = 1; t < 5; ++t) EXPECT_EQ(max_abs_diff(l.subspan(0, 16), l.subspan(t * 16, 16)), 0.0);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(std::accumulate(l.begin() + r * 4, l.begin() + r * 4 + 4, 0.0), 1.0, 1e-9);
    Tensor same = Tensor::full({3, 2}, 0.4);
    const GraphBundle uniform_graph = build_adaptive_graph(same, 2, 1);
    for (double v : uniform_graph.laplacians.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(StaticGraphTest, CompleteGraphOnTwoNodes) {
    StaticGraph g = StaticGraph::from_adjacency(Tensor({2, 2}, {0, 1, 1, 0}));
    EXPECT_LT(max_abs_diff(g.laplacian.values(), Mat{1, -1, -1, 1}), 1e-15);
    EXPECT_NEAR(g.lambda_max, 2.0, 1e-6);
    EXPECT_LT(max_abs_diff(g.scaled.values(), Mat{0, -1, -1, 0}), 1e-6);
}

TEST(StaticGraphTest, RejectsInvalidAdjacency) {
    EXPECT_THROW(StaticGraph::from_adjacency(Tensor({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 0})), InvalidGraph);
    EXPECT_THROW(StaticGraph::from_adjacency(Tensor({2, 2}, {0, 1, 2, 0})), InvalidGraph);
    EXPECT_THROW(StaticGraph::from_adjacency(Tensor({2, 2}, {0, -1, -1, 0})), InvalidGraph);
    EXPECT_THROW(StaticGraph::from_adjacency(Tensor::zeros({2, 3})), InvalidGraph);
}

TEST(StaticGraphTest, ScaledLaplacianSymmetricWithSpectrumInRange) {
    Rng rng(9);
    const std::size_t n = 6;
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i] = uniform(rng, 0.1, 1.0);
    StaticGraph g = StaticGraph::from_adjacency(Tensor({n, n}, a));
    EXPECT_TRUE(g.converged);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) EXPECT_LT(std::abs(g.scaled.at({i, j}) - g.scaled.at({j, i})), 1e-12);
    EXPECT_LE(g.lambda_max, 2.0 + 1e-9);
}

TEST(Sgcn, ZeroInputPaths) {
    ParameterStore store;
    Rng rng(11);
    auto params = SgcnParams::create(store, "s.", 3, 2, 2, 4, rng);
    Tensor e = random_tensor({5, 3}, rng, false);
    GraphBundle g = build_adaptive_graph(e, 1, 2);
    Tensor x = Tensor::zeros({2, 5, 2});
    for (double v : sgcn_forward(x, g, params, 0).values()) EXPECT_EQ(v, 0.0);
    Tensor b = random_tensor({3, 4}, rng, false);
    std::copy(b.values().begin(), b.values().end(), params.bias_pool.mutable_values().begin());
    Tensor z = sgcn_forward(x, g, params, 0);
    for (std::size_t batch = 0; batch < 2; ++batch)
        for (std::size_t n = 0; n < 5; ++n)
            for (std::size_t o = 0; o < 4; ++o) {
                double ref = 0;
                for (std::size_t d = 0; d < 3; ++d) ref += e.at({n, d}) * b.at({d, o});
                EXPECT_NEAR(z.at({batch, n, o}), ref, 1e-15);
            }
}

TEST(Sgcn, MatchesNestedLoopOracle) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ParameterStore store;
        Rng rng(seed);
        const std::size_t n = 2 + seed % 3, k = 1 + seed % 3, ci = 2, co = 3, de = 2, batch = 2;
        auto params = SgcnParams::create(store, "s.", de, k, ci, co, rng);
        std::copy_n(random_tensor({de * co}, rng, false).values().begin(), de * co, params.bias_pool.mutable_values().begin());
        auto bank = EmbeddingBank::create(store, "e.", n, 2, de, true, rng);
        GraphBundle g = build_sequence_graphs(bank, k);
        Tensor x = random_tensor({batch, n, ci}, rng, false);
        const std::size_t t = 1;
        Tensor z = sgcn_forward(x, g, params, t);
        const Tensor e = select(g.embeddings, 0, t);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < co; ++o) {
                    double ref = 0.0;
                    for (std::size_t kk = 0; kk <= k; ++kk)
                        for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t c = 0; c < ci; ++c) {
                                double theta = 0.0;
                                for (std::size_t d = 0; d < de; ++d)
                                    theta += e.at({i, d}) * params.weight_pool.at({d, kk, c, o});
                                ref += g.cheb_stack.at({kk, t, i, j}) * x.at({b, j, c}) * theta;
                            }
                    for (std::size_t d = 0; d < de; ++d) ref += e.at({i, d}) * params.bias_pool.at({d, o});
                    EXPECT_NEAR(z.at({b, i, o}), ref, 1e-12);
                }
    }
}

TEST(Sgcn, HandConstantTwoNodeExample) {
    // N=2, K=1, C_in=C_out=1, d_e=1: Z[n] = E[n] (w0 x[n] + w1 (L x)[n]) + E[n] b
    ParameterStore store;
    Rng rng(1);
    auto params = SgcnParams::create(store, "s.", 1, 1, 1, 1, rng);
    params.weight_pool.mutable_values()[0] = 0.2;
    params.weight_pool.mutable_values()[1] = -0.3;
    params.bias_pool.mutable_values()[0] = 0.05;
    StepGraph step{stack({Tensor::eye(2), Tensor({2, 2}, {0.6, 0.4, 0.1, 0.9})}, 0), Tensor({2, 1}, {0.5, 2.0})};
    Tensor z = sgcn_forward(Tensor({1, 2, 1}, {1.0, -2.0}), step, params);
    const double lx0 = 0.6 * 1.0 + 0.4 * -2.0, lx1 = 0.1 * 1.0 + 0.9 * -2.0;
    EXPECT_NEAR(z.values()[0], 0.5 * (0.2 * 1.0 - 0.3 * lx0) + 0.5 * 0.05, 1e-12);
    EXPECT_NEAR(z.values()[1], 2.0 * (0.2 * -2.0 - 0.3 * lx1) + 2.0 * 0.05, 1e-12);
}

TEST(Sgcn, JointPermutationEquivariance) {
    ParameterStore store;
    Rng rng(13);
    const std::size_t n = 5;
    auto params = SgcnParams::create(store, "s.", 3, 2, 2, 3, rng);
    std::copy_n(random_tensor({9}, rng, false).values().begin(), 9, params.bias_pool.mutable_values().begin());
    Tensor e = random_tensor({n, 3}, rng, false);
    Tensor x = random_tensor({n, 2}, rng, false);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + (i + 1) % n] = a[((i + 1) % n) * n + i] = 1.0 + 0.1 * i;
    a[0 * n + 2] = a[2 * n + 0] = 0.7;
    std::vector<double> ap(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ap[i * n + j] = a[perm[i] * n + perm[j]];
    auto run = [&](const GraphBundle& g, const Tensor& xs) { return sgcn_forward(reshape(xs, {1, n, 2}), g, params, 0); };
    for (int mode = 0; mode < 3; ++mode) {
        GraphBundle g1, g2;
        if (mode == 0) {
            g1 = build_static_graph(StaticGraph::from_adjacency(Tensor({n, n}, a)), e, 1, 2);
            g2 = build_static_graph(StaticGraph::from_adjacency(Tensor({n, n}, ap)), permute_rows(e, perm), 1, 2);
        } else if (mode == 1) {
            g1 = build_adaptive_graph(e, 1, 2);
            g2 = build_adaptive_graph(permute_rows(e, perm), 1, 2);
        } else {
            ParameterStore s2;
            Rng r2(1);
            auto bank = EmbeddingBank::create(s2, "e.", n, 1, 3, true, r2);
            std::copy(e.values().begin(), e.values().end(), bank.node.mutable_values().begin());
            g1 = build_sequence_graphs(bank, 2);
            auto bank2 = bank;
            bank2.node = permute_rows(e, perm);
            g2 = build_sequence_graphs(bank2, 2);
        }
        Tensor z1 = reshape(run(g1, x), {n, 3});
        Tensor z2 = reshape(run(g2, permute_rows(x, perm)), {n, 3});
        EXPECT_LT(max_abs_diff(permute_rows(z1, perm).values(), z2.values()), 1e-10) << "mode " << mode;
    }
}

TEST(Sgcn, GradientsMatchFiniteDifferences) {
    ParameterStore store;
    Rng rng(17);
    auto params = SgcnParams::create(store, "s.", 2, 2, 2, 2, rng);
    auto bank = EmbeddingBank::create(store, "e.", 3, 2, 2, true, rng);
    for (auto& e : store.entries()) {
        for (auto& v : e.tensor.mutable_values()) v += uniform(rng, -0.3, 0.3);
    }
    Tensor x = random_tensor({2, 3, 2}, rng);
    std::vector<Tensor> all{x};
    for (const auto& e : store.entries()) all.push_back(e.tensor);
    EXPECT_LT(max_fd_error([&] { return probe(sgcn_forward(x, build_sequence_graphs(bank, 2), params, 1)); }, all), 1e-5);
}

TEST(Sgcn, StepIndexChecked) {
    Rng rng(19);
    GraphBundle g = build_adaptive_graph(random_tensor({3, 2}, rng, false), 2, 1);
    EXPECT_THROW(step_graph(g, 2), std::out_of_range);
}
