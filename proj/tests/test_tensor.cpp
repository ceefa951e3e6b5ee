#include <gtest/gtest.h>

#include <cmath>

#include "gastgrn/ops.hpp"
#include "test_util.hpp"

using namespace gastgrn;
using testutil::max_fd_error;
using testutil::probe;
using testutil::random_tensor;

TEST(Tensor, ConstructionValidatesShape) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor({0, 2}, {}), ShapeError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.dim(-1), 3u);
    EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
    EXPECT_THROW(t.at({2, 0}), std::out_of_range);
    EXPECT_THROW(t.dim(2), std::out_of_range);
}

TEST(Tensor, BroadcastAddMatchesLoop) {
    Tensor a({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({4, 1}, {10, 20, 30, 40});
    Tensor c = add(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 4, 3}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(c.at({i, j, k}), a.at({i, 0, k}) + b.at({j, 0}));
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
}

TEST(Tensor, MatmulMatchesLoopWithBatchBroadcast) {
    Rng rng(3);
    Tensor a = random_tensor({3, 2, 4, 5}, rng, false);
    Tensor b = random_tensor({2, 5, 3}, rng, false);
    Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{3, 2, 4, 3}));
    for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < 5; ++p) s += a.at({x, y, i, p}) * b.at({y, p, j});
                    EXPECT_NEAR(c.at({x, y, i, j}), s, 1e-13);
                }
}

TEST(Tensor, MatmulShapeErrorNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
    }
}

TEST(Tensor, MatmulGradientMatchesFiniteDifferences) {
    Rng rng(5);
    Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 2}, rng);
    EXPECT_LT(max_fd_error([&] { return probe(matmul(a, b)); }, {a, b}), 1e-7);
}

TEST(Tensor, ElementwiseGradients) {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({1, 4}, rng);
    EXPECT_LT(max_fd_error([&] { return probe(sub(mul(a, b), add(a, b))); }, {a, b}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(sigmoid(a)); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(tanh(a)); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(exp(a)); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(square(a)); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(rsub_scalar(1.0, mul_scalar(add_scalar(a, 2.0), 3.0))); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return mean(abs(a)); }, {a}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(relu(a)); }, {a}), 1e-7);
}

TEST(Tensor, SigmoidIsStableForLargeInputs) {
    Tensor y = sigmoid(Tensor({3}, {-800.0, 0.0, 800.0}));
    EXPECT_EQ(y.values()[0], 0.0);
    EXPECT_EQ(y.values()[1], 0.5);
    EXPECT_EQ(y.values()[2], 1.0);
}

TEST(Tensor, SubgradientsAtZero) {
    Tensor x({2}, {0.0, 0.0}, true);
    backward(sum(add(abs(x), relu(x))));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, SoftmaxExamplesAndRows) {
    Tensor u = softmax(Tensor({1, 4}, {3, 3, 3, 3}));
    for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
    Tensor big = softmax(Tensor({1, 2}, {1000.0, 0.0}));
    EXPECT_TRUE(std::isfinite(big.values()[0]));
    EXPECT_NEAR(big.values()[0], 1.0, 1e-15);
    Rng rng(9);
    Tensor x = random_tensor({3, 5, 4}, rng, true, -5, 5);
    for (int axis : {0, 1, 2}) EXPECT_LT(max_fd_error([&] { return probe(softmax(x, axis)); }, {x}), 1e-6);
    Tensor s = softmax(x, -1);
    for (std::size_t i = 0; i < 15; ++i) {
        double r = 0;
        for (std::size_t j = 0; j < 4; ++j) r += s.values()[i * 4 + j];
        EXPECT_NEAR(r, 1.0, 1e-12);
    }
}

TEST(Tensor, LayerNormMatchesPopulationFormula) {
    Tensor x({1, 4}, {1, 2, 3, 4});
    Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    const double var = 1.25;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.values()[j], (j + 1 - 2.5) / std::sqrt(var + 1e-5), 1e-12);
    Rng rng(11);
    Tensor a = random_tensor({3, 2, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
    EXPECT_LT(max_fd_error([&] { return probe(layer_norm(a, g, b)); }, {a, g, b}), 1e-6);
}

TEST(Tensor, ShapeOpsRoundTripAndGradients) {
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor p = permute(x, {2, 0, 1});
    EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
    EXPECT_DOUBLE_EQ(p.at({3, 1, 2}), x.at({1, 2, 3}));
    Tensor back = permute(p, {1, 2, 0});
    EXPECT_EQ(testutil::max_abs_diff(back.values(), x.values()), 0.0);
    EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
    Tensor y = random_tensor({2, 3, 2}, rng);
    EXPECT_LT(max_fd_error([&] { return probe(concat({x, y}, -1)); }, {x, y}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(stack({x, x}, 1)); }, {x}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(select(x, 1, 2)); }, {x}), 1e-7);
    EXPECT_LT(max_fd_error([&] { return probe(transpose(reshape(x, {6, 4}), 0, 1)); }, {x}), 1e-7);
    EXPECT_THROW(select(x, 1, 3), std::out_of_range);
    EXPECT_EQ(stack({x, x}, 0).shape(), (Shape{2, 2, 3, 4}));
}

TEST(Tensor, DropoutContract) {
    Rng rng(17);
    Tensor x = Tensor::full({1000}, 1.0);
    EXPECT_TRUE(dropout(x, 0.5, false, rng).same_as(x));
    EXPECT_TRUE(dropout(x, 0.0, true, rng).same_as(x));
    EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
    EXPECT_THROW(dropout(x, -0.1, true, rng), std::invalid_argument);
    Tensor y = dropout(x, 0.25, true, rng);
    std::size_t zeros = 0;
    for (double v : y.values()) {
        if (v == 0.0) ++zeros;
        else EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
    EXPECT_GT(zeros, 180u);
    EXPECT_LT(zeros, 320u);
}

TEST(Tensor, BackwardContract) {
    Tensor x({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(mul(x, x)), std::invalid_argument);
    Tape::current().clear();
    backward(sum(mul(x, x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
    EXPECT_EQ(Tape::current().size(), 0u);
    {
        NoGradGuard guard;
        Tensor y = sum(mul(x, x));
        EXPECT_EQ(Tape::current().size(), 0u);
        (void)y;
    }
}

TEST(Tensor, GradientAccumulatesThroughSharedInputs) {
    Tensor x({1}, {3.0}, true);
    Tensor y = add(mul(x, x), x);  // 2x + 1 = 7
    backward(sum(y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, WorkedExamples) {
    Tensor m({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(testutil::max_abs_diff(matmul(Tensor::eye(2), m).values(), m.values()), 0.0);
    EXPECT_DOUBLE_EQ(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item(), 11.0);

    Tensor s = softmax(Tensor({3}, {1, 2, 3}));
    EXPECT_NEAR(s.values()[0], 0.09003, 1e-5);
    EXPECT_NEAR(s.values()[1], 0.24473, 1e-5);
    EXPECT_NEAR(s.values()[2], 0.66524, 1e-5);
    Tensor half = softmax(Tensor({2}, {0, 0}));
    EXPECT_DOUBLE_EQ(half.values()[0], 0.5);

    Tensor ln = layer_norm(Tensor({2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
    EXPECT_NEAR(ln.values()[0], 0.999995, 1e-5);
    EXPECT_NEAR(ln.values()[1], -0.999995, 1e-5);
    Tensor beta({3}, {0.1, -0.2, 0.3});
    Tensor flat = layer_norm(Tensor({3}, {5, 5, 5}), Tensor::full({3}, 2.0), beta);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(flat.values()[j], beta.values()[j]);

    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
    EXPECT_EQ(concat_lastdim(Tensor::zeros({2, 3, 4}), Tensor::zeros({2, 3, 4})).shape(), (Shape{2, 3, 8}));

    Tensor x({3}, {1, 2, 3}, true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tensor, MatmulSumGradientIsOnesTimesBTransposed) {
    Rng rng(21);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng, false);
    backward(sum(matmul(a, b)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(a.grad()[i * 4 + p], b.at({p, 0}) + b.at({p, 1}), 1e-15);
    EXPECT_LT(max_fd_error([&] { return sum(matmul(a, b)); }, {a}), 1e-6);
}

TEST(Tensor, DropoutRateMonteCarlo) {
    Rng rng(2024);
    Tensor y = dropout(Tensor::full({100000}, 1.0), 0.1, true, rng);
    std::size_t dropped = 0;
    for (double v : y.values()) dropped += v == 0.0 ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(dropped) / 1e5, 0.1, 0.01);
}

TEST(Tensor, ReshapeAndTransposePreserveValues) {
    Rng rng(23);
    Tensor x = random_tensor({2, 3, 4}, rng, false);
    auto sorted = [](std::span<const double> v) {
        std::vector<double> s(v.begin(), v.end());
        std::sort(s.begin(), s.end());
        return s;
    };
    EXPECT_EQ(sorted(transpose(x, 0, 2).values()), sorted(x.values()));
    EXPECT_EQ(sorted(reshape(x, {4, 6}).values()), sorted(x.values()));
}

TEST(Tensor, ReluPropagatesNan) {
    Tensor y = relu(Tensor({3}, {std::nan(""), -1.0, 0.0}));
    EXPECT_TRUE(std::isnan(y.values()[0]));
    EXPECT_EQ(y.values()[1], 0.0);
    EXPECT_EQ(y.values()[2], 0.0);
}
