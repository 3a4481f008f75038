#include "fairstg/autodiff.hpp"
#include "support/grad_check.hpp"

#include <doctest.h>

#include <random>

using fairstg::ad::Matrix;
using fairstg::ad::Tape;
using fairstg::ad::Var;
using fairstg::testsupport::away_from_zero;
using fairstg::testsupport::check_grads;
using fairstg::testsupport::random_matrix;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

} // namespace

TEST_CASE("forward values of elementwise ops") {
    Tape t;
    Var x = t.leaf(from_rows({{0.0, 1.0, -2.0}}), false);
    CHECK(t.value(t.sigmoid(x))(0, 0) == doctest::Approx(0.5));
    CHECK(t.value(t.relu(x))(0, 2) == 0.0);
    CHECK(t.value(t.relu(x))(0, 1) == 1.0);
    CHECK(t.value(t.abs_(x))(0, 2) == 2.0);
    CHECK(t.value(t.tanh_(x))(0, 1) == doctest::Approx(std::tanh(1.0)));
    CHECK(t.value(t.square(x))(0, 2) == 4.0);
    CHECK(t.value(t.clamp(x, -1.0, 0.5))(0, 2) == -1.0);
    CHECK(t.value(t.clamp(x, -1.0, 0.5))(0, 1) == 0.5);
    CHECK(t.value(t.affine(x, 2.0, 1.0))(0, 2) == -3.0);
}

TEST_CASE("softmax rows sum to one and match a hand case") {
    Tape t;
    Var x = t.leaf(from_rows({{0.0, 0.0}, {1.0, 3.0}}), false);
    Matrix y = t.value(t.softmax_rows(x));
    CHECK(y(0, 0) == doctest::Approx(0.5));
    CHECK(y.row(1).sum() == doctest::Approx(1.0));
    double e2 = std::exp(2.0);
    CHECK(y(1, 1) == doctest::Approx(e2 / (1.0 + e2)));
}

TEST_CASE("temporal_conv matches a hand-computed causal case") {
    // w=3, cin=1, cout=1, kernel=2, dilation=1: out_t = b + W0 x_t + W1 x_{t-1}.
    Tape t;
    Var x = t.leaf(from_rows({{1.0, 2.0, 3.0}}), false);
    Var W = t.leaf(from_rows({{10.0}, {100.0}}), false);
    Var b = t.leaf(from_rows({{0.5}}), false);
    Matrix y = t.value(t.temporal_conv(x, W, b, 3, 1, 1, 2, 1));
    CHECK(y(0, 0) == doctest::Approx(10.5));           // pad: 10*1 + 100*0 + .5
    CHECK(y(0, 1) == doctest::Approx(120.5));          // 10*2 + 100*1 + .5
    CHECK(y(0, 2) == doctest::Approx(230.5));          // 10*3 + 100*2 + .5
}

TEST_CASE("temporal_conv dilation skips intermediate steps") {
    Tape t;
    Var x = t.leaf(from_rows({{1.0, 2.0, 3.0, 4.0}}), false);
    Var W = t.leaf(from_rows({{1.0}, {1.0}}), false);
    Var b = t.leaf(Matrix::Zero(1, 1), false);
    Matrix y = t.value(t.temporal_conv(x, W, b, 4, 1, 1, 2, 2));
    CHECK(y(0, 0) == doctest::Approx(1.0)); // x_0 + pad
    CHECK(y(0, 1) == doctest::Approx(2.0)); // x_1 + pad
    CHECK(y(0, 2) == doctest::Approx(4.0)); // x_2 + x_0
    CHECK(y(0, 3) == doctest::Approx(6.0)); // x_3 + x_1
}

TEST_CASE("spatial_mix multiplies each group block") {
    Tape t;
    Matrix A = from_rows({{0.0, 1.0}, {1.0, 0.0}}); // swap the two rows
    Matrix x = from_rows({{1.0}, {2.0}, {3.0}, {4.0}});
    Var out = t.spatial_mix(t.leaf(A, false), t.leaf(x, false), 2);
    Matrix y = t.value(out);
    CHECK(y(0, 0) == 2.0);
    CHECK(y(1, 0) == 1.0);
    CHECK(y(2, 0) == 4.0);
    CHECK(y(3, 0) == 3.0);
}

TEST_CASE("gradients accumulate when a var is used twice") {
    Tape t;
    Var x = t.leaf(from_rows({{3.0}}), true);
    Var y = t.add(x, x);
    t.backward(t.sum_all(y));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("constants receive no gradient") {
    Tape t;
    Var x = t.leaf(from_rows({{3.0}}), true);
    Var c = t.constant(from_rows({{5.0}}));
    Var y = t.cmul(x, c);
    t.backward(t.sum_all(y));
    CHECK(t.grad(c)(0, 0) == 0.0);
    CHECK(t.grad(x)(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("shape mismatches throw") {
    Tape t;
    Var a = t.leaf(Matrix::Zero(2, 3), false);
    Var b = t.leaf(Matrix::Zero(3, 2), false);
    CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(t.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(t.rows(a, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(t.cols(a, 2, 2), std::invalid_argument);
}

TEST_CASE("finite differences confirm every op gradient") {
    std::mt19937 rng(7);

    SUBCASE("matmul, transpose, add, sub") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var m = t.matmul(v[0], v[1]);
                Var s = t.sub(t.add(m, v[2]), t.transpose(v[3]));
                return t.mean_all(t.square(s));
            },
            {random_matrix(3, 4, rng), random_matrix(4, 2, rng), random_matrix(3, 2, rng),
             random_matrix(2, 3, rng)});
    }

    SUBCASE("cmul, scale, affine") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var m = t.cmul(v[0], v[1]);
                return t.mean_all(t.square(t.affine(t.scale(m, 3.0), 0.5, -1.0)));
            },
            {random_matrix(3, 3, rng), random_matrix(3, 3, rng)});
    }

    SUBCASE("add_rowvec") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean_all(t.square(t.add_rowvec(v[0], v[1])));
            },
            {random_matrix(4, 3, rng), random_matrix(1, 3, rng)});
    }

    SUBCASE("smooth nonlinearities") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var a = t.tanh_(v[0]);
                Var b = t.sigmoid(a);
                return t.mean_all(t.square(b));
            },
            {random_matrix(3, 3, rng)});
    }

    SUBCASE("relu and abs away from the kink") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean_all(t.add(t.relu(v[0]), t.abs_(v[0])));
            },
            {away_from_zero(random_matrix(4, 4, rng))});
    }

    SUBCASE("log on positive input") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.log_(v[0])); },
            {random_matrix(3, 3, rng, 0.5, 2.0)});
    }

    SUBCASE("clamp passes gradient only inside the band") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean_all(t.square(t.clamp(v[0], -0.5, 0.5)));
            },
            // keep entries off the clamp edges so fd stays one-sided-free
            {away_from_zero(random_matrix(4, 4, rng), 0.02)});
    }

    SUBCASE("rows gather with a repeated index scatter-adds") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var g = t.rows(v[0], {2, 0, 2, 1});
                return t.mean_all(t.square(g));
            },
            {random_matrix(3, 3, rng)});
    }

    SUBCASE("cols block") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean_all(t.square(t.cols(v[0], 1, 2)));
            },
            {random_matrix(3, 4, rng)});
    }

    SUBCASE("concat_cols") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var c = t.concat_cols({v[0], v[1], v[2]});
                return t.mean_all(t.square(c));
            },
            {random_matrix(3, 2, rng), random_matrix(3, 1, rng), random_matrix(3, 3, rng)});
    }

    SUBCASE("reductions and broadcasts") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var rm = t.row_mean(v[0]);                  // Mx1
                Var centered = t.sub_scalar(v[0], t.mean_all(v[0]));
                Var scaled = t.row_scale(centered, rm);
                return t.add(t.mean_all(t.square(scaled)),
                             t.scale(t.sum_all(t.square(rm)), 0.1));
            },
            {random_matrix(4, 3, rng)});
    }

    SUBCASE("softmax_rows") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var sm = t.softmax_rows(v[0]);
                return t.mean_all(t.cmul(sm, v[1]));
            },
            {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
    }

    SUBCASE("temporal_conv") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var y = t.temporal_conv(v[0], v[1], v[2], 4, 2, 3, 2, 2);
                return t.mean_all(t.square(y));
            },
            {random_matrix(3, 8, rng), random_matrix(4, 3, rng), random_matrix(1, 3, rng)});
    }

    SUBCASE("spatial_mix") {
        check_grads(
            [](Tape& t, const std::vector<Var>& v) {
                Var y = t.spatial_mix(v[0], v[1], 3);
                return t.mean_all(t.square(y));
            },
            {random_matrix(3, 3, rng), random_matrix(6, 2, rng)});
    }
}

TEST_CASE("backward is deterministic for identical inputs") {
    std::mt19937 rng(11);
    Matrix a = random_matrix(4, 4, rng);
    Matrix b = random_matrix(4, 4, rng);
    auto run = [&]() {
        Tape t;
        Var va = t.leaf(a, true);
        Var vb = t.leaf(b, true);
        Var y = t.mean_all(t.square(t.matmul(t.tanh_(va), vb)));
        t.backward(y);
        return std::pair<Matrix, Matrix>(t.grad(va), t.grad(vb));
    };
    auto [ga1, gb1] = run();
    auto [ga2, gb2] = run();
    CHECK((ga1 - ga2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gb1 - gb2).cwiseAbs().maxCoeff() == 0.0);
}
