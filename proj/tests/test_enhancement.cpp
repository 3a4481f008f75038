#include <doctest.h>

#include "fairstg/enhancement.hpp"
#include "fairstg/errors.hpp"
#include "support/grad_check.hpp"

#include <algorithm>
#include <random>
#include <vector>

using namespace fairstg;

namespace {

std::vector<char> mask(std::initializer_list<int> bits) {
    std::vector<char> z;
    for (int b : bits) z.push_back(static_cast<char>(b));
    return z;
}

std::vector<int> brute_force_topk(const Matrix& s, int i, int k_c,
                                  const std::vector<char>& easy) {
    std::vector<int> cand;
    for (std::size_t j = 0; j < easy.size(); ++j) {
        if (easy[j] && static_cast<int>(j) != i) cand.push_back(static_cast<int>(j));
    }
    std::sort(cand.begin(), cand.end(), [&](int a, int b) {
        if (s(i, a) != s(i, b)) return s(i, a) > s(i, b);
        return a < b;
    });
    if (static_cast<int>(cand.size()) > k_c) cand.resize(static_cast<std::size_t>(k_c));
    std::sort(cand.begin(), cand.end());
    return cand;
}

} // namespace

TEST_CASE("similarity matrix") {
    SUBCASE("identical rows score one, orthogonal rows zero") {
        Matrix x(3, 2);
        x << 1, 0, 1, 0, 0, 1;
        Matrix s = similarity_matrix(x, mask({1, 0, 1}));
        CHECK(s(1, 0) == doctest::Approx(1.0).epsilon(1e-12)); // identical pair
        CHECK(s(0, 2) == 0.0);                                 // orthogonal pair
        CHECK(s(2, 0) == 0.0);
    }
    SUBCASE("challenging columns and the diagonal stay zero") {
        std::mt19937 rng(50);
        Matrix x = testsupport::random_matrix(6, 4, rng);
        auto easy = mask({1, 0, 1, 0, 0, 1});
        Matrix s = similarity_matrix(x, easy);
        for (int i = 0; i < 6; ++i) {
            CHECK(s(i, i) == 0.0);
            for (int j = 0; j < 6; ++j) {
                if (s(i, j) != 0.0) {
                    CHECK(easy[static_cast<std::size_t>(j)] == 1);
                    CHECK(i != j);
                }
                CHECK(s(i, j) >= -1.0 - 1e-12);
                CHECK(s(i, j) <= 1.0 + 1e-12);
            }
        }
    }
    SUBCASE("zero-norm rows contribute zero similarity") {
        Matrix x = Matrix::Zero(2, 3);
        x.row(1) << 1, 2, 3;
        Matrix s = similarity_matrix(x, mask({1, 1}));
        CHECK(s.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("mask length must match") {
        CHECK_THROWS_AS(similarity_matrix(Matrix::Zero(3, 2), mask({1, 0})), DataError);
    }
}

TEST_CASE("compensatory retrieval") {
    SUBCASE("keeps the largest similarities") {
        Matrix s = Matrix::Zero(4, 4);
        s(3, 0) = 0.9;
        s(3, 1) = 0.2;
        s(3, 2) = 0.5;
        CHECK(retrieve_compensatory(s, 3, 2, mask({1, 1, 1, 0})) == std::vector<int>{0, 2});
    }
    SUBCASE("clamps to the whole easy set when it is small") {
        Matrix s = Matrix::Zero(3, 3);
        s(2, 1) = 0.4;
        CHECK(retrieve_compensatory(s, 2, 5, mask({0, 1, 0})) == std::vector<int>{1});
    }
    SUBCASE("ties pick the lowest indices") {
        Matrix s = Matrix::Constant(5, 5, 0.3);
        CHECK(retrieve_compensatory(s, 4, 2, mask({1, 1, 1, 1, 0})) == std::vector<int>{0, 1});
    }
    SUBCASE("excludes the query row itself") {
        Matrix s = Matrix::Constant(3, 3, 0.7);
        CHECK(retrieve_compensatory(s, 1, 5, mask({1, 1, 1})) == std::vector<int>{0, 2});
    }
    SUBCASE("matches a brute-force oracle") {
        std::mt19937 rng(51);
        for (int trial = 0; trial < 30; ++trial) {
            const int m = 2 + static_cast<int>(rng() % 63);
            std::vector<char> easy(static_cast<std::size_t>(m));
            for (auto& e : easy) e = static_cast<char>(rng() % 2);
            easy[0] = 1; // keep the easy set nonempty
            Matrix x = testsupport::random_matrix(m, 8, rng, -2.0, 2.0);
            Matrix s = similarity_matrix(x, easy);
            const int k_c = 1 + static_cast<int>(rng() % 7);
            for (int i = 0; i < m; ++i) {
                if (easy[static_cast<std::size_t>(i)]) continue;
                CHECK(retrieve_compensatory(s, i, k_c, easy) == brute_force_topk(s, i, k_c, easy));
            }
        }
    }
    SUBCASE("k_c must be positive") {
        CHECK_THROWS_AS(retrieve_compensatory(Matrix::Zero(2, 2), 0, 0, mask({1, 1})),
                        ConfigError);
    }
}

TEST_CASE("compensatory aggregation") {
    Matrix x(3, 2);
    x << 0, 2, 2, 0, 5, 5;
    SUBCASE("single neighbor passes through") {
        Vector u = aggregate_compensatory(x, {2});
        CHECK(u(0) == 5.0);
        CHECK(u(1) == 5.0);
    }
    SUBCASE("mean pooling") {
        Vector u = aggregate_compensatory(x, {0, 1});
        CHECK(u(0) == 1.0);
        CHECK(u(1) == 1.0);
    }
    SUBCASE("mean stays inside the elementwise envelope") {
        std::mt19937 rng(52);
        for (int trial = 0; trial < 20; ++trial) {
            Matrix r = testsupport::random_matrix(10, 6, rng, -3.0, 3.0);
            std::vector<int> neighbors;
            for (int j = 0; j < 10; ++j) {
                if (rng() % 2) neighbors.push_back(j);
            }
            if (neighbors.empty()) neighbors.push_back(0);
            Vector u = aggregate_compensatory(r, neighbors);
            for (int c = 0; c < 6; ++c) {
                double lo = 1e18, hi = -1e18;
                for (int j : neighbors) {
                    lo = std::min(lo, r(j, c));
                    hi = std::max(hi, r(j, c));
                }
                CHECK(u(c) >= lo - 1e-12);
                CHECK(u(c) <= hi + 1e-12);
            }
        }
    }
    SUBCASE("requires at least one neighbor") {
        CHECK_THROWS_AS(aggregate_compensatory(x, {}), DataError);
    }
}

TEST_CASE("compensatory plan") {
    std::mt19937 rng(53);
    SUBCASE("degenerate partitions deactivate enhancement") {
        Matrix x = testsupport::random_matrix(4, 3, rng);
        CompensatoryPlan all_chal = build_compensatory_plan(x, mask({0, 0, 0, 0}), 2);
        CHECK_FALSE(all_chal.active);
        CHECK(all_chal.gather.cwiseAbs().maxCoeff() == 0.0);
        CompensatoryPlan all_easy = build_compensatory_plan(x, mask({1, 1, 1, 1}), 2);
        CHECK_FALSE(all_easy.active);
        CHECK(all_easy.mask.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("gather rows average the retrieved neighbors") {
        Matrix x = testsupport::random_matrix(8, 5, rng, -2.0, 2.0);
        auto easy = mask({1, 1, 0, 1, 0, 1, 0, 0});
        CompensatoryPlan plan = build_compensatory_plan(x, easy, 2);
        CHECK(plan.active);
        CHECK(plan.challenging == std::vector<int>{2, 4, 6, 7});
        Matrix s = similarity_matrix(x, easy);
        Matrix pooled = plan.gather * x;
        for (std::size_t c = 0; c < plan.challenging.size(); ++c) {
            int i = plan.challenging[c];
            CHECK(plan.mask(i) == 1.0);
            CHECK(plan.neighbors[c] == retrieve_compensatory(s, i, 2, easy));
            Vector u = aggregate_compensatory(x, plan.neighbors[c]);
            CHECK((pooled.row(i).transpose() - u).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(plan.gather.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
        for (int i = 0; i < 8; ++i) {
            if (easy[static_cast<std::size_t>(i)]) {
                CHECK(plan.mask(i) == 0.0);
                CHECK(plan.gather.row(i).cwiseAbs().maxCoeff() == 0.0);
            }
        }
    }
}

TEST_CASE("mixup gate") {
    SUBCASE("gate stays inside the open half interval") {
        ParamStore store;
        std::mt19937 rng(54);
        MixupGate gate(store, 6, 4, 5, rng);
        std::mt19937 rng2(55);
        Matrix x = testsupport::random_matrix(7, 6, rng2, -4.0, 4.0);
        Matrix u = testsupport::random_matrix(7, 6, rng2, -4.0, 4.0);
        ad::Tape t;
        Matrix a = t.value(gate.alpha(t, store.bind(t), t.constant(x), t.constant(u)));
        CHECK(a.rows() == 7);
        CHECK(a.cols() == 1);
        CHECK(a.minCoeff() > 0.0);
        CHECK(a.maxCoeff() < 0.5);
    }
    SUBCASE("zero output layer gates at one quarter") {
        ParamStore store;
        std::mt19937 rng(56);
        MixupGate gate(store, 6, 4, 5, rng);
        store.value(store.find("gate.mlp.w2")).setZero();
        std::mt19937 rng2(57);
        Matrix x = testsupport::random_matrix(3, 6, rng2);
        Matrix u = testsupport::random_matrix(3, 6, rng2);
        ad::Tape t;
        Matrix a = t.value(gate.alpha(t, store.bind(t), t.constant(x), t.constant(u)));
        CHECK((a.array() - 0.25).abs().maxCoeff() == 0.0);
    }
    SUBCASE("gradients match finite differences") {
        ParamStore store;
        std::mt19937 rng(58);
        MixupGate gate(store, 4, 3, 3, rng);
        for (int i = 0; i < store.size(); ++i) {
            if (store.value(i).cwiseAbs().maxCoeff() == 0.0) {
                store.value(i) = testsupport::random_matrix(
                    static_cast<int>(store.value(i).rows()),
                    static_cast<int>(store.value(i).cols()), rng, 0.05, 0.2);
            }
        }
        std::mt19937 rng2(59);
        Matrix x = testsupport::random_matrix(3, 4, rng2, -1.0, 1.0);
        Matrix u = testsupport::random_matrix(3, 4, rng2, -1.0, 1.0);
        std::vector<ad::Matrix> params;
        for (int i = 0; i < store.size(); ++i) params.push_back(store.value(i));
        params.push_back(x);
        params.push_back(u);
        auto build = [&](ad::Tape& t, const std::vector<ad::Var>& vars) {
            std::vector<ad::Var> bound(vars.begin(), vars.end() - 2);
            return t.mean_all(gate.alpha(t, bound, vars[vars.size() - 2], vars.back()));
        };
        testsupport::check_grads(build, params, 1e-4);
    }
}

TEST_CASE("representation mixing") {
    SUBCASE("matches the convex combination arithmetic") {
        Matrix x(1, 2), u(1, 2);
        x << 1, 1;
        u << 5, 5;
        Vector a(1);
        a << 0.25;
        ad::Tape t;
        Matrix out =
            t.value(mix_representations(t, t.constant(x), t.constant(u), t.constant(a)));
        CHECK(out(0, 0) == 2.0);
        CHECK(out(0, 1) == 2.0);
    }
    SUBCASE("identical representations are a fixed point") {
        std::mt19937 rng(60);
        Matrix x = testsupport::random_matrix(4, 3, rng);
        Vector a(4);
        a << 0.1, 0.2, 0.3, 0.49;
        ad::Tape t;
        Matrix out =
            t.value(mix_representations(t, t.constant(x), t.constant(x), t.constant(a)));
        CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("zero gate passes easy rows through and small gates stay near x") {
        std::mt19937 rng(61);
        Matrix x = testsupport::random_matrix(5, 4, rng, -2.0, 2.0);
        Matrix u = testsupport::random_matrix(5, 4, rng, -2.0, 2.0);
        Vector a(5);
        a << 0.0, 0.3, 0.0, 0.45, 0.2; // rows 0 and 2 are easy
        ad::Tape t;
        Matrix out =
            t.value(mix_representations(t, t.constant(x), t.constant(u), t.constant(a)));
        CHECK((out.row(0) - x.row(0)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((out.row(2) - x.row(2)).cwiseAbs().maxCoeff() == 0.0);
        for (int i = 0; i < 5; ++i) {
            for (int c = 0; c < 4; ++c) {
                CHECK(std::abs(out(i, c) - x(i, c)) <=
                      0.5 * std::abs(u(i, c) - x(i, c)) + 1e-12);
            }
        }
    }
    SUBCASE("gate and mix are differentiable end to end") {
        ParamStore store;
        std::mt19937 rng(62);
        MixupGate gate(store, 4, 3, 3, rng);
        for (int i = 0; i < store.size(); ++i) {
            if (store.value(i).cwiseAbs().maxCoeff() == 0.0) {
                store.value(i) = testsupport::random_matrix(
                    static_cast<int>(store.value(i).rows()),
                    static_cast<int>(store.value(i).cols()), rng, 0.05, 0.2);
            }
        }
        std::mt19937 rng2(63);
        Matrix x = testsupport::random_matrix(4, 4, rng2, -1.0, 1.0);
        Matrix u = testsupport::random_matrix(4, 4, rng2, -1.0, 1.0);
        Matrix mask_col(4, 1);
        mask_col << 0, 1, 1, 0;
        std::vector<ad::Matrix> params;
        for (int i = 0; i < store.size(); ++i) params.push_back(store.value(i));
        params.push_back(x);
        params.push_back(u);
        auto build = [&](ad::Tape& t, const std::vector<ad::Var>& vars) {
            std::vector<ad::Var> bound(vars.begin(), vars.end() - 2);
            ad::Var xs = vars[vars.size() - 2];
            ad::Var us = vars.back();
            ad::Var a = gate.alpha(t, bound, xs, us);
            ad::Var masked = t.cmul(a, t.constant(mask_col));
            return t.mean_all(t.square(mix_representations(t, xs, us, masked)));
        };
        testsupport::check_grads(build, params, 1e-4);
    }
}
