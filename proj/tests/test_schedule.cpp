#include <stdexcept>
#include <cmath>

#include "core/schedule.hpp"
#include "doctest.h"

using namespace jointdiff;

namespace {

DiscreteSchedule make_discrete(const std::vector<double>& betas, int K) {
    DiscreteSchedule d;
    d.T = static_cast<int>(betas.size());
    d.K = K;
    d.betas = betas;
    d.Q_bar.push_back(MatK::identity(K));
    for (double b : betas) {
        d.Q.push_back(uniform_transition(b, K));
        d.Q_bar.push_back(d.Q_bar.back().mul(d.Q.back()));
    }
    return d;
}

}  // namespace

TEST_CASE("linear beta schedule interpolates the endpoints") {
    const GaussianSchedule s = linear_beta_schedule(4, 0.1, 0.4);
    const double expected_betas[] = {0.1, 0.2, 0.3, 0.4};
    for (int t = 1; t <= 4; ++t) CHECK(s.beta(t) == doctest::Approx(expected_betas[t - 1]).epsilon(1e-14));
    const double expected_bars[] = {1.0, 0.9, 0.72, 0.504, 0.3024};
    for (int t = 0; t <= 4; ++t) CHECK(s.alpha_bar(t) == doctest::Approx(expected_bars[t]).epsilon(1e-12));
}

TEST_CASE("single step schedule") {
    const GaussianSchedule s = linear_beta_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1) == 0.5);
}

TEST_CASE("linear schedule rejects bad arguments") {
    CHECK_THROWS_AS(linear_beta_schedule(0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(4, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(4, 0.1, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(4, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("alpha_bar recurrence is exact and strictly decreasing") {
    const GaussianSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
    for (int t = 1; t <= s.T; ++t) {
        CHECK(s.alpha_bars[t] == s.alpha_bars[t - 1] * (1.0 - s.betas[t - 1]));
        CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        CHECK(s.alpha_bars[t] > 0.0);
        CHECK(s.alpha_bars[t] <= 1.0);
    }
    // Reverse-order product agrees to 1e-12 relative error.
    double rev = 1.0;
    for (int t = s.T; t >= 1; --t) rev *= 1.0 - s.betas[t - 1];
    CHECK(std::abs(rev - s.alpha_bars[s.T]) / s.alpha_bars[s.T] < 1e-12);
}

TEST_CASE("uniform transition limits") {
    const MatK id = uniform_transition(0.0, 2);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(0, 1) == 0.0);

    const MatK flat = uniform_transition(1.0, 2);
    CHECK(flat(0, 0) == doctest::Approx(0.5));
    CHECK(flat(1, 0) == doctest::Approx(0.5));

    const MatK half = uniform_transition(0.5, 2);
    CHECK(half(0, 0) == doctest::Approx(0.75));
    CHECK(half(0, 1) == doctest::Approx(0.25));
    CHECK(half(1, 0) == doctest::Approx(0.25));
    CHECK(half(1, 1) == doctest::Approx(0.75));
}

TEST_CASE("cumulative transition: identity at 0 and hand product at 2") {
    const DiscreteSchedule d = make_discrete({0.5, 0.5}, 2);
    const MatK& q0 = cumulative_transition(d, 0);
    CHECK(q0(0, 0) == 1.0);
    CHECK(q0(0, 1) == 0.0);
    const MatK& q2 = cumulative_transition(d, 2);
    CHECK(q2(0, 0) == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(q2(0, 1) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(q2(1, 0) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK_THROWS_AS(cumulative_transition(d, 3), std::out_of_range);
    CHECK_THROWS_AS(cumulative_transition(d, -1), std::out_of_range);
}

TEST_CASE("cosine schedule: betas in range, terminal near uniform, rows stochastic") {
    for (int K : {2, 3}) {
        const DiscreteSchedule d = cosine_discrete_schedule(1000, K);
        double prev_keep = 1.0;
        for (int t = 1; t <= d.T; ++t) {
            CHECK(d.betas[t - 1] >= 0.0);
            CHECK(d.betas[t - 1] <= 0.999);
            const double keep = prev_keep * (1.0 - d.betas[t - 1]);
            CHECK(keep <= prev_keep);  // cumulative keep-probability decreasing
            prev_keep = keep;
        }
        for (int t = 0; t <= d.T; ++t) {
            const MatK& q = d.q_bar(t);
            for (int i = 0; i < K; ++i) {
                double row = 0.0, col = 0.0;
                for (int j = 0; j < K; ++j) {
                    row += q(i, j);
                    col += q(j, i);
                    CHECK(q(i, j) == doctest::Approx(q(j, i)).epsilon(1e-12));  // symmetric
                }
                CHECK(std::abs(row - 1.0) < 1e-10);
                CHECK(std::abs(col - 1.0) < 1e-10);  // doubly stochastic
            }
        }
        const MatK& qT = d.q_bar(d.T);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) CHECK(std::abs(qT(i, j) - 1.0 / K) < 0.05);
    }
    CHECK_THROWS_AS(cosine_discrete_schedule(1000, 1), std::invalid_argument);
    CHECK_THROWS_AS(cosine_discrete_schedule(0, 2), std::invalid_argument);
}

TEST_CASE("off-diagonal entries of each Q_t are equal") {
    const DiscreteSchedule d = cosine_discrete_schedule(16, 3);
    for (int t = 1; t <= d.T; ++t) {
        const MatK& q = d.q(t);
        const double off = q(0, 1);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) CHECK(q(i, j) == doctest::Approx(off).epsilon(1e-14));
    }
}

TEST_CASE("range products associate") {
    const DiscreteSchedule d = make_discrete({0.1, 0.4, 0.25, 0.6}, 3);
    // (Q1 Q2) (Q3 Q4) vs Q1 (Q2 (Q3 Q4)) vs cached left-to-right
    const MatK left = d.range_product(0, 2).mul(d.range_product(2, 4));
    MatK right = d.q(3).mul(d.q(4));
    right = d.q(2).mul(right);
    right = d.q(1).mul(right);
    const MatK& cached = d.q_bar(4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            CHECK(std::abs(left(i, j) - cached(i, j)) < 1e-12);
            CHECK(std::abs(right(i, j) - cached(i, j)) < 1e-12);
        }
}

TEST_CASE("closed form for products of uniform transitions") {
    // Products stay in the family gamma I + (1-gamma)/K 11^T with
    // gamma = prod(1 - beta): an independent route to Q_bar.
    const std::vector<double> betas = {0.2, 0.05, 0.5, 0.33};
    const DiscreteSchedule d = make_discrete(betas, 4);
    double gamma = 1.0;
    for (size_t i = 0; i < betas.size(); ++i) gamma *= 1.0 - betas[i];
    const MatK& qT = d.q_bar(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double expect = (i == j ? gamma : 0.0) + (1.0 - gamma) / 4.0;
            CHECK(qT(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
}
