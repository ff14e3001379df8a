#include <stdexcept>
#include <cmath>
#include <functional>

#include "core/categorical.hpp"
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

// Test-local oracle: enumerate every chain path z0 -> z1 -> ... -> zt with
// single-step transitions, then read off p(z_{t_prev} | z_t, z0).
std::vector<double> enumerate_posterior(const DiscreteSchedule& ds, int zt_class, int x0_class,
                                        int t, int t_prev) {
    const int K = ds.K;
    std::vector<double> numerator(static_cast<size_t>(K), 0.0);
    std::vector<int> path(static_cast<size_t>(t) + 1, 0);
    path[0] = x0_class;
    std::function<void(int, double)> walk = [&](int step, double prob) {
        if (step == t) {
            if (path.back() == zt_class) numerator[static_cast<size_t>(path[static_cast<size_t>(t_prev)])] += prob;
            return;
        }
        for (int j = 0; j < K; ++j) {
            path[static_cast<size_t>(step + 1)] = j;
            walk(step + 1, prob * ds.q(step + 1)(path[static_cast<size_t>(step)], j));
        }
    };
    walk(0, 1.0);
    double total = 0.0;
    for (double v : numerator) total += v;
    REQUIRE(total > 0.0);
    for (double& v : numerator) v /= total;
    return numerator;
}

}  // namespace

TEST_CASE("one-hot validation") {
    CHECK(OneHot::hard(1, 3).is_hard());
    CHECK(OneHot::hard(1, 3).arg_max() == 1);
    CHECK_THROWS_AS(OneHot::hard(3, 3), std::invalid_argument);
    CHECK_THROWS_AS(OneHot::soft({0.5, 0.4}), std::invalid_argument);
    CHECK_THROWS_AS(OneHot::soft({1.2, -0.2}), std::invalid_argument);
    CHECK_FALSE(OneHot::soft({0.4, 0.6}).is_hard());
}

TEST_CASE("d3pm_sample: identity at t=0 and frequencies at a hand-computed Q_bar") {
    const DiscreteSchedule d = make_discrete({0.5, 0.5}, 2);
    Rng rng(9);
    const OneHot z0 = OneHot::hard(0, 2);
    for (int i = 0; i < 10; ++i) CHECK(d3pm_sample(z0, 0, d, rng).arg_max() == 0);

    // Q_bar_2 row 0 = [0.625, 0.375]
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += d3pm_sample(z0, 2, d, rng).arg_max() == 0;
    const double p = 0.625;
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(static_cast<double>(zeros) / n - p) < 3.0 * se);

    CHECK_THROWS_AS(d3pm_sample(z0, 3, d, rng), std::out_of_range);
}

TEST_CASE("d3pm_sample at terminal cosine step is near uniform") {
    const DiscreteSchedule d = cosine_discrete_schedule(200, 3);
    Rng rng(31);
    const OneHot z0 = OneHot::hard(1, 3);
    const int n = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<size_t>(d3pm_sample(z0, 200, d, rng).arg_max())];
    for (int k = 0; k < 3; ++k) {
        const double expect = d.q_bar(200)(1, k);
        const double se = std::sqrt(expect * (1 - expect) / n);
        CHECK(std::abs(counts[static_cast<size_t>(k)] / static_cast<double>(n) - expect) < 3.0 * se);
        CHECK(std::abs(expect - 1.0 / 3.0) < 0.05);
    }
}

TEST_CASE("chained single-step draws match z0 Q_bar_t (marginal identity)") {
    const DiscreteSchedule d = make_discrete({0.3, 0.15, 0.5}, 2);
    Rng rng(13);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) {
        // one step at a time through Q_1, Q_2, Q_3
        OneHot z = OneHot::hard(0, 2);
        for (int t = 1; t <= 3; ++t) {
            std::vector<double> row(2);
            for (int j = 0; j < 2; ++j) row[static_cast<size_t>(j)] = d.q(t)(z.arg_max(), j);
            const double u = rng.uniform();
            z = OneHot::hard(u < row[0] ? 0 : 1, 2);
        }
        zeros += z.arg_max() == 0;
    }
    const double expect = d.q_bar(3)(0, 0);
    const double se = std::sqrt(expect * (1 - expect) / n);
    CHECK(std::abs(zeros / static_cast<double>(n) - expect) < 3.0 * se);
}

TEST_CASE("d3pm_posterior: trivial cases") {
    const DiscreteSchedule d = make_discrete({0.3, 0.2, 0.4}, 3);
    // hard x0 with t_prev = 0 returns x0 exactly
    const OneHot post = d3pm_posterior(OneHot::hard(2, 3), OneHot::hard(1, 3), 3, 0, d);
    CHECK(post.p[1] == doctest::Approx(1.0).epsilon(1e-12));

    // identity chain returns z_t itself for any x0_probs with mass on it
    const DiscreteSchedule id = make_discrete({0.0, 0.0}, 2);
    const OneHot post2 = d3pm_posterior(OneHot::hard(1, 2), OneHot::soft({0.5, 0.5}), 2, 1, id);
    CHECK(post2.p[1] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(d3pm_posterior(OneHot::hard(0, 2), OneHot::hard(0, 2), 1, 1, id),
                    std::invalid_argument);
    // impossible conditioning: z_t differs from the only allowed x0 under an
    // identity chain
    CHECK_THROWS_AS(d3pm_posterior(OneHot::hard(1, 2), OneHot::hard(0, 2), 2, 1, id),
                    std::runtime_error);
}

TEST_CASE("d3pm_posterior equals exhaustive path enumeration (K<=3, T<=4)") {
    for (int K : {2, 3}) {
        for (const auto& betas :
             {std::vector<double>{0.35, 0.2, 0.55, 0.15}, std::vector<double>{0.6, 0.05, 0.3, 0.45}}) {
            const DiscreteSchedule d = make_discrete(betas, K);
            for (int t = 1; t <= 4; ++t)
                for (int t_prev = 0; t_prev < t; ++t_prev)
                    for (int c = 0; c < K; ++c)
                        for (int a = 0; a < K; ++a) {
                            const OneHot post =
                                d3pm_posterior(OneHot::hard(c, K), OneHot::hard(a, K), t, t_prev, d);
                            const auto ref = enumerate_posterior(d, c, a, t, t_prev);
                            double sum = 0.0;
                            for (int j = 0; j < K; ++j) {
                                CHECK(std::abs(post.p[static_cast<size_t>(j)] - ref[static_cast<size_t>(j)]) < 1e-9);
                                sum += post.p[static_cast<size_t>(j)];
                            }
                            CHECK(std::abs(sum - 1.0) < 1e-9);
                        }
        }
    }
}

TEST_CASE("jump composition: hard x0 for K<=3, soft x0 for K=2") {
    // Chapman-Kolmogorov per fixed x0 class: mixing the t -> t_m posterior
    // over the t_m -> t_prev posterior reproduces the direct jump.
    for (int K : {2, 3}) {
        const DiscreteSchedule d = make_discrete({0.35, 0.2, 0.55, 0.15}, K);
        for (int t = 2; t <= 4; ++t)
            for (int t_prev = 0; t_prev < t - 1; ++t_prev)
                for (int t_m = t_prev + 1; t_m < t; ++t_m)
                    for (int c = 0; c < K; ++c)
                        for (int a = 0; a < K; ++a) {
                            const OneHot x0 = OneHot::hard(a, K);
                            const OneHot direct = d3pm_posterior(OneHot::hard(c, K), x0, t, t_prev, d);
                            const OneHot mid = d3pm_posterior(OneHot::hard(c, K), x0, t, t_m, d);
                            std::vector<double> mixed(static_cast<size_t>(K), 0.0);
                            for (int m = 0; m < K; ++m) {
                                const OneHot leg =
                                    d3pm_posterior(OneHot::hard(m, K), x0, t_m, t_prev, d);
                                for (int j = 0; j < K; ++j)
                                    mixed[static_cast<size_t>(j)] += mid.p[static_cast<size_t>(m)] * leg.p[static_cast<size_t>(j)];
                            }
                            for (int j = 0; j < K; ++j)
                                CHECK(std::abs(mixed[static_cast<size_t>(j)] - direct.p[static_cast<size_t>(j)]) < 1e-9);
                        }
    }
    // For the binary variable the identity also holds with a fixed soft
    // mixture (it fails for K >= 3, which stays out of the built config).
    {
        const int K = 2;
        const DiscreteSchedule d = make_discrete({0.35, 0.2, 0.55, 0.15}, K);
        const OneHot x0 = OneHot::soft({0.3, 0.7});
        for (int t = 2; t <= 4; ++t)
            for (int t_prev = 0; t_prev < t - 1; ++t_prev)
                for (int t_m = t_prev + 1; t_m < t; ++t_m)
                    for (int c = 0; c < K; ++c) {
                        const OneHot direct = d3pm_posterior(OneHot::hard(c, K), x0, t, t_prev, d);
                        const OneHot mid = d3pm_posterior(OneHot::hard(c, K), x0, t, t_m, d);
                        std::vector<double> mixed(static_cast<size_t>(K), 0.0);
                        for (int m = 0; m < K; ++m) {
                            const OneHot leg = d3pm_posterior(OneHot::hard(m, K), x0, t_m, t_prev, d);
                            for (int j = 0; j < K; ++j)
                                mixed[static_cast<size_t>(j)] += mid.p[static_cast<size_t>(m)] * leg.p[static_cast<size_t>(j)];
                        }
                        for (int j = 0; j < K; ++j)
                            CHECK(std::abs(mixed[static_cast<size_t>(j)] - direct.p[static_cast<size_t>(j)]) < 1e-9);
                    }
    }
}

TEST_CASE("d3pm_step: saturated logits, identity chain, and frequency agreement") {
    const DiscreteSchedule d = make_discrete({0.35, 0.2, 0.55}, 2);
    Rng rng(41);

    // margin > 30 saturates the softmax; final step argmaxes.
    const OneHot hard = d3pm_step(OneHot::hard(0, 2), {-20.0, 15.0}, 3, 0, d, rng);
    CHECK(hard.arg_max() == 1);

    const DiscreteSchedule id = make_discrete({0.0, 0.0}, 2);
    const OneHot same = d3pm_step(OneHot::hard(1, 2), {0.0, 0.0}, 2, 1, id, rng);
    CHECK(same.arg_max() == 1);

    CHECK_THROWS_AS(
        d3pm_step(OneHot::hard(0, 2), {std::nan(""), 0.0}, 3, 1, d, rng), std::invalid_argument);

    // sampled frequencies match the posterior within 3 SE
    const std::vector<double> logits = {0.4, -0.3};
    const OneHot post = d3pm_posterior(OneHot::hard(0, 2), OneHot::soft(softmax(logits)), 3, 1, d);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += d3pm_step(OneHot::hard(0, 2), logits, 3, 1, d, rng).arg_max() == 0;
    const double se = std::sqrt(post.p[0] * (1 - post.p[0]) / n);
    CHECK(std::abs(zeros / static_cast<double>(n) - post.p[0]) < 3.0 * se);

    // sample_final = true restores sampling at t_prev = 0: both classes occur
    int ones = 0;
    for (int i = 0; i < 200; ++i)
        ones += d3pm_step(OneHot::hard(0, 2), {0.0, 0.0}, 1, 0, d, rng, true).arg_max() == 1;
    CHECK(ones > 0);
    CHECK(ones < 200);
}
