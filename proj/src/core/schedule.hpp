#ifndef JOINTDIFF_SCHEDULE_HPP
#define JOINTDIFF_SCHEDULE_HPP

#include <string>
#include <vector>

namespace jointdiff {

// Dense K x K row-major matrix, small enough that plain loops beat anything
// fancier.
struct MatK {
    int K = 0;
    std::vector<double> m;

    MatK() = default;
    explicit MatK(int k) : K(k), m(static_cast<size_t>(k) * k, 0.0) {}

    static MatK identity(int k) {
        MatK q(k);
        for (int i = 0; i < k; ++i) q(i, i) = 1.0;
        return q;
    }

    double& operator()(int r, int c) { return m[static_cast<size_t>(r) * K + c]; }
    double operator()(int r, int c) const { return m[static_cast<size_t>(r) * K + c]; }

    MatK mul(const MatK& o) const;
};

// Noise magnitudes for the Gaussian chain. betas[t-1] is the step-t value;
// alpha_bars has T+1 entries with alpha_bars[0] = 1.
struct GaussianSchedule {
    std::string kind;  // "linear"
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;       // size T
    std::vector<double> alphas;      // size T, 1 - beta
    std::vector<double> alpha_bars;  // size T+1

    double beta(int t) const;       // 1 <= t <= T
    double alpha_bar(int t) const;  // 0 <= t <= T
};

// Uniform-transition corruption for the categorical chain. Q[t-1] is the
// step-t matrix; Q_bar has T+1 entries with Q_bar[0] = I.
struct DiscreteSchedule {
    int T = 0;
    int K = 0;
    double cosine_offset = 0.0;
    std::vector<double> betas;  // size T, in [0, 0.999]
    std::vector<MatK> Q;        // size T
    std::vector<MatK> Q_bar;    // size T+1

    const MatK& q(int t) const;      // 1 <= t <= T
    const MatK& q_bar(int t) const;  // 0 <= t <= T

    // Q_{a->b} = Q_{a+1} ... Q_b, computed from the cached per-step matrices.
    MatK range_product(int a, int b) const;
};

// Single uniform transition matrix (1-beta) I + beta/K 11^T.
MatK uniform_transition(double beta, int K);

GaussianSchedule linear_beta_schedule(int T, double beta_start, double beta_end);

// Cumulative keep-probability follows the squared-cosine curve with offset s;
// per-step betas are derived from its ratios and clipped to [0, 0.999].
DiscreteSchedule cosine_discrete_schedule(int T, int K, double s = 0.008);

// Q_bar_t = Q_1 ... Q_t with Q_bar_0 = I.
const MatK& cumulative_transition(const DiscreteSchedule& sched, int t);

}  // namespace jointdiff

#endif
