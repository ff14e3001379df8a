#include "core/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace jointdiff {

MatK MatK::mul(const MatK& o) const {
    if (K != o.K) throw std::invalid_argument("MatK: size mismatch");
    MatK out(K);
    for (int i = 0; i < K; ++i)
        for (int k = 0; k < K; ++k) {
            const double a = (*this)(i, k);
            for (int j = 0; j < K; ++j) out(i, j) += a * o(k, j);
        }
    return out;
}

double GaussianSchedule::beta(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("beta: t out of range");
    return betas[static_cast<size_t>(t) - 1];
}

double GaussianSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("alpha_bar: t out of range");
    return alpha_bars[static_cast<size_t>(t)];
}

const MatK& DiscreteSchedule::q(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("Q: t out of range");
    return Q[static_cast<size_t>(t) - 1];
}

const MatK& DiscreteSchedule::q_bar(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("Q_bar: t out of range");
    return Q_bar[static_cast<size_t>(t)];
}

MatK DiscreteSchedule::range_product(int a, int b) const {
    if (a < 0 || b > T || a > b) throw std::out_of_range("range_product: bad step range");
    MatK out = MatK::identity(K);
    for (int t = a + 1; t <= b; ++t) out = out.mul(q(t));
    return out;
}

MatK uniform_transition(double beta, int K) {
    if (K < 2) throw std::invalid_argument("uniform_transition: K must be >= 2");
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("uniform_transition: beta outside [0,1]");
    MatK q(K);
    const double off = beta / K;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) q(i, j) = (i == j ? 1.0 - beta + off : off);
    return q;
}

GaussianSchedule linear_beta_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || beta_end > 1.0 || beta_start > beta_end)
        throw std::invalid_argument("linear_beta_schedule: need 0 < beta_start <= beta_end <= 1");
    GaussianSchedule s;
    s.kind = "linear";
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(static_cast<size_t>(T) + 1);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.betas[t - 1] = beta;
        s.alphas[t - 1] = 1.0 - beta;
        s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - beta);
    }
    if (!(s.alpha_bars[T] > 0.0)) throw std::invalid_argument("linear_beta_schedule: alpha_bar underflow");
    return s;
}

DiscreteSchedule cosine_discrete_schedule(int T, int K, double s) {
    if (T < 1) throw std::invalid_argument("cosine_discrete_schedule: T must be >= 1");
    if (K < 2) throw std::invalid_argument("cosine_discrete_schedule: K must be >= 2");
    auto f = [T, s](int t) {
        const double x = ((static_cast<double>(t) / T) + s) / (1.0 + s) * 1.5707963267948966;
        const double c = std::cos(x);
        return c * c;
    };
    DiscreteSchedule d;
    d.T = T;
    d.K = K;
    d.cosine_offset = s;
    d.betas.resize(T);
    d.Q.reserve(T);
    d.Q_bar.reserve(static_cast<size_t>(T) + 1);
    d.Q_bar.push_back(MatK::identity(K));
    const double f0 = f(0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double cur = f(t) / f0;
        double beta = 1.0 - cur / prev;
        if (beta < 0.0) beta = 0.0;
        if (beta > 0.999) beta = 0.999;
        d.betas[t - 1] = beta;
        prev = cur;
        d.Q.push_back(uniform_transition(beta, K));
        d.Q_bar.push_back(d.Q_bar.back().mul(d.Q.back()));
    }
    return d;
}

const MatK& cumulative_transition(const DiscreteSchedule& sched, int t) {
    return sched.q_bar(t);
}

}  // namespace jointdiff
