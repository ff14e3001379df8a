#ifndef JOINTDIFF_GAUSSIAN_HPP
#define JOINTDIFF_GAUSSIAN_HPP

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "core/schedule.hpp"

namespace jointdiff {

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
// t = 0 is the identity.
template <typename T>
void q_sample(std::span<const T> x0, int t, std::span<const T> eps, const GaussianSchedule& sched,
              std::span<T> out) {
    if (x0.size() != eps.size() || x0.size() != out.size())
        throw std::invalid_argument("q_sample: shape mismatch");
    const double abar = sched.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(abar));
    const T b = static_cast<T>(std::sqrt(1.0 - abar));
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
}

template <typename T>
std::vector<T> q_sample(const std::vector<T>& x0, int t, const std::vector<T>& eps,
                        const GaussianSchedule& sched) {
    std::vector<T> out(x0.size());
    q_sample<T>(x0, t, eps, sched, out);
    return out;
}

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
template <typename T>
void predict_x0(std::span<const T> x_t, std::span<const T> eps_hat, int t,
                const GaussianSchedule& sched, std::span<T> out) {
    if (x_t.size() != eps_hat.size() || x_t.size() != out.size())
        throw std::invalid_argument("predict_x0: shape mismatch");
    const double abar = sched.alpha_bar(t);
    if (!(abar > 0.0)) throw std::invalid_argument("predict_x0: alpha_bar is zero");
    const T inv_a = static_cast<T>(1.0 / std::sqrt(abar));
    const T b = static_cast<T>(std::sqrt(1.0 - abar));
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) * inv_a;
}

template <typename T>
std::vector<T> predict_x0(const std::vector<T>& x_t, const std::vector<T>& eps_hat, int t,
                          const GaussianSchedule& sched) {
    std::vector<T> out(x_t.size());
    predict_x0<T>(x_t, eps_hat, t, sched, out);
    return out;
}

// One ancestral reverse step with the beta_tilde posterior variance. The
// final step (t = 1) returns the mean with no noise.
template <typename T>
void ddpm_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, std::span<const T> noise,
               const GaussianSchedule& sched, std::span<T> out) {
    if (x_t.size() != eps_hat.size() || x_t.size() != noise.size() || x_t.size() != out.size())
        throw std::invalid_argument("ddpm_step: shape mismatch");
    if (t < 1 || t > sched.T) throw std::out_of_range("ddpm_step: t out of range");
    const double beta = sched.beta(t);
    const double abar_t = sched.alpha_bar(t);
    const double abar_prev = sched.alpha_bar(t - 1);
    const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(1.0 - beta));
    const T eps_coef = static_cast<T>(beta / std::sqrt(1.0 - abar_t));
    const T sigma =
        t == 1 ? T(0) : static_cast<T>(std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar_t)));
    for (size_t i = 0; i < x_t.size(); ++i)
        out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]) + sigma * noise[i];
}

template <typename T>
std::vector<T> ddpm_step(const std::vector<T>& x_t, const std::vector<T>& eps_hat, int t,
                         const std::vector<T>& noise, const GaussianSchedule& sched) {
    std::vector<T> out(x_t.size());
    ddpm_step<T>(x_t, eps_hat, t, noise, sched, out);
    return out;
}

// Deterministic jump t -> t_prev through the x0 reconstruction (eta = 0).
template <typename T>
void ddim_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, int t_prev,
               const GaussianSchedule& sched, std::span<T> out) {
    if (x_t.size() != eps_hat.size() || x_t.size() != out.size())
        throw std::invalid_argument("ddim_step: shape mismatch");
    if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
    const double abar_t = sched.alpha_bar(t);
    const double abar_prev = sched.alpha_bar(t_prev);
    if (!(abar_t > 0.0)) throw std::invalid_argument("ddim_step: alpha_bar is zero");
    const T a = static_cast<T>(std::sqrt(abar_prev / abar_t));
    const T b = static_cast<T>(std::sqrt(1.0 - abar_prev) -
                               std::sqrt(abar_prev / abar_t) * std::sqrt(1.0 - abar_t));
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = a * x_t[i] + b * eps_hat[i];
}

template <typename T>
std::vector<T> ddim_step(const std::vector<T>& x_t, const std::vector<T>& eps_hat, int t,
                         int t_prev, const GaussianSchedule& sched) {
    std::vector<T> out(x_t.size());
    ddim_step<T>(x_t, eps_hat, t, t_prev, sched, out);
    return out;
}

}  // namespace jointdiff

#endif
