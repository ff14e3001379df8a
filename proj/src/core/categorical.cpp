#include "core/categorical.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jointdiff {

OneHot OneHot::hard(int cls, int K) {
    if (K < 2 || cls < 0 || cls >= K) throw std::invalid_argument("OneHot: class out of range");
    OneHot z;
    z.p.assign(K, 0.0);
    z.p[cls] = 1.0;
    return z;
}

OneHot OneHot::soft(std::vector<double> probs) {
    OneHot z;
    z.p = std::move(probs);
    z.validate();
    return z;
}

bool OneHot::is_hard() const {
    int ones = 0;
    for (double v : p) {
        if (v == 1.0)
            ++ones;
        else if (v != 0.0)
            return false;
    }
    return ones == 1;
}

int OneHot::arg_max() const {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

void OneHot::validate() const {
    if (p.size() < 2) throw std::invalid_argument("OneHot: need K >= 2");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument("OneHot: negative or non-finite entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("OneHot: entries do not sum to 1");
}

static int sample_index(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

OneHot d3pm_sample(const OneHot& z0, int t, const DiscreteSchedule& sched, Rng& rng) {
    if (!z0.is_hard()) throw std::invalid_argument("d3pm_sample: z0 must be hard");
    const MatK& qbar = sched.q_bar(t);  // range-checks t
    const int cls = z0.arg_max();
    std::vector<double> row(sched.K);
    for (int j = 0; j < sched.K; ++j) row[j] = qbar(cls, j);
    return OneHot::hard(sample_index(row, rng), sched.K);
}

OneHot d3pm_posterior(const OneHot& z_t, const OneHot& x0_probs, int t, int t_prev,
                      const DiscreteSchedule& sched) {
    if (!z_t.is_hard()) throw std::invalid_argument("d3pm_posterior: z_t must be hard");
    if (t_prev >= t) throw std::invalid_argument("d3pm_posterior: t_prev must be < t");
    x0_probs.validate();
    const int K = sched.K;
    if (z_t.K() != K || x0_probs.K() != K) throw std::invalid_argument("d3pm_posterior: K mismatch");
    const MatK step = sched.range_product(t_prev, t);
    const MatK& qbar_prev = sched.q_bar(t_prev);
    const int c = z_t.arg_max();

    std::vector<double> out(K, 0.0);
    std::vector<double> unnorm(K);
    // Branches whose x0 is impossible given z_t (zero normalizer, only
    // reachable when some beta hits 0 or 1) drop out; the mixture weight
    // renormalizes over the surviving branches.
    double surviving = 0.0;
    for (int a = 0; a < K; ++a) {
        const double w = x0_probs.p[a];
        if (w == 0.0) continue;
        double norm = 0.0;
        for (int j = 0; j < K; ++j) {
            unnorm[j] = step(j, c) * qbar_prev(a, j);
            norm += unnorm[j];
        }
        if (!(norm > 0.0)) continue;
        surviving += w;
        for (int j = 0; j < K; ++j) out[j] += w * unnorm[j] / norm;
    }
    if (!(surviving > 0.0)) throw std::runtime_error("d3pm_posterior: zero normalizer");
    for (double& v : out) v /= surviving;
    return OneHot::soft(std::move(out));
}

OneHot d3pm_step(const OneHot& z_t, const std::vector<double>& logits, int t, int t_prev,
                 const DiscreteSchedule& sched, Rng& rng, bool sample_final) {
    for (double v : logits)
        if (!std::isfinite(v)) throw std::invalid_argument("d3pm_step: non-finite logits");
    const OneHot x0 = OneHot::soft(softmax(logits));
    const OneHot post = d3pm_posterior(z_t, x0, t, t_prev, sched);
    if (t_prev == 0 && !sample_final) return OneHot::hard(post.arg_max(), sched.K);
    return OneHot::hard(sample_index(post.p, rng), sched.K);
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

}  // namespace jointdiff
