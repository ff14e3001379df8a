#ifndef JOINTDIFF_CATEGORICAL_HPP
#define JOINTDIFF_CATEGORICAL_HPP

#include <vector>

#include "core/rng.hpp"
#include "core/schedule.hpp"

namespace jointdiff {

// Length-K probability row vector; hard means exactly one entry is 1.
struct OneHot {
    std::vector<double> p;

    static OneHot hard(int cls, int K);
    static OneHot soft(std::vector<double> probs);

    int K() const { return static_cast<int>(p.size()); }
    bool is_hard() const;
    int arg_max() const;
    void validate() const;  // entries >= 0, sum within 1e-9 of 1
};

// Draw z_t ~ Cat(z0 * Q_bar_t) for a hard z0.
OneHot d3pm_sample(const OneHot& z0, int t, const DiscreteSchedule& sched, Rng& rng);

// Stepwise posterior p(z_{t_prev} | z_t) under the x0-parameterization:
// per candidate x0, q(z_{t_prev} | z_t, x0) is proportional to
// [Q_{t_prev->t}]_{j, class(z_t)} * [x0 Q_bar_{t_prev}]_j, normalized over j,
// then mixed by x0_probs.
OneHot d3pm_posterior(const OneHot& z_t, const OneHot& x0_probs, int t, int t_prev,
                      const DiscreteSchedule& sched);

// Softmax the logits into x0 probabilities and sample the jump posterior.
// At t_prev = 0 the posterior argmax is returned instead of a sample; pass
// sample_final = true to restore sampling.
OneHot d3pm_step(const OneHot& z_t, const std::vector<double>& logits, int t, int t_prev,
                 const DiscreteSchedule& sched, Rng& rng, bool sample_final = false);

std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace jointdiff

#endif
