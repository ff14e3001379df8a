#ifndef JOINTDIFF_SAMPLER_HPP
#define JOINTDIFF_SAMPLER_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "core/joint.hpp"

namespace jointdiff {

// Timestep grids walked during sampling. The continuous grid drives DDIM
// updates; the discrete grid is the subset of points where the categorical
// state jumps.
struct SamplerPlan {
    std::vector<int> continuous_grid;  // strictly decreasing, T ... 0
    std::vector<int> discrete_grid;    // subset of the continuous grid, T ... 0

    int continuous_steps() const { return static_cast<int>(continuous_grid.size()) - 1; }
    int discrete_steps() const { return static_cast<int>(discrete_grid.size()) - 1; }
};

SamplerPlan build_plan(int T, int n_continuous = 50, int k_discrete = 20);

// Which components are fixed during sampling; values live in encoded space.
struct ConditioningMask {
    std::vector<uint8_t> image_mask;   // empty = no pixels known, else side*side of 0/1
    std::vector<double> image_values;  // required when image_mask is non-empty
    bool age_known = false;
    double age_value = 0.0;  // encoded, in [-1, 1]
    bool sex_known = false;
    int sex_value = 0;

    bool any_known() const { return !image_mask.empty() || age_known || sex_known; }
    void validate(int side, int num_classes) const;
};

// Checkpoint unpacked for inference.
struct ModelRuntime {
    DenoiserConfig config;
    ParamStore<float> params;
    GaussianSchedule gaussian;
    DiscreteSchedule discrete;
    AgeRange age_range;
    // Clamp the x0 reconstruction to the encoded data range [-1,1] inside the
    // sampling walk. predict_x0 at large t divides by a tiny sqrt(abar), so
    // small head errors otherwise blow up the early trajectory.
    bool clip_x0 = true;
    // Sample the categorical posterior at the final step instead of taking
    // its argmax.
    bool sample_final_categorical = false;
    // Overwrite passes per step; values other than 1 are reserved.
    int overwrite_passes = 1;

    explicit ModelRuntime(const Checkpoint& ck);
};

struct DenoiserEval {
    std::vector<double> eps_image;
    double eps_age = 0.0;
    std::vector<double> logits;
};

DenoiserEval eval_denoiser(const ModelRuntime& model, const std::vector<double>& z_image,
                           double z_age, int sex_class, int t);

// Joint reverse walk: DDIM on image and age at every continuous step, jump
// posteriors for sex at discrete steps, known components re-noised and
// overwritten after every update, exact values at t = 0.
PatientRecord sample_conditional(const ModelRuntime& model, const ConditioningMask& mask,
                                 const SamplerPlan& plan, uint64_t seed);

PatientRecord sample_unconditional(const ModelRuntime& model, const SamplerPlan& plan,
                                   uint64_t seed);

struct AgeEstimate {
    double estimate = 0.0;
    std::vector<double> samples;
    double sample_variance = 0.0;  // unbiased
};

// Mean of n conditional age samples with the image (and optionally sex)
// fixed; pass neither for the unconditional marginal.
AgeEstimate estimate_age(const ModelRuntime& model, const std::vector<float>* image,
                         const int* sex, const SamplerPlan& plan, int n_samples, uint64_t seed);

struct SexPrediction {
    int predicted = 0;
    std::vector<int> votes;
};

// Majority vote over n conditional samples with the image (and optionally
// age, in years) fixed.
SexPrediction predict_sex(const ModelRuntime& model, const std::vector<float>& image,
                          const double* age, const SamplerPlan& plan, int n_samples, uint64_t seed);

}  // namespace jointdiff

#endif
