#include "core/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jointdiff {

SamplerPlan build_plan(int T, int n_continuous, int k_discrete) {
    if (k_discrete < 1 || n_continuous < k_discrete || T < n_continuous)
        throw std::invalid_argument("build_plan: need 1 <= k <= n <= T");
    SamplerPlan plan;
    plan.continuous_grid.resize(static_cast<size_t>(n_continuous) + 1);
    for (int i = 0; i <= n_continuous; ++i)
        plan.continuous_grid[static_cast<size_t>(i)] =
            static_cast<int>(std::llround(static_cast<double>(T) * (n_continuous - i) / n_continuous));
    plan.discrete_grid.resize(static_cast<size_t>(k_discrete) + 1);
    for (int j = 0; j <= k_discrete; ++j) {
        const int idx =
            static_cast<int>(std::llround(static_cast<double>(n_continuous) * j / k_discrete));
        plan.discrete_grid[static_cast<size_t>(j)] = plan.continuous_grid[static_cast<size_t>(idx)];
    }
    return plan;
}

void ConditioningMask::validate(int side, int num_classes) const {
    const size_t pixels = static_cast<size_t>(side) * side;
    if (!image_mask.empty()) {
        if (image_mask.size() != pixels || image_values.size() != pixels)
            throw std::invalid_argument("conditioning: image mask/value size mismatch");
        for (uint8_t m : image_mask)
            if (m > 1) throw std::invalid_argument("conditioning: mask entries must be 0 or 1");
    }
    if (age_known && (age_value < -1.0 || age_value > 1.0))
        throw std::invalid_argument("conditioning: encoded age outside [-1,1]");
    if (sex_known && (sex_value < 0 || sex_value >= num_classes))
        throw std::invalid_argument("conditioning: sex class out of range");
}

ModelRuntime::ModelRuntime(const Checkpoint& ck)
    : config(ck.config),
      params(ck.params),
      gaussian(ck.build_gaussian()),
      discrete(ck.build_discrete()),
      age_range(ck.age_range) {
    config.validate();
}

DenoiserEval eval_denoiser(const ModelRuntime& model, const std::vector<double>& z_image,
                           double z_age, int sex_class, int t) {
    const DenoiserConfig& cfg = model.config;
    const size_t pixels = static_cast<size_t>(cfg.side) * cfg.side;
    if (z_image.size() != pixels) throw std::invalid_argument("eval_denoiser: image size mismatch");
    Tape<float> tp;
    BoundParams<float> bp = bind_params(tp, model.params, false);
    Tensor<float> img = Tensor<float>::zeros({1, cfg.side, cfg.side});
    for (size_t i = 0; i < pixels; ++i) img[i] = static_cast<float>(z_image[i]);
    const auto image = tp.constant(std::move(img));
    const auto age_plane =
        tp.constant(Tensor<float>::full({1, cfg.side, cfg.side}, static_cast<float>(z_age)));
    const auto sex_plane = tp.constant(Tensor<float>::full(
        {1, cfg.side, cfg.side},
        static_cast<float>(categorical_plane_value(sex_class, cfg.num_classes))));
    const DenoiserOut<float> out =
        denoiser_forward(tp, cfg, bp, image, age_plane, sex_plane, t, /*check_finite=*/true);

    DenoiserEval ev;
    ev.eps_image.resize(pixels);
    const Tensor<float>& ei = tp.val(out.eps_image);
    for (size_t i = 0; i < pixels; ++i) ev.eps_image[i] = ei[i];
    ev.eps_age = tp.val(out.eps_age)[0];
    const Tensor<float>& lg = tp.val(out.sex_logits);
    ev.logits.resize(lg.numel());
    for (size_t i = 0; i < lg.numel(); ++i) ev.logits[i] = lg[i];
    return ev;
}

namespace {

bool contains(const std::vector<int>& grid, int t) {
    return std::find(grid.begin(), grid.end(), t) != grid.end();
}

void check_state_finite(const std::vector<double>& z_image, double z_age, int t_prev) {
    for (double v : z_image)
        if (!std::isfinite(v))
            throw std::runtime_error("sampler: non-finite image state at step " + std::to_string(t_prev));
    if (!std::isfinite(z_age))
        throw std::runtime_error("sampler: non-finite age state at step " + std::to_string(t_prev));
}

double ddim_step_scalar(double x_t, double eps_hat, int t, int t_prev, const GaussianSchedule& gs) {
    double out;
    ddim_step<double>(std::span<const double>(&x_t, 1), std::span<const double>(&eps_hat, 1), t,
                      t_prev, gs, std::span<double>(&out, 1));
    return out;
}

// DDIM update with the x0 reconstruction clamped to the encoded data range
// and the noise estimate re-derived from the clamped value.
void ddim_update_clipped(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                         int t_prev, const GaussianSchedule& gs, std::span<double> out) {
    const double abar_t = gs.alpha_bar(t);
    const double abar_prev = gs.alpha_bar(t_prev);
    const double sa_t = std::sqrt(abar_t), sb_t = std::sqrt(1.0 - abar_t);
    const double sa_p = std::sqrt(abar_prev), sb_p = std::sqrt(1.0 - abar_prev);
    for (size_t i = 0; i < x_t.size(); ++i) {
        const double x0 = std::clamp((x_t[i] - sb_t * eps_hat[i]) / sa_t, -1.0, 1.0);
        const double eps = sb_t > 0.0 ? (x_t[i] - sa_t * x0) / sb_t : eps_hat[i];
        out[i] = sa_p * x0 + sb_p * eps;
    }
}

}  // namespace

PatientRecord sample_conditional(const ModelRuntime& model, const ConditioningMask& mask,
                                 const SamplerPlan& plan, uint64_t seed) {
    const DenoiserConfig& cfg = model.config;
    mask.validate(cfg.side, cfg.num_classes);
    if (plan.continuous_grid.size() < 2 || plan.continuous_grid.front() != model.gaussian.T ||
        plan.continuous_grid.back() != 0)
        throw std::invalid_argument("sample: plan does not span T..0");
    if (model.overwrite_passes != 1)
        throw std::invalid_argument("sample: only a single overwrite pass is supported");

    const size_t pixels = static_cast<size_t>(cfg.side) * cfg.side;
    Rng rng(derive_seed(seed, Rstream::sample));

    // z_T: unit Gaussian for the continuous components, uniform category for
    // sex. Conditioning enters purely through the per-step overwrites.
    std::vector<double> z_image(pixels);
    for (double& v : z_image) v = rng.normal();
    double z_age = rng.normal();
    OneHot sex = OneHot::hard(static_cast<int>(rng.uniform_int(static_cast<uint32_t>(cfg.num_classes))),
                              cfg.num_classes);
    int sex_time = model.gaussian.T;

    std::vector<double> renoise(pixels);
    const OneHot known_sex =
        mask.sex_known ? OneHot::hard(mask.sex_value, cfg.num_classes) : OneHot::hard(0, cfg.num_classes);

    for (size_t i = 0; i + 1 < plan.continuous_grid.size(); ++i) {
        const int t = plan.continuous_grid[i];
        const int t_prev = plan.continuous_grid[i + 1];

        const DenoiserEval ev = eval_denoiser(model, z_image, z_age, sex.arg_max(), t);

        std::vector<double> next(pixels);
        if (model.clip_x0) {
            ddim_update_clipped(z_image, ev.eps_image, t, t_prev, model.gaussian, next);
            double na;
            ddim_update_clipped(std::span<const double>(&z_age, 1),
                                std::span<const double>(&ev.eps_age, 1), t, t_prev, model.gaussian,
                                std::span<double>(&na, 1));
            z_age = na;
        } else {
            ddim_step<double>(z_image, ev.eps_image, t, t_prev, model.gaussian, next);
            z_age = ddim_step_scalar(z_age, ev.eps_age, t, t_prev, model.gaussian);
        }
        z_image = std::move(next);

        if (contains(plan.discrete_grid, t_prev)) {
            sex = d3pm_step(sex, ev.logits, sex_time, t_prev, model.discrete, rng,
                            model.sample_final_categorical);
            sex_time = t_prev;

            if (mask.sex_known) {
                sex = t_prev == 0 ? known_sex : d3pm_sample(known_sex, t_prev, model.discrete, rng);
            }
        }

        if (!mask.image_mask.empty()) {
            if (t_prev == 0) {
                for (size_t p = 0; p < pixels; ++p)
                    if (mask.image_mask[p]) z_image[p] = mask.image_values[p];
            } else {
                std::vector<double> eps(pixels);
                for (double& e : eps) e = rng.normal();
                q_sample<double>(mask.image_values, t_prev, eps, model.gaussian, renoise);
                for (size_t p = 0; p < pixels; ++p)
                    if (mask.image_mask[p]) z_image[p] = renoise[p];
            }
        }
        if (mask.age_known) {
            if (t_prev == 0) {
                z_age = mask.age_value;
            } else {
                const double abar = model.gaussian.alpha_bar(t_prev);
                z_age = std::sqrt(abar) * mask.age_value + std::sqrt(1.0 - abar) * rng.normal();
            }
        }

        check_state_finite(z_image, z_age, t_prev);
    }

    JointState z0;
    z0.z_image = std::move(z_image);
    z0.z_age = z_age;
    z0.z_sex = sex;
    z0.t = 0;
    return decode_state(z0, model.age_range);
}

PatientRecord sample_unconditional(const ModelRuntime& model, const SamplerPlan& plan,
                                   uint64_t seed) {
    return sample_conditional(model, ConditioningMask{}, plan, seed);
}

AgeEstimate estimate_age(const ModelRuntime& model, const std::vector<float>* image,
                         const int* sex, const SamplerPlan& plan, int n_samples, uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("estimate_age: need at least one sample");
    ConditioningMask mask;
    if (image) {
        const size_t pixels = static_cast<size_t>(model.config.side) * model.config.side;
        if (image->size() != pixels) throw std::invalid_argument("estimate_age: image size mismatch");
        mask.image_mask.assign(pixels, 1);
        mask.image_values.assign(image->begin(), image->end());
    }
    if (sex) {
        mask.sex_known = true;
        mask.sex_value = *sex;
    }
    AgeEstimate est;
    est.samples.reserve(static_cast<size_t>(n_samples));
    for (int k = 0; k < n_samples; ++k) {
        const PatientRecord r =
            sample_conditional(model, mask, plan, derive_seed(seed, Rstream::sample, static_cast<uint64_t>(k)));
        est.samples.push_back(r.age);
    }
    double mean = 0.0;
    for (double v : est.samples) mean += v;
    mean /= static_cast<double>(n_samples);
    est.estimate = mean;
    if (n_samples > 1) {
        double ss = 0.0;
        for (double v : est.samples) ss += (v - mean) * (v - mean);
        est.sample_variance = ss / static_cast<double>(n_samples - 1);
    }
    return est;
}

SexPrediction predict_sex(const ModelRuntime& model, const std::vector<float>& image,
                          const double* age, const SamplerPlan& plan, int n_samples, uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("predict_sex: need at least one sample");
    const size_t pixels = static_cast<size_t>(model.config.side) * model.config.side;
    if (image.size() != pixels) throw std::invalid_argument("predict_sex: image size mismatch");
    ConditioningMask mask;
    mask.image_mask.assign(pixels, 1);
    mask.image_values.assign(image.begin(), image.end());
    if (age) {
        mask.age_known = true;
        mask.age_value = encode_age(*age, model.age_range);
    }
    SexPrediction pred;
    pred.votes.reserve(static_cast<size_t>(n_samples));
    for (int k = 0; k < n_samples; ++k) {
        const PatientRecord r =
            sample_conditional(model, mask, plan, derive_seed(seed, Rstream::sample, static_cast<uint64_t>(k)));
        pred.votes.push_back(r.sex);
    }
    std::vector<int> counts(static_cast<size_t>(model.config.num_classes), 0);
    for (int v : pred.votes) ++counts[static_cast<size_t>(v)];
    pred.predicted = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    return pred;
}

}  // namespace jointdiff
