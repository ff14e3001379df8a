#ifndef JOINTDIFF_JOINT_HPP
#define JOINTDIFF_JOINT_HPP

#include <span>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/categorical.hpp"
#include "core/denoiser.hpp"
#include "core/gaussian.hpp"
#include "core/rng.hpp"
#include "core/schedule.hpp"
#include "core/synthdata.hpp"
#include "core/tensor.hpp"

namespace jointdiff {

struct AgeRange {
    double lo = 20.0;
    double hi = 90.0;
};

// The encoded tuple that diffuses: image grid, scaled age scalar, one-hot
// sex, all at one shared step index.
struct JointState {
    std::vector<double> z_image;
    double z_age = 0.0;
    OneHot z_sex;
    int t = 0;
};

double encode_age(double age, const AgeRange& range);
double decode_age(double z_age, const AgeRange& range);

JointState encode_record(const PatientRecord& r, const AgeRange& range, int num_classes);
PatientRecord decode_state(const JointState& z, const AgeRange& range);

// Shared-timestep forward corruption. Returns the noisy tuple at t along
// with the Gaussian draws needed as regression targets.
struct DiffusedSample {
    JointState z_t;
    std::vector<double> eps_image;
    double eps_age = 0.0;
};

DiffusedSample forward_diffuse(const JointState& z0, int t, Rng& rng, const GaussianSchedule& gs,
                               const DiscreteSchedule& ds);

// One diffused training tuple with its targets.
struct TrainingExample {
    std::vector<double> zt_image;
    double zt_age = 0.0;
    int zt_sex_class = 0;
    int t = 0;
    std::vector<double> eps_image;
    double eps_age = 0.0;
    int sex_class = 0;  // clean label
};

struct LossTerms {
    double image_mse = 0.0;
    double age_mse = 0.0;
    double sex_ce = 0.0;
    double total = 0.0;
};

// lambda_image * mean-per-pixel image MSE + age MSE + sex cross-entropy,
// averaged over the batch.
template <typename T>
typename Tape<T>::Var joint_loss_graph(Tape<T>& tp, const DenoiserConfig& cfg,
                                       const BoundParams<T>& P,
                                       std::span<const TrainingExample> batch, double lambda_image,
                                       LossTerms* terms = nullptr) {
    using Var = typename Tape<T>::Var;
    if (batch.empty()) throw std::invalid_argument("joint_loss: empty batch");
    const size_t pixels = static_cast<size_t>(cfg.side) * cfg.side;
    Var total = -1;
    LossTerms acc;
    for (const TrainingExample& ex : batch) {
        if (ex.zt_image.size() != pixels || ex.eps_image.size() != pixels)
            throw std::invalid_argument("joint_loss: image shape mismatch");
        Tensor<T> img = Tensor<T>::zeros({1, cfg.side, cfg.side});
        Tensor<T> tgt = Tensor<T>::zeros({1, cfg.side, cfg.side});
        for (size_t i = 0; i < pixels; ++i) {
            img[i] = static_cast<T>(ex.zt_image[i]);
            tgt[i] = static_cast<T>(ex.eps_image[i]);
        }
        Var image = tp.constant(std::move(img));
        Var age_plane = tp.constant(
            Tensor<T>::full({1, cfg.side, cfg.side}, static_cast<T>(ex.zt_age)));
        Var sex_plane = tp.constant(Tensor<T>::full(
            {1, cfg.side, cfg.side},
            static_cast<T>(categorical_plane_value(ex.zt_sex_class, cfg.num_classes))));

        DenoiserOut<T> out = denoiser_forward(tp, cfg, P, image, age_plane, sex_plane, ex.t);

        Var di = tp.sub(out.eps_image, tp.constant(std::move(tgt)));
        Var image_mse = tp.mean(tp.mul(di, di));
        Var da = tp.sub(out.eps_age, tp.constant(Tensor<T>::scalar(static_cast<T>(ex.eps_age))));
        Var age_mse = tp.mul(da, da);
        Tensor<T> onehot = Tensor<T>::zeros({cfg.num_classes});
        if (ex.sex_class < 0 || ex.sex_class >= cfg.num_classes)
            throw std::invalid_argument("joint_loss: sex class out of range");
        onehot[static_cast<size_t>(ex.sex_class)] = T(1);
        Var ce = tp.cross_entropy_logits(out.sex_logits, std::move(onehot));

        acc.image_mse += static_cast<double>(tp.val(image_mse)[0]);
        acc.age_mse += static_cast<double>(tp.val(age_mse)[0]);
        acc.sex_ce += static_cast<double>(tp.val(ce)[0]);

        Var sample = tp.add(tp.add(tp.scale(image_mse, static_cast<T>(lambda_image)), age_mse), ce);
        total = total < 0 ? sample : tp.add(total, sample);
    }
    total = tp.scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
    if (terms) {
        const double inv = 1.0 / static_cast<double>(batch.size());
        terms->image_mse = acc.image_mse * inv;
        terms->age_mse = acc.age_mse * inv;
        terms->sex_ce = acc.sex_ce * inv;
        terms->total = static_cast<double>(tp.val(total)[0]);
    }
    return total;
}

TrainingExample make_training_example(const JointState& z0, const DiffusedSample& d);

// Self-describing model file: schedule descriptors, denoiser config and f32
// parameter tensors.
struct Checkpoint {
    uint32_t version = 1;
    std::string gaussian_kind = "linear";
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double cosine_offset = 0.008;
    DenoiserConfig config;
    AgeRange age_range;
    double lambda_image = 1.0;
    int epoch = 0;
    double val_loss = 0.0;
    uint64_t seed = 0;
    std::string precision = "f32";
    ParamStore<float> params;

    GaussianSchedule build_gaussian() const;
    DiscreteSchedule build_discrete() const;
    std::string describe() const;  // header JSON
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace jointdiff

#endif
