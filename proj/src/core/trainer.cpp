#include "core/trainer.hpp"

#include <limits>
#include <stdexcept>

namespace jointdiff {

namespace {

// Samples per accumulation chunk. Fixed so the reduction tree, and therefore
// every bit of the result, is independent of the thread count.
constexpr int kChunkSamples = 4;

template <typename T>
struct GradBuffer {
    std::vector<std::vector<T>> per_param;
    double loss_sum = 0.0;
    LossTerms terms_sum;
    bool finite = true;

    void reset(const ParamStore<T>& ps) {
        if (per_param.size() != ps.entries.size()) {
            per_param.resize(ps.entries.size());
            for (size_t i = 0; i < per_param.size(); ++i)
                per_param[i].assign(ps.entries[i].second.numel(), T(0));
        } else {
            for (auto& g : per_param) std::fill(g.begin(), g.end(), T(0));
        }
        loss_sum = 0.0;
        terms_sum = LossTerms{};
        finite = true;
    }
};

template <typename T>
class Trainer {
public:
    Trainer(const Dataset& dataset, const TrainConfig& cfg) : ds_(dataset), cfg_(cfg) {
        if (cfg_.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
        if (cfg_.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        model_cfg_ = cfg_.denoiser;
        model_cfg_.side = ds_.config.side;
        model_cfg_.num_classes = ds_.config.num_classes;
        model_cfg_.validate();
        gs_ = linear_beta_schedule(cfg_.timesteps, cfg_.beta_start, cfg_.beta_end);
        dsched_ = cosine_discrete_schedule(cfg_.timesteps, model_cfg_.num_classes, cfg_.cosine_offset);
        range_ = AgeRange{ds_.config.age_lo, ds_.config.age_hi};

        for (const auto& r : ds_.records) {
            if (r.split == Split::train)
                train_states_.push_back(encode_record(r.rec, range_, model_cfg_.num_classes));
            else if (r.split == Split::val)
                val_states_.push_back(encode_record(r.rec, range_, model_cfg_.num_classes));
        }
        if (train_states_.empty()) throw std::invalid_argument("train: empty training split");
        if (val_states_.empty()) throw std::invalid_argument("train: empty validation split");

        threads_ = cfg_.threads > 0 ? cfg_.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
        if (threads_ < 1) threads_ = 1;
    }

    Checkpoint run(const EpochCallback& cb) {
        params_ = init_denoiser_params<T>(model_cfg_, cfg_.seed);
        adam_m_.resize(params_.entries.size());
        adam_v_.resize(params_.entries.size());
        for (size_t i = 0; i < params_.entries.size(); ++i) {
            adam_m_[i].assign(params_.entries[i].second.numel(), T(0));
            adam_v_[i].assign(params_.entries[i].second.numel(), T(0));
        }

        // Validation tuples are fixed once so per-epoch losses are comparable.
        if (cfg_.val_draws < 1) throw std::invalid_argument("train: val_draws must be >= 1");
        val_examples_.reserve(val_states_.size() * static_cast<size_t>(cfg_.val_draws));
        for (size_t i = 0; i < val_states_.size(); ++i)
            for (int k = 0; k < cfg_.val_draws; ++k) {
                Rng rng(derive_seed(cfg_.seed, Rstream::val_noise, i, static_cast<uint64_t>(k)));
                const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint32_t>(gs_.T)));
                val_examples_.push_back(make_training_example(
                    val_states_[i], forward_diffuse(val_states_[i], t, rng, gs_, dsched_)));
            }

        LossTerms val_terms;
        double val = validation_loss(&val_terms);
        double best_val = val;
        int best_epoch = 0;
        ParamStore<float> best_params = params_.template cast<float>();
        if (cb) cb(EpochStats{0, std::numeric_limits<double>::quiet_NaN(), val, val_terms});

        int step = 0;
        for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            const double train_loss = run_epoch(epoch, step);
            val = validation_loss(&val_terms);
            if (cb) cb(EpochStats{epoch, train_loss, val, val_terms});
            if (val < best_val) {
                best_val = val;
                best_epoch = epoch;
                best_params = params_.template cast<float>();
            }
        }

        Checkpoint ck;
        ck.gaussian_kind = gs_.kind;
        ck.timesteps = cfg_.timesteps;
        ck.beta_start = cfg_.beta_start;
        ck.beta_end = cfg_.beta_end;
        ck.cosine_offset = cfg_.cosine_offset;
        ck.config = model_cfg_;
        ck.age_range = range_;
        ck.lambda_image = cfg_.lambda_image;
        ck.epoch = best_epoch;
        ck.val_loss = best_val;
        ck.seed = cfg_.seed;
        ck.precision = cfg_.precision;
        ck.params = std::move(best_params);
        return ck;
    }

private:
    double current_lr(int epoch) const {
        if (cfg_.lr_final_factor >= 1.0 || cfg_.epochs <= 1) return cfg_.learning_rate;
        const double lo = cfg_.learning_rate * cfg_.lr_final_factor;
        const double frac = static_cast<double>(epoch - 1) / (cfg_.epochs - 1);
        return lo + (cfg_.learning_rate - lo) * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
    }

    double run_epoch(int epoch, int& step) {
        std::vector<size_t> order(train_states_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg_.seed, Rstream::data_order, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<uint32_t>(i))]);

        double epoch_loss = 0.0;
        size_t epoch_count = 0;
        const size_t n = order.size();
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg_.batch_size)) {
            const size_t batch_n = std::min(static_cast<size_t>(cfg_.batch_size), n - start);
            const int chunks = static_cast<int>((batch_n + kChunkSamples - 1) / kChunkSamples);
            if (buffers_.size() < static_cast<size_t>(chunks)) buffers_.resize(static_cast<size_t>(chunks));
            for (int c = 0; c < chunks; ++c) buffers_[static_cast<size_t>(c)].reset(params_);

            detail::parallel_for(chunks, threads_, [&](int c) {
                GradBuffer<T>& buf = buffers_[static_cast<size_t>(c)];
                const size_t lo = start + static_cast<size_t>(c) * kChunkSamples;
                const size_t hi = std::min(lo + kChunkSamples, start + batch_n);
                for (size_t pos = lo; pos < hi; ++pos) accumulate_sample(epoch, pos, order[pos], buf);
            });

            ++step;
            double batch_loss = 0.0;
            for (int c = 0; c < chunks; ++c) {
                if (!buffers_[static_cast<size_t>(c)].finite)
                    throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", step " + std::to_string(step));
                batch_loss += buffers_[static_cast<size_t>(c)].loss_sum;
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", step " + std::to_string(step));
            epoch_loss += batch_loss;
            epoch_count += batch_n;
            apply_adam(step, batch_n, current_lr(epoch));
        }
        return epoch_loss / static_cast<double>(epoch_count);
    }

    void accumulate_sample(int epoch, size_t counter, size_t record_idx, GradBuffer<T>& buf) {
        Rng time_rng(derive_seed(cfg_.seed, Rstream::train_time, static_cast<uint64_t>(epoch), counter));
        const int t = 1 + static_cast<int>(time_rng.uniform_int(static_cast<uint32_t>(gs_.T)));
        Rng noise_rng(derive_seed(cfg_.seed, Rstream::train_noise, static_cast<uint64_t>(epoch), counter));
        const TrainingExample ex = make_training_example(
            train_states_[record_idx], forward_diffuse(train_states_[record_idx], t, noise_rng, gs_, dsched_));

        Tape<T> tp;
        BoundParams<T> bp = bind_params(tp, params_, true);
        LossTerms terms;
        const auto loss = joint_loss_graph<T>(tp, model_cfg_, bp, {&ex, 1}, cfg_.lambda_image, &terms);
        if (!std::isfinite(terms.total)) {
            buf.finite = false;
            return;
        }
        tp.backward(loss);
        buf.loss_sum += terms.total;
        buf.terms_sum.image_mse += terms.image_mse;
        buf.terms_sum.age_mse += terms.age_mse;
        buf.terms_sum.sex_ce += terms.sex_ce;
        for (size_t i = 0; i < params_.entries.size(); ++i) {
            const Tensor<T>& g = tp.grad(bp(params_.entries[i].first));
            auto& dst = buf.per_param[i];
            for (size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
        }
    }

    void apply_adam(int step, size_t batch_n, double lr_now) {
        const T lr = static_cast<T>(lr_now);
        const T b1 = static_cast<T>(cfg_.adam_beta1);
        const T b2 = static_cast<T>(cfg_.adam_beta2);
        const T eps = static_cast<T>(cfg_.adam_eps);
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.adam_beta1, step));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.adam_beta2, step));
        const T inv_n = static_cast<T>(1.0 / static_cast<double>(batch_n));
        const int chunks = static_cast<int>((batch_n + kChunkSamples - 1) / kChunkSamples);
        for (size_t i = 0; i < params_.entries.size(); ++i) {
            Tensor<T>& p = params_.entries[i].second;
            auto& m = adam_m_[i];
            auto& v = adam_v_[i];
            for (size_t k = 0; k < p.numel(); ++k) {
                T g = T(0);
                for (int c = 0; c < chunks; ++c) g += buffers_[static_cast<size_t>(c)].per_param[i][k];
                g *= inv_n;
                m[k] = b1 * m[k] + (T(1) - b1) * g;
                v[k] = b2 * v[k] + (T(1) - b2) * g * g;
                const T mhat = m[k] / bc1;
                const T vhat = v[k] / bc2;
                p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    double validation_loss(LossTerms* terms_out) {
        const int chunks =
            static_cast<int>((val_examples_.size() + kChunkSamples - 1) / kChunkSamples);
        std::vector<double> losses(val_examples_.size(), 0.0);
        std::vector<LossTerms> terms(val_examples_.size());
        detail::parallel_for(chunks, threads_, [&](int c) {
            const size_t lo = static_cast<size_t>(c) * kChunkSamples;
            const size_t hi = std::min(lo + kChunkSamples, val_examples_.size());
            for (size_t i = lo; i < hi; ++i) {
                Tape<T> tp;
                BoundParams<T> bp = bind_params(tp, params_, false);
                LossTerms t;
                joint_loss_graph<T>(tp, model_cfg_, bp, {&val_examples_[i], 1}, cfg_.lambda_image, &t);
                losses[i] = t.total;
                terms[i] = t;
            }
        });
        double acc = 0.0;
        LossTerms sum;
        for (size_t i = 0; i < losses.size(); ++i) {
            acc += losses[i];
            sum.image_mse += terms[i].image_mse;
            sum.age_mse += terms[i].age_mse;
            sum.sex_ce += terms[i].sex_ce;
        }
        const double inv = 1.0 / static_cast<double>(losses.size());
        if (terms_out) {
            terms_out->image_mse = sum.image_mse * inv;
            terms_out->age_mse = sum.age_mse * inv;
            terms_out->sex_ce = sum.sex_ce * inv;
            terms_out->total = acc * inv;
        }
        return acc * inv;
    }

    const Dataset& ds_;
    TrainConfig cfg_;
    DenoiserConfig model_cfg_;
    GaussianSchedule gs_;
    DiscreteSchedule dsched_;
    AgeRange range_;
    std::vector<JointState> train_states_;
    std::vector<JointState> val_states_;
    std::vector<TrainingExample> val_examples_;
    ParamStore<T> params_;
    std::vector<std::vector<T>> adam_m_;
    std::vector<std::vector<T>> adam_v_;
    std::vector<GradBuffer<T>> buffers_;
    int threads_ = 1;
};

}  // namespace

Checkpoint train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& cb) {
    if (cfg.precision == "f64") return Trainer<double>(dataset, cfg).run(cb);
    if (cfg.precision == "f32") return Trainer<float>(dataset, cfg).run(cb);
    throw std::invalid_argument("train: precision must be f32 or f64");
}

}  // namespace jointdiff
