#include "jointdiff.h"

#include <cstring>
#include <exception>
#include <string>

#include "core/sampler.hpp"
#include "core/selfcheck.hpp"
#include "core/synthdata.hpp"
#include "core/trainer.hpp"

using namespace jointdiff;

namespace {

thread_local std::string g_last_error;

jd_status fail(jd_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

// Exceptions map onto status codes at the boundary.
template <typename Fn>
jd_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        return fail(JD_ERR_INVALID_ARG, e.what());
    } catch (const std::out_of_range& e) {
        return fail(JD_ERR_INVALID_ARG, e.what());
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        if (what.find("non-finite") != std::string::npos || what.find("diverged") != std::string::npos)
            return fail(JD_ERR_NUMERIC, what);
        if (what.find("magic") != std::string::npos || what.find("version") != std::string::npos ||
            what.find("end of file") != std::string::npos)
            return fail(JD_ERR_FORMAT, what);
        return fail(JD_ERR_IO, what);
    } catch (const std::bad_alloc&) {
        return fail(JD_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(JD_ERR_INTERNAL, e.what());
    }
}

GeneratorConfig to_core(const jd_generator_config& c) {
    GeneratorConfig g;
    g.side = c.side;
    g.num_classes = c.num_classes;
    g.age_lo = c.age_lo;
    g.age_hi = c.age_hi;
    g.radius_min = c.radius_min;
    g.radius_max = c.radius_max;
    g.asymmetry = c.asymmetry;
    g.noise_sigma = c.noise_sigma;
    g.foreground = c.foreground;
    g.background = c.background;
    return g;
}

}  // namespace

struct jd_dataset {
    Dataset ds;
};

struct jd_model {
    Checkpoint checkpoint;
    ModelRuntime runtime;

    explicit jd_model(Checkpoint ck) : checkpoint(std::move(ck)), runtime(checkpoint) {}
};

extern "C" {

const char* jd_status_name(jd_status status) {
    switch (status) {
        case JD_OK: return "ok";
        case JD_ERR_INVALID_ARG: return "invalid argument";
        case JD_ERR_IO: return "io error";
        case JD_ERR_FORMAT: return "format error";
        case JD_ERR_NUMERIC: return "numeric error";
        case JD_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

const char* jd_last_error(void) { return g_last_error.c_str(); }

void jd_generator_config_defaults(jd_generator_config* cfg) {
    if (!cfg) return;
    const GeneratorConfig g;
    cfg->side = g.side;
    cfg->num_classes = g.num_classes;
    cfg->age_lo = g.age_lo;
    cfg->age_hi = g.age_hi;
    cfg->radius_min = g.radius_min;
    cfg->radius_max = g.radius_max;
    cfg->asymmetry = g.asymmetry;
    cfg->noise_sigma = g.noise_sigma;
    cfg->foreground = g.foreground;
    cfg->background = g.background;
}

jd_status jd_dataset_generate(const jd_generator_config* cfg, int32_t n_subjects, uint64_t seed,
                              jd_dataset** out) {
    if (!cfg || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    *out = nullptr;
    return guarded([&]() {
        auto handle = new jd_dataset{generate_dataset(n_subjects, to_core(*cfg), seed)};
        *out = handle;
        return JD_OK;
    });
}

jd_status jd_dataset_split(jd_dataset* ds, double train_frac, double val_frac, double test_frac,
                           uint64_t seed) {
    if (!ds) return fail(JD_ERR_INVALID_ARG, "null dataset");
    return guarded([&]() {
        split_dataset(ds->ds, {train_frac, val_frac, test_frac}, seed);
        return JD_OK;
    });
}

jd_status jd_dataset_save(const jd_dataset* ds, const char* path) {
    if (!ds || !path) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        save_dataset(ds->ds, path);
        return JD_OK;
    });
}

jd_status jd_dataset_load(const char* path, jd_dataset** out) {
    if (!path || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    *out = nullptr;
    return guarded([&]() {
        *out = new jd_dataset{load_dataset(path)};
        return JD_OK;
    });
}

void jd_dataset_free(jd_dataset* ds) { delete ds; }

int32_t jd_dataset_size(const jd_dataset* ds) {
    return ds ? static_cast<int32_t>(ds->ds.records.size()) : 0;
}

int32_t jd_dataset_side(const jd_dataset* ds) { return ds ? ds->ds.config.side : 0; }

int32_t jd_dataset_num_classes(const jd_dataset* ds) { return ds ? ds->ds.config.num_classes : 0; }

int32_t jd_dataset_count_split(const jd_dataset* ds, int32_t split) {
    if (!ds || split < 0 || split > 2) return 0;
    int32_t n = 0;
    for (const auto& r : ds->ds.records)
        if (static_cast<int32_t>(r.split) == split) ++n;
    return n;
}

jd_status jd_dataset_record(const jd_dataset* ds, int32_t index, int32_t* subject_id,
                            int32_t* split, double* age, int32_t* sex, float* image) {
    if (!ds) return fail(JD_ERR_INVALID_ARG, "null dataset");
    if (index < 0 || static_cast<size_t>(index) >= ds->ds.records.size())
        return fail(JD_ERR_INVALID_ARG, "record index out of range");
    const DatasetRecord& r = ds->ds.records[static_cast<size_t>(index)];
    if (subject_id) *subject_id = static_cast<int32_t>(r.subject_id);
    if (split) *split = static_cast<int32_t>(r.split);
    if (age) *age = r.rec.age;
    if (sex) *sex = r.rec.sex;
    if (image) std::memcpy(image, r.rec.image.data(), sizeof(float) * r.rec.image.size());
    return JD_OK;
}

jd_status jd_oracle_age(const jd_dataset* ds, const float* image, double* age) {
    if (!ds || !image || !age) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        const size_t pixels = static_cast<size_t>(ds->ds.config.side) * ds->ds.config.side;
        *age = oracle_age(std::vector<float>(image, image + pixels), ds->ds.config);
        return JD_OK;
    });
}

jd_status jd_oracle_sex(const jd_dataset* ds, const float* image, int32_t* sex) {
    if (!ds || !image || !sex) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        const size_t pixels = static_cast<size_t>(ds->ds.config.side) * ds->ds.config.side;
        *sex = oracle_sex(std::vector<float>(image, image + pixels), ds->ds.config);
        return JD_OK;
    });
}

jd_status jd_population_mean_age(const jd_dataset* ds, double* mean_age) {
    if (!ds || !mean_age) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        *mean_age = population_baseline(ds->ds).mean_age;
        return JD_OK;
    });
}

void jd_train_config_defaults(jd_train_config* cfg) {
    if (!cfg) return;
    const TrainConfig t;
    cfg->timesteps = t.timesteps;
    cfg->beta_start = t.beta_start;
    cfg->beta_end = t.beta_end;
    cfg->width = t.denoiser.width;
    cfg->depth = t.denoiser.depth;
    cfg->temb_dim = t.denoiser.temb_dim;
    cfg->epochs = t.epochs;
    cfg->batch_size = t.batch_size;
    cfg->learning_rate = t.learning_rate;
    cfg->lr_final_factor = t.lr_final_factor;
    cfg->lambda_image = t.lambda_image;
    cfg->val_draws = t.val_draws;
    cfg->threads = t.threads;
    cfg->use_f64 = 0;
    cfg->seed = t.seed;
}

jd_status jd_train(const jd_dataset* ds, const jd_train_config* cfg, jd_epoch_callback cb,
                   void* user, jd_model** out) {
    if (!ds || !cfg || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    *out = nullptr;
    return guarded([&]() {
        TrainConfig t;
        t.timesteps = cfg->timesteps;
        t.beta_start = cfg->beta_start;
        t.beta_end = cfg->beta_end;
        t.denoiser.width = cfg->width;
        t.denoiser.depth = cfg->depth;
        t.denoiser.temb_dim = cfg->temb_dim;
        t.epochs = cfg->epochs;
        t.batch_size = cfg->batch_size;
        t.learning_rate = cfg->learning_rate;
        t.lr_final_factor = cfg->lr_final_factor;
        t.lambda_image = cfg->lambda_image;
        t.val_draws = cfg->val_draws;
        t.threads = cfg->threads;
        t.precision = cfg->use_f64 ? "f64" : "f32";
        t.seed = cfg->seed;
        EpochCallback wrapped;
        if (cb)
            wrapped = [cb, user](const EpochStats& s) {
                cb(user, s.epoch, s.train_loss, s.val_loss, s.val_terms.image_mse, s.val_terms.age_mse,
                   s.val_terms.sex_ce);
            };
        *out = new jd_model(train(ds->ds, t, wrapped));
        return JD_OK;
    });
}

jd_status jd_model_save(const jd_model* model, const char* path) {
    if (!model || !path) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        save_checkpoint(model->checkpoint, path);
        return JD_OK;
    });
}

jd_status jd_model_load(const char* path, jd_model** out) {
    if (!path || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    *out = nullptr;
    return guarded([&]() {
        *out = new jd_model(load_checkpoint(path));
        return JD_OK;
    });
}

void jd_model_free(jd_model* model) { delete model; }

size_t jd_model_describe(const jd_model* model, char* buf, size_t buflen) {
    if (!model) return 0;
    const std::string text = model->checkpoint.describe();
    if (buf && buflen > 0) {
        const size_t n = std::min(buflen - 1, text.size());
        std::memcpy(buf, text.data(), n);
        buf[n] = '\0';
    }
    return text.size();
}

int32_t jd_model_side(const jd_model* model) { return model ? model->checkpoint.config.side : 0; }

int32_t jd_model_num_classes(const jd_model* model) {
    return model ? model->checkpoint.config.num_classes : 0;
}

void jd_sample_options_defaults(jd_sample_options* opts) {
    if (!opts) return;
    opts->ddim_steps = 50;
    opts->discrete_steps = 20;
}

jd_status jd_sample(const jd_model* model, const jd_conditioning* cond,
                    const jd_sample_options* opts, uint64_t seed, jd_record* out) {
    if (!model || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        jd_sample_options defaults;
        jd_sample_options_defaults(&defaults);
        const jd_sample_options& o = opts ? *opts : defaults;
        const SamplerPlan plan = build_plan(model->runtime.gaussian.T, o.ddim_steps, o.discrete_steps);
        const size_t pixels =
            static_cast<size_t>(model->checkpoint.config.side) * model->checkpoint.config.side;
        ConditioningMask mask;
        if (cond) {
            if (cond->image_mask) {
                if (!cond->image) return fail(JD_ERR_INVALID_ARG, "image mask set without image values");
                mask.image_mask.assign(cond->image_mask, cond->image_mask + pixels);
                mask.image_values.assign(cond->image, cond->image + pixels);
            }
            if (cond->age_known) {
                mask.age_known = true;
                mask.age_value = encode_age(cond->age, model->runtime.age_range);
            }
            if (cond->sex_known) {
                mask.sex_known = true;
                mask.sex_value = cond->sex;
            }
        }
        const PatientRecord r = sample_conditional(model->runtime, mask, plan, seed);
        out->age = r.age;
        out->sex = r.sex;
        if (out->image) std::memcpy(out->image, r.image.data(), sizeof(float) * pixels);
        return JD_OK;
    });
}

jd_status jd_estimate_age(const jd_model* model, const float* image, const int32_t* sex,
                          const jd_sample_options* opts, int32_t num_samples, uint64_t seed,
                          jd_age_estimate* out) {
    if (!model || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    if (num_samples < 1 || num_samples > 16)
        return fail(JD_ERR_INVALID_ARG, "num_samples must be in [1,16]");
    return guarded([&]() {
        jd_sample_options defaults;
        jd_sample_options_defaults(&defaults);
        const jd_sample_options& o = opts ? *opts : defaults;
        const SamplerPlan plan = build_plan(model->runtime.gaussian.T, o.ddim_steps, o.discrete_steps);
        const size_t pixels =
            static_cast<size_t>(model->checkpoint.config.side) * model->checkpoint.config.side;
        std::vector<float> img;
        const std::vector<float>* imgp = nullptr;
        if (image) {
            img.assign(image, image + pixels);
            imgp = &img;
        }
        int sex_value = sex ? *sex : 0;
        const AgeEstimate est =
            estimate_age(model->runtime, imgp, sex ? &sex_value : nullptr, plan, num_samples, seed);
        out->estimate = est.estimate;
        out->sample_variance = est.sample_variance;
        out->num_samples = num_samples;
        for (int k = 0; k < num_samples; ++k) out->samples[k] = est.samples[static_cast<size_t>(k)];
        return JD_OK;
    });
}

jd_status jd_predict_sex(const jd_model* model, const float* image, const double* age,
                         const jd_sample_options* opts, int32_t num_samples, uint64_t seed,
                         jd_sex_prediction* out) {
    if (!model || !image || !out) return fail(JD_ERR_INVALID_ARG, "null argument");
    if (num_samples < 1 || num_samples > 16)
        return fail(JD_ERR_INVALID_ARG, "num_samples must be in [1,16]");
    return guarded([&]() {
        jd_sample_options defaults;
        jd_sample_options_defaults(&defaults);
        const jd_sample_options& o = opts ? *opts : defaults;
        const SamplerPlan plan = build_plan(model->runtime.gaussian.T, o.ddim_steps, o.discrete_steps);
        const size_t pixels =
            static_cast<size_t>(model->checkpoint.config.side) * model->checkpoint.config.side;
        const std::vector<float> img(image, image + pixels);
        const SexPrediction pred = predict_sex(model->runtime, img, age, plan, num_samples, seed);
        out->predicted = pred.predicted;
        out->num_samples = num_samples;
        for (int k = 0; k < num_samples; ++k) out->votes[k] = pred.votes[static_cast<size_t>(k)];
        return JD_OK;
    });
}

jd_status jd_self_check(jd_check_callback cb, void* user) {
    return guarded([&]() {
        const auto results = run_self_check();
        for (const auto& r : results)
            if (cb) cb(user, r.name.c_str(), r.passed ? 1 : 0, r.detail.c_str());
        return all_passed(results) ? JD_OK : fail(JD_ERR_NUMERIC, "self check failed");
    });
}

}  // extern "C"
