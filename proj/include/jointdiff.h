/* jointdiff — joint diffusion over an image, a continuous scalar and a
 * categorical variable, with zero-shot conditional inference.
 *
 * C API over the C++ core: opaque handles, status codes, no exceptions
 * crossing the boundary. All functions returning jd_status leave an error
 * message retrievable with jd_last_error() on failure.
 */
#ifndef JOINTDIFF_H
#define JOINTDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define JD_API __declspec(dllexport)
#else
#define JD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum jd_status {
    JD_OK = 0,
    JD_ERR_INVALID_ARG = 1,
    JD_ERR_IO = 2,
    JD_ERR_FORMAT = 3,
    JD_ERR_NUMERIC = 4,
    JD_ERR_INTERNAL = 5
} jd_status;

JD_API const char* jd_status_name(jd_status status);

/* Thread-local message describing the most recent failure on this thread. */
JD_API const char* jd_last_error(void);

typedef struct jd_dataset jd_dataset;
typedef struct jd_model jd_model;

/* ---- synthetic data ---- */

typedef struct jd_generator_config {
    int32_t side;
    int32_t num_classes;
    double age_lo, age_hi;
    double radius_min, radius_max;
    double asymmetry;
    double noise_sigma;
    double foreground, background;
} jd_generator_config;

JD_API void jd_generator_config_defaults(jd_generator_config* cfg);

JD_API jd_status jd_dataset_generate(const jd_generator_config* cfg, int32_t n_subjects,
                                     uint64_t seed, jd_dataset** out);
/* fractions: train, val, test; must sum to 1. Split is subject-level. */
JD_API jd_status jd_dataset_split(jd_dataset* ds, double train_frac, double val_frac,
                                  double test_frac, uint64_t seed);
JD_API jd_status jd_dataset_save(const jd_dataset* ds, const char* path);
JD_API jd_status jd_dataset_load(const char* path, jd_dataset** out);
JD_API void jd_dataset_free(jd_dataset* ds);

JD_API int32_t jd_dataset_size(const jd_dataset* ds);
JD_API int32_t jd_dataset_side(const jd_dataset* ds);
JD_API int32_t jd_dataset_num_classes(const jd_dataset* ds);
/* split: 0 = train, 1 = val, 2 = test */
JD_API int32_t jd_dataset_count_split(const jd_dataset* ds, int32_t split);
/* Any output pointer may be NULL; image must hold side*side floats. */
JD_API jd_status jd_dataset_record(const jd_dataset* ds, int32_t index, int32_t* subject_id,
                                   int32_t* split, double* age, int32_t* sex, float* image);

/* Analytic oracles for the generator family (evaluation baselines). */
JD_API jd_status jd_oracle_age(const jd_dataset* ds, const float* image, double* age);
JD_API jd_status jd_oracle_sex(const jd_dataset* ds, const float* image, int32_t* sex);
JD_API jd_status jd_population_mean_age(const jd_dataset* ds, double* mean_age);

/* ---- training ---- */

typedef struct jd_train_config {
    int32_t timesteps;
    double beta_start, beta_end;
    int32_t width, depth, temb_dim;
    int32_t epochs, batch_size;
    double learning_rate;
    double lr_final_factor; /* cosine decay floor as a fraction of learning_rate; 1 = constant */
    double lambda_image;
    int32_t val_draws; /* fixed validation draws per record */
    int32_t threads;  /* 0 = hardware concurrency */
    int32_t use_f64;  /* 0 = 32-bit training arithmetic */
    uint64_t seed;
} jd_train_config;

JD_API void jd_train_config_defaults(jd_train_config* cfg);

/* Called once before training (epoch 0, train_loss = NaN) and once per epoch. */
typedef void (*jd_epoch_callback)(void* user, int32_t epoch, double train_loss, double val_loss,
                                  double image_mse, double age_mse, double sex_ce);

JD_API jd_status jd_train(const jd_dataset* ds, const jd_train_config* cfg, jd_epoch_callback cb,
                          void* user, jd_model** out);

JD_API jd_status jd_model_save(const jd_model* model, const char* path);
JD_API jd_status jd_model_load(const char* path, jd_model** out);
JD_API void jd_model_free(jd_model* model);
/* JSON echo of the checkpoint header. Returns required length (excluding the
 * terminator); copies at most buflen bytes when buf is non-NULL. */
JD_API size_t jd_model_describe(const jd_model* model, char* buf, size_t buflen);
JD_API int32_t jd_model_side(const jd_model* model);
JD_API int32_t jd_model_num_classes(const jd_model* model);

/* ---- sampling & zero-shot inference ---- */

typedef struct jd_sample_options {
    int32_t ddim_steps;     /* continuous DDIM updates */
    int32_t discrete_steps; /* categorical jump updates */
} jd_sample_options;

JD_API void jd_sample_options_defaults(jd_sample_options* opts);

typedef struct jd_conditioning {
    const uint8_t* image_mask; /* side*side of 0/1, NULL = no pixels known */
    const float* image;        /* required when image_mask is set */
    int32_t age_known;
    double age; /* years */
    int32_t sex_known;
    int32_t sex;
} jd_conditioning;

typedef struct jd_record {
    double age;
    int32_t sex;
    float* image; /* caller buffer of side*side floats, may be NULL */
} jd_record;

/* cond may be NULL for unconditional sampling. */
JD_API jd_status jd_sample(const jd_model* model, const jd_conditioning* cond,
                           const jd_sample_options* opts, uint64_t seed, jd_record* out);

typedef struct jd_age_estimate {
    double estimate;
    double sample_variance; /* unbiased over the samples */
    int32_t num_samples;
    double samples[16];
} jd_age_estimate;

/* image may be NULL (unknown); sex may be NULL (unknown). */
JD_API jd_status jd_estimate_age(const jd_model* model, const float* image, const int32_t* sex,
                                 const jd_sample_options* opts, int32_t num_samples, uint64_t seed,
                                 jd_age_estimate* out);

typedef struct jd_sex_prediction {
    int32_t predicted;
    int32_t num_samples;
    int32_t votes[16];
} jd_sex_prediction;

/* age in years, may be NULL (unknown). */
JD_API jd_status jd_predict_sex(const jd_model* model, const float* image, const double* age,
                                const jd_sample_options* opts, int32_t num_samples, uint64_t seed,
                                jd_sex_prediction* out);

/* ---- self check ---- */

typedef void (*jd_check_callback)(void* user, const char* property, int32_t passed,
                                  const char* detail);

/* Runs the oracle/property suite; JD_OK iff every property passes. */
JD_API jd_status jd_self_check(jd_check_callback cb, void* user);

#ifdef __cplusplus
}
#endif

#endif /* JOINTDIFF_H */
