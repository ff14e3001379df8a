#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "jointdiff.h"
#include "support/metrics.hpp"
#include "support/pgm.hpp"
#include "support/run_config.hpp"

using nlohmann::json;
namespace tools = jointdiff::tools;

namespace {

[[noreturn]] void die(const std::string& context, jd_status status) {
    std::fprintf(stderr, "error: %s: %s: %s\n", context.c_str(), jd_status_name(status),
                 jd_last_error());
    std::exit(static_cast<int>(status));
}

[[noreturn]] void die(const std::string& message) {
    std::fprintf(stderr, "error: %s\n", message.c_str());
    std::exit(1);
}

void check(jd_status status, const std::string& context) {
    if (status != JD_OK) die(context, status);
}

// Options not set on the command line fall back to config-file values.
template <typename T>
void merge_option(const json& cfg, const char* key, T& value, const CLI::Option* opt) {
    if (opt && opt->count() > 0) return;
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

struct LossLog {
    std::FILE* file = nullptr;

    static void callback(void* user, int32_t epoch, double train_loss, double val_loss,
                         double image_mse, double age_mse, double sex_ce) {
        auto* self = static_cast<LossLog*>(user);
        std::fprintf(self->file, "%d\t%.8f\t%.8f\t%.8f\t%.8f\t%.8f\n", epoch, train_loss, val_loss,
                     image_mse, age_mse, sex_ce);
        std::fflush(self->file);
        std::printf("epoch %4d  train %10.6f  val %10.6f  (img %.4f  age %.4f  ce %.4f)\n", epoch,
                    train_loss, val_loss, image_mse, age_mse, sex_ce);
        std::fflush(stdout);
    }
};

struct TestRecord {
    int32_t subject_id = 0;
    double age = 0.0;
    int32_t sex = 0;
    std::vector<float> image;
};

std::vector<TestRecord> collect_split(const jd_dataset* ds, int32_t split, int limit) {
    const int side = jd_dataset_side(ds);
    const size_t pixels = static_cast<size_t>(side) * side;
    std::vector<TestRecord> out;
    const int32_t n = jd_dataset_size(ds);
    for (int32_t i = 0; i < n; ++i) {
        int32_t rec_split = 0;
        TestRecord r;
        r.image.resize(pixels);
        check(jd_dataset_record(ds, i, &r.subject_id, &rec_split, &r.age, &r.sex, r.image.data()),
              "reading dataset record");
        if (rec_split != split) continue;
        out.push_back(std::move(r));
        if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    }
    return out;
}

void parallel_indices(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(threads, n); ++w)
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

// ---- gen-data ----

int cmd_gen_data(const std::string& config_path, std::string out, int subjects, uint64_t seed,
                 jd_generator_config gen, double frac_train, double frac_val, double frac_test,
                 uint64_t split_seed, bool split_seed_set, const std::vector<const CLI::Option*>& opts) {
    static const std::set<std::string> allowed = {
        "out",        "subjects",  "seed",        "side",       "classes",   "age_lo",
        "age_hi",     "radius_min", "radius_max", "asymmetry",  "noise_sigma",
        "foreground", "background", "frac_train", "frac_val",   "frac_test", "split_seed"};
    json cfg = json::object();
    if (!config_path.empty()) cfg = tools::load_config_file(config_path, allowed);
    size_t k = 0;
    merge_option(cfg, "out", out, opts[k++]);
    merge_option(cfg, "subjects", subjects, opts[k++]);
    merge_option(cfg, "seed", seed, opts[k++]);
    merge_option(cfg, "side", gen.side, opts[k++]);
    merge_option(cfg, "classes", gen.num_classes, opts[k++]);
    merge_option(cfg, "age_lo", gen.age_lo, opts[k++]);
    merge_option(cfg, "age_hi", gen.age_hi, opts[k++]);
    merge_option(cfg, "radius_min", gen.radius_min, opts[k++]);
    merge_option(cfg, "radius_max", gen.radius_max, opts[k++]);
    merge_option(cfg, "asymmetry", gen.asymmetry, opts[k++]);
    merge_option(cfg, "noise_sigma", gen.noise_sigma, opts[k++]);
    merge_option(cfg, "foreground", gen.foreground, opts[k++]);
    merge_option(cfg, "background", gen.background, opts[k++]);
    merge_option(cfg, "frac_train", frac_train, opts[k++]);
    merge_option(cfg, "frac_val", frac_val, opts[k++]);
    merge_option(cfg, "frac_test", frac_test, opts[k++]);
    merge_option(cfg, "split_seed", split_seed, opts[k++]);
    if (!split_seed_set && !cfg.contains("split_seed")) split_seed = seed;
    if (out.empty()) die("gen-data: --out is required");

    jd_dataset* ds = nullptr;
    check(jd_dataset_generate(&gen, subjects, seed, &ds), "generating dataset");
    check(jd_dataset_split(ds, frac_train, frac_val, frac_test, split_seed), "splitting dataset");
    check(jd_dataset_save(ds, out.c_str()), "saving dataset");
    std::printf("wrote %s: %d subjects (train %d, val %d, test %d)\n", out.c_str(),
                jd_dataset_size(ds), jd_dataset_count_split(ds, 0), jd_dataset_count_split(ds, 1),
                jd_dataset_count_split(ds, 2));
    jd_dataset_free(ds);

    const json resolved = {{"out", out},
                           {"subjects", subjects},
                           {"seed", seed},
                           {"side", gen.side},
                           {"classes", gen.num_classes},
                           {"age_lo", gen.age_lo},
                           {"age_hi", gen.age_hi},
                           {"radius_min", gen.radius_min},
                           {"radius_max", gen.radius_max},
                           {"asymmetry", gen.asymmetry},
                           {"noise_sigma", gen.noise_sigma},
                           {"foreground", gen.foreground},
                           {"background", gen.background},
                           {"frac_train", frac_train},
                           {"frac_val", frac_val},
                           {"frac_test", frac_test},
                           {"split_seed", split_seed}};
    tools::echo_config(resolved, out + ".config.json");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint multimodal diffusion over a synthetic image/age/sex corpus"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    std::string gd_config, gd_out;
    int gd_subjects = 2000;
    uint64_t gd_seed = 1, gd_split_seed = 1;
    jd_generator_config gd_gen;
    jd_generator_config_defaults(&gd_gen);
    double gd_ft = 0.89, gd_fv = 0.01, gd_fe = 0.10;
    gen_cmd->add_option("--config", gd_config, "JSON config file");
    std::vector<const CLI::Option*> gd_opts;
    gd_opts.push_back(gen_cmd->add_option("--out", gd_out, "output dataset path (.jdds)"));
    gd_opts.push_back(gen_cmd->add_option("--subjects", gd_subjects, "number of subjects"));
    gd_opts.push_back(gen_cmd->add_option("--seed", gd_seed, "generator seed"));
    gd_opts.push_back(gen_cmd->add_option("--side", gd_gen.side, "image side length"));
    gd_opts.push_back(gen_cmd->add_option("--classes", gd_gen.num_classes, "sex categories"));
    gd_opts.push_back(gen_cmd->add_option("--age-lo", gd_gen.age_lo, "age range low"));
    gd_opts.push_back(gen_cmd->add_option("--age-hi", gd_gen.age_hi, "age range high"));
    gd_opts.push_back(gen_cmd->add_option("--radius-min", gd_gen.radius_min, "disk radius at age-lo"));
    gd_opts.push_back(gen_cmd->add_option("--radius-max", gd_gen.radius_max, "disk radius at age-hi"));
    gd_opts.push_back(gen_cmd->add_option("--asymmetry", gd_gen.asymmetry, "lateral sex offset"));
    gd_opts.push_back(gen_cmd->add_option("--noise-sigma", gd_gen.noise_sigma, "pixel noise sigma"));
    gd_opts.push_back(gen_cmd->add_option("--foreground", gd_gen.foreground, "disk intensity"));
    gd_opts.push_back(gen_cmd->add_option("--background", gd_gen.background, "background intensity"));
    gd_opts.push_back(gen_cmd->add_option("--frac-train", gd_ft, "train fraction"));
    gd_opts.push_back(gen_cmd->add_option("--frac-val", gd_fv, "validation fraction"));
    gd_opts.push_back(gen_cmd->add_option("--frac-test", gd_fe, "test fraction"));
    auto* gd_split_opt = gen_cmd->add_option("--split-seed", gd_split_seed, "split shuffle seed");
    gd_opts.push_back(gd_split_opt);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train the joint denoiser");
    std::string tr_config, tr_data, tr_outdir;
    jd_train_config tr;
    jd_train_config_defaults(&tr);
    bool tr_f64 = false;
    train_cmd->add_option("--config", tr_config, "JSON config file");
    std::vector<const CLI::Option*> tr_opts;
    tr_opts.push_back(train_cmd->add_option("--data", tr_data, "dataset path"));
    tr_opts.push_back(train_cmd->add_option("--out-dir", tr_outdir, "output directory"));
    tr_opts.push_back(train_cmd->add_option("--seed", tr.seed, "training seed"));
    tr_opts.push_back(train_cmd->add_option("--timesteps", tr.timesteps, "diffusion steps T"));
    tr_opts.push_back(train_cmd->add_option("--beta-start", tr.beta_start, "linear schedule start"));
    tr_opts.push_back(train_cmd->add_option("--beta-end", tr.beta_end, "linear schedule end"));
    tr_opts.push_back(train_cmd->add_option("--width", tr.width, "base channel width"));
    tr_opts.push_back(train_cmd->add_option("--depth", tr.depth, "down/up stages"));
    tr_opts.push_back(train_cmd->add_option("--temb-dim", tr.temb_dim, "time embedding size"));
    tr_opts.push_back(train_cmd->add_option("--epochs", tr.epochs, "training epochs"));
    tr_opts.push_back(train_cmd->add_option("--batch-size", tr.batch_size, "batch size"));
    tr_opts.push_back(train_cmd->add_option("--learning-rate", tr.learning_rate, "Adam step size"));
    tr_opts.push_back(
        train_cmd->add_option("--lr-final-factor", tr.lr_final_factor, "cosine decay floor fraction"));
    tr_opts.push_back(train_cmd->add_option("--lambda-image", tr.lambda_image, "image loss weight"));
    tr_opts.push_back(train_cmd->add_option("--val-draws", tr.val_draws, "validation draws per record"));
    tr_opts.push_back(train_cmd->add_option("--threads", tr.threads, "worker threads (0 = auto)"));
    tr_opts.push_back(train_cmd->add_flag("--f64", tr_f64, "64-bit training arithmetic"));

    // ---- sample ----
    auto* sample_cmd = app.add_subcommand("sample", "draw joint samples from a checkpoint");
    std::string sm_config, sm_ckpt, sm_outdir;
    int sm_n = 4;
    uint64_t sm_seed = 0;
    jd_sample_options sm_opts_v;
    jd_sample_options_defaults(&sm_opts_v);
    sample_cmd->add_option("--config", sm_config, "JSON config file");
    std::vector<const CLI::Option*> sm_opts;
    sm_opts.push_back(sample_cmd->add_option("--checkpoint", sm_ckpt, "checkpoint path"));
    sm_opts.push_back(sample_cmd->add_option("--out-dir", sm_outdir, "output directory"));
    sm_opts.push_back(sample_cmd->add_option("-n,--count", sm_n, "number of samples"));
    sm_opts.push_back(sample_cmd->add_option("--seed", sm_seed, "sampling seed"));
    sm_opts.push_back(sample_cmd->add_option("--steps", sm_opts_v.ddim_steps, "continuous DDIM steps"));
    sm_opts.push_back(
        sample_cmd->add_option("--discrete-steps", sm_opts_v.discrete_steps, "categorical jump steps"));

    // ---- infer-age ----
    auto* age_cmd = app.add_subcommand("infer-age", "zero-shot age regression on the test split");
    std::string ia_config, ia_ckpt, ia_data, ia_outdir, ia_known = "image";
    int ia_limit = 0, ia_samples = 3, ia_threads = 0;
    uint64_t ia_seed = 0;
    jd_sample_options ia_opts_v;
    jd_sample_options_defaults(&ia_opts_v);
    age_cmd->add_option("--config", ia_config, "JSON config file");
    std::vector<const CLI::Option*> ia_opts;
    ia_opts.push_back(age_cmd->add_option("--checkpoint", ia_ckpt, "checkpoint path"));
    ia_opts.push_back(age_cmd->add_option("--data", ia_data, "dataset path"));
    ia_opts.push_back(age_cmd->add_option("--out-dir", ia_outdir, "output directory"));
    ia_opts.push_back(age_cmd->add_option("--known", ia_known, "image|image+sex|sex|none"));
    ia_opts.push_back(age_cmd->add_option("--limit", ia_limit, "max test subjects (0 = all)"));
    ia_opts.push_back(age_cmd->add_option("--samples", ia_samples, "inference samples per subject"));
    ia_opts.push_back(age_cmd->add_option("--seed", ia_seed, "sampling seed"));
    ia_opts.push_back(age_cmd->add_option("--steps", ia_opts_v.ddim_steps, "continuous DDIM steps"));
    ia_opts.push_back(
        age_cmd->add_option("--discrete-steps", ia_opts_v.discrete_steps, "categorical jump steps"));
    ia_opts.push_back(age_cmd->add_option("--threads", ia_threads, "worker threads (0 = auto)"));

    // ---- infer-sex ----
    auto* sex_cmd = app.add_subcommand("infer-sex", "zero-shot sex classification on the test split");
    std::string is_config, is_ckpt, is_data, is_outdir, is_known = "image";
    int is_limit = 0, is_samples = 3, is_threads = 0;
    uint64_t is_seed = 0;
    jd_sample_options is_opts_v;
    jd_sample_options_defaults(&is_opts_v);
    sex_cmd->add_option("--config", is_config, "JSON config file");
    std::vector<const CLI::Option*> is_opts;
    is_opts.push_back(sex_cmd->add_option("--checkpoint", is_ckpt, "checkpoint path"));
    is_opts.push_back(sex_cmd->add_option("--data", is_data, "dataset path"));
    is_opts.push_back(sex_cmd->add_option("--out-dir", is_outdir, "output directory"));
    is_opts.push_back(sex_cmd->add_option("--known", is_known, "image|image+age"));
    is_opts.push_back(sex_cmd->add_option("--limit", is_limit, "max test subjects (0 = all)"));
    is_opts.push_back(sex_cmd->add_option("--samples", is_samples, "inference samples per subject"));
    is_opts.push_back(sex_cmd->add_option("--seed", is_seed, "sampling seed"));
    is_opts.push_back(sex_cmd->add_option("--steps", is_opts_v.ddim_steps, "continuous DDIM steps"));
    is_opts.push_back(
        sex_cmd->add_option("--discrete-steps", is_opts_v.discrete_steps, "categorical jump steps"));
    is_opts.push_back(sex_cmd->add_option("--threads", is_threads, "worker threads (0 = auto)"));

    // ---- inpaint ----
    auto* inp_cmd = app.add_subcommand("inpaint", "inpaint masked regions of test images");
    std::string ip_config, ip_ckpt, ip_data, ip_outdir, ip_mask = "left-half";
    int ip_count = 3, ip_samples = 4;
    uint64_t ip_seed = 0;
    jd_sample_options ip_opts_v;
    jd_sample_options_defaults(&ip_opts_v);
    inp_cmd->add_option("--config", ip_config, "JSON config file");
    std::vector<const CLI::Option*> ip_opts;
    ip_opts.push_back(inp_cmd->add_option("--checkpoint", ip_ckpt, "checkpoint path"));
    ip_opts.push_back(inp_cmd->add_option("--data", ip_data, "dataset path"));
    ip_opts.push_back(inp_cmd->add_option("--out-dir", ip_outdir, "output directory"));
    ip_opts.push_back(
        inp_cmd->add_option("--mask", ip_mask, "left-half|right-half|top-half|bottom-half"));
    ip_opts.push_back(inp_cmd->add_option("--count", ip_count, "number of test inputs"));
    ip_opts.push_back(inp_cmd->add_option("--samples", ip_samples, "completions per input"));
    ip_opts.push_back(inp_cmd->add_option("--seed", ip_seed, "sampling seed"));
    ip_opts.push_back(inp_cmd->add_option("--steps", ip_opts_v.ddim_steps, "continuous DDIM steps"));
    ip_opts.push_back(
        inp_cmd->add_option("--discrete-steps", ip_opts_v.discrete_steps, "categorical jump steps"));

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "compute metrics from saved predictions");
    std::string ev_pred, ev_kind = "regression", ev_outdir;
    eval_cmd->add_option("--predictions", ev_pred, "predictions.tsv path")->required();
    eval_cmd->add_option("--kind", ev_kind, "regression|classification");
    eval_cmd->add_option("--out-dir", ev_outdir, "optional output directory");

    // ---- check ----
    app.add_subcommand("check", "run the oracle/property self-check suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_cmd->parsed())
            return cmd_gen_data(gd_config, gd_out, gd_subjects, gd_seed, gd_gen, gd_ft, gd_fv, gd_fe,
                                gd_split_seed, gd_split_opt->count() > 0, gd_opts);

        if (train_cmd->parsed()) {
            static const std::set<std::string> allowed = {
                "data",       "out_dir",   "seed",        "timesteps",  "beta_start",
                "beta_end",   "width",     "depth",       "temb_dim",   "epochs",
                "batch_size", "learning_rate", "lr_final_factor", "lambda_image", "val_draws",
                "threads",    "f64"};
            json cfg = json::object();
            if (!tr_config.empty()) cfg = tools::load_config_file(tr_config, allowed);
            size_t k = 0;
            merge_option(cfg, "data", tr_data, tr_opts[k++]);
            merge_option(cfg, "out_dir", tr_outdir, tr_opts[k++]);
            merge_option(cfg, "seed", tr.seed, tr_opts[k++]);
            merge_option(cfg, "timesteps", tr.timesteps, tr_opts[k++]);
            merge_option(cfg, "beta_start", tr.beta_start, tr_opts[k++]);
            merge_option(cfg, "beta_end", tr.beta_end, tr_opts[k++]);
            merge_option(cfg, "width", tr.width, tr_opts[k++]);
            merge_option(cfg, "depth", tr.depth, tr_opts[k++]);
            merge_option(cfg, "temb_dim", tr.temb_dim, tr_opts[k++]);
            merge_option(cfg, "epochs", tr.epochs, tr_opts[k++]);
            merge_option(cfg, "batch_size", tr.batch_size, tr_opts[k++]);
            merge_option(cfg, "learning_rate", tr.learning_rate, tr_opts[k++]);
            merge_option(cfg, "lr_final_factor", tr.lr_final_factor, tr_opts[k++]);
            merge_option(cfg, "lambda_image", tr.lambda_image, tr_opts[k++]);
            merge_option(cfg, "val_draws", tr.val_draws, tr_opts[k++]);
            merge_option(cfg, "threads", tr.threads, tr_opts[k++]);
            merge_option(cfg, "f64", tr_f64, tr_opts[k++]);
            tr.use_f64 = tr_f64 ? 1 : 0;
            if (tr_data.empty() || tr_outdir.empty()) die("train: --data and --out-dir are required");

            tools::ensure_directory(tr_outdir);
            jd_dataset* ds = nullptr;
            check(jd_dataset_load(tr_data.c_str(), &ds), "loading dataset");

            LossLog log;
            log.file = std::fopen((tr_outdir + "/loss_log.tsv").c_str(), "w");
            if (!log.file) die("train: cannot open loss log");
            std::fprintf(log.file, "epoch\ttrain_loss\tval_loss\timage_mse\tage_mse\tsex_ce\n");

            jd_model* model = nullptr;
            const jd_status st = jd_train(ds, &tr, LossLog::callback, &log, &model);
            std::fclose(log.file);
            if (st != JD_OK) die("training", st);
            check(jd_model_save(model, (tr_outdir + "/checkpoint.jdif").c_str()), "saving checkpoint");

            std::vector<char> desc(jd_model_describe(model, nullptr, 0) + 1);
            jd_model_describe(model, desc.data(), desc.size());
            std::printf("checkpoint: %s/checkpoint.jdif\n%s\n", tr_outdir.c_str(), desc.data());

            const json resolved = {{"data", tr_data},
                                   {"out_dir", tr_outdir},
                                   {"seed", tr.seed},
                                   {"timesteps", tr.timesteps},
                                   {"beta_start", tr.beta_start},
                                   {"beta_end", tr.beta_end},
                                   {"width", tr.width},
                                   {"depth", tr.depth},
                                   {"temb_dim", tr.temb_dim},
                                   {"epochs", tr.epochs},
                                   {"batch_size", tr.batch_size},
                                   {"learning_rate", tr.learning_rate},
                                   {"lr_final_factor", tr.lr_final_factor},
                                   {"lambda_image", tr.lambda_image},
                                   {"val_draws", tr.val_draws},
                                   {"threads", tr.threads},
                                   {"f64", tr_f64}};
            tools::echo_config(resolved, tr_outdir + "/config.json");
            jd_model_free(model);
            jd_dataset_free(ds);
            return 0;
        }

        if (sample_cmd->parsed()) {
            static const std::set<std::string> allowed = {"checkpoint", "out_dir", "count",
                                                          "seed",       "steps",   "discrete_steps"};
            json cfg = json::object();
            if (!sm_config.empty()) cfg = tools::load_config_file(sm_config, allowed);
            size_t k = 0;
            merge_option(cfg, "checkpoint", sm_ckpt, sm_opts[k++]);
            merge_option(cfg, "out_dir", sm_outdir, sm_opts[k++]);
            merge_option(cfg, "count", sm_n, sm_opts[k++]);
            merge_option(cfg, "seed", sm_seed, sm_opts[k++]);
            merge_option(cfg, "steps", sm_opts_v.ddim_steps, sm_opts[k++]);
            merge_option(cfg, "discrete_steps", sm_opts_v.discrete_steps, sm_opts[k++]);
            if (sm_ckpt.empty() || sm_outdir.empty()) die("sample: --checkpoint and --out-dir are required");

            tools::ensure_directory(sm_outdir);
            jd_model* model = nullptr;
            check(jd_model_load(sm_ckpt.c_str(), &model), "loading checkpoint");
            const int side = jd_model_side(model);
            std::ofstream table(sm_outdir + "/samples.tsv");
            table << "index\tage\tsex\n";
            std::vector<float> image(static_cast<size_t>(side) * side);
            for (int i = 0; i < sm_n; ++i) {
                jd_record rec;
                rec.image = image.data();
                check(jd_sample(model, nullptr, &sm_opts_v, sm_seed + static_cast<uint64_t>(i), &rec),
                      "sampling");
                char name[64];
                std::snprintf(name, sizeof(name), "/sample_%03d.pgm", i);
                tools::write_pgm(image, side, side, sm_outdir + name);
                table << i << "\t" << rec.age << "\t" << rec.sex << "\n";
            }
            table.close();
            std::printf("wrote %d samples to %s\n", sm_n, sm_outdir.c_str());
            const json resolved = {{"checkpoint", sm_ckpt}, {"out_dir", sm_outdir},
                                   {"count", sm_n},         {"seed", sm_seed},
                                   {"steps", sm_opts_v.ddim_steps},
                                   {"discrete_steps", sm_opts_v.discrete_steps}};
            tools::echo_config(resolved, sm_outdir + "/config.json");
            jd_model_free(model);
            return 0;
        }

        if (age_cmd->parsed()) {
            static const std::set<std::string> allowed = {
                "checkpoint", "data",  "out_dir", "known",          "limit",  "samples",
                "seed",       "steps", "discrete_steps", "threads"};
            json cfg = json::object();
            if (!ia_config.empty()) cfg = tools::load_config_file(ia_config, allowed);
            size_t k = 0;
            merge_option(cfg, "checkpoint", ia_ckpt, ia_opts[k++]);
            merge_option(cfg, "data", ia_data, ia_opts[k++]);
            merge_option(cfg, "out_dir", ia_outdir, ia_opts[k++]);
            merge_option(cfg, "known", ia_known, ia_opts[k++]);
            merge_option(cfg, "limit", ia_limit, ia_opts[k++]);
            merge_option(cfg, "samples", ia_samples, ia_opts[k++]);
            merge_option(cfg, "seed", ia_seed, ia_opts[k++]);
            merge_option(cfg, "steps", ia_opts_v.ddim_steps, ia_opts[k++]);
            merge_option(cfg, "discrete_steps", ia_opts_v.discrete_steps, ia_opts[k++]);
            merge_option(cfg, "threads", ia_threads, ia_opts[k++]);
            if (ia_ckpt.empty() || ia_data.empty() || ia_outdir.empty())
                die("infer-age: --checkpoint, --data and --out-dir are required");
            const bool know_image = ia_known == "image" || ia_known == "image+sex";
            const bool know_sex = ia_known == "image+sex" || ia_known == "sex";
            if (!know_image && !know_sex && ia_known != "none")
                die("infer-age: --known must be image|image+sex|sex|none");

            tools::ensure_directory(ia_outdir);
            jd_model* model = nullptr;
            check(jd_model_load(ia_ckpt.c_str(), &model), "loading checkpoint");
            jd_dataset* ds = nullptr;
            check(jd_dataset_load(ia_data.c_str(), &ds), "loading dataset");
            const auto records = collect_split(ds, 2, ia_limit);
            if (records.empty()) die("infer-age: empty test split");

            const int threads =
                ia_threads > 0 ? ia_threads : static_cast<int>(std::thread::hardware_concurrency());
            std::vector<jd_age_estimate> estimates(records.size());
            std::atomic<int> failed{0};
            parallel_indices(static_cast<int>(records.size()), threads, [&](int i) {
                const TestRecord& r = records[static_cast<size_t>(i)];
                const int32_t sex = r.sex;
                const jd_status st = jd_estimate_age(
                    model, know_image ? r.image.data() : nullptr, know_sex ? &sex : nullptr, &ia_opts_v,
                    ia_samples, ia_seed + static_cast<uint64_t>(r.subject_id), &estimates[static_cast<size_t>(i)]);
                if (st != JD_OK) failed.store(1);
            });
            if (failed.load()) die("infer-age: estimation failed: " + std::string(jd_last_error()));

            std::ofstream pred(ia_outdir + "/predictions.tsv");
            pred << "subject\ttrue_age\testimate\tsample_variance";
            for (int s = 0; s < ia_samples; ++s) pred << "\ts" << s;
            pred << "\n";
            std::vector<double> est_v, true_v, var_v;
            for (size_t i = 0; i < records.size(); ++i) {
                const auto& e = estimates[i];
                pred << records[i].subject_id << "\t" << records[i].age << "\t" << e.estimate << "\t"
                     << e.sample_variance;
                for (int s = 0; s < e.num_samples; ++s) pred << "\t" << e.samples[s];
                pred << "\n";
                est_v.push_back(e.estimate);
                true_v.push_back(records[i].age);
                var_v.push_back(e.sample_variance);
            }
            pred.close();

            const auto rep = tools::regression_metrics(est_v, true_v, &var_v);
            const std::string row = rep.table_row("(" + ia_known + ")");
            std::printf("%s\n", row.c_str());
            std::ofstream metrics(ia_outdir + "/metrics.txt");
            metrics << row << "\n";
            metrics.close();

            const json resolved = {{"checkpoint", ia_ckpt}, {"data", ia_data},
                                   {"out_dir", ia_outdir},  {"known", ia_known},
                                   {"limit", ia_limit},     {"samples", ia_samples},
                                   {"seed", ia_seed},       {"steps", ia_opts_v.ddim_steps},
                                   {"discrete_steps", ia_opts_v.discrete_steps},
                                   {"threads", ia_threads}};
            tools::echo_config(resolved, ia_outdir + "/config.json");
            jd_model_free(model);
            jd_dataset_free(ds);
            return 0;
        }

        if (sex_cmd->parsed()) {
            static const std::set<std::string> allowed = {
                "checkpoint", "data",  "out_dir", "known",          "limit",  "samples",
                "seed",       "steps", "discrete_steps", "threads"};
            json cfg = json::object();
            if (!is_config.empty()) cfg = tools::load_config_file(is_config, allowed);
            size_t k = 0;
            merge_option(cfg, "checkpoint", is_ckpt, is_opts[k++]);
            merge_option(cfg, "data", is_data, is_opts[k++]);
            merge_option(cfg, "out_dir", is_outdir, is_opts[k++]);
            merge_option(cfg, "known", is_known, is_opts[k++]);
            merge_option(cfg, "limit", is_limit, is_opts[k++]);
            merge_option(cfg, "samples", is_samples, is_opts[k++]);
            merge_option(cfg, "seed", is_seed, is_opts[k++]);
            merge_option(cfg, "steps", is_opts_v.ddim_steps, is_opts[k++]);
            merge_option(cfg, "discrete_steps", is_opts_v.discrete_steps, is_opts[k++]);
            merge_option(cfg, "threads", is_threads, is_opts[k++]);
            if (is_ckpt.empty() || is_data.empty() || is_outdir.empty())
                die("infer-sex: --checkpoint, --data and --out-dir are required");
            if (is_known != "image" && is_known != "image+age")
                die("infer-sex: --known must be image|image+age");
            const bool know_age = is_known == "image+age";

            tools::ensure_directory(is_outdir);
            jd_model* model = nullptr;
            check(jd_model_load(is_ckpt.c_str(), &model), "loading checkpoint");
            jd_dataset* ds = nullptr;
            check(jd_dataset_load(is_data.c_str(), &ds), "loading dataset");
            const auto records = collect_split(ds, 2, is_limit);
            if (records.empty()) die("infer-sex: empty test split");

            const int threads =
                is_threads > 0 ? is_threads : static_cast<int>(std::thread::hardware_concurrency());
            std::vector<jd_sex_prediction> preds(records.size());
            std::atomic<int> failed{0};
            parallel_indices(static_cast<int>(records.size()), threads, [&](int i) {
                const TestRecord& r = records[static_cast<size_t>(i)];
                const double age = r.age;
                const jd_status st =
                    jd_predict_sex(model, r.image.data(), know_age ? &age : nullptr, &is_opts_v,
                                   is_samples, is_seed + static_cast<uint64_t>(r.subject_id),
                                   &preds[static_cast<size_t>(i)]);
                if (st != JD_OK) failed.store(1);
            });
            if (failed.load()) die("infer-sex: prediction failed: " + std::string(jd_last_error()));

            std::ofstream pred(is_outdir + "/predictions.tsv");
            pred << "subject\ttrue_sex\tpredicted";
            for (int s = 0; s < is_samples; ++s) pred << "\tv" << s;
            pred << "\n";
            std::vector<int> pred_v, true_v;
            for (size_t i = 0; i < records.size(); ++i) {
                pred << records[i].subject_id << "\t" << records[i].sex << "\t" << preds[i].predicted;
                for (int s = 0; s < preds[i].num_samples; ++s) pred << "\t" << preds[i].votes[s];
                pred << "\n";
                pred_v.push_back(preds[i].predicted);
                true_v.push_back(records[i].sex);
            }
            pred.close();

            const auto rep = tools::classification_metrics(pred_v, true_v);
            const std::string row = rep.table_row("(" + is_known + ")");
            std::printf("%s\n", row.c_str());
            std::ofstream metrics(is_outdir + "/metrics.txt");
            metrics << row << "\n";
            metrics.close();

            const json resolved = {{"checkpoint", is_ckpt}, {"data", is_data},
                                   {"out_dir", is_outdir},  {"known", is_known},
                                   {"limit", is_limit},     {"samples", is_samples},
                                   {"seed", is_seed},       {"steps", is_opts_v.ddim_steps},
                                   {"discrete_steps", is_opts_v.discrete_steps},
                                   {"threads", is_threads}};
            tools::echo_config(resolved, is_outdir + "/config.json");
            jd_model_free(model);
            jd_dataset_free(ds);
            return 0;
        }

        if (inp_cmd->parsed()) {
            static const std::set<std::string> allowed = {"checkpoint", "data",    "out_dir",
                                                          "mask",       "count",   "samples",
                                                          "seed",       "steps",   "discrete_steps"};
            json cfg = json::object();
            if (!ip_config.empty()) cfg = tools::load_config_file(ip_config, allowed);
            size_t k = 0;
            merge_option(cfg, "checkpoint", ip_ckpt, ip_opts[k++]);
            merge_option(cfg, "data", ip_data, ip_opts[k++]);
            merge_option(cfg, "out_dir", ip_outdir, ip_opts[k++]);
            merge_option(cfg, "mask", ip_mask, ip_opts[k++]);
            merge_option(cfg, "count", ip_count, ip_opts[k++]);
            merge_option(cfg, "samples", ip_samples, ip_opts[k++]);
            merge_option(cfg, "seed", ip_seed, ip_opts[k++]);
            merge_option(cfg, "steps", ip_opts_v.ddim_steps, ip_opts[k++]);
            merge_option(cfg, "discrete_steps", ip_opts_v.discrete_steps, ip_opts[k++]);
            if (ip_ckpt.empty() || ip_data.empty() || ip_outdir.empty())
                die("inpaint: --checkpoint, --data and --out-dir are required");

            tools::ensure_directory(ip_outdir);
            jd_model* model = nullptr;
            check(jd_model_load(ip_ckpt.c_str(), &model), "loading checkpoint");
            jd_dataset* ds = nullptr;
            check(jd_dataset_load(ip_data.c_str(), &ds), "loading dataset");
            const int side = jd_model_side(model);
            const size_t pixels = static_cast<size_t>(side) * side;
            std::vector<uint8_t> mask(pixels, 0);
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    bool known = false;
                    if (ip_mask == "left-half") known = x < side / 2;
                    else if (ip_mask == "right-half") known = x >= side / 2;
                    else if (ip_mask == "top-half") known = y < side / 2;
                    else if (ip_mask == "bottom-half") known = y >= side / 2;
                    else die("inpaint: unknown mask '" + ip_mask + "'");
                    mask[static_cast<size_t>(y) * side + x] = known ? 1 : 0;
                }

            const auto records = collect_split(ds, 2, ip_count);
            if (records.empty()) die("inpaint: empty test split");
            std::vector<float> out_image(pixels);
            for (size_t i = 0; i < records.size(); ++i) {
                char name[64];
                std::snprintf(name, sizeof(name), "/input_%02zu.pgm", i);
                tools::write_pgm(records[i].image, side, side, ip_outdir + name);
                jd_conditioning cond{};
                cond.image_mask = mask.data();
                cond.image = records[i].image.data();
                for (int s = 0; s < ip_samples; ++s) {
                    jd_record rec;
                    rec.image = out_image.data();
                    check(jd_sample(model, &cond, &ip_opts_v,
                                    ip_seed + static_cast<uint64_t>(i) * 1000 + static_cast<uint64_t>(s), &rec),
                          "inpainting");
                    std::snprintf(name, sizeof(name), "/inpaint_%02zu_%d.pgm", i, s);
                    tools::write_pgm(out_image, side, side, ip_outdir + name);
                }
            }
            std::printf("wrote %zu inputs x %d completions to %s\n", records.size(), ip_samples,
                        ip_outdir.c_str());
            const json resolved = {{"checkpoint", ip_ckpt}, {"data", ip_data},
                                   {"out_dir", ip_outdir},  {"mask", ip_mask},
                                   {"count", ip_count},     {"samples", ip_samples},
                                   {"seed", ip_seed},       {"steps", ip_opts_v.ddim_steps},
                                   {"discrete_steps", ip_opts_v.discrete_steps}};
            tools::echo_config(resolved, ip_outdir + "/config.json");
            jd_model_free(model);
            jd_dataset_free(ds);
            return 0;
        }

        if (eval_cmd->parsed()) {
            std::ifstream is(ev_pred);
            if (!is) die("eval: cannot open " + ev_pred);
            std::string line;
            std::getline(is, line);  // header
            std::vector<double> est, tru_d;
            std::vector<int> pred_i, tru_i;
            std::vector<double> variances;
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                std::vector<std::string> cols;
                size_t pos = 0;
                while (pos <= line.size()) {
                    const size_t tab = line.find('\t', pos);
                    cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
                    if (tab == std::string::npos) break;
                    pos = tab + 1;
                }
                if (cols.size() < 3) die("eval: malformed row in " + ev_pred);
                if (ev_kind == "regression") {
                    tru_d.push_back(std::stod(cols[1]));
                    est.push_back(std::stod(cols[2]));
                    if (cols.size() > 3) variances.push_back(std::stod(cols[3]));
                } else {
                    tru_i.push_back(std::stoi(cols[1]));
                    pred_i.push_back(std::stoi(cols[2]));
                }
            }
            std::string row;
            if (ev_kind == "regression") {
                const auto rep = tools::regression_metrics(
                    est, tru_d, variances.size() == est.size() ? &variances : nullptr);
                row = rep.table_row("(saved)");
            } else if (ev_kind == "classification") {
                const auto rep = tools::classification_metrics(pred_i, tru_i);
                row = rep.table_row("(saved)");
            } else {
                die("eval: --kind must be regression|classification");
            }
            std::printf("%s\n", row.c_str());
            if (!ev_outdir.empty()) {
                tools::ensure_directory(ev_outdir);
                std::ofstream metrics(ev_outdir + "/metrics.txt");
                metrics << row << "\n";
            }
            return 0;
        }

        // check
        struct CheckState {
            bool all = true;
        } state;
        const jd_status st = jd_self_check(
            [](void* user, const char* property, int32_t passed, const char* detail) {
                auto* s = static_cast<CheckState*>(user);
                if (!passed) s->all = false;
                std::printf("%s %s — %s\n", passed ? "PASS" : "FAIL", property, detail);
            },
            &state);
        if (st != JD_OK || !state.all) {
            std::fprintf(stderr, "error: check: one or more properties failed\n");
            return 5;
        }
        std::printf("all properties passed\n");
        return 0;
    } catch (const std::exception& e) {
        die(e.what());
    }
}
