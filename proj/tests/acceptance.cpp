// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line each. Returns nonzero if any criterion fails.
//
// The trained model used by criteria 5-9 is cached next to the binary so
// re-runs skip the training phase; set JD_ACCEPTANCE_FRESH=1 to retrain.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "core/sampler.hpp"
#include "core/selfcheck.hpp"
#include "core/trainer.hpp"
#include "support/metrics.hpp"

using namespace jointdiff;

namespace {

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
    double seconds;
};

std::vector<Outcome> g_outcomes;

template <typename Fn>
void run_criterion(int id, const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out{id, name, false, "", 0.0};
    try {
        std::ostringstream detail;
        out.pass = fn(detail);
        out.detail = detail.str();
    } catch (const std::exception& e) {
        out.pass = false;
        out.detail = std::string("exception: ") + e.what();
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  criterion %2d: %-28s  [%6.1fs]  %s\n", out.pass ? "PASS" : "FAIL", id,
                name.c_str(), out.seconds, out.detail.c_str());
    std::fflush(stdout);
    g_outcomes.push_back(std::move(out));
}

// ---- shared trained artifacts (criteria 5-9) ----

constexpr uint64_t kDataSeed = 20240901;
constexpr uint64_t kTrainSeed = 11;
constexpr int kAcceptanceEpochs = 24;
constexpr int kInferenceSamples = 3;
constexpr int kEvalSubjects = 100;

struct TrainedArtifacts {
    Dataset dataset;
    Checkpoint checkpoint;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    double train_seconds = 0.0;
};

TrainConfig acceptance_train_config() {
    TrainConfig tc;  // T = 1000, width 32, depth 2, temb 64, batch 32, Adam 1e-3
    tc.epochs = kAcceptanceEpochs;
    tc.threads = 2;
    tc.seed = kTrainSeed;
    return tc;
}

Dataset acceptance_dataset() {
    Dataset ds = generate_dataset(2000, GeneratorConfig{}, kDataSeed);
    split_dataset(ds, {0.89, 0.01, 0.10}, kDataSeed);
    return ds;
}

TrainedArtifacts& artifacts() {
    static TrainedArtifacts art = [] {
        TrainedArtifacts out;
        out.dataset = acceptance_dataset();
        const std::string cache = "acceptance_model.jdif";
        const std::string meta = "acceptance_model.meta";
        const std::string key = "v1 epochs=" + std::to_string(kAcceptanceEpochs) +
                                " seed=" + std::to_string(kTrainSeed) +
                                " data=" + std::to_string(kDataSeed);
        const bool fresh = std::getenv("JD_ACCEPTANCE_FRESH") != nullptr;
        if (!fresh && std::filesystem::exists(cache) && std::filesystem::exists(meta)) {
            std::ifstream ms(meta);
            std::string stored_key;
            std::getline(ms, stored_key);
            ms >> out.initial_val_loss >> out.final_val_loss >> out.train_seconds;
            if (stored_key == key) {
                out.checkpoint = load_checkpoint(cache);
                std::printf("  (reusing cached acceptance model: %s)\n", key.c_str());
                return out;
            }
        }
        std::printf("  (training acceptance model: %s)\n", key.c_str());
        std::fflush(stdout);
        const auto t0 = std::chrono::steady_clock::now();
        double initial = 0.0, last = 0.0;
        out.checkpoint = train(out.dataset, acceptance_train_config(), [&](const EpochStats& s) {
            if (s.epoch == 0) initial = s.val_loss;
            last = s.val_loss;
            std::printf("    epoch %2d  train %8.4f  val %8.4f\n", s.epoch, s.train_loss, s.val_loss);
            std::fflush(stdout);
        });
        out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.initial_val_loss = initial;
        out.final_val_loss = last;
        save_checkpoint(out.checkpoint, cache);
        std::ofstream ms(meta);
        ms << key << "\n" << initial << " " << last << " " << out.train_seconds << "\n";
        return out;
    }();
    return art;
}

std::vector<const DatasetRecord*> test_records(const Dataset& ds, int limit) {
    auto all = ds.split_records(Split::test);
    if (static_cast<int>(all.size()) > limit) all.resize(static_cast<size_t>(limit));
    return all;
}

struct ConditioningResult {
    tools::RegressionReport report;
};

ConditioningResult eval_age_conditioning(const ModelRuntime& model, const SamplerPlan& plan,
                                         const std::vector<const DatasetRecord*>& records,
                                         bool know_image, bool know_sex, uint64_t seed_base) {
    std::vector<double> estimates(records.size()), targets(records.size()), variances(records.size());
    detail::parallel_for(static_cast<int>(records.size()), 2, [&](int i) {
        const auto& rec = records[static_cast<size_t>(i)]->rec;
        const int sex = rec.sex;
        const AgeEstimate est =
            estimate_age(model, know_image ? &rec.image : nullptr, know_sex ? &sex : nullptr, plan,
                         kInferenceSamples, seed_base + static_cast<uint64_t>(i));
        estimates[static_cast<size_t>(i)] = est.estimate;
        targets[static_cast<size_t>(i)] = rec.age;
        variances[static_cast<size_t>(i)] = est.sample_variance;
    });
    return ConditioningResult{tools::regression_metrics(estimates, targets, &variances)};
}

// ---- criteria ----

bool criterion_schedule_algebra(std::ostringstream& detail) {
    const GaussianSchedule gs = linear_beta_schedule(1000, 1e-4, 0.02);
    double rec_err = 0.0;
    for (int t = 1; t <= gs.T; ++t)
        rec_err = std::max(rec_err, std::abs(gs.alpha_bars[static_cast<size_t>(t)] -
                                             gs.alpha_bars[static_cast<size_t>(t - 1)] *
                                                 (1.0 - gs.betas[static_cast<size_t>(t - 1)])));
    const DiscreteSchedule ds = cosine_discrete_schedule(1000, 2);
    double row_err = 0.0;
    for (int t = 1; t <= ds.T; ++t)
        for (int i = 0; i < 2; ++i) {
            double rq = 0.0, rb = 0.0;
            for (int j = 0; j < 2; ++j) {
                rq += ds.q(t)(i, j);
                rb += ds.q_bar(t)(i, j);
            }
            row_err = std::max({row_err, std::abs(rq - 1.0), std::abs(rb - 1.0)});
        }
    double terminal = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) terminal = std::max(terminal, std::abs(ds.q_bar(1000)(i, j) - 0.5));
    detail << "recurrence " << rec_err << " (<=1e-12), rows " << row_err << " (<=1e-10), terminal "
           << terminal << " (<=0.05)";
    return rec_err <= 1e-12 && row_err <= 1e-10 && terminal <= 0.05;
}

bool criterion_gaussian_marginals(std::ostringstream& detail) {
    const GaussianSchedule gs = linear_beta_schedule(1000, 1e-4, 0.02);
    const double x0 = 0.8;
    const int n = 100000;
    double worst_sigma = 0.0;
    for (int t : {1, 250, 500, 1000}) {
        double sum = 0.0, sumsq = 0.0;
        detail::parallel_for(2, 2, [&](int half) {
            double s = 0.0, s2 = 0.0;
            const int lo = half * (n / 2), hi = lo + n / 2;
            for (int i = lo; i < hi; ++i) {
                Rng rng(derive_seed(555, Rstream::sample, static_cast<uint64_t>(t), static_cast<uint64_t>(i)));
                double x = x0;
                for (int step = 1; step <= t; ++step)
                    x = std::sqrt(1.0 - gs.beta(step)) * x + std::sqrt(gs.beta(step)) * rng.normal();
                s += x;
                s2 += x * x;
            }
            static std::mutex mu;
            std::lock_guard<std::mutex> lock(mu);
            sum += s;
            sumsq += s2;
        });
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        const double m_expect = std::sqrt(gs.alpha_bar(t)) * x0;
        const double v_expect = 1.0 - gs.alpha_bar(t);
        const double m_se = std::sqrt(v_expect / n) + 1e-15;
        const double v_se = v_expect * std::sqrt(2.0 / (n - 1.0)) + 1e-15;
        worst_sigma = std::max({worst_sigma, std::abs(mean - m_expect) / m_se,
                                std::abs(var - v_expect) / v_se});
    }
    detail << "worst deviation " << worst_sigma << " MC standard errors (<=3)";
    return worst_sigma <= 3.0;
}

bool criterion_discrete_bruteforce(std::ostringstream& detail) {
    double max_err = 0.0;
    for (const auto& r : run_self_check())
        if (r.name == "d3pm-brute-force" && !r.passed) {
            detail << r.detail;
            return false;
        }
    // jump-composition identity: hard x0 (any K) plus soft x0 for K=2
    for (int K : {2, 3}) {
        DiscreteSchedule d;
        d.T = 4;
        d.K = K;
        d.betas = {0.35, 0.2, 0.55, 0.15};
        d.Q_bar.push_back(MatK::identity(K));
        for (double b : d.betas) {
            d.Q.push_back(uniform_transition(b, K));
            d.Q_bar.push_back(d.Q_bar.back().mul(d.Q.back()));
        }
        std::vector<OneHot> x0_set;
        for (int a = 0; a < K; ++a) x0_set.push_back(OneHot::hard(a, K));
        if (K == 2) x0_set.push_back(OneHot::soft({0.3, 0.7}));
        for (int t = 2; t <= 4; ++t)
            for (int t_prev = 0; t_prev < t - 1; ++t_prev)
                for (int t_m = t_prev + 1; t_m < t; ++t_m)
                    for (int c = 0; c < K; ++c)
                        for (const OneHot& x0 : x0_set) {
                            const OneHot direct = d3pm_posterior(OneHot::hard(c, K), x0, t, t_prev, d);
                            const OneHot mid = d3pm_posterior(OneHot::hard(c, K), x0, t, t_m, d);
                            std::vector<double> mixed(static_cast<size_t>(K), 0.0);
                            for (int m = 0; m < K; ++m) {
                                const OneHot leg = d3pm_posterior(OneHot::hard(m, K), x0, t_m, t_prev, d);
                                for (int j = 0; j < K; ++j)
                                    mixed[static_cast<size_t>(j)] +=
                                        mid.p[static_cast<size_t>(m)] * leg.p[static_cast<size_t>(j)];
                            }
                            for (int j = 0; j < K; ++j)
                                max_err = std::max(max_err, std::abs(mixed[static_cast<size_t>(j)] -
                                                                     direct.p[static_cast<size_t>(j)]));
                        }
    }
    detail << "enumeration exact, jump composition err " << max_err << " (<=1e-9)";
    return max_err <= 1e-9;
}

bool criterion_gradients(std::ostringstream& detail) {
    double worst = 0.0;
    std::string worst_name = "none";
    for (const auto& [name, err] : primitive_gradient_errors())
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    for (const auto& r : run_self_check())
        if (r.name == "gradcheck-denoiser-loss") {
            if (!r.passed) {
                detail << r.detail;
                return false;
            }
        }
    detail << "primitives worst " << worst << " at " << worst_name << "; denoiser loss graph passes (<1e-4)";
    return worst < 1e-4;
}

bool criterion_training(std::ostringstream& detail) {
    const TrainedArtifacts& art = artifacts();
    const bool converged = art.final_val_loss <= 0.5 * art.initial_val_loss;

    // Determinism: two short runs of the identical pipeline must produce
    // byte-identical checkpoints.
    TrainConfig short_cfg = acceptance_train_config();
    short_cfg.epochs = 2;
    const Checkpoint a = train(art.dataset, short_cfg, nullptr);
    const Checkpoint b = train(art.dataset, short_cfg, nullptr);
    save_checkpoint(a, "acceptance_det_a.jdif");
    save_checkpoint(b, "acceptance_det_b.jdif");
    std::ifstream fa("acceptance_det_a.jdif", std::ios::binary), fb("acceptance_det_b.jdif", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    const bool deterministic = !bytes_a.empty() && bytes_a == bytes_b;
    std::filesystem::remove("acceptance_det_a.jdif");
    std::filesystem::remove("acceptance_det_b.jdif");

    detail << "val " << art.initial_val_loss << " -> " << art.final_val_loss << " (ratio "
           << art.final_val_loss / art.initial_val_loss << " <= 0.5); 2-epoch re-run byte-identical: "
           << (deterministic ? "yes" : "NO") << "; train time " << art.train_seconds << "s";
    return converged && deterministic;
}

bool criterion_regression(std::ostringstream& detail) {
    const TrainedArtifacts& art = artifacts();
    const ModelRuntime model(art.checkpoint);
    const SamplerPlan plan = build_plan(model.gaussian.T, 50, 20);
    const auto records = test_records(art.dataset, kEvalSubjects);

    // The image-known pair shares seed bases so the (I) vs (I,S) comparison
    // is across correlated trajectories.
    const auto img = eval_age_conditioning(model, plan, records, true, false, 1000);
    const auto img_sex = eval_age_conditioning(model, plan, records, true, true, 1000);
    const auto sex_only = eval_age_conditioning(model, plan, records, false, true, 3000);
    const auto none = eval_age_conditioning(model, plan, records, false, false, 4000);

    std::printf("    %s\n", img_sex.report.table_row("(I,S)").c_str());
    std::printf("    %s\n", img.report.table_row("(I)").c_str());
    std::printf("    %s\n", sex_only.report.table_row("(S)").c_str());
    std::printf("    %s\n", none.report.table_row("(none)").c_str());

    const bool image_gain = img.report.mae <= 0.4 * none.report.mae;
    const bool none_near_baseline = std::abs(none.report.mae - 17.5) <= 0.2 * 17.5;
    const bool sex_no_benefit =
        std::abs(img_sex.report.mae - img.report.mae) <= 0.15 * img.report.mae;
    const bool variance_ordered =
        none.report.mean_sample_variance >= 2.0 * img.report.mean_sample_variance &&
        sex_only.report.mean_sample_variance >= 2.0 * img.report.mean_sample_variance;

    detail << "MAE(I)=" << img.report.mae << " <=0.4*MAE(none)=" << 0.4 * none.report.mae << ": "
           << (image_gain ? "ok" : "NO") << "; MAE(none)=" << none.report.mae
           << " in 17.5+-20%: " << (none_near_baseline ? "ok" : "NO")
           << "; MAE(I,S)=" << img_sex.report.mae << " within 15% of MAE(I): "
           << (sex_no_benefit ? "ok" : "NO") << "; var " << none.report.mean_sample_variance
           << " >= 2*" << img.report.mean_sample_variance << ": " << (variance_ordered ? "ok" : "NO");
    return image_gain && none_near_baseline && sex_no_benefit && variance_ordered;
}

bool criterion_classification(std::ostringstream& detail) {
    const TrainedArtifacts& art = artifacts();
    const ModelRuntime model(art.checkpoint);
    const SamplerPlan plan = build_plan(model.gaussian.T, 50, 20);
    const auto records = test_records(art.dataset, kEvalSubjects);
    std::vector<int> predicted(records.size()), truth(records.size());
    detail::parallel_for(static_cast<int>(records.size()), 2, [&](int i) {
        const auto& rec = records[static_cast<size_t>(i)]->rec;
        const SexPrediction pred =
            predict_sex(model, rec.image, nullptr, plan, kInferenceSamples, 5000 + static_cast<uint64_t>(i));
        predicted[static_cast<size_t>(i)] = pred.predicted;
        truth[static_cast<size_t>(i)] = rec.sex;
    });
    const auto rep = tools::classification_metrics(predicted, truth);
    std::printf("    %s\n", rep.table_row("(I)").c_str());
    detail << "accuracy " << rep.accuracy << " (>=0.90, image known)";
    return rep.accuracy >= 0.90;
}

bool criterion_conditioning_exactness(std::ostringstream& detail) {
    const TrainedArtifacts& art = artifacts();
    const ModelRuntime model(art.checkpoint);
    const SamplerPlan plan = build_plan(model.gaussian.T, 50, 20);
    const auto& rec = art.dataset.split_records(Split::test).front()->rec;
    const int side = model.config.side;
    const size_t pixels = static_cast<size_t>(side) * side;

    // all-known mask returns the record exactly
    ConditioningMask all;
    all.image_mask.assign(pixels, 1);
    all.image_values.assign(rec.image.begin(), rec.image.end());
    all.age_known = true;
    all.age_value = encode_age(rec.age, model.age_range);
    all.sex_known = true;
    all.sex_value = rec.sex;
    const PatientRecord full = sample_conditional(model, all, plan, 71);
    bool exact = full.sex == rec.sex && full.age == decode_age(all.age_value, model.age_range);
    for (size_t i = 0; i < pixels; ++i) exact = exact && full.image[i] == rec.image[i];

    // all-unknown reproduces unconditional bit-for-bit
    const PatientRecord u = sample_unconditional(model, plan, 72);
    const PatientRecord m = sample_conditional(model, ConditioningMask{}, plan, 72);
    const bool uncond_match =
        u.age == m.age && u.sex == m.sex &&
        std::memcmp(u.image.data(), m.image.data(), sizeof(float) * pixels) == 0;

    // left-half inpainting preserves the known half exactly
    ConditioningMask half;
    half.image_mask.assign(pixels, 0);
    half.image_values.assign(pixels, 0.0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side / 2; ++x) {
            half.image_mask[static_cast<size_t>(y) * side + x] = 1;
            half.image_values[static_cast<size_t>(y) * side + x] = rec.image[static_cast<size_t>(y) * side + x];
        }
    const PatientRecord inpainted = sample_conditional(model, half, plan, 73);
    bool half_exact = true, right_in_range = true;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const size_t i = static_cast<size_t>(y) * side + x;
            if (x < side / 2)
                half_exact = half_exact && inpainted.image[i] == rec.image[i];
            else
                right_in_range = right_in_range && inpainted.image[i] >= -1.0f && inpainted.image[i] <= 1.0f;
        }

    detail << "all-known exact: " << (exact ? "yes" : "NO")
           << "; all-unknown == unconditional: " << (uncond_match ? "yes" : "NO")
           << "; left-half preserved: " << (half_exact ? "yes" : "NO")
           << "; free half in range: " << (right_in_range ? "yes" : "NO");
    return exact && uncond_match && half_exact && right_in_range;
}

bool criterion_unconditional_marginals(std::ostringstream& detail) {
    const TrainedArtifacts& art = artifacts();
    const ModelRuntime model(art.checkpoint);
    const SamplerPlan plan = build_plan(model.gaussian.T, 50, 20);
    const int n = 200;
    std::vector<double> ages(n);
    std::vector<int> sexes(n);
    detail::parallel_for(n, 2, [&](int i) {
        const PatientRecord r = sample_unconditional(model, plan, 9000 + static_cast<uint64_t>(i));
        ages[static_cast<size_t>(i)] = r.age;
        sexes[static_cast<size_t>(i)] = r.sex;
    });
    double mean_age = 0.0, frac0 = 0.0;
    for (int i = 0; i < n; ++i) {
        mean_age += ages[static_cast<size_t>(i)];
        frac0 += sexes[static_cast<size_t>(i)] == 0;
    }
    mean_age /= n;
    frac0 /= n;
    detail << "mean age " << mean_age << " (55+-5); class-0 fraction " << frac0 << " (0.5+-0.10)";
    return std::abs(mean_age - 55.0) <= 5.0 && std::abs(frac0 - 0.5) <= 0.10;
}

bool criterion_protocol_constants(std::ostringstream& detail) {
    const TrainConfig defaults;
    const SamplerPlan plan = build_plan(1000);
    const TrainedArtifacts& art = artifacts();
    const std::string header = art.checkpoint.describe();
    const bool ok = defaults.timesteps == 1000 && plan.continuous_steps() == 50 &&
                    plan.discrete_steps() == 20 && kInferenceSamples == 3 &&
                    header.find("\"T\":1000") != std::string::npos;
    detail << "T=" << defaults.timesteps << ", ddim steps=" << plan.continuous_steps()
           << ", discrete steps=" << plan.discrete_steps() << ", inference samples="
           << kInferenceSamples << "; checkpoint header echoes T";
    return ok;
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "schedule algebra", criterion_schedule_algebra);
    run_criterion(2, "gaussian marginals", criterion_gaussian_marginals);
    run_criterion(3, "discrete brute force", criterion_discrete_bruteforce);
    run_criterion(4, "gradient fidelity", criterion_gradients);
    run_criterion(5, "training convergence", criterion_training);
    run_criterion(6, "zero-shot regression", criterion_regression);
    run_criterion(7, "zero-shot classification", criterion_classification);
    run_criterion(8, "conditioning exactness", criterion_conditioning_exactness);
    run_criterion(9, "unconditional marginals", criterion_unconditional_marginals);
    run_criterion(10, "protocol constants", criterion_protocol_constants);

    int failed = 0;
    for (const auto& o : g_outcomes) failed += o.pass ? 0 : 1;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(g_outcomes.size()) - failed,
                g_outcomes.size());
    return failed == 0 ? 0 : 1;
}
