#include "core/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "core/autograd.hpp"
#include "core/categorical.hpp"
#include "core/denoiser.hpp"
#include "core/gaussian.hpp"
#include "core/joint.hpp"
#include "core/rng.hpp"
#include "core/schedule.hpp"

namespace jointdiff {

namespace {

using DVar = Tape<double>::Var;
using Builder = std::function<DVar(Tape<double>&, const std::vector<DVar>&)>;

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

CheckResult check_value(const std::string& name, double value, double tol) {
    std::ostringstream os;
    os << "max err " << value << " (tol " << tol << ")";
    return CheckResult{name, value < tol, os.str()};
}

// Exhaustive chain enumeration for p(z_{t_prev} = j | z_t, x0), independent
// of the cached cumulative products used by d3pm_posterior.
std::vector<double> enumerate_posterior(const DiscreteSchedule& ds, int zt_class, int x0_class,
                                        int t, int t_prev) {
    const int K = ds.K;
    std::vector<double> num(static_cast<size_t>(K), 0.0);
    std::vector<int> path(static_cast<size_t>(t) + 1, 0);
    path[0] = x0_class;
    std::function<void(int, double)> walk = [&](int step, double prob) {
        if (step == t) {
            if (path[static_cast<size_t>(t)] == zt_class) num[static_cast<size_t>(path[static_cast<size_t>(t_prev)])] += prob;
            return;
        }
        for (int j = 0; j < K; ++j) {
            path[static_cast<size_t>(step) + 1] = j;
            walk(step + 1, prob * ds.q(step + 1)(path[static_cast<size_t>(step)], j));
        }
    };
    walk(0, 1.0);
    double total = 0.0;
    for (double v : num) total += v;
    for (double& v : num) v /= total;
    return num;
}

CheckResult check_schedule_algebra() {
    const GaussianSchedule gs = linear_beta_schedule(1000, 1e-4, 0.02);
    double max_err = 0.0;
    for (int t = 1; t <= gs.T; ++t)
        max_err = std::max(max_err,
                           std::abs(gs.alpha_bars[static_cast<size_t>(t)] -
                                    gs.alpha_bars[static_cast<size_t>(t) - 1] * (1.0 - gs.betas[static_cast<size_t>(t) - 1])));
    const DiscreteSchedule ds = cosine_discrete_schedule(1000, 2);
    double max_row_err = 0.0;
    for (int t = 0; t <= ds.T; ++t) {
        const MatK& q = ds.q_bar(t);
        for (int i = 0; i < ds.K; ++i) {
            double row = 0.0;
            for (int j = 0; j < ds.K; ++j) row += q(i, j);
            max_row_err = std::max(max_row_err, std::abs(row - 1.0));
        }
    }
    double terminal = 0.0;
    const MatK& qT = ds.q_bar(ds.T);
    for (int i = 0; i < ds.K; ++i)
        for (int j = 0; j < ds.K; ++j) terminal = std::max(terminal, std::abs(qT(i, j) - 1.0 / ds.K));
    std::ostringstream os;
    os << "recurrence " << max_err << ", row sums " << max_row_err << ", terminal gap " << terminal;
    return CheckResult{"schedule-algebra", max_err < 1e-12 && max_row_err < 1e-10 && terminal < 0.05,
                       os.str()};
}

CheckResult check_d3pm_enumeration() {
    double max_err = 0.0;
    for (int K = 2; K <= 3; ++K) {
        const DiscreteSchedule ds = cosine_discrete_schedule(4, K);
        for (int t = 1; t <= 4; ++t)
            for (int t_prev = 0; t_prev < t; ++t_prev)
                for (int c = 0; c < K; ++c)
                    for (int a = 0; a < K; ++a) {
                        const OneHot post = d3pm_posterior(OneHot::hard(c, K), OneHot::hard(a, K), t,
                                                           t_prev, ds);
                        const auto ref = enumerate_posterior(ds, c, a, t, t_prev);
                        for (int j = 0; j < K; ++j)
                            max_err = std::max(max_err, std::abs(post.p[static_cast<size_t>(j)] - ref[static_cast<size_t>(j)]));
                    }
    }
    return check_value("d3pm-brute-force", max_err, 1e-9);
}

CheckResult check_gaussian_roundtrip() {
    const GaussianSchedule gs = linear_beta_schedule(100, 1e-3, 0.1);
    Rng rng(7);
    double max_err = 0.0;
    for (int t : {1, 25, 50, 100}) {
        std::vector<double> x0(16), eps(16);
        for (auto& v : x0) v = rng.normal();
        for (auto& v : eps) v = rng.normal();
        const auto xt = q_sample<double>(x0, t, eps, gs);
        const auto rec = predict_x0<double>(xt, eps, t, gs);
        for (size_t i = 0; i < x0.size(); ++i)
            max_err = std::max(max_err, std::abs(rec[i] - x0[i]) / std::max(1.0, std::abs(x0[i])));
    }
    return check_value("gaussian-roundtrip", max_err, 1e-10);
}

}  // namespace

std::vector<std::pair<std::string, double>> primitive_gradient_errors() {
    Rng rng(11);
    std::vector<std::pair<std::string, double>> out;
    auto run = [&](const std::string& name, const Builder& b, std::vector<Tensor<double>> params) {
        out.emplace_back(name, grad_check(b, std::move(params)));
    };

    const Tensor<double> a = random_tensor({3, 4, 4}, rng);
    const Tensor<double> b2 = random_tensor({3, 4, 4}, rng);

    run("add", [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.mean(tp.add(v[0], v[1])); },
        {a.clone(), b2.clone()});
    run("sub",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto d = tp.sub(v[0], v[1]);
            return tp.mean(tp.mul(d, d));
        },
        {a.clone(), b2.clone()});
    run("mul", [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.mean(tp.mul(v[0], v[1])); },
        {a.clone(), b2.clone()});
    run("scale",
        [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.mean(tp.scale(v[0], 1.7)); },
        {a.clone()});
    run("silu", [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.mean(tp.silu(v[0])); },
        {a.clone()});
    run("sum", [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.sum(tp.mul(v[0], v[0])); },
        {a.clone()});
    run("mean", [](Tape<double>& tp, const std::vector<DVar>& v) { return tp.mean(tp.mul(v[0], v[0])); },
        {a.clone()});
    run("spatial_mean",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto g = tp.spatial_mean(tp.mul(v[0], v[0]));
            return tp.mean(g);
        },
        {a.clone()});
    run("reshape",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto r = tp.reshape(v[0], {48});
            return tp.mean(tp.mul(r, r));
        },
        {a.clone()});
    run("broadcast-channel",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto g = tp.broadcast(v[0], {3, 4, 4});
            return tp.mean(tp.mul(g, g));
        },
        {random_tensor({3}, rng)});
    run("broadcast-scalar",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto g = tp.broadcast(v[0], {2, 3, 3});
            return tp.mean(tp.mul(g, g));
        },
        {random_tensor({1}, rng)});
    run("concat_channels",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto c = tp.concat_channels({v[0], v[1]});
            return tp.mean(tp.mul(c, c));
        },
        {a.clone(), random_tensor({2, 4, 4}, rng)});
    run("matmul",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto m = tp.matmul(v[0], v[1]);
            return tp.mean(tp.mul(m, m));
        },
        {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng)});
    run("matvec",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto m = tp.matvec(v[0], v[1]);
            return tp.mean(tp.mul(m, m));
        },
        {random_tensor({4, 6}, rng), random_tensor({6}, rng)});
    run("conv2d",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto c = tp.conv2d(v[0], v[1]);
            return tp.mean(tp.mul(c, c));
        },
        {random_tensor({2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng, 0.4)});
    run("group_norm",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto g = tp.group_norm(v[0], v[1], v[2], 2);
            return tp.mean(tp.mul(g, g));
        },
        {random_tensor({4, 5, 5}, rng), random_tensor({4}, rng, 0.5), random_tensor({4}, rng, 0.5)});
    run("softmax",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto s = tp.softmax(v[0]);
            return tp.mean(tp.mul(s, s));
        },
        {random_tensor({5}, rng)});
    run("cross_entropy_logits",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            Tensor<double> target = Tensor<double>::zeros({4});
            target[1] = 1.0;
            return tp.cross_entropy_logits(v[0], std::move(target));
        },
        {random_tensor({4}, rng)});
    run("avg_pool2",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto p = tp.avg_pool2(v[0]);
            return tp.mean(tp.mul(p, p));
        },
        {random_tensor({2, 6, 6}, rng)});
    run("upsample_nearest2",
        [](Tape<double>& tp, const std::vector<DVar>& v) {
            auto u = tp.upsample_nearest2(v[0]);
            return tp.mean(tp.mul(u, u));
        },
        {random_tensor({2, 3, 3}, rng)});
    return out;
}

namespace {

CheckResult check_primitive_gradients() {
    double max_err = 0.0;
    std::string worst = "none";
    for (const auto& [name, err] : primitive_gradient_errors())
        if (err > max_err) {
            max_err = err;
            worst = name;
        }
    std::ostringstream os;
    os << "max err " << max_err << " at " << worst << " (tol 1e-4)";
    return CheckResult{"gradcheck-primitives", max_err < 1e-4, os.str()};
}

CheckResult check_denoiser_gradients() {
    DenoiserConfig cfg;
    cfg.side = 8;
    cfg.width = 8;
    cfg.depth = 1;
    cfg.temb_dim = 8;
    cfg.num_classes = 2;
    const ParamStore<double> ps = init_denoiser_params<double>(cfg, 404, /*zero_init_heads=*/false);

    Rng rng(21);
    TrainingExample ex;
    ex.zt_image.resize(64);
    ex.eps_image.resize(64);
    for (auto& v : ex.zt_image) v = rng.normal();
    for (auto& v : ex.eps_image) v = rng.normal();
    ex.zt_age = rng.normal();
    ex.zt_sex_class = 1;
    ex.t = 37;
    ex.eps_age = rng.normal();
    ex.sex_class = 0;

    std::vector<Tensor<double>> leaves;
    for (const auto& e : ps.entries) leaves.push_back(e.second.clone());
    const auto names = ps;

    const double err = grad_check(
        [&](Tape<double>& tp, const std::vector<DVar>& v) {
            BoundParams<double> bp;
            for (size_t i = 0; i < names.entries.size(); ++i) bp.vars[names.entries[i].first] = v[i];
            return joint_loss_graph<double>(tp, cfg, bp, {&ex, 1}, 1.0);
        },
        std::move(leaves));
    return check_value("gradcheck-denoiser-loss", err, 1e-4);
}

}  // namespace

std::vector<CheckResult> run_self_check() {
    std::vector<CheckResult> results;
    results.push_back(check_schedule_algebra());
    results.push_back(check_d3pm_enumeration());
    results.push_back(check_gaussian_roundtrip());
    results.push_back(check_primitive_gradients());
    results.push_back(check_denoiser_gradients());
    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.passed) return false;
    return true;
}

}  // namespace jointdiff
