#ifndef JOINTDIFF_DENOISER_HPP
#define JOINTDIFF_DENOISER_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace jointdiff {

struct DenoiserConfig {
    int side = 16;
    int width = 32;
    int depth = 2;
    int temb_dim = 64;
    int num_classes = 2;

    void validate() const {
        if (side < 4 || width < 1 || depth < 1 || temb_dim < 2 || num_classes < 2)
            throw std::invalid_argument("DenoiserConfig: non-positive sizes");
        if (temb_dim % 2 != 0) throw std::invalid_argument("DenoiserConfig: temb_dim must be even");
        if (side % (1 << depth) != 0)
            throw std::invalid_argument("DenoiserConfig: side must be divisible by 2^depth");
    }

    int bottleneck_width() const { return width << (depth - 1); }
    int stage_width(int s) const { return width << s; }
};

// Sinusoidal embedding, pairs (sin, cos) of t / 10000^(2i/dim).
inline std::vector<double> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
    std::vector<double> out(dim);
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        out[2 * i] = std::sin(t * freq);
        out[2 * i + 1] = std::cos(t * freq);
    }
    return out;
}

// Largest divisor of C not exceeding 8.
inline int norm_groups(int channels) {
    for (int g = std::min(8, channels); g >= 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

template <typename T>
struct ParamStore {
    std::vector<std::pair<std::string, Tensor<T>>> entries;
    std::unordered_map<std::string, int> index;

    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        if (index.count(name)) throw std::logic_error("ParamStore: duplicate " + name);
        index[name] = static_cast<int>(entries.size());
        entries.emplace_back(name, Tensor<T>::zeros(std::move(shape)));
        return entries.back().second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("ParamStore: missing " + name);
        return entries[static_cast<size_t>(it->second)].second;
    }

    const Tensor<T>& get(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("ParamStore: missing " + name);
        return entries[static_cast<size_t>(it->second)].second;
    }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& e : entries) n += e.second.numel();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries) {
            out.index[e.first] = static_cast<int>(out.entries.size());
            out.entries.emplace_back(e.first, e.second.template cast<U>());
        }
        return out;
    }
};

namespace detail {

template <typename T>
void fill_normal(Tensor<T>& t, double std, Rng& rng) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(std * rng.normal());
}

template <typename T>
void add_resblock_params(ParamStore<T>& ps, const std::string& prefix, int in_ch, int out_ch,
                         int temb_dim, Rng& rng) {
    Tensor<T>& g1 = ps.add(prefix + ".gn1.g", {in_ch});
    for (size_t i = 0; i < g1.numel(); ++i) g1[i] = T(1);
    ps.add(prefix + ".gn1.b", {in_ch});
    detail::fill_normal(ps.add(prefix + ".conv1.w", {out_ch, in_ch, 3, 3}),
                        1.0 / std::sqrt(9.0 * in_ch), rng);
    ps.add(prefix + ".conv1.b", {out_ch});
    detail::fill_normal(ps.add(prefix + ".emb.w", {out_ch, temb_dim}), 1.0 / std::sqrt(temb_dim), rng);
    ps.add(prefix + ".emb.b", {out_ch});
    Tensor<T>& g2 = ps.add(prefix + ".gn2.g", {out_ch});
    for (size_t i = 0; i < g2.numel(); ++i) g2[i] = T(1);
    ps.add(prefix + ".gn2.b", {out_ch});
    detail::fill_normal(ps.add(prefix + ".conv2.w", {out_ch, out_ch, 3, 3}),
                        1.0 / std::sqrt(9.0 * out_ch), rng);
    ps.add(prefix + ".conv2.b", {out_ch});
    if (in_ch != out_ch) {
        detail::fill_normal(ps.add(prefix + ".skip.w", {out_ch, in_ch, 1, 1}),
                            1.0 / std::sqrt(static_cast<double>(in_ch)), rng);
        ps.add(prefix + ".skip.b", {out_ch});
    }
}

template <typename T>
void add_head_params(ParamStore<T>& ps, const std::string& prefix, int ch, int n_out, Rng& rng,
                     bool zero_init) {
    Tensor<T>& g1 = ps.add(prefix + ".gn1.g", {ch});
    for (size_t i = 0; i < g1.numel(); ++i) g1[i] = T(1);
    ps.add(prefix + ".gn1.b", {ch});
    detail::fill_normal(ps.add(prefix + ".conv1.w", {ch, ch, 3, 3}), 1.0 / std::sqrt(9.0 * ch), rng);
    ps.add(prefix + ".conv1.b", {ch});
    Tensor<T>& g2 = ps.add(prefix + ".gn2.g", {ch});
    for (size_t i = 0; i < g2.numel(); ++i) g2[i] = T(1);
    ps.add(prefix + ".gn2.b", {ch});
    detail::fill_normal(ps.add(prefix + ".conv2.w", {ch, ch, 3, 3}), 1.0 / std::sqrt(9.0 * ch), rng);
    ps.add(prefix + ".conv2.b", {ch});
    Tensor<T>& pw = ps.add(prefix + ".proj.w", {n_out, ch, 1, 1});
    if (!zero_init) detail::fill_normal(pw, 1.0 / std::sqrt(static_cast<double>(ch)), rng);
    ps.add(prefix + ".proj.b", {n_out});
}

}  // namespace detail

// Fan-in-scaled normal init; the image output conv and both head projections
// are zero-initialized so the untrained model predicts zeros everywhere.
// zero_init_heads = false randomizes them too (used by gradient-flow probes).
template <typename T>
ParamStore<T> init_denoiser_params(const DenoiserConfig& cfg, uint64_t seed,
                                   bool zero_init_heads = true) {
    cfg.validate();
    Rng rng(derive_seed(seed, Rstream::param_init));
    ParamStore<T> ps;

    detail::fill_normal(ps.add("temb.mlp.w", {cfg.temb_dim, cfg.temb_dim}),
                        1.0 / std::sqrt(static_cast<double>(cfg.temb_dim)), rng);
    ps.add("temb.mlp.b", {cfg.temb_dim});

    detail::fill_normal(ps.add("stem.w", {cfg.width, 3, 3, 3}), 1.0 / std::sqrt(27.0), rng);
    ps.add("stem.b", {cfg.width});

    for (int s = 0; s < cfg.depth; ++s) {
        const int in_ch = s == 0 ? cfg.width : cfg.stage_width(s - 1);
        detail::add_resblock_params(ps, "enc" + std::to_string(s), in_ch, cfg.stage_width(s),
                                    cfg.temb_dim, rng);
    }
    detail::add_resblock_params(ps, "mid", cfg.bottleneck_width(), cfg.bottleneck_width(),
                                cfg.temb_dim, rng);
    for (int s = cfg.depth - 1; s >= 0; --s) {
        const int cur = s == cfg.depth - 1 ? cfg.bottleneck_width() : cfg.stage_width(s + 1);
        detail::add_resblock_params(ps, "dec" + std::to_string(s), cur + cfg.stage_width(s),
                                    cfg.stage_width(s), cfg.temb_dim, rng);
    }

    Tensor<T>& og = ps.add("out.gn.g", {cfg.width});
    for (size_t i = 0; i < og.numel(); ++i) og[i] = T(1);
    ps.add("out.gn.b", {cfg.width});
    Tensor<T>& ow = ps.add("out.conv.w", {1, cfg.width, 3, 3});
    if (!zero_init_heads) detail::fill_normal(ow, 1.0 / std::sqrt(9.0 * cfg.width), rng);
    ps.add("out.conv.b", {1});

    detail::add_head_params(ps, "head_age", cfg.bottleneck_width(), 1, rng, zero_init_heads);
    detail::add_head_params(ps, "head_sex", cfg.bottleneck_width(), cfg.num_classes, rng,
                            zero_init_heads);
    return ps;
}

// Parameter leaves bound onto one tape.
template <typename T>
struct BoundParams {
    std::unordered_map<std::string, typename Tape<T>::Var> vars;

    typename Tape<T>::Var operator()(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw std::logic_error("BoundParams: missing " + name);
        return it->second;
    }
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& tp, const ParamStore<T>& ps, bool requires_grad) {
    BoundParams<T> bp;
    for (const auto& e : ps.entries) bp.vars[e.first] = tp.leaf(e.second, requires_grad);
    return bp;
}

template <typename T>
struct DenoiserOut {
    typename Tape<T>::Var eps_image;   // [1,H,W]
    typename Tape<T>::Var eps_age;     // [1]
    typename Tape<T>::Var sex_logits;  // [K]
    typename Tape<T>::Var bottleneck;  // [bw, side/2^depth, side/2^depth]
};

namespace detail {

template <typename T>
void check_stage_finite(const Tape<T>& tp, typename Tape<T>::Var v, const char* stage, bool on) {
    if (!on) return;
    const Tensor<T>& t = tp.val(v);
    for (size_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(t[i])))
            throw std::runtime_error(std::string("denoiser: non-finite activation at stage ") + stage);
}

template <typename T>
typename Tape<T>::Var resblock(Tape<T>& tp, const BoundParams<T>& P, const std::string& prefix,
                               typename Tape<T>::Var x, typename Tape<T>::Var emb, int in_ch,
                               int out_ch, int hw_side) {
    using Var = typename Tape<T>::Var;
    Var h = tp.group_norm(x, P(prefix + ".gn1.g"), P(prefix + ".gn1.b"), norm_groups(in_ch));
    h = tp.silu(h);
    h = tp.conv2d(h, P(prefix + ".conv1.w"));
    h = tp.add(h, tp.broadcast(P(prefix + ".conv1.b"), {out_ch, hw_side, hw_side}));
    Var e = tp.add(tp.matvec(P(prefix + ".emb.w"), emb), P(prefix + ".emb.b"));
    h = tp.add(h, tp.broadcast(e, {out_ch, hw_side, hw_side}));
    h = tp.group_norm(h, P(prefix + ".gn2.g"), P(prefix + ".gn2.b"), norm_groups(out_ch));
    h = tp.silu(h);
    h = tp.conv2d(h, P(prefix + ".conv2.w"));
    h = tp.add(h, tp.broadcast(P(prefix + ".conv2.b"), {out_ch, hw_side, hw_side}));
    Var s = x;
    if (in_ch != out_ch) {
        s = tp.conv2d(x, P(prefix + ".skip.w"));
        s = tp.add(s, tp.broadcast(P(prefix + ".skip.b"), {out_ch, hw_side, hw_side}));
    }
    return tp.add(h, s);
}

// Two (GroupNorm -> SiLU -> Conv) blocks with a skip connection, a zero-init
// projection, then global average pooling down to n_out values.
template <typename T>
typename Tape<T>::Var scalar_head(Tape<T>& tp, const BoundParams<T>& P, const std::string& prefix,
                                  typename Tape<T>::Var x, int ch, int n_out, int hw_side) {
    using Var = typename Tape<T>::Var;
    Var h = tp.group_norm(x, P(prefix + ".gn1.g"), P(prefix + ".gn1.b"), norm_groups(ch));
    h = tp.silu(h);
    h = tp.conv2d(h, P(prefix + ".conv1.w"));
    h = tp.add(h, tp.broadcast(P(prefix + ".conv1.b"), {ch, hw_side, hw_side}));
    h = tp.group_norm(h, P(prefix + ".gn2.g"), P(prefix + ".gn2.b"), norm_groups(ch));
    h = tp.silu(h);
    h = tp.conv2d(h, P(prefix + ".conv2.w"));
    h = tp.add(h, tp.broadcast(P(prefix + ".conv2.b"), {ch, hw_side, hw_side}));
    h = tp.add(h, x);
    Var p = tp.conv2d(h, P(prefix + ".proj.w"));
    p = tp.add(p, tp.broadcast(P(prefix + ".proj.b"), {n_out, hw_side, hw_side}));
    return tp.spatial_mean(p);
}

}  // namespace detail

// Joint forward pass: the three input planes are channel-concatenated, the
// encoder/decoder trunk predicts image noise, and the scalar heads read the
// bottleneck features.
template <typename T>
DenoiserOut<T> denoiser_forward(Tape<T>& tp, const DenoiserConfig& cfg, const BoundParams<T>& P,
                                typename Tape<T>::Var image, typename Tape<T>::Var age_plane,
                                typename Tape<T>::Var sex_plane, int t, bool check_finite = false) {
    using Var = typename Tape<T>::Var;
    cfg.validate();
    const auto expect = std::vector<int>{1, cfg.side, cfg.side};
    if (tp.val(image).shape != expect || tp.val(age_plane).shape != expect ||
        tp.val(sex_plane).shape != expect)
        throw std::invalid_argument("denoiser_forward: input planes must be [1,side,side]");

    const auto emb_host = time_embedding(t, cfg.temb_dim);
    Tensor<T> emb_t = Tensor<T>::zeros({cfg.temb_dim});
    for (int i = 0; i < cfg.temb_dim; ++i) emb_t[i] = static_cast<T>(emb_host[static_cast<size_t>(i)]);
    Var emb = tp.silu(tp.add(tp.matvec(P("temb.mlp.w"), tp.constant(std::move(emb_t))), P("temb.mlp.b")));

    Var x = tp.concat_channels({image, age_plane, sex_plane});
    detail::check_stage_finite(tp, x, "input", check_finite);
    x = tp.conv2d(x, P("stem.w"));
    x = tp.add(x, tp.broadcast(P("stem.b"), {cfg.width, cfg.side, cfg.side}));

    std::vector<Var> skips;
    int side = cfg.side;
    for (int s = 0; s < cfg.depth; ++s) {
        const int in_ch = s == 0 ? cfg.width : cfg.stage_width(s - 1);
        x = detail::resblock(tp, P, "enc" + std::to_string(s), x, emb, in_ch, cfg.stage_width(s), side);
        detail::check_stage_finite(tp, x, "encoder", check_finite);
        skips.push_back(x);
        x = tp.avg_pool2(x);
        side /= 2;
    }

    x = detail::resblock(tp, P, "mid", x, emb, cfg.bottleneck_width(), cfg.bottleneck_width(), side);
    detail::check_stage_finite(tp, x, "bottleneck", check_finite);
    const Var bottleneck = x;

    for (int s = cfg.depth - 1; s >= 0; --s) {
        x = tp.upsample_nearest2(x);
        side *= 2;
        x = tp.concat_channels({x, skips[static_cast<size_t>(s)]});
        const int cur = s == cfg.depth - 1 ? cfg.bottleneck_width() : cfg.stage_width(s + 1);
        x = detail::resblock(tp, P, "dec" + std::to_string(s), x, emb, cur + cfg.stage_width(s),
                             cfg.stage_width(s), side);
        detail::check_stage_finite(tp, x, "decoder", check_finite);
    }

    Var img = tp.group_norm(x, P("out.gn.g"), P("out.gn.b"), norm_groups(cfg.width));
    img = tp.silu(img);
    img = tp.conv2d(img, P("out.conv.w"));
    img = tp.add(img, tp.broadcast(P("out.conv.b"), {1, cfg.side, cfg.side}));
    detail::check_stage_finite(tp, img, "image head", check_finite);

    const int bside = cfg.side >> cfg.depth;
    Var age = detail::scalar_head(tp, P, "head_age", bottleneck, cfg.bottleneck_width(), 1, bside);
    Var sex = detail::scalar_head(tp, P, "head_sex", bottleneck, cfg.bottleneck_width(),
                                  cfg.num_classes, bside);
    detail::check_stage_finite(tp, age, "age head", check_finite);
    detail::check_stage_finite(tp, sex, "sex head", check_finite);

    DenoiserOut<T> out;
    out.eps_image = img;
    out.eps_age = age;
    out.sex_logits = sex;
    out.bottleneck = bottleneck;
    return out;
}

// Scalar input value for the one-hot state: class index mapped affinely onto
// [-1, 1].
inline double categorical_plane_value(int cls, int K) {
    if (K < 2 || cls < 0 || cls >= K) throw std::invalid_argument("categorical_plane_value: bad class");
    return 2.0 * cls / (K - 1) - 1.0;
}

}  // namespace jointdiff

#endif
