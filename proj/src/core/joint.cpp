#include "core/joint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "core/serialize.hpp"
#include "json.hpp"

namespace jointdiff {

double encode_age(double age, const AgeRange& range) {
    if (!(range.lo < range.hi)) throw std::invalid_argument("encode_age: empty range");
    if (age < range.lo || age > range.hi) throw std::invalid_argument("encode_age: age out of range");
    return 2.0 * (age - range.lo) / (range.hi - range.lo) - 1.0;
}

double decode_age(double z_age, const AgeRange& range) {
    const double z = std::clamp(z_age, -1.0, 1.0);
    return range.lo + (z + 1.0) / 2.0 * (range.hi - range.lo);
}

JointState encode_record(const PatientRecord& r, const AgeRange& range, int num_classes) {
    JointState z;
    z.z_image.resize(r.image.size());
    for (size_t i = 0; i < r.image.size(); ++i) {
        const double v = r.image[i];
        if (v < -1.0 || v > 1.0 || !std::isfinite(v))
            throw std::invalid_argument("encode_record: image entry outside [-1,1]");
        z.z_image[i] = v;
    }
    z.z_age = encode_age(r.age, range);
    z.z_sex = OneHot::hard(r.sex, num_classes);
    z.t = 0;
    return z;
}

PatientRecord decode_state(const JointState& z, const AgeRange& range) {
    if (z.t != 0) throw std::invalid_argument("decode_state: state must be at t=0");
    PatientRecord r;
    r.image.resize(z.z_image.size());
    for (size_t i = 0; i < z.z_image.size(); ++i)
        r.image[i] = static_cast<float>(std::clamp(z.z_image[i], -1.0, 1.0));
    r.age = decode_age(z.z_age, range);
    r.sex = z.z_sex.arg_max();
    return r;
}

DiffusedSample forward_diffuse(const JointState& z0, int t, Rng& rng, const GaussianSchedule& gs,
                               const DiscreteSchedule& ds) {
    if (t < 1 || t > gs.T) throw std::out_of_range("forward_diffuse: t out of range");
    if (gs.T != ds.T) throw std::invalid_argument("forward_diffuse: schedules disagree on T");
    DiffusedSample out;
    out.eps_image.resize(z0.z_image.size());
    for (double& e : out.eps_image) e = rng.normal();
    out.eps_age = rng.normal();
    out.z_t.z_image.resize(z0.z_image.size());
    q_sample<double>(z0.z_image, t, out.eps_image, gs, out.z_t.z_image);
    const double abar = gs.alpha_bar(t);
    out.z_t.z_age = std::sqrt(abar) * z0.z_age + std::sqrt(1.0 - abar) * out.eps_age;
    out.z_t.z_sex = d3pm_sample(z0.z_sex, t, ds, rng);
    out.z_t.t = t;
    return out;
}

TrainingExample make_training_example(const JointState& z0, const DiffusedSample& d) {
    TrainingExample ex;
    ex.zt_image = d.z_t.z_image;
    ex.zt_age = d.z_t.z_age;
    ex.zt_sex_class = d.z_t.z_sex.arg_max();
    ex.t = d.z_t.t;
    ex.eps_image = d.eps_image;
    ex.eps_age = d.eps_age;
    ex.sex_class = z0.z_sex.arg_max();
    return ex;
}

GaussianSchedule Checkpoint::build_gaussian() const {
    if (gaussian_kind != "linear") throw std::runtime_error("checkpoint: unknown schedule kind " + gaussian_kind);
    return linear_beta_schedule(timesteps, beta_start, beta_end);
}

DiscreteSchedule Checkpoint::build_discrete() const {
    return cosine_discrete_schedule(timesteps, config.num_classes, cosine_offset);
}

std::string Checkpoint::describe() const {
    nlohmann::json j{
        {"gaussian", {{"kind", gaussian_kind}, {"T", timesteps}, {"beta_start", beta_start}, {"beta_end", beta_end}}},
        {"discrete", {{"T", timesteps}, {"K", config.num_classes}, {"cosine_offset", cosine_offset}}},
        {"denoiser",
         {{"side", config.side},
          {"width", config.width},
          {"depth", config.depth},
          {"temb_dim", config.temb_dim},
          {"num_classes", config.num_classes}}},
        {"age_range", {age_range.lo, age_range.hi}},
        {"lambda_image", lambda_image},
        {"epoch", epoch},
        {"val_loss", val_loss},
        {"seed", seed},
        {"precision", precision},
    };
    return j.dump();
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    io::write_bytes(os, "JDIF", 4);
    io::write_le<uint32_t>(os, ck.version);
    const std::string header = ck.describe();
    io::write_le<uint64_t>(os, header.size());
    io::write_bytes(os, header.data(), header.size());
    io::write_le<uint32_t>(os, static_cast<uint32_t>(ck.params.entries.size()));
    for (const auto& [name, tensor] : ck.params.entries) {
        io::write_string(os, name);
        io::write_le<uint32_t>(os, static_cast<uint32_t>(tensor.shape.size()));
        for (int d : tensor.shape) io::write_le<uint32_t>(os, static_cast<uint32_t>(d));
        io::write_f32_array(os, tensor.ptr(), tensor.numel());
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    io::read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "JDIF") throw std::runtime_error("load_checkpoint: bad magic");
    Checkpoint ck;
    const uint32_t version = io::read_le<uint32_t>(is);
    if (version != ck.version)
        throw std::runtime_error("load_checkpoint: unsupported format version " + std::to_string(version));
    const uint64_t hlen = io::read_le<uint64_t>(is);
    std::string htext(hlen, '\0');
    io::read_bytes(is, htext.data(), hlen);
    const nlohmann::json j = nlohmann::json::parse(htext);
    ck.gaussian_kind = j.at("gaussian").at("kind").get<std::string>();
    ck.timesteps = j.at("gaussian").at("T").get<int>();
    ck.beta_start = j.at("gaussian").at("beta_start").get<double>();
    ck.beta_end = j.at("gaussian").at("beta_end").get<double>();
    ck.cosine_offset = j.at("discrete").at("cosine_offset").get<double>();
    ck.config.side = j.at("denoiser").at("side").get<int>();
    ck.config.width = j.at("denoiser").at("width").get<int>();
    ck.config.depth = j.at("denoiser").at("depth").get<int>();
    ck.config.temb_dim = j.at("denoiser").at("temb_dim").get<int>();
    ck.config.num_classes = j.at("denoiser").at("num_classes").get<int>();
    ck.age_range.lo = j.at("age_range").at(0).get<double>();
    ck.age_range.hi = j.at("age_range").at(1).get<double>();
    ck.lambda_image = j.at("lambda_image").get<double>();
    ck.epoch = j.at("epoch").get<int>();
    ck.val_loss = j.at("val_loss").get<double>();
    ck.seed = j.at("seed").get<uint64_t>();
    ck.precision = j.at("precision").get<std::string>();
    const uint32_t count = io::read_le<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = io::read_string(is);
        const uint32_t ndim = io::read_le<uint32_t>(is);
        if (ndim > 8) throw std::runtime_error("load_checkpoint: tensor rank out of range");
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(io::read_le<uint32_t>(is));
        Tensor<float>& t = ck.params.add(name, shape);
        io::read_f32_array(is, t.ptr(), t.numel());
    }
    return ck;
}

}  // namespace jointdiff
