#include "core/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "core/serialize.hpp"
#include "json.hpp"

namespace jointdiff {

void GeneratorConfig::validate() const {
    if (side < 4) throw std::invalid_argument("generator: side too small");
    if (num_classes < 2) throw std::invalid_argument("generator: need at least two classes");
    if (!(age_lo < age_hi)) throw std::invalid_argument("generator: empty age range");
    if (!(radius_min > 0.0) || !(radius_min <= radius_max))
        throw std::invalid_argument("generator: bad radius range");
    if (radius_max >= side / 2.0) throw std::invalid_argument("generator: radius_max must be < side/2");
    if (noise_sigma < 0.0) throw std::invalid_argument("generator: negative noise sigma");
    if (!(background < foreground)) throw std::invalid_argument("generator: background must be below foreground");
}

std::vector<const DatasetRecord*> Dataset::split_records(Split s) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

double disk_radius_for_age(double age, const GeneratorConfig& cfg) {
    const double f = (age - cfg.age_lo) / (cfg.age_hi - cfg.age_lo);
    return cfg.radius_min + f * (cfg.radius_max - cfg.radius_min);
}

PatientRecord render_record(double age, int sex, const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    if (sex < 0 || sex >= cfg.num_classes) throw std::invalid_argument("render_record: bad sex class");
    if (age < cfg.age_lo || age > cfg.age_hi) throw std::invalid_argument("render_record: age out of range");
    PatientRecord r;
    r.age = age;
    r.sex = sex;
    r.image.resize(static_cast<size_t>(cfg.side) * cfg.side);
    const double radius = disk_radius_for_age(age, cfg);
    const double c = (cfg.side - 1) / 2.0;
    const int half = cfg.side / 2;
    for (int y = 0; y < cfg.side; ++y)
        for (int x = 0; x < cfg.side; ++x) {
            const double dist = std::hypot(x - c, y - c);
            // linear edge coverage over one pixel
            const double cov = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
            double v = cfg.background + (cfg.foreground - cfg.background) * cov;
            const bool offset_half = sex == 0 ? x < half : x >= half;
            if (offset_half) v += cfg.asymmetry;
            v += cfg.noise_sigma * rng.normal();
            r.image[static_cast<size_t>(y) * cfg.side + x] =
                static_cast<float>(std::clamp(v, -1.0, 1.0));
        }
    return r;
}

Dataset generate_dataset(int n_subjects, const GeneratorConfig& cfg, uint64_t seed) {
    if (n_subjects < 1) throw std::invalid_argument("generate_dataset: need at least one subject");
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.seed = seed;
    ds.records.reserve(static_cast<size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) {
        Rng rng(derive_seed(seed, Rstream::dataset_gen, static_cast<uint64_t>(i)));
        const int sex = static_cast<int>(rng.uniform_int(static_cast<uint32_t>(cfg.num_classes)));
        const double age = cfg.age_lo + rng.uniform() * (cfg.age_hi - cfg.age_lo);
        DatasetRecord rec;
        rec.subject_id = static_cast<uint32_t>(i);
        rec.split = Split::train;
        rec.rec = render_record(age, sex, cfg, rng);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

double oracle_age(const std::vector<float>& image, const GeneratorConfig& cfg) {
    if (image.size() != static_cast<size_t>(cfg.side) * cfg.side)
        throw std::invalid_argument("oracle_age: image size mismatch");
    // Midway between the offset-half background and the foreground; the edge
    // biases of the two halves cancel at this threshold.
    const double thr = (cfg.foreground + cfg.background + cfg.asymmetry) / 2.0;
    size_t count = 0;
    for (float v : image)
        if (v > thr) ++count;
    if (count == 0) throw std::runtime_error("oracle_age: no foreground pixels");
    const double r = std::sqrt(static_cast<double>(count) / 3.14159265358979323846);
    const double f = (r - cfg.radius_min) / (cfg.radius_max - cfg.radius_min);
    return std::clamp(cfg.age_lo + f * (cfg.age_hi - cfg.age_lo), cfg.age_lo, cfg.age_hi);
}

int oracle_sex(const std::vector<float>& image, const GeneratorConfig& cfg) {
    if (image.size() != static_cast<size_t>(cfg.side) * cfg.side)
        throw std::invalid_argument("oracle_sex: image size mismatch");
    const int half = cfg.side / 2;
    double left = 0.0, right = 0.0;
    for (int y = 0; y < cfg.side; ++y)
        for (int x = 0; x < cfg.side; ++x) {
            const double v = image[static_cast<size_t>(y) * cfg.side + x];
            (x < half ? left : right) += v;
        }
    return left >= right ? 0 : 1;
}

void split_dataset(Dataset& ds, const std::array<double, 3>& fractions, uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

    std::vector<uint32_t> subjects;
    std::unordered_set<uint32_t> seen;
    for (const auto& r : ds.records)
        if (seen.insert(r.subject_id).second) subjects.push_back(r.subject_id);

    Rng rng(derive_seed(seed, Rstream::split));
    for (size_t i = subjects.size(); i > 1; --i)
        std::swap(subjects[i - 1], subjects[rng.uniform_int(static_cast<uint32_t>(i))]);

    const auto n = static_cast<long long>(subjects.size());
    const long long n_train = std::llround(fractions[0] * static_cast<double>(n));
    const long long n_val = std::llround(fractions[1] * static_cast<double>(n));
    if (n_train + n_val > n) throw std::invalid_argument("split: rounded fractions exceed subject count");

    std::unordered_map<uint32_t, Split> assign;
    for (long long i = 0; i < n; ++i) {
        Split s = Split::test;
        if (i < n_train)
            s = Split::train;
        else if (i < n_train + n_val)
            s = Split::val;
        assign[subjects[static_cast<size_t>(i)]] = s;
    }
    for (auto& r : ds.records) r.split = assign.at(r.subject_id);
}

double PopulationBaseline::mae(const Dataset& ds, Split split) const {
    double acc = 0.0;
    size_t n = 0;
    for (const auto& r : ds.records)
        if (r.split == split) {
            acc += std::abs(r.rec.age - mean_age);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("baseline mae: empty split");
    return acc / static_cast<double>(n);
}

PopulationBaseline population_baseline(const Dataset& ds) {
    double acc = 0.0;
    size_t n = 0;
    for (const auto& r : ds.records)
        if (r.split == Split::train) {
            acc += r.rec.age;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("population_baseline: empty train split");
    return PopulationBaseline{acc / static_cast<double>(n)};
}

static nlohmann::json config_to_json(const GeneratorConfig& c) {
    return nlohmann::json{{"side", c.side},
                          {"num_classes", c.num_classes},
                          {"age_lo", c.age_lo},
                          {"age_hi", c.age_hi},
                          {"radius_min", c.radius_min},
                          {"radius_max", c.radius_max},
                          {"asymmetry", c.asymmetry},
                          {"noise_sigma", c.noise_sigma},
                          {"foreground", c.foreground},
                          {"background", c.background}};
}

static GeneratorConfig config_from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.side = j.at("side").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.age_lo = j.at("age_lo").get<double>();
    c.age_hi = j.at("age_hi").get<double>();
    c.radius_min = j.at("radius_min").get<double>();
    c.radius_max = j.at("radius_max").get<double>();
    c.asymmetry = j.at("asymmetry").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.foreground = j.at("foreground").get<double>();
    c.background = j.at("background").get<double>();
    return c;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    io::write_bytes(os, "JDDS", 4);
    io::write_le<uint32_t>(os, 1);
    nlohmann::json header = config_to_json(ds.config);
    header["seed"] = ds.seed;
    const std::string htext = header.dump();
    io::write_le<uint64_t>(os, htext.size());
    io::write_bytes(os, htext.data(), htext.size());
    io::write_le<uint32_t>(os, static_cast<uint32_t>(ds.records.size()));
    for (const auto& r : ds.records) {
        io::write_le<uint32_t>(os, r.subject_id);
        io::write_le<uint8_t>(os, static_cast<uint8_t>(r.split));
        io::write_f64(os, r.rec.age);
        io::write_le<uint8_t>(os, static_cast<uint8_t>(r.rec.sex));
        io::write_f32_array(os, r.rec.image.data(), r.rec.image.size());
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[4];
    io::read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "JDDS") throw std::runtime_error("load_dataset: bad magic");
    const uint32_t version = io::read_le<uint32_t>(is);
    if (version != 1) throw std::runtime_error("load_dataset: unsupported version");
    const uint64_t hlen = io::read_le<uint64_t>(is);
    std::string htext(hlen, '\0');
    io::read_bytes(is, htext.data(), hlen);
    const nlohmann::json header = nlohmann::json::parse(htext);
    Dataset ds;
    ds.config = config_from_json(header);
    ds.seed = header.at("seed").get<uint64_t>();
    const uint32_t n = io::read_le<uint32_t>(is);
    ds.records.resize(n);
    const size_t pixels = static_cast<size_t>(ds.config.side) * ds.config.side;
    for (uint32_t i = 0; i < n; ++i) {
        auto& r = ds.records[i];
        r.subject_id = io::read_le<uint32_t>(is);
        const uint8_t split = io::read_le<uint8_t>(is);
        if (split > 2) throw std::runtime_error("load_dataset: bad split tag");
        r.split = static_cast<Split>(split);
        r.rec.age = io::read_f64(is);
        r.rec.sex = io::read_le<uint8_t>(is);
        r.rec.image.resize(pixels);
        io::read_f32_array(is, r.rec.image.data(), pixels);
    }
    return ds;
}

}  // namespace jointdiff
