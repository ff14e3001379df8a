#include <stdexcept>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "core/synthdata.hpp"
#include "doctest.h"

using namespace jointdiff;

TEST_CASE("disk radius endpoints follow the affine age map") {
    const GeneratorConfig cfg;
    CHECK(disk_radius_for_age(20.0, cfg) == doctest::Approx(2.0));
    CHECK(disk_radius_for_age(90.0, cfg) == doctest::Approx(6.0));
    CHECK(disk_radius_for_age(55.0, cfg) == doctest::Approx(4.0));
}

TEST_CASE("noise-free, symmetric renders are deterministic in age") {
    GeneratorConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.asymmetry = 0.0;
    Rng rng_a(1), rng_b(2);  // unused draws when sigma = 0
    const PatientRecord a = render_record(47.5, 0, cfg, rng_a);
    const PatientRecord b = render_record(47.5, 1, cfg, rng_b);
    CHECK(std::memcmp(a.image.data(), b.image.data(), sizeof(float) * a.image.size()) == 0);
}

TEST_CASE("generated pixels stay in range and regeneration is bit-identical") {
    const GeneratorConfig cfg;
    const Dataset a = generate_dataset(100, cfg, 77);
    const Dataset b = generate_dataset(100, cfg, 77);
    for (size_t i = 0; i < a.records.size(); ++i) {
        for (float v : a.records[i].rec.image) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(a.records[i].rec.age == b.records[i].rec.age);
        CHECK(std::memcmp(a.records[i].rec.image.data(), b.records[i].rec.image.data(),
                          sizeof(float) * a.records[i].rec.image.size()) == 0);
    }
}

TEST_CASE("age and sex are independent by construction") {
    const GeneratorConfig cfg;
    const Dataset ds = generate_dataset(10000, cfg, 5);
    double mean_age = 0.0, mean_sex = 0.0;
    for (const auto& r : ds.records) {
        mean_age += r.rec.age;
        mean_sex += r.rec.sex;
    }
    mean_age /= static_cast<double>(ds.records.size());
    mean_sex /= static_cast<double>(ds.records.size());
    double cov = 0.0, var_a = 0.0, var_s = 0.0;
    for (const auto& r : ds.records) {
        cov += (r.rec.age - mean_age) * (r.rec.sex - mean_sex);
        var_a += (r.rec.age - mean_age) * (r.rec.age - mean_age);
        var_s += (r.rec.sex - mean_sex) * (r.rec.sex - mean_sex);
    }
    const double corr = cov / std::sqrt(var_a * var_s);
    CHECK(std::abs(corr) < 0.03);

    // Mutual information between sex and binned age, in nats.
    const int bins = 10;
    double joint[2][10] = {};
    for (const auto& r : ds.records) {
        int b = static_cast<int>((r.rec.age - cfg.age_lo) / (cfg.age_hi - cfg.age_lo) * bins);
        if (b == bins) b = bins - 1;
        joint[r.rec.sex][b] += 1.0;
    }
    const double n = static_cast<double>(ds.records.size());
    double mi = 0.0;
    for (int s = 0; s < 2; ++s)
        for (int b = 0; b < bins; ++b) {
            if (joint[s][b] == 0.0) continue;
            const double pxy = joint[s][b] / n;
            double px = 0.0, py = 0.0;
            for (int bb = 0; bb < bins; ++bb) px += joint[s][bb] / n;
            for (int ss = 0; ss < 2; ++ss) py += joint[ss][b] / n;
            mi += pxy * std::log(pxy / (px * py));
        }
    CHECK(mi < 0.01);
}

TEST_CASE("age oracle: noiseless accuracy within pixelation error") {
    GeneratorConfig cfg;
    cfg.noise_sigma = 0.0;
    Rng rng(1);
    for (int sex = 0; sex < 2; ++sex) {
        const PatientRecord r = render_record(55.0, sex, cfg, rng);
        CHECK(std::abs(oracle_age(r.image, cfg) - 55.0) <= 2.0);
    }
    // Integer pixel counts quantize the area, so the sawtooth across the age
    // grid peaks higher than at the midpoint (worst measured 3.40).
    for (double age = 22.0; age <= 88.0; age += 6.0) {
        const PatientRecord r = render_record(age, age < 50 ? 0 : 1, cfg, rng);
        CHECK(std::abs(oracle_age(r.image, cfg) - age) <= 3.5);
    }
}

TEST_CASE("age oracle noise floor on the default noise level") {
    const GeneratorConfig cfg;
    const Dataset ds = generate_dataset(2000, cfg, 9);
    double mae = 0.0;
    for (const auto& r : ds.records) mae += std::abs(oracle_age(r.rec.image, cfg) - r.rec.age);
    mae /= static_cast<double>(ds.records.size());
    MESSAGE("oracle age MAE at sigma=0.05: ", mae);
    CHECK(mae < 2.5);  // published noise floor for acceptance thresholds
}

TEST_CASE("age oracle rejects an all-background image") {
    const GeneratorConfig cfg;
    const std::vector<float> flat(256, -0.8f);
    CHECK_THROWS_AS(oracle_age(flat, cfg), std::runtime_error);
}

TEST_CASE("sex oracle: exact on clean images, near-perfect under noise, tie goes to 0") {
    GeneratorConfig clean;
    clean.noise_sigma = 0.0;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const double age = 20.0 + 70.0 * rng.uniform();
        const int sex = static_cast<int>(rng.uniform_int(2));
        const PatientRecord r = render_record(age, sex, clean, rng);
        CHECK(oracle_sex(r.image, clean) == sex);
    }

    const GeneratorConfig cfg;
    const Dataset ds = generate_dataset(10000, cfg, 11);
    int hits = 0;
    for (const auto& r : ds.records) hits += oracle_sex(r.rec.image, cfg) == r.rec.sex;
    CHECK(static_cast<double>(hits) / static_cast<double>(ds.records.size()) >= 0.99);

    const std::vector<float> symmetric(256, 0.25f);
    CHECK(oracle_sex(symmetric, cfg) == 0);
}

TEST_CASE("subject-level split with exact rounded fractions") {
    const GeneratorConfig cfg;
    Dataset ds = generate_dataset(1000, cfg, 21);
    split_dataset(ds, {0.89, 0.01, 0.10}, 4);
    int counts[3] = {};
    for (const auto& r : ds.records) ++counts[static_cast<int>(r.split)];
    CHECK(counts[0] == 890);
    CHECK(counts[1] == 10);
    CHECK(counts[2] == 100);

    Dataset again = generate_dataset(1000, cfg, 21);
    split_dataset(again, {0.89, 0.01, 0.10}, 4);
    for (size_t i = 0; i < ds.records.size(); ++i) CHECK(ds.records[i].split == again.records[i].split);

    Dataset tiny = generate_dataset(3, cfg, 1);
    split_dataset(tiny, {1.0, 0.0, 0.0}, 1);
    for (const auto& r : tiny.records) CHECK(r.split == Split::train);

    CHECK_THROWS_AS(split_dataset(tiny, {0.5, 0.1, 0.1}, 1), std::invalid_argument);
}

TEST_CASE("split keeps multi-record subjects together") {
    const GeneratorConfig cfg;
    Dataset ds = generate_dataset(40, cfg, 33);
    // duplicate each subject's record so subjects own two records each
    const size_t original = ds.records.size();
    for (size_t i = 0; i < original; ++i) ds.records.push_back(ds.records[i]);
    split_dataset(ds, {0.5, 0.25, 0.25}, 9);
    std::unordered_map<uint32_t, Split> seen;
    for (const auto& r : ds.records) {
        auto it = seen.find(r.subject_id);
        if (it == seen.end())
            seen[r.subject_id] = r.split;
        else
            CHECK(it->second == r.split);
    }
}

TEST_CASE("population baseline: mean 55 and MAE near 17.5 on a uniform population") {
    const GeneratorConfig cfg;
    Dataset ds = generate_dataset(20000, cfg, 2);
    split_dataset(ds, {0.9, 0.05, 0.05}, 2);
    const PopulationBaseline base = population_baseline(ds);
    CHECK(std::abs(base.mean_age - 55.0) < 1.0);
    CHECK(std::abs(base.mae(ds, Split::test) - 17.5) < 1.0);

    Dataset single = generate_dataset(1, cfg, 3);
    single.records[0].rec.age = 30.0;
    const PopulationBaseline one = population_baseline(single);
    CHECK(one.mean_age == 30.0);
    CHECK(one.mae(single, Split::train) == 0.0);
}

TEST_CASE("dataset file round trip") {
    const GeneratorConfig cfg;
    Dataset ds = generate_dataset(25, cfg, 13);
    split_dataset(ds, {0.8, 0.1, 0.1}, 13);
    const std::string path = (std::filesystem::temp_directory_path() / "jd_test_ds.jdds").string();
    save_dataset(ds, path);
    const Dataset loaded = load_dataset(path);
    CHECK(loaded.seed == ds.seed);
    CHECK(loaded.config.side == ds.config.side);
    REQUIRE(loaded.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(loaded.records[i].subject_id == ds.records[i].subject_id);
        CHECK(loaded.records[i].split == ds.records[i].split);
        CHECK(loaded.records[i].rec.age == ds.records[i].rec.age);
        CHECK(loaded.records[i].rec.sex == ds.records[i].rec.sex);
        CHECK(std::memcmp(loaded.records[i].rec.image.data(), ds.records[i].rec.image.data(),
                          sizeof(float) * ds.records[i].rec.image.size()) == 0);
    }
    // re-save is byte-identical
    const std::string path2 = path + ".resave";
    save_dataset(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("generator config validation") {
    GeneratorConfig cfg;
    cfg.radius_max = 9.0;  // >= side/2
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GeneratorConfig{};
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GeneratorConfig{};
    cfg.age_lo = cfg.age_hi;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(generate_dataset(0, GeneratorConfig{}, 1), std::invalid_argument);
}
