#ifndef JOINTDIFF_SYNTHDATA_HPP
#define JOINTDIFF_SYNTHDATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace jointdiff {

// One subject: image grid in [-1,1], age in years, sex category.
struct PatientRecord {
    std::vector<float> image;  // side*side row-major
    double age = 0.0;
    int sex = 0;
};

struct GeneratorConfig {
    int side = 16;
    int num_classes = 2;
    double age_lo = 20.0;
    double age_hi = 90.0;
    double radius_min = 2.0;
    double radius_max = 6.0;
    double asymmetry = 0.4;
    double noise_sigma = 0.05;
    double foreground = 0.8;
    double background = -0.8;

    void validate() const;
};

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

struct DatasetRecord {
    uint32_t subject_id = 0;
    Split split = Split::train;
    PatientRecord rec;
};

struct Dataset {
    GeneratorConfig config;
    uint64_t seed = 0;
    std::vector<DatasetRecord> records;

    std::vector<const DatasetRecord*> split_records(Split s) const;
};

// Disk radius grows affinely with age between radius_min and radius_max.
double disk_radius_for_age(double age, const GeneratorConfig& cfg);

// Centered anti-aliased disk plus a lateral intensity offset on the left half
// for class 0 and the right half for class 1, pixel noise, clamp to [-1,1].
PatientRecord render_record(double age, int sex, const GeneratorConfig& cfg, Rng& rng);

// Per subject: sex uniform over classes, age uniform over the range,
// independent by construction. Per-subject seeds derive from (seed, id).
Dataset generate_dataset(int n_subjects, const GeneratorConfig& cfg, uint64_t seed);

// Thresholded pixel count -> disk area -> radius -> age. Throws on an image
// with no foreground pixels.
double oracle_age(const std::vector<float>& image, const GeneratorConfig& cfg);

// Sign of (mean left half - mean right half); ties resolve to class 0.
int oracle_sex(const std::vector<float>& image, const GeneratorConfig& cfg);

// Subject-level partition; every record of one subject lands in one split.
void split_dataset(Dataset& ds, const std::array<double, 3>& fractions, uint64_t seed);

struct PopulationBaseline {
    double mean_age = 0.0;

    double predict() const { return mean_age; }
    // MAE of the constant predictor over a split.
    double mae(const Dataset& ds, Split split) const;
};

PopulationBaseline population_baseline(const Dataset& ds);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace jointdiff

#endif
