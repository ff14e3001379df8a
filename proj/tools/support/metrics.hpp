#ifndef JOINTDIFF_TOOLS_METRICS_HPP
#define JOINTDIFF_TOOLS_METRICS_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace jointdiff::tools {

struct RegressionReport {
    size_t n = 0;
    double mae = 0.0;
    double mae_std = 0.0;  // std of absolute errors
    bool has_variance = false;
    double mean_sample_variance = 0.0;

    std::string table_row(const std::string& label) const;
};

// MAE mean +/- std; per_prediction_variances (optional) average into the
// mean-sample-variance column.
RegressionReport regression_metrics(const std::vector<double>& predictions,
                                    const std::vector<double>& targets,
                                    const std::vector<double>* per_prediction_variances = nullptr);

struct ClassificationReport {
    size_t n = 0;
    double accuracy = 0.0;

    std::string table_row(const std::string& label) const;
};

ClassificationReport classification_metrics(const std::vector<int>& predictions,
                                            const std::vector<int>& targets);

// Unbiased variance of one prediction's samples.
double sample_variance(const std::vector<double>& samples);

}  // namespace jointdiff::tools

#endif
