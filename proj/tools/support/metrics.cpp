#include "support/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace jointdiff::tools {

RegressionReport regression_metrics(const std::vector<double>& predictions,
                                    const std::vector<double>& targets,
                                    const std::vector<double>* per_prediction_variances) {
    if (predictions.empty()) throw std::invalid_argument("metrics: empty input");
    if (predictions.size() != targets.size()) throw std::invalid_argument("metrics: length mismatch");
    RegressionReport rep;
    rep.n = predictions.size();
    std::vector<double> abs_err(rep.n);
    double mean = 0.0;
    for (size_t i = 0; i < rep.n; ++i) {
        abs_err[i] = std::abs(predictions[i] - targets[i]);
        mean += abs_err[i];
    }
    mean /= static_cast<double>(rep.n);
    rep.mae = mean;
    double ss = 0.0;
    for (double e : abs_err) ss += (e - mean) * (e - mean);
    rep.mae_std = rep.n > 1 ? std::sqrt(ss / static_cast<double>(rep.n - 1)) : 0.0;
    if (per_prediction_variances) {
        if (per_prediction_variances->size() != rep.n)
            throw std::invalid_argument("metrics: variance length mismatch");
        double acc = 0.0;
        for (double v : *per_prediction_variances) acc += v;
        rep.has_variance = true;
        rep.mean_sample_variance = acc / static_cast<double>(rep.n);
    }
    return rep;
}

std::string RegressionReport::table_row(const std::string& label) const {
    char buf[160];
    if (has_variance)
        std::snprintf(buf, sizeof(buf), "%-14s MAE %6.2f +/- %5.2f   mean sample variance %8.2f   (n=%zu)",
                      label.c_str(), mae, mae_std, mean_sample_variance, n);
    else
        std::snprintf(buf, sizeof(buf), "%-14s MAE %6.2f +/- %5.2f   (n=%zu)", label.c_str(), mae,
                      mae_std, n);
    return buf;
}

ClassificationReport classification_metrics(const std::vector<int>& predictions,
                                            const std::vector<int>& targets) {
    if (predictions.empty()) throw std::invalid_argument("metrics: empty input");
    if (predictions.size() != targets.size()) throw std::invalid_argument("metrics: length mismatch");
    ClassificationReport rep;
    rep.n = predictions.size();
    size_t hits = 0;
    for (size_t i = 0; i < rep.n; ++i)
        if (predictions[i] == targets[i]) ++hits;
    rep.accuracy = static_cast<double>(hits) / static_cast<double>(rep.n);
    return rep;
}

std::string ClassificationReport::table_row(const std::string& label) const {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%-14s ACC %6.3f   (n=%zu)", label.c_str(), accuracy, n);
    return buf;
}

double sample_variance(const std::vector<double>& samples) {
    if (samples.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(samples.size() - 1);
}

}  // namespace jointdiff::tools
