#ifndef JOINTDIFF_TRAINER_HPP
#define JOINTDIFF_TRAINER_HPP

#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "core/joint.hpp"

namespace jointdiff {

struct TrainConfig {
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double cosine_offset = 0.008;
    DenoiserConfig denoiser;
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 1e-3;
    // Cosine decay of the step size down to learning_rate * lr_final_factor
    // over the epoch budget; 1.0 disables decay.
    double lr_final_factor = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_image = 1.0;
    // Fixed diffusion draws per validation record; more draws cut the
    // variance of the per-epoch validation loss used for model selection.
    int val_draws = 8;
    int threads = 0;  // 0 = hardware concurrency
    std::string precision = "f32";
    uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;  // 0 = before any update
    double train_loss = 0.0;
    double val_loss = 0.0;
    LossTerms val_terms;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Adam training of the joint denoiser with validation-selected parameters.
// Samples are processed in fixed-size chunks whose gradients are reduced in
// chunk order, so results do not depend on the worker count.
Checkpoint train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& cb = nullptr);

namespace detail {

inline void parallel_for(int n_items, int n_threads, const std::function<void(int)>& fn) {
    if (n_items <= 0) return;
    if (n_threads <= 1 || n_items == 1) {
        for (int i = 0; i < n_items; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(n_threads, n_items);
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n_items) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

}  // namespace jointdiff

#endif
