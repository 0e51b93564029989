#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scenemine/dataset.hpp"
#include "scenemine/model.hpp"

namespace scenemine {

/// Training loop fails loudly on divergence instead of emitting NaN curves.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int batch_size = 16;           // 48 at full scale
    double lr0 = 1e-4;
    int patience = 3;              // validation evaluations without improvement
    double lr_decay = 0.1;
    int max_epochs = 30;           // ~60 at full scale
    std::array<double, 3> fractions{0.85, 0.05, 0.10};
    std::uint64_t seed = 0;
    double min_improvement = 1e-4;  // absolute validation-loss improvement
    double min_lr = 1e-7;           // early-stop bound

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (lr0 <= 0.0 || lr_decay <= 0.0 || lr_decay >= 1.0) throw ConfigError("train: bad learning-rate settings");
        if (patience < 1 || max_epochs < 1) throw ConfigError("train: patience and max_epochs must be >= 1");
        const double sum = fractions[0] + fractions[1] + fractions[2];
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("train: split fractions must sum to 1");
    }
};

/// Learning-rate plateau rule: drop by one decade after `patience` consecutive
/// validation evaluations without an improvement above `min_improvement`.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, int patience, double decay, double min_improvement)
        : lr_(lr0), patience_(patience), decay_(decay), min_improvement_(min_improvement) {}

    double lr() const { return lr_; }
    double best() const { return best_; }
    bool improved_last() const { return improved_last_; }

    /// Feeds one validation loss; returns true when the rate was dropped.
    bool observe(double val_loss) {
        improved_last_ = val_loss < best_ - min_improvement_;
        if (improved_last_) {
            best_ = val_loss;
            stale_ = 0;
            return false;
        }
        if (++stale_ >= patience_) {
            lr_ *= decay_;
            stale_ = 0;
            return true;
        }
        return false;
    }

private:
    double lr_;
    int patience_;
    double decay_;
    double min_improvement_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
    bool improved_last_ = false;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
};

inline double mean_loss(const HybridModel& model, const std::vector<Sample>& samples,
                        const std::vector<std::size_t>& indices) {
    if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
    ad::NoGradGuard ng;
    double acc = 0.0;
    for (std::size_t i : indices) acc += model.forward(samples[i]).loss.scalar_value();
    return acc / static_cast<double>(indices.size());
}

/// Shuffled mini-batch training with mean per-batch loss, Adam updates, the
/// plateau schedule, and best-validation checkpoint retention. Deterministic
/// for a fixed (config, dataset, model seed): gradients accumulate in sample
/// order within each batch, single worker.
inline TrainResult train(HybridModel& model, const std::vector<Sample>& samples, const SplitIndices& split,
                         const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
    cfg.validate();
    if (split.train.empty()) throw InputError("train: empty train split");

    Rng shuffle_rng(mix_seed(cfg.seed, 0x7aa1));
    PlateauScheduler sched(cfg.lr0, cfg.patience, cfg.lr_decay, cfg.min_improvement);
    TrainResult result;
    std::vector<std::vector<double>> best_params = model.params().snapshot_values();

    std::vector<std::size_t> order = split.train;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const double inv = 1.0 / static_cast<double>(end - b);
            model.params().zero_grad();
            for (std::size_t i = b; i < end; ++i) {
                const auto fwd = model.forward(samples[order[i]]);
                const double l = fwd.loss.scalar_value();
                if (!std::isfinite(l)) {
                    throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                          samples[order[i]].id());
                }
                epoch_loss += l;
                ad::backward(fwd.loss, inv);  // mean loss over the batch
            }
            model.params().adam_step(sched.lr());
        }
        epoch_loss /= static_cast<double>(order.size());

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss;
        stats.lr = sched.lr();
        stats.val_loss = mean_loss(model, samples, split.val);

        if (!split.val.empty()) {
            sched.observe(stats.val_loss);
            if (stats.val_loss < result.best_val) {
                result.best_val = stats.val_loss;
                result.best_epoch = epoch;
                best_params = model.params().snapshot_values();
            }
        } else {
            // No validation data: retain the latest parameters.
            result.best_epoch = epoch;
            result.best_val = epoch_loss;
            best_params = model.params().snapshot_values();
        }

        result.curve.push_back(stats);
        if (on_epoch) on_epoch(stats);
        if (sched.lr() < cfg.min_lr) {
            result.early_stopped = true;
            break;
        }
    }
    model.params().restore_values(best_params);
    return result;
}

// Loss curves CSV: epoch,train_loss,val_loss,lr

inline std::string curve_to_csv(const std::vector<EpochStats>& curve, const std::string& config_hash) {
    std::string out;
    if (!config_hash.empty()) out += "# config_hash=" + config_hash + "\n";
    out += "epoch,train_loss,val_loss,lr\n";
    for (const auto& e : curve) {
        out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
               format_double(e.lr) + "\n";
    }
    return out;
}

}  // namespace scenemine
