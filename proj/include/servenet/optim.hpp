#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "servenet/data.hpp"
#include "servenet/model.hpp"
#include "servenet/rng.hpp"
#include "servenet/tensor.hpp"

namespace servenet {

// Entries drawn i.i.d. from Normal(0, 2/(fan_in + fan_out)). Biases are never
// drawn here; they start at zero.
Tensor xavier_normal_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                          DetRng& rng);

struct AdamConfig {
    double lr0 = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double decay = 0.0001; // inverse-time: lr_t = lr0 / (1 + decay * t)
    double epsilon = 1e-8;
    bool decay_per_epoch = false; // count epochs instead of steps in lr_t
};

// First/second moment estimates per parameter tensor plus the step counter.
// The slot order must match the order in which apply() receives the tensors.
class AdamState {
public:
    AdamState(AdamConfig cfg, const std::vector<const Tensor*>& params);

    // One update: t += 1, m/v moving averages, bias correction, then
    // theta -= lr_t * m_hat / (sqrt(v_hat) + eps).
    void apply(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

    std::uint64_t step_count() const { return t_; }
    double last_lr() const { return last_lr_; }
    void set_epoch(std::uint64_t epoch) { epoch_ = epoch; } // used when decay_per_epoch

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t t_ = 0;
    std::uint64_t epoch_ = 0;
    double last_lr_ = 0.0;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    std::uint64_t rng_seed = 42;
    double dropout_rate = 0.5; // overrides the model config during training
    AdamConfig adam{};
    std::size_t threads = 1;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double loss = 0.0;     // mean sample cross-entropy over the epoch
    double top1 = 0.0;     // train-set accuracy after the epoch, inference mode
    double top5 = 0.0;
    double lr = 0.0;       // learning rate of the epoch's last step
};

using ProgressHook = std::function<void(const EpochRecord&)>;

// Mini-batch training: per-epoch seeded shuffle, mean-over-batch gradients,
// Adam updates, partial final batch kept. The run is a deterministic function
// of (data order, seed, config); per-sample dropout streams are derived from
// (seed, epoch, step, position) so thread count does not affect them.
// A non-finite batch loss raises DivergenceError naming epoch and batch.
std::vector<EpochRecord> train_model(ModelParams& params, const EmbeddingTable& table,
                                     const std::vector<TokenizedService>& data,
                                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                                     const ProgressHook& hook = {});

// One history record as a single-line JSON object.
std::string history_record_json(const EpochRecord& rec);

// Machine-readable history: one JSON object per line.
void write_history_jsonl(const std::filesystem::path& path,
                         const std::vector<EpochRecord>& history);

// Human-readable fixed-width table of the same records.
void write_history_table(const std::filesystem::path& path,
                         const std::vector<EpochRecord>& history);

} // namespace servenet
