#include "servenet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "servenet/error.hpp"
#include "servenet/metrics.hpp"

namespace servenet {

Tensor xavier_normal_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                          DetRng& rng) {
    if (fan_in == 0 || fan_out == 0) {
        throw ParameterError("xavier_normal_init: fans must be >= 1");
    }
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal(0.0, stddev);
    }
    return t;
}

AdamState::AdamState(AdamConfig cfg, const std::vector<const Tensor*>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void AdamState::apply(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("adam: expected " + std::to_string(m_.size()) +
                             " tensors, got " + std::to_string(params.size()) + " params and " +
                             std::to_string(grads.size()) + " grads");
    }
    t_ += 1;
    const double tick = static_cast<double>(cfg_.decay_per_epoch ? epoch_ : t_);
    const double lr_t = cfg_.lr0 / (1.0 + cfg_.decay * tick);
    last_lr_ = lr_t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& theta = *params[k];
        const Tensor& g = *grads[k];
        if (theta.shape() != m_[k].shape() || g.shape() != m_[k].shape()) {
            throw DimensionError("adam: tensor " + std::to_string(k) + " shape mismatch, param " +
                                 theta.shape().to_string() + ", grad " + g.shape().to_string() +
                                 ", state " + m_[k].shape().to_string());
        }
        double* m = m_[k].data();
        double* v = v_[k].data();
        double* th = theta.data();
        const double* gd = g.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gd[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            th[i] -= lr_t * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
        }
    }
}

namespace {

// Dropout stream for one sample, independent of how samples are spread over
// threads.
std::uint64_t sample_dropout_seed(std::uint64_t base, std::size_t epoch, std::size_t step,
                                  std::size_t position) {
    std::uint64_t s = splitmix64(base ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
    s = splitmix64(s ^ (0xBF58476D1CE4E5B9ULL * (step + 1)));
    return splitmix64(s ^ (0x94D049BB133111EBULL * (position + 1)));
}

void accumulate_grads(ModelGradients& acc, const ModelGradients& delta) {
    auto dst = param_entries(acc);
    auto src = param_entries(delta);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        add_inplace(*dst[i].second, *src[i].second);
    }
}

void scale_grads(ModelGradients& g, double factor) {
    for (auto& [name, tensor] : param_entries(g)) {
        scale_inplace(*tensor, factor);
    }
}

struct BatchResult {
    ModelGradients grads;
    double loss_sum = 0.0;
};

} // namespace

std::vector<EpochRecord> train_model(ModelParams& params, const EmbeddingTable& table,
                                     const std::vector<TokenizedService>& data,
                                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                                     const ProgressHook& hook) {
    if (data.empty()) {
        throw DataError("train: empty dataset");
    }
    if (tcfg.epochs == 0 || tcfg.batch_size == 0) {
        throw ParameterError("train: epochs and batch_size must be >= 1");
    }
    for (const TokenizedService& s : data) {
        if (s.label >= mcfg.num_classes) {
            throw DataError("train: label " + std::to_string(s.label) + " out of range [0, " +
                            std::to_string(mcfg.num_classes) + ")");
        }
    }

    ModelConfig run_cfg = mcfg;
    run_cfg.dropout_rate = tcfg.dropout_rate;
    validate_config(run_cfg);

    auto entry_ptrs = param_entries(params);
    std::vector<Tensor*> param_ptrs;
    std::vector<const Tensor*> param_cptrs;
    for (auto& [name, tensor] : entry_ptrs) {
        param_ptrs.push_back(tensor);
        param_cptrs.push_back(tensor);
    }
    AdamState adam(tcfg.adam, param_cptrs);

    DetRng shuffle_rng(tcfg.rng_seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    const std::size_t n_batches = (data.size() + tcfg.batch_size - 1) / tcfg.batch_size;
    std::vector<EpochRecord> history;
    history.reserve(tcfg.epochs);
    std::size_t global_step = 0;

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        adam.set_epoch(epoch);
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0;

        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t lo = b * tcfg.batch_size;
            const std::size_t hi = std::min(lo + tcfg.batch_size, data.size());
            const std::size_t count = hi - lo;

            auto run_range = [&](std::size_t from, std::size_t to, BatchResult& out) {
                out.grads = make_zero_grads(run_cfg);
                for (std::size_t i = from; i < to; ++i) {
                    const TokenizedService& sample = data[order[i]];
                    DetRng drop_rng(sample_dropout_seed(tcfg.rng_seed, epoch, global_step, i - lo));
                    ModelBackwardResult r =
                        model_backward(sample.tokens, sample.label, table, params, run_cfg,
                                       run_cfg.dropout_rate > 0.0 ? &drop_rng : nullptr);
                    accumulate_grads(out.grads, r.grads);
                    out.loss_sum += r.loss;
                }
            };

            const std::size_t n_threads = std::max<std::size_t>(1, std::min(tcfg.threads, count));
            std::vector<std::pair<std::size_t, std::size_t>> ranges;
            const std::size_t chunk = (count + n_threads - 1) / n_threads;
            for (std::size_t from = lo; from < hi; from += chunk) {
                ranges.emplace_back(from, std::min(from + chunk, hi));
            }

            std::vector<BatchResult> partials(ranges.size());
            if (ranges.size() == 1) {
                run_range(ranges[0].first, ranges[0].second, partials[0]);
            } else {
                std::vector<std::thread> workers;
                workers.reserve(ranges.size());
                for (std::size_t w = 0; w < ranges.size(); ++w) {
                    workers.emplace_back(run_range, ranges[w].first, ranges[w].second,
                                         std::ref(partials[w]));
                }
                for (std::thread& w : workers) {
                    w.join();
                }
            }

            // Reduce partials in chunk order; chunks are contiguous sample
            // ranges, so the reduction order is fixed for a given thread count.
            BatchResult total = std::move(partials[0]);
            for (std::size_t w = 1; w < partials.size(); ++w) {
                accumulate_grads(total.grads, partials[w].grads);
                total.loss_sum += partials[w].loss_sum;
            }

            const double batch_loss = total.loss_sum / static_cast<double>(count);
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(b + 1));
            }
            scale_grads(total.grads, 1.0 / static_cast<double>(count));

            std::vector<const Tensor*> grad_ptrs;
            for (auto& [name, tensor] : param_entries(total.grads)) {
                grad_ptrs.push_back(tensor);
            }
            adam.apply(param_ptrs, grad_ptrs);

            epoch_loss_sum += total.loss_sum;
            ++global_step;
        }

        // Post-epoch train accuracy in inference mode.
        Tensor probs(Shape{data.size(), run_cfg.num_classes});
        std::vector<std::size_t> targets(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            Tensor p = model_forward(data[i].tokens, table, params, run_cfg, nullptr);
            for (std::size_t c = 0; c < run_cfg.num_classes; ++c) {
                probs.at(i, c) = p[c];
            }
            targets[i] = data[i].label;
        }
        PredictionBatch batch{std::move(probs), std::move(targets), {}};

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = epoch_loss_sum / static_cast<double>(data.size());
        rec.top1 = topn_accuracy(batch, 1);
        rec.top5 = topn_accuracy(batch, std::min<std::size_t>(5, run_cfg.num_classes));
        rec.lr = adam.last_lr();
        history.push_back(rec);
        if (hook) {
            hook(rec);
        }
    }
    return history;
}

std::string history_record_json(const EpochRecord& rec) {
    // Field order fixed by hand so history files are byte-stable.
    std::ostringstream os;
    os << "{\"epoch\":" << rec.epoch;
    auto put = [&os](const char* key, double v) {
        os << ",\"" << key << "\":" << nlohmann::json(v).dump();
    };
    put("loss", rec.loss);
    put("top1", rec.top1);
    put("top5", rec.top5);
    put("lr", rec.lr);
    os << "}";
    return os.str();
}

void write_history_jsonl(const std::filesystem::path& path,
                         const std::vector<EpochRecord>& history) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw IoError("history: cannot open '" + path.string() + "' for writing");
    }
    for (const EpochRecord& rec : history) {
        file << history_record_json(rec) << '\n';
    }
    if (!file) {
        throw IoError("history: write to '" + path.string() + "' failed");
    }
}

void write_history_table(const std::filesystem::path& path,
                         const std::vector<EpochRecord>& history) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw IoError("history: cannot open '" + path.string() + "' for writing");
    }
    file << "epoch        loss    top1    top5          lr\n";
    for (const EpochRecord& rec : history) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%5zu  %10.6f  %6.2f  %6.2f  %10.8f\n", rec.epoch,
                      rec.loss, rec.top1, rec.top5, rec.lr);
        file << buf;
    }
    if (!file) {
        throw IoError("history: write to '" + path.string() + "' failed");
    }
}

} // namespace servenet
