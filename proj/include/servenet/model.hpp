#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "servenet/embedding.hpp"
#include "servenet/nn.hpp"
#include "servenet/rng.hpp"
#include "servenet/tensor.hpp"

namespace servenet {

// Architecture dimensions. Defaults are the full-scale configuration; the
// "toy" preset shrinks every axis so tests and gradient checks run in
// seconds.
struct ModelConfig {
    std::size_t max_len = 110;      // padded description length (mLen)
    std::size_t embed_dim = 200;    // word-vector width (n)
    std::size_t conv1_filters = 64; // k1
    std::size_t conv2_filters = 1;  // k2; must stay 1 so (mLen, n, k2) reshapes to (mLen, n)
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t lstm_hidden = 1024; // h, per direction
    std::size_t dense_hidden = 200;
    std::size_t num_classes = 50;
    double dropout_rate = 0.5;

    bool operator==(const ModelConfig&) const = default;
};

// Desk-scale preset: mLen=6, n=5, k1=2, k2=1, h=3, dense=4, classes=4,
// dropout off.
ModelConfig toy_config();

// Throws ParameterError/DimensionError when any invariant is violated
// (conv2_filters != 1, even kernel, zero extent, dropout outside [0, 1)).
void validate_config(const ModelConfig& cfg);

// All trainable tensors. The embedding table is pretrained and fixed, so it
// is not part of the parameter set.
struct ModelParams {
    Conv2DParams conv1;
    Conv2DParams conv2;
    LSTMParams lstm_fwd;
    LSTMParams lstm_bwd;
    DenseParams fc1;
    DenseParams fc2;
};

// Per-parameter gradients; same field layout and tensor shapes as ModelParams.
using ModelGradients = ModelParams;

// Xavier-normal kernels, zero biases, drawn in the fixed entry order below so
// equal seeds give bit-identical parameter sets.
ModelParams init_params(const ModelConfig& cfg, DetRng& rng);

ModelGradients make_zero_grads(const ModelConfig& cfg);

// Stable (name, tensor) view over the 24 parameter tensors. The order defines
// the checkpoint layout and the Adam slot assignment.
std::vector<std::pair<std::string, Tensor*>> param_entries(ModelParams& p);
std::vector<std::pair<std::string, const Tensor*>> param_entries(const ModelParams& p);

// Full pipeline: embed -> reshape (mLen, n, 1) -> conv1 (relu) -> conv2
// (linear) -> reshape (mLen, n) -> bidirectional LSTM -> (2h) -> dense tanh
// -> dense softmax -> (num_classes). Passing dropout_rng switches to train
// mode, where dropout follows conv1, conv2, the BI-LSTM output, and the first
// dense layer; with no rng the pass is deterministic inference.
Tensor model_forward(std::span<const std::int32_t> tokens, const EmbeddingTable& table,
                     const ModelParams& params, const ModelConfig& cfg,
                     DetRng* dropout_rng = nullptr);

struct ModelBackwardResult {
    double loss = 0.0;
    Tensor probabilities; // softmax output of the forward pass
    ModelGradients grads;
};

// Forward pass with caches plus full backpropagation of the cross-entropy
// loss. Dropout masks drawn in the forward pass are reused on the way back.
ModelBackwardResult model_backward(std::span<const std::int32_t> tokens, std::size_t target,
                                   const EmbeddingTable& table, const ModelParams& params,
                                   const ModelConfig& cfg, DetRng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Binary layout, all integers little-endian:
//   magic   "SRVN" (4 bytes)
//   version u32 (currently 1)
//   header  u32 byte length, then UTF-8 JSON:
//           {"config": {...}, "categories": [...], "rng_seed": u64, "epoch": u32}
//   tensors until EOF, each:
//           u32 name length, name bytes, u32 rank, rank x u64 dims,
//           element-count x f64 values (little-endian IEEE-754)
// Exactly the 24 parameter tensors must be present with the shapes implied by
// the config; anything else is reported as corruption.

struct Checkpoint {
    std::uint32_t version = 1;
    ModelConfig config;
    std::vector<std::string> categories; // class index -> category name
    std::uint64_t rng_seed = 0;
    std::uint32_t epoch = 0;
    ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace servenet
