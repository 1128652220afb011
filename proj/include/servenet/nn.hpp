#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "servenet/embedding.hpp"
#include "servenet/rng.hpp"
#include "servenet/tensor.hpp"

namespace servenet {

// ---------------------------------------------------------------------------
// Layer parameters
// ---------------------------------------------------------------------------

// k filters of spatial size kh x kw over c_in channels. kh and kw must be odd
// so that zero same-padding is symmetric.
struct Conv2DParams {
    Tensor kernels; // (k, kh, kw, c_in)
    Tensor bias;    // (k)
};

// Fused gate weights over the concatenated [a_prev, x_t] vector, a_prev first.
struct LSTMParams {
    Tensor W_f, W_u, W_o, W_c; // (h, h + n) each
    Tensor b_f, b_u, b_o, b_c; // (h) each
    std::size_t hidden_size = 0;
};

struct DenseParams {
    Tensor W; // (out, in)
    Tensor b; // (out)
};

enum class ConvActivation { relu, linear };
enum class DenseActivation { tanh, softmax, linear };

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

// Row t of the result is the embedding of token t; PAD/OOV map to the
// reserved zero rows. Ids outside the table raise IndexError.
Tensor embed_lookup(std::span<const std::int32_t> tokens, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// 2-D convolution (stride-1 cross-correlation, zero same-padding)
// ---------------------------------------------------------------------------

// x: (H, W, c_in) -> (H, W, k). Same-padding keeps the spatial dims, which
// the downstream reshape depends on.
Tensor conv2d_forward(const Tensor& x, const Conv2DParams& p, ConvActivation activation);

struct Conv2DGradients {
    Tensor d_kernels; // mirrors p.kernels
    Tensor d_bias;    // mirrors p.bias
    Tensor d_input;   // mirrors x
};

// Gradients of the linear (pre-activation) convolution; an activation's
// derivative must already be folded into `upstream` by the caller.
Conv2DGradients conv2d_backward(const Tensor& x, const Conv2DParams& p, const Tensor& upstream);

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

// Everything the backward pass needs about one time step.
struct LSTMStepCache {
    Tensor x_t;      // (n)
    Tensor a_prev;   // (h)
    Tensor c_prev;   // (h)
    Tensor gate_f;   // (h)
    Tensor gate_u;   // (h)
    Tensor gate_o;   // (h)
    Tensor cand;     // (h)  tanh cell candidate
    Tensor c_t;      // (h)
    std::size_t input_index = 0; // position of x_t in the original sequence
};

struct LSTMStepResult {
    Tensor a_t;
    Tensor c_t;
    LSTMStepCache cache;
};

// One cell update:
//   gf = sigmoid(W_f [a_prev, x_t] + b_f)      (forget)
//   gu = sigmoid(W_u [a_prev, x_t] + b_u)      (update)
//   go = sigmoid(W_o [a_prev, x_t] + b_o)      (output)
//   cand = tanh(W_c [a_prev, x_t] + b_c)
//   c_t = gf * c_prev + gu * cand
//   a_t = go * tanh(c_t)
LSTMStepResult lstm_step(const Tensor& x_t, const Tensor& a_prev, const Tensor& c_prev,
                         const LSTMParams& p);

struct LSTMSequenceResult {
    Tensor final_a;                     // (h) hidden state after the last step
    std::vector<LSTMStepCache> caches;  // in traversal order
};

// Runs lstm_step over the rows of xs (T, n), front-to-back or back-to-front.
// Initial hidden and cell states are zero.
LSTMSequenceResult lstm_sequence_forward(const Tensor& xs, const LSTMParams& p, bool reverse);

struct LSTMGradients {
    Tensor dW_f, dW_u, dW_o, dW_c;
    Tensor db_f, db_u, db_o, db_c;
    Tensor d_inputs; // (T, n), rows aligned with the original sequence
};

// Backpropagation through time for a gradient arriving at the final hidden
// state only. `caches` must come from a matching lstm_sequence_forward call.
LSTMGradients lstm_sequence_backward(const std::vector<LSTMStepCache>& caches,
                                     const Tensor& upstream, const LSTMParams& p);

// [forward final hidden ; backward final hidden], length 2h.
Tensor bilstm_forward(const Tensor& xs, const LSTMParams& fwd, const LSTMParams& bwd);

struct BiLSTMForwardResult {
    Tensor output; // (2h)
    LSTMSequenceResult fwd;
    LSTMSequenceResult bwd;
};

// Same as bilstm_forward but keeps both directions' caches for training.
BiLSTMForwardResult bilstm_forward_cached(const Tensor& xs, const LSTMParams& fwd,
                                          const LSTMParams& bwd);

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

// activation(W x + b). Softmax is shifted by the row max before
// exponentiation.
Tensor dense_forward(const Tensor& x, const DenseParams& p, DenseActivation activation);

struct DenseGradients {
    Tensor dW;
    Tensor db;
    Tensor d_input;
};

// `output` is the value dense_forward returned. For softmax the caller must
// pass the fused loss gradient (w.r.t. the logits) as `upstream`; the other
// activations take the gradient w.r.t. the layer output.
DenseGradients dense_backward(const Tensor& x, const DenseParams& p, const Tensor& output,
                              const Tensor& upstream, DenseActivation activation);

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

struct DropoutResult {
    Tensor output;
    Tensor mask; // per-element factor: 0 or 1/(1-rate); all ones in inference
};

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so that
// inference is the exact identity. rate must lie in [0, 1). When rate == 0 or
// training == false no random numbers are consumed.
DropoutResult dropout(const Tensor& x, double rate, DetRng& rng, bool training);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Tensor grad; // (C), gradient w.r.t. the softmax logits: p - onehot(target)
};

// Cross-entropy -log(p_target), p clipped to [1e-12, 1]. `values` holds
// either softmax probabilities or raw logits (from_logits applies the softmax
// here). The returned gradient is the fused softmax+cross-entropy gradient.
LossResult softmax_xent_loss(const Tensor& values, std::size_t target, bool from_logits = false);

} // namespace servenet
