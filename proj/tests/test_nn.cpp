#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "servenet/error.hpp"
#include "servenet/nn.hpp"
#include "test_helpers.hpp"

using namespace servenet;
using servenet::testing::check_gradient_fd;
using servenet::testing::random_tensor;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

// Six nested loops over an explicitly zero-padded copy of the input.
Tensor conv_oracle(const Tensor& x, const Conv2DParams& p) {
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t k = p.kernels.dim(0), kh = p.kernels.dim(1), kw = p.kernels.dim(2);
    const std::size_t ph = kh / 2, pw = kw / 2;

    Tensor padded(Shape{H + 2 * ph, W + 2 * pw, cin});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t c = 0; c < cin; ++c) {
                padded.at(i + ph, j + pw, c) = x.at(i, j, c);
            }
        }
    }
    Tensor out(Shape{H, W, k});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t f = 0; f < k; ++f) {
                double acc = p.bias[f];
                for (std::size_t di = 0; di < kh; ++di) {
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        for (std::size_t c = 0; c < cin; ++c) {
                            acc += padded.at(i + di, j + dj, c) *
                                   p.kernels.data()[((f * kh + di) * kw + dj) * cin + c];
                        }
                    }
                }
                out.at(i, j, f) = acc;
            }
        }
    }
    return out;
}

// Scalar-loop transcription of the five gate/cell/hidden equations.
struct OracleState {
    std::vector<double> a, c;
};

void lstm_oracle_step(const std::vector<double>& x, OracleState& s, const LSTMParams& p) {
    const std::size_t h = p.hidden_size;
    const std::size_t n = x.size();
    std::vector<double> ax(h + n);
    for (std::size_t i = 0; i < h; ++i) {
        ax[i] = s.a[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
        ax[h + j] = x[j];
    }
    auto affine = [&](const Tensor& W, const Tensor& b, std::size_t i) {
        double z = b[i];
        for (std::size_t j = 0; j < h + n; ++j) {
            z += W.at(i, j) * ax[j];
        }
        return z;
    };
    for (std::size_t i = 0; i < h; ++i) {
        const double gf = 1.0 / (1.0 + std::exp(-affine(p.W_f, p.b_f, i)));
        const double gu = 1.0 / (1.0 + std::exp(-affine(p.W_u, p.b_u, i)));
        const double go = 1.0 / (1.0 + std::exp(-affine(p.W_o, p.b_o, i)));
        const double cand = std::tanh(affine(p.W_c, p.b_c, i));
        s.c[i] = gf * s.c[i] + gu * cand;
        s.a[i] = go * std::tanh(s.c[i]);
    }
}

Conv2DParams random_conv(std::size_t k, std::size_t kh, std::size_t kw, std::size_t cin,
                         DetRng& rng) {
    Conv2DParams p;
    p.kernels = random_tensor(Shape{k, kh, kw, cin}, rng, 0.5);
    p.bias = random_tensor(Shape{k}, rng, 0.5);
    return p;
}

LSTMParams random_lstm(std::size_t h, std::size_t n, DetRng& rng, double scale = 0.5) {
    LSTMParams p;
    p.hidden_size = h;
    p.W_f = random_tensor(Shape{h, h + n}, rng, scale);
    p.W_u = random_tensor(Shape{h, h + n}, rng, scale);
    p.W_o = random_tensor(Shape{h, h + n}, rng, scale);
    p.W_c = random_tensor(Shape{h, h + n}, rng, scale);
    p.b_f = random_tensor(Shape{h}, rng, scale);
    p.b_u = random_tensor(Shape{h}, rng, scale);
    p.b_o = random_tensor(Shape{h}, rng, scale);
    p.b_c = random_tensor(Shape{h}, rng, scale);
    return p;
}

LSTMParams zero_lstm(std::size_t h, std::size_t n) {
    LSTMParams p;
    p.hidden_size = h;
    p.W_f = Tensor(Shape{h, h + n});
    p.W_u = Tensor(Shape{h, h + n});
    p.W_o = Tensor(Shape{h, h + n});
    p.W_c = Tensor(Shape{h, h + n});
    p.b_f = Tensor(Shape{h});
    p.b_u = Tensor(Shape{h});
    p.b_o = Tensor(Shape{h});
    p.b_c = Tensor(Shape{h});
    return p;
}

EmbeddingTable tiny_table() {
    EmbeddingTable t;
    t.dim = 2;
    t.matrix = Tensor(Shape{4, 2}); // rows 0/1 reserved zeros
    t.matrix.at(2, 0) = 1.0;        // word row [1, 0]
    t.matrix.at(3, 1) = 1.0;        // word row [0, 1]
    t.vocab["first"] = 2;
    t.vocab["second"] = 3;
    return t;
}

} // namespace

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

TEST_CASE("embed_lookup maps PAD to zero rows") {
    EmbeddingTable t = tiny_table();
    std::vector<std::int32_t> pads(7, EmbeddingTable::kPadId);
    Tensor e = embed_lookup(pads, t);
    CHECK(e.shape() == Shape{7, 2});
    for (double v : e.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("embed_lookup is a permutation lookup") {
    EmbeddingTable t = tiny_table();
    std::vector<std::int32_t> tokens{3, 2};
    Tensor e = embed_lookup(tokens, t);
    CHECK(e.at(0, 0) == 0.0);
    CHECK(e.at(0, 1) == 1.0);
    CHECK(e.at(1, 0) == 1.0);
    CHECK(e.at(1, 1) == 0.0);
}

TEST_CASE("embed_lookup rejects out-of-range ids") {
    EmbeddingTable t = tiny_table();
    std::vector<std::int32_t> bad{4};
    CHECK_THROWS_AS(embed_lookup(bad, t), IndexError);
    std::vector<std::int32_t> neg{-1};
    CHECK_THROWS_AS(embed_lookup(neg, t), IndexError);
}

TEST_CASE("embed_lookup at paper-scale dimensions") {
    DetRng rng(21);
    EmbeddingTable t;
    t.dim = 200;
    t.matrix = random_tensor(Shape{52, 200}, rng);
    std::vector<std::int32_t> tokens(110);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        tokens[i] = static_cast<std::int32_t>(i % 52);
    }
    CHECK(embed_lookup(tokens, t).shape() == Shape{110, 200});
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

TEST_CASE("conv2d zero kernel gives zero output") {
    DetRng rng(31);
    Tensor x = random_tensor(Shape{3, 3, 1}, rng);
    Conv2DParams p;
    p.kernels = Tensor(Shape{1, 3, 3, 1});
    p.bias = Tensor(Shape{1});
    Tensor y = conv2d_forward(x, p, ConvActivation::linear);
    CHECK(y.shape() == Shape{3, 3, 1});
    for (double v : y.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("conv2d delta kernel reproduces the input under same-padding") {
    DetRng rng(32);
    Tensor x = random_tensor(Shape{3, 3, 1}, rng);
    Conv2DParams p;
    p.kernels = Tensor(Shape{1, 3, 3, 1});
    p.kernels.at(0, 1, 1, 0) = 1.0; // center tap
    p.bias = Tensor(Shape{1});
    Tensor y = conv2d_forward(x, p, ConvActivation::linear);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(y.at(i, j, 0) == x.at(i, j, 0));
        }
    }
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    DetRng rng(33);
    Tensor x = random_tensor(Shape{5, 4, 2}, rng);
    Conv2DParams p = random_conv(3, 3, 3, 2, rng);
    Tensor got = conv2d_forward(x, p, ConvActivation::linear);
    Tensor want = conv_oracle(x, p);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("conv2d same-padding preserves spatial shape for odd kernels") {
    DetRng rng(34);
    for (std::size_t ks : {1u, 3u, 5u}) {
        Tensor x = random_tensor(Shape{6, 7, 2}, rng);
        Conv2DParams p = random_conv(2, ks, ks, 2, rng);
        CHECK(conv2d_forward(x, p, ConvActivation::relu).shape() == Shape{6, 7, 2});
    }
}

TEST_CASE("conv2d rejects channel mismatch and even kernels") {
    DetRng rng(35);
    Tensor x = random_tensor(Shape{4, 4, 2}, rng);
    Conv2DParams wrong_cin = random_conv(1, 3, 3, 3, rng);
    CHECK_THROWS_AS(conv2d_forward(x, wrong_cin, ConvActivation::linear), DimensionError);
    Conv2DParams even;
    even.kernels = Tensor(Shape{1, 2, 2, 2});
    even.bias = Tensor(Shape{1});
    CHECK_THROWS_AS(conv2d_forward(x, even, ConvActivation::linear), DimensionError);
    Conv2DParams too_big = random_conv(1, 5, 5, 2, rng);
    CHECK_THROWS_AS(conv2d_forward(x, too_big, ConvActivation::linear), DimensionError);
}

TEST_CASE("conv2d_backward zero upstream means zero gradients") {
    DetRng rng(36);
    Tensor x = random_tensor(Shape{4, 4, 2}, rng);
    Conv2DParams p = random_conv(2, 3, 3, 2, rng);
    Conv2DGradients g = conv2d_backward(x, p, Tensor(Shape{4, 4, 2}));
    for (double v : g.d_kernels.values()) {
        CHECK(v == 0.0);
    }
    for (double v : g.d_bias.values()) {
        CHECK(v == 0.0);
    }
    for (double v : g.d_input.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("conv2d_backward bias gradient is the upstream sum per filter") {
    DetRng rng(37);
    Tensor x = random_tensor(Shape{4, 5, 2}, rng);
    Conv2DParams p = random_conv(3, 3, 3, 2, rng);
    Tensor upstream = random_tensor(Shape{4, 5, 3}, rng);
    Conv2DGradients g = conv2d_backward(x, p, upstream);
    for (std::size_t f = 0; f < 3; ++f) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 5; ++j) {
                sum += upstream.at(i, j, f);
            }
        }
        CHECK(g.d_bias[f] == doctest::Approx(sum).epsilon(1e-12));
    }
}

TEST_CASE("conv2d_backward matches finite differences") {
    DetRng rng(38);
    Tensor x = random_tensor(Shape{4, 4, 1}, rng);
    Conv2DParams p = random_conv(1, 3, 3, 1, rng);
    Tensor upstream = random_tensor(Shape{4, 4, 1}, rng);

    // Scalar objective: sum(conv(x, p) * upstream).
    auto loss = [&]() {
        Tensor y = conv2d_forward(x, p, ConvActivation::linear);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            acc += y[i] * upstream[i];
        }
        return acc;
    };
    Conv2DGradients g = conv2d_backward(x, p, upstream);
    CHECK(check_gradient_fd(p.kernels, g.d_kernels, loss) < 1e-4);
    CHECK(check_gradient_fd(p.bias, g.d_bias, loss) < 1e-4);
    CHECK(check_gradient_fd(x, g.d_input, loss) < 1e-4);
}

TEST_CASE("conv2d_backward validates upstream shape") {
    DetRng rng(39);
    Tensor x = random_tensor(Shape{4, 4, 1}, rng);
    Conv2DParams p = random_conv(2, 3, 3, 1, rng);
    CHECK_THROWS_AS(conv2d_backward(x, p, Tensor(Shape{4, 4, 1})), DimensionError);
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

TEST_CASE("lstm_step with all-zero parameters keeps zero states") {
    LSTMParams p = zero_lstm(3, 2);
    Tensor a(Shape{3});
    Tensor c(Shape{3});
    Tensor x(Shape{2}, {0.7, -0.3});
    for (int step = 0; step < 4; ++step) {
        LSTMStepResult r = lstm_step(x, a, c, p);
        for (double v : r.a_t.values()) {
            CHECK(v == 0.0);
        }
        for (double v : r.c_t.values()) {
            CHECK(v == 0.0);
        }
        // gates must still be 0.5: sigmoid(0)
        for (double v : r.cache.gate_f.values()) {
            CHECK(v == 0.5);
        }
        a = r.a_t;
        c = r.c_t;
    }
}

TEST_CASE("lstm_step hand-computed saturated candidate") {
    // h = n = 1, all weights zero, b_c so large that cand ~= 1:
    // gates = 0.5, c = 0.5 * 0 + 0.5 * 1 = 0.5, a = 0.5 * tanh(0.5).
    LSTMParams p = zero_lstm(1, 1);
    p.b_c[0] = 100.0;
    Tensor x(Shape{1}, {0.0});
    LSTMStepResult r = lstm_step(x, Tensor(Shape{1}), Tensor(Shape{1}), p);
    CHECK(r.c_t[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.a_t[0] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));
}

TEST_CASE("lstm_step matches the scalar-loop oracle over two steps") {
    DetRng rng(41);
    LSTMParams p = random_lstm(3, 2, rng);
    OracleState s{std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)};
    Tensor a(Shape{3});
    Tensor c(Shape{3});
    for (int step = 0; step < 2; ++step) {
        Tensor x = random_tensor(Shape{2}, rng);
        lstm_oracle_step({x[0], x[1]}, s, p);
        LSTMStepResult r = lstm_step(x, a, c, p);
        a = r.a_t;
        c = r.c_t;
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs(a[i] - s.a[i]) < 1e-12);
            CHECK(std::abs(c[i] - s.c[i]) < 1e-12);
        }
    }
}

TEST_CASE("lstm_step rejects mismatched dimensions") {
    DetRng rng(42);
    LSTMParams p = random_lstm(3, 2, rng);
    CHECK_THROWS_AS(lstm_step(Tensor(Shape{5}), Tensor(Shape{3}), Tensor(Shape{3}), p),
                    DimensionError);
    CHECK_THROWS_AS(lstm_step(Tensor(Shape{2}), Tensor(Shape{4}), Tensor(Shape{3}), p),
                    DimensionError);
}

TEST_CASE("lstm gate ranges and bounded cell growth") {
    DetRng rng(43);
    LSTMParams p = random_lstm(4, 3, rng, 1.5);
    Tensor xs = random_tensor(Shape{10, 3}, rng, 2.0);
    LSTMSequenceResult r = lstm_sequence_forward(xs, p, false);
    for (std::size_t t = 0; t < r.caches.size(); ++t) {
        const LSTMStepCache& cache = r.caches[t];
        for (const Tensor* gate : {&cache.gate_f, &cache.gate_u, &cache.gate_o}) {
            for (double v : gate->values()) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
        for (double v : cache.cand.values()) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
        for (double v : cache.c_t.values()) {
            CHECK(std::abs(v) <= static_cast<double>(t + 1));
        }
    }
}

TEST_CASE("lstm_sequence_forward with one step reduces to lstm_step") {
    DetRng rng(44);
    LSTMParams p = random_lstm(3, 2, rng);
    Tensor xs = random_tensor(Shape{1, 2}, rng);
    Tensor x0(Shape{2}, {xs.at(0, 0), xs.at(0, 1)});
    LSTMStepResult single = lstm_step(x0, Tensor(Shape{3}), Tensor(Shape{3}), p);
    LSTMSequenceResult seq = lstm_sequence_forward(xs, p, false);
    CHECK(seq.final_a == single.a_t);
    CHECK(seq.caches.size() == 1);
}

TEST_CASE("reverse traversal equals forward traversal of the reversed sequence") {
    DetRng rng(45);
    LSTMParams p = random_lstm(3, 2, rng);
    Tensor xs = random_tensor(Shape{5, 2}, rng);
    Tensor rev(Shape{5, 2});
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t j = 0; j < 2; ++j) {
            rev.at(t, j) = xs.at(4 - t, j);
        }
    }
    CHECK(lstm_sequence_forward(xs, p, true).final_a ==
          lstm_sequence_forward(rev, p, false).final_a);
}

TEST_CASE("lstm_sequence_forward at paper-scale dimensions") {
    DetRng rng(46);
    LSTMParams p = random_lstm(1024, 200, rng, 0.02);
    Tensor xs = random_tensor(Shape{110, 200}, rng);
    CHECK(lstm_sequence_forward(xs, p, false).final_a.shape() == Shape{1024});
}

TEST_CASE("bilstm with zero parameters yields the zero vector of length 2h") {
    Tensor xs = Tensor(Shape{4, 2});
    Tensor out = bilstm_forward(xs, zero_lstm(3, 2), zero_lstm(3, 2));
    CHECK(out.shape() == Shape{6});
    for (double v : out.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("bilstm halves agree on a palindromic input with shared params") {
    DetRng rng(47);
    LSTMParams p = random_lstm(3, 2, rng);
    Tensor xs(Shape{5, 2});
    for (std::size_t t = 0; t < 5; ++t) {
        const std::size_t mirror = std::min(t, 4 - t);
        xs.at(t, 0) = 0.3 * static_cast<double>(mirror + 1);
        xs.at(t, 1) = -0.2 * static_cast<double>(mirror + 1);
    }
    Tensor out = bilstm_forward(xs, p, p);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out[i] == doctest::Approx(out[3 + i]).epsilon(1e-12));
    }
}

TEST_CASE("bilstm output length is 2 * hidden_size at h=1024") {
    DetRng rng(48);
    LSTMParams fwd = random_lstm(1024, 8, rng, 0.02);
    LSTMParams bwd = random_lstm(1024, 8, rng, 0.02);
    Tensor xs = random_tensor(Shape{3, 8}, rng);
    CHECK(bilstm_forward(xs, fwd, bwd).shape() == Shape{2048});
}

TEST_CASE("bilstm rejects hidden-size mismatch") {
    DetRng rng(49);
    LSTMParams fwd = random_lstm(3, 2, rng);
    LSTMParams bwd = random_lstm(4, 2, rng);
    Tensor xs = random_tensor(Shape{4, 2}, rng);
    CHECK_THROWS_AS(bilstm_forward(xs, fwd, bwd), DimensionError);
}

TEST_CASE("lstm_sequence_backward zero upstream gives zero gradients") {
    DetRng rng(50);
    LSTMParams p = random_lstm(3, 2, rng);
    Tensor xs = random_tensor(Shape{4, 2}, rng);
    LSTMSequenceResult fwd = lstm_sequence_forward(xs, p, false);
    LSTMGradients g = lstm_sequence_backward(fwd.caches, Tensor(Shape{3}), p);
    for (const Tensor* t : {&g.dW_f, &g.dW_u, &g.dW_o, &g.dW_c, &g.db_f, &g.db_u, &g.db_o,
                            &g.db_c, &g.d_inputs}) {
        for (double v : t->values()) {
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("lstm_sequence_backward matches finite differences") {
    DetRng rng(51);
    LSTMParams p = random_lstm(2, 2, rng);
    Tensor xs = random_tensor(Shape{3, 2}, rng);
    Tensor upstream = random_tensor(Shape{2}, rng);

    auto loss = [&]() {
        LSTMSequenceResult r = lstm_sequence_forward(xs, p, false);
        double acc = 0.0;
        for (std::size_t i = 0; i < upstream.size(); ++i) {
            acc += r.final_a[i] * upstream[i];
        }
        return acc;
    };
    LSTMSequenceResult fwd = lstm_sequence_forward(xs, p, false);
    LSTMGradients g = lstm_sequence_backward(fwd.caches, upstream, p);

    CHECK(check_gradient_fd(p.W_f, g.dW_f, loss) < 1e-4);
    CHECK(check_gradient_fd(p.W_u, g.dW_u, loss) < 1e-4);
    CHECK(check_gradient_fd(p.W_o, g.dW_o, loss) < 1e-4);
    CHECK(check_gradient_fd(p.W_c, g.dW_c, loss) < 1e-4);
    CHECK(check_gradient_fd(p.b_f, g.db_f, loss) < 1e-4);
    CHECK(check_gradient_fd(p.b_u, g.db_u, loss) < 1e-4);
    CHECK(check_gradient_fd(p.b_o, g.db_o, loss) < 1e-4);
    CHECK(check_gradient_fd(p.b_c, g.db_c, loss) < 1e-4);
    CHECK(check_gradient_fd(xs, g.d_inputs, loss) < 1e-4);
    CHECK(g.d_inputs.shape() == xs.shape());
}

TEST_CASE("lstm_sequence_backward on the reverse direction matches finite differences") {
    DetRng rng(52);
    LSTMParams p = random_lstm(2, 2, rng);
    Tensor xs = random_tensor(Shape{3, 2}, rng);
    Tensor upstream = random_tensor(Shape{2}, rng);

    auto loss = [&]() {
        LSTMSequenceResult r = lstm_sequence_forward(xs, p, true);
        double acc = 0.0;
        for (std::size_t i = 0; i < upstream.size(); ++i) {
            acc += r.final_a[i] * upstream[i];
        }
        return acc;
    };
    LSTMSequenceResult fwd = lstm_sequence_forward(xs, p, true);
    LSTMGradients g = lstm_sequence_backward(fwd.caches, upstream, p);
    CHECK(check_gradient_fd(p.W_c, g.dW_c, loss) < 1e-4);
    CHECK(check_gradient_fd(xs, g.d_inputs, loss) < 1e-4);
}

TEST_CASE("lstm_sequence_backward without caches is a state error") {
    DetRng rng(53);
    LSTMParams p = random_lstm(2, 2, rng);
    std::vector<LSTMStepCache> empty;
    CHECK_THROWS_AS(lstm_sequence_backward(empty, Tensor(Shape{2}), p), StateError);
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

TEST_CASE("dense softmax of a zero layer is uniform") {
    DenseParams p;
    p.W = Tensor(Shape{50, 10});
    p.b = Tensor(Shape{50});
    Tensor x = Tensor::filled(Shape{10}, 0.37);
    Tensor y = dense_forward(x, p, DenseActivation::softmax);
    for (double v : y.values()) {
        CHECK(v == 1.0 / 50.0);
    }
}

TEST_CASE("dense identity weights with linear activation") {
    DenseParams p;
    p.W = Tensor(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        p.W.at(i, i) = 1.0;
    }
    p.b = Tensor(Shape{3});
    Tensor x(Shape{3}, {0.1, -2.0, 5.0});
    CHECK(dense_forward(x, p, DenseActivation::linear) == x);
}

TEST_CASE("softmax sums to one and is shift invariant") {
    DetRng rng(61);
    DenseParams p;
    p.W = random_tensor(Shape{7, 4}, rng);
    p.b = random_tensor(Shape{7}, rng);
    DenseParams shifted = p;
    for (std::size_t i = 0; i < 7; ++i) {
        shifted.b[i] += 1000.0;
    }
    Tensor x = random_tensor(Shape{4}, rng);
    Tensor y = dense_forward(x, p, DenseActivation::softmax);
    Tensor ys = dense_forward(x, shifted, DenseActivation::softmax);
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(y[i] >= 0.0);
        sum += y[i];
        CHECK(std::abs(y[i] - ys[i]) < 1e-12);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("dense_backward matches finite differences for tanh and linear") {
    DetRng rng(62);
    for (DenseActivation act : {DenseActivation::tanh, DenseActivation::linear}) {
        DenseParams p;
        p.W = random_tensor(Shape{3, 4}, rng);
        p.b = random_tensor(Shape{3}, rng);
        Tensor x = random_tensor(Shape{4}, rng);
        Tensor upstream = random_tensor(Shape{3}, rng);
        auto loss = [&]() {
            Tensor y = dense_forward(x, p, act);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                acc += y[i] * upstream[i];
            }
            return acc;
        };
        Tensor out = dense_forward(x, p, act);
        DenseGradients g = dense_backward(x, p, out, upstream, act);
        CHECK(check_gradient_fd(p.W, g.dW, loss) < 1e-4);
        CHECK(check_gradient_fd(p.b, g.db, loss) < 1e-4);
        CHECK(check_gradient_fd(x, g.d_input, loss) < 1e-4);
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout rate zero is the identity with an all-ones mask") {
    DetRng rng(71);
    Tensor x = random_tensor(Shape{10}, rng);
    DropoutResult r = dropout(x, 0.0, rng, true);
    CHECK(r.output == x);
    for (double m : r.mask.values()) {
        CHECK(m == 1.0);
    }
}

TEST_CASE("dropout in inference mode is the exact identity") {
    DetRng rng(72);
    Tensor x = random_tensor(Shape{64}, rng);
    DropoutResult r = dropout(x, 0.9, rng, false);
    CHECK(r.output == x);
}

TEST_CASE("dropout Monte Carlo: survivor fraction and mean scaling") {
    DetRng rng(73);
    Tensor x = Tensor::filled(Shape{1000000}, 1.0);
    DropoutResult r = dropout(x, 0.5, rng, true);
    std::size_t survivors = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (r.mask[i] != 0.0) {
            ++survivors;
            CHECK(r.mask[i] == 2.0);
        }
        sum += r.output[i];
    }
    const double fraction = static_cast<double>(survivors) / 1e6;
    CHECK(fraction > 0.49);
    CHECK(fraction < 0.51);
    const double mean = sum / 1e6;
    CHECK(mean > 0.98);
    CHECK(mean < 1.02);
}

TEST_CASE("dropout rejects rates outside [0, 1)") {
    DetRng rng(74);
    Tensor x(Shape{3});
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ParameterError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), ParameterError);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

TEST_CASE("cross-entropy of the uniform 50-class distribution is ln 50") {
    Tensor p = Tensor::filled(Shape{50}, 1.0 / 50.0);
    LossResult r = softmax_xent_loss(p, 7);
    CHECK(r.loss == doctest::Approx(3.912023005428146).epsilon(1e-12));
}

TEST_CASE("cross-entropy of a certain correct prediction is zero") {
    Tensor p(Shape{4});
    p[2] = 1.0;
    CHECK(softmax_xent_loss(p, 2).loss == 0.0);
}

TEST_CASE("clipping keeps the loss finite on a confident wrong prediction") {
    Tensor p(Shape{3});
    p[0] = 1.0; // target probability is exactly zero
    LossResult r = softmax_xent_loss(p, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("fused softmax cross-entropy gradient matches finite differences") {
    DetRng rng(81);
    Tensor logits = random_tensor(Shape{6}, rng);
    const std::size_t target = 2;
    LossResult r = softmax_xent_loss(logits, target, /*from_logits=*/true);
    const double step = 1e-5;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double saved = logits[i];
        logits[i] = saved + step;
        const double up = softmax_xent_loss(logits, target, true).loss;
        logits[i] = saved - step;
        const double down = softmax_xent_loss(logits, target, true).loss;
        logits[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        CHECK(std::abs(numeric - r.grad[i]) < 1e-6);
    }
}

TEST_CASE("loss target bounds") {
    Tensor p = Tensor::filled(Shape{5}, 0.2);
    CHECK_THROWS_AS(softmax_xent_loss(p, 5), IndexError);
}

TEST_CASE("a NaN probability propagates to a NaN loss, not a silent zero") {
    Tensor p = Tensor::filled(Shape{3}, std::numeric_limits<double>::quiet_NaN());
    CHECK(std::isnan(softmax_xent_loss(p, 0).loss));
}
