#include "servenet/nn.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "servenet/error.hpp"

namespace servenet {

namespace {

// W (m, n) * v (n) -> (m)
Tensor matvec(const Tensor& W, const Tensor& v) {
    const std::size_t m = W.dim(0);
    const std::size_t n = W.dim(1);
    if (v.rank() != 1 || v.dim(0) != n) {
        throw DimensionError("matvec: incompatible shapes " + W.shape().to_string() + " x " +
                             v.shape().to_string());
    }
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = W.data() + i * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += row[j] * v[j];
        }
        out[i] = acc;
    }
    return out;
}

Tensor concat1d(const Tensor& a, const Tensor& b) {
    Tensor out(Shape{a.size() + b.size()});
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i];
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        out[a.size() + i] = b[i];
    }
    return out;
}

void check_lstm_shapes(const LSTMParams& p) {
    const std::size_t h = p.hidden_size;
    if (h == 0) {
        throw DimensionError("lstm: hidden_size must be >= 1");
    }
    const Shape& ws = p.W_f.shape();
    if (ws.rank() != 2 || ws.dim(0) != h || p.W_u.shape() != ws || p.W_o.shape() != ws ||
        p.W_c.shape() != ws) {
        throw DimensionError("lstm: gate weight shapes disagree, expected (h, h+n) with h=" +
                             std::to_string(h));
    }
    const Shape bs{h};
    if (p.b_f.shape() != bs || p.b_u.shape() != bs || p.b_o.shape() != bs || p.b_c.shape() != bs) {
        throw DimensionError("lstm: gate bias shapes disagree, expected " + bs.to_string());
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

Tensor embed_lookup(std::span<const std::int32_t> tokens, const EmbeddingTable& table) {
    const std::size_t rows = table.row_count();
    const std::size_t n = table.dim;
    Tensor out(Shape{tokens.size(), n});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::int32_t id = tokens[t];
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
            throw IndexError("embed_lookup: token id " + std::to_string(id) +
                             " out of range [0, " + std::to_string(rows) + ")");
        }
        const double* src = table.matrix.data() + static_cast<std::size_t>(id) * n;
        double* dst = out.data() + t * n;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = src[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

Tensor conv2d_forward(const Tensor& x, const Conv2DParams& p, ConvActivation activation) {
    if (x.rank() != 3 || p.kernels.rank() != 4) {
        throw DimensionError("conv2d: expected input (H, W, c_in) and kernels (k, kh, kw, c_in), got " +
                             x.shape().to_string() + " and " + p.kernels.shape().to_string());
    }
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t k = p.kernels.dim(0), kh = p.kernels.dim(1), kw = p.kernels.dim(2);
    if (p.kernels.dim(3) != cin) {
        throw DimensionError("conv2d: channel mismatch, input " + x.shape().to_string() +
                             " vs kernels " + p.kernels.shape().to_string());
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw DimensionError("conv2d: kernel size must be odd for symmetric same-padding, got " +
                             p.kernels.shape().to_string());
    }
    if (kh > H || kw > W) {
        throw DimensionError("conv2d: kernel " + p.kernels.shape().to_string() +
                             " larger than input " + x.shape().to_string());
    }
    if (p.bias.rank() != 1 || p.bias.dim(0) != k) {
        throw DimensionError("conv2d: bias shape " + p.bias.shape().to_string() +
                             " does not match filter count " + std::to_string(k));
    }

    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    Tensor out(Shape{H, W, k});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t f = 0; f < k; ++f) {
                double acc = p.bias[f];
                for (std::size_t di = 0; di < kh; ++di) {
                    const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - ph;
                    if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) {
                        continue; // zero padding
                    }
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - pw;
                        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) {
                            continue;
                        }
                        const double* xr = x.data() +
                            (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * cin;
                        const double* kr = p.kernels.data() + ((f * kh + di) * kw + dj) * cin;
                        for (std::size_t c = 0; c < cin; ++c) {
                            acc += xr[c] * kr[c];
                        }
                    }
                }
                out.at(i, j, f) = activation == ConvActivation::relu ? relu(acc) : acc;
            }
        }
    }
    return out;
}

Conv2DGradients conv2d_backward(const Tensor& x, const Conv2DParams& p, const Tensor& upstream) {
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t k = p.kernels.dim(0), kh = p.kernels.dim(1), kw = p.kernels.dim(2);
    if (upstream.rank() != 3 || upstream.dim(0) != H || upstream.dim(1) != W ||
        upstream.dim(2) != k) {
        throw DimensionError("conv2d_backward: upstream shape " + upstream.shape().to_string() +
                             " does not match output (" + std::to_string(H) + ", " +
                             std::to_string(W) + ", " + std::to_string(k) + ")");
    }
    if (p.kernels.dim(3) != cin) {
        throw DimensionError("conv2d_backward: channel mismatch, input " + x.shape().to_string() +
                             " vs kernels " + p.kernels.shape().to_string());
    }

    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    Conv2DGradients g{Tensor(p.kernels.shape()), Tensor(p.bias.shape()), Tensor(x.shape())};

    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t f = 0; f < k; ++f) {
                const double up = upstream.at(i, j, f);
                if (up == 0.0) {
                    continue;
                }
                g.d_bias[f] += up;
                for (std::size_t di = 0; di < kh; ++di) {
                    const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - ph;
                    if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) {
                        continue;
                    }
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - pw;
                        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) {
                            continue;
                        }
                        const std::size_t xoff =
                            (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * cin;
                        const std::size_t koff = ((f * kh + di) * kw + dj) * cin;
                        const double* xr = x.data() + xoff;
                        const double* kr = p.kernels.data() + koff;
                        double* dkr = g.d_kernels.data() + koff;
                        double* dxr = g.d_input.data() + xoff;
                        for (std::size_t c = 0; c < cin; ++c) {
                            dkr[c] += up * xr[c];
                            dxr[c] += up * kr[c];
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

LSTMStepResult lstm_step(const Tensor& x_t, const Tensor& a_prev, const Tensor& c_prev,
                         const LSTMParams& p) {
    check_lstm_shapes(p);
    const std::size_t h = p.hidden_size;
    const std::size_t n = p.W_f.dim(1) - h;
    if (x_t.rank() != 1 || x_t.dim(0) != n || a_prev.shape() != Shape{h} ||
        c_prev.shape() != Shape{h}) {
        throw DimensionError("lstm_step: input shapes " + x_t.shape().to_string() + ", " +
                             a_prev.shape().to_string() + ", " + c_prev.shape().to_string() +
                             " do not match params (h=" + std::to_string(h) +
                             ", n=" + std::to_string(n) + ")");
    }

    const Tensor ax = concat1d(a_prev, x_t);
    LSTMStepCache cache;
    cache.x_t = x_t;
    cache.a_prev = a_prev;
    cache.c_prev = c_prev;
    cache.gate_f = sigmoid_map(add(matvec(p.W_f, ax), p.b_f));
    cache.gate_u = sigmoid_map(add(matvec(p.W_u, ax), p.b_u));
    cache.gate_o = sigmoid_map(add(matvec(p.W_o, ax), p.b_o));
    cache.cand = tanh_map(add(matvec(p.W_c, ax), p.b_c));
    cache.c_t = add(mul(cache.gate_f, c_prev), mul(cache.gate_u, cache.cand));
    Tensor a_t = mul(cache.gate_o, tanh_map(cache.c_t));

    LSTMStepResult r;
    r.c_t = cache.c_t;
    r.a_t = std::move(a_t);
    r.cache = std::move(cache);
    return r;
}

LSTMSequenceResult lstm_sequence_forward(const Tensor& xs, const LSTMParams& p, bool reverse) {
    if (xs.rank() != 2) {
        throw DimensionError("lstm_sequence_forward: expected (T, n), got " + xs.shape().to_string());
    }
    const std::size_t T = xs.dim(0);
    const std::size_t n = xs.dim(1);
    if (T == 0) {
        throw DataError("lstm_sequence_forward: empty sequence");
    }
    const std::size_t h = p.hidden_size;

    Tensor a(Shape{h});
    Tensor c(Shape{h});
    LSTMSequenceResult result;
    result.caches.reserve(T);
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = reverse ? T - 1 - step : step;
        Tensor x_t(Shape{n});
        const double* row = xs.data() + t * n;
        for (std::size_t j = 0; j < n; ++j) {
            x_t[j] = row[j];
        }
        LSTMStepResult sr = lstm_step(x_t, a, c, p);
        sr.cache.input_index = t;
        a = std::move(sr.a_t);
        c = std::move(sr.c_t);
        result.caches.push_back(std::move(sr.cache));
    }
    result.final_a = std::move(a);
    return result;
}

LSTMGradients lstm_sequence_backward(const std::vector<LSTMStepCache>& caches,
                                     const Tensor& upstream, const LSTMParams& p) {
    if (caches.empty()) {
        throw StateError("lstm_sequence_backward: missing forward caches");
    }
    check_lstm_shapes(p);
    const std::size_t h = p.hidden_size;
    const std::size_t n = p.W_f.dim(1) - h;
    if (upstream.shape() != Shape{h}) {
        throw DimensionError("lstm_sequence_backward: upstream shape " +
                             upstream.shape().to_string() + " != (" + std::to_string(h) + ")");
    }

    // The original sequence length is the largest input index seen; caches
    // cover every step exactly once regardless of traversal direction.
    std::size_t T = 0;
    for (const auto& cache : caches) {
        T = std::max(T, cache.input_index + 1);
    }
    if (caches.size() != T) {
        throw StateError("lstm_sequence_backward: cache list is incomplete");
    }

    LSTMGradients g;
    g.dW_f = Tensor(p.W_f.shape());
    g.dW_u = Tensor(p.W_u.shape());
    g.dW_o = Tensor(p.W_o.shape());
    g.dW_c = Tensor(p.W_c.shape());
    g.db_f = Tensor(p.b_f.shape());
    g.db_u = Tensor(p.b_u.shape());
    g.db_o = Tensor(p.b_o.shape());
    g.db_c = Tensor(p.b_c.shape());
    g.d_inputs = Tensor(Shape{T, n});

    Tensor da = upstream; // gradient w.r.t. a_t of the step being processed
    Tensor dc(Shape{h});  // gradient w.r.t. c_t carried backwards

    for (std::size_t step = caches.size(); step-- > 0;) {
        const LSTMStepCache& cc = caches[step];
        const Tensor tanh_c = tanh_map(cc.c_t);

        // Through a_t = go * tanh(c_t)
        Tensor d_go(Shape{h});
        for (std::size_t i = 0; i < h; ++i) {
            d_go[i] = da[i] * tanh_c[i];
            dc[i] += da[i] * cc.gate_o[i] * (1.0 - tanh_c[i] * tanh_c[i]);
        }

        // Through c_t = gf * c_prev + gu * cand
        Tensor d_gf(Shape{h}), d_gu(Shape{h}), d_cand(Shape{h}), dc_prev(Shape{h});
        for (std::size_t i = 0; i < h; ++i) {
            d_gf[i] = dc[i] * cc.c_prev[i];
            d_gu[i] = dc[i] * cc.cand[i];
            d_cand[i] = dc[i] * cc.gate_u[i];
            dc_prev[i] = dc[i] * cc.gate_f[i];
        }

        // Pre-activation gradients (sigmoid and tanh derivatives).
        Tensor dz_f(Shape{h}), dz_u(Shape{h}), dz_o(Shape{h}), dz_c(Shape{h});
        for (std::size_t i = 0; i < h; ++i) {
            dz_f[i] = d_gf[i] * cc.gate_f[i] * (1.0 - cc.gate_f[i]);
            dz_u[i] = d_gu[i] * cc.gate_u[i] * (1.0 - cc.gate_u[i]);
            dz_o[i] = d_go[i] * cc.gate_o[i] * (1.0 - cc.gate_o[i]);
            dz_c[i] = d_cand[i] * (1.0 - cc.cand[i] * cc.cand[i]);
        }

        // Accumulate parameter gradients and the gradient w.r.t. [a_prev, x_t].
        Tensor dax(Shape{h + n});
        auto accumulate_gate = [&](const Tensor& W, Tensor& dW, Tensor& db, const Tensor& dz) {
            for (std::size_t i = 0; i < h; ++i) {
                const double dzi = dz[i];
                db[i] += dzi;
                const double* wrow = W.data() + i * (h + n);
                double* dwrow = dW.data() + i * (h + n);
                for (std::size_t j = 0; j < h + n; ++j) {
                    double axj = j < h ? cc.a_prev[j] : cc.x_t[j - h];
                    dwrow[j] += dzi * axj;
                    dax[j] += dzi * wrow[j];
                }
            }
        };
        accumulate_gate(p.W_f, g.dW_f, g.db_f, dz_f);
        accumulate_gate(p.W_u, g.dW_u, g.db_u, dz_u);
        accumulate_gate(p.W_o, g.dW_o, g.db_o, dz_o);
        accumulate_gate(p.W_c, g.dW_c, g.db_c, dz_c);

        double* dx_row = g.d_inputs.data() + cc.input_index * n;
        for (std::size_t j = 0; j < n; ++j) {
            dx_row[j] += dax[h + j];
        }
        for (std::size_t i = 0; i < h; ++i) {
            da[i] = dax[i];
            dc[i] = dc_prev[i];
        }
    }
    return g;
}

Tensor bilstm_forward(const Tensor& xs, const LSTMParams& fwd, const LSTMParams& bwd) {
    return bilstm_forward_cached(xs, fwd, bwd).output;
}

BiLSTMForwardResult bilstm_forward_cached(const Tensor& xs, const LSTMParams& fwd,
                                          const LSTMParams& bwd) {
    if (fwd.hidden_size != bwd.hidden_size) {
        throw DimensionError("bilstm: hidden sizes differ, " + std::to_string(fwd.hidden_size) +
                             " vs " + std::to_string(bwd.hidden_size));
    }
    BiLSTMForwardResult r;
    r.fwd = lstm_sequence_forward(xs, fwd, /*reverse=*/false);
    r.bwd = lstm_sequence_forward(xs, bwd, /*reverse=*/true);
    r.output = concat1d(r.fwd.final_a, r.bwd.final_a);
    return r;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Tensor dense_forward(const Tensor& x, const DenseParams& p, DenseActivation activation) {
    if (p.W.rank() != 2 || p.b.rank() != 1 || p.b.dim(0) != p.W.dim(0)) {
        throw DimensionError("dense: inconsistent params W " + p.W.shape().to_string() + ", b " +
                             p.b.shape().to_string());
    }
    Tensor z = add(matvec(p.W, x), p.b);
    switch (activation) {
        case DenseActivation::linear:
            return z;
        case DenseActivation::tanh:
            return tanh_map(z);
        case DenseActivation::softmax: {
            double zmax = z[0];
            for (std::size_t i = 1; i < z.size(); ++i) {
                zmax = std::max(zmax, z[i]);
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                z[i] = std::exp(z[i] - zmax);
                sum += z[i];
            }
            for (std::size_t i = 0; i < z.size(); ++i) {
                z[i] /= sum;
            }
            return z;
        }
    }
    throw ParameterError("dense_forward: unknown activation");
}

DenseGradients dense_backward(const Tensor& x, const DenseParams& p, const Tensor& output,
                              const Tensor& upstream, DenseActivation activation) {
    const std::size_t out_n = p.W.dim(0);
    const std::size_t in_n = p.W.dim(1);
    if (upstream.shape() != Shape{out_n} || x.shape() != Shape{in_n}) {
        throw DimensionError("dense_backward: shape mismatch, upstream " +
                             upstream.shape().to_string() + ", x " + x.shape().to_string() +
                             ", W " + p.W.shape().to_string());
    }

    // Gradient w.r.t. the pre-activation z.
    Tensor dz(Shape{out_n});
    switch (activation) {
        case DenseActivation::tanh:
            for (std::size_t i = 0; i < out_n; ++i) {
                dz[i] = upstream[i] * (1.0 - output[i] * output[i]);
            }
            break;
        case DenseActivation::linear:
        case DenseActivation::softmax:
            // Softmax is trained through the fused cross-entropy gradient, so
            // the upstream already is d(loss)/d(logits).
            for (std::size_t i = 0; i < out_n; ++i) {
                dz[i] = upstream[i];
            }
            break;
    }

    DenseGradients g{Tensor(p.W.shape()), Tensor(p.b.shape()), Tensor(Shape{in_n})};
    for (std::size_t i = 0; i < out_n; ++i) {
        const double dzi = dz[i];
        g.db[i] = dzi;
        const double* wrow = p.W.data() + i * in_n;
        double* dwrow = g.dW.data() + i * in_n;
        for (std::size_t j = 0; j < in_n; ++j) {
            dwrow[j] = dzi * x[j];
            g.d_input[j] += dzi * wrow[j];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

DropoutResult dropout(const Tensor& x, double rate, DetRng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    DropoutResult r;
    if (!training || rate == 0.0) {
        r.output = x;
        r.mask = Tensor::filled(x.shape(), 1.0);
        return r;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    r.mask = Tensor(x.shape());
    r.output = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.uniform01() >= rate ? keep_scale : 0.0;
        r.mask[i] = m;
        r.output[i] = x[i] * m;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

LossResult softmax_xent_loss(const Tensor& values, std::size_t target, bool from_logits) {
    if (values.rank() != 1) {
        throw DimensionError("softmax_xent_loss: expected rank-1 input, got " +
                             values.shape().to_string());
    }
    const std::size_t C = values.dim(0);
    if (target >= C) {
        throw IndexError("softmax_xent_loss: target " + std::to_string(target) +
                         " out of range [0, " + std::to_string(C) + ")");
    }

    Tensor p = values;
    if (from_logits) {
        double zmax = p[0];
        for (std::size_t i = 1; i < C; ++i) {
            zmax = std::max(zmax, p[i]);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < C; ++i) {
            p[i] = std::exp(p[i] - zmax);
            sum += p[i];
        }
        for (std::size_t i = 0; i < C; ++i) {
            p[i] /= sum;
        }
    }

    // NaN must survive the clip so the training loop's divergence guard sees
    // a non-finite loss instead of a silent zero.
    const double pt = p[target];
    const double clipped = std::isnan(pt) ? pt : std::min(1.0, std::max(pt, 1e-12));
    LossResult r;
    r.loss = -std::log(clipped);
    r.grad = p;
    r.grad[target] -= 1.0;
    return r;
}

} // namespace servenet
