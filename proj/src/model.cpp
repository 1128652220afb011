#include "servenet/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "servenet/error.hpp"
#include "servenet/optim.hpp"

namespace servenet {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'R', 'V', 'N'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"max_len", c.max_len},
                {"embed_dim", c.embed_dim},
                {"conv1_filters", c.conv1_filters},
                {"conv2_filters", c.conv2_filters},
                {"kernel_h", c.kernel_h},
                {"kernel_w", c.kernel_w},
                {"lstm_hidden", c.lstm_hidden},
                {"dense_hidden", c.dense_hidden},
                {"num_classes", c.num_classes},
                {"dropout_rate", c.dropout_rate}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.max_len = j.at("max_len").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.conv1_filters = j.at("conv1_filters").get<std::size_t>();
    c.conv2_filters = j.at("conv2_filters").get<std::size_t>();
    c.kernel_h = j.at("kernel_h").get<std::size_t>();
    c.kernel_w = j.at("kernel_w").get<std::size_t>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.dense_hidden = j.at("dense_hidden").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
}

// ---- little-endian primitives ----

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    bool at_end() const { return pos_ >= bytes_.size(); }

    std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
    std::uint64_t u64() { return raw(8); }
    double f64() { return std::bit_cast<double>(raw(8)); }

    std::string str(std::size_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

private:
    std::uint64_t raw(std::size_t n) {
        need(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += n;
        return v;
    }

    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw CorruptionError("checkpoint: truncated at byte " + std::to_string(pos_));
        }
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

LSTMParams make_lstm(std::size_t hidden, std::size_t input) {
    LSTMParams p;
    p.hidden_size = hidden;
    const Shape ws{hidden, hidden + input};
    const Shape bs{hidden};
    p.W_f = Tensor(ws);
    p.W_u = Tensor(ws);
    p.W_o = Tensor(ws);
    p.W_c = Tensor(ws);
    p.b_f = Tensor(bs);
    p.b_u = Tensor(bs);
    p.b_o = Tensor(bs);
    p.b_c = Tensor(bs);
    return p;
}

ModelParams make_param_shapes(const ModelConfig& cfg) {
    ModelParams p;
    p.conv1.kernels = Tensor(Shape{cfg.conv1_filters, cfg.kernel_h, cfg.kernel_w, 1});
    p.conv1.bias = Tensor(Shape{cfg.conv1_filters});
    p.conv2.kernels = Tensor(Shape{cfg.conv2_filters, cfg.kernel_h, cfg.kernel_w, cfg.conv1_filters});
    p.conv2.bias = Tensor(Shape{cfg.conv2_filters});
    p.lstm_fwd = make_lstm(cfg.lstm_hidden, cfg.embed_dim);
    p.lstm_bwd = make_lstm(cfg.lstm_hidden, cfg.embed_dim);
    p.fc1.W = Tensor(Shape{cfg.dense_hidden, 2 * cfg.lstm_hidden});
    p.fc1.b = Tensor(Shape{cfg.dense_hidden});
    p.fc2.W = Tensor(Shape{cfg.num_classes, cfg.dense_hidden});
    p.fc2.b = Tensor(Shape{cfg.num_classes});
    return p;
}

void check_tokens(std::span<const std::int32_t> tokens, const EmbeddingTable& table,
                  const ModelConfig& cfg) {
    if (tokens.size() != cfg.max_len) {
        throw DimensionError("model: token sequence length " + std::to_string(tokens.size()) +
                             " != max_len " + std::to_string(cfg.max_len));
    }
    if (table.dim != cfg.embed_dim) {
        throw DimensionError("model: embedding width " + std::to_string(table.dim) +
                             " != embed_dim " + std::to_string(cfg.embed_dim));
    }
}

} // namespace

ModelConfig toy_config() {
    ModelConfig c;
    c.max_len = 6;
    c.embed_dim = 5;
    c.conv1_filters = 2;
    c.conv2_filters = 1;
    c.kernel_h = 3;
    c.kernel_w = 3;
    c.lstm_hidden = 3;
    c.dense_hidden = 4;
    c.num_classes = 4;
    c.dropout_rate = 0.0;
    return c;
}

void validate_config(const ModelConfig& cfg) {
    if (cfg.max_len == 0 || cfg.embed_dim == 0 || cfg.conv1_filters == 0 ||
        cfg.lstm_hidden == 0 || cfg.dense_hidden == 0 || cfg.num_classes == 0) {
        throw ParameterError("model config: every dimension must be >= 1");
    }
    if (cfg.conv2_filters != 1) {
        throw ParameterError("model config: conv2_filters must be 1 so the conv output "
                             "reshapes to (max_len, embed_dim)");
    }
    if (cfg.kernel_h % 2 == 0 || cfg.kernel_w % 2 == 0) {
        throw ParameterError("model config: kernel size must be odd for same-padding");
    }
    if (cfg.kernel_h > cfg.max_len || cfg.kernel_w > cfg.embed_dim) {
        throw ParameterError("model config: kernel larger than the embedded input");
    }
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0) {
        throw ParameterError("model config: dropout_rate must lie in [0, 1)");
    }
}

ModelParams init_params(const ModelConfig& cfg, DetRng& rng) {
    validate_config(cfg);
    ModelParams p = make_param_shapes(cfg);

    const std::size_t kk = cfg.kernel_h * cfg.kernel_w;
    p.conv1.kernels = xavier_normal_init(p.conv1.kernels.shape(), kk * 1, kk * cfg.conv1_filters, rng);
    p.conv2.kernels = xavier_normal_init(p.conv2.kernels.shape(), kk * cfg.conv1_filters,
                                         kk * cfg.conv2_filters, rng);
    const std::size_t lstm_in = cfg.lstm_hidden + cfg.embed_dim;
    for (LSTMParams* lstm : {&p.lstm_fwd, &p.lstm_bwd}) {
        lstm->W_f = xavier_normal_init(lstm->W_f.shape(), lstm_in, cfg.lstm_hidden, rng);
        lstm->W_u = xavier_normal_init(lstm->W_u.shape(), lstm_in, cfg.lstm_hidden, rng);
        lstm->W_o = xavier_normal_init(lstm->W_o.shape(), lstm_in, cfg.lstm_hidden, rng);
        lstm->W_c = xavier_normal_init(lstm->W_c.shape(), lstm_in, cfg.lstm_hidden, rng);
    }
    p.fc1.W = xavier_normal_init(p.fc1.W.shape(), 2 * cfg.lstm_hidden, cfg.dense_hidden, rng);
    p.fc2.W = xavier_normal_init(p.fc2.W.shape(), cfg.dense_hidden, cfg.num_classes, rng);
    // biases stay zero
    return p;
}

ModelGradients make_zero_grads(const ModelConfig& cfg) { return make_param_shapes(cfg); }

std::vector<std::pair<std::string, Tensor*>> param_entries(ModelParams& p) {
    std::vector<std::pair<std::string, Tensor*>> v;
    v.reserve(24);
    v.emplace_back("conv1.kernels", &p.conv1.kernels);
    v.emplace_back("conv1.bias", &p.conv1.bias);
    v.emplace_back("conv2.kernels", &p.conv2.kernels);
    v.emplace_back("conv2.bias", &p.conv2.bias);
    const char* dirs[2] = {"lstm_fwd", "lstm_bwd"};
    LSTMParams* lstms[2] = {&p.lstm_fwd, &p.lstm_bwd};
    for (int d = 0; d < 2; ++d) {
        const std::string base = dirs[d];
        v.emplace_back(base + ".W_f", &lstms[d]->W_f);
        v.emplace_back(base + ".W_u", &lstms[d]->W_u);
        v.emplace_back(base + ".W_o", &lstms[d]->W_o);
        v.emplace_back(base + ".W_c", &lstms[d]->W_c);
        v.emplace_back(base + ".b_f", &lstms[d]->b_f);
        v.emplace_back(base + ".b_u", &lstms[d]->b_u);
        v.emplace_back(base + ".b_o", &lstms[d]->b_o);
        v.emplace_back(base + ".b_c", &lstms[d]->b_c);
    }
    v.emplace_back("fc1.W", &p.fc1.W);
    v.emplace_back("fc1.b", &p.fc1.b);
    v.emplace_back("fc2.W", &p.fc2.W);
    v.emplace_back("fc2.b", &p.fc2.b);
    return v;
}

std::vector<std::pair<std::string, const Tensor*>> param_entries(const ModelParams& p) {
    auto mut = param_entries(const_cast<ModelParams&>(p));
    std::vector<std::pair<std::string, const Tensor*>> v;
    v.reserve(mut.size());
    for (auto& [name, t] : mut) {
        v.emplace_back(name, t);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

// Everything the backward pass reuses from the forward computation.
struct ForwardCaches {
    Tensor embedded3;  // (mLen, n, 1)
    Tensor conv1_out;  // post-relu
    DropoutResult drop1;
    Tensor conv2_out;
    DropoutResult drop2;
    Tensor seq; // (mLen, n) LSTM input
    BiLSTMForwardResult bilstm;
    DropoutResult drop3;
    Tensor fc1_out;
    DropoutResult drop4;
    Tensor probs;
};

ForwardCaches run_forward(std::span<const std::int32_t> tokens, const EmbeddingTable& table,
                          const ModelParams& params, const ModelConfig& cfg, DetRng* dropout_rng) {
    check_tokens(tokens, table, cfg);
    const bool training = dropout_rng != nullptr;
    // A throwaway rng keeps the dropout call well-formed in inference mode;
    // it is never consumed because training == false.
    DetRng unused(0);
    DetRng& rng = training ? *dropout_rng : unused;

    ForwardCaches f;
    Tensor e = embed_lookup(tokens, table);
    f.embedded3 = reshape(e, Shape{cfg.max_len, cfg.embed_dim, 1});
    f.conv1_out = conv2d_forward(f.embedded3, params.conv1, ConvActivation::relu);
    f.drop1 = dropout(f.conv1_out, cfg.dropout_rate, rng, training);
    f.conv2_out = conv2d_forward(f.drop1.output, params.conv2, ConvActivation::linear);
    f.drop2 = dropout(f.conv2_out, cfg.dropout_rate, rng, training);
    f.seq = reshape(f.drop2.output, Shape{cfg.max_len, cfg.embed_dim});
    f.bilstm = bilstm_forward_cached(f.seq, params.lstm_fwd, params.lstm_bwd);
    f.drop3 = dropout(f.bilstm.output, cfg.dropout_rate, rng, training);
    f.fc1_out = dense_forward(f.drop3.output, params.fc1, DenseActivation::tanh);
    f.drop4 = dropout(f.fc1_out, cfg.dropout_rate, rng, training);
    f.probs = dense_forward(f.drop4.output, params.fc2, DenseActivation::softmax);
    return f;
}

} // namespace

Tensor model_forward(std::span<const std::int32_t> tokens, const EmbeddingTable& table,
                     const ModelParams& params, const ModelConfig& cfg, DetRng* dropout_rng) {
    return run_forward(tokens, table, params, cfg, dropout_rng).probs;
}

ModelBackwardResult model_backward(std::span<const std::int32_t> tokens, std::size_t target,
                                   const EmbeddingTable& table, const ModelParams& params,
                                   const ModelConfig& cfg, DetRng* dropout_rng) {
    if (target >= cfg.num_classes) {
        throw IndexError("model_backward: target " + std::to_string(target) + " out of range [0, " +
                         std::to_string(cfg.num_classes) + ")");
    }
    ForwardCaches f = run_forward(tokens, table, params, cfg, dropout_rng);

    ModelBackwardResult res;
    res.grads = make_zero_grads(cfg);
    res.probabilities = f.probs;

    LossResult loss = softmax_xent_loss(f.probs, target, /*from_logits=*/false);
    res.loss = loss.loss;

    // fc2 (softmax; upstream already w.r.t. logits)
    DenseGradients g2 = dense_backward(f.drop4.output, params.fc2, f.probs, loss.grad,
                                       DenseActivation::softmax);
    res.grads.fc2.W = std::move(g2.dW);
    res.grads.fc2.b = std::move(g2.db);

    // dropout after fc1
    Tensor d_fc1_out = mul(g2.d_input, f.drop4.mask);

    // fc1 (tanh)
    DenseGradients g1 = dense_backward(f.drop3.output, params.fc1, f.fc1_out, d_fc1_out,
                                       DenseActivation::tanh);
    res.grads.fc1.W = std::move(g1.dW);
    res.grads.fc1.b = std::move(g1.db);

    // dropout after the BI-LSTM output, then split per direction
    Tensor d_bi = mul(g1.d_input, f.drop3.mask);
    const std::size_t h = cfg.lstm_hidden;
    Tensor up_fwd(Shape{h});
    Tensor up_bwd(Shape{h});
    for (std::size_t i = 0; i < h; ++i) {
        up_fwd[i] = d_bi[i];
        up_bwd[i] = d_bi[h + i];
    }

    LSTMGradients gf = lstm_sequence_backward(f.bilstm.fwd.caches, up_fwd, params.lstm_fwd);
    LSTMGradients gb = lstm_sequence_backward(f.bilstm.bwd.caches, up_bwd, params.lstm_bwd);
    res.grads.lstm_fwd.W_f = std::move(gf.dW_f);
    res.grads.lstm_fwd.W_u = std::move(gf.dW_u);
    res.grads.lstm_fwd.W_o = std::move(gf.dW_o);
    res.grads.lstm_fwd.W_c = std::move(gf.dW_c);
    res.grads.lstm_fwd.b_f = std::move(gf.db_f);
    res.grads.lstm_fwd.b_u = std::move(gf.db_u);
    res.grads.lstm_fwd.b_o = std::move(gf.db_o);
    res.grads.lstm_fwd.b_c = std::move(gf.db_c);
    res.grads.lstm_bwd.W_f = std::move(gb.dW_f);
    res.grads.lstm_bwd.W_u = std::move(gb.dW_u);
    res.grads.lstm_bwd.W_o = std::move(gb.dW_o);
    res.grads.lstm_bwd.W_c = std::move(gb.dW_c);
    res.grads.lstm_bwd.b_f = std::move(gb.db_f);
    res.grads.lstm_bwd.b_u = std::move(gb.db_u);
    res.grads.lstm_bwd.b_o = std::move(gb.db_o);
    res.grads.lstm_bwd.b_c = std::move(gb.db_c);

    // Both directions read the same sequence, so their input gradients add.
    Tensor d_seq = add(gf.d_inputs, gb.d_inputs);

    // reshape back to (mLen, n, 1), dropout after conv2, conv2 backward
    Tensor d_conv2_dropped = reshape(d_seq, Shape{cfg.max_len, cfg.embed_dim, 1});
    Tensor d_conv2_out = mul(d_conv2_dropped, f.drop2.mask);
    Conv2DGradients g_c2 = conv2d_backward(f.drop1.output, params.conv2, d_conv2_out);
    res.grads.conv2.kernels = std::move(g_c2.d_kernels);
    res.grads.conv2.bias = std::move(g_c2.d_bias);

    // dropout after conv1, relu derivative, conv1 backward
    Tensor d_conv1_out = mul(g_c2.d_input, f.drop1.mask);
    for (std::size_t i = 0; i < d_conv1_out.size(); ++i) {
        if (f.conv1_out[i] <= 0.0) {
            d_conv1_out[i] = 0.0;
        }
    }
    Conv2DGradients g_c1 = conv2d_backward(f.embedded3, params.conv1, d_conv1_out);
    res.grads.conv1.kernels = std::move(g_c1.d_kernels);
    res.grads.conv1.bias = std::move(g_c1.d_bias);
    // gradient w.r.t. the embedding is dropped: the table is not trainable

    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    validate_config(cp.config);
    if (cp.version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(cp.version));
    }

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, cp.version);

    json header{{"config", config_to_json(cp.config)},
                {"categories", cp.categories},
                {"rng_seed", cp.rng_seed},
                {"epoch", cp.epoch}};
    const std::string header_str = header.dump();
    put_u32(out, static_cast<std::uint32_t>(header_str.size()));
    out += header_str;

    for (const auto& [name, tensor] : param_entries(cp.params)) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (std::size_t d = 0; d < tensor->rank(); ++d) {
            put_u64(out, tensor->dim(d));
        }
        for (std::size_t i = 0; i < tensor->size(); ++i) {
            put_f64(out, (*tensor)[i]);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("checkpoint: cannot open '" + path.string() + "' for writing");
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw IoError("checkpoint: write to '" + path.string() + "' failed");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("checkpoint: cannot open '" + path.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    ByteReader r(std::move(bytes));

    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic bytes in '" + path.string() + "'");
    }
    Checkpoint cp;
    cp.version = r.u32();
    if (cp.version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(cp.version));
    }

    const std::uint32_t header_len = r.u32();
    json header;
    try {
        header = json::parse(r.str(header_len));
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    try {
        cp.config = config_from_json(header.at("config"));
        cp.categories = header.at("categories").get<std::vector<std::string>>();
        cp.rng_seed = header.at("rng_seed").get<std::uint64_t>();
        cp.epoch = header.at("epoch").get<std::uint32_t>();
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("checkpoint: incomplete header: ") + e.what());
    }
    validate_config(cp.config);

    cp.params = make_param_shapes(cp.config);
    auto entries = param_entries(cp.params);
    std::vector<bool> seen(entries.size(), false);

    while (!r.at_end()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> dims(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            dims[d] = static_cast<std::size_t>(r.u64());
        }
        Shape shape(dims);
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = r.f64();
        }

        bool matched = false;
        for (std::size_t e = 0; e < entries.size(); ++e) {
            if (entries[e].first == name) {
                if (entries[e].second->shape() != shape) {
                    throw CorruptionError("checkpoint: tensor '" + name + "' has shape " +
                                          shape.to_string() + ", config requires " +
                                          entries[e].second->shape().to_string());
                }
                *entries[e].second = std::move(t);
                seen[e] = true;
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw CorruptionError("checkpoint: unexpected tensor '" + name + "'");
        }
    }
    for (std::size_t e = 0; e < entries.size(); ++e) {
        if (!seen[e]) {
            throw CorruptionError("checkpoint: missing tensor '" + entries[e].first + "'");
        }
    }
    return cp;
}

} // namespace servenet
