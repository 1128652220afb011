#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "servenet/error.hpp"
#include "servenet/model.hpp"
#include "servenet/optim.hpp"
#include "test_helpers.hpp"

using namespace servenet;
using servenet::testing::random_tensor;
using servenet::testing::TempDir;

namespace {

EmbeddingTable random_table(std::size_t words, std::size_t dim, DetRng& rng) {
    EmbeddingTable t;
    t.dim = dim;
    t.matrix = Tensor(Shape{words + 2, dim});
    for (std::size_t w = 2; w < words + 2; ++w) {
        for (std::size_t d = 0; d < dim; ++d) {
            t.matrix.at(w, d) = rng.normal(0.0, 1.0);
        }
        t.vocab["w" + std::to_string(w)] = static_cast<std::int32_t>(w);
    }
    return t;
}

std::vector<std::int32_t> random_tokens(std::size_t len, std::size_t words, DetRng& rng) {
    std::vector<std::int32_t> tokens(len);
    for (std::size_t i = 0; i < len; ++i) {
        tokens[i] = static_cast<std::int32_t>(2 + rng.uniform_index(words));
    }
    return tokens;
}

ModelParams zero_params(const ModelConfig& cfg) { return make_zero_grads(cfg); }

} // namespace

TEST_CASE("forward output is a probability vector") {
    DetRng rng(1);
    const ModelConfig cfg = toy_config();
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    for (int trial = 0; trial < 10; ++trial) {
        auto tokens = random_tokens(cfg.max_len, 20, rng);
        Tensor p = model_forward(tokens, table, params, cfg);
        double sum = 0.0;
        for (double v : p.values()) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("all-zero parameters give the exactly uniform distribution") {
    DetRng rng(2);
    const ModelConfig cfg = toy_config();
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = zero_params(cfg);
    auto tokens = random_tokens(cfg.max_len, 20, rng);
    Tensor p = model_forward(tokens, table, params, cfg);
    for (double v : p.values()) {
        CHECK(v == 1.0 / static_cast<double>(cfg.num_classes));
    }
}

TEST_CASE("default configuration shape trace ends in 50 classes") {
    DetRng rng(3);
    const ModelConfig cfg; // paper-scale defaults
    validate_config(cfg);
    CHECK(cfg.max_len == 110);
    CHECK(cfg.embed_dim == 200);
    CHECK(cfg.conv1_filters == 64);
    CHECK(cfg.conv2_filters == 1);
    CHECK(cfg.lstm_hidden == 1024);
    CHECK(cfg.dense_hidden == 200);
    CHECK(cfg.num_classes == 50);

    EmbeddingTable table = random_table(30, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    // intermediate shapes forced by the architecture
    CHECK(params.conv1.kernels.shape() == Shape{64, 3, 3, 1});
    CHECK(params.conv2.kernels.shape() == Shape{1, 3, 3, 64});
    CHECK(params.lstm_fwd.W_f.shape() == Shape{1024, 1224});
    CHECK(params.fc1.W.shape() == Shape{200, 2048});
    CHECK(params.fc2.W.shape() == Shape{50, 200});

    auto tokens = random_tokens(cfg.max_len, 30, rng);
    Tensor p = model_forward(tokens, table, params, cfg);
    CHECK(p.shape() == Shape{50});
    double sum = 0.0;
    for (double v : p.values()) {
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("end-to-end gradients match finite differences on the toy preset") {
    DetRng rng(4);
    const ModelConfig cfg = toy_config(); // dropout off
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    auto tokens = random_tokens(cfg.max_len, 20, rng);
    const std::size_t target = 2;

    ModelBackwardResult bw = model_backward(tokens, target, table, params, cfg);
    CHECK(bw.loss >= 0.0);

    auto loss = [&]() {
        Tensor p = model_forward(tokens, table, params, cfg);
        return softmax_xent_loss(p, target).loss;
    };
    auto p_entries = param_entries(params);
    auto g_entries = param_entries(bw.grads);
    for (std::size_t e = 0; e < p_entries.size(); ++e) {
        const double worst =
            servenet::testing::check_gradient_fd(*p_entries[e].second, *g_entries[e].second, loss);
        INFO("tensor ", p_entries[e].first);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("backward is deterministic for equal dropout seeds") {
    DetRng rng(5);
    ModelConfig cfg = toy_config();
    cfg.dropout_rate = 0.3;
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    auto tokens = random_tokens(cfg.max_len, 20, rng);

    DetRng d1(77);
    DetRng d2(77);
    ModelBackwardResult a = model_backward(tokens, 1, table, params, cfg, &d1);
    ModelBackwardResult b = model_backward(tokens, 1, table, params, cfg, &d2);
    CHECK(a.loss == b.loss);
    auto ea = param_entries(a.grads);
    auto eb = param_entries(b.grads);
    for (std::size_t i = 0; i < ea.size(); ++i) {
        CHECK(*ea[i].second == *eb[i].second);
    }
}

TEST_CASE("loss is nonnegative and dropout-off train equals inference") {
    DetRng rng(6);
    const ModelConfig cfg = toy_config();
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    auto tokens = random_tokens(cfg.max_len, 20, rng);
    DetRng drop_rng(1);
    Tensor train_mode = model_forward(tokens, table, params, cfg, &drop_rng);
    Tensor infer_mode = model_forward(tokens, table, params, cfg);
    CHECK(train_mode == infer_mode); // dropout_rate 0: identical paths
}

TEST_CASE("swapping tail PAD positions does not change the output") {
    DetRng rng(7);
    const ModelConfig cfg = toy_config();
    EmbeddingTable table = random_table(20, cfg.embed_dim, rng);
    ModelParams params = init_params(cfg, rng);
    std::vector<std::int32_t> tokens{4, 5, 6, 0, 0, 0};
    std::vector<std::int32_t> swapped{4, 5, 6, 0, 0, 0};
    std::swap(swapped[4], swapped[5]);
    CHECK(model_forward(tokens, table, params, cfg) ==
          model_forward(swapped, table, params, cfg));

    // the embedded inputs differ in no row at all (PAD rows are all zero)
    Tensor ea = embed_lookup(tokens, table);
    Tensor eb = embed_lookup(swapped, table);
    CHECK(ea == eb);
}

TEST_CASE("model rejects invalid configurations and inputs") {
    ModelConfig cfg = toy_config();
    cfg.conv2_filters = 2;
    CHECK_THROWS_AS(validate_config(cfg), ParameterError);
    cfg = toy_config();
    cfg.kernel_h = 4;
    CHECK_THROWS_AS(validate_config(cfg), ParameterError);
    cfg = toy_config();
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(validate_config(cfg), ParameterError);

    DetRng rng(8);
    const ModelConfig good = toy_config();
    EmbeddingTable table = random_table(20, good.embed_dim, rng);
    ModelParams params = init_params(good, rng);
    std::vector<std::int32_t> short_tokens(3, 0);
    CHECK_THROWS_AS(model_forward(short_tokens, table, params, good), DimensionError);
    std::vector<std::int32_t> bad_id(good.max_len, 9999);
    CHECK_THROWS_AS(model_forward(bad_id, table, params, good), IndexError);
    auto ok_tokens = random_tokens(good.max_len, 20, rng);
    CHECK_THROWS_AS(model_backward(ok_tokens, 99, table, params, good), IndexError);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round-trip reproduces every tensor bit-exactly") {
    DetRng rng(9);
    TempDir dir("ckpt");
    Checkpoint cp;
    cp.config = toy_config();
    cp.categories = {"alerts", "billing", "catalog", "dispatch"};
    cp.rng_seed = 12345;
    cp.epoch = 17;
    cp.params = init_params(cp.config, rng);

    const auto path = dir.file("model.srvn");
    save_checkpoint(path, cp);
    Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.version == cp.version);
    CHECK(loaded.config == cp.config);
    CHECK(loaded.categories == cp.categories);
    CHECK(loaded.rng_seed == cp.rng_seed);
    CHECK(loaded.epoch == cp.epoch);
    auto ea = param_entries(cp.params);
    auto eb = param_entries(loaded.params);
    for (std::size_t i = 0; i < ea.size(); ++i) {
        CHECK(*ea[i].second == *eb[i].second); // bitwise: operator== on doubles
    }

    // a second save of the loaded checkpoint is byte-identical
    const auto path2 = dir.file("model2.srvn");
    save_checkpoint(path2, loaded);
    std::ifstream f1(path, std::ios::binary);
    std::ifstream f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 4) == "SRVN");
}

TEST_CASE("toy checkpoint stays under 1 MiB") {
    DetRng rng(10);
    TempDir dir("ckpt_size");
    Checkpoint cp;
    cp.config = toy_config();
    cp.categories = {"a", "b", "c", "d"};
    cp.params = init_params(cp.config, rng);
    const auto path = dir.file("toy.srvn");
    save_checkpoint(path, cp);
    CHECK(std::filesystem::file_size(path) < 1024u * 1024u);
}

TEST_CASE("checkpoint with wrong magic is a format error") {
    TempDir dir("ckpt_bad");
    const auto path = dir.file("bad.srvn");
    servenet::testing::write_file(path, "NOPE this is not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("truncated checkpoint is a corruption error") {
    DetRng rng(11);
    TempDir dir("ckpt_trunc");
    Checkpoint cp;
    cp.config = toy_config();
    cp.categories = {"a", "b", "c", "d"};
    cp.params = init_params(cp.config, rng);
    const auto path = dir.file("full.srvn");
    save_checkpoint(path, cp);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto cut = dir.file("cut.srvn");
    servenet::testing::write_file(cut, bytes.substr(0, bytes.size() - 37));
    CHECK_THROWS_AS(load_checkpoint(cut), CorruptionError);

    // missing tensors (header only) is also corruption
    const auto head = dir.file("head.srvn");
    servenet::testing::write_file(head, bytes.substr(0, 80));
    CHECK_THROWS_AS(load_checkpoint(head), CorruptionError);
}

TEST_CASE("loading a nonexistent checkpoint is an I/O error") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.srvn"), IoError);
}
