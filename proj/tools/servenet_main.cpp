// servenet: preprocess, train, evaluate, and query a CNN+BI-LSTM classifier
// for web-service descriptions, plus a Naive-Bayes split-selection benchmark.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "servenet/data.hpp"
#include "servenet/error.hpp"
#include "servenet/metrics.hpp"
#include "servenet/model.hpp"
#include "servenet/naive_bayes.hpp"
#include "servenet/optim.hpp"

namespace fs = std::filesystem;
using namespace servenet;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: built-in defaults < preset < config file < CLI flags
// ---------------------------------------------------------------------------

struct RunConfig {
    ModelConfig model;   // full-scale defaults
    TrainConfig train;   // 50 epochs, batch 64, Adam lr 0.002
    std::size_t top_k_categories = 50;
    double test_fraction = 0.2024; // train fraction 0.7976
    std::size_t min_len = 24;      // length filter: [min_len, mlen]
    std::size_t repeats = 10;      // split-compare repetitions
    double nb_alpha = 1.0;
    bool nb_binary = false;
};

void apply_preset(RunConfig& rc, const std::string& preset) {
    if (preset == "paper") {
        rc.model = ModelConfig{};
        rc.train.dropout_rate = rc.model.dropout_rate;
        return;
    }
    if (preset == "toy") {
        rc.model = toy_config();
        rc.train.dropout_rate = rc.model.dropout_rate; // 0: overfit-friendly
        rc.train.epochs = 200;
        rc.train.batch_size = 4;
        rc.min_len = 1; // toy descriptions are six tokens long
        return;
    }
    throw ParameterError("unknown preset '" + preset + "' (expected toy or paper)");
}

std::string trim_copy(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw ParameterError("config: key '" + key + "' expects a boolean, got '" + value + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    try {
        if constexpr (std::is_floating_point_v<T>) {
            return static_cast<T>(std::stod(value));
        } else {
            return static_cast<T>(std::stoull(value));
        }
    } catch (const std::exception&) {
        throw ParameterError("config: key '" + key + "' has a non-numeric value '" + value + "'");
    }
}

// Flat `key = value` file, '#' starts a comment.
void apply_config_file(RunConfig& rc, const fs::path& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("config: cannot open '" + path.string() + "'");
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim_copy(line);
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParameterError("config: line " + std::to_string(line_no) +
                                 " is not 'key = value'");
        }
        const std::string key = trim_copy(line.substr(0, eq));
        const std::string value = trim_copy(line.substr(eq + 1));

        if (key == "seed") rc.train.rng_seed = parse_number<std::uint64_t>(key, value);
        else if (key == "threads") rc.train.threads = parse_number<std::size_t>(key, value);
        else if (key == "epochs") rc.train.epochs = parse_number<std::size_t>(key, value);
        else if (key == "batch_size") rc.train.batch_size = parse_number<std::size_t>(key, value);
        else if (key == "lr") rc.train.adam.lr0 = parse_number<double>(key, value);
        else if (key == "beta1") rc.train.adam.beta1 = parse_number<double>(key, value);
        else if (key == "beta2") rc.train.adam.beta2 = parse_number<double>(key, value);
        else if (key == "decay") rc.train.adam.decay = parse_number<double>(key, value);
        else if (key == "epsilon") rc.train.adam.epsilon = parse_number<double>(key, value);
        else if (key == "decay_per_epoch") rc.train.adam.decay_per_epoch = parse_bool(key, value);
        else if (key == "dropout") {
            rc.train.dropout_rate = parse_number<double>(key, value);
            rc.model.dropout_rate = rc.train.dropout_rate;
        } else if (key == "mlen") rc.model.max_len = parse_number<std::size_t>(key, value);
        else if (key == "embed_dim") rc.model.embed_dim = parse_number<std::size_t>(key, value);
        else if (key == "conv1_filters") rc.model.conv1_filters = parse_number<std::size_t>(key, value);
        else if (key == "conv2_filters") rc.model.conv2_filters = parse_number<std::size_t>(key, value);
        else if (key == "kernel_h") rc.model.kernel_h = parse_number<std::size_t>(key, value);
        else if (key == "kernel_w") rc.model.kernel_w = parse_number<std::size_t>(key, value);
        else if (key == "lstm_hidden") rc.model.lstm_hidden = parse_number<std::size_t>(key, value);
        else if (key == "dense_hidden") rc.model.dense_hidden = parse_number<std::size_t>(key, value);
        else if (key == "top_k_categories") rc.top_k_categories = parse_number<std::size_t>(key, value);
        else if (key == "test_fraction") rc.test_fraction = parse_number<double>(key, value);
        else if (key == "min_len") rc.min_len = parse_number<std::size_t>(key, value);
        else if (key == "repeats") rc.repeats = parse_number<std::size_t>(key, value);
        else if (key == "nb_alpha") rc.nb_alpha = parse_number<double>(key, value);
        else if (key == "nb_binary") rc.nb_binary = parse_bool(key, value);
        else {
            throw ParameterError("config: unknown key '" + key + "' at line " +
                                 std::to_string(line_no));
        }
    }
}

// CLI flag storage shared by all subcommands; only the parsed one reads it.
struct CliFlags {
    std::string config_path;
    std::string preset;
    std::uint64_t seed = 42;
    std::size_t threads = 1;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr = 0.002;
    std::size_t mlen = 110;
    std::size_t top_k = 50;
    double test_fraction = 0.2024;
    double dropout = 0.5;
    std::size_t repeats = 10;
    double nb_alpha = 1.0;
    bool nb_binary = false;

    std::string data_path;
    std::string glove_path;
    std::string out_dir;
    std::string checkpoint_path;
    std::string text;
};

void register_shared(CLI::App* cmd, CliFlags& f) {
    cmd->add_option("--config", f.config_path, "flat key = value configuration file");
    cmd->add_option("--seed", f.seed, "seed for every random choice (default 42)");
    cmd->add_option("--threads", f.threads, "intra-batch worker threads (default 1)");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
    cmd->add_option("--lr", f.lr, "Adam base learning rate");
    cmd->add_option("--mlen", f.mlen, "padded description length");
    cmd->add_option("--top-k-categories", f.top_k, "categories kept by preprocess");
    cmd->add_option("--test-fraction", f.test_fraction, "held-out fraction per split");
    cmd->add_option("--dropout", f.dropout, "dropout rate between layers");
    cmd->add_option("--preset", f.preset, "configuration preset: toy or paper")
        ->check(CLI::IsMember({"toy", "paper"}));
}

RunConfig build_run_config(const CLI::App* cmd, const CliFlags& f) {
    RunConfig rc;
    if (cmd->count("--preset")) {
        apply_preset(rc, f.preset);
    }
    if (cmd->count("--config")) {
        apply_config_file(rc, f.config_path);
    }
    if (cmd->count("--seed")) rc.train.rng_seed = f.seed;
    if (cmd->count("--threads")) rc.train.threads = f.threads;
    if (cmd->count("--epochs")) rc.train.epochs = f.epochs;
    if (cmd->count("--batch-size")) rc.train.batch_size = f.batch_size;
    if (cmd->count("--lr")) rc.train.adam.lr0 = f.lr;
    if (cmd->count("--mlen")) rc.model.max_len = f.mlen;
    if (cmd->count("--top-k-categories")) rc.top_k_categories = f.top_k;
    if (cmd->count("--test-fraction")) rc.test_fraction = f.test_fraction;
    if (cmd->count("--dropout")) {
        rc.train.dropout_rate = f.dropout;
        rc.model.dropout_rate = f.dropout;
    }
    if (cmd->get_option_no_throw("--repeats") != nullptr && cmd->count("--repeats")) {
        rc.repeats = f.repeats;
    }
    if (cmd->get_option_no_throw("--alpha") != nullptr && cmd->count("--alpha")) {
        rc.nb_alpha = f.nb_alpha;
    }
    if (cmd->get_option_no_throw("--nb-binary") != nullptr && cmd->count("--nb-binary")) {
        rc.nb_binary = f.nb_binary;
    }

    if (!(rc.test_fraction > 0.0 && rc.test_fraction < 1.0)) {
        throw ParameterError("test fraction must lie in (0, 1)");
    }
    if (rc.train.epochs == 0 || rc.train.batch_size == 0) {
        throw ParameterError("epochs and batch size must be >= 1");
    }
    if (rc.train.threads == 0) {
        throw ParameterError("threads must be >= 1");
    }
    return rc;
}

// Falls back to $SERVENET_DATA_DIR for relative paths that do not exist as
// given.
fs::path resolve_input(const std::string& path) {
    fs::path p(path);
    if (fs::exists(p) || p.is_absolute()) {
        return p;
    }
    const char* base = std::getenv("SERVENET_DATA_DIR");
    if (base != nullptr) {
        fs::path candidate = fs::path(base) / p;
        if (fs::exists(candidate)) {
            return candidate;
        }
    }
    return p;
}

void must_exist(const fs::path& path, const std::string& what) {
    std::ifstream probe(path);
    if (!probe) {
        throw IoError(what + ": cannot open '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_preprocess(const RunConfig& rc, const fs::path& data, const fs::path& glove,
                    const fs::path& out) {
    must_exist(data, "preprocess");
    must_exist(glove, "preprocess");
    fs::create_directories(out);

    IngestResult in = ingest(data);
    std::cout << "ingested      " << in.records.size() << " records";
    if (in.skipped > 0) {
        std::cout << " (skipped " << in.skipped << " without both fields)";
    }
    std::cout << "\n";

    auto cleaned = clean(in.records);
    auto histogram = category_histogram(cleaned);
    std::cout << "cleaned       " << cleaned.size() << " records, " << histogram.size()
              << " categories\n";

    bool kept_all = false;
    auto top = keep_top_categories(cleaned, rc.top_k_categories, &kept_all);
    if (kept_all) {
        std::cerr << "warning: --top-k-categories " << rc.top_k_categories
                  << " covers all categories\n";
    }
    std::cout << "top-" << rc.top_k_categories << " pruned " << top.size() << " records\n";

    LengthStats stats = length_stats(top);
    auto [ci_lo, ci_hi] = confidence_interval(stats, 0.90);
    auto filtered = filter_by_length(top, rc.min_len, rc.model.max_len);
    std::cout << "length filter [" << rc.min_len << ", " << rc.model.max_len << "] kept "
              << filtered.size() << " records\n";

    EmbeddingTable table = load_glove(glove, rc.model.embed_dim);
    std::size_t token_total = 0;
    std::size_t token_oov = 0;
    for (const ServiceRecord& r : filtered) {
        for (std::int32_t id : tokenize(r.description, table, rc.model.max_len)) {
            if (id == EmbeddingTable::kPadId) {
                continue;
            }
            ++token_total;
            if (id == EmbeddingTable::kOovId) {
                ++token_oov;
            }
        }
    }
    const double oov_rate =
        token_total == 0 ? 0.0 : static_cast<double>(token_oov) / static_cast<double>(token_total);

    write_jsonl(out / "processed.jsonl", filtered);

    nlohmann::json hist_json = nlohmann::json::array();
    for (const auto& [name, count] : histogram) {
        hist_json.push_back({name, count});
    }
    nlohmann::json stats_json{
        {"counts",
         {{"ingested", in.records.size()},
          {"skipped", in.skipped},
          {"cleaned", cleaned.size()},
          {"after_top_categories", top.size()},
          {"after_length_filter", filtered.size()}}},
        {"distinct_categories", histogram.size()},
        {"histogram", hist_json},
        {"length_mean", stats.mean},
        {"length_stddev", stats.stddev},
        {"confidence_level", 0.90},
        {"confidence_interval", {ci_lo, ci_hi}},
        {"length_bounds", {rc.min_len, rc.model.max_len}},
        {"oov_rate", oov_rate},
        {"embedding_words", table.word_count()}};
    std::ofstream sidecar(out / "stats.json");
    if (!sidecar) {
        throw IoError("preprocess: cannot write '" + (out / "stats.json").string() + "'");
    }
    sidecar << stats_json.dump(2) << "\n";
    std::cout << "wrote " << (out / "processed.jsonl").string() << " and "
              << (out / "stats.json").string() << "\n";
}

void cmd_train(const RunConfig& rc_in, const fs::path& data, const fs::path& glove,
               const fs::path& out) {
    RunConfig rc = rc_in;
    must_exist(data, "train");
    must_exist(glove, "train");
    fs::create_directories(out);

    auto records = clean(ingest(data).records);
    if (records.empty()) {
        throw DataError("train: no usable records in '" + data.string() + "'");
    }
    const std::vector<std::string> categories = category_list(records);
    rc.model.num_classes = categories.size();
    validate_config(rc.model);

    SplitSpec spec{SplitScheme::stratified_random, 1.0 - rc.test_fraction, 0, rc.train.rng_seed};
    TrainTestSplit split = split_dataset(records, spec);
    std::cout << "split: " << split.train.size() << " train / " << split.test.size()
              << " test, " << categories.size() << " classes\n";

    EmbeddingTable table = load_glove(glove, rc.model.embed_dim);
    auto train_set = tokenize_dataset(split.train, table, rc.model.max_len, categories);

    DetRng init_rng(rc.train.rng_seed);
    ModelParams params = init_params(rc.model, init_rng);

    std::ofstream history_stream(out / "history.jsonl", std::ios::trunc);
    if (!history_stream) {
        throw IoError("train: cannot write '" + (out / "history.jsonl").string() + "'");
    }
    std::vector<EpochRecord> history;
    auto hook = [&](const EpochRecord& rec) {
        history.push_back(rec);
        history_stream << history_record_json(rec) << '\n';
        history_stream.flush();
        char buf[160];
        std::snprintf(buf, sizeof(buf), "epoch %4zu  loss %10.6f  top1 %6.2f  top5 %6.2f\n",
                      rec.epoch, rec.loss, rec.top1, rec.top5);
        std::cout << buf << std::flush;
    };

    try {
        train_model(params, table, train_set, rc.model, rc.train, hook);
    } catch (const DivergenceError&) {
        // keep whatever history was streamed so the run can be inspected
        write_history_table(out / "history.txt", history);
        throw;
    }
    write_history_table(out / "history.txt", history);

    Checkpoint cp;
    cp.config = rc.model;
    cp.categories = categories;
    cp.rng_seed = rc.train.rng_seed;
    cp.epoch = static_cast<std::uint32_t>(rc.train.epochs);
    cp.params = std::move(params);
    save_checkpoint(out / "checkpoint.srvn", cp);

    write_jsonl(out / "train_split.jsonl", split.train);
    write_jsonl(out / "test_split.jsonl", split.test);
    std::cout << "wrote " << (out / "checkpoint.srvn").string() << "\n";
}

PredictionBatch predict_records(const Checkpoint& cp, const EmbeddingTable& table,
                                const std::vector<ServiceRecord>& records) {
    auto data = tokenize_dataset(records, table, cp.config.max_len, cp.categories);
    Tensor probs(Shape{data.size(), cp.config.num_classes});
    std::vector<std::size_t> targets(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor p = model_forward(data[i].tokens, table, cp.params, cp.config);
        for (std::size_t c = 0; c < cp.config.num_classes; ++c) {
            probs.at(i, c) = p[c];
        }
        targets[i] = data[i].label;
    }
    return PredictionBatch{std::move(probs), std::move(targets), cp.categories};
}

void cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& glove,
              const fs::path& out) {
    must_exist(data, "eval");
    must_exist(glove, "eval");
    fs::create_directories(out);

    Checkpoint cp = load_checkpoint(checkpoint);
    if (cp.categories.size() != cp.config.num_classes) {
        throw ParameterError("eval: checkpoint lists " + std::to_string(cp.categories.size()) +
                             " categories for " + std::to_string(cp.config.num_classes) +
                             " classes");
    }
    auto records = clean(ingest(data).records);
    if (records.empty()) {
        throw DataError("eval: no usable records in '" + data.string() + "'");
    }
    EmbeddingTable table = load_glove(glove, cp.config.embed_dim);

    PredictionBatch batch = predict_records(cp, table, records);
    const std::size_t n = std::min<std::size_t>(5, cp.config.num_classes);
    EvalReport report = per_category_report(batch, n);

    emit_report(report, ReportFormat::text_table, out / "eval_report.txt");
    emit_report(report, ReportFormat::json, out / "eval_report.json");
    emit_report(report, ReportFormat::radar_csv, out / "eval_radar.csv");

    char buf[160];
    std::snprintf(buf, sizeof(buf), "top-1 %.2f%%  top-5 %.2f%%  sigma %.2f  (%zu records)\n",
                  report.top1, report.top5, report.sigma, records.size());
    std::cout << buf;
    std::cout << "wrote " << (out / "eval_report.txt").string() << ", .json, and radar csv\n";
}

void cmd_predict(const fs::path& checkpoint, const fs::path& glove, const std::string& text) {
    must_exist(glove, "predict");
    Checkpoint cp = load_checkpoint(checkpoint);
    EmbeddingTable table = load_glove(glove, cp.config.embed_dim);

    if (trim_copy(text).empty()) {
        std::cerr << "warning: empty description, predicting from padding only\n";
    }
    auto tokens = tokenize(text, table, cp.config.max_len);
    Tensor p = model_forward(tokens, table, cp.params, cp.config);

    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t c = 0; c < p.size(); ++c) {
        ranked.emplace_back(p[c], c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return a.second < b.second;
    });
    const std::size_t n = std::min<std::size_t>(5, ranked.size());
    for (std::size_t k = 0; k < n; ++k) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-24s %.6f\n",
                      cp.categories[ranked[k].second].c_str(), ranked[k].first);
        std::cout << buf;
    }
}

void cmd_split_compare(const RunConfig& rc, const fs::path& data, const fs::path& out,
                       bool have_out) {
    must_exist(data, "split-compare");
    auto records = clean(ingest(data).records);
    if (records.empty()) {
        throw DataError("split-compare: no usable records in '" + data.string() + "'");
    }
    auto rows = compare_split_methods(records, rc.repeats, 1.0 - rc.test_fraction,
                                      rc.train.rng_seed, rc.nb_alpha, rc.nb_binary);
    std::cout << render_split_table(rows);
    if (have_out) {
        fs::create_directories(out);
        std::ofstream txt(out / "split_compare.txt");
        txt << render_split_table(rows);
        std::ofstream js(out / "split_compare.json");
        js << split_rows_json(rows);
        if (!txt || !js) {
            throw IoError("split-compare: cannot write under '" + out.string() + "'");
        }
        std::cout << "wrote " << (out / "split_compare.txt").string() << " and .json\n";
    }
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const IoError*>(&e) != nullptr) {
        return 2;
    }
    if (dynamic_cast<const DivergenceError*>(&e) != nullptr) {
        return 3;
    }
    return 1; // data / validation
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"web-service description classifier (2-D CNN + bidirectional LSTM)"};
    app.require_subcommand(1);
    CliFlags flags;

    CLI::App* pre = app.add_subcommand("preprocess", "clean, prune, filter, and tokenize a dataset");
    register_shared(pre, flags);
    pre->add_option("--data", flags.data_path, "raw dataset (JSON Lines or JSON array)")->required();
    pre->add_option("--glove", flags.glove_path, "embedding text file")->required();
    pre->add_option("--out", flags.out_dir, "output directory")->required();

    CLI::App* train = app.add_subcommand("train", "train on a preprocessed dataset");
    register_shared(train, flags);
    train->add_option("--data", flags.data_path, "preprocessed dataset (JSON Lines)")->required();
    train->add_option("--glove", flags.glove_path, "embedding text file")->required();
    train->add_option("--out", flags.out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a test set");
    register_shared(eval, flags);
    eval->add_option("--checkpoint", flags.checkpoint_path, "trained checkpoint")->required();
    eval->add_option("--data", flags.data_path, "test set (JSON Lines)")->required();
    eval->add_option("--glove", flags.glove_path, "embedding text file")->required();
    eval->add_option("--out", flags.out_dir, "output directory")->required();

    CLI::App* predict = app.add_subcommand("predict", "classify one description");
    register_shared(predict, flags);
    predict->add_option("--checkpoint", flags.checkpoint_path, "trained checkpoint")->required();
    predict->add_option("--glove", flags.glove_path, "embedding text file")->required();
    predict->add_option("text", flags.text, "service description");

    CLI::App* compare = app.add_subcommand("split-compare",
                                           "benchmark selection schemes with Naive Bayes");
    register_shared(compare, flags);
    compare->add_option("--data", flags.data_path, "preprocessed dataset (JSON Lines)")->required();
    compare->add_option("--out", flags.out_dir, "output directory (optional)");
    compare->add_option("--repeats", flags.repeats, "repetitions per scheme (default 10)");
    compare->add_option("--alpha", flags.nb_alpha, "additive smoothing (default 1.0)");
    compare->add_flag("--nb-binary", flags.nb_binary, "binary bag-of-words features");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1; // flag misuse is a validation error
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        RunConfig rc = build_run_config(active, flags);
        if (active == pre) {
            cmd_preprocess(rc, resolve_input(flags.data_path), resolve_input(flags.glove_path),
                           flags.out_dir);
        } else if (active == train) {
            cmd_train(rc, resolve_input(flags.data_path), resolve_input(flags.glove_path),
                      flags.out_dir);
        } else if (active == eval) {
            cmd_eval(resolve_input(flags.checkpoint_path), resolve_input(flags.data_path),
                     resolve_input(flags.glove_path), flags.out_dir);
        } else if (active == predict) {
            cmd_predict(resolve_input(flags.checkpoint_path), resolve_input(flags.glove_path),
                        flags.text);
        } else if (active == compare) {
            cmd_split_compare(rc, resolve_input(flags.data_path), flags.out_dir,
                              active->count("--out") > 0);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
