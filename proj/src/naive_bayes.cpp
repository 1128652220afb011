#include "servenet/naive_bayes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "servenet/error.hpp"
#include "servenet/rng.hpp"

namespace servenet {

namespace {

std::vector<std::string> doc_words(const ServiceRecord& record, bool binary) {
    std::vector<std::string> words = split_words(normalize_text(record.description));
    if (binary) {
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
    }
    return words;
}

double population_stddev(const std::vector<double>& values) {
    if (values.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) {
        sq += (v - mean) * (v - mean);
    }
    return std::sqrt(sq / static_cast<double>(values.size()));
}

double mean_of(const std::vector<double>& values) {
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    return sum / static_cast<double>(values.size());
}

} // namespace

NBModel nb_fit(const std::vector<ServiceRecord>& train, double alpha, bool binary_features) {
    if (train.empty()) {
        throw DataError("nb_fit: empty training set");
    }
    if (!(alpha > 0.0)) {
        throw ParameterError("nb_fit: alpha must be > 0");
    }

    NBModel model;
    model.alpha = alpha;
    model.binary_features = binary_features;
    model.categories = category_list(train);
    const std::size_t C = model.categories.size();

    std::unordered_map<std::string, std::size_t> class_index;
    for (std::size_t c = 0; c < C; ++c) {
        class_index[model.categories[c]] = c;
    }

    // First pass: vocabulary and per-class token totals.
    std::vector<std::unordered_map<std::string, std::size_t>> word_counts(C);
    std::vector<std::size_t> class_docs(C, 0);
    std::vector<std::size_t> class_tokens(C, 0);
    for (const ServiceRecord& r : train) {
        const std::size_t c = class_index.at(r.primary_category);
        ++class_docs[c];
        for (const std::string& w : doc_words(r, binary_features)) {
            ++word_counts[c][w];
            ++class_tokens[c];
            if (!model.vocab.count(w)) {
                const std::size_t col = model.vocab.size();
                model.vocab[w] = col;
            }
        }
    }

    const std::size_t V = std::max<std::size_t>(1, model.vocab.size());
    model.log_prior.resize(C);
    model.log_unseen.resize(C);
    model.log_likelihood = Tensor(Shape{C, V});
    for (std::size_t c = 0; c < C; ++c) {
        model.log_prior[c] =
            std::log(static_cast<double>(class_docs[c]) / static_cast<double>(train.size()));
        const double denom = static_cast<double>(class_tokens[c]) + alpha * static_cast<double>(V);
        model.log_unseen[c] = std::log(alpha / denom);
        for (std::size_t col = 0; col < V; ++col) {
            model.log_likelihood.at(c, col) = model.log_unseen[c];
        }
        for (const auto& [word, count] : word_counts[c]) {
            model.log_likelihood.at(c, model.vocab.at(word)) =
                std::log((static_cast<double>(count) + alpha) / denom);
        }
    }
    return model;
}

std::vector<double> nb_predict(const NBModel& model, const ServiceRecord& record) {
    const std::size_t C = model.categories.size();
    if (C == 0) {
        throw StateError("nb_predict: model is not fitted");
    }
    std::vector<double> log_post(model.log_prior);
    for (const std::string& w : doc_words(record, model.binary_features)) {
        auto it = model.vocab.find(w);
        for (std::size_t c = 0; c < C; ++c) {
            log_post[c] += it != model.vocab.end() ? model.log_likelihood.at(c, it->second)
                                                   : model.log_unseen[c];
        }
    }
    const double lmax = *std::max_element(log_post.begin(), log_post.end());
    double sum = 0.0;
    for (double& lp : log_post) {
        lp = std::exp(lp - lmax);
        sum += lp;
    }
    for (double& lp : log_post) {
        lp /= sum;
    }
    return log_post;
}

double nb_accuracy(const NBModel& model, const std::vector<ServiceRecord>& records) {
    if (records.empty()) {
        throw DataError("nb_accuracy: empty record list");
    }
    std::size_t hits = 0;
    for (const ServiceRecord& r : records) {
        const std::vector<double> post = nb_predict(model, r);
        // ties broken by lower class index
        std::size_t best = 0;
        for (std::size_t c = 1; c < post.size(); ++c) {
            if (post[c] > post[best]) {
                best = c;
            }
        }
        if (model.categories[best] == r.primary_category) {
            ++hits;
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

std::vector<SplitMethodRow> compare_split_methods(const std::vector<ServiceRecord>& records,
                                                  std::size_t repeats, double train_fraction,
                                                  std::uint64_t seed, double alpha,
                                                  bool binary_features) {
    if (repeats == 0) {
        throw ParameterError("compare_split_methods: repeats must be >= 1");
    }

    auto evaluate = [&](const TrainTestSplit& split, std::vector<double>& train_accs,
                        std::vector<double>& test_accs) {
        NBModel model = nb_fit(split.train, alpha, binary_features);
        train_accs.push_back(nb_accuracy(model, split.train));
        test_accs.push_back(nb_accuracy(model, split.test));
    };

    std::vector<SplitMethodRow> rows;

    {
        SplitMethodRow row;
        row.scheme = "Random selection";
        std::vector<double> train_accs, test_accs;
        for (std::size_t r = 0; r < repeats; ++r) {
            SplitSpec spec{SplitScheme::random, train_fraction, 0, splitmix64(seed + r)};
            evaluate(split_dataset(records, spec), train_accs, test_accs);
        }
        row.train_mean = mean_of(train_accs);
        row.test_mean = mean_of(test_accs);
        row.train_stddev = population_stddev(train_accs);
        row.test_stddev = population_stddev(test_accs);
        rows.push_back(row);
    }

    if (repeats >= 2) {
        SplitMethodRow row;
        row.scheme = std::to_string(repeats) + "-fold cross-validation";
        std::vector<double> train_accs, test_accs;
        auto folds = kfold_split(records, repeats, seed);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            evaluate(kfold_train_test(folds, f), train_accs, test_accs);
        }
        row.train_mean = mean_of(train_accs);
        row.test_mean = mean_of(test_accs);
        row.train_stddev = population_stddev(train_accs);
        row.test_stddev = population_stddev(test_accs);
        rows.push_back(row);
    }

    {
        SplitMethodRow row;
        row.scheme = "Random selection by category";
        std::vector<double> train_accs, test_accs;
        for (std::size_t r = 0; r < repeats; ++r) {
            SplitSpec spec{SplitScheme::stratified_random, train_fraction, 0,
                           splitmix64(seed + 0x5EED + r)};
            evaluate(split_dataset(records, spec), train_accs, test_accs);
        }
        row.train_mean = mean_of(train_accs);
        row.test_mean = mean_of(test_accs);
        row.train_stddev = population_stddev(train_accs);
        row.test_stddev = population_stddev(test_accs);
        rows.push_back(row);
    }

    return rows;
}

std::string render_split_table(const std::vector<SplitMethodRow>& rows) {
    std::size_t name_width = 16; // "Splitting method"
    for (const SplitMethodRow& row : rows) {
        name_width = std::max(name_width, row.scheme.size());
    }
    std::ostringstream os;
    os << std::left;
    os.width(static_cast<std::streamsize>(name_width));
    os << "Splitting method";
    os << "  Train_M  Test_M   Train_V  Test_V\n";
    os << std::string(name_width + 37, '-') << "\n";
    for (const SplitMethodRow& row : rows) {
        os.width(static_cast<std::streamsize>(name_width));
        os << row.scheme;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "  %7.4f  %7.4f  %7.4f  %7.4f\n", row.train_mean,
                      row.test_mean, row.train_stddev, row.test_stddev);
        os << buf;
    }
    return os.str();
}

std::string split_rows_json(const std::vector<SplitMethodRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SplitMethodRow& row : rows) {
        arr.push_back(nlohmann::json{{"scheme", row.scheme},
                                     {"train_mean", row.train_mean},
                                     {"test_mean", row.test_mean},
                                     {"train_stddev", row.train_stddev},
                                     {"test_stddev", row.test_stddev}});
    }
    return arr.dump(2) + "\n";
}

} // namespace servenet
