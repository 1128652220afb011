#include "servenet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "servenet/error.hpp"

namespace servenet {

namespace {

using nlohmann::json;

void check_batch(const PredictionBatch& batch) {
    if (batch.targets.empty()) {
        throw DataError("metrics: empty batch");
    }
    if (batch.probabilities.rank() != 2 || batch.probabilities.dim(0) != batch.targets.size()) {
        throw DimensionError("metrics: probabilities " + batch.probabilities.shape().to_string() +
                             " do not match " + std::to_string(batch.targets.size()) + " targets");
    }
    const std::size_t C = batch.probabilities.dim(1);
    for (std::size_t t : batch.targets) {
        if (t >= C) {
            throw IndexError("metrics: target " + std::to_string(t) + " out of range [0, " +
                             std::to_string(C) + ")");
        }
    }
    for (std::size_t i = 0; i < batch.targets.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            sum += batch.probabilities.at(i, j);
        }
        if (!(std::abs(sum - 1.0) < 1e-9)) {
            throw DataError("metrics: probability row " + std::to_string(i) +
                            " sums to " + std::to_string(sum) + ", not 1");
        }
    }
}

// True when the target of `row` ranks within the top n. A class beats the
// target if its probability is higher, or equal with a lower index.
bool row_hit(const PredictionBatch& batch, std::size_t row, std::size_t n) {
    const std::size_t C = batch.probabilities.dim(1);
    const std::size_t target = batch.targets[row];
    const double* p = batch.probabilities.data() + row * C;
    const double pt = p[target];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < C; ++j) {
        if (p[j] > pt || (p[j] == pt && j < target)) {
            ++rank;
        }
    }
    return rank < n;
}

std::string format_pct(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    return buf;
}

} // namespace

double topn_accuracy(const PredictionBatch& batch, std::size_t n) {
    check_batch(batch);
    const std::size_t C = batch.probabilities.dim(1);
    if (n < 1 || n > C) {
        throw ParameterError("topn_accuracy: n " + std::to_string(n) + " out of range [1, " +
                             std::to_string(C) + "]");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.targets.size(); ++i) {
        if (row_hit(batch, i, n)) {
            ++hits;
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(batch.targets.size());
}

double sample_stddev(std::span<const double> values) {
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
    return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

EvalReport per_category_report(const PredictionBatch& batch, std::size_t n) {
    check_batch(batch);
    const std::size_t C = batch.probabilities.dim(1);
    if (batch.category_names.size() != C) {
        throw DimensionError("per_category_report: " + std::to_string(batch.category_names.size()) +
                             " category names for " + std::to_string(C) + " classes");
    }
    if (n < 1 || n > C) {
        throw ParameterError("per_category_report: n out of range");
    }

    EvalReport report;
    report.topn = n;
    report.top1 = topn_accuracy(batch, 1);
    report.top5 = topn_accuracy(batch, std::min<std::size_t>(5, C));

    std::vector<std::size_t> support(C, 0);
    std::vector<std::size_t> hits(C, 0);
    for (std::size_t i = 0; i < batch.targets.size(); ++i) {
        const std::size_t t = batch.targets[i];
        ++support[t];
        if (row_hit(batch, i, n)) {
            ++hits[t];
        }
    }

    std::vector<double> accuracies;
    for (std::size_t c = 0; c < C; ++c) {
        if (support[c] == 0) {
            continue; // no test rows: accuracy undefined, category omitted
        }
        CategoryAccuracy entry;
        entry.name = batch.category_names[c];
        entry.support = support[c];
        entry.accuracy = 100.0 * static_cast<double>(hits[c]) / static_cast<double>(support[c]);
        accuracies.push_back(entry.accuracy);
        report.per_category.push_back(std::move(entry));
    }
    report.sigma = sample_stddev(accuracies);
    return report;
}

std::string render_report(const EvalReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::json: {
            json per = json::array();
            for (const CategoryAccuracy& c : report.per_category) {
                per.push_back(json{{"category", c.name},
                                   {"support", c.support},
                                   {"accuracy", c.accuracy}});
            }
            json j{{"top1", report.top1},
                   {"top5", report.top5},
                   {"sigma", report.sigma},
                   {"topn", report.topn},
                   {"per_category", per}};
            return j.dump(2) + "\n";
        }
        case ReportFormat::radar_csv: {
            std::ostringstream os;
            for (const CategoryAccuracy& c : report.per_category) {
                os << c.name << ',' << format_pct(c.accuracy) << '\n';
            }
            return os.str();
        }
        case ReportFormat::text_table: {
            std::size_t name_width = 8; // "Category"
            for (const CategoryAccuracy& c : report.per_category) {
                name_width = std::max(name_width, c.name.size());
            }
            std::ostringstream os;
            os << std::left;
            os.width(static_cast<std::streamsize>(name_width));
            os << "Category";
            os << "  Support  Top-" << report.topn << "\n";
            os << std::string(name_width + 16, '-') << "\n";
            for (const CategoryAccuracy& c : report.per_category) {
                os.width(static_cast<std::streamsize>(name_width));
                os << c.name;
                char buf[64];
                std::snprintf(buf, sizeof(buf), "  %7zu  %6.2f", c.support, c.accuracy);
                os << buf << "\n";
            }
            os << std::string(name_width + 16, '-') << "\n";
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "top-1 %.2f%%  top-5 %.2f%%  sigma(top-%zu) %.2f\n",
                          report.top1, report.top5, report.topn, report.sigma);
            os << buf;
            return os.str();
        }
    }
    throw ParameterError("render_report: unknown format");
}

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw IoError("emit_report: cannot open '" + path.string() + "' for writing");
    }
    file << render_report(report, format);
    if (!file) {
        throw IoError("emit_report: write to '" + path.string() + "' failed");
    }
}

EvalReport parse_report_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("parse_report_json: ") + e.what());
    }
    EvalReport report;
    try {
        report.top1 = j.at("top1").get<double>();
        report.top5 = j.at("top5").get<double>();
        report.sigma = j.at("sigma").get<double>();
        report.topn = j.at("topn").get<std::size_t>();
        for (const json& c : j.at("per_category")) {
            report.per_category.push_back(CategoryAccuracy{c.at("category").get<std::string>(),
                                                           c.at("support").get<std::size_t>(),
                                                           c.at("accuracy").get<double>()});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("parse_report_json: missing field: ") + e.what());
    }
    return report;
}

} // namespace servenet
