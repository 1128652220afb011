#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "servenet/tensor.hpp"

namespace servenet {

// Scored predictions for a set of samples. Each probability row sums to 1;
// `targets[i]` is the true class index of row i.
struct PredictionBatch {
    Tensor probabilities; // (N, C)
    std::vector<std::size_t> targets;
    std::vector<std::string> category_names; // length C
};

struct CategoryAccuracy {
    std::string name;
    std::size_t support = 0;
    double accuracy = 0.0; // top-n percentage

    bool operator==(const CategoryAccuracy&) const = default;
};

struct EvalReport {
    double top1 = 0.0; // percentages
    double top5 = 0.0;
    double sigma = 0.0; // stddev of per-category top-n accuracies
    std::size_t topn = 5;
    std::vector<CategoryAccuracy> per_category; // class-index order, empty categories absent

    bool operator==(const EvalReport&) const = default;
};

// Percentage of rows whose target ranks among the n highest probabilities.
// Ties rank the lower class index first, so scoring is reproducible.
double topn_accuracy(const PredictionBatch& batch, std::size_t n);

// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
// This is the dispersion convention the cross-category sigma uses.
double sample_stddev(std::span<const double> values);

// Per-category top-n table plus overall top-1/top-5 and the cross-category
// sigma. Categories with no test rows are omitted.
EvalReport per_category_report(const PredictionBatch& batch, std::size_t n = 5);

enum class ReportFormat { text_table, json, radar_csv };

std::string render_report(const EvalReport& report, ReportFormat format);

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path);

// Inverse of render_report(..., ReportFormat::json).
EvalReport parse_report_json(const std::string& text);

} // namespace servenet
