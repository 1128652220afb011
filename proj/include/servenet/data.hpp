#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "servenet/embedding.hpp"

namespace servenet {

// One web service: free-text description plus its primary category label.
struct ServiceRecord {
    std::string description;
    std::string primary_category;

    bool operator==(const ServiceRecord&) const = default;
};

// A record after tokenization: padded token-id sequence and class index.
struct TokenizedService {
    std::vector<std::int32_t> tokens;
    std::size_t label = 0;
};

struct LengthStats {
    double mean = 0.0;   // tokens
    double stddev = 0.0; // population stddev, tokens
    std::size_t count = 0;
};

// ---------------------------------------------------------------------------
// Ingestion and cleaning
// ---------------------------------------------------------------------------

struct IngestResult {
    std::vector<ServiceRecord> records; // file order preserved
    std::size_t skipped = 0;            // objects missing Description/PrimaryCategory
};

// Reads a dataset of JSON objects, either one per line (JSON Lines) or as a
// single top-level array. Field aliases "Description"/"description" and
// "PrimaryCategory"/"primary_category" are accepted; other fields are
// ignored. Malformed JSON raises ParseError naming the line.
IngestResult ingest(const std::filesystem::path& path);

// Drops records whose description or category is empty after whitespace trim.
std::vector<ServiceRecord> clean(const std::vector<ServiceRecord>& records);

// (category, count) pairs, descending by count, ties broken alphabetically.
std::vector<std::pair<std::string, std::size_t>> category_histogram(
    const std::vector<ServiceRecord>& records);

// Keeps records whose category ranks among the top K. Removed records are
// dropped entirely, never remapped into another category. When K is at least
// the number of distinct categories everything is kept and *kept_all is set.
std::vector<ServiceRecord> keep_top_categories(const std::vector<ServiceRecord>& records,
                                               std::size_t k, bool* kept_all = nullptr);

// ---------------------------------------------------------------------------
// Description-length statistics
// ---------------------------------------------------------------------------

// Token counts use the same normalization as tokenize(), so the length filter
// and the model agree on what a token is.
std::size_t token_count(const std::string& description);

LengthStats length_stats(const std::vector<ServiceRecord>& records);

// Quantile of the standard normal distribution (inverse CDF).
double normal_quantile(double p);

// Two-sided interval mean +/- z * stddev at the given confidence level
// (default 90%, z = 1.6448536...).
std::pair<double, double> confidence_interval(const LengthStats& stats, double level = 0.90);

// Keeps records whose token count lies in [lo, hi] inclusive.
std::vector<ServiceRecord> filter_by_length(const std::vector<ServiceRecord>& records,
                                            std::size_t lo = 24, std::size_t hi = 110);

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

// Lowercases and replaces every character outside [a-z0-9'] with a space.
std::string normalize_text(const std::string& text);

std::vector<std::string> split_words(const std::string& normalized);

// normalize -> split -> vocabulary lookup (unknown -> OOV) -> truncate to
// max_len -> right-pad with PAD. Always returns exactly max_len ids.
std::vector<std::int32_t> tokenize(const std::string& description, const EmbeddingTable& table,
                                   std::size_t max_len);

// Sorted distinct category names; the index in this list is the class label.
std::vector<std::string> category_list(const std::vector<ServiceRecord>& records);

// Tokenizes every record and maps its category through `categories`.
// A category absent from the list raises DataError.
std::vector<TokenizedService> tokenize_dataset(const std::vector<ServiceRecord>& records,
                                               const EmbeddingTable& table, std::size_t max_len,
                                               const std::vector<std::string>& categories);

// ---------------------------------------------------------------------------
// Train/test selection
// ---------------------------------------------------------------------------

enum class SplitScheme { random, kfold, stratified_random };

struct SplitSpec {
    SplitScheme scheme = SplitScheme::stratified_random;
    double train_fraction = 0.7976; // ignored by kfold
    std::size_t folds = 10;         // kfold only
    std::uint64_t rng_seed = 42;
};

struct TrainTestSplit {
    std::vector<ServiceRecord> train;
    std::vector<ServiceRecord> test;
};

// random: one seeded shuffle, then a fraction cut. stratified_random: within
// each category (processed in sorted name order) a seeded shuffle, then a cut
// of round(fraction * count) clamped to [1, count-1]; a category with fewer
// than two records raises DataError naming it. For kfold use kfold_split.
TrainTestSplit split_dataset(const std::vector<ServiceRecord>& records, const SplitSpec& spec);

// Seeded shuffle, then k contiguous folds whose sizes differ by at most one.
std::vector<std::vector<ServiceRecord>> kfold_split(const std::vector<ServiceRecord>& records,
                                                    std::size_t k, std::uint64_t seed);

// Fold `index` becomes the test set, the others concatenate into train.
TrainTestSplit kfold_train_test(const std::vector<std::vector<ServiceRecord>>& folds,
                                std::size_t index);

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

// One {"description": ..., "primary_category": ...} object per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<ServiceRecord>& records);

} // namespace servenet
