#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "servenet/data.hpp"
#include "servenet/tensor.hpp"

namespace servenet {

// Multinomial Naive Bayes over bag-of-words with additive smoothing. The
// vocabulary comes from the training split only; unseen test words use the
// smoothed zero-count likelihood.
struct NBModel {
    std::vector<std::string> categories;             // class index -> name, sorted
    std::unordered_map<std::string, std::size_t> vocab; // word -> column
    std::vector<double> log_prior;                   // (C)
    Tensor log_likelihood;                           // (C, V)
    std::vector<double> log_unseen;                  // (C) smoothed unseen-word term
    double alpha = 1.0;
    bool binary_features = false; // count each word once per document
};

// priors = class counts / N; likelihood(w|c) = (count(w,c) + alpha) /
// (count(c) + alpha * V).
NBModel nb_fit(const std::vector<ServiceRecord>& train, double alpha = 1.0,
               bool binary_features = false);

// Posterior over categories, computed in log space and normalized. An empty
// description returns the priors.
std::vector<double> nb_predict(const NBModel& model, const ServiceRecord& record);

// Top-1 accuracy (percentage) by category name, so records whose category the
// model never saw count as misses rather than faulting.
double nb_accuracy(const NBModel& model, const std::vector<ServiceRecord>& records);

struct SplitMethodRow {
    std::string scheme;
    double train_mean = 0.0;   // mean accuracy %, over repeats
    double test_mean = 0.0;
    double train_stddev = 0.0; // population stddev over repeats
    double test_stddev = 0.0;
};

// Benchmarks three selection schemes with Naive Bayes: repeated random
// splits, k-fold cross-validation (k = repeats), and repeated stratified
// splits. Returns one row per scheme with mean/stddev of train and test
// accuracy.
std::vector<SplitMethodRow> compare_split_methods(const std::vector<ServiceRecord>& records,
                                                  std::size_t repeats, double train_fraction,
                                                  std::uint64_t seed, double alpha = 1.0,
                                                  bool binary_features = false);

std::string render_split_table(const std::vector<SplitMethodRow>& rows);
std::string split_rows_json(const std::vector<SplitMethodRow>& rows);

} // namespace servenet
