#include "servenet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "servenet/error.hpp"
#include "servenet/rng.hpp"

namespace servenet {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return s.substr(b, e - b);
}

// Pulls description/category out of one JSON object; returns false when a
// required field is missing or not a string.
bool extract_record(const json& obj, ServiceRecord& out) {
    if (!obj.is_object()) {
        return false;
    }
    const json* desc = nullptr;
    const json* cat = nullptr;
    for (const char* key : {"Description", "description"}) {
        if (auto it = obj.find(key); it != obj.end()) {
            desc = &*it;
            break;
        }
    }
    for (const char* key : {"PrimaryCategory", "primary_category"}) {
        if (auto it = obj.find(key); it != obj.end()) {
            cat = &*it;
            break;
        }
    }
    if (desc == nullptr || cat == nullptr || !desc->is_string() || !cat->is_string()) {
        return false;
    }
    out.description = desc->get<std::string>();
    out.primary_category = cat->get<std::string>();
    return true;
}

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
        }
    }
    return line;
}

} // namespace

IngestResult ingest(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("ingest: cannot open '" + path.string() + "'");
    }
    std::string content((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    IngestResult result;
    const std::size_t first = content.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return result; // empty file
    }

    if (content[first] == '[') {
        json arr;
        try {
            arr = json::parse(content);
        } catch (const json::parse_error& e) {
            throw ParseError("ingest: line " + std::to_string(line_of_byte(content, e.byte)) +
                             ": " + e.what());
        }
        for (const json& obj : arr) {
            ServiceRecord rec;
            if (extract_record(obj, rec)) {
                result.records.push_back(std::move(rec));
            } else {
                ++result.skipped;
            }
        }
        return result;
    }

    std::istringstream lines(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("ingest: line " + std::to_string(line_no) + ": " + e.what());
        }
        ServiceRecord rec;
        if (extract_record(obj, rec)) {
            result.records.push_back(std::move(rec));
        } else {
            ++result.skipped;
        }
    }
    return result;
}

std::vector<ServiceRecord> clean(const std::vector<ServiceRecord>& records) {
    std::vector<ServiceRecord> out;
    out.reserve(records.size());
    for (const ServiceRecord& r : records) {
        if (!trim(r.description).empty() && !trim(r.primary_category).empty()) {
            out.push_back(r);
        }
    }
    return out;
}

std::vector<std::pair<std::string, std::size_t>> category_histogram(
    const std::vector<ServiceRecord>& records) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const ServiceRecord& r : records) {
        ++counts[r.primary_category];
    }
    std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    return out;
}

std::vector<ServiceRecord> keep_top_categories(const std::vector<ServiceRecord>& records,
                                               std::size_t k, bool* kept_all) {
    if (k == 0) {
        throw ParameterError("keep_top_categories: K must be >= 1");
    }
    auto histogram = category_histogram(records);
    if (kept_all != nullptr) {
        *kept_all = k >= histogram.size();
    }
    std::unordered_map<std::string, bool> keep;
    for (std::size_t i = 0; i < histogram.size() && i < k; ++i) {
        keep[histogram[i].first] = true;
    }
    std::vector<ServiceRecord> out;
    out.reserve(records.size());
    for (const ServiceRecord& r : records) {
        if (keep.count(r.primary_category)) {
            out.push_back(r);
        }
    }
    return out;
}

std::size_t token_count(const std::string& description) {
    return split_words(normalize_text(description)).size();
}

LengthStats length_stats(const std::vector<ServiceRecord>& records) {
    if (records.empty()) {
        throw DataError("length_stats: empty record list");
    }
    LengthStats stats;
    stats.count = records.size();
    double sum = 0.0;
    std::vector<double> lengths;
    lengths.reserve(records.size());
    for (const ServiceRecord& r : records) {
        lengths.push_back(static_cast<double>(token_count(r.description)));
        sum += lengths.back();
    }
    stats.mean = sum / static_cast<double>(stats.count);
    double sq = 0.0;
    for (double len : lengths) {
        const double d = len - stats.mean;
        sq += d * d;
    }
    stats.stddev = std::sqrt(sq / static_cast<double>(stats.count));
    return stats;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw ParameterError("normal_quantile: p must lie in (0, 1)");
    }
    // Acklam's rational approximation, then one Halley refinement against the
    // erfc-based CDF; accurate to ~1e-13.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley step: e = CDF(x) - p, u = e / pdf(x), x -= u / (1 + x u / 2)
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * 3.141592653589793238462643383279502884) *
                     std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

std::pair<double, double> confidence_interval(const LengthStats& stats, double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw ParameterError("confidence_interval: level must lie in (0, 1)");
    }
    const double z = normal_quantile(0.5 + level / 2.0);
    return {stats.mean - z * stats.stddev, stats.mean + z * stats.stddev};
}

std::vector<ServiceRecord> filter_by_length(const std::vector<ServiceRecord>& records,
                                            std::size_t lo, std::size_t hi) {
    if (lo > hi) {
        throw ParameterError("filter_by_length: lo " + std::to_string(lo) + " > hi " +
                             std::to_string(hi));
    }
    std::vector<ServiceRecord> out;
    out.reserve(records.size());
    for (const ServiceRecord& r : records) {
        const std::size_t len = token_count(r.description);
        if (len >= lo && len <= hi) {
            out.push_back(r);
        }
    }
    return out;
}

std::string normalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) && u < 128) {
            out.push_back(static_cast<char>(std::tolower(u)));
        } else if (ch == '\'') {
            out.push_back(ch);
        } else {
            out.push_back(' ');
        }
    }
    return out;
}

std::vector<std::string> split_words(const std::string& normalized) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < normalized.size()) {
        while (i < normalized.size() && normalized[i] == ' ') {
            ++i;
        }
        std::size_t start = i;
        while (i < normalized.size() && normalized[i] != ' ') {
            ++i;
        }
        if (i > start) {
            words.push_back(normalized.substr(start, i - start));
        }
    }
    return words;
}

std::vector<std::int32_t> tokenize(const std::string& description, const EmbeddingTable& table,
                                   std::size_t max_len) {
    std::vector<std::int32_t> ids(max_len, EmbeddingTable::kPadId);
    const std::vector<std::string> words = split_words(normalize_text(description));
    const std::size_t n = std::min(words.size(), max_len);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = table.lookup(words[i]);
    }
    return ids;
}

std::vector<std::string> category_list(const std::vector<ServiceRecord>& records) {
    std::vector<std::string> cats;
    for (const ServiceRecord& r : records) {
        cats.push_back(r.primary_category);
    }
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    return cats;
}

std::vector<TokenizedService> tokenize_dataset(const std::vector<ServiceRecord>& records,
                                               const EmbeddingTable& table, std::size_t max_len,
                                               const std::vector<std::string>& categories) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        index[categories[i]] = i;
    }
    std::vector<TokenizedService> out;
    out.reserve(records.size());
    for (const ServiceRecord& r : records) {
        auto it = index.find(r.primary_category);
        if (it == index.end()) {
            throw DataError("tokenize_dataset: category '" + r.primary_category +
                            "' not in the class list");
        }
        out.push_back(TokenizedService{tokenize(r.description, table, max_len), it->second});
    }
    return out;
}

// ---------------------------------------------------------------------------
// GloVe
// ---------------------------------------------------------------------------

EmbeddingTable load_glove(const std::filesystem::path& path, std::size_t expected_dim,
                          std::size_t* duplicate_count) {
    if (expected_dim == 0) {
        throw ParameterError("load_glove: expected_dim must be >= 1");
    }
    std::ifstream file(path);
    if (!file) {
        throw IoError("load_glove: cannot open '" + path.string() + "'");
    }

    std::vector<std::string> words;
    std::vector<double> values; // row-major word vectors in first-seen order
    std::unordered_map<std::string, std::size_t> seen; // word -> slot
    std::size_t duplicates = 0;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        std::size_t pos = 0;
        while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') {
            ++pos;
        }
        std::string word = line.substr(0, pos);

        std::vector<double> vec;
        vec.reserve(expected_dim);
        const char* cursor = line.c_str() + pos;
        const char* end = line.c_str() + line.size();
        while (cursor < end) {
            char* next = nullptr;
            const double v = std::strtod(cursor, &next);
            if (next == cursor) {
                break; // trailing whitespace
            }
            vec.push_back(v);
            cursor = next;
        }
        if (vec.size() != expected_dim) {
            throw ParseError("load_glove: line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected_dim) + " values for '" + word + "', got " +
                             std::to_string(vec.size()));
        }

        auto it = seen.find(word);
        if (it != seen.end()) {
            ++duplicates; // last occurrence wins
            std::copy(vec.begin(), vec.end(), values.begin() +
                      static_cast<std::ptrdiff_t>(it->second * expected_dim));
        } else {
            seen[word] = words.size();
            words.push_back(std::move(word));
            values.insert(values.end(), vec.begin(), vec.end());
        }
    }
    if (duplicate_count != nullptr) {
        *duplicate_count = duplicates;
    }

    EmbeddingTable table;
    table.dim = expected_dim;
    table.matrix = Tensor(Shape{words.size() + 2, expected_dim}); // rows 0/1 stay zero
    for (std::size_t w = 0; w < words.size(); ++w) {
        const std::int32_t row = static_cast<std::int32_t>(w + 2);
        table.vocab[words[w]] = row;
        double* dst = table.matrix.data() + static_cast<std::size_t>(row) * expected_dim;
        const double* src = values.data() + w * expected_dim;
        std::copy(src, src + expected_dim, dst);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

std::size_t clamped_train_count(double fraction, std::size_t n) {
    const long long raw = std::llround(fraction * static_cast<double>(n));
    const long long hi = static_cast<long long>(n) - 1;
    return static_cast<std::size_t>(std::max(1LL, std::min(raw, hi)));
}

} // namespace

TrainTestSplit split_dataset(const std::vector<ServiceRecord>& records, const SplitSpec& spec) {
    if (spec.scheme == SplitScheme::kfold) {
        throw ParameterError("split_dataset: use kfold_split for the kfold scheme");
    }
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw ParameterError("split_dataset: train_fraction must lie in (0, 1)");
    }
    if (records.size() < 2) {
        throw DataError("split_dataset: need at least 2 records");
    }

    DetRng rng(spec.rng_seed);
    TrainTestSplit out;

    if (spec.scheme == SplitScheme::random) {
        std::vector<std::size_t> idx(records.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        rng.shuffle(idx);
        const std::size_t train_n = clamped_train_count(spec.train_fraction, records.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < train_n ? out.train : out.test).push_back(records[idx[i]]);
        }
        return out;
    }

    // stratified: categories processed in sorted name order for determinism
    std::map<std::string, std::vector<std::size_t>> by_category;
    for (std::size_t i = 0; i < records.size(); ++i) {
        by_category[records[i].primary_category].push_back(i);
    }
    for (auto& [category, members] : by_category) {
        if (members.size() < 2) {
            throw DataError("split_dataset: category '" + category +
                            "' has only 1 record; stratified split needs >= 2");
        }
        rng.shuffle(members);
        const std::size_t train_n = clamped_train_count(spec.train_fraction, members.size());
        for (std::size_t i = 0; i < members.size(); ++i) {
            (i < train_n ? out.train : out.test).push_back(records[members[i]]);
        }
    }
    return out;
}

std::vector<std::vector<ServiceRecord>> kfold_split(const std::vector<ServiceRecord>& records,
                                                    std::size_t k, std::uint64_t seed) {
    if (k < 2) {
        throw ParameterError("kfold_split: k must be >= 2");
    }
    if (records.size() < k) {
        throw DataError("kfold_split: fewer records than folds");
    }
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    DetRng rng(seed);
    rng.shuffle(idx);

    std::vector<std::vector<ServiceRecord>> folds(k);
    const std::size_t base = records.size() / k;
    const std::size_t extra = records.size() % k; // first `extra` folds get one more
    std::size_t cursor = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        folds[f].reserve(size);
        for (std::size_t i = 0; i < size; ++i) {
            folds[f].push_back(records[idx[cursor++]]);
        }
    }
    return folds;
}

TrainTestSplit kfold_train_test(const std::vector<std::vector<ServiceRecord>>& folds,
                                std::size_t index) {
    if (index >= folds.size()) {
        throw ParameterError("kfold_train_test: fold index out of range");
    }
    TrainTestSplit out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        auto& dst = (f == index) ? out.test : out.train;
        dst.insert(dst.end(), folds[f].begin(), folds[f].end());
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ServiceRecord>& records) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw IoError("write_jsonl: cannot open '" + path.string() + "' for writing");
    }
    for (const ServiceRecord& r : records) {
        json obj{{"description", r.description}, {"primary_category", r.primary_category}};
        file << obj.dump() << '\n';
    }
    if (!file) {
        throw IoError("write_jsonl: write to '" + path.string() + "' failed");
    }
}

} // namespace servenet
