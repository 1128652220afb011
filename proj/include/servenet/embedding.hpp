#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>

#include "servenet/tensor.hpp"

namespace servenet {

// Vocabulary-to-vector map in GloVe text format. Rows 0 and 1 are reserved
// all-zero rows for padding and out-of-vocabulary tokens; real words occupy
// rows 2..V+1.
struct EmbeddingTable {
    static constexpr std::int32_t kPadId = 0;
    static constexpr std::int32_t kOovId = 1;

    std::unordered_map<std::string, std::int32_t> vocab; // word -> row index (>= 2)
    Tensor matrix;                                       // (V + 2, dim)
    std::size_t dim = 0;

    std::size_t word_count() const { return vocab.size(); }
    std::size_t row_count() const { return matrix.rank() == 2 ? matrix.dim(0) : 0; }

    // Row index for a word, or kOovId when absent.
    std::int32_t lookup(const std::string& word) const {
        auto it = vocab.find(word);
        return it == vocab.end() ? kOovId : it->second;
    }
};

// Loads a GloVe text file: one entry per line, word followed by
// expected_dim whitespace-separated decimals. A line with the wrong value
// count raises ParseError naming the line; a duplicate word keeps the last
// occurrence (counted in *duplicate_count when given).
EmbeddingTable load_glove(const std::filesystem::path& path, std::size_t expected_dim,
                          std::size_t* duplicate_count = nullptr);

} // namespace servenet
