#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vcm/common.hpp"

namespace vcm {

// One (word index, count) entry of a bag-of-words row.
struct WordCount {
  std::uint32_t word = 0;
  std::uint32_t count = 0;
  friend bool operator==(const WordCount&, const WordCount&) = default;
};

// Binary user x item interactions, one sorted unique index list per user.
struct ClickMatrix {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::vector<std::uint32_t>> rows;

  std::size_t interaction_count() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
  }
};

// Bag-of-words user x word counts, one sorted sparse row per user.
struct ReviewMatrix {
  std::size_t n_users = 0;
  std::size_t vocab_size = 0;
  std::vector<std::vector<WordCount>> rows;

  // W_u = sum_v y_uv
  std::uint64_t row_total(std::size_t u) const {
    std::uint64_t t = 0;
    for (const auto& wc : rows[u]) t += wc.count;
    return t;
  }
};

struct Vocabulary {
  std::vector<std::string> words;  // rank order, most frequent first
  std::size_t size() const { return words.size(); }

  std::int64_t index_of(const std::string& w) const {
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i] == w) return static_cast<std::int64_t>(i);
    }
    return -1;
  }
};

// Per-user partition of the click set; review rows are attached whole.
struct SplitDataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::vector<std::uint32_t>> train;
  std::vector<std::vector<std::uint32_t>> validation;
  std::vector<std::vector<std::uint32_t>> test;
};

namespace detail {

inline void write_pair_file(const std::filesystem::path& path,
                            const std::vector<std::vector<std::uint32_t>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VcmError("cannot open for writing: " + path.string());
  for (std::size_t u = 0; u < rows.size(); ++u) {
    for (std::uint32_t i : rows[u]) {
      out << u << ' ' << i << '\n';
    }
  }
}

inline std::vector<std::vector<std::uint32_t>> read_pair_file(
    const std::filesystem::path& path, std::size_t n_users, std::size_t n_cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VcmError("cannot open for reading: " + path.string());
  std::vector<std::vector<std::uint32_t>> rows(n_users);
  std::size_t u = 0;
  std::uint32_t i = 0;
  while (in >> u >> i) {
    if (u >= n_users || i >= n_cols) {
      throw VcmError("out-of-range entry (" + std::to_string(u) + ", " + std::to_string(i) +
                     ") in " + path.string());
    }
    rows[u].push_back(i);
  }
  for (auto& r : rows) std::sort(r.begin(), r.end());
  return rows;
}

}  // namespace detail

}  // namespace vcm
