#pragma once

// Seeded two-cluster synthetic dataset: each user belongs to one of two
// clusters; clicks concentrate on the cluster's item half and review words
// on the cluster's vocabulary half, so review text genuinely carries click
// preference information.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vcm/data.hpp"
#include "vcm/pipeline.hpp"
#include "vcm/rng.hpp"

namespace synthetic {

struct Config {
  std::size_t n_users = 200;
  std::size_t n_items = 50;
  std::size_t vocab_size = 60;
  double click_in_cluster = 0.85;
  double word_in_cluster = 0.90;
  std::size_t min_clicks = 5;
  std::size_t click_spread = 26;  // clicks per user in [min, min+spread)
  std::size_t min_words = 30;
  std::size_t word_spread = 31;
  std::uint64_t seed = 7;
};

struct Data {
  vcm::ClickMatrix clicks;
  vcm::ReviewMatrix reviews;
  vcm::SplitDataset split;
  std::vector<int> cluster;
};

inline Data generate(const Config& cfg) {
  Data data;
  data.clicks.n_users = cfg.n_users;
  data.clicks.n_items = cfg.n_items;
  data.clicks.rows.resize(cfg.n_users);
  data.reviews.n_users = cfg.n_users;
  data.reviews.vocab_size = cfg.vocab_size;
  data.reviews.rows.resize(cfg.n_users);
  data.cluster.resize(cfg.n_users);

  vcm::RngStream root(cfg.seed);
  const std::size_t item_half = cfg.n_items / 2;
  const std::size_t word_half = cfg.vocab_size / 2;

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    vcm::RngStream rng = root.derive(u);
    const int cl = static_cast<int>(u % 2);
    data.cluster[u] = cl;

    const std::size_t n_clicks = cfg.min_clicks + rng.next_below(cfg.click_spread);
    std::set<std::uint32_t> items;
    while (items.size() < n_clicks && items.size() < cfg.n_items) {
      const bool own = rng.next_double() < cfg.click_in_cluster;
      // cluster 0 owns items [0, half), cluster 1 owns [half, n)
      const std::size_t base = (own == (cl == 0)) ? 0 : item_half;
      const std::size_t pool = (base == 0) ? item_half : cfg.n_items - item_half;
      items.insert(static_cast<std::uint32_t>(base + rng.next_below(pool)));
    }
    data.clicks.rows[u].assign(items.begin(), items.end());

    const std::size_t n_words = cfg.min_words + rng.next_below(cfg.word_spread);
    std::map<std::uint32_t, std::uint32_t> counts;
    for (std::size_t t = 0; t < n_words; ++t) {
      const bool own = rng.next_double() < cfg.word_in_cluster;
      const std::size_t base = (own == (cl == 0)) ? 0 : word_half;
      const std::size_t pool = (base == 0) ? word_half : cfg.vocab_size - word_half;
      // quadratic skew gives the within-cluster distribution a frequency
      // gradient, so reconstruction is not trivially uniform
      const double r = rng.next_double();
      const std::size_t offset = static_cast<std::size_t>(r * r * static_cast<double>(pool));
      ++counts[static_cast<std::uint32_t>(base + std::min(offset, pool - 1))];
    }
    for (const auto& [w, c] : counts) data.reviews.rows[u].push_back({w, c});
  }

  data.split = vcm::split_per_user(data.clicks, 0.6, 0.2, 0.2,
                                   vcm::RngStream(cfg.seed).derive(vcm::kSplitSalt));
  return data;
}

// Writes the raw TSV form consumed by `vcm preprocess`. Zero-padded ids keep
// sorted-id order equal to generation order.
inline void write_tsv(const Data& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char buf[32];
  {
    std::ofstream out(dir / "interactions.tsv", std::ios::binary);
    for (std::size_t u = 0; u < data.clicks.rows.size(); ++u) {
      for (std::uint32_t i : data.clicks.rows[u]) {
        std::snprintf(buf, sizeof(buf), "u%03zu\ti%02u\t5", u, i);
        out << buf << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "reviews.tsv", std::ios::binary);
    for (std::size_t u = 0; u < data.reviews.rows.size(); ++u) {
      std::snprintf(buf, sizeof(buf), "u%03zu\t", u);
      out << buf;
      bool first = true;
      for (const auto& wc : data.reviews.rows[u]) {
        for (std::uint32_t c = 0; c < wc.count; ++c) {
          if (!first) out << ' ';
          first = false;
          std::snprintf(buf, sizeof(buf), "w%02u", wc.word);
          out << buf;
        }
      }
      out << '\n';
    }
  }
}

}  // namespace synthetic
