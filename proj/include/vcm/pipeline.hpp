#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/rng.hpp"

namespace vcm {

// Fixed salt assignments per random purpose; keeping them distinct means the
// split, init, noise and shuffle streams never alias.
inline constexpr std::uint64_t kSplitSalt = 101;
inline constexpr std::uint64_t kInitSalt = 102;
inline constexpr std::uint64_t kShuffleSalt = 103;
inline constexpr std::uint64_t kNoiseSalt = 104;

struct RawInteraction {
  std::string user;
  std::string item;
  double rating = 0.0;
};

struct RawReview {
  std::string user;
  std::string text;
};

struct PreprocessConfig {
  double rating_threshold = 4.0;
  std::size_t min_user_clicks = 5;
  std::size_t min_item_users = 5;
  std::size_t vocab_size = 10000;
  std::uint64_t seed = 1;
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  double test_fraction = 0.2;
  std::string stopwords_path;  // empty => built-in default list
};

inline nlohmann::json preprocess_config_to_json(const PreprocessConfig& c) {
  return nlohmann::json{{"rating_threshold", c.rating_threshold},
                        {"min_user_clicks", c.min_user_clicks},
                        {"min_item_users", c.min_item_users},
                        {"vocab_size", c.vocab_size},
                        {"seed", c.seed},
                        {"split_fractions",
                         {c.train_fraction, c.validation_fraction, c.test_fraction}},
                        {"stopwords_path", c.stopwords_path}};
}

inline PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "rating_threshold", "min_user_clicks", "min_item_users", "vocab_size",
      "seed",             "split_fractions", "stopwords_path"};
  std::vector<std::string> issues;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      issues.push_back("unknown config key '" + it.key() + "'");
    }
  }
  PreprocessConfig c;
  try {
    c.rating_threshold = j.value("rating_threshold", c.rating_threshold);
    c.min_user_clicks = j.value("min_user_clicks", c.min_user_clicks);
    c.min_item_users = j.value("min_item_users", c.min_item_users);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split_fractions")) {
      const auto& f = j.at("split_fractions");
      c.train_fraction = f.at(0).get<double>();
      c.validation_fraction = f.at(1).get<double>();
      c.test_fraction = f.at(2).get<double>();
    }
    c.stopwords_path = j.value("stopwords_path", c.stopwords_path);
  } catch (const std::exception& e) {
    issues.push_back(e.what());
  }
  if (c.vocab_size == 0) issues.push_back("vocab_size must be >= 1");
  if (c.min_user_clicks == 0) issues.push_back("min_user_clicks must be >= 1");
  if (c.min_item_users == 0) issues.push_back("min_item_users must be >= 1");
  if (!std::isfinite(c.rating_threshold)) issues.push_back("rating_threshold must be finite");
  const double frac_sum = c.train_fraction + c.validation_fraction + c.test_fraction;
  if (std::abs(frac_sum - 1.0) > 1e-9) issues.push_back("split_fractions must sum to 1");
  if (!issues.empty()) {
    std::string msg = "invalid preprocess config:";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ConfigError(msg);
  }
  return c;
}

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double sparsity = 0.0;
};

inline double sparsity_of(std::size_t users, std::size_t items, std::size_t interactions) {
  if (users == 0 || items == 0) return 0.0;
  return static_cast<double>(interactions) / (static_cast<double>(users) * static_cast<double>(items));
}

inline DatasetStats dataset_stats(const ClickMatrix& clicks, bool allow_empty = false) {
  DatasetStats s;
  s.users = clicks.n_users;
  s.items = clicks.n_items;
  s.interactions = clicks.interaction_count();
  if (s.interactions == 0 && !allow_empty) {
    throw VcmError("dataset_stats: empty click matrix");
  }
  s.sparsity = sparsity_of(s.users, s.items, s.interactions);
  return s;
}

// Keeps pairs with rating >= threshold, deduplicated, first-occurrence order.
inline std::vector<std::pair<std::string, std::string>> binarize(
    const std::vector<RawInteraction>& interactions, double threshold) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& it : interactions) {
    if (it.rating >= threshold) {
      auto key = std::make_pair(it.user, it.item);
      if (seen.insert(key).second) out.push_back(std::move(key));
    }
  }
  return out;
}

// Alternates user-degree and item-degree pruning until a fixed point, so the
// result satisfies both minimum-degree constraints simultaneously and does
// not depend on filter order.
inline std::vector<std::pair<std::string, std::string>> filter_activity(
    std::vector<std::pair<std::string, std::string>> pairs, std::size_t min_user_clicks,
    std::size_t min_item_users) {
  if (min_user_clicks < 1 || min_item_users < 1) {
    throw ConfigError("filter_activity: thresholds must be >= 1");
  }
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, std::size_t> user_deg;
    for (const auto& p : pairs) ++user_deg[p.first];
    std::vector<std::pair<std::string, std::string>> kept;
    kept.reserve(pairs.size());
    for (auto& p : pairs) {
      if (user_deg[p.first] >= min_user_clicks) kept.push_back(std::move(p));
    }
    if (kept.size() != pairs.size()) changed = true;
    pairs = std::move(kept);

    std::unordered_map<std::string, std::size_t> item_deg;
    for (const auto& p : pairs) ++item_deg[p.second];
    kept.clear();
    kept.reserve(pairs.size());
    for (auto& p : pairs) {
      if (item_deg[p.second] >= min_item_users) kept.push_back(std::move(p));
    }
    if (kept.size() != pairs.size()) changed = true;
    pairs = std::move(kept);
  }
  return pairs;
}

// Lowercased tokenization over non-alphanumeric separators. Bytes >= 0x80
// are kept as token characters so UTF-8 sequences are not split.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    const bool token_char = std::isalnum(c) || c >= 0x80;
    if (token_char) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<std::string> default_stop_words();

// Top-V words by corpus frequency after stop-word removal; ties broken
// lexicographically. Reviews are expected pre-merged per user.
inline Vocabulary build_vocabulary(const std::vector<RawReview>& reviews,
                                   const std::set<std::string>& stop_words, std::size_t v) {
  if (v < 1) throw ConfigError("build_vocabulary: V must be >= 1");
  std::map<std::string, std::uint64_t> freq;
  for (const auto& r : reviews) {
    for (auto& tok : tokenize(r.text)) {
      if (!stop_words.count(tok)) ++freq[tok];
    }
  }
  if (freq.empty()) throw VcmError("build_vocabulary: empty corpus after stop-word removal");
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  const std::size_t take = std::min(v, ranked.size());
  vocab.words.reserve(take);
  for (std::size_t i = 0; i < take; ++i) vocab.words.push_back(ranked[i].first);
  return vocab;
}

// y_u[v] = count of vocabulary word v in user u's merged document. Reviews
// must be ordered to match user indices. Users whose document vectorizes to
// an all-zero row are reported in zero_rows.
inline ReviewMatrix vectorize_reviews(const std::vector<RawReview>& merged_reviews,
                                      const Vocabulary& vocab,
                                      std::vector<std::size_t>* zero_rows = nullptr) {
  std::unordered_map<std::string, std::uint32_t> index;
  index.reserve(vocab.words.size());
  for (std::uint32_t i = 0; i < vocab.words.size(); ++i) index.emplace(vocab.words[i], i);

  ReviewMatrix m;
  m.n_users = merged_reviews.size();
  m.vocab_size = vocab.words.size();
  m.rows.resize(m.n_users);
  for (std::size_t u = 0; u < merged_reviews.size(); ++u) {
    std::map<std::uint32_t, std::uint32_t> counts;
    for (auto& tok : tokenize(merged_reviews[u].text)) {
      auto it = index.find(tok);
      if (it != index.end()) ++counts[it->second];
    }
    auto& row = m.rows[u];
    row.reserve(counts.size());
    for (const auto& [w, c] : counts) row.push_back({w, c});
    if (row.empty() && zero_rows) zero_rows->push_back(u);
  }
  return m;
}

struct SplitReport {
  std::size_t degenerate_users = 0;  // users with < 3 clicks, assigned all-train
};

// Per-user seeded partition: train gets ceil(f_train * n), the remainder is
// split between validation and test (validation takes the odd element).
// Users with fewer than 3 clicks keep everything in train.
inline SplitDataset split_per_user(const ClickMatrix& clicks, double train_fraction,
                                   double validation_fraction, double test_fraction,
                                   RngStream rng, SplitReport* report = nullptr) {
  const double total = train_fraction + validation_fraction + test_fraction;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split_per_user: fractions must sum to 1, got " + std::to_string(total));
  }
  SplitDataset split;
  split.n_users = clicks.n_users;
  split.n_items = clicks.n_items;
  split.train.resize(clicks.n_users);
  split.validation.resize(clicks.n_users);
  split.test.resize(clicks.n_users);
  for (std::size_t u = 0; u < clicks.n_users; ++u) {
    std::vector<std::uint32_t> order = clicks.rows[u];
    const std::size_t n = order.size();
    if (n < 3) {
      split.train[u] = order;
      if (report && n > 0) ++report->degenerate_users;
      continue;
    }
    RngStream user_rng = rng.derive(u);
    shuffle(order, user_rng);
    std::size_t n_train = static_cast<std::size_t>(
        std::ceil(train_fraction * static_cast<double>(n) - 1e-12));
    n_train = std::max<std::size_t>(1, std::min(n_train, n));
    const std::size_t rem = n - n_train;
    const double val_share = validation_fraction / (validation_fraction + test_fraction);
    const std::size_t n_val = static_cast<std::size_t>(
        std::ceil(val_share * static_cast<double>(rem) - 1e-12));
    split.train[u].assign(order.begin(), order.begin() + n_train);
    split.validation[u].assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.test[u].assign(order.begin() + n_train + n_val, order.end());
    std::sort(split.train[u].begin(), split.train[u].end());
    std::sort(split.validation[u].begin(), split.validation[u].end());
    std::sort(split.test[u].begin(), split.test[u].end());
  }
  return split;
}

// Everything the preprocess step produces, kept together so it can be
// written to and reloaded from a dataset directory.
struct ProcessedDataset {
  PreprocessConfig config;
  std::vector<std::string> user_ids;   // index order
  std::vector<std::string> item_ids;   // index order
  Vocabulary vocab;
  SplitDataset split;
  ReviewMatrix reviews;
  std::vector<std::size_t> zero_review_users;
  SplitReport split_report;

  ClickMatrix full_clicks() const {
    ClickMatrix m;
    m.n_users = split.n_users;
    m.n_items = split.n_items;
    m.rows.resize(m.n_users);
    for (std::size_t u = 0; u < m.n_users; ++u) {
      auto& row = m.rows[u];
      row.insert(row.end(), split.train[u].begin(), split.train[u].end());
      row.insert(row.end(), split.validation[u].begin(), split.validation[u].end());
      row.insert(row.end(), split.test[u].begin(), split.test[u].end());
      std::sort(row.begin(), row.end());
    }
    return m;
  }
};

// Full pipeline: binarize -> degree filter -> index -> vocabulary ->
// vectorize -> split. User and item indices follow sorted id order.
inline ProcessedDataset preprocess(const std::vector<RawInteraction>& interactions,
                                   const std::vector<RawReview>& reviews,
                                   const PreprocessConfig& cfg) {
  ProcessedDataset ds;
  ds.config = cfg;

  auto pairs = binarize(interactions, cfg.rating_threshold);
  pairs = filter_activity(std::move(pairs), cfg.min_user_clicks, cfg.min_item_users);

  std::set<std::string> users, items;
  for (const auto& p : pairs) {
    users.insert(p.first);
    items.insert(p.second);
  }
  ds.user_ids.assign(users.begin(), users.end());
  ds.item_ids.assign(items.begin(), items.end());
  std::unordered_map<std::string, std::uint32_t> user_index, item_index;
  for (std::uint32_t i = 0; i < ds.user_ids.size(); ++i) user_index.emplace(ds.user_ids[i], i);
  for (std::uint32_t i = 0; i < ds.item_ids.size(); ++i) item_index.emplace(ds.item_ids[i], i);

  ClickMatrix clicks;
  clicks.n_users = ds.user_ids.size();
  clicks.n_items = ds.item_ids.size();
  clicks.rows.resize(clicks.n_users);
  for (const auto& p : pairs) {
    clicks.rows[user_index[p.first]].push_back(item_index[p.second]);
  }
  for (auto& row : clicks.rows) std::sort(row.begin(), row.end());

  // Merge each surviving user's reviews into one document.
  std::vector<RawReview> merged(clicks.n_users);
  for (std::size_t u = 0; u < merged.size(); ++u) merged[u].user = ds.user_ids[u];
  for (const auto& r : reviews) {
    auto it = user_index.find(r.user);
    if (it == user_index.end()) continue;
    auto& doc = merged[it->second].text;
    if (!doc.empty()) doc.push_back(' ');
    doc += r.text;
  }

  std::set<std::string> stop_words;
  if (cfg.stopwords_path.empty()) {
    auto defaults = default_stop_words();
    stop_words.insert(defaults.begin(), defaults.end());
  } else {
    std::ifstream in(cfg.stopwords_path);
    if (!in) throw VcmError("cannot open stop-word file: " + cfg.stopwords_path);
    std::string w;
    while (in >> w) stop_words.insert(w);
  }

  ds.vocab = build_vocabulary(merged, stop_words, cfg.vocab_size);
  ds.reviews = vectorize_reviews(merged, ds.vocab, &ds.zero_review_users);
  ds.split = split_per_user(clicks, cfg.train_fraction, cfg.validation_fraction,
                            cfg.test_fraction, RngStream(cfg.seed).derive(kSplitSalt),
                            &ds.split_report);
  return ds;
}

// ---- dataset directory (text formats, bit-stable round trip) ----

inline void save_dataset(const ProcessedDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  auto write_lines = [&](const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw VcmError("cannot open for writing: " + p.string());
    for (const auto& l : lines) out << l << '\n';
  };
  write_lines(dir / "users.txt", ds.user_ids);
  write_lines(dir / "items.txt", ds.item_ids);
  write_lines(dir / "vocab.txt", ds.vocab.words);

  detail::write_pair_file(dir / "train.txt", ds.split.train);
  detail::write_pair_file(dir / "validation.txt", ds.split.validation);
  detail::write_pair_file(dir / "test.txt", ds.split.test);

  {
    std::ofstream out(dir / "reviews.txt", std::ios::binary);
    if (!out) throw VcmError("cannot open for writing: " + (dir / "reviews.txt").string());
    for (std::size_t u = 0; u < ds.reviews.rows.size(); ++u) {
      for (const auto& wc : ds.reviews.rows[u]) {
        out << u << ' ' << wc.word << ' ' << wc.count << '\n';
      }
    }
  }

  nlohmann::json idx;
  idx["format"] = "vcm-dataset";
  idx["format_version"] = 1;
  idx["n_users"] = ds.user_ids.size();
  idx["n_items"] = ds.item_ids.size();
  idx["vocab_size"] = ds.vocab.words.size();
  idx["seed"] = ds.config.seed;
  idx["thresholds"] = {{"rating", ds.config.rating_threshold},
                       {"min_user_clicks", ds.config.min_user_clicks},
                       {"min_item_users", ds.config.min_item_users}};
  idx["split_fractions"] = {ds.config.train_fraction, ds.config.validation_fraction,
                            ds.config.test_fraction};
  // Input normalization convention consumed by the model; recorded here so a
  // dataset is always paired with the transform it was trained under.
  idx["normalization"] = {{"click", "l2"}, {"review", "l1_log1p"}};
  idx["counts"] = {{"train", std::accumulate(ds.split.train.begin(), ds.split.train.end(),
                                             std::size_t{0},
                                             [](std::size_t a, const auto& r) { return a + r.size(); })},
                   {"validation",
                    std::accumulate(ds.split.validation.begin(), ds.split.validation.end(),
                                    std::size_t{0},
                                    [](std::size_t a, const auto& r) { return a + r.size(); })},
                   {"test", std::accumulate(ds.split.test.begin(), ds.split.test.end(),
                                            std::size_t{0},
                                            [](std::size_t a, const auto& r) { return a + r.size(); })}};
  idx["zero_review_users"] = ds.zero_review_users;
  idx["degenerate_split_users"] = ds.split_report.degenerate_users;
  std::ofstream out(dir / "index.json", std::ios::binary);
  out << idx.dump(2) << '\n';
}

inline ProcessedDataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(dir / "index.json");
  if (!in) throw VcmError("cannot open dataset index: " + (dir / "index.json").string());
  nlohmann::json idx = nlohmann::json::parse(in);
  if (idx.value("format", "") != "vcm-dataset") {
    throw VcmError("not a vcm dataset directory: " + dir.string());
  }

  ProcessedDataset ds;
  const std::size_t n_users = idx.at("n_users").get<std::size_t>();
  const std::size_t n_items = idx.at("n_items").get<std::size_t>();
  const std::size_t vocab_size = idx.at("vocab_size").get<std::size_t>();
  ds.config.seed = idx.at("seed").get<std::uint64_t>();
  ds.config.rating_threshold = idx.at("thresholds").at("rating").get<double>();
  ds.config.min_user_clicks = idx.at("thresholds").at("min_user_clicks").get<std::size_t>();
  ds.config.min_item_users = idx.at("thresholds").at("min_item_users").get<std::size_t>();
  ds.config.vocab_size = vocab_size;
  const auto fr = idx.at("split_fractions");
  ds.config.train_fraction = fr.at(0).get<double>();
  ds.config.validation_fraction = fr.at(1).get<double>();
  ds.config.test_fraction = fr.at(2).get<double>();
  ds.zero_review_users = idx.value("zero_review_users", std::vector<std::size_t>{});

  auto read_lines = [&](const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw VcmError("cannot open for reading: " + p.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    return lines;
  };
  ds.user_ids = read_lines(dir / "users.txt");
  ds.item_ids = read_lines(dir / "items.txt");
  ds.vocab.words = read_lines(dir / "vocab.txt");
  if (ds.user_ids.size() != n_users || ds.item_ids.size() != n_items ||
      ds.vocab.words.size() != vocab_size) {
    throw VcmError("dataset index does not match file contents in " + dir.string());
  }

  ds.split.n_users = n_users;
  ds.split.n_items = n_items;
  ds.split.train = detail::read_pair_file(dir / "train.txt", n_users, n_items);
  ds.split.validation = detail::read_pair_file(dir / "validation.txt", n_users, n_items);
  ds.split.test = detail::read_pair_file(dir / "test.txt", n_users, n_items);

  ds.reviews.n_users = n_users;
  ds.reviews.vocab_size = vocab_size;
  ds.reviews.rows.resize(n_users);
  {
    std::ifstream f(dir / "reviews.txt");
    if (!f) throw VcmError("cannot open for reading: " + (dir / "reviews.txt").string());
    std::size_t u = 0;
    std::uint32_t w = 0, c = 0;
    while (f >> u >> w >> c) {
      if (u >= n_users || w >= vocab_size) {
        throw VcmError("out-of-range review entry in " + (dir / "reviews.txt").string());
      }
      ds.reviews.rows[u].push_back({w, c});
    }
    for (auto& r : ds.reviews.rows) {
      std::sort(r.begin(), r.end(),
                [](const WordCount& a, const WordCount& b) { return a.word < b.word; });
    }
  }
  return ds;
}

// Built-in English stop words; override with PreprocessConfig::stopwords_path.
inline std::vector<std::string> default_stop_words() {
  return {
      "a",       "about",   "above",   "after",   "again",  "against", "all",     "am",
      "an",      "and",     "any",     "are",     "as",     "at",      "be",      "because",
      "been",    "before",  "being",   "below",   "between","both",    "but",     "by",
      "can",     "cannot",  "could",   "did",     "do",     "does",    "doing",   "down",
      "during",  "each",    "few",     "for",     "from",   "further", "had",     "has",
      "have",    "having",  "he",      "her",     "here",   "hers",    "herself", "him",
      "himself", "his",     "how",     "i",       "if",     "in",      "into",    "is",
      "it",      "its",     "itself",  "me",      "more",   "most",    "my",      "myself",
      "no",      "nor",     "not",     "of",      "off",    "on",      "once",    "only",
      "or",      "other",   "ought",   "our",     "ours",   "ourselves", "out",   "over",
      "own",     "same",    "she",     "should",  "so",     "some",    "such",    "than",
      "that",    "the",     "their",   "theirs",  "them",   "themselves", "then", "there",
      "these",   "they",    "this",    "those",   "through","to",      "too",     "under",
      "until",   "up",      "very",    "was",     "we",     "were",    "what",    "when",
      "where",   "which",   "while",   "who",     "whom",   "why",     "with",    "would",
      "you",     "your",    "yours",   "yourself","yourselves",
  };
}

}  // namespace vcm
