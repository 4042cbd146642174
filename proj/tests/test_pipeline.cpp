#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vcm/pipeline.hpp"

using namespace vcm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::vector<RawInteraction> toy_interactions() {
  return {{"u1", "i1", 5.0}, {"u1", "i2", 4.0}, {"u1", "i3", 3.0}};
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vcm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("binarize keeps ratings at or above threshold, deduplicated") {
  auto pairs = binarize(toy_interactions(), 4.0);
  REQUIRE(pairs == std::vector<std::pair<std::string, std::string>>{{"u1", "i1"}, {"u1", "i2"}});

  SECTION("duplicates collapse") {
    auto dup = toy_interactions();
    dup.push_back({"u1", "i1", 5.0});
    REQUIRE(binarize(dup, 4.0).size() == 2);
  }
  SECTION("threshold above the scale empties the output") {
    REQUIRE(binarize(toy_interactions(), 6.0).empty());
  }
}

TEST_CASE("filter_activity reaches a joint fixed point") {
  using P = std::vector<std::pair<std::string, std::string>>;

  SECTION("already satisfying input is unchanged") {
    P pairs;
    for (int u = 0; u < 5; ++u) {
      for (int i = 0; i < 5; ++i) {
        pairs.push_back({"u" + std::to_string(u), "i" + std::to_string(i)});
      }
    }
    REQUIRE(filter_activity(pairs, 5, 5) == pairs);
  }

  SECTION("user below threshold is removed") {
    P pairs = {{"u1", "i1"}, {"u1", "i2"}, {"u1", "i3"}};
    REQUIRE(filter_activity(pairs, 5, 1).empty());
  }

  SECTION("cascading removals on a 5-user toy graph") {
    // u5 depends on i6 which only u5 touches; dropping i6 pushes u5 below
    // the user threshold, which in turn drops i5 below the item threshold.
    P pairs = {
        {"u1", "i1"}, {"u1", "i2"}, {"u2", "i1"}, {"u2", "i2"}, {"u3", "i1"},
        {"u3", "i2"}, {"u4", "i1"}, {"u4", "i2"}, {"u5", "i5"}, {"u5", "i6"},
        {"u4", "i5"},
    };
    auto result = filter_activity(pairs, 2, 2);

    // Brute-force oracle: recount degrees and re-prune until stable.
    auto brute = pairs;
    bool changed = true;
    while (changed) {
      changed = false;
      std::map<std::string, int> ud, id;
      for (auto& p : brute) {
        ++ud[p.first];
        ++id[p.second];
      }
      P next;
      for (auto& p : brute) {
        if (ud[p.first] >= 2 && id[p.second] >= 2) next.push_back(p);
      }
      if (next.size() != brute.size()) changed = true;
      brute = next;
    }
    REQUIRE(result == brute);

    // And the survivors satisfy both constraints by direct recount.
    std::map<std::string, int> ud, id;
    for (auto& p : result) {
      ++ud[p.first];
      ++id[p.second];
    }
    for (auto& [u, d] : ud) REQUIRE(d >= 2);
    for (auto& [i, d] : id) REQUIRE(d >= 2);
    // u5, i5, i6 are all gone
    for (auto& p : result) {
      REQUIRE(p.first != "u5");
      REQUIRE(p.second != "i5");
      REQUIRE(p.second != "i6");
    }
  }

  SECTION("empty result is allowed, thresholds below 1 are not") {
    REQUIRE_THROWS_AS(filter_activity({}, 0, 1), ConfigError);
  }
}

TEST_CASE("build_vocabulary ranks by frequency with lexicographic ties") {
  SECTION("stop words removed") {
    auto v = build_vocabulary({{"u", "a b b"}}, {"a"}, 10);
    REQUIRE(v.words == std::vector<std::string>{"b"});
  }
  SECTION("top-1 of unequal counts") {
    auto v = build_vocabulary({{"u", "x x x y y"}}, {}, 1);
    REQUIRE(v.words == std::vector<std::string>{"x"});
  }
  SECTION("tie broken lexicographically") {
    auto v = build_vocabulary({{"u", "y x y x"}}, {}, 1);
    REQUIRE(v.words == std::vector<std::string>{"x"});
  }
  SECTION("empty corpus is an error") {
    REQUIRE_THROWS_AS(build_vocabulary({{"u", "the of"}}, {"the", "of"}, 5), VcmError);
  }
  SECTION("tokenization lowercases and splits on punctuation") {
    auto v = build_vocabulary({{"u", "Great!Great, great."}}, {}, 5);
    REQUIRE(v.words == std::vector<std::string>{"great"});
  }
}

TEST_CASE("vectorize_reviews counts vocabulary words per user") {
  Vocabulary vocab;
  vocab.words = {"b", "c"};
  SECTION("basic counting and totals") {
    auto m = vectorize_reviews({{"u", "b b c"}}, vocab);
    REQUIRE(m.rows[0] == std::vector<WordCount>{{0, 2}, {1, 1}});
    REQUIRE(m.row_total(0) == 3);
  }
  SECTION("all-stop-word document yields a flagged zero row") {
    std::vector<std::size_t> zero_rows;
    auto m = vectorize_reviews({{"u1", "b"}, {"u2", "zzz qqq"}}, vocab, &zero_rows);
    REQUIRE(m.rows[1].empty());
    REQUIRE(zero_rows == std::vector<std::size_t>{1});
  }
  SECTION("identical documents vectorize identically") {
    auto m = vectorize_reviews({{"u1", "c b c"}, {"u2", "c b c"}}, vocab);
    REQUIRE(m.rows[0] == m.rows[1]);
  }
}

TEST_CASE("split_per_user follows the rounding rule and is seeded") {
  ClickMatrix clicks;
  clicks.n_users = 2;
  clicks.n_items = 20;
  clicks.rows = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 1, 2, 3, 4}};

  auto split = split_per_user(clicks, 0.6, 0.2, 0.2, RngStream(1));
  REQUIRE(split.train[0].size() == 6);
  REQUIRE(split.validation[0].size() == 2);
  REQUIRE(split.test[0].size() == 2);
  REQUIRE(split.train[1].size() == 3);
  REQUIRE(split.validation[1].size() == 1);
  REQUIRE(split.test[1].size() == 1);

  SECTION("parts are disjoint and exhaustive per user") {
    for (std::size_t u = 0; u < 2; ++u) {
      std::set<std::uint32_t> all;
      all.insert(split.train[u].begin(), split.train[u].end());
      all.insert(split.validation[u].begin(), split.validation[u].end());
      all.insert(split.test[u].begin(), split.test[u].end());
      REQUIRE(all.size() ==
              split.train[u].size() + split.validation[u].size() + split.test[u].size());
      REQUIRE(all == std::set<std::uint32_t>(clicks.rows[u].begin(), clicks.rows[u].end()));
    }
  }

  SECTION("same seed reproduces, different seed moves something") {
    auto again = split_per_user(clicks, 0.6, 0.2, 0.2, RngStream(1));
    REQUIRE(again.train == split.train);
    REQUIRE(again.validation == split.validation);
    REQUIRE(again.test == split.test);

    bool any_diff = false;
    for (std::uint64_t seed = 2; seed < 12 && !any_diff; ++seed) {
      auto other = split_per_user(clicks, 0.6, 0.2, 0.2, RngStream(seed));
      any_diff = other.train != split.train;
    }
    REQUIRE(any_diff);
  }

  SECTION("fewer than 3 clicks goes all to train with a report") {
    ClickMatrix tiny;
    tiny.n_users = 1;
    tiny.n_items = 5;
    tiny.rows = {{2, 4}};
    SplitReport report;
    auto s = split_per_user(tiny, 0.6, 0.2, 0.2, RngStream(1), &report);
    REQUIRE(s.train[0] == std::vector<std::uint32_t>{2, 4});
    REQUIRE(s.validation[0].empty());
    REQUIRE(s.test[0].empty());
    REQUIRE(report.degenerate_users == 1);
  }

  SECTION("fractions must sum to one") {
    REQUIRE_THROWS_AS(split_per_user(clicks, 0.6, 0.3, 0.3, RngStream(1)), ConfigError);
  }
}

TEST_CASE("split property over random click sets") {
  RngStream rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    ClickMatrix clicks;
    clicks.n_users = 1 + rng.next_below(8);
    clicks.n_items = 50;
    clicks.rows.resize(clicks.n_users);
    for (auto& row : clicks.rows) {
      std::set<std::uint32_t> items;
      const std::size_t n = 3 + rng.next_below(30);
      while (items.size() < n) items.insert(static_cast<std::uint32_t>(rng.next_below(50)));
      row.assign(items.begin(), items.end());
    }
    auto split = split_per_user(clicks, 0.6, 0.2, 0.2, RngStream(rng.next_u64()));
    for (std::size_t u = 0; u < clicks.n_users; ++u) {
      const std::size_t n = clicks.rows[u].size();
      const std::size_t expected_train = static_cast<std::size_t>(std::ceil(0.6 * n - 1e-12));
      REQUIRE(split.train[u].size() == expected_train);
      const std::size_t rem = n - expected_train;
      REQUIRE(split.validation[u].size() == (rem + 1) / 2);
      REQUIRE(split.test[u].size() == rem / 2);
      std::set<std::uint32_t> all;
      all.insert(split.train[u].begin(), split.train[u].end());
      all.insert(split.validation[u].begin(), split.validation[u].end());
      all.insert(split.test[u].begin(), split.test[u].end());
      REQUIRE(all.size() == n);
    }
  }
}

TEST_CASE("dataset_stats formula") {
  SECTION("tiny case") {
    ClickMatrix clicks;
    clicks.n_users = 2;
    clicks.n_items = 2;
    clicks.rows = {{0}, {1}};
    auto s = dataset_stats(clicks);
    REQUIRE(s.users == 2);
    REQUIRE(s.items == 2);
    REQUIRE(s.interactions == 2);
    REQUIRE(s.sparsity == Approx(0.5));
  }
  SECTION("reference arithmetic on published Yelp counts") {
    // 106,630 / (6,784 x 10,003) ~ 0.16%
    const double sp = sparsity_of(6784, 10003, 106630);
    REQUIRE(sp == Approx(106630.0 / (6784.0 * 10003.0)).epsilon(1e-12));
    REQUIRE(sp * 100.0 == Approx(0.157).margin(0.0008));  // rounds to 0.16%
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f%%", sp * 100.0);
    REQUIRE(std::string(buf) == "0.16%");
  }
  SECTION("empty matrix errors unless allowed") {
    ClickMatrix empty;
    REQUIRE_THROWS_AS(dataset_stats(empty), VcmError);
    auto s = dataset_stats(empty, /*allow_empty=*/true);
    REQUIRE(s.interactions == 0);
  }
}

TEST_CASE("preprocess end to end with dataset round trip") {
  std::vector<RawInteraction> interactions;
  // 4 users x 4 items fully crossed, ratings 5 (plus a below-threshold row)
  for (int u = 0; u < 4; ++u) {
    for (int i = 0; i < 4; ++i) {
      interactions.push_back({"user" + std::to_string(u), "item" + std::to_string(i), 5.0});
    }
  }
  interactions.push_back({"user0", "item9", 2.0});
  std::vector<RawReview> reviews = {
      {"user0", "alpha beta beta"},
      {"user0", "gamma"},  // merged into user0's document
      {"user1", "alpha alpha"},
      {"user2", "beta gamma"},
      {"user3", "delta"},
      {"ghost", "ignored entirely"},
  };
  PreprocessConfig cfg;
  cfg.rating_threshold = 4.0;
  cfg.min_user_clicks = 2;
  cfg.min_item_users = 2;
  cfg.vocab_size = 3;
  cfg.seed = 5;

  ProcessedDataset ds = preprocess(interactions, reviews, cfg);
  REQUIRE(ds.user_ids == std::vector<std::string>{"user0", "user1", "user2", "user3"});
  REQUIRE(ds.item_ids.size() == 4);  // item9 was below threshold
  // corpus counts: alpha 3, beta 3, gamma 2, delta 1 -> top-3
  REQUIRE(ds.vocab.words == std::vector<std::string>{"alpha", "beta", "gamma"});
  // user0 merged doc: alpha beta beta gamma
  REQUIRE(ds.reviews.rows[0] ==
          std::vector<WordCount>{{0, 1}, {1, 2}, {2, 1}});
  // user3's only word fell out of the vocabulary
  REQUIRE(ds.reviews.rows[3].empty());
  REQUIRE(ds.zero_review_users == std::vector<std::size_t>{3});

  SECTION("save/load round trip is bit-identical") {
    const fs::path dir1 = temp_dir("roundtrip1");
    const fs::path dir2 = temp_dir("roundtrip2");
    save_dataset(ds, dir1);
    ProcessedDataset reloaded = load_dataset(dir1);
    save_dataset(reloaded, dir2);
    for (const char* name :
         {"index.json", "users.txt", "items.txt", "vocab.txt", "train.txt", "validation.txt",
          "test.txt", "reviews.txt"}) {
      INFO(name);
      REQUIRE(slurp(dir1 / name) == slurp(dir2 / name));
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
  }
}

TEST_CASE("vocabulary respects V and excludes stop words") {
  RngStream rng(3);
  std::vector<RawReview> reviews;
  for (int u = 0; u < 20; ++u) {
    std::string text;
    for (int t = 0; t < 40; ++t) {
      text += "w" + std::to_string(rng.next_below(30)) + " the ";
    }
    reviews.push_back({"u" + std::to_string(u), text});
  }
  auto stop = default_stop_words();
  auto v = build_vocabulary(reviews, std::set<std::string>(stop.begin(), stop.end()), 10);
  REQUIRE(v.words.size() <= 10);
  for (const auto& w : v.words) {
    REQUIRE(std::find(stop.begin(), stop.end(), w) == stop.end());
  }
}
