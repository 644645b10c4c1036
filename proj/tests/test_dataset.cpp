#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>
#include <set>

#include "socialalign/dataset.hpp"

using namespace socialalign;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("socialalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("normalization collapses whitespace") {
  CHECK(normalize_text("  a\t\tb \n c  ") == "a b c");
  CHECK(normalize_text("plain") == "plain");
  CHECK_THROWS_AS(Post::make("p0", "u0", "   \n\t ", 0), ValidationError);
}

TEST_CASE("hashtag extraction: weibo pairs, bare fallback, dedup, lowercase") {
  CHECK(extract_hashtags("text #Housing_Event_3# more") ==
        std::vector<std::string>{"housing_event_3"});
  CHECK(extract_hashtags("#a# #b# #a#") == std::vector<std::string>{"a", "b"});
  CHECK(extract_hashtags("trailing #Topic") == std::vector<std::string>{"topic"});
  CHECK(extract_hashtags("no tags here").empty());
}

TEST_CASE("dual_filter keeps hashtagged clean posts and explains every drop") {
  std::vector<Post> posts{
      Post::make("p1", "u1", "solid analysis of rent #housing#", 1),
      Post::make("p2", "u1", "just had lunch", 2),
      Post::make("p3", "u2", "fashionable outfit of the day #ootd#", 3),
  };
  const std::vector<std::string> noise{"fashionable outfit", "positive recommendation"};
  auto res = dual_filter(posts, noise);

  REQUIRE(res.kept.size() == 1);
  CHECK(res.kept[0].id == "p1");
  REQUIRE(res.dropped.size() == 2);
  CHECK(res.dropped[0].first.id == "p2");
  CHECK(res.dropped[0].second.to_string() == "no_hashtag");
  CHECK(res.dropped[1].first.id == "p3");
  CHECK(res.dropped[1].second.to_string() == "noise_keyword:fashionable outfit");
}

TEST_CASE("dual_filter partitions the input exactly") {
  std::mt19937_64 rng(9);
  std::vector<Post> posts;
  std::vector<std::string> noise{"giveaway", "fashionable outfit"};
  for (int i = 0; i < 500; ++i) {
    std::string text = rng() % 3 == 0 ? "giveaway time" : "thoughts on prices";
    if (rng() % 2) text += " #tag" + std::to_string(rng() % 5) + "#";
    posts.push_back(Post::make("p" + std::to_string(i), "u" + std::to_string(rng() % 20), text,
                               static_cast<std::int64_t>(i)));
  }
  auto res = dual_filter(posts, noise);
  CHECK(res.kept.size() + res.dropped.size() == posts.size());

  // independent two-predicate oracle
  std::set<std::string> kept_ids;
  for (const Post& p : res.kept) kept_ids.insert(p.id);
  for (const Post& p : posts) {
    bool keep = !p.hashtags.empty();
    for (const auto& kw : noise)
      if (p.text.find(kw) != std::string::npos) keep = false;
    CHECK(kept_ids.count(p.id) == static_cast<std::size_t>(keep));
  }
}

TEST_CASE("split_dataset sizes follow the documented rounding rule") {
  auto make_ids = [](std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
    return ids;
  };

  auto s10 = split_dataset(make_ids(10), 7);
  CHECK(s10.count(Split::Train) == 8);
  CHECK(s10.count(Split::Valid) == 1);
  CHECK(s10.count(Split::Test) == 1);

  auto s100 = split_dataset(make_ids(100), 7);
  CHECK(s100.count(Split::Train) == 80);
  CHECK(s100.count(Split::Valid) == 10);
  CHECK(s100.count(Split::Test) == 10);

  auto s97 = split_dataset(make_ids(97), 7);
  CHECK(s97.count(Split::Train) == 78);
  CHECK(s97.count(Split::Valid) == 10);
  CHECK(s97.count(Split::Test) == 9);

  CHECK_THROWS_AS(split_dataset(make_ids(2), 7), ContractError);
}

TEST_CASE("split_dataset is a seeded deterministic partition") {
  std::vector<std::string> ids;
  for (int i = 0; i < 57; ++i) ids.push_back("r" + std::to_string(i));
  auto a = split_dataset(ids, 123);
  auto b = split_dataset(ids, 123);
  CHECK(a.assignment == b.assignment);

  // every id in exactly one split
  CHECK(a.assignment.size() == ids.size());
  for (const auto& id : ids) CHECK(a.assignment.count(id) == 1);

  auto c = split_dataset(ids, 124);
  CHECK(a.assignment != c.assignment);
}

TEST_CASE("synthetic corpus is deterministic and internally consistent") {
  SynthConfig cfg;
  cfg.n_topics = 4;
  cfg.n_users = 10;
  cfg.posts_per_user = 6;
  cfg.seed = 42;

  auto a = synth_generate(cfg);
  auto b = synth_generate(cfg);

  REQUIRE(a.topics.size() == 4);
  REQUIRE(a.histories.size() == 10);
  // byte-identical across runs
  for (std::size_t t = 0; t < a.topics.size(); ++t) {
    CHECK(a.topics[t].hashtag == b.topics[t].hashtag);
    REQUIRE(a.topics[t].posts.size() == b.topics[t].posts.size());
    for (std::size_t i = 0; i < a.topics[t].posts.size(); ++i)
      CHECK(a.topics[t].posts[i].text == b.topics[t].posts[i].text);
    CHECK(a.topics[t].ground_truth.weights == b.topics[t].ground_truth.weights);
  }

  // ground truth equals re-classifying the gold responses
  for (const TopicRecord& t : a.topics) {
    REQUIRE(!t.posts.empty());
    std::vector<SentimentLabel> labels;
    for (const Post& p : t.posts) {
      labels.push_back(classify_sentiment_stub(p.text));
      CHECK(p.has_hashtag(t.hashtag));
    }
    auto expected = aggregate_distribution(labels);
    CHECK(t.ground_truth.weights == expected.weights);
    t.ground_truth.validate();
  }
}

TEST_CASE("synthetic minimal instance") {
  SynthConfig cfg;
  cfg.n_topics = 1;
  cfg.n_users = 1;
  cfg.posts_per_user = 1;
  cfg.seed = 5;
  auto corpus = synth_generate(cfg);
  REQUIRE(corpus.topics.size() == 1);
  CHECK(corpus.topics[0].participant_count == 1);
  corpus.topics[0].ground_truth.validate();
  CHECK_THROWS_AS(synth_generate(SynthConfig{0, 1, 1, 1}), ContractError);
}

TEST_CASE("jsonl round-trip is identity on a synthetic corpus") {
  auto dir = temp_dir("jsonl");
  SynthConfig cfg;
  cfg.n_topics = 3;
  cfg.n_users = 6;
  cfg.posts_per_user = 5;
  cfg.seed = 9;
  auto corpus = synth_generate(cfg);

  std::vector<Post> all_posts;
  for (const auto& h : corpus.histories)
    for (const auto& p : h.posts) all_posts.push_back(p);

  const auto posts_path = (dir / "posts.jsonl").string();
  const auto topics_path = (dir / "topics.jsonl").string();
  const auto histories_path = (dir / "histories.jsonl").string();
  export_posts(posts_path, all_posts);
  export_topics(topics_path, corpus.topics);
  export_histories(histories_path, corpus.histories);

  auto posts2 = import_posts(posts_path);
  REQUIRE(posts2.size() == all_posts.size());
  for (std::size_t i = 0; i < posts2.size(); ++i) {
    CHECK(posts2[i].id == all_posts[i].id);
    CHECK(posts2[i].user_id == all_posts[i].user_id);
    CHECK(posts2[i].text == all_posts[i].text);
    CHECK(posts2[i].hashtags == all_posts[i].hashtags);
    CHECK(posts2[i].timestamp == all_posts[i].timestamp);
  }

  auto topics2 = import_topics(topics_path, posts2);
  REQUIRE(topics2.size() == corpus.topics.size());
  for (std::size_t t = 0; t < topics2.size(); ++t) {
    CHECK(topics2[t].topic_id == corpus.topics[t].topic_id);
    CHECK(topics2[t].ground_truth.weights == corpus.topics[t].ground_truth.weights);
    CHECK(topics2[t].posts.size() == corpus.topics[t].posts.size());
  }

  auto histories2 = import_histories(histories_path, posts2);
  REQUIRE(histories2.size() == corpus.histories.size());
  for (std::size_t u = 0; u < histories2.size(); ++u) {
    CHECK(histories2[u].user_id == corpus.histories[u].user_id);
    CHECK(histories2[u].posts.size() == corpus.histories[u].posts.size());
  }

  // export → import → export is byte-stable
  const auto posts_path2 = (dir / "posts2.jsonl").string();
  export_posts(posts_path2, posts2);
  CHECK(binio::read_file(posts_path) == binio::read_file(posts_path2));
}

TEST_CASE("jsonl import errors carry line numbers") {
  auto dir = temp_dir("jsonl_err");
  const auto path = (dir / "posts.jsonl").string();

  binio::write_file_atomic(path, "");
  CHECK(import_posts(path).empty());

  binio::write_file_atomic(path,
                           R"({"id":"p1","user_id":"u1","text":"ok #t#"})"
                           "\n"
                           R"({"id":"p2","text":"missing user"})"
                           "\n");
  try {
    import_posts(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("user_id") != std::string::npos);
  }

  binio::write_file_atomic(path, "not json at all\n");
  CHECK_THROWS_AS(import_posts(path), ParseError);
}

TEST_CASE("strict history import enforces the 10..953 range") {
  auto dir = temp_dir("strict");
  std::vector<Post> posts;
  for (int i = 0; i < 3; ++i)
    posts.push_back(Post::make("p" + std::to_string(i), "u0", "text #t#", i));
  const auto posts_path = (dir / "posts.jsonl").string();
  const auto hist_path = (dir / "histories.jsonl").string();
  export_posts(posts_path, posts);
  export_histories(hist_path, {UserHistory{"u0", posts}});

  auto loaded = import_posts(posts_path);
  CHECK(import_histories(hist_path, loaded).size() == 1);
  CHECK_THROWS_AS(import_histories(hist_path, loaded, /*strict_range=*/true), ValidationError);
}
