#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "helpers/finite_diff.hpp"
#include "socialalign/model.hpp"
#include "socialalign/train.hpp"

using namespace socialalign;

namespace {

ToyModelConfig tiny_config() {
  ToyModelConfig cfg;
  cfg.vocab_size = tok::kVocabSize;
  cfg.d_model = 32;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.context = 64;
  cfg.n_experts = 2;
  cfg.rank = 2;
  cfg.gate_hidden = 8;
  cfg.dropout = 0.0;
  cfg.learning_rate = 3e-3;
  cfg.grad_accum = 1;
  return cfg;
}

PromptSequence simple_prompt(const std::string& news, const std::optional<std::string>& response,
                             std::size_t context = 64) {
  return build_prompt(nullptr, {}, news, response, context);
}

std::vector<Post> posts_from(const std::vector<std::string>& texts) {
  std::vector<Post> out;
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.push_back(Post::make("p" + std::to_string(i), "u", texts[i], static_cast<std::int64_t>(i)));
  return out;
}

}  // namespace

TEST_CASE("build_prompt: segments, boundaries, determinism") {
  // empty persona + empty history: only news + separator (+ response)
  auto seq = simple_prompt("abc", std::nullopt);
  CHECK(seq.persona_end == 0);
  CHECK(seq.history_end == 0);
  CHECK(seq.news_end == 3);
  CHECK(seq.sep_end == 4);
  CHECK(seq.tokens == std::vector<int>{'a', 'b', 'c', tok::kSep});
  CHECK_FALSE(seq.has_response);

  auto with_resp = simple_prompt("abc", std::string("ok"));
  CHECK(with_resp.tokens ==
        std::vector<int>{'a', 'b', 'c', tok::kSep, 'o', 'k', tok::kEos});
  CHECK(with_resp.has_response);

  // determinism
  Persona p;
  p.user_id = "u";
  p.interests = {"housing"};
  auto history = posts_from({"one", "two"});
  auto a = build_prompt(&p, history, "news text", std::string("resp"), 128);
  auto b = build_prompt(&p, history, "news text", std::string("resp"), 128);
  CHECK(a.tokens == b.tokens);

  // boundary indices equal cumulated per-segment tokenizations
  const std::string persona_text = persona_to_text(p);
  CHECK(a.persona_end == persona_text.size());
  CHECK(a.history_end == a.persona_end + std::string("one\ntwo").size());
  CHECK(a.news_end == a.history_end + std::string("news text").size());
  CHECK(a.sep_end == a.news_end + 1);

  CHECK_THROWS_AS(build_prompt(nullptr, {}, "", std::nullopt, 64), ContractError);
}

TEST_CASE("build_prompt truncation drops oldest history first") {
  auto history = posts_from({"oldest post text", "newer post", "newest"});
  // context just big enough for news+sep+newest only
  const std::string news = "nn";
  auto seq = build_prompt(nullptr, history, news, std::nullopt, 10);
  // "newest" (6) + "nn" (2) + sep (1) = 9 <= 10
  CHECK(seq.history_end - seq.persona_end == 6);

  CHECK_THROWS_AS(build_prompt(nullptr, history, "long news far over the limit", std::nullopt, 10),
                  LengthError);
}

TEST_CASE("pool_gate_features: means per segment, zero for empty user side") {
  ToyTransformer model(tiny_config(), 7);
  Tape tape;
  std::mt19937_64 rng(3);

  auto seq = simple_prompt("ab", std::nullopt);
  Tensor table = Tensor::randn({tok::kVocabSize, 32}, 0.1, rng, false);
  Tensor embedded = tape.embedding(table, seq.tokens);
  auto [x_news, x_user] = model.pool_gate_features(tape, seq, embedded);

  // news mean of two rows
  for (std::size_t j = 0; j < 32; ++j)
    CHECK(x_news.data()[j] ==
          Catch::Approx(0.5 * (embedded.at(0, j) + embedded.at(1, j))).margin(1e-12));
  // no persona/history: user features are exactly zero
  for (std::size_t j = 0; j < 32; ++j) CHECK(x_user.data()[j] == 0.0);

  // single-token news segment: mean equals that embedding row
  auto seq1 = simple_prompt("a", std::nullopt);
  Tensor emb1 = tape.embedding(table, seq1.tokens);
  auto [n1, u1] = model.pool_gate_features(tape, seq1, emb1);
  for (std::size_t j = 0; j < 32; ++j) CHECK(n1.data()[j] == emb1.at(0, j));
}

TEST_CASE("ablation flags parse and force uniform gates") {
  CHECK_THROWS_AS(AblationFlags::parse("no_such_flag"), ConfigError);
  auto flags = AblationFlags::parse("no_analyzing_gate,no_persona");
  CHECK(flags.no_analyzing_gate);
  CHECK(flags.no_persona);
  CHECK_FALSE(flags.no_writing_gate);

  ToyModelConfig cfg = tiny_config();
  cfg.n_experts = 3;
  cfg.rank = 2;
  cfg.ablate.no_analyzing_gate = true;
  ToyTransformer model(cfg, 11);

  auto seq = simple_prompt("news body", std::string("resp"));
  Tape tape;
  GateSample gates;
  model.forward(tape, seq, false, &gates);
  for (double g : gates.g_a) CHECK(g == 1.0 / 3.0);
  // writing gate still computed by the net
  double sum = 0.0;
  for (double g : gates.g_b) sum += g;
  CHECK(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("no_writing_gate equals a zeroed writing gate net") {
  ToyModelConfig cfg = tiny_config();
  cfg.n_experts = 3;

  cfg.ablate.no_writing_gate = true;
  ToyTransformer flagged(cfg, 21);

  cfg.ablate.no_writing_gate = false;
  ToyTransformer manual(cfg, 21);  // same seed: identical weights
  for (Tensor t : manual.gate_net_b().params())
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0;  // softmax(0) = uniform

  auto seq = build_prompt(nullptr, posts_from({"history post"}), "some news", std::string("r"), 64);
  Tape tape;
  Tensor a = flagged.forward(tape, seq, false);
  Tensor b = manual.forward(tape, seq, false);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
}

TEST_CASE("loss masking: only response targets matter") {
  ToyTransformer model(tiny_config(), 5);
  auto seq = build_prompt(nullptr, posts_from({"hh"}), "nn", std::string("rr"), 64);

  Tape tape;
  Tensor logits = model.forward(tape, seq, false);
  const std::size_t t_len = seq.size();
  std::vector<int> targets(t_len, 0);
  std::vector<bool> mask(t_len, false);
  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    targets[t] = seq.tokens[t + 1];
    mask[t] = (t + 1) >= seq.response_begin();
  }
  const double reference = tape.cross_entropy(logits, targets, mask).item();

  // scramble every masked-out target: loss is bit-identical
  std::vector<int> scrambled = targets;
  for (std::size_t t = 0; t + 1 < t_len; ++t)
    if (!mask[t]) scrambled[t] = static_cast<int>((t * 31) % 256);
  CHECK(tape.cross_entropy(logits, scrambled, mask).item() == reference);

  const double via_helper = [&] {
    Tape tape2;
    return sequence_loss(tape2, model, seq, false).item();
  }();
  CHECK(via_helper == reference);
}

TEST_CASE("train_step: zero lr leaves consecutive losses identical") {
  ToyModelConfig cfg = tiny_config();
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  ToyTransformer model(cfg, 13);
  TrainState state = make_train_state(model);

  auto seq = simple_prompt("news", std::string("resp"));
  const double l1 = train_step(model, state, {seq});
  const double l2 = train_step(model, state, {seq});
  CHECK(l1 == l2);

  CHECK_THROWS_AS(train_step(model, state, {}), ContractError);
}

TEST_CASE("loss on a 1-token vocabulary is exactly zero") {
  ToyModelConfig cfg = tiny_config();
  cfg.vocab_size = 1;
  ToyTransformer model(cfg, 2);
  TrainState state = make_train_state(model);

  PromptSequence seq;
  seq.tokens = {0, 0, 0, 0, 0};
  seq.persona_end = 0;
  seq.history_end = 0;
  seq.news_end = 3;
  seq.sep_end = 4;
  seq.has_response = true;
  // hand-built sequence: separator slot holds token 0 in this degenerate vocab
  Tape tape;
  Tensor logits = model.forward(tape, seq, false);
  std::vector<int> targets(5, 0);
  std::vector<bool> mask{false, false, false, true, false};
  CHECK(tape.cross_entropy(logits, targets, mask).item() == 0.0);
}

TEST_CASE("seeded end-to-end determinism of the loss curve") {
  auto run = [] {
    ToyModelConfig cfg = tiny_config();
    cfg.dropout = 0.1;  // dropout streams must replay identically
    ToyTransformer model(cfg, 99);
    TrainState state = make_train_state(model);
    std::vector<PromptSequence> data{
        simple_prompt("news one", std::string("alpha")),
        simple_prompt("news two", std::string("beta")),
    };
    std::vector<double> losses;
    for (int step = 0; step < 10; ++step) losses.push_back(train_step(model, state, data));
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("frozen base: only adapter and gating parameters move") {
  ToyModelConfig cfg = tiny_config();
  cfg.freeze_base = true;
  ToyTransformer model(cfg, 31);
  TrainState state = make_train_state(model);

  auto snapshot = [](const std::vector<Tensor>& ts) {
    std::vector<std::vector<double>> out;
    for (const Tensor& t : ts) out.emplace_back(t.data(), t.data() + t.size());
    return out;
  };
  const auto base_before = snapshot(model.base_params());
  const auto adapter_before = snapshot(model.adapter_params());

  auto seq = simple_prompt("some news", std::string("reply"));
  for (int i = 0; i < 30; ++i) train_step(model, state, {seq});

  const auto base_after = snapshot(model.base_params());
  CHECK(base_before == base_after);  // bit-identical

  const auto adapter_after = snapshot(model.adapter_params());
  CHECK(adapter_before != adapter_after);
}

TEST_CASE("memorization: loss halves in 200 steps and greedy recall is high") {
  ToyModelConfig cfg = tiny_config();
  ToyTransformer model(cfg, 8);
  TrainState state = make_train_state(model);

  // 50 short sequences with formulaic responses
  std::vector<PromptSequence> train_seqs;
  std::vector<std::pair<PromptSequence, std::string>> eval_pairs;
  for (int i = 0; i < 50; ++i) {
    const std::string news = "q" + std::to_string(i);
    const std::string resp = "a" + std::to_string(i % 10);
    train_seqs.push_back(simple_prompt(news, resp));
    eval_pairs.emplace_back(simple_prompt(news, std::nullopt), resp);
  }

  const double initial = eval_loss(model, train_seqs);
  for (int step = 0; step < 200; ++step) train_step(model, state, train_seqs);
  const double after200 = eval_loss(model, train_seqs);
  INFO("initial " << initial << " after200 " << after200);
  CHECK(after200 < 0.5 * initial);

  for (int step = 0; step < 400; ++step) train_step(model, state, train_seqs);

  std::size_t exact = 0;
  for (const auto& [prompt, expected] : eval_pairs) {
    if (generate(model, prompt, 8, 0.0, 0) == expected) ++exact;
  }
  INFO("recalled " << exact << "/50");
  CHECK(exact >= 40);
}

TEST_CASE("generation basics") {
  ToyTransformer model(tiny_config(), 44);
  auto prompt = simple_prompt("hello", std::nullopt);

  // greedy is deterministic
  CHECK(generate(model, prompt, 12, 0.0, 1) == generate(model, prompt, 12, 0.0, 2));
  // max_tokens = 0 gives an empty response
  CHECK(generate(model, prompt, 0, 0.0, 1).empty());
  // sampled generation is seed-deterministic
  CHECK(generate(model, prompt, 12, 0.8, 7) == generate(model, prompt, 12, 0.8, 7));
  // prompts that do not end at the separator are rejected
  auto with_resp = simple_prompt("hello", std::string("x"));
  CHECK_THROWS_AS(generate(model, with_resp, 4, 0.0, 1), ContractError);
}

TEST_CASE("model checkpoint round-trips to identical logits") {
  const auto dir = std::filesystem::temp_directory_path() / "socialalign_test_model_ckpt";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "ckpt").string();

  ToyModelConfig cfg = tiny_config();
  ToyTransformer model(cfg, 55);
  TrainState state = make_train_state(model);
  auto seq = simple_prompt("train me", std::string("ok"));
  for (int i = 0; i < 5; ++i) train_step(model, state, {seq});
  model.save(stem);

  ToyTransformer restored(cfg, 1234);  // different seed: different init
  restored.load(stem);

  Tape tape;
  auto probe = simple_prompt("probe", std::string("x"));
  Tensor a = model.forward(tape, probe, false);
  Tensor b = restored.forward(tape, probe, false);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("all trainable parameters of a small 2-layer model pass gradient checks") {
  ToyModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.context = 12;
  cfg.n_experts = 2;
  cfg.rank = 2;
  cfg.gate_hidden = 4;
  cfg.dropout = 0.0;  // finite differences need a deterministic forward
  ToyTransformer model(cfg, 17);

  // nonzero writing experts so gate gradients are informative
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (const PacLoraLayer* l : model.adapted_layers())
    for (const Tensor& b : l->experts_b)
      for (std::size_t i = 0; i < b.size(); ++i) const_cast<Tensor&>(b).data()[i] = u(rng);

  PromptSequence seq;
  seq.tokens = {1, 2, 3, 4, 5, 11, 6, 7};  // 11 fills the separator slot in this tiny vocab
  seq.persona_end = 1;
  seq.history_end = 3;
  seq.news_end = 5;
  seq.sep_end = 6;
  seq.has_response = true;

  auto loss_fn = [&]() {
    Tape tape;
    Tensor logits = model.forward(tape, seq, false);
    std::vector<int> targets(8, 0);
    std::vector<bool> mask(8, false);
    for (std::size_t t = 0; t + 1 < 8; ++t) {
      targets[t] = seq.tokens[t + 1];
      mask[t] = (t + 1) >= seq.sep_end;
    }
    return tape.cross_entropy(logits, targets, mask);
  };

  {
    Tape tape;
    Tensor logits = model.forward(tape, seq, false);
    std::vector<int> targets(8, 0);
    std::vector<bool> mask(8, false);
    for (std::size_t t = 0; t + 1 < 8; ++t) {
      targets[t] = seq.tokens[t + 1];
      mask[t] = (t + 1) >= seq.sep_end;
    }
    tape.backward(tape.cross_entropy(logits, targets, mask));
  }

  std::vector<std::pair<std::string, Tensor>> named;
  std::size_t pi = 0;
  for (const Tensor& t : model.trainable_params())
    named.emplace_back("param" + std::to_string(pi++), t);

  auto forward = [&]() { return loss_fn().item(); };
  auto res = testutil::finite_difference_check(named, forward);
  INFO(res.worst << " over " << res.checked << " parameters");
  CHECK(res.max_rel_error < 1e-4);
}
