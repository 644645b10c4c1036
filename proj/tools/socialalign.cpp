// socialalign: dual-level public-response prediction pipeline.
//
// Subcommands chain through files in an output directory:
//   synth      -> posts.jsonl topics.jsonl histories.jsonl
//   preprocess -> kept.jsonl dropped.tsv splits.tsv
//   retrieve   -> retrieval.tsv
//   persona    -> personas.jsonl
//   train      -> checkpoint.{adapter,base}.bin checkpoint.config train_log.tsv
//   generate   -> generations.jsonl gate_records.tsv
//   evaluate   -> metrics.tsv dist_<topic>.tsv
//   experts    -> utilization.tsv
// Every run writes manifest.json listing inputs, outputs and content hashes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "socialalign/config.hpp"
#include "socialalign/dataset.hpp"
#include "socialalign/errors.hpp"
#include "socialalign/io.hpp"
#include "socialalign/model.hpp"
#include "socialalign/persona.hpp"
#include "socialalign/pipeline.hpp"
#include "socialalign/provider.hpp"
#include "socialalign/sentiment.hpp"
#include "socialalign/train.hpp"

namespace {

using namespace socialalign;
namespace fs = std::filesystem;

struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::vector<std::pair<std::string, std::string>> outputs;
  std::map<std::string, double> timings_ms;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void note_input(const std::string& path) { inputs[path] = fnv1a64_hex(binio::read_file(path)); }

  void write_output(const std::string& path, const std::string& contents) {
    binio::write_file_atomic(path, contents);
    outputs.emplace_back(path, fnv1a64_hex(contents));
  }

  void note_output(const std::string& path) {
    outputs.emplace_back(path, fnv1a64_hex(binio::read_file(path)));
  }

  void finish(const std::string& out_dir) {
    timings_ms["total"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    auto arr = nlohmann::json::array();
    for (const auto& [path, hash] : outputs) arr.push_back({{"path", path}, {"hash", hash}});
    j["outputs"] = arr;
    j["timings_ms"] = timings_ms;
    binio::write_file_atomic((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
  }
};

// Options shared across subcommands, resolved as config file < flags.
struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::size_t topk = kDefaultRetrievalTopK;
  std::size_t experts = 3;
  std::size_t rank = 8;
  std::string ablate;
  std::string extractor = "stub";
  std::string classifier = "stub";
  std::string fixtures;
  std::string template_path = "templates/persona_v1.txt";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "flat key = value config file");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--topk", o.topk, "BM25 retrieval depth");
  cmd->add_option("--experts", o.experts, "number of PAC-LoRA experts (N_a)");
  cmd->add_option("--rank", o.rank, "LoRA rank");
  cmd->add_option("--ablate", o.ablate,
                  "comma list: no_analyzing_gate,no_writing_gate,no_history,no_persona");
  cmd->add_option("--extractor", o.extractor, "persona extractor: stub|provider")
      ->check(CLI::IsMember({"stub", "provider"}));
  cmd->add_option("--classifier", o.classifier, "sentiment classifier: stub|provider")
      ->check(CLI::IsMember({"stub", "provider"}));
  cmd->add_option("--fixtures", o.fixtures, "replay fixture directory (offline provider mode)");
  cmd->add_option("--template", o.template_path, "persona prompt template path");
}

FlatConfig load_flat(const CommonOpts& o, RunManifest& manifest) {
  if (o.config_path.empty()) return {};
  manifest.note_input(o.config_path);
  return FlatConfig::load(o.config_path);
}

ToyModelConfig model_config_from(const FlatConfig& cfg, const CommonOpts& o) {
  ToyModelConfig m;
  m.d_model = cfg.get_u64("model.d_model", m.d_model);
  m.n_layers = cfg.get_u64("model.n_layers", m.n_layers);
  m.n_heads = cfg.get_u64("model.n_heads", m.n_heads);
  m.context = cfg.get_u64("model.context", m.context);
  m.n_experts = cfg.get_u64("model.experts", o.experts);
  m.rank = cfg.get_u64("model.rank", o.rank);
  m.lora_alpha = cfg.get_double("model.lora_alpha", m.lora_alpha);
  m.gate_hidden = cfg.get_u64("model.gate_hidden", m.gate_hidden);
  m.dropout = cfg.get_double("model.dropout", m.dropout);
  m.learning_rate = cfg.get_double("model.learning_rate", m.learning_rate);
  m.weight_decay = cfg.get_double("model.weight_decay", m.weight_decay);
  m.grad_accum = cfg.get_u64("model.grad_accum", m.grad_accum);
  m.freeze_base = cfg.get_bool("model.freeze_base", m.freeze_base);
  if (!o.ablate.empty()) m.ablate = AblationFlags::parse(o.ablate);
  m.validate();
  return m;
}

std::map<std::string, std::string> model_config_snapshot(const ToyModelConfig& m,
                                                         std::uint64_t seed) {
  return {{"model.d_model", std::to_string(m.d_model)},
          {"model.n_layers", std::to_string(m.n_layers)},
          {"model.n_heads", std::to_string(m.n_heads)},
          {"model.context", std::to_string(m.context)},
          {"model.experts", std::to_string(m.n_experts)},
          {"model.rank", std::to_string(m.rank)},
          {"model.lora_alpha", format_fixed(m.lora_alpha, 6)},
          {"model.gate_hidden", std::to_string(m.gate_hidden)},
          {"model.dropout", format_fixed(m.dropout, 6)},
          {"model.learning_rate", format_fixed(m.learning_rate, 8)},
          {"model.weight_decay", format_fixed(m.weight_decay, 6)},
          {"model.grad_accum", std::to_string(m.grad_accum)},
          {"model.freeze_base", m.freeze_base ? "true" : "false"},
          {"model.ablate", m.ablate.to_string()},
          {"model.seed", std::to_string(seed)}};
}

ToyModelConfig model_config_from_snapshot(const FlatConfig& cfg) {
  CommonOpts defaults;
  ToyModelConfig m;
  defaults.experts = m.n_experts;
  defaults.rank = m.rank;
  ToyModelConfig out = model_config_from(cfg, defaults);
  out.ablate = AblationFlags::parse(cfg.get_string("model.ablate", ""));
  return out;
}

SynthCorpus load_corpus(const std::string& data_dir, RunManifest& manifest) {
  const std::string posts_path = (fs::path(data_dir) / "posts.jsonl").string();
  const std::string topics_path = (fs::path(data_dir) / "topics.jsonl").string();
  const std::string histories_path = (fs::path(data_dir) / "histories.jsonl").string();
  for (const auto& p : {posts_path, topics_path, histories_path}) manifest.note_input(p);
  SynthCorpus corpus;
  auto posts = import_posts(posts_path);
  corpus.topics = import_topics(topics_path, posts);
  corpus.histories = import_histories(histories_path, posts);
  return corpus;
}

std::unique_ptr<ProviderClient> make_provider(const CommonOpts& o) {
  EndpointConfig cfg = EndpointConfig::from_env();
  cfg.fixture_dir = o.fixtures;
  if (cfg.fixture_dir.empty() && cfg.url.empty())
    throw ConfigError("provider mode needs SOCIALALIGN_PROVIDER_URL or --fixtures");
  return std::make_unique<ProviderClient>(cfg);
}

struct Extractors {
  std::unique_ptr<ProviderClient> provider;  // shared by persona + classifier when requested
  std::unique_ptr<PersonaExtractor> persona;
  SentimentClassifier classifier;
};

Extractors make_extractors(const CommonOpts& o, RunManifest& manifest) {
  Extractors ex;
  const bool need_provider = o.extractor == "provider" || o.classifier == "provider";
  if (need_provider) ex.provider = make_provider(o);
  if (o.extractor == "provider") {
    manifest.note_input(o.template_path);
    ex.persona = std::make_unique<PersonaExtractor>(ex.provider.get(),
                                                    binio::read_file(o.template_path));
  } else {
    ex.persona = std::make_unique<PersonaExtractor>();
  }
  ex.classifier =
      o.classifier == "provider" ? SentimentClassifier(ex.provider.get()) : SentimentClassifier();
  return ex;
}

std::map<std::string, std::string> gold_index(const SynthCorpus& corpus) {
  std::map<std::string, std::string> gold;
  for (const TopicRecord& t : corpus.topics)
    for (const Post& p : t.posts) gold[p.user_id + "|" + t.topic_id] = p.text;
  return gold;
}

// --- subcommands ---------------------------------------------------------------

int cmd_synth(const CommonOpts& o, std::size_t topics, std::size_t users, std::size_t posts_per_user,
              double participation, double noise_fraction) {
  RunManifest manifest;
  manifest.subcommand = "synth";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);

  SynthConfig cfg;
  cfg.n_topics = topics;
  cfg.n_users = users;
  cfg.posts_per_user = posts_per_user;
  cfg.seed = o.seed;
  cfg.participation = participation;
  cfg.noise_fraction = noise_fraction;
  manifest.config = {{"synth.topics", std::to_string(topics)},
                     {"synth.users", std::to_string(users)},
                     {"synth.posts_per_user", std::to_string(posts_per_user)},
                     {"synth.participation", format_fixed(participation, 4)},
                     {"synth.noise_fraction", format_fixed(noise_fraction, 4)}};

  SynthCorpus corpus = synth_generate(cfg);
  std::vector<Post> all_posts;
  for (const UserHistory& h : corpus.histories)
    for (const Post& p : h.posts) all_posts.push_back(p);

  export_posts((fs::path(o.out_dir) / "posts.jsonl").string(), all_posts);
  export_topics((fs::path(o.out_dir) / "topics.jsonl").string(), corpus.topics);
  export_histories((fs::path(o.out_dir) / "histories.jsonl").string(), corpus.histories);
  for (const char* name : {"posts.jsonl", "topics.jsonl", "histories.jsonl"})
    manifest.note_output((fs::path(o.out_dir) / name).string());

  manifest.finish(o.out_dir);
  std::cout << "synth: " << corpus.topics.size() << " topics, " << corpus.histories.size()
            << " users, " << all_posts.size() << " posts -> " << o.out_dir << "\n";
  return 0;
}

int cmd_preprocess(const CommonOpts& o, const std::string& posts_path,
                   const std::string& noise_path) {
  RunManifest manifest;
  manifest.subcommand = "preprocess";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);
  manifest.note_input(posts_path);

  std::vector<std::string> noise;
  if (!noise_path.empty()) {
    manifest.note_input(noise_path);
    noise = load_noise_keywords(noise_path);
  }

  auto posts = import_posts(posts_path);
  FilterResult filtered = dual_filter(posts, noise);

  export_posts((fs::path(o.out_dir) / "kept.jsonl").string(), filtered.kept);
  manifest.note_output((fs::path(o.out_dir) / "kept.jsonl").string());

  std::ostringstream dropped;
  for (const auto& [post, reason] : filtered.dropped)
    dropped << post.id << "\t" << reason.to_string() << "\n";
  manifest.write_output((fs::path(o.out_dir) / "dropped.tsv").string(), dropped.str());

  std::vector<std::string> kept_ids;
  for (const Post& p : filtered.kept) kept_ids.push_back(p.id);
  SplitAssignment splits = split_dataset(kept_ids, o.seed);
  export_splits((fs::path(o.out_dir) / "splits.tsv").string(), splits);
  manifest.note_output((fs::path(o.out_dir) / "splits.tsv").string());

  manifest.finish(o.out_dir);
  std::cout << "preprocess: kept " << filtered.kept.size() << ", dropped "
            << filtered.dropped.size() << " -> " << o.out_dir << "\n";
  return 0;
}

int cmd_retrieve(const CommonOpts& o, const std::string& corpus_path, const std::string& query,
                 double k1, double b) {
  RunManifest manifest;
  manifest.subcommand = "retrieve";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);
  manifest.note_input(corpus_path);
  manifest.config = {{"query", query},
                     {"topk", std::to_string(o.topk)},
                     {"k1", format_fixed(k1, 4)},
                     {"b", format_fixed(b, 4)}};

  // one document per line, UTF-8
  std::vector<std::string> docs;
  {
    std::istringstream in(binio::read_file(corpus_path));
    std::string line;
    while (std::getline(in, line)) docs.push_back(line);
  }
  auto index = Bm25Index::build(docs, k1, b);
  auto result = index.retrieve_topk(query, o.topk);

  std::ostringstream out;
  for (std::size_t i = 0; i < result.hits.size(); ++i)
    out << (i + 1) << "\t" << result.hits[i].doc_id << "\t"
        << format_fixed(result.hits[i].score, 6) << "\n";
  manifest.write_output((fs::path(o.out_dir) / "retrieval.tsv").string(), out.str());
  manifest.finish(o.out_dir);
  std::cout << out.str();
  return 0;
}

int cmd_persona(const CommonOpts& o, const std::string& data_dir) {
  RunManifest manifest;
  manifest.subcommand = "persona";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);
  manifest.config = {{"extractor", o.extractor}, {"topk", std::to_string(o.topk)}};

  SynthCorpus corpus = load_corpus(data_dir, manifest);
  Extractors ex = make_extractors(o, manifest);

  // one persona per (user, topic) pair, in corpus order
  std::vector<Persona> personas;
  std::map<std::string, const UserHistory*> by_user;
  for (const UserHistory& h : corpus.histories) by_user[h.user_id] = &h;
  for (const TopicRecord& topic : corpus.topics) {
    for (const Post& gold : topic.posts) {
      const UserHistory* hist = by_user.at(gold.user_id);
      std::vector<Post> pool;
      for (const Post& p : hist->posts)
        if (!p.has_hashtag(topic.hashtag)) pool.push_back(p);
      if (pool.empty()) continue;
      std::vector<std::string> docs;
      for (const Post& p : pool) docs.push_back(p.text);
      auto index = Bm25Index::build(docs);
      std::vector<Post> retrieved;
      for (const RetrievalHit& hit : index.retrieve_topk(topic.news_text, o.topk).hits)
        retrieved.push_back(pool[hit.doc_id]);
      if (retrieved.empty()) {
        const std::size_t n = std::min(o.topk, pool.size());
        retrieved.assign(pool.end() - static_cast<std::ptrdiff_t>(n), pool.end());
      }
      personas.push_back(ex.persona->extract(gold.user_id, retrieved));
    }
  }
  export_personas((fs::path(o.out_dir) / "personas.jsonl").string(), personas);
  manifest.note_output((fs::path(o.out_dir) / "personas.jsonl").string());
  manifest.finish(o.out_dir);
  std::cout << "persona: " << personas.size() << " records (cache hits "
            << ex.persona->cache().hits() << ") -> " << o.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o, const std::string& data_dir, std::size_t steps,
              std::size_t batch, bool freeze_base) {
  RunManifest manifest;
  manifest.subcommand = "train";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);

  FlatConfig flat = load_flat(o, manifest);
  ToyModelConfig mcfg = model_config_from(flat, o);
  if (freeze_base) mcfg.freeze_base = true;
  const std::size_t effective_steps = flat.has("train.steps") && steps == 0
                                          ? flat.get_u64("train.steps", 0)
                                          : (steps == 0 ? 600 : steps);
  const std::size_t effective_batch =
      batch == 0 ? std::max<std::uint64_t>(1, flat.get_u64("train.batch", 1)) : batch;

  manifest.config = model_config_snapshot(mcfg, o.seed);
  manifest.config["train.steps"] = std::to_string(effective_steps);
  manifest.config["train.batch"] = std::to_string(effective_batch);
  manifest.config["topk"] = std::to_string(o.topk);

  SynthCorpus corpus = load_corpus(data_dir, manifest);
  Extractors ex = make_extractors(o, manifest);
  auto examples = prepare_examples(corpus, mcfg, o.topk, *ex.persona, ex.classifier);
  SplitAssignment splits = split_examples(examples, o.seed);
  auto train_set = examples_in_split(examples, splits, Split::Train);
  auto valid_set = examples_in_split(examples, splits, Split::Valid);

  ToyTransformer model(mcfg, o.seed);
  TrainState state = make_train_state(model);
  auto log = train_model(model, state, train_set, effective_steps, effective_batch);

  std::vector<PromptSequence> valid_seqs;
  for (const PipelineExample* e : valid_set) valid_seqs.push_back(e->train_seq);
  const double final_valid = valid_seqs.empty() ? 0.0 : eval_loss(model, valid_seqs);

  const std::string stem = (fs::path(o.out_dir) / "checkpoint").string();
  model.save(stem);
  for (const char* suffix : {".adapter.bin", ".base.bin"}) manifest.note_output(stem + suffix);

  std::ostringstream snapshot;
  for (const auto& [k, v] : manifest.config) snapshot << k << " = " << v << "\n";
  manifest.write_output(stem + ".config", snapshot.str());

  manifest.write_output((fs::path(o.out_dir) / "train_log.tsv").string(), train_log_text(log));
  export_splits((fs::path(o.out_dir) / "splits.tsv").string(), splits);
  manifest.note_output((fs::path(o.out_dir) / "splits.tsv").string());

  manifest.timings_ms["final_valid_loss_x1000"] = final_valid * 1000.0;
  manifest.finish(o.out_dir);
  std::cout << "train: " << effective_steps << " steps over " << train_set.size()
            << " pairs, final train-log loss " << (log.empty() ? 0.0 : log.back().loss)
            << ", valid loss " << final_valid << " -> " << o.out_dir << "\n";
  return 0;
}

int cmd_generate(const CommonOpts& o, const std::string& data_dir, const std::string& ckpt_stem,
                 std::size_t max_tokens, double temperature, const std::string& split_name,
                 std::size_t users_per_topic) {
  RunManifest manifest;
  manifest.subcommand = "generate";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);

  manifest.note_input(ckpt_stem + ".config");
  FlatConfig snapshot = FlatConfig::load(ckpt_stem + ".config");
  ToyModelConfig mcfg = model_config_from_snapshot(snapshot);
  if (!o.ablate.empty()) mcfg.ablate = AblationFlags::parse(o.ablate);
  const std::uint64_t model_seed = snapshot.get_u64("model.seed", o.seed);

  manifest.config = model_config_snapshot(mcfg, model_seed);
  manifest.config["gen.max_tokens"] = std::to_string(max_tokens);
  manifest.config["gen.temperature"] = format_fixed(temperature, 4);
  manifest.config["gen.split"] = split_name;
  manifest.config["gen.users_per_topic"] = std::to_string(users_per_topic);

  SynthCorpus corpus = load_corpus(data_dir, manifest);
  Extractors ex = make_extractors(o, manifest);
  auto examples = prepare_examples(corpus, mcfg, o.topk, *ex.persona, ex.classifier);

  ToyTransformer model(mcfg, model_seed);
  model.load(ckpt_stem);
  manifest.note_input(ckpt_stem + ".adapter.bin");
  manifest.note_input(ckpt_stem + ".base.bin");

  std::vector<const PipelineExample*> selected;
  if (split_name == "all") {
    for (const PipelineExample& e : examples) selected.push_back(&e);
  } else {
    auto split = parse_split(split_name);
    if (!split) throw ConfigError("unknown split '" + split_name + "'");
    SplitAssignment splits = split_examples(examples, o.seed);
    selected = examples_in_split(examples, splits, *split);
  }
  if (users_per_topic > 0) {
    std::map<std::string, std::vector<const PipelineExample*>> by_topic;
    for (const PipelineExample* e : selected) by_topic[e->topic_id].push_back(e);
    std::mt19937_64 pick_rng(o.seed ^ 0xfeedfacecafebeefull);
    selected.clear();
    for (auto& [topic, list] : by_topic) {
      std::shuffle(list.begin(), list.end(), pick_rng);
      const std::size_t n = std::min(users_per_topic, list.size());
      for (std::size_t i = 0; i < n; ++i) selected.push_back(list[i]);
    }
  }

  GenerationResult result = generate_responses(model, selected, max_tokens, temperature, o.seed);

  std::ostringstream gen_out;
  for (const GenerationRecord& g : result.generations)
    gen_out << nlohmann::json{{"user_id", g.user_id}, {"topic_id", g.topic_id}, {"text", g.text}}
                   .dump()
            << "\n";
  manifest.write_output((fs::path(o.out_dir) / "generations.jsonl").string(), gen_out.str());
  manifest.write_output((fs::path(o.out_dir) / "gate_records.tsv").string(),
                        gate_records_text(result.gate_records));
  manifest.finish(o.out_dir);
  std::cout << "generate: " << result.generations.size() << " responses -> " << o.out_dir << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& data_dir,
                 const std::string& generations_path) {
  RunManifest manifest;
  manifest.subcommand = "evaluate";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);
  manifest.config = {{"classifier", o.classifier}};

  SynthCorpus corpus = load_corpus(data_dir, manifest);
  manifest.note_input(generations_path);
  Extractors ex = make_extractors(o, manifest);

  std::vector<GenerationRecord> generations;
  jsonl::read_jsonl(generations_path, [&](const nlohmann::json& j, std::size_t line) {
    for (const char* field : {"user_id", "topic_id", "text"})
      if (!j.contains(field))
        throw ParseError(std::string("generation record missing field '") + field + "'", line);
    generations.push_back({j.at("user_id").get<std::string>(),
                           j.at("topic_id").get<std::string>(),
                           j.at("text").get<std::string>()});
  });

  EvaluationReport report =
      evaluate_generations(generations, gold_index(corpus), corpus.topics, ex.classifier);

  manifest.write_output((fs::path(o.out_dir) / "metrics.tsv").string(),
                        metrics_report_text(report));
  for (const TopicEvaluation& t : report.topics)
    manifest.write_output((fs::path(o.out_dir) / ("dist_" + t.topic_id + ".tsv")).string(),
                          distribution_table_text(t));
  manifest.finish(o.out_dir);
  std::cout << metrics_report_text(report);
  return 0;
}

int cmd_experts(const CommonOpts& o, const std::string& records_path) {
  RunManifest manifest;
  manifest.subcommand = "experts";
  manifest.seed = o.seed;
  fs::create_directories(o.out_dir);
  manifest.note_input(records_path);

  auto records = parse_gate_records(binio::read_file(records_path));
  auto stats = utilization_stats(records);
  manifest.write_output((fs::path(o.out_dir) / "utilization.tsv").string(),
                        utilization_table_text(stats));
  manifest.finish(o.out_dir);
  std::cout << utilization_table_text(stats);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"socialalign: dual-level public response prediction pipeline"};
  app.require_subcommand(1);

  CommonOpts o;

  // synth
  std::size_t topics = 8, users = 60, posts_per_user = 12;
  double participation = 0.6, noise_fraction = 0.1;
  CLI::App* synth = app.add_subcommand("synth", "generate a seeded synthetic corpus");
  add_common(synth, o);
  synth->add_option("--topics", topics);
  synth->add_option("--users", users);
  synth->add_option("--posts-per-user", posts_per_user);
  synth->add_option("--participation", participation);
  synth->add_option("--noise-fraction", noise_fraction);

  // preprocess
  std::string posts_path, noise_path;
  CLI::App* preprocess = app.add_subcommand("preprocess", "dual-filter posts and split");
  add_common(preprocess, o);
  preprocess->add_option("--posts", posts_path, "posts.jsonl")->required();
  preprocess->add_option("--noise-keywords", noise_path, "noise keyword list, one per line");

  // retrieve
  std::string corpus_path, query;
  double k1 = 1.2, b = 0.75;
  CLI::App* retrieve = app.add_subcommand("retrieve", "BM25 top-k over a line corpus");
  add_common(retrieve, o);
  retrieve->add_option("--corpus", corpus_path, "one document per line")->required();
  retrieve->add_option("--query", query)->required();
  retrieve->add_option("--k1", k1);
  retrieve->add_option("--b", b);

  // persona
  std::string data_dir;
  CLI::App* persona = app.add_subcommand("persona", "extract personas for all (user, topic) pairs");
  add_common(persona, o);
  persona->add_option("--data", data_dir, "directory with posts/topics/histories jsonl")->required();

  // train
  std::size_t steps = 0, batch = 0;
  bool freeze_base = false;
  CLI::App* train = app.add_subcommand("train", "train the toy model with PAC-LoRA");
  add_common(train, o);
  train->add_option("--data", data_dir)->required();
  train->add_option("--steps", steps, "micro-steps (default 600 or train.steps)");
  train->add_option("--batch", batch, "sequences per micro-step");
  train->add_flag("--freeze-base", freeze_base, "freeze all base weights (paper regime)");

  // generate
  std::string ckpt_stem = "out/checkpoint", split_name = "all";
  std::size_t max_tokens = 28, users_per_topic = 0;
  double temperature = 0.0;
  CLI::App* generate_cmd = app.add_subcommand("generate", "generate responses per (user, topic)");
  add_common(generate_cmd, o);
  generate_cmd->add_option("--data", data_dir)->required();
  generate_cmd->add_option("--checkpoint", ckpt_stem, "checkpoint stem path");
  generate_cmd->add_option("--max-tokens", max_tokens);
  generate_cmd->add_option("--temperature", temperature);
  generate_cmd->add_option("--split", split_name, "all|train|valid|test");
  generate_cmd->add_option("--users-per-topic", users_per_topic, "0 = all participants");

  // evaluate
  std::string generations_path;
  CLI::App* evaluate = app.add_subcommand("evaluate", "micro accuracy/F1 + macro JS, x100 scale");
  add_common(evaluate, o);
  evaluate->add_option("--data", data_dir)->required();
  evaluate->add_option("--generations", generations_path, "generations.jsonl")->required();

  // experts
  std::string records_path;
  CLI::App* experts = app.add_subcommand("experts", "per-topic expert utilization from gate records");
  add_common(experts, o);
  experts->add_option("--records", records_path, "gate_records.tsv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (synth->parsed())
      return cmd_synth(o, topics, users, posts_per_user, participation, noise_fraction);
    if (preprocess->parsed()) return cmd_preprocess(o, posts_path, noise_path);
    if (retrieve->parsed()) return cmd_retrieve(o, corpus_path, query, k1, b);
    if (persona->parsed()) return cmd_persona(o, data_dir);
    if (train->parsed()) return cmd_train(o, data_dir, steps, batch, freeze_base);
    if (generate_cmd->parsed())
      return cmd_generate(o, data_dir, ckpt_stem, max_tokens, temperature, split_name,
                          users_per_topic);
    if (evaluate->parsed()) return cmd_evaluate(o, data_dir, generations_path);
    if (experts->parsed()) return cmd_experts(o, records_path);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
