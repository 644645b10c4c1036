#pragma once

// Orchestration shared by the CLI and the acceptance suite: retrieval-backed
// prompt preparation, training schedules, generation, and the dual-level
// metric computation (micro accuracy/F1, macro per-topic JS).

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "socialalign/bm25.hpp"
#include "socialalign/dataset.hpp"
#include "socialalign/errors.hpp"
#include "socialalign/model.hpp"
#include "socialalign/persona.hpp"
#include "socialalign/sentiment.hpp"
#include "socialalign/train.hpp"

namespace socialalign {

struct PipelineExample {
  std::string user_id;
  std::string topic_id;
  std::string pair_id;  // "user|topic", the micro split unit
  PromptSequence train_seq;
  PromptSequence gen_prompt;
  std::string gold_response;
  SentimentLabel gold_label = SentimentLabel::Calm;
};

// For every (user, topic) response pair: retrieve top-k history posts for the
// news text (excluding the user's posts on that very topic), build the
// persona from the retrieved documents, and assemble prompt sequences.
// Ablation flags drop the persona/history segments here.
inline std::vector<PipelineExample> prepare_examples(const SynthCorpus& corpus,
                                                     const ToyModelConfig& model_cfg,
                                                     std::size_t topk,
                                                     PersonaExtractor& extractor,
                                                     const SentimentClassifier& classifier) {
  std::map<std::string, const UserHistory*> history_by_user;
  for (const UserHistory& h : corpus.histories) history_by_user[h.user_id] = &h;

  std::vector<PipelineExample> out;
  for (const TopicRecord& topic : corpus.topics) {
    for (const Post& gold : topic.posts) {
      const UserHistory* hist = history_by_user.at(gold.user_id);

      std::vector<Post> pool;
      for (const Post& p : hist->posts)
        if (!p.has_hashtag(topic.hashtag)) pool.push_back(p);

      std::vector<Post> retrieved;
      if (!pool.empty()) {
        std::vector<std::string> docs;
        for (const Post& p : pool) docs.push_back(p.text);
        auto index = Bm25Index::build(docs);
        for (const RetrievalHit& hit : index.retrieve_topk(topic.news_text, topk).hits)
          retrieved.push_back(pool[hit.doc_id]);
        if (retrieved.empty()) {
          // no lexical overlap with the news: fall back to the most recent posts
          const std::size_t n = std::min(topk, pool.size());
          retrieved.assign(pool.end() - static_cast<std::ptrdiff_t>(n), pool.end());
        }
      }

      std::optional<Persona> persona;
      if (!model_cfg.ablate.no_persona && !retrieved.empty())
        persona = extractor.extract(gold.user_id, retrieved);

      const std::vector<Post> prompt_history =
          model_cfg.ablate.no_history ? std::vector<Post>{} : retrieved;

      PipelineExample ex;
      ex.user_id = gold.user_id;
      ex.topic_id = topic.topic_id;
      ex.pair_id = gold.user_id + "|" + topic.topic_id;
      ex.train_seq = build_prompt(persona ? &*persona : nullptr, prompt_history, topic.news_text,
                                  gold.text, model_cfg.context);
      ex.gen_prompt = build_prompt(persona ? &*persona : nullptr, prompt_history, topic.news_text,
                                   std::nullopt, model_cfg.context);
      ex.gold_response = gold.text;
      ex.gold_label = classifier.classify(gold.text);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

inline SplitAssignment split_examples(const std::vector<PipelineExample>& examples,
                                      std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const PipelineExample& ex : examples) ids.push_back(ex.pair_id);
  return split_dataset(ids, seed);
}

inline std::vector<const PipelineExample*> examples_in_split(
    const std::vector<PipelineExample>& examples, const SplitAssignment& splits, Split which) {
  std::vector<const PipelineExample*> out;
  for (const PipelineExample& ex : examples)
    if (splits.assignment.at(ex.pair_id) == which) out.push_back(&ex);
  return out;
}

struct TrainLogEntry {
  std::size_t step;
  double loss;
  double lr;
};

// Seeded epoch shuffling over the training pairs, one micro-batch per step.
inline std::vector<TrainLogEntry> train_model(ToyTransformer& model, TrainState& state,
                                              const std::vector<const PipelineExample*>& train_set,
                                              std::size_t steps, std::size_t batch_size,
                                              std::size_t log_every = 50) {
  if (train_set.empty()) throw ContractError("train_model: empty training set");
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first use

  std::vector<TrainLogEntry> log;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<PromptSequence> batch;
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), state.sample_rng);
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]->train_seq);
    }
    const double loss = train_step(model, state, batch);
    if (step % log_every == 0 || step + 1 == steps)
      log.push_back({step, loss, model.config().learning_rate});
  }
  return log;
}

struct GenerationRecord {
  std::string user_id;
  std::string topic_id;
  std::string text;
};

struct GenerationResult {
  std::vector<GenerationRecord> generations;
  std::vector<GateRecord> gate_records;
};

// Greedy (or seeded sampled) responses for the given examples, with the gate
// vectors each sequence actually used.
inline GenerationResult generate_responses(ToyTransformer& model,
                                           const std::vector<const PipelineExample*>& examples,
                                           std::size_t max_tokens, double temperature,
                                           std::uint64_t seed) {
  GenerationResult result;
  std::uint64_t n = 0;
  for (const PipelineExample* ex : examples) {
    const std::string text =
        generate(model, ex->gen_prompt, max_tokens, temperature, seed ^ (0x9e3779b9ull * ++n));
    result.generations.push_back({ex->user_id, ex->topic_id, text});
    GateSample gates = model.gates_for(ex->gen_prompt);
    result.gate_records.push_back(
        {ex->topic_id, ex->user_id, /*layer_id=*/0, gates.g_a, gates.g_b});
  }
  return result;
}

struct TopicEvaluation {
  std::string topic_id;
  SentimentDistribution predicted;
  SentimentDistribution ground_truth;
  double js = 0.0;  // bits
  std::size_t n_pairs = 0;
};

struct EvaluationReport {
  double micro_accuracy = 0.0;
  double micro_macro_f1 = 0.0;
  double macro_js_mean = 0.0;  // bits
  std::vector<TopicEvaluation> topics;
};

// Micro: predicted vs gold sentiment per pair. Macro: aggregate predicted
// labels per topic into P' and compare to the topic's ground truth P.
inline EvaluationReport evaluate_generations(const std::vector<GenerationRecord>& generations,
                                             const std::map<std::string, std::string>& gold_by_pair,
                                             const std::vector<TopicRecord>& topics,
                                             const SentimentClassifier& classifier) {
  if (generations.empty()) throw EmptyCollectionError("evaluate_generations: nothing to score");
  std::vector<SentimentLabel> pred, gold;
  std::map<std::string, std::vector<SentimentLabel>> pred_by_topic;
  for (const GenerationRecord& gen : generations) {
    auto it = gold_by_pair.find(gen.user_id + "|" + gen.topic_id);
    if (it == gold_by_pair.end())
      throw ValidationError("no gold response for pair " + gen.user_id + "|" + gen.topic_id);
    const SentimentLabel p =
        gen.text.empty() ? SentimentLabel::Calm : classifier.classify(gen.text);
    pred.push_back(p);
    gold.push_back(classifier.classify(it->second));
    pred_by_topic[gen.topic_id].push_back(p);
  }

  EvaluationReport report;
  const SentimentMetrics micro = sentiment_metrics(pred, gold);
  report.micro_accuracy = micro.accuracy;
  report.micro_macro_f1 = micro.macro_f1;

  double js_sum = 0.0;
  std::size_t js_topics = 0;
  for (const TopicRecord& topic : topics) {
    auto it = pred_by_topic.find(topic.topic_id);
    if (it == pred_by_topic.end()) continue;
    TopicEvaluation te;
    te.topic_id = topic.topic_id;
    te.predicted = aggregate_distribution(it->second);
    te.ground_truth = topic.ground_truth;
    te.js = js_divergence(te.predicted, te.ground_truth);
    te.n_pairs = it->second.size();
    js_sum += te.js;
    ++js_topics;
    report.topics.push_back(std::move(te));
  }
  if (js_topics == 0) throw EmptyCollectionError("evaluate_generations: no topic overlap");
  report.macro_js_mean = js_sum / static_cast<double>(js_topics);
  return report;
}

// Baseline predictor for the macro level: the uniform distribution.
inline double uniform_predictor_js(const std::vector<TopicRecord>& topics) {
  double sum = 0.0;
  for (const TopicRecord& t : topics) sum += js_divergence(SentimentDistribution::uniform(), t.ground_truth);
  return sum / static_cast<double>(topics.size());
}

// --- text artifacts ------------------------------------------------------------

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// metric<TAB>value lines, values on the 0-100 presentation scale, one decimal.
inline std::string metrics_report_text(const EvaluationReport& report) {
  std::ostringstream os;
  os << "micro_accuracy\t" << format_fixed(report.micro_accuracy * 100.0, 1) << "\n";
  os << "micro_macro_f1\t" << format_fixed(report.micro_macro_f1 * 100.0, 1) << "\n";
  os << "macro_js_mean\t" << format_fixed(report.macro_js_mean * 100.0, 1) << "\n";
  for (const TopicEvaluation& t : report.topics)
    os << "js_topic_" << t.topic_id << "\t" << format_fixed(t.js * 100.0, 1) << "\n";
  return os.str();
}

// Plot-ready per-topic distribution bars: label, gold weight, predicted weight.
inline std::string distribution_table_text(const TopicEvaluation& t) {
  std::ostringstream os;
  os << "label\tgold\tpredicted\n";
  for (std::size_t i = 0; i < kSentimentLabelCount; ++i)
    os << kSentimentLabelNames[i] << "\t" << format_fixed(t.ground_truth.weights[i], 6) << "\t"
       << format_fixed(t.predicted.weights[i], 6) << "\n";
  return os.str();
}

inline std::string gate_records_text(const std::vector<GateRecord>& records) {
  std::ostringstream os;
  os << "topic_id\tuser_id\tlayer_id";
  const std::size_t n = records.empty() ? 0 : records.front().g_a.size();
  for (std::size_t i = 0; i < n; ++i) os << "\tgA" << i;
  for (std::size_t i = 0; i < n; ++i) os << "\tgB" << i;
  os << "\n";
  for (const GateRecord& r : records) {
    os << r.topic_id << "\t" << r.user_id << "\t" << r.layer_id;
    for (double v : r.g_a) os << "\t" << format_fixed(v, 6);
    for (double v : r.g_b) os << "\t" << format_fixed(v, 6);
    os << "\n";
  }
  return os.str();
}

inline std::vector<GateRecord> parse_gate_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<GateRecord> records;
  std::size_t line_no = 0;
  std::size_t n_experts = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) tab = line.size();
      cells.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (line_no == 1) {
      if (cells.size() < 5 || cells[0] != "topic_id")
        throw ParseError("gate records: unexpected header", line_no);
      n_experts = (cells.size() - 3) / 2;
      continue;
    }
    if (cells.size() != 3 + 2 * n_experts)
      throw ParseError("gate records: wrong column count", line_no);
    GateRecord r;
    r.topic_id = cells[0];
    r.user_id = cells[1];
    r.layer_id = std::stoi(cells[2]);
    for (std::size_t i = 0; i < n_experts; ++i) r.g_a.push_back(std::stod(cells[3 + i]));
    for (std::size_t i = 0; i < n_experts; ++i)
      r.g_b.push_back(std::stod(cells[3 + n_experts + i]));
    records.push_back(std::move(r));
  }
  return records;
}

inline std::string utilization_table_text(const std::map<std::string, UtilizationStats>& stats) {
  std::ostringstream os;
  os << "topic_id\texpert\tmean_gA\tmean_gB\tcount\n";
  for (const auto& [topic, s] : stats)
    for (std::size_t i = 0; i < s.mean_g_a.size(); ++i)
      os << topic << "\t" << i << "\t" << format_fixed(s.mean_g_a[i], 6) << "\t"
         << format_fixed(s.mean_g_b[i], 6) << "\t" << s.count << "\n";
  return os.str();
}

inline std::string train_log_text(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  for (const TrainLogEntry& e : log)
    os << e.step << "\t" << format_fixed(e.loss, 6) << "\t" << format_fixed(e.lr, 8) << "\n";
  return os.str();
}

}  // namespace socialalign
