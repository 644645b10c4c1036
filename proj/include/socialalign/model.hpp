#pragma once

// Desk-scale decoder-only transformer with PAC-LoRA on the query and value
// projections of every attention block. One gate pair is shared by all
// adapted layers; gates are computed once per sequence from pooled embedding
// features (news tokens drive the analyzing gate, persona+history tokens the
// writing gate).

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "socialalign/checkpoint.hpp"
#include "socialalign/errors.hpp"
#include "socialalign/pac_lora.hpp"
#include "socialalign/tensor.hpp"
#include "socialalign/tokenizer.hpp"

namespace socialalign {

struct AblationFlags {
  bool no_analyzing_gate = false;
  bool no_writing_gate = false;
  bool no_history = false;
  bool no_persona = false;

  // Comma-separated flag list, e.g. "no_analyzing_gate,no_persona".
  static AblationFlags parse(const std::string& csv) {
    AblationFlags f;
    std::size_t start = 0;
    while (start <= csv.size()) {
      std::size_t comma = csv.find(',', start);
      if (comma == std::string::npos) comma = csv.size();
      const std::string flag = csv.substr(start, comma - start);
      if (flag == "no_analyzing_gate") f.no_analyzing_gate = true;
      else if (flag == "no_writing_gate") f.no_writing_gate = true;
      else if (flag == "no_history") f.no_history = true;
      else if (flag == "no_persona") f.no_persona = true;
      else if (!flag.empty()) throw ConfigError("unknown ablation flag '" + flag + "'");
      start = comma + 1;
    }
    return f;
  }

  std::string to_string() const {
    std::string s;
    auto app = [&](bool on, const char* name) {
      if (on) s += (s.empty() ? "" : ",") + std::string(name);
    };
    app(no_analyzing_gate, "no_analyzing_gate");
    app(no_writing_gate, "no_writing_gate");
    app(no_history, "no_history");
    app(no_persona, "no_persona");
    return s;
  }
};

struct ToyModelConfig {
  std::size_t vocab_size = tok::kVocabSize;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t context = 512;
  std::size_t n_experts = 3;   // N_a
  std::size_t rank = 8;
  double lora_alpha = 16.0;
  std::size_t gate_hidden = 32;
  double dropout = 0.1;
  // Toy-scale training defaults; the full-scale profile from the source
  // setup (lr 2e-5, batch 1, accumulation 16) ships in configs/paper.cfg alongside the binary.
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t grad_accum = 16;
  bool freeze_base = false;
  AblationFlags ablate;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("d_model must be a positive multiple of n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
    if (vocab_size == 0 || context == 0 || n_layers == 0) throw ConfigError("zero-sized model");
    if (n_experts == 0) throw ConfigError("need at least one expert");
    if (rank == 0 || rank > d_model / 2) throw ConfigError("rank must lie in [1, d_model/2]");
    if (grad_accum == 0) throw ConfigError("grad_accum must be >= 1");
  }
};

// Gate values actually used for one sequence (post-softmax or forced uniform).
struct GateSample {
  std::vector<double> g_a;
  std::vector<double> g_b;
};

class ToyTransformer {
 public:
  ToyTransformer(ToyModelConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d_model;

    tok_emb_ = Tensor::randn({cfg_.vocab_size, d}, 0.02, rng, true);
    pos_emb_ = Tensor::randn({cfg_.context, d}, 0.02, rng, true);
    blocks_.reserve(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      Block b;
      b.ln1_g = Tensor::full({d}, 1.0, true);
      b.ln1_b = Tensor({d}, true);
      b.wq = PacLoraLayer::init(Tensor::randn({d, d}, 0.02, rng), cfg_.rank, cfg_.n_experts,
                                cfg_.lora_alpha, rng);
      b.bq = Tensor({d}, true);
      b.wk = Tensor::randn({d, d}, 0.02, rng, true);
      b.bk = Tensor({d}, true);
      b.wv = PacLoraLayer::init(Tensor::randn({d, d}, 0.02, rng), cfg_.rank, cfg_.n_experts,
                                cfg_.lora_alpha, rng);
      b.bv = Tensor({d}, true);
      b.wo = Tensor::randn({d, d}, 0.02, rng, true);
      b.bo = Tensor({d}, true);
      b.ln2_g = Tensor::full({d}, 1.0, true);
      b.ln2_b = Tensor({d}, true);
      b.fc1_w = Tensor::randn({4 * d, d}, 0.02, rng, true);
      b.fc1_b = Tensor({4 * d}, true);
      b.fc2_w = Tensor::randn({d, 4 * d}, 0.02, rng, true);
      b.fc2_b = Tensor({d}, true);
      blocks_.push_back(std::move(b));
    }
    lnf_g_ = Tensor::full({d}, 1.0, true);
    lnf_b_ = Tensor({d}, true);
    head_w_ = Tensor::randn({cfg_.vocab_size, d}, 0.02, rng, true);
    head_b_ = Tensor({cfg_.vocab_size}, true);
    gate_a_ = GatingNet::init(d, cfg_.gate_hidden, cfg_.n_experts, rng);
    gate_b_ = GatingNet::init(d, cfg_.gate_hidden, cfg_.n_experts, rng);

    // one dropout stream per site: embeddings + 3 per block
    const std::size_t sites = 1 + 3 * cfg_.n_layers;
    for (std::size_t s = 0; s < sites; ++s)
      dropout_rngs_.emplace_back(seed ^ (0x9e3779b97f4a7c15ull * (s + 1)));

    set_freeze_base(cfg_.freeze_base);
  }

  const ToyModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // x_news / x_user means of token embeddings per segment; empty user
  // segments (no_persona + no_history) yield a zero feature vector.
  std::pair<Tensor, Tensor> pool_gate_features(Tape& tape, const PromptSequence& seq,
                                               const Tensor& embedded) const {
    return {tape.mean_rows(embedded, seq.news_rows()), tape.mean_rows(embedded, seq.user_rows())};
  }

  // Full-sequence logits [T, vocab]. `train` enables dropout (consuming the
  // per-site PRNG streams). The gates actually applied land in `gates` when
  // given.
  Tensor forward(Tape& tape, const PromptSequence& seq, bool train, GateSample* gates = nullptr) {
    return forward_rows(tape, seq, 0, seq.size(), train, gates);
  }

  // Logits for positions [start, start+count) only; the unembedding is the
  // widest matmul in the net, so restricting it to the rows that carry loss
  // (or just the last row during generation) pays for itself.
  Tensor forward_rows(Tape& tape, const PromptSequence& seq, std::size_t start, std::size_t count,
                      bool train, GateSample* gates = nullptr) {
    Tensor x = backbone(tape, seq, train, gates);
    if (!(start == 0 && count == x.rows())) x = tape.slice_rows(x, start, count);
    return tape.add_row_bias(tape.matmul(x, tape.transpose(head_w_)), head_b_);
  }

  // Next-token logits only (last position); used by generation.
  Tensor forward_next(Tape& tape, const PromptSequence& seq) {
    return forward_rows(tape, seq, seq.size() - 1, 1, /*train=*/false);
  }

  // Gate vectors for a sequence without running the blocks (embedding lookup
  // plus the two gating nets); cheap enough for per-topic utilization scans.
  GateSample gates_for(const PromptSequence& seq) {
    Tape tape;
    tape.set_grad_enabled(false);
    Tensor embedded = tape.embedding(tok_emb_, seq.tokens);
    auto [ga, gb] = gate_tensors(tape, seq, embedded);
    return {{ga.data(), ga.data() + ga.size()}, {gb.data(), gb.data() + gb.size()}};
  }

  std::vector<Tensor> adapter_params() const {
    std::vector<Tensor> out;
    for (const Block& b : blocks_) {
      for (const Tensor& t : b.wq.expert_params()) out.push_back(t);
      for (const Tensor& t : b.wv.expert_params()) out.push_back(t);
    }
    for (const Tensor& t : gate_a_.params()) out.push_back(t);
    for (const Tensor& t : gate_b_.params()) out.push_back(t);
    return out;
  }

  // Everything that is not adapter/gating, including the frozen W0 matrices.
  std::vector<Tensor> base_params() const {
    std::vector<Tensor> out{tok_emb_, pos_emb_};
    for (const Block& b : blocks_) {
      for (const Tensor& t :
           {b.ln1_g, b.ln1_b, b.wq.w0, b.bq, b.wk, b.bk, b.wv.w0, b.bv, b.wo, b.bo, b.ln2_g,
            b.ln2_b, b.fc1_w, b.fc1_b, b.fc2_w, b.fc2_b})
        out.push_back(t);
    }
    for (const Tensor& t : {lnf_g_, lnf_b_, head_w_, head_b_}) out.push_back(t);
    return out;
  }

  std::vector<Tensor> trainable_params() const {
    std::vector<Tensor> out;
    for (const Tensor& t : base_params())
      if (t.requires_grad()) out.push_back(t);
    for (const Tensor& t : adapter_params()) out.push_back(t);
    return out;
  }

  // The paper regime: W0 and the rest of the base never receive gradients.
  // In toy mode the base is trainable because it starts random rather than
  // pretrained; PAC-LoRA W0 matrices stay frozen in both regimes.
  void set_freeze_base(bool frozen) {
    cfg_.freeze_base = frozen;
    for (Tensor t : base_params()) {
      if (is_w0(t)) continue;  // W0 is frozen regardless of regime
      t.set_requires_grad(!frozen);
    }
    for (Block& b : blocks_) {
      b.wq.w0.set_requires_grad(false);
      b.wv.w0.set_requires_grad(false);
    }
  }
  bool base_frozen() const { return cfg_.freeze_base; }

  std::vector<const PacLoraLayer*> adapted_layers() const {
    std::vector<const PacLoraLayer*> out;
    for (const Block& b : blocks_) {
      out.push_back(&b.wq);
      out.push_back(&b.wv);
    }
    return out;
  }

  const GatingNet& gate_net_a() const { return gate_a_; }
  const GatingNet& gate_net_b() const { return gate_b_; }

  // checkpoint.{adapter.bin,base.bin}: adapters in the pac-lora format, base
  // weights in the toy-base block.
  void save(const std::string& stem) const {
    save_pac_checkpoint(stem + ".adapter.bin", adapted_layers(), gate_a_, gate_b_);
    save_base_block(stem + ".base.bin");
  }

  void load(const std::string& stem) {
    std::vector<PacLoraLayer*> layers;
    for (Block& b : blocks_) {
      layers.push_back(&b.wq);
      layers.push_back(&b.wv);
    }
    load_pac_checkpoint(stem + ".adapter.bin", layers, gate_a_, gate_b_);
    load_base_block(stem + ".base.bin");
  }

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    PacLoraLayer wq;
    Tensor bq;
    Tensor wk, bk;
    PacLoraLayer wv;
    Tensor bv;
    Tensor wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
  };

  bool is_w0(const Tensor& t) const {
    for (const Block& b : blocks_)
      if (t.same_storage(b.wq.w0) || t.same_storage(b.wv.w0)) return true;
    return false;
  }

  std::pair<Tensor, Tensor> gate_tensors(Tape& tape, const PromptSequence& seq,
                                         const Tensor& embedded) {
    auto [x_news, x_user] = pool_gate_features(tape, seq, embedded);
    Tensor ga, gb;
    if (cfg_.ablate.no_analyzing_gate) {
      ga = Tensor::full({cfg_.n_experts}, 1.0 / static_cast<double>(cfg_.n_experts));
    }
    if (cfg_.ablate.no_writing_gate) {
      gb = Tensor::full({cfg_.n_experts}, 1.0 / static_cast<double>(cfg_.n_experts));
    }
    if (!ga.defined() || !gb.defined()) {
      auto [sa, sb] = compute_gates(tape, gate_a_, gate_b_, x_news, x_user);
      if (!ga.defined()) ga = sa;
      if (!gb.defined()) gb = sb;
    }
    return {ga, gb};
  }

  Tensor backbone(Tape& tape, const PromptSequence& seq, bool train, GateSample* gates) {
    seq.check_invariants(cfg_.context);
    const std::size_t t_len = seq.tokens.size();
    const std::size_t d = cfg_.d_model, hd = d / cfg_.n_heads;

    Tensor embedded = tape.embedding(tok_emb_, seq.tokens);
    auto [ga, gb] = gate_tensors(tape, seq, embedded);
    if (gates) {
      gates->g_a.assign(ga.data(), ga.data() + ga.size());
      gates->g_b.assign(gb.data(), gb.data() + gb.size());
    }

    std::vector<int> positions(t_len);
    for (std::size_t i = 0; i < t_len; ++i) positions[i] = static_cast<int>(i);
    Tensor x = tape.add(embedded, tape.embedding(pos_emb_, positions));
    std::size_t site = 0;
    x = tape.dropout(x, cfg_.dropout, dropout_rngs_[site++], train);

    Tensor mask = causal_mask(t_len);
    for (Block& b : blocks_) {
      Tensor h = tape.layer_norm(x, b.ln1_g, b.ln1_b);
      Tensor q = tape.add_row_bias(pac_forward(tape, b.wq, h, ga, gb), b.bq);
      Tensor k = tape.add_row_bias(tape.matmul(h, tape.transpose(b.wk)), b.bk);
      Tensor v = tape.add_row_bias(pac_forward(tape, b.wv, h, ga, gb), b.bv);

      std::vector<Tensor> heads;
      heads.reserve(cfg_.n_heads);
      for (std::size_t hi = 0; hi < cfg_.n_heads; ++hi) {
        Tensor qh = tape.slice_cols(q, hi * hd, hd);
        Tensor kh = tape.slice_cols(k, hi * hd, hd);
        Tensor vh = tape.slice_cols(v, hi * hd, hd);
        Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                                   1.0 / std::sqrt(static_cast<double>(hd)));
        Tensor attn = tape.row_softmax(tape.add(scores, mask));
        attn = tape.dropout(attn, cfg_.dropout, dropout_rngs_[site], train);
        heads.push_back(tape.matmul(attn, vh));
      }
      ++site;
      Tensor o = tape.add_row_bias(tape.matmul(tape.concat_cols(heads), tape.transpose(b.wo)), b.bo);
      o = tape.dropout(o, cfg_.dropout, dropout_rngs_[site++], train);
      x = tape.add(x, o);

      Tensor h2 = tape.layer_norm(x, b.ln2_g, b.ln2_b);
      Tensor m = tape.gelu(tape.add_row_bias(tape.matmul(h2, tape.transpose(b.fc1_w)), b.fc1_b));
      m = tape.add_row_bias(tape.matmul(m, tape.transpose(b.fc2_w)), b.fc2_b);
      m = tape.dropout(m, cfg_.dropout, dropout_rngs_[site++], train);
      x = tape.add(x, m);
    }
    return tape.layer_norm(x, lnf_g_, lnf_b_);
  }

  Tensor causal_mask(std::size_t t_len) const {
    Tensor mask({t_len, t_len});
    for (std::size_t i = 0; i < t_len; ++i)
      for (std::size_t j = i + 1; j < t_len; ++j) mask.at(i, j) = -1e30;
    return mask;
  }

  void save_base_block(const std::string& path) const {
    std::string out;
    out.append("TOYB", 4);
    binio::put_u32(out, 1);
    for (std::size_t v : {cfg_.vocab_size, cfg_.d_model, cfg_.n_layers, cfg_.n_heads, cfg_.context})
      binio::put_u32(out, static_cast<std::uint32_t>(v));
    std::ostringstream manifest;
    manifest << "toy-base checkpoint\n"
             << "vocab=" << cfg_.vocab_size << " d_model=" << cfg_.d_model
             << " layers=" << cfg_.n_layers << " heads=" << cfg_.n_heads
             << " context=" << cfg_.context << "\n";
    for (const Tensor& t : base_params()) {
      binio::put_tensor(out, t);
      manifest << "block " << shape_to_string(t.shape()) << "\n";
    }
    binio::write_file_atomic(path, out);
    binio::write_file_atomic(path + ".manifest.txt", manifest.str());
  }

  void load_base_block(const std::string& path) {
    const std::string blob = binio::read_file(path);
    if (blob.size() < 4 + 4 * 6 || blob.compare(0, 4, "TOYB") != 0)
      throw ParseError("not a toy-base checkpoint (bad magic)");
    std::size_t off = 4;
    if (binio::get_u32(blob, off) != 1) throw ParseError("unsupported toy-base version");
    const std::size_t dims[5] = {binio::get_u32(blob, off), binio::get_u32(blob, off),
                                 binio::get_u32(blob, off), binio::get_u32(blob, off),
                                 binio::get_u32(blob, off)};
    if (dims[0] != cfg_.vocab_size || dims[1] != cfg_.d_model || dims[2] != cfg_.n_layers ||
        dims[3] != cfg_.n_heads || dims[4] != cfg_.context)
      throw ValidationError("toy-base checkpoint geometry mismatch");
    for (Tensor t : base_params()) binio::get_tensor(blob, off, t);
    if (off != blob.size()) throw ParseError("toy-base checkpoint: trailing bytes");
  }

  ToyModelConfig cfg_;
  std::uint64_t seed_;
  Tensor tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_, head_w_, head_b_;
  GatingNet gate_a_, gate_b_;
  std::vector<std::mt19937_64> dropout_rngs_;
};

}  // namespace socialalign
