#pragma once

// Training loop pieces: response-masked cross-entropy, AdamW with gradient
// accumulation, seeded generation.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "socialalign/errors.hpp"
#include "socialalign/model.hpp"
#include "socialalign/optim.hpp"
#include "socialalign/tensor.hpp"
#include "socialalign/tokenizer.hpp"

namespace socialalign {

struct TrainState {
  AdamW opt;
  std::size_t micro_step = 0;  // train_step calls since construction
  std::uint64_t seed = 0;
  std::mt19937_64 sample_rng;  // batch sampling, owned by the caller's loop

  std::size_t updates() const { return opt.step_count(); }
};

inline TrainState make_train_state(const ToyTransformer& model) {
  const ToyModelConfig& cfg = model.config();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  opt_cfg.beta1 = cfg.adam_beta1;
  opt_cfg.beta2 = cfg.adam_beta2;
  opt_cfg.eps = cfg.adam_eps;
  opt_cfg.weight_decay = cfg.weight_decay;
  TrainState state{AdamW(model.trainable_params(), opt_cfg), 0, model.seed(),
                   std::mt19937_64(model.seed() ^ 0xa5a5a5a5a5a5a5a5ull)};
  return state;
}

// Next-token cross-entropy restricted to response positions: position t is
// scored iff token t+1 lies at or after the separator boundary, so prompt
// tokens never contribute to the loss. Only the scored rows reach the
// unembedding.
inline Tensor sequence_loss(Tape& tape, ToyTransformer& model, const PromptSequence& seq,
                            bool train) {
  if (!seq.has_response || seq.size() <= seq.response_begin())
    throw ContractError("sequence_loss: sequence has no response segment");
  const std::size_t rb = seq.response_begin();
  const std::size_t count = seq.size() - rb;  // rows rb-1 .. size()-2 predict the response
  Tensor logits = model.forward_rows(tape, seq, rb - 1, count, train);
  std::vector<int> targets(count);
  std::vector<bool> mask(count, true);
  for (std::size_t i = 0; i < count; ++i) targets[i] = seq.tokens[rb + i];
  return tape.cross_entropy(logits, targets, mask);
}

// One micro-step over a batch; applies an AdamW update every grad_accum-th
// call (losses are scaled by 1/grad_accum so the applied gradient is the mean
// over the accumulation window). Returns the unscaled mean batch loss.
inline double train_step(ToyTransformer& model, TrainState& state,
                         const std::vector<PromptSequence>& batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  Tape tape;
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const PromptSequence& seq : batch) losses.push_back(sequence_loss(tape, model, seq, true));
  Tensor mean_loss = tape.scale(tape.sum_scalars(losses), 1.0 / static_cast<double>(batch.size()));
  const double loss_value = mean_loss.item();

  tape.backward(
      tape.scale(mean_loss, 1.0 / static_cast<double>(model.config().grad_accum)));
  ++state.micro_step;
  if (state.micro_step % model.config().grad_accum == 0) {
    state.opt.step();
    state.opt.zero_grad();
  }
  return loss_value;
}

// Mean response loss over a set of sequences, no dropout, no updates.
inline double eval_loss(ToyTransformer& model, const std::vector<PromptSequence>& seqs) {
  if (seqs.empty()) throw ContractError("eval_loss: no sequences");
  double total = 0.0;
  for (const PromptSequence& seq : seqs) {
    Tape tape;
    total += sequence_loss(tape, model, seq, false).item();
  }
  return total / static_cast<double>(seqs.size());
}

// Greedy when temperature == 0 (ties break to the lowest token id), otherwise
// seeded categorical sampling over softmax(logits / temperature). Stops at
// EOS, max_tokens, or the context limit.
inline std::string generate(ToyTransformer& model, const PromptSequence& prompt,
                            std::size_t max_tokens, double temperature, std::uint64_t seed) {
  if (prompt.has_response || prompt.size() != prompt.sep_end)
    throw ContractError("generate: prompt must end at the separator");
  PromptSequence seq = prompt;
  std::mt19937_64 rng(seed);
  std::vector<int> generated;

  while (generated.size() < max_tokens && seq.size() < model.config().context) {
    Tape tape;
    tape.set_grad_enabled(false);
    Tensor logits = model.forward_next(tape, seq);
    const std::size_t vocab = logits.cols();

    int next = 0;
    if (temperature == 0.0) {
      double best = logits.at(0, 0);
      for (std::size_t v = 1; v < vocab; ++v)
        if (logits.at(0, v) > best) {
          best = logits.at(0, v);
          next = static_cast<int>(v);
        }
    } else {
      Tensor scaled({vocab});
      for (std::size_t v = 0; v < vocab; ++v) scaled.data()[v] = logits.at(0, v) / temperature;
      Tensor probs = tape.softmax(scaled);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double draw = u(rng), acc = 0.0;
      next = static_cast<int>(vocab) - 1;
      for (std::size_t v = 0; v < vocab; ++v) {
        acc += probs.data()[v];
        if (draw < acc) {
          next = static_cast<int>(v);
          break;
        }
      }
    }
    if (next == tok::kEos) break;
    generated.push_back(next);
    seq.tokens.push_back(next);
  }
  return tok::decode_bytes(generated);
}

}  // namespace socialalign
