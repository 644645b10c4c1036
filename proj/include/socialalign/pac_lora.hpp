#pragma once

// Low-rank adaptation of a frozen linear map, and its gated multi-expert
// extension (PAC-LoRA): N_a analyzing experts A_i and writing experts B_i
// combined through two softmax gates. Gate weights are ordinary scalar
// tensors, so gradients flow through them into the gating networks while the
// base weight stays frozen.

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "socialalign/errors.hpp"
#include "socialalign/tensor.hpp"

namespace socialalign {

constexpr double kDefaultLoraAlpha = 16.0;
constexpr double kDefaultAdapterInitStd = 0.02;

// h' = W0 x + scale * B (A x), W0 frozen, A [r,k] and B [d,r] trainable.
// A is initialized Gaussian and B to zero so the adapted layer starts out
// identical to the base layer.
struct LoraAdapter {
  Tensor w0;  // [d,k], frozen
  Tensor a;   // [r,k]
  Tensor b;   // [d,r]
  double scale = 1.0;

  static LoraAdapter init(Tensor w0, std::size_t rank, double alpha, std::mt19937_64& rng) {
    if (w0.rank() != 2) throw DimensionError("LoraAdapter: base weight must be a matrix");
    const std::size_t d = w0.rows(), k = w0.cols();
    if (rank == 0 || rank > std::min(d, k) / 2)
      throw ContractError("LoraAdapter: rank " + std::to_string(rank) + " exceeds min(d,k)/2 for " +
                          shape_to_string(w0.shape()));
    w0.set_requires_grad(false);
    LoraAdapter l;
    l.w0 = std::move(w0);
    l.a = Tensor::randn({rank, k}, kDefaultAdapterInitStd, rng, /*requires_grad=*/true);
    l.b = Tensor({d, rank}, /*requires_grad=*/true);
    l.scale = alpha / static_cast<double>(rank);
    return l;
  }

  std::size_t rank() const { return a.rows(); }
  std::size_t d_out() const { return w0.rows(); }
  std::size_t d_in() const { return w0.cols(); }
};

// x may be a vector [k] (returns [d]) or a row-major sequence [T,k]
// (returns [T,d]).
inline Tensor lora_forward(Tape& tape, const LoraAdapter& layer, const Tensor& x) {
  if (x.rank() == 1) {
    Tensor base = tape.matmul(layer.w0, x);
    Tensor delta = tape.scale(tape.matmul(layer.b, tape.matmul(layer.a, x)), layer.scale);
    return tape.add(base, delta);
  }
  Tensor base = tape.matmul(x, tape.transpose(layer.w0));
  Tensor delta = tape.scale(
      tape.matmul(tape.matmul(x, tape.transpose(layer.a)), tape.transpose(layer.b)), layer.scale);
  return tape.add(base, delta);
}

// Two-layer perceptron producing one logit per expert: w2 * relu(w1 x + b1) + b2.
struct GatingNet {
  Tensor w1;  // [h,f]
  Tensor b1;  // [h]
  Tensor w2;  // [n_experts,h]
  Tensor b2;  // [n_experts]

  // Wider-than-Kaiming init: gating features are pooled embeddings with small
  // magnitude, and a near-zero gate MLP starts every expert at the same
  // uniform mixture, which training then has no reason to leave. The 2x gain
  // gives inputs an expert preference from the start.
  static GatingNet init(std::size_t feature_dim, std::size_t hidden, std::size_t n_experts,
                        std::mt19937_64& rng) {
    GatingNet g;
    g.w1 = Tensor::randn({hidden, feature_dim}, 2.0 / std::sqrt(static_cast<double>(feature_dim)),
                         rng, true);
    g.b1 = Tensor({hidden}, true);
    g.w2 = Tensor::randn({n_experts, hidden}, 2.0 / std::sqrt(static_cast<double>(hidden)), rng, true);
    g.b2 = Tensor({n_experts}, true);
    return g;
  }

  std::size_t n_experts() const { return w2.rows(); }
  std::size_t feature_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }

  Tensor logits(Tape& tape, const Tensor& features) const {
    Tensor h = tape.relu(tape.add(tape.matmul(w1, features), b1));
    return tape.add(tape.matmul(w2, h), b2);
  }

  std::vector<Tensor> params() const { return {w1, b1, w2, b2}; }
};

// gA = softmax(G^A(x_news)), gB = softmax(G^B(x_user)).
inline std::pair<Tensor, Tensor> compute_gates(Tape& tape, const GatingNet& gate_a,
                                               const GatingNet& gate_b, const Tensor& x_news,
                                               const Tensor& x_user) {
  if (!x_news.all_finite() || !x_user.all_finite())
    throw NumericDomainError("compute_gates: non-finite gating features");
  return {tape.softmax(gate_a.logits(tape, x_news)), tape.softmax(gate_b.logits(tape, x_user))};
}

// Frozen base plus N_a expert pairs sharing one (r,d,k) geometry. The gating
// networks live outside the layer (one pair is shared across all adapted
// layers of a model).
struct PacLoraLayer {
  Tensor w0;                     // [d,k], frozen
  std::vector<Tensor> experts_a;  // each [r,k]
  std::vector<Tensor> experts_b;  // each [d,r]
  double scale = 1.0;

  static PacLoraLayer init(Tensor w0, std::size_t rank, std::size_t n_experts, double alpha,
                           std::mt19937_64& rng) {
    if (w0.rank() != 2) throw DimensionError("PacLoraLayer: base weight must be a matrix");
    if (n_experts == 0) throw ContractError("PacLoraLayer: need at least one expert");
    const std::size_t d = w0.rows(), k = w0.cols();
    if (rank == 0 || rank > std::min(d, k) / 2)
      throw ContractError("PacLoraLayer: rank " + std::to_string(rank) + " exceeds min(d,k)/2 for " +
                          shape_to_string(w0.shape()));
    w0.set_requires_grad(false);
    PacLoraLayer layer;
    layer.w0 = std::move(w0);
    layer.scale = alpha / static_cast<double>(rank);
    for (std::size_t i = 0; i < n_experts; ++i) {
      layer.experts_a.push_back(Tensor::randn({rank, k}, kDefaultAdapterInitStd, rng, true));
      layer.experts_b.push_back(Tensor({d, rank}, true));
    }
    return layer;
  }

  std::size_t n_experts() const { return experts_a.size(); }
  std::size_t rank() const { return experts_a.at(0).rows(); }
  std::size_t d_out() const { return w0.rows(); }
  std::size_t d_in() const { return w0.cols(); }

  std::vector<Tensor> expert_params() const {
    std::vector<Tensor> out;
    for (const Tensor& t : experts_a) out.push_back(t);
    for (const Tensor& t : experts_b) out.push_back(t);
    return out;
  }
};

// h' = W0 x + scale * sum_i (gB_i B_i)(gA_i A_i x). Accepts [k] or [T,k]
// inputs like lora_forward. Gradients reach experts and gates, never W0.
inline Tensor pac_forward(Tape& tape, const PacLoraLayer& layer, const Tensor& x, const Tensor& g_a,
                          const Tensor& g_b) {
  const std::size_t n = layer.n_experts();
  if (g_a.rank() != 1 || g_a.size() != n || g_b.rank() != 1 || g_b.size() != n)
    throw ContractError("pac_forward: gate lengths " + std::to_string(g_a.size()) + "/" +
                        std::to_string(g_b.size()) + " for " + std::to_string(n) + " experts");
  Tensor acc;
  if (x.rank() == 1) {
    acc = tape.matmul(layer.w0, x);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor u = tape.scale_by(tape.matmul(layer.experts_a[i], x), tape.index(g_a, i));
      Tensor v = tape.scale_by(tape.matmul(layer.experts_b[i], u), tape.index(g_b, i));
      acc = tape.add(acc, tape.scale(v, layer.scale));
    }
  } else {
    acc = tape.matmul(x, tape.transpose(layer.w0));
    for (std::size_t i = 0; i < n; ++i) {
      Tensor u = tape.scale_by(tape.matmul(x, tape.transpose(layer.experts_a[i])), tape.index(g_a, i));
      Tensor v = tape.scale_by(tape.matmul(u, tape.transpose(layer.experts_b[i])), tape.index(g_b, i));
      acc = tape.add(acc, tape.scale(v, layer.scale));
    }
  }
  return acc;
}

// One gate observation, logged per generated sequence.
struct GateRecord {
  std::string topic_id;
  std::string user_id;
  int layer_id = 0;
  std::vector<double> g_a;
  std::vector<double> g_b;
};

inline void validate_gate_record(const GateRecord& rec, double tol = 1e-9) {
  for (const auto* g : {&rec.g_a, &rec.g_b}) {
    double sum = 0.0;
    for (double v : *g) {
      if (v < 0.0) throw ValidationError("gate record: negative gate weight");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol)
      throw ValidationError("gate record: gate weights sum to " + std::to_string(sum));
  }
}

struct UtilizationStats {
  std::vector<double> mean_g_a;
  std::vector<double> mean_g_b;
  std::size_t count = 0;
};

// Per-topic arithmetic mean of the recorded gate vectors.
inline std::map<std::string, UtilizationStats> utilization_stats(
    const std::vector<GateRecord>& records) {
  if (records.empty()) throw EmptyCollectionError("utilization_stats: no gate records");
  std::map<std::string, UtilizationStats> stats;
  for (const GateRecord& rec : records) {
    UtilizationStats& s = stats[rec.topic_id];
    if (s.count == 0) {
      s.mean_g_a.assign(rec.g_a.size(), 0.0);
      s.mean_g_b.assign(rec.g_b.size(), 0.0);
    }
    if (s.mean_g_a.size() != rec.g_a.size() || s.mean_g_b.size() != rec.g_b.size())
      throw ContractError("utilization_stats: inconsistent gate arity within topic " + rec.topic_id);
    for (std::size_t i = 0; i < rec.g_a.size(); ++i) s.mean_g_a[i] += rec.g_a[i];
    for (std::size_t i = 0; i < rec.g_b.size(); ++i) s.mean_g_b[i] += rec.g_b[i];
    ++s.count;
  }
  for (auto& [topic, s] : stats) {
    (void)topic;
    for (double& v : s.mean_g_a) v /= static_cast<double>(s.count);
    for (double& v : s.mean_g_b) v /= static_cast<double>(s.count);
  }
  return stats;
}

}  // namespace socialalign
