#pragma once

// Flat binary checkpoint format for PAC-LoRA adapters:
//   magic "PACL" | u32 version | u32 d,k,r,n_a,f,h | float64 blocks
// Blocks, in order: per adapted layer A_1..A_Na then B_1..B_Na, followed by
// gate A (w1,b1,w2,b2) and gate B (w1,b1,w2,b2). All integers and floats are
// little-endian; matrices are row-major. The adapted-layer count is not in
// the header — it is recovered from the payload size, which the fixed
// per-layer and gate block sizes determine uniquely.
// A sidecar "<path>.manifest.txt" lists every block with its shape.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "socialalign/errors.hpp"
#include "socialalign/io.hpp"
#include "socialalign/pac_lora.hpp"
#include "socialalign/tensor.hpp"

namespace socialalign {

namespace binio {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& off) {
  if (off + 4 > in.size()) throw ParseError("checkpoint: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += 4;
  return v;
}

inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64(const std::string& in, std::size_t& off) {
  if (off + 8 > in.size()) throw ParseError("checkpoint: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += 8;
  return std::bit_cast<double>(bits);
}

inline void put_tensor(std::string& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
}

inline void get_tensor(const std::string& in, std::size_t& off, Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = get_f64(in, off);
}

}  // namespace binio

struct PacCheckpointHeader {
  std::uint32_t version = 1;
  std::uint32_t d = 0, k = 0, r = 0, n_a = 0, f = 0, h = 0;

  std::size_t floats_per_layer() const {
    return static_cast<std::size_t>(n_a) * (static_cast<std::size_t>(r) * k + static_cast<std::size_t>(d) * r);
  }
  std::size_t floats_per_gates() const {
    return 2 * (static_cast<std::size_t>(h) * f + h + static_cast<std::size_t>(n_a) * h + n_a);
  }
};

namespace detail_ckpt {

constexpr char kPacMagic[4] = {'P', 'A', 'C', 'L'};
constexpr std::size_t kPacHeaderBytes = 4 + 4 * 7;

inline void append_gate(std::string& out, const GatingNet& g) {
  binio::put_tensor(out, g.w1);
  binio::put_tensor(out, g.b1);
  binio::put_tensor(out, g.w2);
  binio::put_tensor(out, g.b2);
}

inline void read_gate(const std::string& in, std::size_t& off, GatingNet& g) {
  binio::get_tensor(in, off, g.w1);
  binio::get_tensor(in, off, g.b1);
  binio::get_tensor(in, off, g.w2);
  binio::get_tensor(in, off, g.b2);
}

}  // namespace detail_ckpt

inline void save_pac_checkpoint(const std::string& path,
                                const std::vector<const PacLoraLayer*>& layers,
                                const GatingNet& gate_a, const GatingNet& gate_b) {
  if (layers.empty()) throw ContractError("save_pac_checkpoint: no adapted layers");
  const PacLoraLayer& first = *layers.front();
  PacCheckpointHeader hdr;
  hdr.d = static_cast<std::uint32_t>(first.d_out());
  hdr.k = static_cast<std::uint32_t>(first.d_in());
  hdr.r = static_cast<std::uint32_t>(first.rank());
  hdr.n_a = static_cast<std::uint32_t>(first.n_experts());
  hdr.f = static_cast<std::uint32_t>(gate_a.feature_dim());
  hdr.h = static_cast<std::uint32_t>(gate_a.hidden_dim());

  std::string out;
  out.append(detail_ckpt::kPacMagic, 4);
  binio::put_u32(out, hdr.version);
  for (std::uint32_t v : {hdr.d, hdr.k, hdr.r, hdr.n_a, hdr.f, hdr.h}) binio::put_u32(out, v);

  std::ostringstream manifest;
  manifest << "pac-lora adapter checkpoint\n";
  manifest << "d=" << hdr.d << " k=" << hdr.k << " r=" << hdr.r << " n_a=" << hdr.n_a
           << " f=" << hdr.f << " h=" << hdr.h << " layers=" << layers.size() << "\n";
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const PacLoraLayer& l = *layers[li];
    if (l.d_out() != hdr.d || l.d_in() != hdr.k || l.rank() != hdr.r || l.n_experts() != hdr.n_a)
      throw ContractError("save_pac_checkpoint: layer " + std::to_string(li) +
                          " geometry differs from layer 0");
    for (std::size_t i = 0; i < l.n_experts(); ++i) {
      binio::put_tensor(out, l.experts_a[i]);
      manifest << "layer" << li << ".A" << i << " [" << hdr.r << "x" << hdr.k << "]\n";
    }
    for (std::size_t i = 0; i < l.n_experts(); ++i) {
      binio::put_tensor(out, l.experts_b[i]);
      manifest << "layer" << li << ".B" << i << " [" << hdr.d << "x" << hdr.r << "]\n";
    }
  }
  for (const auto* g : {&gate_a, &gate_b}) {
    const char* name = g == &gate_a ? "gateA" : "gateB";
    detail_ckpt::append_gate(out, *g);
    manifest << name << ".w1 [" << hdr.h << "x" << hdr.f << "]\n";
    manifest << name << ".b1 [" << hdr.h << "]\n";
    manifest << name << ".w2 [" << hdr.n_a << "x" << hdr.h << "]\n";
    manifest << name << ".b2 [" << hdr.n_a << "]\n";
  }
  binio::write_file_atomic(path, out);
  binio::write_file_atomic(path + ".manifest.txt", manifest.str());
}

inline PacCheckpointHeader read_pac_header(const std::string& blob) {
  if (blob.size() < detail_ckpt::kPacHeaderBytes || std::memcmp(blob.data(), detail_ckpt::kPacMagic, 4) != 0)
    throw ParseError("not a pac-lora checkpoint (bad magic)");
  std::size_t off = 4;
  PacCheckpointHeader hdr;
  hdr.version = binio::get_u32(blob, off);
  if (hdr.version != 1) throw ParseError("unsupported pac-lora checkpoint version");
  hdr.d = binio::get_u32(blob, off);
  hdr.k = binio::get_u32(blob, off);
  hdr.r = binio::get_u32(blob, off);
  hdr.n_a = binio::get_u32(blob, off);
  hdr.f = binio::get_u32(blob, off);
  hdr.h = binio::get_u32(blob, off);
  return hdr;
}

inline std::size_t pac_checkpoint_layer_count(const std::string& blob,
                                              const PacCheckpointHeader& hdr) {
  const std::size_t payload = blob.size() - detail_ckpt::kPacHeaderBytes;
  if (payload % 8 != 0) throw ParseError("pac-lora checkpoint: payload not a float64 multiple");
  const std::size_t total = payload / 8;
  const std::size_t gates = hdr.floats_per_gates();
  const std::size_t per_layer = hdr.floats_per_layer();
  if (total < gates || (total - gates) % per_layer != 0)
    throw ParseError("pac-lora checkpoint: payload size inconsistent with header geometry");
  return (total - gates) / per_layer;
}

// Loads into already-constructed layers/gates whose geometry must match the
// file header exactly. W0 is untouched (it is not part of the adapter file).
inline void load_pac_checkpoint(const std::string& path, std::vector<PacLoraLayer*>& layers,
                                GatingNet& gate_a, GatingNet& gate_b) {
  const std::string blob = binio::read_file(path);
  const PacCheckpointHeader hdr = read_pac_header(blob);
  const std::size_t n_layers = pac_checkpoint_layer_count(blob, hdr);
  if (n_layers != layers.size())
    throw ValidationError("pac-lora checkpoint holds " + std::to_string(n_layers) +
                          " layers, model has " + std::to_string(layers.size()));
  std::size_t off = detail_ckpt::kPacHeaderBytes;
  for (PacLoraLayer* l : layers) {
    if (l->d_out() != hdr.d || l->d_in() != hdr.k || l->rank() != hdr.r || l->n_experts() != hdr.n_a)
      throw ValidationError("pac-lora checkpoint geometry mismatch: file d=" + std::to_string(hdr.d) +
                            " k=" + std::to_string(hdr.k) + " r=" + std::to_string(hdr.r) +
                            " n_a=" + std::to_string(hdr.n_a));
    for (Tensor& t : l->experts_a) binio::get_tensor(blob, off, t);
    for (Tensor& t : l->experts_b) binio::get_tensor(blob, off, t);
  }
  if (gate_a.feature_dim() != hdr.f || gate_a.hidden_dim() != hdr.h || gate_a.n_experts() != hdr.n_a)
    throw ValidationError("pac-lora checkpoint gating geometry mismatch");
  detail_ckpt::read_gate(blob, off, gate_a);
  detail_ckpt::read_gate(blob, off, gate_b);
  if (off != blob.size()) throw ParseError("pac-lora checkpoint: trailing bytes");
}

}  // namespace socialalign
