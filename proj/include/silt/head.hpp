#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/embed_store.hpp"
#include "silt/error.hpp"
#include "silt/ops.hpp"
#include "silt/rng.hpp"
#include "silt/tensor.hpp"

namespace silt {

struct HeadConfig {
  std::size_t H_in = 13;
  std::size_t D_in = 768;
  std::size_t D = 768;
  std::size_t heads = 8;
  std::size_t ff_dim = 768;
  double dropout = 0.0;

  void validate() const {
    if (H_in < 1 || D_in < 1 || D < 1 || ff_dim < 1) throw ConfigError("H_in, D_in, D and ff_dim must be >= 1");
    if (heads < 1 || D % heads != 0) {
      throw ConfigError("D=" + std::to_string(D) + " is not divisible by heads=" + std::to_string(heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"H_in", H_in}, {"D_in", D_in}, {"D", D}, {"heads", heads}, {"ff_dim", ff_dim}, {"dropout", dropout}};
  }

  static HeadConfig from_json(const nlohmann::json& j) {
    HeadConfig c;
    try {
      c.H_in = j.at("H_in").get<std::size_t>();
      c.D_in = j.at("D_in").get<std::size_t>();
      c.D = j.at("D").get<std::size_t>();
      c.heads = j.at("heads").get<std::size_t>();
      c.ff_dim = j.at("ff_dim").get<std::size_t>();
      c.dropout = j.value("dropout", 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed head config: ") + e.what());
    }
    c.validate();
    return c;
  }

  /// Architecture equality; dropout is a training setting and may differ.
  bool same_shape(const HeadConfig& o) const {
    return H_in == o.H_in && D_in == o.D_in && D == o.D && heads == o.heads && ff_dim == o.ff_dim;
  }

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

template <class T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }
};

namespace detail {

inline constexpr std::uint64_t kInitStream = 0x1417;

template <class T>
Linear<T> xavier_linear(std::size_t in, std::size_t out, std::uint64_t seed, std::uint64_t index) {
  RngState rng = derive_stream(seed, kInitStream, index);
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> w(in * out);
  for (auto& x : w) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return {BasicTensor<T>({in, out}, std::move(w), true), BasicTensor<T>::zeros({out}, true)};
}

template <class T, class U>
Linear<U> cast_linear(const Linear<T>& l, bool requires_grad) {
  return {l.weight.template cast<U>(requires_grad), l.bias.template cast<U>(requires_grad)};
}

}  // namespace detail

/// Trainable tensors of the SILT head. One instance serves both branches.
template <class T>
struct HeadParams {
  Linear<T> proj;        // H_in*D_in -> D
  Linear<T> local_comb;  // 2D -> D
  Linear<T> q, k, v, o;  // D -> D, heads are column blocks of q/k/v
  BasicTensor<T> ln_gain, ln_bias;
  Linear<T> ff;   // 4D -> ff_dim
  Linear<T> out;  // ff_dim -> 3

  static HeadParams init(const HeadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    HeadParams p;
    p.proj = detail::xavier_linear<T>(cfg.H_in * cfg.D_in, cfg.D, seed, 0);
    p.local_comb = detail::xavier_linear<T>(2 * cfg.D, cfg.D, seed, 1);
    p.q = detail::xavier_linear<T>(cfg.D, cfg.D, seed, 2);
    p.k = detail::xavier_linear<T>(cfg.D, cfg.D, seed, 3);
    p.v = detail::xavier_linear<T>(cfg.D, cfg.D, seed, 4);
    p.o = detail::xavier_linear<T>(cfg.D, cfg.D, seed, 5);
    p.ln_gain = BasicTensor<T>::full({cfg.D}, T{1}, true);
    p.ln_bias = BasicTensor<T>::zeros({cfg.D}, true);
    p.ff = detail::xavier_linear<T>(4 * cfg.D, cfg.ff_dim, seed, 6);
    p.out = detail::xavier_linear<T>(cfg.ff_dim, kNumClasses, seed, 7);
    return p;
  }

  /// Stable (name, tensor) listing; the order defines the checkpoint layout.
  std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
    return {{"proj.weight", &proj.weight},
            {"proj.bias", &proj.bias},
            {"local_comb.weight", &local_comb.weight},
            {"local_comb.bias", &local_comb.bias},
            {"mhsa.q.weight", &q.weight},
            {"mhsa.q.bias", &q.bias},
            {"mhsa.k.weight", &k.weight},
            {"mhsa.k.bias", &k.bias},
            {"mhsa.v.weight", &v.weight},
            {"mhsa.v.bias", &v.bias},
            {"mhsa.o.weight", &o.weight},
            {"mhsa.o.bias", &o.bias},
            {"mhsa.ln.gain", &ln_gain},
            {"mhsa.ln.bias", &ln_bias},
            {"ff.weight", &ff.weight},
            {"ff.bias", &ff.bias},
            {"out.weight", &out.weight},
            {"out.bias", &out.bias}};
  }

  std::vector<std::pair<std::string, const BasicTensor<T>*>> named() const {
    std::vector<std::pair<std::string, const BasicTensor<T>*>> out_;
    for (auto& [n, t] : const_cast<HeadParams*>(this)->named()) out_.emplace_back(n, t);
    return out_;
  }

  template <class U>
  HeadParams<U> cast(bool requires_grad) const {
    HeadParams<U> p;
    p.proj = detail::cast_linear<T, U>(proj, requires_grad);
    p.local_comb = detail::cast_linear<T, U>(local_comb, requires_grad);
    p.q = detail::cast_linear<T, U>(q, requires_grad);
    p.k = detail::cast_linear<T, U>(k, requires_grad);
    p.v = detail::cast_linear<T, U>(v, requires_grad);
    p.o = detail::cast_linear<T, U>(o, requires_grad);
    p.ln_gain = ln_gain.template cast<U>(requires_grad);
    p.ln_bias = ln_bias.template cast<U>(requires_grad);
    p.ff = detail::cast_linear<T, U>(ff, requires_grad);
    p.out = detail::cast_linear<T, U>(out, requires_grad);
    return p;
  }

  HeadParams clone(bool requires_grad) const { return cast<T>(requires_grad); }

  void zero_grad() {
    for (auto& [n, t] : named()) t->zero_grad();
  }
};

struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> groups;  // proj, local_comb, mhsa, ff, out
  std::size_t total = 0;
};

template <class T>
ParamBreakdown count_trainable(const HeadParams<T>& p) {
  ParamBreakdown b;
  for (const auto& [name, t] : p.named()) {
    if (!t->requires_grad()) continue;
    const std::string group = name.substr(0, name.find('.'));
    if (b.groups.empty() || b.groups.back().first != group) b.groups.emplace_back(group, 0);
    b.groups.back().second += t->numel();
    b.total += t->numel();
  }
  return b;
}

/// Closed-form count for a configuration, without allocating tensors.
inline ParamBreakdown count_trainable(const HeadConfig& c) {
  ParamBreakdown b;
  b.groups = {{"proj", c.H_in * c.D_in * c.D + c.D},
              {"local_comb", 2 * c.D * c.D + c.D},
              {"mhsa", 4 * (c.D * c.D + c.D) + 2 * c.D},
              {"ff", 4 * c.D * c.ff_dim + c.ff_dim},
              {"out", c.ff_dim * kNumClasses + kNumClasses}};
  for (const auto& [n, v] : b.groups) b.total += v;
  return b;
}

// ---------------------------------------------------------------------------
// Inputs

/// Batch tensors in model layout: per position the H hidden states are laid
/// side by side, giving [B, L, H*D_in]; masks are [B, L].
template <class T>
struct HeadInputs {
  BasicTensor<T> u, v;
  BasicTensor<T> u_mask, v_mask;
};

namespace detail {

template <class T>
BasicTensor<T> interleave_states(const std::vector<float>& raw, std::size_t B, std::size_t H, std::size_t L,
                                 std::size_t D) {
  std::vector<T> out(B * L * H * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t pos = 0; pos < L; ++pos)
        for (std::size_t d = 0; d < D; ++d)
          out[((b * L + pos) * H + h) * D + d] = static_cast<T>(raw[((b * H + h) * L + pos) * D + d]);
  return BasicTensor<T>({B, L, H * D}, std::move(out));
}

template <class T>
BasicTensor<T> mask_tensor(const std::vector<float>& m, std::size_t B, std::size_t L) {
  return BasicTensor<T>({B, L}, std::vector<T>(m.begin(), m.end()));
}

}  // namespace detail

template <class T>
HeadInputs<T> make_inputs(const Batch& batch, const HeadConfig& cfg) {
  if (batch.H != cfg.H_in || batch.D != cfg.D_in) {
    throw ConfigError("batch has H=" + std::to_string(batch.H) + ", D=" + std::to_string(batch.D) +
                      " but the head expects H_in=" + std::to_string(cfg.H_in) + ", D_in=" + std::to_string(cfg.D_in));
  }
  return {detail::interleave_states<T>(batch.u_raw, batch.B, batch.H, batch.L, batch.D),
          detail::interleave_states<T>(batch.v_raw, batch.B, batch.H, batch.L, batch.D),
          detail::mask_tensor<T>(batch.u_mask, batch.B, batch.L), detail::mask_tensor<T>(batch.v_mask, batch.B, batch.L)};
}

// ---------------------------------------------------------------------------
// SILT graph

template <class T>
struct ForwardTrace {
  BasicTensor<T> u, v;           // projected [B, L, D]
  BasicTensor<T> u_cls, v_cls;   // [B, D]
  BasicTensor<T> S_uv, S_vu;     // [B, L_u, L_v], [B, L_v, L_u]
  BasicTensor<T> u_star, v_star; // [B, L, D]
  BasicTensor<T> u_local, v_local;
  BasicTensor<T> u_seq, v_seq;   // after the attention block
  std::vector<BasicTensor<T>> attn_u, attn_v;  // per head [B, L, L]
  BasicTensor<T> u_max, v_max;
  BasicTensor<T> x, y;           // [B, 2D]
  BasicTensor<T> logits;         // [B, 3]
};

/// Shared projection of one side: [B, L, H*D_in] -> [B, L, D], padded rows 0.
template <class T>
BasicTensor<T> project(const BasicTensor<T>& states, const BasicTensor<T>& mask, const HeadParams<T>& p) {
  return mask_rows(p.proj(states), mask);
}

/// Cross alignment: a* = softmax(a b^T / sqrt(D)) b over unmasked b rows.
template <class T>
std::pair<BasicTensor<T>, BasicTensor<T>> align_one(const BasicTensor<T>& a, const BasicTensor<T>& b,
                                                    const BasicTensor<T>& a_mask, const BasicTensor<T>& b_mask) {
  if (a.dim(-1) != b.dim(-1)) {
    throw ShapeError("align: width mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(a.dim(-1))));
  auto S = scale(matmul(a, transpose_last(b)), inv);
  auto a_star = mask_rows(matmul(masked_softmax(S, b_mask), b), a_mask);
  return {std::move(a_star), std::move(S)};
}

template <class T>
struct Alignment {
  BasicTensor<T> u_star, v_star, S_uv, S_vu;
};

template <class T>
Alignment<T> align(const BasicTensor<T>& u, const BasicTensor<T>& v, const BasicTensor<T>& u_mask,
                   const BasicTensor<T>& v_mask) {
  Alignment<T> out;
  std::tie(out.u_star, out.S_uv) = align_one(u, v, u_mask, v_mask);
  std::tie(out.v_star, out.S_vu) = align_one(v, u, v_mask, u_mask);
  return out;
}

/// concat(|a - b|, a * b) along features.
template <class T>
BasicTensor<T> divergence_features(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("combine: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return concat_last(abs(sub(a, b)), mul(a, b));
}

/// Local features of (a, a*) through local_comb, padded rows re-zeroed.
template <class T>
BasicTensor<T> combine_local(const BasicTensor<T>& a, const BasicTensor<T>& a_star, const BasicTensor<T>& mask,
                             const HeadParams<T>& p) {
  return mask_rows(p.local_comb(divergence_features(a, a_star)), mask);
}

/// Multi-head self attention with residual and layer norm. `attn` receives
/// the per-head weight matrices when non-null.
template <class T>
BasicTensor<T> mhsa_block(const BasicTensor<T>& seq, const BasicTensor<T>& mask, const HeadParams<T>& p,
                          std::size_t heads, std::vector<BasicTensor<T>>* attn = nullptr) {
  const std::size_t D = seq.dim(-1);
  if (heads < 1 || D % heads != 0) throw ConfigError("mhsa: D not divisible by heads");
  const std::size_t dk = D / heads;
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const auto Q = p.q(seq), K = p.k(seq), V = p.v(seq);
  BasicTensor<T> merged;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto Qh = slice_last(Q, h * dk, dk);
    const auto Kh = slice_last(K, h * dk, dk);
    const auto Vh = slice_last(V, h * dk, dk);
    const auto A = masked_softmax(scale(matmul(Qh, transpose_last(Kh)), inv), mask);
    if (attn) attn->push_back(A);
    const auto Oh = matmul(A, Vh);
    merged = merged.defined() ? concat_last(merged, Oh) : Oh;
  }
  return mask_rows(layer_norm(add(seq, p.o(merged)), p.ln_gain, p.ln_bias), mask);
}

/// Full SILT forward. Dropout draws come from `rng` in a fixed order.
template <class T>
ForwardTrace<T> forward_trace(const HeadInputs<T>& in, const HeadParams<T>& p, const HeadConfig& cfg, RngState& rng,
                              bool training) {
  ForwardTrace<T> t;
  const double rate = cfg.dropout;
  auto drop = [&](const BasicTensor<T>& x) { return dropout(x, rate, rng, training); };
  t.u = drop(project(in.u, in.u_mask, p));
  t.v = drop(project(in.v, in.v_mask, p));
  t.u_cls = select_position(t.u, 0);
  t.v_cls = select_position(t.v, 0);

  auto al = align(t.u, t.v, in.u_mask, in.v_mask);
  t.u_star = al.u_star;
  t.v_star = al.v_star;
  t.S_uv = al.S_uv;
  t.S_vu = al.S_vu;

  t.u_local = combine_local(t.u, t.u_star, in.u_mask, p);
  t.v_local = combine_local(t.v, t.v_star, in.v_mask, p);

  t.u_seq = drop(mhsa_block(t.u_local, in.u_mask, p, cfg.heads, &t.attn_u));
  t.v_seq = drop(mhsa_block(t.v_local, in.v_mask, p, cfg.heads, &t.attn_v));

  t.u_max = masked_max_pool(t.u_seq, in.u_mask);
  t.v_max = masked_max_pool(t.v_seq, in.v_mask);
  t.x = concat_last(t.u_max, t.u_cls);
  t.y = concat_last(t.v_max, t.v_cls);

  t.logits = p.out(drop(relu(p.ff(divergence_features(t.x, t.y)))));
  return t;
}

template <class T>
BasicTensor<T> forward(const HeadInputs<T>& in, const HeadParams<T>& p, const HeadConfig& cfg, RngState& rng,
                       bool training) {
  return forward_trace(in, p, cfg, rng, training).logits;
}

/// Inference convenience: no graph, no dropout.
inline Tensor predict_logits(const Batch& batch, const HeadParams<float>& p, const HeadConfig& cfg) {
  NoGradGuard guard;
  RngState unused{0, 0};
  return forward(make_inputs<float>(batch, cfg), p, cfg, unused, false);
}

// ---------------------------------------------------------------------------
// Linear-softmax baseline on mean-pooled last hidden state

template <class T>
struct BaselineParams {
  Linear<T> out;  // 3*D_in -> 3

  static BaselineParams init(std::size_t D_in, std::uint64_t seed) {
    return {detail::xavier_linear<T>(3 * D_in, kNumClasses, seed, 100)};
  }

  std::vector<std::pair<std::string, BasicTensor<T>*>> named() { return {{"out.weight", &out.weight}, {"out.bias", &out.bias}}; }
  std::vector<std::pair<std::string, const BasicTensor<T>*>> named() const {
    return {{"out.weight", &out.weight}, {"out.bias", &out.bias}};
  }
  void zero_grad() {
    out.weight.zero_grad();
    out.bias.zero_grad();
  }
  std::size_t count_trainable() const { return out.weight.numel() + out.bias.numel(); }
};

/// Last hidden state of each side as [B, L, D_in] plus masks.
template <class T>
HeadInputs<T> make_baseline_inputs(const Batch& batch) {
  auto last = [&](const std::vector<float>& raw) {
    std::vector<T> out(batch.B * batch.L * batch.D);
    const std::size_t h = batch.H - 1;
    for (std::size_t b = 0; b < batch.B; ++b)
      for (std::size_t pos = 0; pos < batch.L; ++pos)
        for (std::size_t d = 0; d < batch.D; ++d)
          out[(b * batch.L + pos) * batch.D + d] =
              static_cast<T>(raw[((b * batch.H + h) * batch.L + pos) * batch.D + d]);
    return BasicTensor<T>({batch.B, batch.L, batch.D}, std::move(out));
  };
  return {last(batch.u_raw), last(batch.v_raw), detail::mask_tensor<T>(batch.u_mask, batch.B, batch.L),
          detail::mask_tensor<T>(batch.v_mask, batch.B, batch.L)};
}

/// concat(a, b, |a - b|) of the mean-pooled sentence vectors.
template <class T>
BasicTensor<T> baseline_features(const HeadInputs<T>& in) {
  const auto a = masked_mean_pool(in.u, in.u_mask);
  const auto b = masked_mean_pool(in.v, in.v_mask);
  return concat_last(concat_last(a, b), abs(sub(a, b)));
}

template <class T>
BasicTensor<T> baseline_forward(const HeadInputs<T>& in, const BaselineParams<T>& p) {
  return p.out(baseline_features(in));
}

}  // namespace silt
