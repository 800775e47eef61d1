#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "silt/head.hpp"
#include "silt/synth.hpp"

namespace silt {

/// Smallest configuration that exercises every part of the graph.
inline HeadConfig tiny_config() {
  HeadConfig c;
  c.H_in = 2;
  c.D_in = 4;
  c.D = 8;
  c.heads = 2;
  c.ff_dim = 8;
  c.dropout = 0.0;
  return c;
}

/// Random batch with per-side lengths drawn from [min_len, max_len].
inline Batch random_batch(std::size_t B, std::size_t H, std::size_t D, std::size_t min_len, std::size_t max_len,
                          std::uint64_t seed) {
  SynthSpec spec;
  spec.train_pairs = B;
  spec.H = H;
  spec.D = D;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.seed = seed;
  const auto data = make_synthetic(spec);
  return assemble_batch(data.store, std::span<const PairExample>(data.examples), max_len);
}

struct GradcheckOptions {
  HeadConfig config = tiny_config();
  std::size_t batch = 2;
  std::size_t max_len = 4;
  std::uint64_t seed = 0;
  double dropout = 0.1;  // masks are replayed identically for every evaluation
  double h = 1e-5;
  double tolerance = 1e-3;
  /// Denominator floor of the relative error.
  double floor = 1e-4;
  /// Test hook: perturbs one analytic gradient entry (negative control).
  bool corrupt_gradient = false;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double seconds = 0.0;
  bool pass = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Float32 analytic gradients of the mean cross-entropy against central
/// differences of a float64 copy of the same graph, over every parameter.
inline GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  HeadConfig cfg = opt.config;
  cfg.dropout = opt.dropout;
  cfg.validate();
  const Batch batch = random_batch(opt.batch, cfg.H_in, cfg.D_in, 1, opt.max_len, opt.seed);
  std::vector<int> labels;
  RngState label_rng = derive_stream(opt.seed, 0x1abe1, 0);
  for (std::size_t i = 0; i < batch.B; ++i) labels.push_back(static_cast<int>(label_rng.below(3)));
  const RngState dropout_rng = derive_stream(opt.seed, 0xd209, 0);

  auto params = HeadParams<float>::init(cfg, opt.seed);
  {
    const auto in = make_inputs<float>(batch, cfg);
    RngState rng = dropout_rng;
    backward(cross_entropy(forward(in, params, cfg, rng, true), std::span<const int>(labels)));
  }

  auto shadow = params.cast<double>(false);
  const auto in64 = make_inputs<double>(batch, cfg);
  auto loss64 = [&]() {
    NoGradGuard guard;
    RngState rng = dropout_rng;
    return cross_entropy(forward(in64, shadow, cfg, rng, true), std::span<const int>(labels)).item();
  };

  GradcheckResult r;
  auto analytic_params = params.named();
  auto shadow_params = shadow.named();
  for (std::size_t k = 0; k < analytic_params.size(); ++k) {
    const auto& [name, tensor] = analytic_params[k];
    BasicTensor<double>& s = *shadow_params[k].second;
    const auto grad = tensor->grad();
    for (std::size_t i = 0; i < s.numel(); ++i) {
      const double orig = s[i];
      s.mutable_data()[i] = orig + opt.h;
      const double up = loss64();
      s.mutable_data()[i] = orig - opt.h;
      const double down = loss64();
      s.mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.h);
      double analytic = tensor->has_grad() ? grad[i] : 0.0;
      if (opt.corrupt_gradient && r.checked == 0) analytic = analytic * 1.5 + 0.01;
      const double rel = relative_error(analytic, numeric, opt.floor);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_param = name;
        r.worst_index = i;
      }
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
      ++r.checked;
    }
  }
  r.pass = r.max_rel_error <= opt.tolerance;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace silt
