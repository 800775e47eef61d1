#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/checkpoint.hpp"
#include "silt/corpus.hpp"
#include "silt/embed_store.hpp"
#include "silt/head.hpp"

namespace silt {

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.9999;
  double epsilon = 1e-7;
  double alpha0 = 3e-6;
  double alpha_max = 3e-3;
  std::uint64_t step_size = 2000;
  double gamma = 0.9999;
  /// Global gradient-norm clip; unset means no clipping.
  std::optional<double> clip;

  void validate() const {
    if (!(alpha0 > 0.0 && alpha0 < alpha_max)) throw ConfigError("need 0 < alpha0 < alpha_max");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (step_size < 1) throw ConfigError("step_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (clip && !(*clip > 0.0)) throw ConfigError("clip must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"beta1", beta1},         {"beta2", beta2},         {"epsilon", epsilon},
                     {"alpha0", alpha0},       {"alpha_max", alpha_max}, {"step_size", step_size},
                     {"gamma", gamma}};
    j["clip"] = clip ? nlohmann::json(*clip) : nlohmann::json(nullptr);
    return j;
  }

  static OptimizerConfig from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    try {
      c.beta1 = j.at("beta1").get<double>();
      c.beta2 = j.at("beta2").get<double>();
      c.epsilon = j.at("epsilon").get<double>();
      c.alpha0 = j.at("alpha0").get<double>();
      c.alpha_max = j.at("alpha_max").get<double>();
      c.step_size = j.at("step_size").get<std::uint64_t>();
      c.gamma = j.at("gamma").get<double>();
      if (j.contains("clip") && !j["clip"].is_null()) c.clip = j["clip"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed optimizer config: ") + e.what());
    }
    c.validate();
    return c;
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Triangular cycle between alpha0 and a ceiling alpha_max * gamma^t that
/// decays per step (never below alpha0).
inline double lr_at(std::uint64_t t, const OptimizerConfig& c) {
  const double ss = static_cast<double>(c.step_size);
  const double td = static_cast<double>(t);
  const double cycle = std::floor(1.0 + td / (2.0 * ss));
  const double x = std::abs(td / ss - 2.0 * cycle + 1.0);
  const double ceiling = std::max(c.alpha_max * std::pow(c.gamma, td), c.alpha0);
  return c.alpha0 + (ceiling - c.alpha0) * std::max(0.0, 1.0 - x);
}

/// First and second moments per parameter tensor (float32, parameter order).
struct AdamState {
  std::vector<std::vector<float>> m, s;
  std::uint64_t t = 0;

  template <class P>
  static AdamState zeros_like(const P& params) {
    AdamState st;
    for (const auto& [name, t] : params.named()) {
      st.m.emplace_back(t->numel(), 0.0f);
      st.s.emplace_back(t->numel(), 0.0f);
    }
    return st;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update from the gradients currently held by
/// `params`. Non-finite gradients abort before anything is modified.
template <class P>
void adam_step(P& params, AdamState& st, double lr, const OptimizerConfig& c) {
  auto named = params.named();
  if (st.m.size() != named.size() || st.s.size() != named.size()) {
    throw ContractError("adam_step: optimizer state does not match parameter list");
  }
  double sq = 0.0;
  for (const auto& [name, t] : named) {
    if (st.m.empty()) break;
    if (!t->has_grad()) continue;
    for (float g : t->grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + name + "'; step aborted");
      sq += static_cast<double>(g) * g;
    }
  }
  const double clip_scale = c.clip && std::sqrt(sq) > *c.clip ? *c.clip / std::sqrt(sq) : 1.0;
  st.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < named.size(); ++k) {
    Tensor& p = *named[k].second;
    if (st.m[k].size() != p.numel()) throw ContractError("adam_step: moment size mismatch for " + named[k].first);
    const bool has = p.has_grad();
    const auto grad = p.grad();
    auto data = p.mutable_data();
    auto& m = st.m[k];
    auto& s = st.s[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) * clip_scale : 0.0;
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double si = c.beta2 * s[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      s[i] = static_cast<float>(si);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double shat = static_cast<double>(s[i]) / bc2;
      data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(shat) + c.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Models

struct SiltModel {
  static constexpr HeadKind kind = HeadKind::silt;
  HeadConfig config;
  HeadParams<float> params;

  static SiltModel init(const HeadConfig& cfg, std::uint64_t seed) { return {cfg, HeadParams<float>::init(cfg, seed)}; }
  static SiltModel load(const std::filesystem::path& dir, const HeadConfig* expected = nullptr) {
    auto [cfg, p] = load_head(dir, expected);
    return {cfg, std::move(p)};
  }

  Tensor logits(const Batch& batch, RngState& rng, bool training) const {
    return forward(make_inputs<float>(batch, config), params, config, rng, training);
  }
  auto named() { return params.named(); }
  auto named() const { return params.named(); }
  void zero_grad() { params.zero_grad(); }
  SiltModel clone() const { return {config, params.clone(true)}; }
  void save(const std::filesystem::path& dir) const { save_head(dir, config, params); }
  std::size_t count_trainable() const { return silt::count_trainable(params).total; }
};

struct BaselineModel {
  static constexpr HeadKind kind = HeadKind::baseline;
  HeadConfig config;
  BaselineParams<float> params;

  static BaselineModel init(const HeadConfig& cfg, std::uint64_t seed) {
    return {cfg, BaselineParams<float>::init(cfg.D_in, seed)};
  }
  static BaselineModel load(const std::filesystem::path& dir, const HeadConfig* expected = nullptr) {
    auto [cfg, p] = load_baseline(dir);
    if (expected && expected->D_in != cfg.D_in) throw ConfigError("baseline checkpoint D_in does not match");
    return {cfg, std::move(p)};
  }

  Tensor logits(const Batch& batch, RngState&, bool) const {
    if (batch.D != config.D_in) {
      throw ConfigError("batch has D=" + std::to_string(batch.D) + " but the baseline expects D_in=" +
                        std::to_string(config.D_in));
    }
    return baseline_forward(make_baseline_inputs<float>(batch), params);
  }
  auto named() { return params.named(); }
  auto named() const { return params.named(); }
  void zero_grad() { params.zero_grad(); }
  BaselineModel clone() const {
    return {config, {{params.out.weight.clone(true), params.out.bias.clone(true)}}};
  }
  void save(const std::filesystem::path& dir) const { save_baseline(dir, config, params); }
  std::size_t count_trainable() const { return params.count_trainable(); }
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> preds;
  std::vector<std::array<float, 3>> logits;
};

/// Eval-mode pass over `examples` (never touches gradients or optimizer
/// state). Batches are sharded across up to `threads` workers; results are
/// merged in input order, so output does not depend on the thread count.
template <class Model, class Source>
EvalResult evaluate(const Model& model, const Source& source, std::span<const PairExample> examples,
                    std::size_t batch_size, std::size_t lcap, std::size_t threads = 1) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::size_t n = examples.size();
  EvalResult r;
  if (n == 0) return r;
  const std::size_t nb = (n + batch_size - 1) / batch_size;
  std::vector<double> batch_loss(nb);
  r.preds.resize(n);
  r.logits.resize(n);
  auto work = [&](std::size_t first, std::size_t last) {
    NoGradGuard guard;
    RngState unused{0, 0};
    for (std::size_t b = first; b < last; ++b) {
      const std::size_t lo = b * batch_size, hi = std::min(n, lo + batch_size);
      const auto batch = assemble_batch(source, examples.subspan(lo, hi - lo), lcap);
      const auto logits = model.logits(batch, unused, false);
      batch_loss[b] = static_cast<double>(cross_entropy(logits, std::span<const int>(batch.labels)).item()) *
                      static_cast<double>(hi - lo);
      for (std::size_t i = 0; i < hi - lo; ++i) {
        std::array<float, 3> row{logits[i * 3], logits[i * 3 + 1], logits[i * 3 + 2]};
        r.logits[lo + i] = row;
        r.preds[lo + i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, nb));
  if (workers == 1) {
    work(0, nb);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (nb + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(std::min(nb, w * chunk), std::min(nb, (w + 1) * chunk));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  double total = 0.0;
  for (double l : batch_loss) total += l;
  r.loss = total / static_cast<double>(n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += r.preds[i] == static_cast<int>(examples[i].label);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainRunConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t lcap = kDefaultLcapSick;
  std::size_t threads = 1;
  /// Also score the training split after every epoch (eval mode).
  bool track_train_accuracy = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lcap < 1) throw ConfigError("Lcap must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"batch_size", batch_size}, {"seed", seed}, {"lcap", lcap},
            {"threads", threads}, {"track_train_accuracy", track_train_accuracy}};
  }

  static TrainRunConfig from_json(const nlohmann::json& j) {
    TrainRunConfig c;
    try {
      c.epochs = j.at("epochs").get<std::size_t>();
      c.batch_size = j.at("batch_size").get<std::size_t>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.lcap = j.at("lcap").get<std::size_t>();
      c.threads = j.value("threads", std::size_t{1});
      c.track_train_accuracy = j.value("track_train_accuracy", false);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed run config: ") + e.what());
    }
    c.validate();
    return c;
  }

  friend bool operator==(const TrainRunConfig&, const TrainRunConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;  // optimizer steps taken so far
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;  // rate used by the epoch's last step
  std::optional<double> train_accuracy;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch},   {"step", step},
                     {"train_loss", train_loss}, {"val_loss", val_loss},
                     {"val_accuracy", val_accuracy}, {"lr", lr}};
    if (train_accuracy) j["train_accuracy"] = *train_accuracy;
    return j;
  }

  static EpochRecord from_json(const nlohmann::json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.step = j.at("step").get<std::uint64_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.lr = j.at("lr").get<double>();
    if (j.contains("train_accuracy")) r.train_accuracy = j["train_accuracy"].get<double>();
    return r;
  }

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

enum class TrainStatus { running, finished, diverged };

inline std::string status_name(TrainStatus s) {
  switch (s) {
    case TrainStatus::running: return "running";
    case TrainStatus::finished: return "finished";
    case TrainStatus::diverged: return "diverged";
  }
  return "?";
}

inline TrainStatus parse_status(const std::string& s) {
  if (s == "running") return TrainStatus::running;
  if (s == "finished") return TrainStatus::finished;
  if (s == "diverged") return TrainStatus::diverged;
  throw FormatError("unknown training status '" + s + "'");
}

struct TrainProgress {
  std::uint64_t step = 0;
  std::size_t epoch = 0;        // completed epochs
  std::size_t batch_index = 0;  // batches done inside the current epoch
  double epoch_loss_sum = 0.0;
  std::size_t epoch_examples = 0;
  double last_lr = 0.0;
  std::optional<double> best_val_loss;
  std::size_t best_epoch = 0;  // 0: initial parameters
  std::vector<EpochRecord> history;
  TrainStatus status = TrainStatus::running;
  std::string message;
};

inline constexpr std::uint64_t kShuffleStream = 0x5a0f;
inline constexpr std::uint64_t kDropoutStream = 0xd209;

/// Epoch order: Fisher-Yates over indices with a per-epoch stream.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngState rng = derive_stream(seed, kShuffleStream, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

/// Resumable trainer. All randomness derives from (seed, epoch) for data
/// order and (seed, step) for dropout, so a run restored from a checkpoint
/// continues exactly as the uninterrupted run would.
template <class Model>
class Trainer {
 public:
  Trainer(Model model, OptimizerConfig opt, TrainRunConfig run)
      : model_(std::move(model)), best_(model_.clone()), opt_(opt), run_(run) {
    opt_.validate();
    run_.validate();
    adam_ = AdamState::zeros_like(model_);
    if (run_.epochs == 0) progress_.status = TrainStatus::finished;
  }

  const Model& model() const { return model_; }
  const Model& best() const { return best_; }
  const AdamState& adam() const { return adam_; }
  const TrainProgress& progress() const { return progress_; }
  const OptimizerConfig& optimizer_config() const { return opt_; }
  const TrainRunConfig& run_config() const { return run_; }
  bool done() const { return progress_.status != TrainStatus::running; }

  /// Trains until all epochs are done, divergence, or `stop_at_step`
  /// optimizer steps have been taken in total.
  template <class Source>
  void run(const Source& source, const std::vector<PairExample>& train, const std::vector<PairExample>& valid,
           std::uint64_t stop_at_step = std::numeric_limits<std::uint64_t>::max()) {
    if (train.empty()) throw DataError("training split is empty");
    if (valid.empty()) throw DataError("validation split is empty");
    const std::size_t nb = (train.size() + run_.batch_size - 1) / run_.batch_size;
    while (!done()) {
      const auto order = epoch_order(train.size(), run_.seed, progress_.epoch);
      while (progress_.batch_index < nb) {
        if (progress_.step >= stop_at_step) return;
        std::vector<PairExample> items;
        const std::size_t lo = progress_.batch_index * run_.batch_size;
        for (std::size_t i = lo; i < std::min(train.size(), lo + run_.batch_size); ++i) items.push_back(train[order[i]]);
        if (!train_step(source, items)) return;
      }
      finish_epoch(source, train, valid);
      if (on_epoch_end_) on_epoch_end_(*this);
    }
  }

  /// Called after every completed epoch (validation and selection done).
  void set_epoch_callback(std::function<void(const Trainer&)> fn) { on_epoch_end_ = std::move(fn); }

  /// Checkpoint: params.bin, adam.bin, head.json, run.json; the selected
  /// model goes to best/.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    model_.save(dir);
    std::vector<std::pair<std::string, Tensor>> moments;
    const auto named = model_.named();
    for (std::size_t k = 0; k < named.size(); ++k) {
      moments.emplace_back("m/" + named[k].first, Tensor(named[k].second->shape(), adam_.m[k]));
      moments.emplace_back("s/" + named[k].first, Tensor(named[k].second->shape(), adam_.s[k]));
    }
    std::vector<std::pair<std::string, const Tensor*>> refs;
    for (const auto& [n, t] : moments) refs.emplace_back(n, &t);
    write_tensors(dir / "adam.bin", refs);
    best_.save(dir / "best");
    detail::write_json(dir / "run.json", run_json());
  }

  nlohmann::json run_json() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& r : progress_.history) hist.push_back(r.to_json());
    const auto& p = progress_;
    return {{"format_version", kCheckpointFormatVersion},
            {"model", head_kind_name(Model::kind)},
            {"head", model_.config.to_json()},
            {"optimizer", opt_.to_json()},
            {"run", run_.to_json()},
            {"state",
             {{"step", p.step},
              {"adam_t", adam_.t},
              {"epoch", p.epoch},
              {"batch_index", p.batch_index},
              {"epoch_loss_sum", p.epoch_loss_sum},
              {"epoch_examples", p.epoch_examples},
              {"last_lr", p.last_lr},
              {"best_val_loss", p.best_val_loss ? nlohmann::json(*p.best_val_loss) : nlohmann::json(nullptr)},
              {"best_epoch", p.best_epoch},
              {"status", status_name(p.status)},
              {"message", p.message}}},
            {"history", hist}};
  }

  /// Restores a trainer saved by save().
  static Trainer load(const std::filesystem::path& dir) {
    const auto j = detail::read_json(dir / "run.json");
    if (j.value("format_version", -1) != kCheckpointFormatVersion) {
      throw FormatError((dir / "run.json").string() + ": unsupported format_version");
    }
    if (j.value("model", "") != head_kind_name(Model::kind)) {
      throw ConfigError((dir / "run.json").string() + ": checkpoint holds a " + j.value("model", "?") + " model");
    }
    const auto head = HeadConfig::from_json(j.at("head"));
    Trainer t(Model::load(dir, &head), OptimizerConfig::from_json(j.at("optimizer")),
              TrainRunConfig::from_json(j.at("run")));
    t.best_ = Model::load(dir / "best", &head);
    const auto stored = read_tensors(dir / "adam.bin");
    const auto named = t.model_.named();
    if (stored.size() != 2 * named.size()) throw FormatError((dir / "adam.bin").string() + ": wrong tensor count");
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto& m = stored[2 * k];
      const auto& s = stored[2 * k + 1];
      if (m.first != "m/" + named[k].first || s.first != "s/" + named[k].first ||
          m.second.shape() != named[k].second->shape() || s.second.shape() != named[k].second->shape()) {
        throw FormatError((dir / "adam.bin").string() + ": entry for '" + named[k].first + "' does not match");
      }
      t.adam_.m[k].assign(m.second.data().begin(), m.second.data().end());
      t.adam_.s[k].assign(s.second.data().begin(), s.second.data().end());
    }
    try {
      const auto& st = j.at("state");
      auto& p = t.progress_;
      p.step = st.at("step").get<std::uint64_t>();
      t.adam_.t = st.at("adam_t").get<std::uint64_t>();
      p.epoch = st.at("epoch").get<std::size_t>();
      p.batch_index = st.at("batch_index").get<std::size_t>();
      p.epoch_loss_sum = st.at("epoch_loss_sum").get<double>();
      p.epoch_examples = st.at("epoch_examples").get<std::size_t>();
      p.last_lr = st.at("last_lr").get<double>();
      if (!st.at("best_val_loss").is_null()) p.best_val_loss = st["best_val_loss"].get<double>();
      p.best_epoch = st.at("best_epoch").get<std::size_t>();
      p.status = parse_status(st.at("status").get<std::string>());
      p.message = st.value("message", "");
      p.history.clear();
      for (const auto& r : j.at("history")) p.history.push_back(EpochRecord::from_json(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError((dir / "run.json").string() + ": " + e.what());
    }
    return t;
  }

 private:
  template <class Source>
  bool train_step(const Source& source, const std::vector<PairExample>& items) {
    const auto batch = assemble_batch(source, std::span<const PairExample>(items), run_.lcap);
    RngState rng = derive_stream(run_.seed, kDropoutStream, progress_.step);
    model_.zero_grad();
    const auto loss = cross_entropy(model_.logits(batch, rng, true), std::span<const int>(batch.labels));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      diverge("non-finite training loss at step " + std::to_string(progress_.step));
      return false;
    }
    backward(loss);
    const double lr = lr_at(progress_.step, opt_);
    try {
      adam_step(model_, adam_, lr, opt_);
    } catch (const NumericError& e) {
      diverge(std::string(e.what()) + " at step " + std::to_string(progress_.step));
      return false;
    }
    model_.zero_grad();
    progress_.epoch_loss_sum += value * static_cast<double>(items.size());
    progress_.epoch_examples += items.size();
    progress_.last_lr = lr;
    ++progress_.step;
    ++progress_.batch_index;
    return true;
  }

  template <class Source>
  void finish_epoch(const Source& source, const std::vector<PairExample>& train, const std::vector<PairExample>& valid) {
    const auto val = evaluate(model_, source, std::span<const PairExample>(valid), run_.batch_size, run_.lcap, run_.threads);
    EpochRecord rec;
    rec.epoch = progress_.epoch + 1;
    rec.step = progress_.step;
    rec.train_loss = progress_.epoch_loss_sum / static_cast<double>(progress_.epoch_examples);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.lr = progress_.last_lr;
    if (run_.track_train_accuracy) {
      rec.train_accuracy =
          evaluate(model_, source, std::span<const PairExample>(train), run_.batch_size, run_.lcap, run_.threads).accuracy;
    }
    progress_.history.push_back(rec);
    if (!progress_.best_val_loss || val.loss < *progress_.best_val_loss) {
      progress_.best_val_loss = val.loss;
      progress_.best_epoch = rec.epoch;
      best_ = model_.clone();
    }
    ++progress_.epoch;
    progress_.batch_index = 0;
    progress_.epoch_loss_sum = 0.0;
    progress_.epoch_examples = 0;
    if (progress_.epoch >= run_.epochs) progress_.status = TrainStatus::finished;
  }

  void diverge(std::string why) {
    model_.zero_grad();
    progress_.status = TrainStatus::diverged;
    progress_.message = std::move(why);
  }

  Model model_;
  Model best_;
  AdamState adam_;
  OptimizerConfig opt_;
  TrainRunConfig run_;
  TrainProgress progress_;
  std::function<void(const Trainer&)> on_epoch_end_;
};

}  // namespace silt
