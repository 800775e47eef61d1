#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "silt/checkpoint.hpp"
#include "silt/corpus.hpp"
#include "silt/embed_store.hpp"
#include "silt/eval_report.hpp"
#include "silt/gradcheck.hpp"
#include "silt/head.hpp"
#include "silt/synth.hpp"
#include "silt/trainer.hpp"

namespace silt::cli {

namespace fs = std::filesystem;

inline std::uint64_t seed_default() {
  if (const char* env = std::getenv("SILT_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SILT_SEED must be a non-negative integer, got '") + env + "'");
  }
  return 0;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string file_crc32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = in.gcount();
    if (n > 0) crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
  }
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc;
  return os.str();
}

inline std::string joined_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

/// Uses <dir>/best when `dir` is a training output directory.
inline fs::path model_dir(const fs::path& dir) {
  if (fs::exists(dir / "best" / "head.json")) return dir / "best";
  return dir;
}

inline std::vector<PairExample> select_split(const std::vector<PairExample>& all, const std::string& split,
                                             const std::string& corpus) {
  auto out = filter_split(all, parse_split(split));
  if (out.empty()) throw DataError(corpus + " has no '" + split + "' examples");
  return out;
}

// ---------------------------------------------------------------------------
// Options shared between commands

struct HeadFlags {
  std::optional<std::size_t> H_in, D_in;
  std::size_t D = 768, heads = 8, ff_dim = 768;
  double dropout = 0.1;

  void add(CLI::App* app) {
    app->add_option("--H-in", H_in, "Hidden-state count of the base transformer (default: from the store)");
    app->add_option("--D-in", D_in, "Base transformer width (default: from the store)");
    app->add_option("--D", D, "Inner width")->capture_default_str();
    app->add_option("--heads", heads, "Attention heads")->capture_default_str();
    app->add_option("--ff-dim", ff_dim, "Feed-forward width")->capture_default_str();
    app->add_option("--dropout", dropout, "Dropout rate")->capture_default_str();
  }

  HeadConfig resolve(std::uint32_t store_H, std::uint32_t store_D) const {
    HeadConfig c;
    c.H_in = H_in.value_or(store_H);
    c.D_in = D_in.value_or(store_D);
    c.D = D;
    c.heads = heads;
    c.ff_dim = ff_dim;
    c.dropout = dropout;
    c.validate();
    return c;
  }
};

struct OptimizerFlags {
  OptimizerConfig c;
  std::optional<double> clip;

  void add(CLI::App* app) {
    app->add_option("--alpha0", c.alpha0, "Initial / floor learning rate")->capture_default_str();
    app->add_option("--alpha-max", c.alpha_max, "Cycle peak before decay")->capture_default_str();
    app->add_option("--step-size", c.step_size, "Half-cycle length in steps")->capture_default_str();
    app->add_option("--gamma", c.gamma, "Per-step decay of the cycle ceiling")->capture_default_str();
    app->add_option("--beta1", c.beta1)->capture_default_str();
    app->add_option("--beta2", c.beta2)->capture_default_str();
    app->add_option("--epsilon", c.epsilon)->capture_default_str();
    app->add_option("--clip", clip, "Global gradient-norm clip (off by default)");
  }

  OptimizerConfig resolve() const {
    auto out = c;
    out.clip = clip;
    out.validate();
    return out;
  }
};

// ---------------------------------------------------------------------------
// train

struct TrainCommand {
  std::string store, corpus, out, model = "silt";
  HeadFlags head;
  OptimizerFlags opt;
  TrainRunConfig run;
  bool resume = false, preload = false;

  void add(CLI::App* app) {
    app->add_option("--store", store, "Embedding store directory")->required();
    app->add_option("--corpus", corpus, "corpus.jsonl with train and valid splits")->required();
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--model", model, "silt or baseline")->check(CLI::IsMember({"silt", "baseline"}))->capture_default_str();
    head.add(app);
    opt.add(app);
    run.seed = seed_default();
    app->add_option("--epochs", run.epochs)->capture_default_str();
    app->add_option("--batch-size", run.batch_size)->capture_default_str();
    app->add_option("--seed", run.seed, "Seed (default: $SILT_SEED or 0)")->capture_default_str();
    app->add_option("--lcap", run.lcap, "Token cap per sentence")->capture_default_str();
    app->add_option("--threads", run.threads, "Worker threads for validation")->capture_default_str();
    app->add_flag("--track-train-accuracy", run.track_train_accuracy, "Score the training split after every epoch");
    app->add_flag("--resume", resume, "Continue from the checkpoint in --out");
    app->add_flag("--preload", preload, "Load the whole store into memory first");
  }

  template <class Model, class Source>
  int train(const Source& source, const std::vector<PairExample>& tr, const std::vector<PairExample>& va,
            const HeadConfig& cfg, const OptimizerConfig& oc) {
    const fs::path dir(out);
    auto make = [&]() {
      if (resume) return Trainer<Model>::load(dir);
      return Trainer<Model>(Model::init(cfg, run.seed), oc, run);
    };
    Trainer<Model> trainer = make();
    trainer.set_epoch_callback([&](const Trainer<Model>& t) {
      const auto& r = t.progress().history.back();
      std::cout << "epoch " << r.epoch << " step " << r.step << " train_loss " << r.train_loss << " val_loss "
                << r.val_loss << " val_acc " << r.val_accuracy << " lr " << r.lr;
      if (r.train_accuracy) std::cout << " train_acc " << *r.train_accuracy;
      std::cout << std::endl;
      t.save(dir);
    });
    trainer.run(source, tr, va);
    trainer.save(dir);
    const auto& p = trainer.progress();
    if (p.status == TrainStatus::diverged) {
      std::cerr << "training diverged: " << p.message << " (last good parameters kept in " << dir.string() << ")\n";
      return 1;
    }
    std::cout << "best epoch " << p.best_epoch << " val_loss "
              << (p.best_val_loss ? std::to_string(*p.best_val_loss) : std::string("n/a")) << "; model in "
              << (dir / "best").string() << std::endl;
    return 0;
  }

  int operator()(int argc, const char* const* argv) {
    const fs::path dir(out);
    if (resume) {
      if (!fs::exists(dir / "run.json")) throw ConfigError("--resume: no checkpoint in " + out);
    } else if (fs::exists(dir / "run_manifest.json") || fs::exists(dir / "run.json")) {
      throw ConfigError(out + " already holds a run; use --resume or a fresh --out");
    }
    const EmbedStore file_store{fs::path(store)};
    const auto all = read_corpus_jsonl(corpus);
    const auto tr = select_split(all, "train", corpus);
    const auto va = select_split(all, "valid", corpus);
    const auto cfg = head.resolve(file_store.manifest().H, file_store.manifest().D);
    const auto oc = opt.resolve();
    run.validate();

    if (!resume) {
      fs::create_directories(dir);
      nlohmann::json manifest{{"command", joined_args(argc, argv)},
                              {"model", model},
                              {"head", cfg.to_json()},
                              {"optimizer", oc.to_json()},
                              {"run", run.to_json()},
                              {"seed", run.seed},
                              {"corpus", fs::absolute(corpus).string()},
                              {"store", fs::absolute(store).string()},
                              {"hashes",
                               {{"corpus_crc32", file_crc32(corpus)},
                                {"store_manifest_crc32", file_crc32(fs::path(store) / "manifest.json")},
                                {"store_records_crc32", file_crc32(fs::path(store) / "records.bin")}}},
                              {"created_utc", utc_now()}};
      detail::write_json(dir / "run_manifest.json", manifest);
    }

    auto go = [&](const auto& source) {
      return model == "baseline" ? train<BaselineModel>(source, tr, va, cfg, oc) : train<SiltModel>(source, tr, va, cfg, oc);
    };
    if (preload) return go(MemoryStore::preload(file_store));
    return go(file_store);
  }
};

// ---------------------------------------------------------------------------
// eval / predict / report

inline nlohmann::json grouping_names(const std::vector<Grouping>& gs) {
  nlohmann::json j = nlohmann::json::array();
  for (auto g : gs) j.push_back(grouping_name(g));
  return j;
}

struct EvalCommand {
  std::string checkpoint, store, corpus, out, split = "test", group_by = "label,language_pair";
  bool baseline = false;
  std::size_t batch_size = 32, lcap = kDefaultLcapSick, threads = 1;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Model or training output directory")->required();
    app->add_option("--store", store, "Embedding store directory")->required();
    app->add_option("--corpus", corpus, "corpus.jsonl")->required();
    app->add_option("--out", out, "Directory for preds.jsonl, report.json, report.md")->required();
    app->add_option("--split", split, "train, valid or test")->capture_default_str();
    app->add_option("--group-by", group_by, "Comma-separated: label, language_pair, relatedness, genre, length")
        ->capture_default_str();
    app->add_flag("--baseline", baseline, "Evaluate a baseline checkpoint");
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--lcap", lcap)->capture_default_str();
    app->add_option("--threads", threads)->capture_default_str();
  }

  int operator()() {
    const auto groupings = parse_groupings(group_by);
    const EmbedStore source{fs::path(store)};
    const auto examples = select_split(read_corpus_jsonl(corpus), split, corpus);
    const auto dir = model_dir(checkpoint);
    const auto kind = read_head_json(dir).kind;
    if (baseline && kind != HeadKind::baseline) throw ConfigError(dir.string() + " holds a SILT head; drop --baseline");
    if (!baseline && kind != HeadKind::silt) throw ConfigError(dir.string() + " holds a baseline head; pass --baseline");
    const auto span = std::span<const PairExample>(examples);
    const EvalResult r = baseline ? evaluate(BaselineModel::load(dir), source, span, batch_size, lcap, threads)
                                  : evaluate(SiltModel::load(dir), source, span, batch_size, lcap, threads);
    const auto rows = score_examples(span, r.preds, r.logits);
    const auto report = grouped_report(rows, groupings);
    fs::create_directories(out);
    write_preds_jsonl(fs::path(out) / "preds.jsonl", rows);
    write_report(out, report);
    std::cout << "examples " << report.overall.count << " accuracy " << report.overall.accuracy << " macro_f1 "
              << report.overall.macro_f1 << " loss " << r.loss << std::endl;
    return 0;
  }
};

struct PredictCommand {
  std::string checkpoint, store, premise, hypothesis;
  bool baseline = false;
  std::size_t lcap = kDefaultLcapSick;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Model or training output directory")->required();
    app->add_option("--store", store, "Embedding store directory")->required();
    app->add_option("--premise", premise, "Premise sentence id")->required();
    app->add_option("--hypothesis", hypothesis, "Hypothesis sentence id")->required();
    app->add_flag("--baseline", baseline, "Use a baseline checkpoint");
    app->add_option("--lcap", lcap)->capture_default_str();
  }

  int operator()() {
    const EmbedStore source{fs::path(store)};
    const auto batch = assemble_pair(source, premise, hypothesis, lcap);
    const auto dir = model_dir(checkpoint);
    RngState unused{0, 0};
    NoGradGuard guard;
    const Tensor logits =
        baseline ? BaselineModel::load(dir).logits(batch, unused, false) : SiltModel::load(dir).logits(batch, unused, false);
    std::array<float, 3> z{logits[0], logits[1], logits[2]};
    const double m = *std::max_element(z.begin(), z.end());
    std::array<double, 3> probs{};
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) total += probs[c] = std::exp(z[c] - m);
    for (auto& p : probs) p /= total;
    const int pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    nlohmann::json j{{"premise", premise},
                     {"hypothesis", hypothesis},
                     {"label", std::string(label_name(label_from_index(pred)))},
                     {"logits", z},
                     {"probabilities", probs}};
    std::cout << j.dump() << std::endl;
    return 0;
  }
};

struct ReportCommand {
  std::string preds, out, group_by = "label,language_pair";

  void add(CLI::App* app) {
    app->add_option("--preds", preds, "preds.jsonl written by eval")->required();
    app->add_option("--out", out, "Directory for report.json and report.md")->required();
    app->add_option("--group-by", group_by)->capture_default_str();
  }

  int operator()() {
    const auto groupings = parse_groupings(group_by);
    const auto report = grouped_report(read_preds_jsonl(preds), groupings);
    write_report(out, report);
    std::cout << report.to_markdown();
    return 0;
  }
};

// ---------------------------------------------------------------------------
// gradcheck / count-params

struct GradcheckCommand {
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  double tolerance = 1e-3;
  bool corrupt = false;

  void add(CLI::App* app) {
    seed = seed_default();
    app->add_option("--seed", seed, "First trial seed (default: $SILT_SEED or 0)")->capture_default_str();
    app->add_option("--trials", trials, "Independent trials (seeds seed, seed+1, ...)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
    app->add_flag("--corrupt-gradient", corrupt, "Perturb one analytic gradient (negative control)");
  }

  int operator()() {
    bool ok = true;
    for (std::size_t i = 0; i < trials; ++i) {
      GradcheckOptions o;
      o.seed = seed + i;
      o.tolerance = tolerance;
      o.corrupt_gradient = corrupt;
      const auto r = run_gradcheck(o);
      std::cout << "trial " << i << " seed " << o.seed << ": " << (r.pass ? "PASS" : "FAIL") << " max_rel_error "
                << r.max_rel_error << " (worst " << r.worst_param << "[" << r.worst_index << "]) checked " << r.checked
                << " in " << r.seconds << " s" << std::endl;
      ok = ok && r.pass;
    }
    return ok ? 0 : 1;
  }
};

inline void print_breakdown(std::ostream& os, const HeadConfig& cfg) {
  const auto b = count_trainable(cfg);
  os << "H_in=" << cfg.H_in << " D_in=" << cfg.D_in << " D=" << cfg.D << " heads=" << cfg.heads
     << " ff_dim=" << cfg.ff_dim << '\n';
  for (const auto& [name, n] : b.groups) os << "  " << std::left << std::setw(12) << name << n << '\n';
  os << "  " << std::left << std::setw(12) << "total" << b.total << '\n';
}

struct CountParamsCommand {
  HeadConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--H-in", cfg.H_in)->capture_default_str();
    app->add_option("--D-in", cfg.D_in)->capture_default_str();
    app->add_option("--D", cfg.D)->capture_default_str();
    app->add_option("--heads", cfg.heads)->capture_default_str();
    app->add_option("--ff-dim", cfg.ff_dim)->capture_default_str();
  }

  int operator()() {
    cfg.validate();
    print_breakdown(std::cout, cfg);
    return 0;
  }
};

// ---------------------------------------------------------------------------
// corpus-summary

struct CorpusSummaryCommand {
  std::string sick_en, sick_es, mnli, mnli_es, xnli_dev, xnli_test, write_corpus, json_out;
  bool no_check = false;

  void add(CLI::App* app) {
    app->add_option("--sick-en", sick_en, "SICK release file (English)");
    app->add_option("--sick-es", sick_es, "SICK-ES file (Spanish)");
    app->add_option("--mnli", mnli, "MNLI train file");
    app->add_option("--mnli-es", mnli_es, "Machine-translated MNLI train (Spanish)");
    app->add_option("--xnli-dev", xnli_dev, "XNLI dev file");
    app->add_option("--xnli-test", xnli_test, "XNLI test file");
    app->add_option("--write-corpus", write_corpus, "Also write the expanded examples as corpus.jsonl");
    app->add_option("--json", json_out, "Write the summary as JSON");
    app->add_flag("--no-check", no_check, "Print counts without comparing to the published table");
  }

  int operator()() {
    const bool sick = !sick_en.empty();
    const bool nli = !mnli.empty() || !mnli_es.empty() || !xnli_dev.empty() || !xnli_test.empty();
    if (sick == nli) throw ConfigError("give either --sick-en/--sick-es or the MNLI/XNLI files");
    std::vector<PairExample> logical;
    std::size_t skipped = 0;
    if (sick) {
      logical = load_sick(sick_en, sick_es);
    } else {
      auto rep = load_mnli_xnli({mnli, mnli_es, xnli_dev, xnli_test});
      logical = std::move(rep.examples);
      skipped = rep.skipped_unlabeled;
    }
    const auto expanded = expand_language_pairs(logical);
    check_split_integrity(expanded.examples);
    const auto summary = summarize(expanded.examples);
    std::cout << summary.to_table();
    if (skipped) std::cout << "skipped " << skipped << " unlabeled rows\n";
    if (expanded.missing_translations) {
      std::cout << "warning: " << expanded.missing_translations << " pairs lack a translation\n";
    }
    if (!json_out.empty()) detail::write_json(json_out, summary.to_json());
    if (!write_corpus.empty()) write_corpus_jsonl(write_corpus, expanded.examples);
    if (no_check) return 0;
    const auto mismatches = summary.mismatches(sick ? sick_reference_counts() : mnli_xnli_reference_counts());
    if (mismatches.empty()) {
      std::cout << "counts match the published table\n";
      return 0;
    }
    std::cout << mismatches.size() << " cell(s) differ from the published table:\n";
    for (const auto& m : mismatches) std::cout << "  " << m << '\n';
    return 1;
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthCommand {
  SynthSpec spec;
  std::string out;

  void add(CLI::App* app) {
    spec.seed = seed_default();
    app->add_option("--out", out, "Output directory (store/, corpus.jsonl, train.ini)")->required();
    app->add_option("--pairs", spec.train_pairs, "Training pairs")->capture_default_str();
    app->add_option("--valid-pairs", spec.valid_pairs, "Validation pairs (0: reuse the training pairs)")
        ->capture_default_str();
    app->add_option("--H", spec.H)->capture_default_str();
    app->add_option("--D", spec.D)->capture_default_str();
    app->add_option("--min-len", spec.min_len)->capture_default_str();
    app->add_option("--max-len", spec.max_len)->capture_default_str();
    app->add_option("--seed", spec.seed)->capture_default_str();
  }

  int operator()() {
    auto data = make_synthetic(spec);
    if (spec.valid_pairs == 0) {
      const std::size_t n = data.examples.size();
      for (std::size_t i = 0; i < n; ++i) {
        auto copy = data.examples[i];
        copy.split = Split::valid;
        data.examples.push_back(copy);
      }
    }
    const fs::path dir(out);
    fs::create_directories(dir);
    SynthData unique{std::move(data.store), {}};
    for (const auto& ex : data.examples)
      if (ex.split == Split::train || spec.valid_pairs > 0) unique.examples.push_back(ex);
    write_synthetic(unique, spec, dir / "store", dir / "corpus.jsonl");
    write_corpus_jsonl((dir / "corpus.jsonl").string(), data.examples);
    const auto tiny = tiny_config();
    std::ofstream ini(dir / "train.ini");
    ini << "[train]\n"
        << "D = " << tiny.D << "\nheads = " << tiny.heads << "\nff-dim = " << tiny.ff_dim << "\ndropout = 0\n"
        << "epochs = 125\nbatch-size = 8\nlcap = " << spec.max_len << "\nstep-size = 100\n"
        << "track-train-accuracy = true\n";
    std::cout << "wrote " << data.examples.size() << " examples to " << dir.string() << std::endl;
    return 0;
  }
};

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Siamese inter-lingual NLI head on frozen transformer embeddings"};
  app.set_config("--config", "", "INI/TOML file; keys go in a section named after the command");
  app.fallthrough();
  app.require_subcommand(1);

  TrainCommand train;
  EvalCommand eval;
  PredictCommand predict;
  ReportCommand report;
  GradcheckCommand gradcheck;
  CountParamsCommand count;
  CorpusSummaryCommand summary;
  SynthCommand synth;
  std::function<int()> action;

  int exit_code = 0;
  try {
    auto* c_train = app.add_subcommand("train", "Train a head and keep the best model by validation loss");
    auto* c_eval = app.add_subcommand("eval", "Score a split and write predictions and grouped reports");
    auto* c_predict = app.add_subcommand("predict", "Classify one pair given two sentence ids");
    auto* c_report = app.add_subcommand("report", "Re-aggregate a preds.jsonl file");
    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the full graph");
    auto* c_count = app.add_subcommand("count-params", "Print the trainable parameter breakdown");
    auto* c_summary = app.add_subcommand("corpus-summary", "Label counts per split and language pair");
    auto* c_synth = app.add_subcommand("synth", "Write a random-embedding dataset");
    train.add(c_train);
    eval.add(c_eval);
    predict.add(c_predict);
    report.add(c_report);
    gradcheck.add(c_grad);
    count.add(c_count);
    summary.add(c_summary);
    synth.add(c_synth);
    c_train->callback([&] { action = [&] { return train(argc, argv); }; });
    c_eval->callback([&] { action = [&] { return eval(); }; });
    c_predict->callback([&] { action = [&] { return predict(); }; });
    c_report->callback([&] { action = [&] { return report(); }; });
    c_grad->callback([&] { action = [&] { return gradcheck(); }; });
    c_count->callback([&] { action = [&] { return count(); }; });
    c_summary->callback([&] { action = [&] { return summary(); }; });
    c_synth->callback([&] { action = [&] { return synth(); }; });
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  }

  try {
    exit_code = action ? action() : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}

}  // namespace silt::cli
