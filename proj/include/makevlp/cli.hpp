#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "makevlp/corpus.hpp"
#include "makevlp/diagnostics.hpp"
#include "makevlp/evaluator.hpp"
#include "makevlp/trainer.hpp"

namespace makevlp::cli {

// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure,
// 5 checkpoint/manifest incompatibility. Gradcheck returns 1 when the check
// itself fails.

namespace detail {

// Ties CLI options to config-file keys. File values apply only to options
// that were not passed on the command line, so flags override the file.
class ConfigBinder {
 public:
  template <typename T>
  CLI::Option* bind(CLI::App& app, const std::string& flag, const std::string& key, T& var,
                    const std::string& desc) {
    CLI::Option* opt = app.add_option(flag, var, desc)->capture_default_str();
    entries_.push_back({key, opt, [&var](const nlohmann::json& j) { var = j.get<T>(); }});
    return opt;
  }

  void apply_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path.string());
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw IoFailure("config file is not a JSON object: " + path.string());
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      for (auto& e : entries_) {
        if (e.key != it.key()) continue;
        known = true;
        if (e.opt->count() == 0) {
          try {
            e.set(it.value());
          } catch (const nlohmann::json::exception&) {
            throw InvalidConfig("config key '" + it.key() + "' has the wrong type");
          }
        }
        break;
      }
      if (!known) throw InvalidConfig("unknown config key '" + it.key() + "'");
    }
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const nlohmann::json&)> set;
  };
  std::vector<Entry> entries_;
};

inline void bind_train_config(CLI::App& app, ConfigBinder& binder, TrainConfig& cfg) {
  binder.bind(app, "--epochs", "epochs", cfg.epochs, "training epochs");
  binder.bind(app, "--batch-size", "batch_size", cfg.batch_size, "samples per step");
  binder.bind(app, "--learning-rate", "learning_rate", cfg.learning_rate, "peak learning rate");
  binder.bind(app, "--warmup-steps", "warmup_steps", cfg.warmup_steps,
              "linear warmup length in steps");
  binder.bind(app, "--weight-decay", "weight_decay", cfg.weight_decay, "decoupled weight decay");
  binder.bind(app, "--lambda", "lambda", cfg.lambda, "weight of the alignment loss term");
  binder.bind(app, "--k-max", "k_max", cfg.k_max, "subtext slots per sample");
  binder.bind(app, "--seed", "seed", cfg.seed, "run seed");
  binder.bind(app, "--drop-last", "drop_last", cfg.drop_last, "drop the last partial batch");
  binder.bind(app, "--enable-mkcl-knowledge", "enable_mkcl_knowledge", cfg.enable_mkcl_knowledge,
              "use disease/concept aspect texts in the contrastive loss");
  binder.bind(app, "--enable-mkcl-subtexts", "enable_mkcl_subtexts", cfg.enable_mkcl_subtexts,
              "use subtext slots in the contrastive loss");
  binder.bind(app, "--enable-slra", "enable_slra", cfg.enable_slra,
              "add the subtext/patch alignment loss");
  binder.bind(app, "--enable-dkw", "enable_dkw", cfg.enable_dkw,
              "diagnosis-guided subtext weighting");
  binder.bind(app, "--literal-eq3", "literal_eq3", cfg.literal_eq3,
              "printed-form image-to-text denominator (over images)");
  binder.bind(app, "--literal-eq5", "literal_eq5", cfg.literal_eq5,
              "raw-sum similarity-map normalization instead of softmax");
  binder.bind(app, "--vision-image-size", "vision.image_size", cfg.vision.image_size,
              "input image resolution");
  binder.bind(app, "--vision-patch-size", "vision.patch_size", cfg.vision.patch_size,
              "vision patch size");
  binder.bind(app, "--vision-embed-dim", "vision.embed_dim", cfg.vision.embed_dim,
              "vision embedding width");
  binder.bind(app, "--vision-depth", "vision.depth", cfg.vision.depth, "vision blocks");
  binder.bind(app, "--vision-heads", "vision.heads", cfg.vision.heads, "vision attention heads");
  binder.bind(app, "--text-vocab-size", "text.vocab_size", cfg.text.vocab_size,
              "hash vocabulary size");
  binder.bind(app, "--text-context-length", "text.context_length", cfg.text.context_length,
              "token context length");
  binder.bind(app, "--text-embed-dim", "text.embed_dim", cfg.text.embed_dim,
              "text embedding width");
  binder.bind(app, "--text-depth", "text.depth", cfg.text.depth, "text blocks");
  binder.bind(app, "--text-heads", "text.heads", cfg.text.heads, "text attention heads");
}

inline std::filesystem::path resolve_out_dir(const CLI::Option* opt, const std::string& value) {
  if (opt->count() == 0)
    if (const char* env = std::getenv("MAKE_OUT_DIR")) return env;
  return value;
}

inline std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw InvalidConfig("empty seed list");
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (uint64_t v : parse_seed_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoFailure("cannot write " + path.string());
  f << content;
  if (!f) throw IoFailure("short write to " + path.string());
}

inline std::string hash_of_json(const nlohmann::ordered_json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const std::vector<std::string>& args);
inline int cmd_train(const std::vector<std::string>& args);
inline int cmd_eval(const std::vector<std::string>& args);
inline int cmd_gradcheck(const std::vector<std::string>& args);
inline int cmd_ablate(const std::vector<std::string>& args);

namespace detail {

inline int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int parse_app(CLI::App& app, std::vector<std::string> args) {
  std::reverse(args.begin(), args.end());
  app.parse(std::move(args));
  return 0;
}

}  // namespace detail

inline int cmd_synth(const std::vector<std::string>& args) {
  CLI::App app{"generate a synthetic corpus"};
  detail::ConfigBinder binder;
  std::string config_path, out = "out";
  SynthConfig cfg;
  double eval_fraction = 0.2;
  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  CLI::Option* out_opt = binder.bind(app, "--out", "out", out, "output directory");
  binder.bind(app, "--classes", "classes", cfg.n_classes, "number of classes");
  binder.bind(app, "--per-class", "per_class", cfg.samples_per_class, "samples per class");
  binder.bind(app, "--image-size", "image_size", cfg.image_size, "square image resolution");
  binder.bind(app, "--seed", "seed", cfg.seed, "generation seed");
  binder.bind(app, "--eval-fraction", "eval_fraction", eval_fraction,
              "per-class fraction held out for eval");

  try {
    detail::parse_app(app, args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return detail::run_guarded([&]() -> int {
    if (!config_path.empty()) binder.apply_file(config_path);
    const std::filesystem::path out_dir = detail::resolve_out_dir(out_opt, out);
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
      throw InvalidConfig("eval_fraction must be in [0, 1)");

    SynthResult synth = synth_generate(cfg);
    auto [train_m, eval_m] = split_manifest(synth.manifest, eval_fraction, cfg.seed);

    std::filesystem::create_directories(out_dir / "images");
    for (const auto& [ref, img] : synth.images.memory()) write_ppm(out_dir / ref, img);
    save_manifest(train_m, out_dir / "train.jsonl");
    save_manifest(eval_m, out_dir / "eval.jsonl");

    nlohmann::ordered_json prov;
    prov["seed"] = cfg.seed;
    prov["classes"] = cfg.n_classes;
    prov["per_class"] = cfg.samples_per_class;
    prov["image_size"] = cfg.image_size;
    prov["eval_fraction"] = eval_fraction;
    prov["train_records"] = train_m.records.size();
    prov["eval_records"] = eval_m.records.size();
    prov["config_hash"] = detail::hash_of_json(prov);
    detail::write_text_file(out_dir / "provenance.json", prov.dump(2) + "\n");

    std::cout << "wrote " << train_m.records.size() << " train / " << eval_m.records.size()
              << " eval records to " << out_dir.string() << "\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const std::vector<std::string>& args) {
  CLI::App app{"train the dual encoder"};
  detail::ConfigBinder binder;
  std::string config_path, manifest_path, resume_path, out = "out";
  TrainConfig cfg;
  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  CLI::Option* out_opt = binder.bind(app, "--out", "out", out, "output directory");
  binder.bind(app, "--manifest", "manifest", manifest_path, "training manifest (JSON lines)");
  app.add_option("--resume", resume_path, "resume from a checkpoint (its config wins)");
  detail::bind_train_config(app, binder, cfg);

  try {
    detail::parse_app(app, args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return detail::run_guarded([&]() -> int {
    if (!config_path.empty()) binder.apply_file(config_path);
    const std::filesystem::path out_dir = detail::resolve_out_dir(out_opt, out);
    if (manifest_path.empty()) throw InvalidConfig("missing required option: manifest");

    std::optional<TrainState> resume;
    if (!resume_path.empty()) {
      LoadedCheckpoint lc = load_checkpoint(resume_path);
      resume = std::move(lc.state);
      cfg = lc.config;
    }
    cfg.validate();

    const CorpusManifest manifest = load_manifest(manifest_path, "train");
    const ImageStore images(std::filesystem::path(manifest_path).parent_path(),
                            cfg.vision.image_size);

    std::filesystem::create_directories(out_dir);
    TrainResult result = train(manifest, images, cfg, out_dir, std::move(resume));

    std::string metrics;
    for (const auto& line : result.metric_lines) metrics += line + "\n";
    detail::write_text_file(out_dir / "metrics.jsonl", metrics);

    nlohmann::ordered_json run;
    run["config"] = makevlp::detail::train_config_json(cfg);
    run["config_hash"] = config_hash(cfg);
    run["steps"] = result.state.step;
    detail::write_text_file(out_dir / "run.json", run.dump(2) + "\n");

    std::printf("%-6s %-12s\n", "epoch", "mean_total");
    for (size_t e = 0; e < result.epoch_mean_total.size(); ++e)
      std::printf("%-6zu %-12.4f\n", e + 1, result.epoch_mean_total[e]);
    std::printf("final tau %.4f, checkpoints in %s\n", result.state.model->tau(),
                out_dir.string().c_str());
    return 0;
  });
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const std::vector<std::string>& args) {
  CLI::App app{"zero-shot evaluation of a checkpoint"};
  detail::ConfigBinder binder;
  std::string config_path, ckpt_path, manifest_path, tasks = "classify,concepts,retrieval";
  std::string ks_str = "1,5,10";
  std::string out = "out";
  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  CLI::Option* out_opt = binder.bind(app, "--out", "out", out, "output directory");
  binder.bind(app, "--checkpoint", "checkpoint", ckpt_path, "trained checkpoint");
  binder.bind(app, "--manifest", "manifest", manifest_path, "eval manifest (JSON lines)");
  binder.bind(app, "--tasks", "tasks", tasks, "comma list: classify,concepts,retrieval");
  binder.bind(app, "--ks", "ks", ks_str, "comma list of retrieval cutoffs");

  try {
    detail::parse_app(app, args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return detail::run_guarded([&]() -> int {
    if (!config_path.empty()) binder.apply_file(config_path);
    const std::filesystem::path out_dir = detail::resolve_out_dir(out_opt, out);
    if (ckpt_path.empty()) throw InvalidConfig("missing required option: checkpoint");
    if (manifest_path.empty()) throw InvalidConfig("missing required option: manifest");

    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    const Model& model = *lc.state.model;
    const std::string fingerprint = config_hash(lc.config);

    const CorpusManifest manifest = load_manifest(manifest_path, "eval");
    const ImageStore images(std::filesystem::path(manifest_path).parent_path(),
                            lc.config.vision.image_size);

    Tensor image_embs;
    try {
      image_embs = embed_images(model, manifest, images);
    } catch (const ShapeMismatch& e) {
      throw CompatError(std::string("checkpoint/manifest mismatch: ") + e.what());
    }

    const PromptSet prompts;
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    std::printf("%-10s %-18s %s\n", "task", "metric", "value");

    if (tasks.find("classify") != std::string::npos) {
      std::map<std::string, int> class_index;
      for (size_t c = 0; c < manifest.class_vocabulary.size(); ++c)
        class_index[manifest.class_vocabulary[c]] = static_cast<int>(c);
      std::vector<int> labels;
      for (const auto& r : manifest.records)
        labels.push_back(r.class_label ? class_index.at(*r.class_label) : -1);
      const Tensor class_embs =
          class_text_embeddings(model, prompts, manifest.class_vocabulary);
      const ClassifyResult cr = zero_shot_classify(image_embs, class_embs, labels);

      EvalReport rep;
      rep.task = "classify";
      rep.config_fingerprint = fingerprint;
      rep.seed = lc.config.seed;
      rep.aggregate["accuracy"] = cr.accuracy;
      rep.per_item["predictions"] = cr.predictions;
      rep.per_item["labels"] = cr.labels;
      nlohmann::ordered_json per_class;
      for (size_t c = 0; c < manifest.class_vocabulary.size(); ++c)
        per_class[manifest.class_vocabulary[c]] = cr.per_class_accuracy[c];
      rep.per_item["per_class_accuracy"] = per_class;
      reports.push_back(rep.to_json());
      std::printf("%-10s %-18s %.4f\n", "classify", "accuracy", cr.accuracy);
    }

    if (tasks.find("concepts") != std::string::npos) {
      const ConceptAurocResult ar = concept_annotation_eval(model, prompts, manifest, image_embs);
      EvalReport rep;
      rep.task = "concepts";
      rep.config_fingerprint = fingerprint;
      rep.seed = lc.config.seed;
      rep.aggregate["macro_auroc"] = ar.macro;
      nlohmann::ordered_json per_concept;
      for (size_t c = 0; c < ar.concepts.size(); ++c)
        per_concept[ar.concepts[c]] =
            ar.scored[c] ? nlohmann::ordered_json(ar.per_concept[c])
                         : nlohmann::ordered_json(nullptr);
      rep.per_item["per_concept_auroc"] = per_concept;
      reports.push_back(rep.to_json());
      std::printf("%-10s %-18s %.4f\n", "concepts", "macro_auroc", ar.macro);
    }

    if (tasks.find("retrieval") != std::string::npos) {
      const Tensor text_embs = embed_raw_texts(model, manifest);
      const RetrievalResult rr = retrieval_recall(image_embs, text_embs, detail::parse_int_list(ks_str));
      EvalReport rep;
      rep.task = "retrieval";
      rep.config_fingerprint = fingerprint;
      rep.seed = lc.config.seed;
      for (size_t k = 0; k < rr.ks.size(); ++k) {
        const std::string tag = "R@" + std::to_string(rr.ks[k]);
        rep.aggregate["image_to_text"][tag] = rr.image_to_text[k];
        rep.aggregate["text_to_image"][tag] = rr.text_to_image[k];
        std::printf("%-10s %-18s %.4f\n", "retrieval", ("i2t " + tag).c_str(),
                    rr.image_to_text[k]);
        std::printf("%-10s %-18s %.4f\n", "retrieval", ("t2i " + tag).c_str(),
                    rr.text_to_image[k]);
      }
      rep.per_item["k_clipped"] = rr.k_clipped;
      rep.per_item["requested_ks"] = rr.requested_ks;
      reports.push_back(rep.to_json());
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "eval_report.json", reports.dump(2) + "\n");
    return 0;
  });
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const std::vector<std::string>& args) {
  CLI::App app{"finite-difference check of the loss gradients"};
  detail::ConfigBinder binder;
  std::string config_path;
  double eps = 1e-3, tol = 1e-3;
  uint64_t seed = 0;
  int n = 4, k_max = 2, dim = 8, hw = 4, runs = 5;
  bool end_to_end = false;
  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  binder.bind(app, "--eps", "eps", eps, "central-difference perturbation");
  binder.bind(app, "--tol", "tol", tol, "max relative error accepted");
  binder.bind(app, "--seed", "seed", seed, "base seed");
  binder.bind(app, "--n", "n", n, "batch size");
  binder.bind(app, "--k-max", "k_max", k_max, "subtext slots");
  binder.bind(app, "--dim", "dim", dim, "embedding dim");
  binder.bind(app, "--hw", "hw", hw, "patch count");
  binder.bind(app, "--runs", "runs", runs, "number of random batches");
  binder.bind(app, "--end-to-end", "end_to_end", end_to_end,
              "also check gradients through both encoders");

  try {
    detail::parse_app(app, args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return detail::run_guarded([&]() -> int {
    if (!config_path.empty()) binder.apply_file(config_path);
    if (runs < 1) throw InvalidConfig("runs must be >= 1");
    bool all_pass = true;
    for (int r = 0; r < runs; ++r) {
      RandomBatchSpec spec{n, k_max, dim, hw, seed + static_cast<uint64_t>(r)};
      const GradCheckReport rep = loss_grad_check(spec, eps, tol);
      std::printf("loss gradcheck seed=%llu max_rel_err=%.3e eps=%.1e -> %s\n",
                  static_cast<unsigned long long>(spec.seed), rep.max_rel_err, rep.eps,
                  rep.pass ? "pass" : "FAIL");
      all_pass = all_pass && rep.pass;
    }
    if (end_to_end) {
      const GradCheckReport rep = encoder_grad_check(eps, tol, seed);
      std::printf("end-to-end gradcheck max_rel_err=%.3e eps=%.1e -> %s\n", rep.max_rel_err,
                  rep.eps, rep.pass ? "pass" : "FAIL");
      all_pass = all_pass && rep.pass;
    }
    return all_pass ? 0 : 1;
  });
}

// ---------------------------------------------------------------------------
// ablate

inline int cmd_ablate(const std::vector<std::string>& args) {
  CLI::App app{"train and evaluate the canonical component build-up"};
  detail::ConfigBinder binder;
  std::string config_path, train_path, eval_path, seeds_str = "7,8,9", out = "out";
  int threads = 0;
  // compact defaults so a full five-row sweep stays in CPU-minutes territory
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3f;
  cfg.warmup_steps = 20;
  cfg.vision = {32, 8, 32, 2, 4};
  cfg.text = {2048, 16, 32, 2, 4};

  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  CLI::Option* out_opt = binder.bind(app, "--out", "out", out, "output directory");
  binder.bind(app, "--train-manifest", "train_manifest", train_path, "training manifest");
  binder.bind(app, "--eval-manifest", "eval_manifest", eval_path, "held-out eval manifest");
  binder.bind(app, "--seeds", "seeds", seeds_str, "comma list of run seeds");
  binder.bind(app, "--threads", "threads", threads, "worker threads (0 = hardware)");
  detail::bind_train_config(app, binder, cfg);

  try {
    detail::parse_app(app, args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return detail::run_guarded([&]() -> int {
    if (!config_path.empty()) binder.apply_file(config_path);
    const std::filesystem::path out_dir = detail::resolve_out_dir(out_opt, out);
    if (train_path.empty()) throw InvalidConfig("missing required option: train_manifest");
    if (eval_path.empty()) throw InvalidConfig("missing required option: eval_manifest");
    cfg.validate();

    const CorpusManifest train_m = load_manifest(train_path, "train");
    const CorpusManifest eval_m = load_manifest(eval_path, "eval");
    const ImageStore train_imgs(std::filesystem::path(train_path).parent_path(),
                                cfg.vision.image_size);
    const ImageStore eval_imgs(std::filesystem::path(eval_path).parent_path(),
                               cfg.vision.image_size);

    const AblationResult result =
        ablation_run(train_m, train_imgs, eval_m, eval_imgs, cfg, canonical_ablation_rows(),
                     detail::parse_seed_list(seeds_str), threads);

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "ablation.csv", result.csv);
    nlohmann::ordered_json prov;
    prov["config"] = makevlp::detail::train_config_json(cfg);
    prov["config_hash"] = config_hash(cfg);
    prov["seeds"] = result.seeds;
    detail::write_text_file(out_dir / "ablation_provenance.json", prov.dump(2) + "\n");

    std::vector<size_t> order(result.rows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return result.cells[a].acc_mean > result.cells[b].acc_mean;
    });
    std::printf("%-14s %-10s %-10s %-10s\n", "row", "acc_mean", "acc_sd", "auroc_mean");
    for (size_t i : order)
      std::printf("%-14s %-10.4f %-10.4f %-10.4f\n", result.rows[i].name.c_str(),
                  result.cells[i].acc_mean, result.cells[i].acc_sd, result.cells[i].auroc_mean);
    std::printf("csv written to %s\n", (out_dir / "ablation.csv").string().c_str());
    return 0;
  });
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args) {
  if (args.empty()) {
    std::cerr << "usage: makevlp <synth|train|eval|gradcheck|ablate> [options]\n";
    return 2;
  }
  const std::string cmd = args.front();
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  if (cmd == "synth") return cmd_synth(rest);
  if (cmd == "train") return cmd_train(rest);
  if (cmd == "eval") return cmd_eval(rest);
  if (cmd == "gradcheck") return cmd_gradcheck(rest);
  if (cmd == "ablate") return cmd_ablate(rest);
  if (cmd == "--help" || cmd == "-h") {
    std::cout << "usage: makevlp <synth|train|eval|gradcheck|ablate> [options]\n"
                 "run 'makevlp <command> --help' for per-command flags\n";
    return 0;
  }
  std::cerr << "unknown command '" << cmd << "'\n";
  return 2;
}

}  // namespace makevlp::cli
