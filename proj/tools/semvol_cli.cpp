#include "semvol/semvol.h"

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace {

using ConfigPtr = std::unique_ptr<semvol_config, decltype(&semvol_config_destroy)>;

ConfigPtr make_config() {
  semvol_config *raw = nullptr;
  if (semvol_config_create(&raw) != SEMVOL_OK) return {nullptr, &semvol_config_destroy};
  return {raw, &semvol_config_destroy};
}

std::string get(const semvol_config *cfg, const std::string &key) {
  size_t needed = 0;
  if (semvol_config_get(cfg, key.c_str(), nullptr, 0, &needed) != SEMVOL_OK) return {};
  std::string out(needed, '\0');
  semvol_config_get(cfg, key.c_str(), out.data(), out.size(), &needed);
  out.resize(needed - 1);
  return out;
}

const std::set<std::string> kBoolKeys = {"stratified", "include_labeled", "write_qq", "n_choices", "logprobs"};

const std::map<std::string, std::string> kHelp = {
    {"dataset", "dataset JSONL"},
    {"perturbations", "perturbation sets JSONL"},
    {"embeddings", "embeddings JSONL"},
    {"scores", "scores JSONL"},
    {"calibration", "calibration JSON"},
    {"predictions", "predictions JSONL"},
    {"report", "evaluation report JSON"},
    {"out_dir", "directory for diagnostic outputs"},
    {"task", "external (query paraphrases) or internal (sampled responses)"},
    {"n", "perturbations per record"},
    {"d", "PCA dimension; auto is 10 for external, 20 for internal"},
    {"epsilon", "ridge added to the Gram spectrum"},
    {"measure", "semantic_volume, lexical_similarity, semantic_entropy, log_prob_sum, last_token_entropy or p_true"},
    {"pca_scope", "per_record or global"},
    {"cluster_threshold", "cosine threshold for semantic clusters"},
    {"logprob_aggregation", "sum or mean"},
    {"temperature", "sampling temperature"},
    {"subset_size", "labeled calibration subset size"},
    {"stratified", "draw the labeled subset stratified by label"},
    {"metric", "f1 or accuracy"},
    {"include_labeled", "evaluate on every labeled record, including the calibration subset"},
    {"rouge_threshold", "label 1 when ROUGE-L is below this"},
    {"gauss_d", "PCA dimension for the normality check"},
    {"gauss_threshold", "Q-Q R^2 pass threshold"},
    {"r2_mode", "identity or fitted"},
    {"write_qq", "write per-record Q-Q CSV files"},
    {"theory_d_orig", "ambient dimension of the synthetic experiment"},
    {"theory_d", "projected dimension of the synthetic experiment"},
    {"theory_n", "samples per scale"},
    {"theory_scales", "number of log-spaced covariance scales"},
    {"theory_scale_min", "smallest covariance scale"},
    {"theory_scale_max", "largest covariance scale"},
    {"affine_alpha", "affine check multiplier"},
    {"affine_beta", "affine check offset"},
    {"api_base", "OpenAI-compatible base URL"},
    {"embed_model", "embedding model"},
    {"chat_model", "chat model"},
    {"max_in_flight", "maximum concurrent requests"},
    {"timeout_ms", "per-request timeout"},
    {"max_attempts", "attempts per request including retries"},
    {"base_backoff_ms", "base retry backoff"},
    {"n_choices", "request all samples in one call via the n parameter"},
    {"embed_batch_size", "texts per embeddings request"},
    {"logprobs", "request token logprobs"},
    {"top_logprobs", "alternatives per token when requesting logprobs"},
    {"cache_dir", "embedding cache directory"},
};

struct Bound {
  std::string key;
  CLI::Option *opt = nullptr;
  std::string value;
  bool flag = false;
};

struct Command {
  CLI::App *app = nullptr;
  std::vector<std::unique_ptr<Bound>> options;
  semvol_status (*run)(const semvol_config *) = nullptr;
};

std::string flag_name(std::string key) {
  for (char &c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

void bind_options(Command &cmd, const semvol_config *defaults, const std::vector<std::string> &keys) {
  for (const auto &key : keys) {
    auto b = std::make_unique<Bound>();
    b->key = key;
    const std::string def = get(defaults, key);
    const auto help = kHelp.count(key) ? kHelp.at(key) : key;
    if (kBoolKeys.count(key)) {
      b->flag = true;
      const std::string name = flag_name(key);
      b->opt = cmd.app->add_flag(name)->description(help + "; " + name + "=false disables")->default_str(def);
    } else {
      b->opt = cmd.app->add_option(flag_name(key), b->value, help)->default_str(def.empty() ? "\"\"" : def);
    }
    cmd.options.push_back(std::move(b));
  }
}

void print_error(const std::string &code, const std::string &message, const std::string &context) {
  auto escape = [](const std::string &s) {
    std::string out;
    for (const char c : s) {
      switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
      }
    }
    return out;
  };
  std::fprintf(stderr, "{\"error\":{\"code\":\"%s\",\"message\":\"%s\",\"context\":\"%s\"}}\n",
               escape(code).c_str(), escape(message).c_str(), escape(context).c_str());
}

int report(semvol_status status) {
  if (status != SEMVOL_OK) std::fprintf(stderr, "%s\n", semvol_last_error());
  return static_cast<int>(status);
}

} // namespace

int main(int argc, char **argv) {
  ConfigPtr defaults = make_config();
  if (!defaults) return report(SEMVOL_ERR_NUMERICAL);

  CLI::App app{"Semantic-volume uncertainty scoring for LLM queries and responses"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string seed;
  std::string fixtures;
  app.add_option("--config", config_path, "JSON file of option values")->default_str("\"\"");
  auto *seed_opt = app.add_option("--seed", seed, "seed for subset sampling and synthetic data")
                       ->default_str(get(defaults.get(), "seed"));
  auto *fixtures_opt =
      app.add_option("--fixtures", fixtures, "serve chat and embedding calls from this directory")
          ->default_str("\"\"");

  const std::string global_help = "Global options (accepted before or after the subcommand):\n"
                                  "  --config TEXT [\"\"]      JSON file of option values\n"
                                  "  --seed TEXT [" + get(defaults.get(), "seed") + "]         seed for subset sampling and synthetic data\n"
                                  "  --fixtures TEXT [\"\"]    serve chat and embedding calls from this directory";
  const std::vector<std::string> client_chat = {"api_base", "chat_model", "max_in_flight", "timeout_ms",
                                                "max_attempts", "base_backoff_ms"};
  std::vector<Command> commands;
  commands.reserve(8);
  auto add = [&](const char *name, const char *desc, semvol_status (*run)(const semvol_config *),
                 std::vector<std::string> keys) {
    Command cmd;
    cmd.app = app.add_subcommand(name, desc);
    cmd.app->footer(global_help);
    cmd.run = run;
    bind_options(cmd, defaults.get(), keys);
    commands.push_back(std::move(cmd));
  };

  {
    std::vector<std::string> keys = {"dataset", "perturbations", "task", "n", "temperature",
                                     "n_choices", "logprobs", "top_logprobs"};
    keys.insert(keys.end(), client_chat.begin(), client_chat.end());
    add("perturb", "generate query paraphrases or sampled responses", semvol_cmd_perturb, keys);
  }
  add("embed", "embed every perturbation text", semvol_cmd_embed,
      {"perturbations", "embeddings", "api_base", "embed_model", "embed_batch_size", "cache_dir",
       "max_in_flight", "timeout_ms", "max_attempts", "base_backoff_ms"});
  {
    std::vector<std::string> keys = {"dataset", "perturbations", "embeddings", "scores", "task", "measure",
                                     "n", "d", "epsilon", "pca_scope", "cluster_threshold",
                                     "logprob_aggregation"};
    keys.insert(keys.end(), client_chat.begin(), client_chat.end());
    add("score", "compute an uncertainty score per record", semvol_cmd_score, keys);
  }
  add("calibrate", "fit the decision threshold on a seeded labeled subset", semvol_cmd_calibrate,
      {"dataset", "scores", "calibration", "task", "measure", "metric", "subset_size", "stratified",
       "rouge_threshold"});
  add("classify", "label every scored record with the calibrated threshold", semvol_cmd_classify,
      {"scores", "calibration", "predictions", "measure"});
  add("evaluate", "accuracy, F1, AUROC and KS on held-out labeled records", semvol_cmd_evaluate,
      {"dataset", "scores", "calibration", "report", "task", "measure", "include_labeled", "stratified",
       "rouge_threshold"});
  add("diagnose", "normality and spectrum diagnostics of the embeddings", semvol_cmd_diagnose,
      {"embeddings", "scores", "dataset", "out_dir", "task", "measure", "epsilon", "gauss_d",
       "gauss_threshold", "r2_mode", "write_qq", "rouge_threshold"});
  add("verify-theory", "synthetic monotonicity experiment and affine-invariance check",
      semvol_cmd_verify_theory,
      {"out_dir", "scores", "dataset", "task", "measure", "epsilon", "subset_size", "stratified",
       "rouge_threshold", "theory_d_orig", "theory_d", "theory_n", "theory_scales", "theory_scale_min",
       "theory_scale_max", "affine_alpha", "affine_beta"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    print_error("ConfigError", e.what(), "command line");
    return SEMVOL_ERR_CONFIG;
  }

  ConfigPtr cfg = make_config();
  if (!cfg) return report(SEMVOL_ERR_NUMERICAL);
  if (!config_path.empty()) {
    if (const auto s = semvol_config_load_file(cfg.get(), config_path.c_str()); s != SEMVOL_OK) return report(s);
  }
  if (const auto s = semvol_config_apply_env(cfg.get()); s != SEMVOL_OK) return report(s);
  if (seed_opt->count()) {
    if (const auto s = semvol_config_set(cfg.get(), "seed", seed.c_str()); s != SEMVOL_OK) return report(s);
  }
  if (fixtures_opt->count()) {
    if (const auto s = semvol_config_set(cfg.get(), "fixtures", fixtures.c_str()); s != SEMVOL_OK) {
      return report(s);
    }
  }

  for (auto &cmd : commands) {
    if (!cmd.app->parsed()) continue;
    for (const auto &b : cmd.options) {
      if (!b->opt->count()) continue;
      const std::string value = b->flag ? (b->opt->as<bool>() ? "true" : "false") : b->value;
      if (const auto s = semvol_config_set(cfg.get(), b->key.c_str(), value.c_str()); s != SEMVOL_OK) {
        return report(s);
      }
    }
    return report(cmd.run(cfg.get()));
  }
  return report(SEMVOL_ERR_CONFIG);
}
