// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sparseattn/checkpoint.hpp"
#include "sparseattn/data.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/metrics.hpp"
#include "sparseattn/sparsity_schedule.hpp"
#include "sparseattn/trainer.hpp"

namespace sparseattn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMetricsHeader = "step,epoch,train_loss,val_loss,val_accuracy,mean_sparsity,mean_entropy";

// Floats in CSV output carry 6 significant digits.
std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

std::string valid_config_names() {
  std::string out;
  for (const std::string& name : experiment_config_names()) {
    out += (out.empty() ? "" : ", ") + name;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) {
    throw DataError("cannot write " + path.string());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("missing " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("corrupt " + path.string() + ": " + e.what());
  }
}

SparsityConfig config_from_file(const fs::path& path, std::size_t default_layers) {
  json j;
  try {
    j = read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  try {
    SparsityConfig c;
    c.mode = parse_sparsity_mode(j.at("mode").get<std::string>());
    c.target = j.value("target", 0.0);
    c.ramp_width = j.value("ramp_width", kDefaultRampWidth);
    c.layers = j.value("layers", default_layers);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json model_json(const ModelConfig& c) {
  return {{"layers", c.layers},       {"heads", c.heads},     {"model_dim", c.model_dim},
          {"ff_dim", c.ff_dim},       {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"num_classes", c.num_classes}, {"seed", c.seed}};
}

json sparsity_json(const SparsityConfig& c) {
  const AttentionPlan plan = make_plan(c);
  json pools = json::array();
  for (SelectionPool p : plan.pools) {
    pools.push_back(std::string(to_string(p)));
  }
  return {{"mode", std::string(to_string(c.mode))},
          {"target", c.target},
          {"ramp_width", c.ramp_width},
          {"layers", c.layers},
          {"schedule", plan.schedule.per_layer},
          {"pools", pools}};
}

std::string flops_table(const FlopsReport& report) {
  std::ostringstream os;
  os << "FLOPs model, one attention sublayer (n=" << report.n << ", d=" << report.d
     << "): 2 FLOPs per multiply-add, softmax/layer-norm/bias excluded\n";
  os << std::left << std::setw(20) << "config" << std::right << std::setw(14) << "attn_sparsity" << std::setw(16)
     << "attn_reduction" << std::setw(17) << "total_reduction" << std::setw(26) << "with_ffn_ext(d_ff=" +
     std::to_string(report.ff_dim) + ")"
     << "\n";
  os << std::fixed;
  for (const FlopsRow& row : report.rows) {
    os << std::left << std::setw(20) << row.config << std::right << std::setw(14) << std::setprecision(2)
       << row.attention_sparsity << std::setw(15) << row.attention_reduction_pct << "%" << std::setw(16)
       << row.total_reduction_pct << "%" << std::setw(25) << row.total_with_ffn_reduction_pct << "%\n";
  }
  return os.str();
}

}  // namespace

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv(kSeedEnv);
  if (!raw || !*raw) {
    return std::nullopt;
  }
  char* end = nullptr;
  const unsigned long long value = std::strtoull(raw, &end, 10);
  if (*end != '\0') {
    return std::nullopt;
  }
  return value;
}

int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
  ModelConfig model;
  SparsityConfig sparsity;
  std::string config_name = flags.config;
  TrainOptions options;
  try {
    model.layers = flags.layers;
    model.heads = flags.heads;
    model.model_dim = flags.model_dim;
    model.ff_dim = flags.ff_dim;
    model.max_len = flags.max_len;
    model.vocab_size = flags.vocab_size;
    model.seed = flags.seed;

    const auto named = experiment_configs(model.layers);
    if (const auto it = named.find(flags.config); it != named.end()) {
      sparsity = it->second;
    } else if (fs::is_regular_file(flags.config)) {
      sparsity = config_from_file(flags.config, model.layers);
      model.layers = sparsity.layers;
      config_name = fs::path(flags.config).stem().string();
    } else {
      err << "error: unknown --config '" << flags.config << "'; valid names: " << valid_config_names()
          << " (or a JSON config file)\n";
      return kExitUsage;
    }
    model.validate();
    options.optimizer.learning_rate = flags.learning_rate;
    options.optimizer.weight_decay = flags.weight_decay;
    options.optimizer.accum_steps = flags.accum_steps;
    options.optimizer.validate();
    options.epochs = flags.epochs;
    options.batch_size = flags.batch_size;
    options.eval_every = flags.eval_every;
    options.shuffle_seed = flags.seed;
    if (options.batch_size < 1 || options.eval_every < 1) {
      throw ConfigError("--batch-size and --eval-every must be >= 1");
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  Corpus corpus;
  try {
    if (flags.data == "synthetic") {
      corpus = gen_synthetic({flags.seed, flags.synthetic_size, 1000, model.max_len});
    } else {
      corpus = load_corpus(flags.data, flags.seed);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  try {
    fs::create_directories(flags.out);
    std::ostringstream csv;
    csv << kMetricsHeader << "\n";
    const TrainResult result = train(model, sparsity, corpus, options, [&](const TrainRecord& r) {
      csv << r.step << "," << r.epoch << "," << fmt6(r.train_loss) << "," << fmt6(r.val_loss) << ","
          << fmt6(r.val_accuracy) << "," << fmt6(r.mean_sparsity) << "," << fmt6(r.mean_entropy) << "\n";
      out << "step " << r.step << " epoch " << r.epoch << " train_loss " << fmt6(r.train_loss) << " val_loss "
          << fmt6(r.val_loss) << " val_acc " << fmt6(r.val_accuracy) << " sparsity " << fmt6(r.mean_sparsity)
          << "\n";
    });

    const json manifest = {{"tool", "sparseattn"},
                           {"tool_version", kToolVersion},
                           {"config_name", config_name},
                           {"model", model_json(result.config)},
                           {"sparsity", sparsity_json(sparsity)},
                           {"seed", flags.seed},
                           {"corpus_source", corpus.source},
                           {"output_dir", flags.out.string()},
                           {"training",
                            {{"epochs", options.epochs},
                             {"batch_size", options.batch_size},
                             {"accum_steps", options.optimizer.accum_steps},
                             {"learning_rate", options.optimizer.learning_rate},
                             {"weight_decay", options.optimizer.weight_decay},
                             {"betas", {options.optimizer.beta1, options.optimizer.beta2}},
                             {"epsilon", options.optimizer.epsilon},
                             {"eval_every", options.eval_every}}},
                           {"notes",
                            sparsity.mode == SparsityMode::adaptive
                                ? "adaptive per-layer ratios are a linear ramp around the target; a stand-in shape"
                                : ""}};
    const EvalResult& fin = result.final_eval;
    const json summary = {{"config_name", config_name},
                          {"final_val_accuracy", fin.accuracy},
                          {"final_val_loss", fin.loss},
                          {"mean_achieved_sparsity", fin.stats.mean_sparsity},
                          {"layer_sparsity", fin.stats.layer_sparsity},
                          {"head_sparsity", fin.stats.head_sparsity},
                          {"schedule", make_plan(sparsity).schedule.per_layer},
                          {"mean_entropy", fin.stats.mean_entropy},
                          {"layer_entropy", fin.stats.layer_entropy},
                          {"head_entropy", fin.stats.head_entropy},
                          {"entropy_base", fin.stats.entropy_base},
                          {"steps", result.records.back().step},
                          {"epochs", options.epochs}};

    write_text(flags.out / "manifest.json", manifest.dump(2) + "\n");
    write_text(flags.out / "metrics.csv", csv.str());
    write_text(flags.out / "summary.json", summary.dump(2) + "\n");
    std::string vocab_text;
    for (const std::string& tok : result.vocab.tokens()) {
      vocab_text += tok + "\n";
    }
    write_text(flags.out / "vocab.txt", vocab_text);
    save_checkpoint(flags.out / "checkpoint.bin", result.params);
    out << "final val_accuracy " << fmt6(fin.accuracy) << " mean_sparsity " << fmt6(fin.stats.mean_sparsity)
        << "\n";
    return kExitOk;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const InvariantError& e) {
    err << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int cmd_flops(const FlopsFlags& flags, std::ostream& out, std::ostream& err) {
  if (flags.n < 1 || flags.d < 1 || flags.ff_dim < 0) {
    err << "error: --n and --d must be >= 1\n";
    return kExitUsage;
  }
  const FlopsReport report = flops_report(static_cast<std::size_t>(flags.n), static_cast<std::size_t>(flags.d),
                                          experiment_flops_configs(), static_cast<std::size_t>(flags.ff_dim));
  out << flops_table(report);

  json rows = json::array();
  for (const FlopsRow& r : report.rows) {
    rows.push_back({{"config", r.config},
                    {"attention_sparsity", r.attention_sparsity},
                    {"dense_attention_flops", r.dense_attention_flops},
                    {"sparse_attention_flops", r.sparse_attention_flops},
                    {"projection_flops", r.projection_flops},
                    {"attention_flops_reduction_pct", r.attention_reduction_pct},
                    {"total_layer_reduction_pct", r.total_reduction_pct},
                    {"ext_ffn_flops", r.ffn_flops},
                    {"ext_total_with_ffn_reduction_pct", r.total_with_ffn_reduction_pct}});
  }
  const json doc = {{"n", report.n},
                    {"d", report.d},
                    {"ff_dim", report.ff_dim},
                    {"convention", "2 FLOPs per multiply-add; attention matmuls 4n^2d, projections 8nd^2; "
                                   "softmax, layer norm and bias excluded; ext_ columns add a 4nd*d_ff FFN"},
                    {"rows", rows}};
  try {
    fs::create_directories(flags.out);
    write_text(flags.out / "flops.json", doc.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

int cmd_analyze(const AnalyzeFlags& flags, std::ostream& out, std::ostream& err) {
  if (flags.runs.empty()) {
    err << "error: --runs needs at least one run directory\n";
    return kExitUsage;
  }
  struct Run {
    std::string dir, config;
    double sparsity, accuracy, loss, entropy;
    std::vector<double> schedule, layer_sparsity, layer_entropy;
    std::vector<std::vector<double>> head_entropy;
  };
  std::vector<Run> runs;
  try {
    for (const fs::path& dir : flags.runs) {
      const json s = read_json(dir / "summary.json");
      try {
        runs.push_back({dir.string(), s.at("config_name").get<std::string>(),
                        s.at("mean_achieved_sparsity").get<double>(), s.at("final_val_accuracy").get<double>(),
                        s.at("final_val_loss").get<double>(), s.at("mean_entropy").get<double>(),
                        s.at("schedule").get<std::vector<double>>(), s.at("layer_sparsity").get<std::vector<double>>(),
                        s.at("layer_entropy").get<std::vector<double>>(),
                        s.at("head_entropy").get<std::vector<std::vector<double>>>()});
      } catch (const json::exception& e) {
        throw DataError("corrupt " + (dir / "summary.json").string() + ": " + e.what());
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  std::vector<double> xs, ys;
  for (const Run& r : runs) {
    xs.push_back(r.sparsity);
    ys.push_back(r.accuracy);
  }
  json correlation = nullptr;
  std::string status = "ok";
  if (runs.size() < 2) {
    status = "insufficient points";
  } else {
    try {
      const CorrelationResult c = pearson(xs, ys);
      correlation = {{"r", c.r}, {"points", c.points}, {"x", "mean_achieved_sparsity"}, {"y", "final_val_accuracy"}};
    } catch (const CorrelationError& e) {
      status = "zero variance";
      err << "warning: " << e.what() << "; correlation omitted\n";
    }
  }

  const Run* baseline = nullptr;
  for (const Run& r : runs) {
    if (r.config == "baseline") {
      baseline = &r;
    }
  }

  std::ostringstream scatter, layers, entropy;
  scatter << "run,config,mean_sparsity,val_accuracy,val_loss,mean_entropy\n";
  layers << "run,config,layer,target_sparsity,achieved_sparsity\n";
  entropy << "run,config,layer,head,mean_entropy_nats\n";
  json points = json::array(), layer_table = json::array(), entropy_table = json::array();
  for (const Run& r : runs) {
    scatter << r.dir << "," << r.config << "," << fmt6(r.sparsity) << "," << fmt6(r.accuracy) << "," << fmt6(r.loss)
            << "," << fmt6(r.entropy) << "\n";
    points.push_back({{"run", r.dir}, {"config", r.config}, {"mean_sparsity", r.sparsity},
                      {"val_accuracy", r.accuracy}, {"val_loss", r.loss}});
    for (std::size_t l = 0; l < r.layer_sparsity.size(); ++l) {
      const double target = l < r.schedule.size() ? r.schedule[l] : 0.0;
      layers << r.dir << "," << r.config << "," << l << "," << fmt6(target) << "," << fmt6(r.layer_sparsity[l])
             << "\n";
    }
    for (std::size_t l = 0; l < r.head_entropy.size(); ++l) {
      for (std::size_t h = 0; h < r.head_entropy[l].size(); ++h) {
        entropy << r.dir << "," << r.config << "," << l << "," << h << "," << fmt6(r.head_entropy[l][h]) << "\n";
      }
    }
    layer_table.push_back({{"run", r.dir}, {"config", r.config}, {"target", r.schedule},
                           {"achieved", r.layer_sparsity}});
    json e = {{"run", r.dir},           {"config", r.config},
              {"mean_entropy", r.entropy}, {"layer_entropy", r.layer_entropy},
              {"head_entropy", r.head_entropy}};
    e["delta_vs_baseline"] = baseline ? json(r.entropy - baseline->entropy) : json(nullptr);
    entropy_table.push_back(e);
  }
  const json doc = {{"points", points},
                    {"correlation", correlation},
                    {"correlation_status", status},
                    {"layer_sparsity", layer_table},
                    {"entropy", entropy_table},
                    {"entropy_base", "e"},
                    {"note", "desk-scale measurements; orderings between configs are reported, not asserted"}};
  try {
    fs::create_directories(flags.out);
    write_text(flags.out / "analysis.csv", scatter.str());
    write_text(flags.out / "layer_sparsity.csv", layers.str());
    write_text(flags.out / "entropy.csv", entropy.str());
    write_text(flags.out / "analysis.json", doc.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  out << "runs " << runs.size() << ", correlation "
      << (correlation.is_null() ? status : fmt6(correlation["r"].get<double>())) << "\n";
  return kExitOk;
}

int cmd_gen_data(const GenDataFlags& flags, std::ostream& out, std::ostream& err) {
  Corpus corpus;
  try {
    corpus = gen_synthetic({flags.seed, flags.size, flags.vocab_size, flags.max_len});
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    fs::create_directories(flags.out);
    write_tsv(flags.out / "train.tsv", corpus.train);
    write_tsv(flags.out / "validation.tsv", corpus.validation);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  out << "wrote " << corpus.train.size() << " train / " << corpus.validation.size() << " validation examples to "
      << flags.out.string() << "\n";
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured top-k attention sparsification lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  const std::uint64_t default_seed = seed_from_env().value_or(7);
  if (std::getenv(kSeedEnv) && !seed_from_env()) {
    err << "error: " << kSeedEnv << " must be a non-negative integer\n";
    return kExitUsage;
  }

  TrainFlags train_flags;
  train_flags.seed = default_seed;
  CLI::App* train_cmd = app.add_subcommand("train", "train one configuration and write run artifacts");
  train_cmd->add_option("--config", train_flags.config,
                        "baseline | uniform_sparse | light_sparse | aggressive_sparse | path to JSON config")
      ->required();
  train_cmd->add_option("--data", train_flags.data, "synthetic, a TSV file, or a directory with train/validation TSVs")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_flags.seed, "seed for data, init and shuffling")->capture_default_str();
  train_cmd->add_option("--epochs", train_flags.epochs)->capture_default_str();
  train_cmd->add_option("--out", train_flags.out, "output directory")->capture_default_str();
  train_cmd->add_option("--size", train_flags.synthetic_size, "synthetic corpus size")->capture_default_str();
  train_cmd->add_option("--layers", train_flags.layers)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--heads", train_flags.heads)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--dim", train_flags.model_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--ff-dim", train_flags.ff_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-len", train_flags.max_len)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--vocab-size", train_flags.vocab_size, "vocabulary cap including pad/unk")
      ->capture_default_str();
  train_cmd->add_option("--lr", train_flags.learning_rate)->capture_default_str();
  train_cmd->add_option("--weight-decay", train_flags.weight_decay)->capture_default_str();
  train_cmd->add_option("--batch-size", train_flags.batch_size)->capture_default_str();
  train_cmd->add_option("--accum-steps", train_flags.accum_steps)->capture_default_str();
  train_cmd->add_option("--eval-every", train_flags.eval_every, "optimizer steps between records")
      ->capture_default_str();

  FlopsFlags flops_flags;
  CLI::App* flops_cmd = app.add_subcommand("flops", "print the analytic FLOPs table for the four configs");
  flops_cmd->add_option("--n", flops_flags.n, "sequence length")->capture_default_str();
  flops_cmd->add_option("--d", flops_flags.d, "model dimension")->capture_default_str();
  flops_cmd->add_option("--ff-dim", flops_flags.ff_dim, "FFN width for the extension column (default 4d)");
  flops_cmd->add_option("--out", flops_flags.out, "directory for flops.json")->capture_default_str();

  AnalyzeFlags analyze_flags;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "aggregate run summaries into reports");
  analyze_cmd->add_option("--runs", analyze_flags.runs, "run directories")->required();
  analyze_cmd->add_option("--out", analyze_flags.out, "report directory")->capture_default_str();

  GenDataFlags gen_flags;
  gen_flags.seed = default_seed;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a synthetic corpus as train/validation TSV");
  gen_cmd->add_option("--seed", gen_flags.seed)->capture_default_str();
  gen_cmd->add_option("--size", gen_flags.size)->capture_default_str();
  gen_cmd->add_option("--vocab-size", gen_flags.vocab_size)->capture_default_str();
  gen_cmd->add_option("--max-len", gen_flags.max_len)->capture_default_str();
  gen_cmd->add_option("--out", gen_flags.out, "output directory")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) {
    reversed.pop_back();  // program name
  }
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (train_cmd->parsed()) {
    return cmd_train(train_flags, out, err);
  }
  if (flops_cmd->parsed()) {
    return cmd_flops(flops_flags, out, err);
  }
  if (analyze_cmd->parsed()) {
    return cmd_analyze(analyze_flags, out, err);
  }
  return cmd_gen_data(gen_flags, out, err);
}

}  // namespace sparseattn::cli
