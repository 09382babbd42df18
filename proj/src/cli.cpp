#include "w2st/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "w2st/checkpoint.hpp"
#include "w2st/curriculum.hpp"
#include "w2st/data.hpp"
#include "w2st/generate.hpp"
#include "w2st/metrics.hpp"
#include "w2st/rng.hpp"

namespace fs = std::filesystem;

namespace w2st {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError("cannot create output directory " + dir.string());
  }
  const fs::path probe = dir / ".w2st_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw DataError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void ensure_writable_file(const fs::path& file) {
  const fs::path parent = file.has_parent_path() ? file.parent_path() : fs::path(".");
  ensure_writable_dir(parent);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
  std::uint64_t seed = 7;
  std::size_t n = 200;
  std::string out;
  GrammarKnobs knobs;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--seed", a.seed, "Global seed");
  app.add_option("--n", a.n, "Number of examples (weak + strong)");
  app.add_option("--out", a.out, "Output directory")->required();
  app.add_option("--protagonists", a.knobs.n_protagonists, "Grammar: protagonist count (1-12)");
  app.add_option("--obstacles", a.knobs.n_obstacles, "Grammar: obstacle count (1-10)");
  app.add_option("--resolutions", a.knobs.n_resolutions, "Grammar: resolution count (1-8)");
  app.add_option("--valid-fraction", a.knobs.valid_fraction, "Share of stories for validation");
  app.add_option("--test-fraction", a.knobs.test_fraction, "Share of stories for test");
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  const fs::path dir(a.out);
  ensure_writable_dir(dir);
  const CorpusSplit corpus = synth_corpus(derive_seed(a.seed, "data"), a.n, a.knobs);
  write_jsonl(dir / "train.jsonl", corpus.train);
  write_jsonl(dir / "valid.jsonl", corpus.validation);
  write_jsonl(dir / "test.jsonl", corpus.test);
  nlohmann::ordered_json manifest;
  manifest["seed"] = a.seed;
  manifest["n_examples"] = a.n;
  manifest["n_protagonists"] = a.knobs.n_protagonists;
  manifest["n_obstacles"] = a.knobs.n_obstacles;
  manifest["n_resolutions"] = a.knobs.n_resolutions;
  manifest["valid_fraction"] = a.knobs.valid_fraction;
  manifest["test_fraction"] = a.knobs.test_fraction;
  manifest["counts"] = {{"train", corpus.train.size()},
                        {"valid", corpus.validation.size()},
                        {"test", corpus.test.size()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << corpus.train.size() << "/" << corpus.validation.size() << "/"
      << corpus.test.size() << " train/valid/test examples to " << dir.string() << "\n";
  return exit_code::kOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string valid;
  std::string out;
  std::string mode = "sequential";
  std::string pretrain_data = "pool";
  std::string weak_data = "weak";
  std::string strong_data = "strong";
  std::string config_file;
  bool verbose = false;
  TrainConfig config;

  TrainArgs() {
    config.plan.at(Phase::kPretrain).steps = 200;
    config.plan.at(Phase::kWeak).steps = 200;
    config.plan.at(Phase::kStrong).steps = 200;
  }
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--config", a.config_file, "key=value training config file (flags override it)");
  app.add_option("--data", a.data, "Data directory (train.jsonl, valid.jsonl) or a train JSONL file")
      ->required();
  app.add_option("--valid", a.valid, "Validation JSONL (default: valid.jsonl beside the data)");
  app.add_option("--out", a.out, "Output directory for checkpoints and logs")->required();
  app.add_option("--seed", a.config.seed, "Global seed");
  app.add_option("--mode", a.mode, "sequential | joint")
      ->check(CLI::IsMember({"sequential", "joint"}));
  auto& plan = a.config.plan;
  for (Phase p : {Phase::kPretrain, Phase::kWeak, Phase::kStrong}) {
    const std::string n(to_string(p));
    app.add_option("--" + n + "-steps", plan.at(p).steps, "Optimizer steps in the " + n + " phase");
    app.add_option("--" + n + "-lr", plan.at(p).learning_rate, "Learning rate of the " + n + " phase");
    app.add_option("--" + n + "-batch", plan.at(p).batch_size, "Batch size of the " + n + " phase");
  }
  app.add_option("--pretrain-data", a.pretrain_data, "Dataset for pretraining: pool|weak|strong|all");
  app.add_option("--weak-data", a.weak_data, "Dataset for the weak phase");
  app.add_option("--strong-data", a.strong_data, "Dataset for the strong phase");
  app.add_option("--joint-steps", a.config.joint.steps, "Steps of the weighted joint objective");
  app.add_option("--joint-lr", a.config.joint.learning_rate, "Learning rate in joint mode");
  app.add_option("--joint-batch", a.config.joint.batch_size, "Per-source batch size in joint mode");
  app.add_option("--lambda1", a.config.weights.lambda1, "Weight of the pretraining loss");
  app.add_option("--lambda2", a.config.weights.lambda2, "Weight of the weak-instruction loss");
  app.add_option("--lambda3", a.config.weights.lambda3, "Weight of the strong-instruction loss");
  auto& m = a.config.model;
  app.add_option("--d-model", m.d_model, "Embedding width");
  app.add_option("--heads", m.n_heads, "Attention heads");
  app.add_option("--enc-layers", m.n_layers_enc, "Encoder layers");
  app.add_option("--dec-layers", m.n_layers_dec, "Decoder layers");
  app.add_option("--d-ff", m.d_ff, "Feed-forward width");
  app.add_option("--max-len", m.max_len, "Maximum sequence length");
  app.add_option("--vocab-min-count", a.config.vocab_min_count, "Minimum word count for the vocabulary");
  app.add_option("--vocab-max-size", a.config.vocab_max_size, "Vocabulary size cap");
  app.add_option("--clip-norm", a.config.clip_norm, "Gradient norm clip");
  app.add_option("--eval-every", a.config.eval_every, "Validation interval in steps (0: phase ends)");
  app.add_flag("--verbose", a.verbose, "Print every step's loss to stderr");
}

DatasetSelector dataset_or_throw(const std::string& s) {
  auto d = parse_dataset(s);
  if (!d) throw UsageError("unknown dataset selector '" + s + "' (pool|weak|strong|all)");
  return *d;
}

std::string resolved_config(const TrainArgs& a, const fs::path& train_path,
                            const fs::path& valid_path, const std::optional<std::uint64_t>& data_seed) {
  const TrainConfig& c = a.config;
  std::ostringstream os;
  os << "# resolved training configuration\n";
  os << "data=" << train_path.string() << "\n";
  if (!valid_path.empty()) os << "valid=" << valid_path.string() << "\n";
  if (data_seed) os << "data_seed=" << *data_seed << "\n";
  os << "seed=" << c.seed << "\n";
  os << "mode=" << a.mode << "\n";
  for (const auto& p : c.plan.phases()) {
    const std::string n(to_string(p.phase));
    os << n << "-steps=" << p.steps << "\n"
       << n << "-lr=" << fmt(p.learning_rate) << "\n"
       << n << "-batch=" << p.batch_size << "\n"
       << n << "-data=" << to_string(p.dataset) << "\n";
  }
  os << "joint-steps=" << c.joint.steps << "\n"
     << "joint-lr=" << fmt(c.joint.learning_rate) << "\n"
     << "joint-batch=" << c.joint.batch_size << "\n"
     << "lambda1=" << fmt(c.weights.lambda1) << "\n"
     << "lambda2=" << fmt(c.weights.lambda2) << "\n"
     << "lambda3=" << fmt(c.weights.lambda3) << "\n"
     << "d-model=" << c.model.d_model << "\n"
     << "heads=" << c.model.n_heads << "\n"
     << "enc-layers=" << c.model.n_layers_enc << "\n"
     << "dec-layers=" << c.model.n_layers_dec << "\n"
     << "d-ff=" << c.model.d_ff << "\n"
     << "max-len=" << c.model.max_len << "\n"
     << "vocab-min-count=" << c.vocab_min_count << "\n"
     << "vocab-max-size=" << c.vocab_max_size << "\n"
     << "clip-norm=" << fmt(c.clip_norm) << "\n"
     << "eval-every=" << c.eval_every << "\n";
  return os.str();
}

int run_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  a.config.mode = a.mode == "joint" ? TrainMode::kJoint : TrainMode::kSequential;
  a.config.plan.at(Phase::kPretrain).dataset = dataset_or_throw(a.pretrain_data);
  a.config.plan.at(Phase::kWeak).dataset = dataset_or_throw(a.weak_data);
  a.config.plan.at(Phase::kStrong).dataset = dataset_or_throw(a.strong_data);
  try {
    a.config.weights.validate();
    ModelConfig probe = a.config.model;
    probe.vocab_size = 1;
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  // Resolve and validate every path before any training starts.
  const fs::path data(a.data);
  fs::path train_path = data, valid_path = a.valid, manifest_path;
  if (fs::is_directory(data)) {
    train_path = data / "train.jsonl";
    if (valid_path.empty() && fs::exists(data / "valid.jsonl")) valid_path = data / "valid.jsonl";
    manifest_path = data / "manifest.json";
  } else if (valid_path.empty() && data.has_parent_path() &&
             fs::exists(data.parent_path() / "valid.jsonl") &&
             data.filename() != "valid.jsonl") {
    valid_path = data.parent_path() / "valid.jsonl";
  }
  if (!fs::exists(train_path)) throw DataError("training data not found: " + train_path.string());
  if (!valid_path.empty() && !fs::exists(valid_path)) {
    throw DataError("validation data not found: " + valid_path.string());
  }
  const fs::path out_dir(a.out);
  ensure_writable_dir(out_dir);

  std::optional<std::uint64_t> data_seed;
  if (!manifest_path.empty() && fs::exists(manifest_path)) {
    try {
      const auto m = nlohmann::json::parse(read_text(manifest_path));
      if (m.contains("seed")) data_seed = m.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
  }

  CorpusSplit corpus;
  corpus.train = load_jsonl(train_path);
  if (corpus.train.empty()) throw DataError("training data is empty: " + train_path.string());
  if (!valid_path.empty()) corpus.validation = load_jsonl(valid_path);
  std::set<std::string> seen;
  for (const auto& ex : corpus.train) {
    if (seen.insert(ex.story).second) corpus.pretrain_pool.push_back(ex.story);
  }

  write_text(out_dir / "config.ini", resolved_config(a, train_path, valid_path, data_seed));

  StepCallback on_step;
  if (a.verbose) {
    on_step = [&err](const StepRecord& r) {
      err << to_string(r.phase) << " step " << r.step << " loss " << fmt(r.loss) << "\n";
    };
  }
  const CurriculumResult result = run_curriculum(a.config, corpus, on_step);
  for (const auto& ck : result.checkpoints) {
    save_checkpoint(out_dir / (ck.label + ".w2st"), result.config, result.vocab, ck.params);
  }
  write_text(out_dir / "train_log.csv", result.log.steps_csv());
  write_text(out_dir / "validation.csv", result.log.validation_csv());
  out << "trained " << result.log.steps.size() << " steps; checkpoints:";
  for (const auto& ck : result.checkpoints) out << " " << ck.label << ".w2st";
  out << "\n";
  return exit_code::kOk;
}

// ------------------------------------------------------------------ generate

struct GenerateArgs {
  std::string checkpoint;
  std::string instruction;
  int max_new = 0;
  std::string mode = "greedy";
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool verbose = false;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  app.add_option("--instruction", a.instruction, "Instruction text")->required();
  app.add_option("--max-new", a.max_new, "Maximum new tokens (default: max_len - 1)");
  app.add_option("--mode", a.mode, "greedy | sample")->check(CLI::IsMember({"greedy", "sample"}));
  app.add_option("--temperature", a.temperature, "Sampling temperature");
  app.add_option("--seed", a.seed, "Sampling seed");
  app.add_flag("--verbose", a.verbose, "Print per-token log-probabilities to stderr");
}

GenParams gen_params(const ModelConfig& cfg, int max_new, const std::string& mode, double temperature,
                     std::uint64_t seed) {
  GenParams gp;
  gp.max_new_tokens = max_new > 0 ? max_new : cfg.max_len - 1;
  gp.mode = mode == "sample" ? DecodeMode::kSample : DecodeMode::kGreedy;
  gp.temperature = temperature;
  gp.seed = derive_seed(seed, "sampling");
  try {
    gp.validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return gp;
}

int run_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const GenParams gp = gen_params(ck.config, a.max_new, a.mode, a.temperature, a.seed);
  const Generation g = generate(ck.params, ck.config, ck.vocab, a.instruction, gp);
  out << g.text << "\n";
  if (a.verbose) {
    for (std::size_t i = 0; i < g.tokens.size(); ++i) {
      err << ck.vocab.token_of(g.tokens[i]) << "\t" << fmt(g.logprobs[i]) << "\n";
    }
  }
  return exit_code::kOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string report;
  int max_new = 0;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  app.add_option("--data", a.data, "Test JSONL")->required();
  app.add_option("--report", a.report, "CSV report path (default: stdout)");
  app.add_option("--max-new", a.max_new, "Maximum new tokens per story (default: max_len - 1)");
}

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
  if (!fs::exists(a.data)) throw DataError("data not found: " + a.data);
  if (!a.report.empty()) ensure_writable_file(a.report);
  if (a.checkpoint.find(',') != std::string::npos) {
    throw UsageError("checkpoint path must not contain commas (it labels CSV rows)");
  }
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto test = load_jsonl(a.data);
  if (test.empty()) throw DataError("no examples in " + a.data);
  const GenParams gp = gen_params(ck.config, a.max_new, "greedy", 1.0, 0);
  const EvalReport report = evaluate(ck.params, ck.config, ck.vocab, test, gp);
  const std::string csv = eval_csv(report, a.checkpoint);
  if (a.report.empty()) {
    out << csv;
  } else {
    write_text(a.report, csv);
  }
  return exit_code::kOk;
}

// -------------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void add_report(CLI::App& app, ReportArgs& a) {
  app.add_option("inputs", a.inputs, "Evaluation CSV files")->required();
  app.add_option("--out", a.out, "Merged CSV path (default: stdout)");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

int run_report(const ReportArgs& a, std::ostream& out) {
  std::vector<std::string> missing;
  for (const auto& p : a.inputs) {
    if (!fs::exists(p)) missing.push_back(p);
  }
  if (!missing.empty()) {
    std::string msg = "missing evaluation reports:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  if (!a.out.empty()) ensure_writable_file(a.out);

  static const std::vector<std::string> kHeader = {"checkpoint", "split",   "count",     "bleu1",
                                                   "bleu2",      "rouge_l", "perplexity"};
  static const std::vector<std::string> kSplits = {"weak", "strong", "all"};
  static const std::vector<std::string> kMetrics = {"bleu1", "bleu2", "rouge_l", "perplexity"};

  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> rows;
  for (const auto& p : a.inputs) {
    std::istringstream in(read_text(p));
    std::string line;
    if (!std::getline(in, line) || split_csv(line) != kHeader) {
      throw DataError("unexpected header in " + p);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cells = split_csv(line);
      if (cells.size() != kHeader.size()) throw DataError(p + ": wrong column count", line_no);
      if (std::find(kSplits.begin(), kSplits.end(), cells[1]) == kSplits.end()) {
        throw DataError(p + ": unknown split " + cells[1], line_no);
      }
      if (!rows.contains(cells[0])) order.push_back(cells[0]);
      rows[cells[0]][cells[1]] = {cells.begin() + 3, cells.end()};
    }
  }
  std::string csv = "checkpoint";
  for (const auto& s : kSplits)
    for (const auto& m : kMetrics) csv += "," + s + "_" + m;
  csv += "\n";
  for (const auto& ck : order) {
    csv += ck;
    for (const auto& s : kSplits) {
      auto it = rows[ck].find(s);
      for (std::size_t m = 0; m < kMetrics.size(); ++m) {
        csv += ",";
        if (it != rows[ck].end()) csv += it->second[m];
      }
    }
    csv += "\n";
  }
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
  }
  return exit_code::kOk;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

// Splices the key=value lines of `train --config FILE` in front of the
// command-line flags. Keys also given as flags are skipped so the flag wins.
std::vector<std::string> expand_train_config(const std::vector<std::string>& args,
                                             const CLI::App& train) {
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  if (!fs::exists(file)) throw DataError("config file not found: " + file);
  std::vector<std::string> out{args.front()};
  std::istringstream in(read_text(file));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(file + ": expected key=value", line_no);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "data_seed") continue;  // provenance only
    const std::string flag = "--" + key;
    const CLI::Option* opt = train.get_option_no_throw(flag);
    if (!opt || key == "config") throw UsageError(file + ":" + std::to_string(line_no) + ": unknown key " + key);
    if (given_on_command_line(args, flag)) continue;
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") out.push_back(flag);
    } else {
      out.push_back(flag + "=" + value);
    }
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weak-to-strong curriculum instruction tuning for story generation", "w2st"};
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train;
  GenerateArgs gen;
  EvaluateArgs eval;
  ReportArgs report;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic instruction/story corpus");
  add_synth(*synth_cmd, synth);
  auto* train_cmd = app.add_subcommand("train", "Run the pretrain -> weak -> strong curriculum");
  add_train(*train_cmd, train);
  auto* gen_cmd = app.add_subcommand("generate", "Generate a story from a checkpoint");
  add_generate(*gen_cmd, gen);
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a JSONL test set");
  add_evaluate(*eval_cmd, eval);
  auto* report_cmd = app.add_subcommand("report", "Merge evaluation CSVs into one comparison table");
  add_report(*report_cmd, report);

  std::vector<std::string> expanded = args;
  try {
    if (!args.empty() && args.front() == "train") expanded = expand_train_config(args, *train_cmd);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  }

  try {
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth, out);
    if (*train_cmd) return run_train(train, out, err);
    if (*gen_cmd) return run_generate(gen, out, err);
    if (*eval_cmd) return run_evaluate(eval, out);
    if (*report_cmd) return run_report(report, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kDivergence;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const std::length_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  }
  return exit_code::kUsage;
}

}  // namespace w2st
