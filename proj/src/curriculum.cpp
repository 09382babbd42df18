#include "w2st/curriculum.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "w2st/graph.hpp"
#include "w2st/rng.hpp"

namespace w2st {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

std::size_t phase_index(Phase p) {
  if (p == Phase::kJoint) throw std::invalid_argument("joint is not a sequential phase");
  return static_cast<std::size_t>(p);
}

}  // namespace

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (lambda1 == 0 && lambda2 == 0 && lambda3 == 0) {
    throw std::invalid_argument("at least one loss weight must be positive");
  }
}

double total_loss(double lp, double lw, double ls, const LossWeights& w) {
  return w.lambda1 * lp + w.lambda2 * lw + w.lambda3 * ls;
}

Tensor total_loss(const Tensor& lp, const Tensor& lw, const Tensor& ls, const LossWeights& w) {
  return add(add(scale(lp, static_cast<float>(w.lambda1)), scale(lw, static_cast<float>(w.lambda2))),
             scale(ls, static_cast<float>(w.lambda3)));
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kWeak: return "weak";
    case Phase::kStrong: return "strong";
    case Phase::kJoint: return "joint";
  }
  return "?";
}

std::optional<Phase> parse_phase(std::string_view s) {
  for (Phase p : {Phase::kPretrain, Phase::kWeak, Phase::kStrong, Phase::kJoint}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

std::string_view to_string(DatasetSelector d) {
  switch (d) {
    case DatasetSelector::kPretrainPool: return "pool";
    case DatasetSelector::kWeak: return "weak";
    case DatasetSelector::kStrong: return "strong";
    case DatasetSelector::kAllInstructions: return "all";
  }
  return "?";
}

std::optional<DatasetSelector> parse_dataset(std::string_view s) {
  for (auto d : {DatasetSelector::kPretrainPool, DatasetSelector::kWeak, DatasetSelector::kStrong,
                 DatasetSelector::kAllInstructions}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

PhasePlan::PhasePlan() {
  phases_[0] = {Phase::kPretrain, 0, 1e-3, 8, DatasetSelector::kPretrainPool};
  phases_[1] = {Phase::kWeak, 0, 1e-3, 8, DatasetSelector::kWeak};
  phases_[2] = {Phase::kStrong, 0, 1e-3, 8, DatasetSelector::kStrong};
}

PhaseSpec& PhasePlan::at(Phase p) { return phases_[phase_index(p)]; }
const PhaseSpec& PhasePlan::at(Phase p) const { return phases_[phase_index(p)]; }

int PhasePlan::total_steps() const {
  int n = 0;
  for (const auto& p : phases_) n += p.steps;
  return n;
}

std::string PhasePlan::serialize() const {
  std::ostringstream os;
  for (const auto& p : phases_) {
    const auto name = std::string(to_string(p.phase));
    os << name << "_steps=" << p.steps << '\n'
       << name << "_lr=" << fmt_double(p.learning_rate) << '\n'
       << name << "_batch=" << p.batch_size << '\n'
       << name << "_data=" << to_string(p.dataset) << '\n';
  }
  return os.str();
}

std::string TrainLog::steps_csv() const {
  std::string out = "phase,step,loss\n";
  for (const auto& r : steps) {
    out += std::string(to_string(r.phase)) + "," + std::to_string(r.step) + "," +
           fmt_double(r.loss) + "\n";
  }
  return out;
}

std::string TrainLog::validation_csv() const {
  std::string out = "label,step,pretrain,weak,strong,total\n";
  for (const auto& r : validations) {
    out += r.label + "," + std::to_string(r.step) + "," + fmt_optional(r.pretrain) + "," +
           fmt_optional(r.weak) + "," + fmt_optional(r.strong) + "," + fmt_double(r.total) + "\n";
  }
  return out;
}

DivergenceError::DivergenceError(Phase phase, int step, const std::string& detail)
    : std::runtime_error("training diverged in phase " + std::string(to_string(phase)) +
                         " at step " + std::to_string(step) + ": " + detail),
      phase_(phase),
      step_(step) {}

namespace {

Tensor batch_nll(const ModelParams& params, const ModelConfig& cfg, const TokenBatch& batch,
                 bool neutral) {
  if (batch.size() == 0) throw std::invalid_argument("loss over an empty batch");
  std::size_t tokens = 0;
  Tensor acc;
  const TokenSeq context = neutral_context();
  for (std::size_t r = 0; r < batch.size(); ++r) {
    tokens += target_count(batch.stories[r]);
    Tensor nll = sequence_loss(params, cfg, neutral ? context : batch.instructions[r],
                               batch.stories[r], Reduction::kSum);
    acc = acc.defined() ? add(acc, nll) : nll;
  }
  return scale(acc, 1.0f / static_cast<float>(tokens));
}

}  // namespace

Tensor pretrain_loss(const ModelParams& params, const ModelConfig& cfg, const TokenBatch& batch) {
  return batch_nll(params, cfg, batch, true);
}

Tensor conditional_loss(const ModelParams& params, const ModelConfig& cfg,
                        const TokenBatch& batch) {
  return batch_nll(params, cfg, batch, false);
}

Tensor instruction_loss(const ModelParams& params, const ModelConfig& cfg,
                        const TokenBatch& batch, Strength s) {
  for (std::size_t r = 0; r < batch.strengths.size(); ++r) {
    if (batch.strengths[r] != s) {
      throw std::invalid_argument("instruction_loss(" + std::string(to_string(s)) + "): row " +
                                  std::to_string(r) + " is " +
                                  std::string(to_string(batch.strengths[r])));
    }
  }
  return conditional_loss(params, cfg, batch);
}

double mean_token_nll(const ModelParams& params, const ModelConfig& cfg,
                      std::span<const EncodedExample> examples) {
  if (examples.empty()) throw std::invalid_argument("mean_token_nll over no examples");
  NoGradScope no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    total += sequence_loss(params, cfg, ex.instruction, ex.story, Reduction::kSum).item();
    tokens += target_count(ex.story);
  }
  return total / static_cast<double>(tokens);
}

TokenBatch full_batch(std::span<const EncodedExample> examples, std::size_t max_len) {
  // A batch size covering everything yields one batch; only its order is shuffled.
  BatchIterator it({examples.begin(), examples.end()}, examples.size(), 0, max_len);
  TokenBatch b = it.next();
  TokenBatch ordered = b;
  for (std::size_t r = 0; r < b.size(); ++r) {
    const std::size_t src = b.source_index[r];
    ordered.instructions[src] = b.instructions[r];
    ordered.stories[src] = b.stories[r];
    ordered.instruction_mask[src] = b.instruction_mask[r];
    ordered.story_mask[src] = b.story_mask[r];
    ordered.strengths[src] = b.strengths[r];
    ordered.source_index[src] = src;
  }
  return ordered;
}

TrainLog run_phase(ModelParams& params, const ModelConfig& cfg, const PhaseSpec& spec,
                   std::span<const EncodedExample> data, Adam& optimizer, std::uint64_t seed,
                   const PhaseOptions& options) {
  if (spec.steps < 0) throw std::invalid_argument("phase steps must be nonnegative");
  TrainLog log;
  if (spec.steps == 0) return log;
  if (data.empty()) {
    throw std::invalid_argument("phase " + std::string(to_string(spec.phase)) +
                                " has steps but no data");
  }
  BatchIterator batches({data.begin(), data.end()}, spec.batch_size, seed,
                        static_cast<std::size_t>(cfg.max_len));
  std::vector<Tensor> tensors = params.tensors();
  for (int step = 0; step < spec.steps; ++step) {
    const TokenBatch batch = batches.next();
    params.zero_grad();
    Graph graph;
    double value = 0.0;
    try {
      Tensor loss;
      {
        GraphScope scope(graph);
        loss = spec.dataset == DatasetSelector::kPretrainPool ? pretrain_loss(params, cfg, batch)
                                                              : conditional_loss(params, cfg, batch);
      }
      value = loss.item();
      graph.backward(loss);
      clip_grad_norm(tensors, options.clip_norm);
    } catch (const NumericError& e) {
      throw DivergenceError(spec.phase, step, e.what());
    }
    optimizer.step(spec.learning_rate);
    StepRecord rec{spec.phase, step, value};
    log.steps.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (options.eval_every > 0 && options.on_eval && (step + 1) % options.eval_every == 0 &&
        step + 1 < spec.steps) {
      options.on_eval(step + 1);
    }
  }
  return log;
}

Vocab corpus_vocab(const CorpusSplit& corpus, int min_count, std::size_t max_size) {
  std::vector<std::string> lines;
  for (const auto& ex : corpus.train) {
    lines.push_back(ex.instruction);
    lines.push_back(ex.story);
  }
  for (const auto& s : corpus.pretrain_pool) lines.push_back(s);
  return Vocab::build(lines, min_count, max_size);
}

ValidationRecord validate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                          const CorpusSplit& corpus, const LossWeights& weights,
                          std::string label, int step) {
  std::vector<EncodedExample> pool, weak, strong;
  for (const auto& ex : corpus.validation) {
    (ex.strength == Strength::kWeak ? weak : strong).push_back(encode_example(vocab, ex));
  }
  // Validation stories appear once per instruction; the LM pool takes each once.
  for (const auto& ex : corpus.validation) {
    if (ex.strength == Strength::kStrong) pool.push_back(encode_pretrain(vocab, ex.story));
  }
  if (pool.empty()) {
    for (const auto& ex : corpus.validation) pool.push_back(encode_pretrain(vocab, ex.story));
  }
  ValidationRecord rec{std::move(label), step, std::nullopt, std::nullopt, std::nullopt, 0.0};
  if (!pool.empty()) rec.pretrain = mean_token_nll(params, cfg, pool);
  if (!weak.empty()) rec.weak = mean_token_nll(params, cfg, weak);
  if (!strong.empty()) rec.strong = mean_token_nll(params, cfg, strong);
  rec.total = weights.lambda1 * rec.pretrain.value_or(0.0) + weights.lambda2 * rec.weak.value_or(0.0) +
              weights.lambda3 * rec.strong.value_or(0.0);
  return rec;
}

namespace {

std::vector<EncodedExample> select(const CorpusSplit& corpus, const Vocab& vocab,
                                   DatasetSelector which) {
  std::vector<EncodedExample> out;
  if (which == DatasetSelector::kPretrainPool) {
    for (const auto& s : corpus.pretrain_pool) out.push_back(encode_pretrain(vocab, s));
    return out;
  }
  for (const auto& ex : corpus.train) {
    const bool keep = which == DatasetSelector::kAllInstructions ||
                      (which == DatasetSelector::kWeak && ex.strength == Strength::kWeak) ||
                      (which == DatasetSelector::kStrong && ex.strength == Strength::kStrong);
    if (keep) out.push_back(encode_example(vocab, ex));
  }
  return out;
}

void run_joint(ModelParams& params, const ModelConfig& cfg, const TrainConfig& config,
               const CorpusSplit& corpus, const Vocab& vocab, CurriculumResult& result,
               const StepCallback& on_step) {
  const JointSpec& js = config.joint;
  if (js.steps <= 0) return;
  const auto max_len = static_cast<std::size_t>(cfg.max_len);
  struct Source {
    double lambda;
    std::optional<BatchIterator> it;
  };
  std::array<Source, 3> sources{Source{config.weights.lambda1, {}},
                                Source{config.weights.lambda2, {}},
                                Source{config.weights.lambda3, {}}};
  const std::array<DatasetSelector, 3> which{DatasetSelector::kPretrainPool, DatasetSelector::kWeak,
                                             DatasetSelector::kStrong};
  for (std::size_t i = 0; i < 3; ++i) {
    if (sources[i].lambda == 0.0) continue;
    auto data = select(corpus, vocab, which[i]);
    if (data.empty()) {
      throw std::invalid_argument("joint training: no data for " + std::string(to_string(which[i])));
    }
    sources[i].it.emplace(std::move(data), js.batch_size,
                          derive_seed(config.seed, "batch.joint." + std::to_string(i)), max_len);
  }
  Adam optimizer(params.tensors());
  std::vector<Tensor> tensors = params.tensors();
  for (int step = 0; step < js.steps; ++step) {
    params.zero_grad();
    Graph graph;
    double value = 0.0;
    try {
      Tensor loss;
      {
        GraphScope scope(graph);
        std::array<Tensor, 3> parts;
        for (std::size_t i = 0; i < 3; ++i) {
          if (!sources[i].it) {
            parts[i] = Tensor::scalar(0.0f);
            continue;
          }
          const TokenBatch b = sources[i].it->next();
          parts[i] = i == 0 ? pretrain_loss(params, cfg, b) : conditional_loss(params, cfg, b);
        }
        loss = total_loss(parts[0], parts[1], parts[2], config.weights);
      }
      value = loss.item();
      graph.backward(loss);
      clip_grad_norm(tensors, config.clip_norm);
    } catch (const NumericError& e) {
      throw DivergenceError(Phase::kJoint, step, e.what());
    }
    optimizer.step(js.learning_rate);
    StepRecord rec{Phase::kJoint, step, value};
    result.log.steps.push_back(rec);
    if (on_step) on_step(rec);
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < js.steps) {
      result.log.validations.push_back(
          validate(params, cfg, vocab, corpus, config.weights, "joint", step + 1));
    }
  }
  result.log.validations.push_back(
      validate(params, cfg, vocab, corpus, config.weights, "joint", js.steps));
  result.checkpoints.push_back({"joint", params.clone()});
}

}  // namespace

CurriculumResult run_curriculum(const TrainConfig& config, const CorpusSplit& corpus,
                                const StepCallback& on_step) {
  return run_curriculum(config, corpus,
                        corpus_vocab(corpus, config.vocab_min_count, config.vocab_max_size), on_step);
}

CurriculumResult run_curriculum(const TrainConfig& config, const CorpusSplit& corpus,
                                const Vocab& vocab, const StepCallback& on_step) {
  config.weights.validate();
  CurriculumResult result;
  result.vocab = vocab;
  result.config = config.model;
  result.config.vocab_size = static_cast<int>(vocab.size());
  const ModelConfig& cfg = result.config;
  cfg.validate();

  ModelParams params = ModelParams::init(cfg, derive_seed(config.seed, "init"));
  result.checkpoints.push_back({"init", params.clone()});
  result.log.validations.push_back(validate(params, cfg, vocab, corpus, config.weights, "init", 0));

  if (config.mode == TrainMode::kJoint) {
    run_joint(params, cfg, config, corpus, vocab, result, on_step);
    result.params = std::move(params);
    return result;
  }

  for (const PhaseSpec& spec : config.plan.phases()) {
    if (spec.steps == 0) continue;
    const std::string name(to_string(spec.phase));
    const auto data = select(corpus, vocab, spec.dataset);
    Adam optimizer(params.tensors());
    PhaseOptions opts;
    opts.clip_norm = config.clip_norm;
    opts.on_step = on_step;
    const std::uint64_t seed = derive_seed(config.seed, "batch." + name);
    if (config.eval_every > 0) {
      opts.eval_every = config.eval_every;
      opts.on_eval = [&](int done) {
        result.log.validations.push_back(
            validate(params, cfg, vocab, corpus, config.weights, name, done));
      };
    }
    TrainLog slice = run_phase(params, cfg, spec, data, optimizer, seed, opts);
    result.log.steps.insert(result.log.steps.end(), slice.steps.begin(), slice.steps.end());
    result.log.validations.push_back(
        validate(params, cfg, vocab, corpus, config.weights, name, spec.steps));
    result.checkpoints.push_back({name, params.clone()});
  }
  result.params = std::move(params);
  return result;
}

}  // namespace w2st
