#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "w2st/data.hpp"
#include "w2st/model.hpp"
#include "w2st/optimizer.hpp"
#include "w2st/tokenizer.hpp"

namespace w2st {

/// Weights of the combined objective lambda1*pretrain + lambda2*weak + lambda3*strong.
struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;

  void validate() const;
};

double total_loss(double lp, double lw, double ls, const LossWeights& w);
/// Differentiable form of total_loss over scalar tensors.
Tensor total_loss(const Tensor& lp, const Tensor& lw, const Tensor& ls, const LossWeights& w);

enum class Phase { kPretrain, kWeak, kStrong, kJoint };
std::string_view to_string(Phase p);
std::optional<Phase> parse_phase(std::string_view s);

enum class DatasetSelector { kPretrainPool, kWeak, kStrong, kAllInstructions };
std::string_view to_string(DatasetSelector d);
std::optional<DatasetSelector> parse_dataset(std::string_view s);

struct PhaseSpec {
  Phase phase = Phase::kPretrain;
  int steps = 0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  DatasetSelector dataset = DatasetSelector::kPretrainPool;
};

/// The three sequential phases. Order is fixed: pretrain, weak, strong.
class PhasePlan {
 public:
  PhasePlan();

  PhaseSpec& at(Phase p);
  const PhaseSpec& at(Phase p) const;
  const std::array<PhaseSpec, 3>& phases() const { return phases_; }
  int total_steps() const;
  /// key=value lines, one block per phase, always in execution order.
  std::string serialize() const;

 private:
  std::array<PhaseSpec, 3> phases_;
};

struct StepRecord {
  Phase phase;
  int step;
  double loss;
};

/// Validation losses; a component is empty when its validation set is.
struct ValidationRecord {
  std::string label;  // "init" or the phase just completed
  int step;           // steps completed within that phase
  std::optional<double> pretrain;
  std::optional<double> weak;
  std::optional<double> strong;
  double total;  // weighted sum of the present components
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validations;

  /// "phase,step,loss" CSV.
  std::string steps_csv() const;
  /// "label,step,pretrain,weak,strong,total" CSV.
  std::string validation_csv() const;
};

/// Thrown when a training step yields a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(Phase phase, int step, const std::string& detail);
  Phase phase() const { return phase_; }
  int step() const { return step_; }

 private:
  Phase phase_;
  int step_;
};

/// Unconditional next-token NLL over the stories of `batch`, each decoded
/// against the single-BOS neutral context. Mean over non-PAD tokens.
Tensor pretrain_loss(const ModelParams& params, const ModelConfig& cfg, const TokenBatch& batch);

/// Instruction-conditioned NLL over `batch`, mean over non-PAD story tokens
/// of the whole batch. Every row must have strength `s`.
Tensor instruction_loss(const ModelParams& params, const ModelConfig& cfg,
                        const TokenBatch& batch, Strength s);

/// Same as instruction_loss without the strength check.
Tensor conditional_loss(const ModelParams& params, const ModelConfig& cfg,
                        const TokenBatch& batch);

/// Mean per-token NLL over encoded examples (no gradient tracking).
double mean_token_nll(const ModelParams& params, const ModelConfig& cfg,
                      std::span<const EncodedExample> examples);

/// Builds the batch that holds every example once, in order.
TokenBatch full_batch(std::span<const EncodedExample> examples, std::size_t max_len);

using StepCallback = std::function<void(const StepRecord&)>;

struct PhaseOptions {
  double clip_norm = 1.0;
  StepCallback on_step;
  /// Called with the number of completed steps every `eval_every` steps,
  /// except after the last one.
  int eval_every = 0;
  std::function<void(int)> on_eval;
};

/// Runs exactly spec.steps optimizer updates on the phase's loss, logging
/// every step. Deterministic for a fixed seed.
TrainLog run_phase(ModelParams& params, const ModelConfig& cfg, const PhaseSpec& spec,
                   std::span<const EncodedExample> data, Adam& optimizer, std::uint64_t seed,
                   const PhaseOptions& options = {});

enum class TrainMode { kSequential, kJoint };

struct JointSpec {
  int steps = 0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
};

struct TrainConfig {
  ModelConfig model;  // vocab_size is taken from the vocabulary
  PhasePlan plan;
  LossWeights weights;
  TrainMode mode = TrainMode::kSequential;
  JointSpec joint;
  std::uint64_t seed = 1;
  int vocab_min_count = 1;
  std::size_t vocab_max_size = 4096;
  double clip_norm = 1.0;
  /// Extra validation passes every N steps within a phase (0 = boundaries only).
  int eval_every = 0;
};

struct PhaseCheckpoint {
  std::string label;  // init, pretrain, weak, strong, joint
  ModelParams params;
};

struct CurriculumResult {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
  std::vector<PhaseCheckpoint> checkpoints;
  TrainLog log;
};

/// Vocabulary over the training instructions and stories.
Vocab corpus_vocab(const CorpusSplit& corpus, int min_count, std::size_t max_size);

/// Trains one evolving parameter set through pretrain, weak and strong phases
/// (or the weighted joint objective), cloning a checkpoint at every boundary.
CurriculumResult run_curriculum(const TrainConfig& config, const CorpusSplit& corpus,
                                const StepCallback& on_step = {});
CurriculumResult run_curriculum(const TrainConfig& config, const CorpusSplit& corpus,
                                const Vocab& vocab, const StepCallback& on_step = {});

/// Validation losses of `params` on the corpus validation split.
ValidationRecord validate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                          const CorpusSplit& corpus, const LossWeights& weights,
                          std::string label, int step);

}  // namespace w2st
