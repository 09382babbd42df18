#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "w2st/rng.hpp"
#include "w2st/tokenizer.hpp"

namespace w2st {

enum class Strength { kWeak, kStrong };

std::string_view to_string(Strength s);
std::optional<Strength> parse_strength(std::string_view s);

struct InstructionExample {
  std::string instruction;
  Strength strength = Strength::kWeak;
  std::string story;

  bool operator==(const InstructionExample&) const = default;
};

struct CorpusSplit {
  std::vector<InstructionExample> train;
  std::vector<InstructionExample> validation;
  std::vector<InstructionExample> test;
  /// Training stories without instructions, used for language-model pretraining.
  std::vector<std::string> pretrain_pool;
};

/// Malformed or inconsistent input data. `line` is 1-based, 0 when unknown.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// JSONL: one object per line with exactly the string fields
// "instruction", "strength" ("weak" | "strong") and "story".
std::vector<InstructionExample> parse_jsonl(std::string_view text);
std::vector<InstructionExample> load_jsonl(const std::filesystem::path& path);
std::string to_jsonl(std::span<const InstructionExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const InstructionExample> examples);

std::vector<InstructionExample> filter_strength(std::span<const InstructionExample> xs,
                                                Strength s);

/// Size limits for the synthetic story grammar.
struct GrammarKnobs {
  int n_protagonists = 8;
  int n_obstacles = 6;
  int n_resolutions = 5;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
};

/// Template grammar behind the synthetic corpus. A story is fixed by a
/// (protagonist, obstacle, resolution) triple. Weak instructions name the
/// protagonist only; strong instructions name all three.
class StoryGrammar {
 public:
  explicit StoryGrammar(const GrammarKnobs& knobs);

  int protagonists() const { return n_protagonists_; }
  int obstacles() const { return n_obstacles_; }
  int resolutions() const { return n_resolutions_; }
  std::size_t story_count() const;

  std::string story(int protagonist, int obstacle, int resolution) const;
  std::string weak_instruction(int protagonist) const;
  std::string strong_instruction(int protagonist, int obstacle, int resolution) const;

 private:
  int n_protagonists_;
  int n_obstacles_;
  int n_resolutions_;
};

/// Seeded synthetic corpus of `n_examples` instruction/story pairs. Each
/// sampled story contributes one weak and one strong example (the last story
/// contributes only its strong example when n_examples is odd); both land in
/// the same split.
CorpusSplit synth_corpus(std::uint64_t seed, std::size_t n_examples, const GrammarKnobs& knobs = {});

/// Tokenized example ready for the model.
struct EncodedExample {
  TokenSeq instruction;  // words only
  TokenSeq story;        // words + EOS
  Strength strength = Strength::kWeak;
};

EncodedExample encode_example(const Vocab& vocab, const InstructionExample& ex);
/// Story-only example conditioned on the neutral single-BOS context.
EncodedExample encode_pretrain(const Vocab& vocab, std::string_view story);
/// The single-BOS encoder input used for unconditional language modelling.
TokenSeq neutral_context();

/// A padded batch. Row r of `instructions` / `stories` is padded with PAD to
/// the batch's longest row; masks are 1 on real tokens.
struct TokenBatch {
  std::vector<TokenSeq> instructions;
  std::vector<TokenSeq> stories;
  std::vector<std::vector<std::uint8_t>> instruction_mask;
  std::vector<std::vector<std::uint8_t>> story_mask;
  std::vector<Strength> strengths;
  std::vector<std::size_t> source_index;

  std::size_t size() const { return stories.size(); }
};

/// Per-epoch seeded shuffling over a fixed example set.
class BatchIterator {
 public:
  BatchIterator(std::vector<EncodedExample> examples, std::size_t batch_size, std::uint64_t seed,
                std::size_t max_len);

  /// Next batch, starting a freshly shuffled epoch when the current one is spent.
  TokenBatch next();
  /// All batches of one epoch.
  std::vector<TokenBatch> epoch();
  std::size_t epochs_started() const { return epoch_count_; }
  std::size_t size() const { return examples_.size(); }

 private:
  void reshuffle();

  std::vector<EncodedExample> examples_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_count_ = 0;
};

}  // namespace w2st
