#include "w2st/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace w2st {

namespace {

constexpr std::string_view kProtagonists[] = {"dragon", "knight", "fox",   "princess",
                                              "robot",  "wizard", "mouse", "giant",
                                              "owl",    "sailor", "bear",  "turtle"};
constexpr std::string_view kHomes[] = {"mountain", "castle", "forest", "tower",
                                       "city",     "valley", "barn",   "hills",
                                       "woods",    "harbor", "cave",   "pond"};
constexpr std::string_view kObstacles[] = {"fire",   "water",   "darkness", "heights", "storms",
                                           "spiders", "thunder", "crowds",   "snow",    "silence"};
constexpr std::string_view kResolutions[] = {
    "asking a friend for help", "practicing every day",  "reading an old book",
    "singing a brave song",     "taking small steps",    "listening to its heart",
    "watching the others",      "trusting its teacher"};

template <std::size_t N>
int check_knob(int v, const std::string_view (&)[N], const char* name) {
  if (v < 1 || static_cast<std::size_t>(v) > N) {
    throw std::invalid_argument(std::string("grammar knob ") + name + " must be in [1, " +
                                std::to_string(N) + "], got " + std::to_string(v));
  }
  return v;
}

std::string str(std::string_view s) { return std::string(s); }

}  // namespace

DataError::DataError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

std::string_view to_string(Strength s) { return s == Strength::kWeak ? "weak" : "strong"; }

std::optional<Strength> parse_strength(std::string_view s) {
  if (s == "weak") return Strength::kWeak;
  if (s == "strong") return Strength::kStrong;
  return std::nullopt;
}

std::vector<InstructionExample> parse_jsonl(std::string_view text) {
  std::vector<InstructionExample> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!obj.is_object()) throw DataError("expected a JSON object", line_no);
    if (obj.size() != 3) {
      throw DataError("expected exactly the fields instruction, strength, story", line_no);
    }
    InstructionExample ex;
    std::string strength;
    for (auto [key, dst] : {std::pair{"instruction", &ex.instruction},
                            std::pair{"strength", &strength}, std::pair{"story", &ex.story}}) {
      auto it = obj.find(key);
      if (it == obj.end()) throw DataError(std::string("missing field ") + key, line_no);
      if (!it->is_string()) throw DataError(std::string("field ") + key + " must be a string", line_no);
      *dst = it->get<std::string>();
    }
    auto parsed = parse_strength(strength);
    if (!parsed) throw DataError("unknown strength \"" + strength + "\"", line_no);
    ex.strength = *parsed;
    if (ex.instruction.empty()) throw DataError("empty instruction", line_no);
    if (ex.story.empty()) throw DataError("empty story", line_no);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<InstructionExample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_jsonl(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what(), e.line());
  }
}

std::string to_jsonl(std::span<const InstructionExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::ordered_json obj;
    obj["instruction"] = ex.instruction;
    obj["strength"] = std::string(to_string(ex.strength));
    obj["story"] = ex.story;
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const InstructionExample> examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string text = to_jsonl(examples);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<InstructionExample> filter_strength(std::span<const InstructionExample> xs,
                                                Strength s) {
  std::vector<InstructionExample> out;
  std::copy_if(xs.begin(), xs.end(), std::back_inserter(out),
               [s](const auto& x) { return x.strength == s; });
  return out;
}

StoryGrammar::StoryGrammar(const GrammarKnobs& knobs)
    : n_protagonists_(check_knob(knobs.n_protagonists, kProtagonists, "n_protagonists")),
      n_obstacles_(check_knob(knobs.n_obstacles, kObstacles, "n_obstacles")),
      n_resolutions_(check_knob(knobs.n_resolutions, kResolutions, "n_resolutions")) {}

std::size_t StoryGrammar::story_count() const {
  return static_cast<std::size_t>(n_protagonists_) * static_cast<std::size_t>(n_obstacles_) *
         static_cast<std::size_t>(n_resolutions_);
}

std::string StoryGrammar::story(int p, int o, int r) const {
  const std::string who = str(kProtagonists[p]);
  const std::string fear = str(kObstacles[o]);
  return "a " + who + " lived in the " + str(kHomes[p]) + ". the " + who + " feared " + fear +
         ". one day the " + who + " faced " + fear + " by " + str(kResolutions[r]) + ". now the " +
         who + " is brave.";
}

std::string StoryGrammar::weak_instruction(int p) const {
  return "generate a story about a " + str(kProtagonists[p]);
}

std::string StoryGrammar::strong_instruction(int p, int o, int r) const {
  return "generate a story about a " + str(kProtagonists[p]) +
         " that learns to overcome its fear of " + str(kObstacles[o]) + " by " +
         str(kResolutions[r]);
}

CorpusSplit synth_corpus(std::uint64_t seed, std::size_t n_examples, const GrammarKnobs& knobs) {
  if (n_examples < 10) {
    throw std::invalid_argument("synth_corpus: need at least 10 examples, got " +
                                std::to_string(n_examples));
  }
  if (knobs.valid_fraction < 0 || knobs.test_fraction < 0 ||
      knobs.valid_fraction + knobs.test_fraction >= 1.0) {
    throw std::invalid_argument("synth_corpus: split fractions must be >= 0 and sum below 1");
  }
  const StoryGrammar grammar(knobs);
  const std::size_t n_stories = (n_examples + 1) / 2;
  if (n_stories > grammar.story_count()) {
    throw std::invalid_argument("synth_corpus: grammar yields only " +
                                std::to_string(grammar.story_count()) + " distinct stories, " +
                                std::to_string(n_stories) + " needed");
  }
  auto portion = [&](double f) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(n_stories))));
  };
  const std::size_t n_valid = portion(knobs.valid_fraction);
  const std::size_t n_test = portion(knobs.test_fraction);
  if (n_valid + n_test >= n_stories) {
    throw std::invalid_argument("synth_corpus: " + std::to_string(n_examples) +
                                " examples are too few for disjoint train/validation/test splits");
  }

  std::vector<std::size_t> combos(grammar.story_count());
  for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = i;
  Rng rng(seed);
  rng.shuffle(combos);
  combos.resize(n_stories);

  CorpusSplit split;
  const std::size_t n_train = n_stories - n_valid - n_test;
  const auto per_p = static_cast<std::size_t>(grammar.obstacles() * grammar.resolutions());
  for (std::size_t s = 0; s < n_stories; ++s) {
    const int p = static_cast<int>(combos[s] / per_p);
    const int o = static_cast<int>((combos[s] % per_p) / static_cast<std::size_t>(grammar.resolutions()));
    const int r = static_cast<int>(combos[s] % static_cast<std::size_t>(grammar.resolutions()));
    auto& dst = s < n_train ? split.train : (s < n_train + n_valid ? split.validation : split.test);
    const std::string story = grammar.story(p, o, r);
    const bool last_odd = (n_examples % 2 == 1) && s + 1 == n_stories;
    if (!last_odd) dst.push_back({grammar.weak_instruction(p), Strength::kWeak, story});
    dst.push_back({grammar.strong_instruction(p, o, r), Strength::kStrong, story});
    if (s < n_train) split.pretrain_pool.push_back(story);
  }
  return split;
}

TokenSeq neutral_context() { return {{token::kBos}, SeqRole::kInstruction}; }

EncodedExample encode_example(const Vocab& vocab, const InstructionExample& ex) {
  EncodedExample out;
  out.instruction = vocab.encode(ex.instruction, false, SeqRole::kInstruction);
  out.story = vocab.encode(ex.story, false, SeqRole::kStory);
  out.story.ids.push_back(token::kEos);
  out.strength = ex.strength;
  return out;
}

EncodedExample encode_pretrain(const Vocab& vocab, std::string_view story) {
  EncodedExample out;
  out.instruction = neutral_context();
  out.story = vocab.encode(story, false, SeqRole::kStory);
  out.story.ids.push_back(token::kEos);
  return out;
}

BatchIterator::BatchIterator(std::vector<EncodedExample> examples, std::size_t batch_size,
                             std::uint64_t seed, std::size_t max_len)
    : examples_(std::move(examples)), batch_size_(batch_size), rng_(seed) {
  if (batch_size_ < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (examples_.empty()) throw std::invalid_argument("batch iterator over no examples");
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const auto& ex = examples_[i];
    if (ex.instruction.empty()) throw DataError("example " + std::to_string(i) + " has an empty instruction");
    if (ex.instruction.size() > max_len || ex.story.size() > max_len) {
      throw DataError("example " + std::to_string(i) + " exceeds max_len " +
                      std::to_string(max_len) + " (instruction " +
                      std::to_string(ex.instruction.size()) + ", story " +
                      std::to_string(ex.story.size()) + " tokens)");
    }
  }
  order_.resize(examples_.size());
  reshuffle();
}

void BatchIterator::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
  cursor_ = 0;
  ++epoch_count_;
}

TokenBatch BatchIterator::next() {
  if (cursor_ >= order_.size()) reshuffle();
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  TokenBatch b;
  std::size_t ilen = 0, slen = 0;
  for (std::size_t i = cursor_; i < end; ++i) {
    ilen = std::max(ilen, examples_[order_[i]].instruction.size());
    slen = std::max(slen, examples_[order_[i]].story.size());
  }
  auto pad = [](const TokenSeq& s, std::size_t len, std::vector<std::uint8_t>& mask) {
    TokenSeq out = s;
    mask.assign(len, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(s.size()), 1);
    out.ids.resize(len, token::kPad);
    return out;
  };
  for (std::size_t i = cursor_; i < end; ++i) {
    const auto& ex = examples_[order_[i]];
    b.instruction_mask.emplace_back();
    b.story_mask.emplace_back();
    b.instructions.push_back(pad(ex.instruction, ilen, b.instruction_mask.back()));
    b.stories.push_back(pad(ex.story, slen, b.story_mask.back()));
    b.strengths.push_back(ex.strength);
    b.source_index.push_back(order_[i]);
  }
  cursor_ = end;
  return b;
}

std::vector<TokenBatch> BatchIterator::epoch() {
  if (cursor_ != 0) reshuffle();
  std::vector<TokenBatch> out;
  do {
    out.push_back(next());
  } while (cursor_ < order_.size());
  return out;
}

}  // namespace w2st
