#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "w2st/data.hpp"

using namespace w2st;

namespace {

std::vector<InstructionExample> all_examples(const CorpusSplit& s) {
  std::vector<InstructionExample> out = s.train;
  out.insert(out.end(), s.validation.begin(), s.validation.end());
  out.insert(out.end(), s.test.begin(), s.test.end());
  return out;
}

std::set<std::string> stories_of(const std::vector<InstructionExample>& xs) {
  std::set<std::string> out;
  for (const auto& x : xs) out.insert(x.story);
  return out;
}

Vocab vocab_for(const CorpusSplit& s) {
  std::vector<std::string> lines;
  for (const auto& x : all_examples(s)) {
    lines.push_back(x.instruction);
    lines.push_back(x.story);
  }
  return Vocab::build(lines, 1, 4096);
}

EncodedExample toy_example(int tag, std::size_t len) {
  EncodedExample ex;
  ex.instruction = {{5 + tag}, SeqRole::kInstruction};
  ex.story = {std::vector<int>(len, 6), SeqRole::kStory};
  ex.story.ids.back() = token::kEos;
  return ex;
}

}  // namespace

TEST_CASE("jsonl examples") {
  auto xs = parse_jsonl(R"({"instruction":"a","strength":"weak","story":"b"})");
  REQUIRE(xs.size() == 1);
  CHECK(xs[0] == InstructionExample{"a", Strength::kWeak, "b"});
  CHECK(parse_jsonl("").empty());
  CHECK(parse_jsonl("\n  \n").empty());
}

TEST_CASE("jsonl errors carry the line number") {
  const std::string good = R"({"instruction":"a","strength":"strong","story":"b"})";
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_jsonl(text);
    } catch (const DataError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of(good + "\n" + good + "\n" + R"({"instruction":"a","strength":"medium","story":"b"})") == 3);
  CHECK(line_of(good + "\n{not json") == 2);
  CHECK(line_of(R"({"instruction":"a","story":"b"})") == 1);
  CHECK(line_of(R"({"instruction":"a","strength":"weak","story":"b","extra":1})") == 1);
  CHECK(line_of(R"({"instruction":"","strength":"weak","story":"b"})") == 1);
  CHECK(line_of(R"({"instruction":3,"strength":"weak","story":"b"})") == 1);
  CHECK(line_of("[1,2]") == 1);
}

TEST_CASE("jsonl round trip through a file") {
  const std::vector<InstructionExample> xs = {
      {"tell me \"quoted\"", Strength::kWeak, "line one\nline two"},
      {"unicode caf\xc3\xa9", Strength::kStrong, "story \\ slash"},
  };
  CHECK(parse_jsonl(to_jsonl(xs)) == xs);
  const auto path = std::filesystem::temp_directory_path() / "w2st_test_roundtrip.jsonl";
  write_jsonl(path, xs);
  CHECK(load_jsonl(path) == xs);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_jsonl(path), DataError);
}

TEST_CASE("synthetic corpus is deterministic per seed") {
  const auto a = synth_corpus(7, 100), b = synth_corpus(7, 100), c = synth_corpus(8, 100);
  CHECK(to_jsonl(a.train) == to_jsonl(b.train));
  CHECK(to_jsonl(a.validation) == to_jsonl(b.validation));
  CHECK(to_jsonl(a.test) == to_jsonl(b.test));
  CHECK(a.pretrain_pool == b.pretrain_pool);
  CHECK(to_jsonl(a.train) != to_jsonl(c.train));
}

TEST_CASE("strong instructions determine their story under the grammar") {
  const GrammarKnobs knobs{};
  const StoryGrammar g(knobs);
  // Enumerate every production and index them by strong instruction.
  std::map<std::string, std::vector<std::string>> productions;
  std::map<std::string, std::set<std::string>> weak_to_stories;
  for (int p = 0; p < g.protagonists(); ++p)
    for (int o = 0; o < g.obstacles(); ++o)
      for (int r = 0; r < g.resolutions(); ++r) {
        productions[g.strong_instruction(p, o, r)].push_back(g.story(p, o, r));
        weak_to_stories[g.weak_instruction(p)].insert(g.story(p, o, r));
      }
  CHECK(productions.size() == g.story_count());

  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto corpus = synth_corpus(seed, 150, knobs);
    for (const auto& x : all_examples(corpus)) {
      if (x.strength == Strength::kStrong) {
        const auto it = productions.find(x.instruction);
        REQUIRE(it != productions.end());
        CHECK(it->second.size() == 1);
        CHECK(it->second.front() == x.story);
      } else {
        const auto it = weak_to_stories.find(x.instruction);
        REQUIRE(it != weak_to_stories.end());
        CHECK(it->second.count(x.story) == 1);
        CHECK(it->second.size() > 1);
      }
    }
  }
}

TEST_CASE("weak and strong counts differ by at most one") {
  for (std::size_t n : {10u, 11u, 57u, 200u}) {
    const auto all = all_examples(synth_corpus(3, n));
    CHECK(all.size() == n);
    const auto weak = filter_strength(all, Strength::kWeak).size();
    const auto strong = filter_strength(all, Strength::kStrong).size();
    CHECK((weak > strong ? weak - strong : strong - weak) <= 1);
  }
}

TEST_CASE("splits are disjoint by story and the pretraining pool is the training stories") {
  const auto c = synth_corpus(4, 200);
  const auto tr = stories_of(c.train), va = stories_of(c.validation), te = stories_of(c.test);
  CHECK(!va.empty());
  CHECK(!te.empty());
  for (const auto& s : va) CHECK(tr.count(s) == 0);
  for (const auto& s : te) {
    CHECK(tr.count(s) == 0);
    CHECK(va.count(s) == 0);
  }
  CHECK(std::set<std::string>(c.pretrain_pool.begin(), c.pretrain_pool.end()) == tr);
}

TEST_CASE("synthetic corpus preconditions") {
  CHECK_THROWS_AS(synth_corpus(1, 9), std::invalid_argument);
  GrammarKnobs small;
  small.n_protagonists = small.n_obstacles = small.n_resolutions = 2;
  CHECK_THROWS_AS(synth_corpus(1, 100, small), std::invalid_argument);
  GrammarKnobs bad;
  bad.valid_fraction = 0.6;
  bad.test_fraction = 0.5;
  CHECK_THROWS_AS(synth_corpus(1, 100, bad), std::invalid_argument);
}

TEST_CASE("encoding appends EOS to stories only") {
  const auto c = synth_corpus(5, 20);
  const Vocab v = vocab_for(c);
  const auto ex = encode_example(v, c.train.front());
  CHECK(ex.story.ids.back() == token::kEos);
  CHECK(std::count(ex.instruction.ids.begin(), ex.instruction.ids.end(), token::kEos) == 0);
  CHECK(v.decode(ex.story) == normalize_text(c.train.front().story));
  const auto pre = encode_pretrain(v, c.pretrain_pool.front());
  CHECK(pre.instruction.ids == std::vector<int>{token::kBos});
}

TEST_CASE("10 examples in batches of 4 give sizes 4, 4, 2") {
  std::vector<EncodedExample> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(toy_example(i, 2 + static_cast<std::size_t>(i % 3)));
  BatchIterator it(xs, 4, 1, 16);
  const auto batches = it.epoch();
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
}

TEST_CASE("batches are padded to their longest row with matching masks") {
  std::vector<EncodedExample> xs;
  for (int i = 0; i < 7; ++i) xs.push_back(toy_example(i, 1 + static_cast<std::size_t>(i)));
  BatchIterator it(xs, 3, 2, 16);
  for (const auto& b : it.epoch()) {
    std::size_t longest = 0;
    for (auto i : b.source_index) longest = std::max(longest, xs[i].story.size());
    for (std::size_t r = 0; r < b.size(); ++r) {
      const auto& src = xs[b.source_index[r]].story.ids;
      CHECK(b.stories[r].size() == longest);
      for (std::size_t t = 0; t < longest; ++t) {
        CHECK(b.story_mask[r][t] == (t < src.size() ? 1 : 0));
        CHECK(b.stories[r].ids[t] == (t < src.size() ? src[t] : token::kPad));
      }
    }
  }
}

TEST_CASE("fixed seed gives a fixed order, each epoch a permutation") {
  std::vector<EncodedExample> xs;
  for (int i = 0; i < 23; ++i) xs.push_back(toy_example(i, 3));
  auto order = [&](std::uint64_t seed, int epochs) {
    BatchIterator it(xs, 5, seed, 16);
    std::vector<std::vector<std::size_t>> out;
    for (int e = 0; e < epochs; ++e) {
      out.emplace_back();
      for (const auto& b : it.epoch()) out.back().insert(out.back().end(), b.source_index.begin(), b.source_index.end());
    }
    return out;
  };
  const auto a = order(9, 3), b = order(9, 3), c = order(10, 3);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a[0] != a[1]);
  for (const auto& epoch : a) {
    // Multiset equality against the input instructions.
    std::multiset<int> seen, expected;
    for (auto i : epoch) seen.insert(xs[i].instruction.ids[0]);
    for (const auto& x : xs) expected.insert(x.instruction.ids[0]);
    CHECK(seen == expected);
  }
}

TEST_CASE("next() rolls over into a new epoch") {
  std::vector<EncodedExample> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(toy_example(i, 2));
  BatchIterator it(xs, 2, 3, 16);
  CHECK(it.epochs_started() == 1);
  it.next();
  it.next();
  CHECK(it.next().size() == 1);
  CHECK(it.epochs_started() == 1);
  CHECK(it.next().size() == 2);
  CHECK(it.epochs_started() == 2);
}

TEST_CASE("over-long example is reported by index") {
  std::vector<EncodedExample> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(toy_example(i, 3));
  xs.push_back(toy_example(9, 20));
  try {
    BatchIterator it(xs, 2, 1, 16);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("example 4") != std::string::npos);
  }
  CHECK_THROWS_AS(BatchIterator(xs, 0, 1, 64), std::invalid_argument);
}
