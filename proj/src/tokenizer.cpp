#include "w2st/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace w2st {

namespace {

constexpr std::string_view kReserved[token::kNumReserved] = {"<pad>", "<bos>", "<eos>",
                                                              "<unk>", "<sep>"};

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocab::Vocab() {
  for (auto r : kReserved) push(std::string(r));
}

void Vocab::push(std::string token) {
  if (ids_.contains(token)) throw std::invalid_argument("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::string> corpus, int min_count, std::size_t max_size) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  if (max_size < token::kNumReserved + 1) {
    throw std::invalid_argument("build_vocab: max_size " + std::to_string(max_size) +
                                " cannot hold the reserved tokens plus one word");
  }
  std::map<std::string, long> counts;
  for (const auto& line : corpus) {
    for (auto& w : split_words(line)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, long>> ranked;
  for (auto& [w, c] : counts) {
    if (c >= min_count) ranked.emplace_back(w, c);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [w, c] : ranked) {
    if (v.size() >= max_size) break;
    v.push(w);
  }
  return v;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < token::kNumReserved) {
    throw std::invalid_argument("vocabulary has fewer lines than reserved tokens");
  }
  for (int i = 0; i < token::kNumReserved; ++i) {
    if (lines[i] != kReserved[i]) {
      throw std::invalid_argument("vocabulary line " + std::to_string(i + 1) + " must be " +
                                  std::string(kReserved[i]));
    }
  }
  Vocab v;
  for (std::size_t i = token::kNumReserved; i < lines.size(); ++i) {
    if (lines[i].empty()) throw std::invalid_argument("empty token on vocabulary line " + std::to_string(i + 1));
    v.push(lines[i]);
  }
  return v;
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_of(std::string_view token) const { return find(token).value_or(token::kUnk); }

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::encode(std::string_view text, bool add_bos_eos, SeqRole role) const {
  TokenSeq seq;
  seq.role = role;
  if (add_bos_eos) seq.ids.push_back(token::kBos);
  for (const auto& w : split_words(text)) seq.ids.push_back(id_of(w));
  if (add_bos_eos) seq.ids.push_back(token::kEos);
  return seq;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    const std::string& tok = token_of(id);
    if (id < token::kNumReserved) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace w2st
