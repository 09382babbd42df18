#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace w2st {

namespace token {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = 4;
inline constexpr int kNumReserved = 5;
}  // namespace token

enum class SeqRole { kInstruction, kStory };

struct TokenSeq {
  std::vector<int> ids;
  SeqRole role = SeqRole::kStory;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
};

/// Lowercased words of `text`; whitespace separates words and every ASCII
/// punctuation character becomes its own token.
std::vector<std::string> split_words(std::string_view text);
/// split_words joined by single spaces.
std::string normalize_text(std::string_view text);

/// Word-level vocabulary with PAD/BOS/EOS/UNK/SEP at ids 0..4.
class Vocab {
 public:
  /// A vocabulary holding only the reserved tokens.
  Vocab();

  /// Counts words over `corpus`, keeps those seen at least `min_count` times,
  /// orders them by descending frequency then lexicographically, and caps
  /// the total size (reserved tokens included) at `max_size`.
  static Vocab build(std::span<const std::string> corpus, int min_count, std::size_t max_size);

  /// Parses the one-token-per-line form written by serialize().
  static Vocab deserialize(std::string_view text);
  std::string serialize() const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  int id_of(std::string_view token) const;
  const std::string& token_of(int id) const;

  TokenSeq encode(std::string_view text, bool add_bos_eos,
                  SeqRole role = SeqRole::kStory) const;
  /// Joins non-reserved tokens with single spaces.
  std::string decode(std::span<const int> ids) const;
  std::string decode(const TokenSeq& seq) const { return decode(seq.ids); }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace w2st
