#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace icdc {

// Diagnostic-code vocabulary: every code string is a single token. Ids are
// contiguous, specials first, then codes ordered by (count desc, code asc)
// so a rebuild from the same multiset is identical. Codes below the build
// cutoff resolve to UNK.
class CodeVocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kMask = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumSpecials = 4;

  static CodeVocab build(const std::map<std::string, std::size_t>& code_counts, std::size_t min_frequency);

  std::int32_t lookup(std::string_view code) const;
  const std::string& token_of(std::int32_t id) const;
  bool contains(std::string_view code) const;
  std::size_t size() const { return id_to_token_.size(); }

  // Ids of real codes (excludes specials), in id order.
  std::vector<std::int32_t> code_ids() const;

  void save(const std::filesystem::path& path) const;
  static CodeVocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

// Byte-pair-encoding text vocabulary. Merges are learned from word-internal
// adjacent pairs, highest count first, ties broken by the lexicographically
// smallest (left, right) pair. Words end with an explicit end-of-word marker
// symbol (the single character U+001E) so decoding can restore spaces; the
// marker character itself is barred from the alphabet, as are control
// characters, which encode to UNK.
class TextVocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kMask = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kUnk = 4;
  static constexpr std::int32_t kPos = 5;  // verbalizer "present"
  static constexpr std::int32_t kNeg = 6;  // verbalizer "absent"
  static constexpr std::int32_t kNumSpecials = 7;
  static constexpr char kWordEnd = '\x1e';

  static TextVocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size);

  // CLS-prefixed ids, truncated to max_len (>= 2).
  std::vector<std::int32_t> encode(std::string_view text, std::size_t max_len) const;
  // Ids for one whitespace-free word, no CLS, no truncation.
  std::vector<std::int32_t> encode_word(std::string_view word) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;

  std::size_t size() const { return id_to_token_.size(); }
  const std::string& token_of(std::int32_t id) const;
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;
  static TextVocab load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

 private:
  void rebuild_indexes();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> symbol_to_id_;  // non-special symbols only
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

// FNV-1a of a whole file, used to tie checkpoints to vocabulary artifacts.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace icdc
