#include "icdc/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "icdc/errors.hpp"
#include "icdc/rng.hpp"

namespace icdc {

namespace {

const char* kCodeSpecials[CodeVocab::kNumSpecials] = {"[PAD]", "[MASK]", "[CLS]", "[UNK]"};
const char* kTextSpecials[TextVocab::kNumSpecials] = {"[PAD]", "[MASK]", "[CLS]", "[SEP]",
                                                      "[UNK]", "[POS]",  "[NEG]"};

bool alphabet_eligible(unsigned char c) {
  return c >= 0x20 && c != 0x7f && c != static_cast<unsigned char>(TextVocab::kWordEnd);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace

// ---------------------------------------------------------------------------
// CodeVocab
// ---------------------------------------------------------------------------

CodeVocab CodeVocab::build(const std::map<std::string, std::size_t>& code_counts, std::size_t min_frequency) {
  if (code_counts.empty()) throw DataError("CodeVocab::build: empty code multiset");
  if (min_frequency < 1) throw DataError("CodeVocab::build: min_frequency must be >= 1");

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [code, count] : code_counts) {
    if (count >= min_frequency) kept.emplace_back(code, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  CodeVocab v;
  for (const char* s : kCodeSpecials) v.id_to_token_.emplace_back(s);
  for (auto& [code, count] : kept) {
    v.token_to_id_[code] = static_cast<std::int32_t>(v.id_to_token_.size());
    v.id_to_token_.push_back(code);
  }
  return v;
}

std::int32_t CodeVocab::lookup(std::string_view code) const {
  auto it = token_to_id_.find(std::string(code));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool CodeVocab::contains(std::string_view code) const {
  return token_to_id_.count(std::string(code)) > 0;
}

const std::string& CodeVocab::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DataError("CodeVocab::token_of: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> CodeVocab::code_ids() const {
  std::vector<std::int32_t> ids;
  for (std::size_t i = kNumSpecials; i < id_to_token_.size(); ++i) ids.push_back(static_cast<std::int32_t>(i));
  return ids;
}

void CodeVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("CodeVocab::save: cannot open " + path.string());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
}

CodeVocab CodeVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("CodeVocab::load: cannot open " + path.string());
  CodeVocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("CodeVocab::load: " + path.string() + ":" + std::to_string(line_no) + ": missing tab");
    }
    const std::string token = line.substr(0, tab);
    if (std::stoul(line.substr(tab + 1)) != v.id_to_token_.size()) {
      throw DataError("CodeVocab::load: " + path.string() + ":" + std::to_string(line_no) + ": ids not contiguous");
    }
    v.id_to_token_.push_back(token);
  }
  if (v.id_to_token_.size() < kNumSpecials) throw DataError("CodeVocab::load: file too short for specials");
  for (std::int32_t i = 0; i < kNumSpecials; ++i) {
    if (v.id_to_token_[static_cast<std::size_t>(i)] != kCodeSpecials[i]) {
      throw DataError("CodeVocab::load: special id " + std::to_string(i) + " mismatch");
    }
  }
  for (std::size_t i = kNumSpecials; i < v.id_to_token_.size(); ++i) {
    v.token_to_id_[v.id_to_token_[i]] = static_cast<std::int32_t>(i);
  }
  return v;
}

// ---------------------------------------------------------------------------
// TextVocab
// ---------------------------------------------------------------------------

namespace {

using Symbols = std::vector<std::string>;

Symbols word_symbols(std::string_view word) {
  Symbols syms;
  for (char c : word) {
    syms.push_back(alphabet_eligible(static_cast<unsigned char>(c)) ? std::string(1, c)
                                                                    : std::string("[UNK]"));
  }
  syms.push_back(std::string(1, TextVocab::kWordEnd));
  return syms;
}

// Merge every adjacent (left, right) occurrence, leftmost first.
void apply_merge(Symbols& syms, const std::string& left, const std::string& right) {
  Symbols out;
  out.reserve(syms.size());
  std::size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(syms[i]);
      ++i;
    }
  }
  syms = std::move(out);
}

}  // namespace

TextVocab TextVocab::train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
  std::map<std::string, std::size_t> word_counts;
  std::map<std::string, std::size_t> alphabet;  // single-char symbols, sorted
  bool any_text = false;
  for (const auto& doc : corpus) {
    for (auto& w : split_words(doc)) {
      any_text = true;
      ++word_counts[w];
      for (char c : w) {
        if (alphabet_eligible(static_cast<unsigned char>(c))) ++alphabet[std::string(1, c)];
      }
    }
  }
  if (!any_text) throw DataError("TextVocab::train_bpe: empty corpus");

  TextVocab v;
  for (const char* s : kTextSpecials) v.id_to_token_.emplace_back(s);
  for (const auto& [sym, count] : alphabet) v.id_to_token_.push_back(sym);
  v.id_to_token_.emplace_back(1, kWordEnd);

  if (vocab_size < v.id_to_token_.size()) {
    throw DataError("TextVocab::train_bpe: vocab_size " + std::to_string(vocab_size) +
                    " below alphabet + specials (" + std::to_string(v.id_to_token_.size()) + ")");
  }

  std::vector<std::pair<Symbols, std::size_t>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, count] : word_counts) words.emplace_back(word_symbols(w), count);

  while (v.id_to_token_.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [syms, count] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        if (syms[i] == "[UNK]" || syms[i + 1] == "[UNK]") continue;
        pair_counts[{syms[i], syms[i + 1]}] += count;
      }
    }
    if (pair_counts.empty()) break;
    // Highest count wins; ties go to the lexicographically smallest pair,
    // which the ordered map yields first.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    v.merges_.emplace_back(left, right);
    v.id_to_token_.push_back(left + right);
    for (auto& [syms, count] : words) apply_merge(syms, left, right);
  }

  v.rebuild_indexes();
  return v;
}

void TextVocab::rebuild_indexes() {
  symbol_to_id_.clear();
  for (std::size_t i = kNumSpecials; i < id_to_token_.size(); ++i) {
    symbol_to_id_.emplace(id_to_token_[i], static_cast<std::int32_t>(i));
  }
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) merge_rank_[merges_[r]] = r;
}

std::vector<std::int32_t> TextVocab::encode_word(std::string_view word) const {
  Symbols syms = word_symbols(word);
  while (true) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find({syms[i], syms[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == merges_.size()) break;
    apply_merge(syms, merges_[best_rank].first, merges_[best_rank].second);
  }
  std::vector<std::int32_t> ids;
  ids.reserve(syms.size());
  for (const auto& s : syms) {
    if (s == "[UNK]") {
      ids.push_back(kUnk);
      continue;
    }
    auto it = symbol_to_id_.find(s);
    ids.push_back(it == symbol_to_id_.end() ? kUnk : it->second);
  }
  return ids;
}

std::vector<std::int32_t> TextVocab::encode(std::string_view text, std::size_t max_len) const {
  if (max_len < 2) throw DataError("TextVocab::encode: max_len must be >= 2");
  std::vector<std::int32_t> ids = {kCls};
  for (const auto& w : split_words(text)) {
    for (std::int32_t id : encode_word(w)) {
      ids.push_back(id);
      if (ids.size() == max_len) return ids;
    }
  }
  return ids;
}

std::string TextVocab::decode(const std::vector<std::int32_t>& ids) const {
  std::string text;
  for (std::int32_t id : ids) {
    if (id < kNumSpecials) continue;
    text += token_of(id);
  }
  std::string out;
  out.reserve(text.size());
  for (char c : text) out.push_back(c == kWordEnd ? ' ' : c);
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

const std::string& TextVocab::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DataError("TextVocab::token_of: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

void TextVocab::save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
  std::ofstream out(vocab_path);
  if (!out) throw DataError("TextVocab::save: cannot open " + vocab_path.string());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
  std::ofstream mout(merges_path);
  if (!mout) throw DataError("TextVocab::save: cannot open " + merges_path.string());
  for (const auto& [l, r] : merges_) mout << l << ' ' << r << '\n';
}

TextVocab TextVocab::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  std::ifstream in(vocab_path);
  if (!in) throw DataError("TextVocab::load: cannot open " + vocab_path.string());
  TextVocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("TextVocab::load: " + vocab_path.string() + ":" + std::to_string(line_no) + ": missing tab");
    }
    if (std::stoul(line.substr(tab + 1)) != v.id_to_token_.size()) {
      throw DataError("TextVocab::load: " + vocab_path.string() + ":" + std::to_string(line_no) +
                      ": ids not contiguous");
    }
    v.id_to_token_.push_back(line.substr(0, tab));
  }
  if (v.id_to_token_.size() < kNumSpecials) throw DataError("TextVocab::load: file too short for specials");
  for (std::int32_t i = 0; i < kNumSpecials; ++i) {
    if (v.id_to_token_[static_cast<std::size_t>(i)] != kTextSpecials[i]) {
      throw DataError("TextVocab::load: special id " + std::to_string(i) + " mismatch");
    }
  }

  std::ifstream min(merges_path);
  if (!min) throw DataError("TextVocab::load: cannot open " + merges_path.string());
  line_no = 0;
  while (std::getline(min, line)) {
    ++line_no;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
      throw DataError("TextVocab::load: " + merges_path.string() + ":" + std::to_string(line_no) +
                      ": expected 'left right'");
    }
    v.merges_.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  v.rebuild_indexes();
  return v;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("hash_file: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64(ss.str());
}

}  // namespace icdc
