#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mote/config.hpp"

namespace mote {

// Lowercased word tokenization on whitespace and punctuation.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(char(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// Word vocabulary with fixed special ids 0..4. Construction order is
// frequency-descending, ties broken lexicographically, so the same corpus
// always yields the same id assignment.
class Vocab {
 public:
  static const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> s = {"[CLS]", "[SEP]", "[MASK]",
                                               "[PAD]", "[UNK]"};
    return s;
  }

  static Vocab build(const std::vector<std::string>& texts, int max_size) {
    if (texts.empty()) throw InputError("cannot build vocabulary from empty corpus");
    if (max_size <= ModelConfig::kNumSpecialTokens)
      throw ConfigError("vocabulary max_size must exceed the special token count");
    std::map<std::string, long> freq;
    for (const std::string& t : texts)
      for (const std::string& w : split_words(t)) ++freq[w];
    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const std::string& s : special_tokens()) v.push(s);
    for (const auto& it : items) {
      if (int(v.id_to_token_.size()) >= max_size) break;
      v.push(it.first);
    }
    return v;
  }

  int size() const { return int(id_to_token_.size()); }

  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw InputError(strfmt("token id %d out of range", id));
    return id_to_token_[id];
  }

  TokenSequence tokenize(const std::string& text, TextKind kind,
                         int max_seq_len) const {
    TokenSequence seq;
    seq.kind = kind;
    seq.ids.push_back(kClsId);
    for (const std::string& w : split_words(text)) {
      if (int(seq.ids.size()) >= max_seq_len - 1) break;
      seq.ids.push_back(id_of(w));
    }
    seq.ids.push_back(kSepId);
    return seq;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < ModelConfig::kNumSpecialTokens) continue;
      if (!out.empty()) out.push_back(' ');
      out += token_of(id);
    }
    return out;
  }

  void save(std::ostream& os) const {
    for (const std::string& t : id_to_token_) os << t << "\n";
  }

  static Vocab parse(std::istream& is) {
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      v.push(line);
    }
    if (v.size() < ModelConfig::kNumSpecialTokens)
      throw ParseError("vocabulary file too small");
    for (int i = 0; i < ModelConfig::kNumSpecialTokens; ++i)
      if (v.id_to_token_[i] != special_tokens()[i])
        throw ParseError("vocabulary file missing special tokens");
    return v;
  }

 private:
  void push(const std::string& t) {
    token_to_id_[t] = int(id_to_token_.size());
    id_to_token_.push_back(t);
  }

  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
};

}  // namespace mote
