#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mote/corpus.hpp"
#include "mote/rng.hpp"

namespace mote {

// Generator settings mirroring the corpus traits the model is meant to
// separate: long declarative passages, short interrogative queries that share
// content tokens with their source passage.
struct SyntheticSpec {
  int num_passages = 1000;
  double passage_len_mean = 56.0;
  double query_len_mean = 6.0;
  int vocab_size = 2000;  // distinct content words
  int topic_count = 20;
  double topic_word_fraction = 0.8;  // rest drawn from the global distribution
  double zipf_exponent = 1.1;       // word-frequency steepness
  int64_t seed = 42;
  int pseudo_queries_per_passage = 5;

  void validate() const {
    if (num_passages < 1) throw ConfigError("num_passages must be positive");
    if (passage_len_mean < 1.0 || query_len_mean < 1.0)
      throw ConfigError("length means must be at least 1");
    if (vocab_size < 1) throw ConfigError("vocab_size must be positive");
    if (topic_count < 1 || topic_count > num_passages)
      throw ConfigError("topic_count must be in [1, num_passages]");
    if (topic_word_fraction < 0.0 || topic_word_fraction > 1.0)
      throw ConfigError("topic_word_fraction must be in [0, 1]");
    if (zipf_exponent < 0.0) throw ConfigError("zipf_exponent must be non-negative");
    if (pseudo_queries_per_passage < 0)
      throw ConfigError("pseudo_queries_per_passage must be non-negative");
  }
};

struct SyntheticData {
  std::vector<CorpusRecord> corpus;  // pseudo-queries attached per record
  std::vector<QueryRecord> queries;  // one evaluation query per passage
  Qrels qrels;
};

namespace detail {

inline std::string synth_word(int i) {
  static const char* syl[20] = {"ba", "be", "bi", "bo", "bu", "da", "de",
                                "di", "do", "du", "ka", "ke", "ki", "ko",
                                "ku", "ma", "me", "mi", "mo", "mu"};
  std::string w = syl[(i / 400) % 20];
  w += syl[(i / 20) % 20];
  w += syl[i % 20];
  return w;
}

inline const std::vector<std::string>& question_prefixes() {
  static const std::vector<std::string> p = {"what", "how",  "where", "why",
                                             "when", "which", "who",  "does",
                                             "is",   "can"};
  return p;
}

// Zipfian cumulative weights: P(rank r) proportional to 1/(r+1)^s.
inline std::vector<double> zipf_cumulative(int n, double s = 1.2) {
  std::vector<double> cum(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += 1.0 / std::pow(double(i + 1), s);
    cum[i] = total;
  }
  return cum;
}

inline int sample_cumulative(const std::vector<double>& cum, Rng& rng) {
  double u = rng.uniform() * cum.back();
  auto it = std::upper_bound(cum.begin(), cum.end(), u);
  if (it == cum.end()) --it;
  return int(it - cum.begin());
}

// Samples `want` distinct word positions of the passage, keeping passage
// order, so every query shares content tokens with its source. Evaluation
// queries favor informative (globally rare) words the way user queries do;
// pseudo-query spans keep the passage's own word statistics.
inline std::string make_query(const std::vector<std::string>& words,
                              const std::vector<int>& word_ids,
                              double len_mean, bool informative, Rng& rng) {
  int want = std::max(1, rng.poisson(len_mean - 1.0));
  want = std::min(want, int(words.size()));
  std::vector<int> positions;
  if (informative) {
    std::vector<double> cum(words.size());
    double total = 0.0;
    for (size_t i = 0; i < words.size(); ++i) {
      total += std::pow(double(word_ids[i] + 1), 0.7);
      cum[i] = total;
    }
    std::vector<bool> taken(words.size(), false);
    while (int(positions.size()) < want) {
      int pos = sample_cumulative(cum, rng);
      if (!taken[pos]) {
        taken[pos] = true;
        positions.push_back(pos);
      }
    }
  } else {
    positions.resize(words.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = int(i);
    rng.shuffle(positions);
    positions.resize(want);
  }
  std::sort(positions.begin(), positions.end());
  std::string q = question_prefixes()[rng.below(question_prefixes().size())];
  for (int p : positions) {
    q.push_back(' ');
    q += words[p];
  }
  return q;
}

}  // namespace detail

// Topic-clustered passages with Poisson lengths and Zipfian word frequencies,
// one interrogative evaluation query per passage, and qrels marking the
// source passage relevant. topic_word_fraction of the tokens come from the
// passage's topic block, the rest from the global distribution.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng::substream(uint64_t(spec.seed), 0x73796e74u);  // synth stream
  int block = std::max(1, spec.vocab_size / spec.topic_count);
  std::vector<double> global_cum =
      detail::zipf_cumulative(spec.vocab_size, spec.zipf_exponent);
  std::vector<std::vector<double>> block_cum;
  for (int t = 0; t < spec.topic_count; ++t) {
    int lo = std::min(t * block, spec.vocab_size - 1);
    int hi = std::min(lo + block, spec.vocab_size);
    block_cum.push_back(detail::zipf_cumulative(hi - lo, spec.zipf_exponent));
  }
  SyntheticData out;
  for (int i = 0; i < spec.num_passages; ++i) {
    int topic = i % spec.topic_count;
    int lo = std::min(topic * block, spec.vocab_size - 1);
    int len = std::max(3, rng.poisson(spec.passage_len_mean));
    std::vector<std::string> words;
    std::vector<int> word_ids;
    std::string text;
    for (int w = 0; w < len; ++w) {
      int word_id;
      if (rng.uniform() < spec.topic_word_fraction)
        word_id = lo + detail::sample_cumulative(block_cum[topic], rng);
      else
        word_id = detail::sample_cumulative(global_cum, rng);
      words.push_back(detail::synth_word(word_id));
      word_ids.push_back(word_id);
      if (w) text.push_back(' ');
      text += words.back();
    }
    CorpusRecord rec;
    rec.id = strfmt("p%05d", i);
    rec.text = text;
    QueryRecord q;
    q.id = strfmt("q%05d", i);
    q.text = detail::make_query(words, word_ids, spec.query_len_mean,
                                /*informative=*/true, rng);
    out.qrels[q.id][rec.id] = 1;
    for (int j = 0; j < spec.pseudo_queries_per_passage; ++j)
      rec.pseudo_queries.push_back(detail::make_query(
          words, word_ids, spec.query_len_mean, /*informative=*/false, rng));
    out.corpus.push_back(std::move(rec));
    out.queries.push_back(std::move(q));
  }
  return out;
}

}  // namespace mote
