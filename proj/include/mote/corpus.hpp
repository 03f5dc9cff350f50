#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mote/represent.hpp"

namespace mote {

struct CorpusRecord {
  std::string id;
  std::string text;
  std::vector<std::string> pseudo_queries;
};

struct QueryRecord {
  std::string id;
  std::string text;
};

// qid -> docid -> relevance grade
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RunEntry {
  std::string doc_id;
  double score = 0.0;
};

// qid -> ranked results, best first
using RunFile = std::map<std::string, std::vector<RunEntry>>;

struct Triple {
  std::string query_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;
};

// ---------------------------------------------------------------------------
// Atomic text output: write to a temp file, then rename into place.
// ---------------------------------------------------------------------------

inline void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << content;
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : s) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

// ---------------------------------------------------------------------------
// Corpus: one record per line, tab-separated:
//   passage_id \t passage_text [\t pseudo_query]...
// ---------------------------------------------------------------------------

inline std::string format_corpus(const std::vector<CorpusRecord>& recs) {
  std::ostringstream os;
  for (const CorpusRecord& r : recs) {
    os << r.id << '\t' << r.text;
    for (const std::string& q : r.pseudo_queries) os << '\t' << q;
    os << '\n';
  }
  return os.str();
}

inline std::vector<CorpusRecord> parse_corpus(const std::string& content) {
  std::vector<CorpusRecord> out;
  std::vector<std::string> lines = split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_on(lines[i], '\t');
    if (f.size() < 2)
      throw ParseError(strfmt("corpus line %zu: expected id<TAB>text", i + 1));
    CorpusRecord r;
    r.id = f[0];
    r.text = f[1];
    r.pseudo_queries.assign(f.begin() + 2, f.end());
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_queries(const std::vector<QueryRecord>& recs) {
  std::ostringstream os;
  for (const QueryRecord& r : recs) os << r.id << '\t' << r.text << '\n';
  return os.str();
}

inline std::vector<QueryRecord> parse_queries(const std::string& content) {
  std::vector<QueryRecord> out;
  std::vector<std::string> lines = split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_on(lines[i], '\t');
    if (f.size() != 2)
      throw ParseError(strfmt("queries line %zu: expected id<TAB>text", i + 1));
    out.push_back({f[0], f[1]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Qrels: TREC four-column "qid 0 docid rel".
// ---------------------------------------------------------------------------

inline std::string format_qrels(const Qrels& qrels) {
  std::ostringstream os;
  for (const auto& q : qrels)
    for (const auto& d : q.second)
      os << q.first << " 0 " << d.first << ' ' << d.second << '\n';
  return os.str();
}

inline Qrels parse_qrels(const std::string& content) {
  Qrels out;
  std::vector<std::string> lines = split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    std::string qid, zero, docid;
    int rel;
    if (!(is >> qid >> zero >> docid >> rel))
      throw ParseError(strfmt("qrels line %zu: expected qid 0 docid rel", i + 1));
    out[qid][docid] = rel;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run files: TREC six-column "qid Q0 docid rank score tag", rank from 1.
// ---------------------------------------------------------------------------

inline std::string format_run(const RunFile& run, const std::string& tag) {
  std::ostringstream os;
  for (const auto& q : run) {
    int rank = 1;
    for (const RunEntry& e : q.second) {
      char score[64];
      std::snprintf(score, sizeof(score), "%.6f", e.score);
      os << q.first << " Q0 " << e.doc_id << ' ' << rank++ << ' ' << score
         << ' ' << tag << '\n';
    }
  }
  return os.str();
}

inline RunFile parse_run(const std::string& content) {
  RunFile out;
  std::vector<std::string> lines = split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    std::string qid, q0, docid, tag;
    int rank;
    double score;
    if (!(is >> qid >> q0 >> docid >> rank >> score >> tag))
      throw ParseError(strfmt("run line %zu: expected six columns", i + 1));
    out[qid].push_back({docid, score});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training triples: "qid \t pos_id \t neg1,neg2,..."
// ---------------------------------------------------------------------------

inline std::string format_triples(const std::vector<Triple>& triples) {
  std::ostringstream os;
  for (const Triple& t : triples) {
    os << t.query_id << '\t' << t.positive_id << '\t';
    for (size_t i = 0; i < t.negative_ids.size(); ++i) {
      if (i) os << ',';
      os << t.negative_ids[i];
    }
    os << '\n';
  }
  return os.str();
}

inline std::vector<Triple> parse_triples(const std::string& content) {
  std::vector<Triple> out;
  std::vector<std::string> lines = split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_on(lines[i], '\t');
    if (f.size() != 3)
      throw ParseError(strfmt("triples line %zu: expected three fields", i + 1));
    Triple t;
    t.query_id = f[0];
    t.positive_id = f[1];
    for (const std::string& n : split_on(f[2], ','))
      if (!n.empty()) t.negative_ids.push_back(n);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat key=value config files. Every key must be consumed; unknown keys are
// rejected when the reader finishes.
// ---------------------------------------------------------------------------

class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& content) {
    KvConfig cfg;
    std::vector<std::string> lines = split_lines(content);
    for (size_t i = 0; i < lines.size(); ++i) {
      std::string line = lines[i];
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      size_t a = line.find_first_not_of(" \t");
      if (a == std::string::npos) continue;
      size_t b = line.find_last_not_of(" \t");
      line = line.substr(a, b - a + 1);
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError(strfmt("config line %zu: expected key=value", i + 1));
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      auto trim = [](std::string s) {
        size_t x = s.find_first_not_of(" \t");
        if (x == std::string::npos) return std::string();
        size_t y = s.find_last_not_of(" \t");
        return s.substr(x, y - x + 1);
      };
      key = trim(key);
      val = trim(val);
      if (key.empty()) throw ParseError(strfmt("config line %zu: empty key", i + 1));
      if (cfg.kv_.count(key))
        throw ParseError(strfmt("config line %zu: duplicate key %s", i + 1, key.c_str()));
      cfg.kv_[key] = val;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) { return parse(read_file(path)); }

  void set(const std::string& key, const std::string& val) { kv_[key] = val; }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    touched_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  long get_int(const std::string& key, long dflt) {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ParseError("config key " + key + ": not an integer: " + it->second);
    }
  }
  double get_double(const std::string& key, double dflt) {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ParseError("config key " + key + ": not a number: " + it->second);
    }
  }
  bool get_bool(const std::string& key, bool dflt) {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ParseError("config key " + key + ": not a boolean: " + it->second);
  }

  // Throws if the file contained keys nothing consumed.
  void reject_unknown() const {
    for (const auto& kv : kv_)
      if (!touched_.count(kv.first))
        throw ConfigError("unknown config key: " + kv.first);
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> touched_;
};

// ---------------------------------------------------------------------------
// Embedding dump: header "count dim", then per text
//   id \t kind \t dense values \t token:weight entries
// ---------------------------------------------------------------------------

struct DumpRecord {
  std::string id;
  TextKind kind = TextKind::Passage;
  DenseVec dense;
  SparseVec sparse;
};

inline std::string format_dump(const std::vector<DumpRecord>& recs, int dim) {
  std::ostringstream os;
  os << recs.size() << ' ' << dim << '\n';
  for (const DumpRecord& r : recs) {
    os << r.id << '\t' << kind_name(r.kind) << '\t';
    for (size_t i = 0; i < r.dense.size(); ++i) {
      if (i) os << ' ';
      os << dtos(r.dense[i]);
    }
    os << '\t';
    for (size_t i = 0; i < r.sparse.entries.size(); ++i) {
      if (i) os << ' ';
      os << r.sparse.entries[i].first << ':' << dtos(r.sparse.entries[i].second);
    }
    os << '\n';
  }
  return os.str();
}

inline std::vector<DumpRecord> parse_dump(const std::string& content) {
  std::vector<std::string> lines = split_lines(content);
  if (lines.empty()) throw ParseError("dump line 1: missing header");
  std::istringstream hdr(lines[0]);
  size_t count;
  int dim;
  if (!(hdr >> count >> dim))
    throw ParseError("dump line 1: expected 'count dim' header");
  std::vector<DumpRecord> out;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_on(lines[i], '\t');
    if (f.size() != 4)
      throw ParseError(strfmt("dump line %zu: expected four fields", i + 1));
    DumpRecord r;
    r.id = f[0];
    if (f[1] == "Q")
      r.kind = TextKind::Query;
    else if (f[1] == "P")
      r.kind = TextKind::Passage;
    else
      throw ParseError(strfmt("dump line %zu: kind must be Q or P", i + 1));
    std::istringstream ds(f[2]);
    double x;
    while (ds >> x) r.dense.push_back(x);
    if (int(r.dense.size()) != dim)
      throw ParseError(strfmt("dump line %zu: expected %d dense values", i + 1, dim));
    if (!f[3].empty()) {
      std::istringstream ss(f[3]);
      std::string ent;
      while (ss >> ent) {
        size_t colon = ent.find(':');
        if (colon == std::string::npos)
          throw ParseError(strfmt("dump line %zu: bad sparse entry %s", i + 1, ent.c_str()));
        int tok = std::stoi(ent.substr(0, colon));
        double w = std::stod(ent.substr(colon + 1));
        r.sparse.entries.push_back({tok, w});
      }
    }
    out.push_back(std::move(r));
  }
  if (out.size() != count)
    throw ParseError(strfmt("dump: header count %zu but %zu records", count, out.size()));
  return out;
}

}  // namespace mote
