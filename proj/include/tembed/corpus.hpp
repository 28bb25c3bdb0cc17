#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tembed/csv.hpp"
#include "tembed/errors.hpp"

namespace tembed::corpus {

struct RawDocument {
  std::string doc_id;
  std::string text;
  int year = 0;
};

struct PreprocessConfig {
  bool strip_html = true;
  bool remove_bracketed = true;
  bool expand_contractions = true;
  bool remove_stopwords = true;
  bool lowercase = true;
  bool regex_cleanup = true;
  std::unordered_set<std::string> stopword_list;               // lowercase entries
  std::unordered_map<std::string, std::string> contraction_table;  // keys contain '
};

struct TimeSlice {
  std::string decade_label;  // "YYY0", or "compass" for the concatenation
  std::vector<std::vector<std::string>> sentences;
};

namespace detail {

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

// Tags are recognized only when '<' is followed by a letter, '/' or '!', so a
// stray less-than sign in running text is left alone. A handful of common
// entities decode to their characters; everything else survives untouched and
// is handled by the later cleanup step.
inline std::string strip_html(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '<' && i + 1 < text.size() &&
        (std::isalpha(static_cast<unsigned char>(text[i + 1])) ||
         text[i + 1] == '/' || text[i + 1] == '!')) {
      std::size_t close = text.find('>', i + 1);
      if (close != std::string::npos) {
        out.push_back(' ');
        i = close;
        continue;
      }
    }
    if (c == '&') {
      static const std::pair<const char*, const char*> kEntities[] = {
          {"&nbsp;", " "}, {"&amp;", "&"}, {"&lt;", "<"},
          {"&gt;", ">"},   {"&quot;", "\""}, {"&apos;", "'"},
          {"&#39;", "'"}};
      bool matched = false;
      for (const auto& [ent, repl] : kEntities) {
        std::size_t n = std::char_traits<char>::length(ent);
        if (text.compare(i, n, ent) == 0) {
          out += repl;
          i += n - 1;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out.push_back(c);
  }
  return out;
}

// Removes well-formed, non-nested [ ... ] spans. An unmatched '[' stays put
// and falls to the cleanup step.
inline std::string remove_bracketed(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '[') {
      std::size_t close = text.find(']', i + 1);
      if (close != std::string::npos) {
        out.push_back(' ');
        i = close;
        continue;
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

// Per whitespace token: strip leading/trailing punctuation, look the core up
// case-insensitively, splice the expansion back in. Expansions are emitted as
// stored in the table (lowercase).
inline std::string expand_contractions(
    const std::string& text,
    const std::unordered_map<std::string, std::string>& table) {
  // normalize the curly apostrophe U+2019 first
  std::string norm;
  norm.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xE2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      norm.push_back('\'');
      i += 2;
    } else {
      norm.push_back(text[i]);
    }
  }

  std::string out;
  out.reserve(norm.size());
  std::size_t i = 0;
  while (i < norm.size()) {
    if (is_space(norm[i])) {
      out.push_back(norm[i]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < norm.size() && !is_space(norm[j])) ++j;
    std::string token = norm.substr(i, j - i);

    std::size_t lo = 0, hi = token.size();
    while (lo < hi && !is_word_char(token[lo])) ++lo;
    while (hi > lo && !is_word_char(token[hi - 1])) --hi;
    std::string core = token.substr(lo, hi - lo);

    auto it = table.find(ascii_lower(core));
    if (it != table.end()) {
      out += token.substr(0, lo);
      out += it->second;
      out += token.substr(hi);
    } else {
      out += token;
    }
    i = j;
  }
  return out;
}

// Drop every character outside letters/digits/apostrophe/space, then collapse
// whitespace runs and trim.
inline std::string regex_cleanup(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '\'';
    if (keep) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    } else {
      pending_space = true;
    }
  }
  return out;
}

inline std::string remove_stopwords(
    const std::string& text, const std::unordered_set<std::string>& stopwords) {
  std::istringstream is(text);
  std::string tok, out;
  while (is >> tok) {
    if (stopwords.count(ascii_lower(tok))) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace detail

// Cleaning pipeline, fixed step order:
//   strip HTML -> remove bracketed spans -> expand contractions -> lowercase
//   -> cleanup (keep letters/digits/apostrophe/space, collapse whitespace)
//   -> remove stopwords
// Disabled flags skip their step. Idempotent for any flag combination.
inline std::string clean_text(const std::string& text,
                              const PreprocessConfig& cfg) {
  std::string s = text;
  if (cfg.strip_html) s = detail::strip_html(s);
  if (cfg.remove_bracketed) s = detail::remove_bracketed(s);
  if (cfg.expand_contractions)
    s = detail::expand_contractions(s, cfg.contraction_table);
  if (cfg.lowercase) s = detail::ascii_lower(s);
  if (cfg.regex_cleanup) s = detail::regex_cleanup(s);
  if (cfg.remove_stopwords)
    s = detail::remove_stopwords(s, cfg.stopword_list);
  return s;
}

// Sentence boundary: a run of [.?!] followed by whitespace (or end of text).
// Applied to the raw text, before cleaning.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    cur.push_back(c);
    if (c == '.' || c == '?' || c == '!') {
      std::size_t j = i + 1;
      while (j < text.size() &&
             (text[j] == '.' || text[j] == '?' || text[j] == '!')) {
        cur.push_back(text[j]);
        ++j;
      }
      if (j >= text.size() || detail::is_space(text[j])) {
        sentences.push_back(cur);
        cur.clear();
      }
      i = j - 1;
    }
  }
  if (cur.find_first_not_of(" \t\r\n") != std::string::npos)
    sentences.push_back(cur);
  return sentences;
}

inline std::vector<std::string> tokenize(const std::string& cleaned) {
  std::istringstream is(cleaned);
  std::vector<std::string> toks;
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

inline std::string decade_label(int year) {
  return std::to_string(year / 10 * 10);
}

inline void validate_document(const RawDocument& doc) {
  if (doc.doc_id.empty())
    throw InvalidArgError("document with empty doc_id");
  if (doc.year < 1500 || doc.year > 2100)
    throw InvalidArgError("document '" + doc.doc_id + "' has year " +
                          std::to_string(doc.year) +
                          " outside [1500, 2100]");
}

// One TimeSlice per non-empty decade, ascending by label. Within a slice,
// sentences follow (doc_id, document order). Splitting happens on the raw
// text; cleaning and whitespace tokenization afterwards; empty sentences are
// dropped.
inline std::vector<TimeSlice> slice_by_decade(std::vector<RawDocument> docs,
                                              const PreprocessConfig& cfg) {
  std::unordered_set<std::string> seen_ids;
  for (const auto& d : docs) {
    validate_document(d);
    if (!seen_ids.insert(d.doc_id).second)
      throw InvalidArgError("duplicate doc_id '" + d.doc_id + "'");
  }
  std::stable_sort(docs.begin(), docs.end(),
                   [](const RawDocument& a, const RawDocument& b) {
                     return a.doc_id < b.doc_id;
                   });

  std::unordered_map<std::string, std::size_t> slice_index;
  std::vector<TimeSlice> slices;
  for (const auto& doc : docs) {
    const std::string label = decade_label(doc.year);
    for (const auto& raw_sentence : split_sentences(doc.text)) {
      auto tokens = tokenize(clean_text(raw_sentence, cfg));
      if (tokens.empty()) continue;
      auto it = slice_index.find(label);
      if (it == slice_index.end()) {
        it = slice_index.emplace(label, slices.size()).first;
        slices.push_back(TimeSlice{label, {}});
      }
      slices[it->second].sentences.push_back(std::move(tokens));
    }
  }
  std::sort(slices.begin(), slices.end(),
            [](const TimeSlice& a, const TimeSlice& b) {
              return a.decade_label.size() != b.decade_label.size()
                         ? a.decade_label.size() < b.decade_label.size()
                         : a.decade_label < b.decade_label;
            });
  return slices;
}

// Sentences of all slices in ascending decade order; the result is the
// compass corpus.
inline TimeSlice concat_slices(std::vector<TimeSlice> slices) {
  if (slices.empty())
    throw InvalidArgError("concat_slices: need at least one slice");
  std::sort(slices.begin(), slices.end(),
            [](const TimeSlice& a, const TimeSlice& b) {
              return a.decade_label.size() != b.decade_label.size()
                         ? a.decade_label.size() < b.decade_label.size()
                         : a.decade_label < b.decade_label;
            });
  TimeSlice out{"compass", {}};
  for (auto& s : slices)
    for (auto& sent : s.sentences) out.sentences.push_back(std::move(sent));
  return out;
}

// ---------------------------------------------------------------------------
// file interfaces

// one lowercase token per line; '#' lines are comments
inline std::unordered_set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("cannot open stopword list: " + path);
  std::unordered_set<std::string> set;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    set.insert(detail::ascii_lower(line));
  }
  return set;
}

// tab-separated "contraction<TAB>expansion" pairs
inline std::unordered_map<std::string, std::string> load_contractions(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("cannot open contraction table: " + path);
  std::unordered_map<std::string, std::string> table;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("contraction table line without tab: " + line);
    std::string key = detail::ascii_lower(line.substr(0, tab));
    if (key.find('\'') == std::string::npos)
      throw FormatError("contraction key without apostrophe: " + key);
    table[key] = line.substr(tab + 1);
  }
  return table;
}

// Manifest CSV with header doc_id,year,path; paths are resolved relative to
// the manifest's directory. Each referenced file is one UTF-8 document.
inline std::vector<RawDocument> read_manifest(const std::string& manifest_path) {
  auto rows = csv::read_file(manifest_path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"doc_id", "year", "path"})
    throw FormatError("manifest must start with header doc_id,year,path: " +
                      manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<RawDocument> docs;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3)
      throw FormatError("manifest row " + std::to_string(r) +
                        ": expected 3 fields");
    RawDocument doc;
    doc.doc_id = rows[r][0];
    try {
      std::size_t pos = 0;
      doc.year = std::stoi(rows[r][1], &pos);
      if (pos != rows[r][1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw InvalidArgError("manifest row " + std::to_string(r) +
                            ": unusable year '" + rows[r][1] + "'");
    }
    validate_document({doc.doc_id, "", doc.year});
    auto file_path = base / rows[r][2];
    std::ifstream in(file_path, std::ios::binary);
    if (!in)
      throw InvalidArgError("manifest row " + std::to_string(r) +
                            ": cannot open " + file_path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    doc.text = ss.str();
    docs.push_back(std::move(doc));
  }
  return docs;
}

// one sentence per line, tokens space-separated
inline void write_slice(const TimeSlice& slice, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgError("cannot write slice file: " + path);
  for (const auto& sent : slice.sentences) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) out << ' ';
      out << sent[i];
    }
    out << '\n';
  }
}

inline TimeSlice read_slice_file(const std::string& path,
                                 std::string label = "") {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("cannot open slice file: " + path);
  if (label.empty()) label = std::filesystem::path(path).stem().string();
  TimeSlice slice{std::move(label), {}};
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) slice.sentences.push_back(std::move(toks));
  }
  return slice;
}

}  // namespace tembed::corpus
