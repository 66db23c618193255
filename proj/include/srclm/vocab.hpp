#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "srclm/common.hpp"
#include "srclm/corpus.hpp"

namespace srclm {

enum class TokenizerMode { Char, KeyChar, Subword };

inline const char* mode_name(TokenizerMode m) {
  switch (m) {
    case TokenizerMode::Char: return "char";
    case TokenizerMode::KeyChar: return "keychar";
    default: return "subword";
  }
}

inline TokenizerMode mode_from_name(std::string_view s) {
  if (s == "char") return TokenizerMode::Char;
  if (s == "keychar") return TokenizerMode::KeyChar;
  if (s == "subword") return TokenizerMode::Subword;
  throw std::invalid_argument("unknown tokenizer mode: " + std::string(s));
}

struct CorpusTooSmall : std::runtime_error {
  explicit CorpusTooSmall(std::size_t target)
      : std::runtime_error("corpus too small to train a subword vocabulary of "
                           "size " +
                           std::to_string(target)) {}
};

struct ForeignEncoding : std::runtime_error {
  ForeignEncoding()
      : std::runtime_error("encoding does not belong to this vocabulary") {}
};

// Special token ids are fixed across all modes.
inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open character offsets
};

struct Encoding {
  std::vector<int> ids;
  std::vector<Span> spans;
  TokenizerMode mode = TokenizerMode::Char;
};

class Vocabulary {
 public:
  TokenizerMode mode = TokenizerMode::Char;
  std::vector<std::string> symbols;  // id -> symbol; ids dense 0..size-1
  std::vector<std::pair<std::string, std::string>> merges;  // subword only

  std::size_t size() const { return symbols.size(); }

  int id_of(std::string_view s) const {
    auto it = lookup_.find(std::string(s));
    return it == lookup_.end() ? -1 : it->second;
  }

  const std::string& symbol(int id) const {
    return symbols.at(static_cast<std::size_t>(id));
  }

  // Call after `symbols` is final.
  void finalize() {
    lookup_.clear();
    max_symbol_len_ = 1;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      lookup_[symbols[i]] = static_cast<int>(i);
      if (i >= kNumSpecials) {
        max_symbol_len_ = std::max(max_symbol_len_, symbols[i].size());
      }
    }
    keyword_ids_.clear();
    if (mode == TokenizerMode::KeyChar) {
      for (const auto& k : c_keywords()) {
        int id = id_of(k);
        if (id >= 0) keyword_ids_.insert(id);
      }
    }
  }

  std::size_t max_symbol_len() const { return max_symbol_len_; }

  std::string sha() const { return sha256_hex(to_json().dump()); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["mode"] = mode_name(mode);
    j["symbols"] = symbols;
    if (mode == TokenizerMode::Subword) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& [a, b] : merges) arr.push_back({a, b});
      j["merges"] = std::move(arr);
    }
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.mode = mode_from_name(j.at("mode").get<std::string>());
    v.symbols = j.at("symbols").get<std::vector<std::string>>();
    if (j.contains("merges")) {
      for (const auto& m : j.at("merges")) {
        v.merges.emplace_back(m.at(0).get<std::string>(),
                              m.at(1).get<std::string>());
      }
    }
    v.finalize();
    return v;
  }

 private:
  std::unordered_map<std::string, int> lookup_;
  std::set<int> keyword_ids_;
  std::size_t max_symbol_len_ = 1;
};

namespace detail {

inline std::vector<std::string> special_symbols() {
  return {"[CLS]", "[SEP]", "[MASK]", "[UNK]"};
}

// Distinct ASCII characters observed in the corpus, code-point order. The
// non-ASCII placeholder stays out so it round-trips through [UNK].
inline std::vector<char> observed_chars(const std::vector<SourceFile>& corpus) {
  bool seen[128] = {false};
  for (const auto& f : corpus) {
    for (char c : f.content) {
      unsigned char u = static_cast<unsigned char>(c);
      if (u < 128 && c != kNonAsciiPlaceholder) seen[u] = true;
    }
  }
  std::vector<char> out;
  for (int i = 0; i < 128; ++i) {
    if (seen[i]) out.push_back(static_cast<char>(i));
  }
  return out;
}

}  // namespace detail

inline Vocabulary build_char_vocab(const std::vector<SourceFile>& corpus) {
  if (corpus.empty()) throw EmptyCorpus();
  Vocabulary v;
  v.mode = TokenizerMode::Char;
  v.symbols = detail::special_symbols();
  for (char c : detail::observed_chars(corpus)) v.symbols.emplace_back(1, c);
  v.finalize();
  return v;
}

inline Vocabulary build_keychar_vocab(const std::vector<SourceFile>& corpus) {
  Vocabulary v = build_char_vocab(corpus);
  v.mode = TokenizerMode::KeyChar;
  for (const auto& k : c_keywords()) v.symbols.push_back(k);
  v.finalize();
  return v;
}

// Greedy pair-merge subword trainer. Whitespace and non-whitespace never mix
// inside one symbol, so the corpus factors into whitespace runs and
// non-whitespace runs; training works on the run histogram, which makes each
// merge step proportional to the number of distinct runs.
inline Vocabulary train_subword_vocab(const std::vector<SourceFile>& corpus,
                                      std::size_t target_size = 5000) {
  if (corpus.empty()) throw EmptyCorpus();

  Vocabulary v;
  v.mode = TokenizerMode::Subword;
  v.symbols = detail::special_symbols();
  for (char c : detail::observed_chars(corpus)) v.symbols.emplace_back(1, c);
  if (v.symbols.size() > target_size) throw CorpusTooSmall(target_size);

  // Histogram of maximal same-class (space / non-space) runs. Runs are kept
  // as symbol-id sequences; merges never cross a run boundary, so pair counts
  // over the weighted histogram equal pair counts over the raw corpus.
  std::unordered_map<std::string, int> sym_id;
  for (std::size_t i = 0; i < v.symbols.size(); ++i) {
    sym_id[v.symbols[i]] = static_cast<int>(i);
  }

  struct Run {
    std::vector<int> syms;
    std::uint64_t count = 0;
  };
  std::vector<Run> runs;
  {
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& f : corpus) {
      std::size_t i = 0;
      const std::string& s = f.content;
      while (i < s.size()) {
        bool ws = is_space_char(s[i]);
        std::size_t j = i;
        while (j < s.size() && is_space_char(s[j]) == ws) ++j;
        std::string run = s.substr(i, j - i);
        auto it = index.find(run);
        if (it == index.end()) {
          Run r;
          r.count = 1;
          for (std::size_t k = i; k < j; ++k) {
            auto sit = sym_id.find(std::string(1, s[k]));
            // -1 marks a placeholder byte; it blocks merges across itself
            r.syms.push_back(sit != sym_id.end() ? sit->second : -1);
          }
          index.emplace(std::move(run), runs.size());
          runs.push_back(std::move(r));
        } else {
          runs[it->second].count += 1;
        }
        i = j;
      }
    }
  }

  auto pack = [](int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };

  while (v.symbols.size() < target_size) {
    std::unordered_map<std::uint64_t, std::uint64_t> pair_counts;
    for (const auto& r : runs) {
      for (std::size_t k = 0; k + 1 < r.syms.size(); ++k) {
        if (r.syms[k] < 0 || r.syms[k + 1] < 0) continue;
        pair_counts[pack(r.syms[k], r.syms[k + 1])] += r.count;
      }
    }
    if (pair_counts.empty()) throw CorpusTooSmall(target_size);

    // Most frequent pair; ties break toward the lexicographically smallest
    // merged string. The two-pass scan keeps the choice independent of hash
    // iteration order.
    std::uint64_t best_count = 0;
    for (const auto& [_, c] : pair_counts) best_count = std::max(best_count, c);
    int best_a = -1, best_b = -1;
    std::string best_merged;
    for (const auto& [key, c] : pair_counts) {
      if (c != best_count) continue;
      int a = static_cast<int>(key >> 32);
      int b = static_cast<int>(key & 0xffffffffULL);
      std::string merged = v.symbols[a] + v.symbols[b];
      if (best_a < 0 || merged < best_merged) {
        best_a = a;
        best_b = b;
        best_merged = std::move(merged);
      }
    }

    int merged_id;
    auto it = sym_id.find(best_merged);
    if (it != sym_id.end()) {
      merged_id = it->second;  // symbol already exists via another merge path
    } else {
      merged_id = static_cast<int>(v.symbols.size());
      v.symbols.push_back(best_merged);
      sym_id[best_merged] = merged_id;
    }
    v.merges.emplace_back(v.symbols[best_a], v.symbols[best_b]);

    // Rewrite affected runs, merging left to right.
    for (auto& r : runs) {
      bool hit = false;
      for (std::size_t k = 0; k + 1 < r.syms.size(); ++k) {
        if (r.syms[k] == best_a && r.syms[k + 1] == best_b) {
          hit = true;
          break;
        }
      }
      if (!hit) continue;
      std::vector<int> out;
      out.reserve(r.syms.size());
      std::size_t k = 0;
      while (k < r.syms.size()) {
        if (k + 1 < r.syms.size() && r.syms[k] == best_a &&
            r.syms[k + 1] == best_b) {
          out.push_back(merged_id);
          k += 2;
        } else {
          out.push_back(r.syms[k]);
          ++k;
        }
      }
      r.syms = std::move(out);
    }
  }

  v.finalize();
  return v;
}

namespace detail {

inline void emit(Encoding& e, int id, std::size_t begin, std::size_t end) {
  e.ids.push_back(id);
  e.spans.push_back({begin, end});
}

inline void encode_chars(const Vocabulary& v, std::string_view text,
                         std::size_t begin, std::size_t end, Encoding& out) {
  for (std::size_t i = begin; i < end; ++i) {
    int id = v.id_of(std::string_view(&text[i], 1));
    emit(out, id < 0 ? kUnkId : id, i, i + 1);
  }
}

}  // namespace detail

// Tokenizes cleaned source. [CLS]/[SEP] are added by task pipelines, not
// here. Spans always tile the input text.
inline Encoding encode(std::string_view text, const Vocabulary& v) {
  Encoding out;
  out.mode = v.mode;
  out.ids.reserve(text.size());
  out.spans.reserve(text.size());

  switch (v.mode) {
    case TokenizerMode::Char:
      detail::encode_chars(v, text, 0, text.size(), out);
      break;

    case TokenizerMode::KeyChar: {
      std::size_t i = 0;
      while (i < text.size()) {
        if (is_ident_char(text[i])) {
          std::size_t j = i;
          while (j < text.size() && is_ident_char(text[j])) ++j;
          // A keyword token is emitted only when the maximal identifier run
          // equals the keyword exactly.
          std::string_view run = text.substr(i, j - i);
          int kw_id = is_c_keyword(run) ? v.id_of(run) : -1;
          if (kw_id >= 0) {
            detail::emit(out, kw_id, i, j);
          } else {
            detail::encode_chars(v, text, i, j, out);
          }
          i = j;
        } else {
          detail::encode_chars(v, text, i, i + 1, out);
          ++i;
        }
      }
      break;
    }

    case TokenizerMode::Subword: {
      // Longest-match left to right over the symbol inventory.
      const std::size_t max_len = v.max_symbol_len();
      std::size_t i = 0;
      while (i < text.size()) {
        std::size_t take = std::min(max_len, text.size() - i);
        int id = -1;
        while (take > 1) {
          id = v.id_of(text.substr(i, take));
          if (id >= 0) break;
          --take;
        }
        if (take <= 1) {
          take = 1;
          id = v.id_of(text.substr(i, 1));
        }
        detail::emit(out, id < 0 ? kUnkId : id, i, i + take);
        i += take;
      }
      break;
    }
  }
  return out;
}

// Exact inverse of encode for Char/KeyChar; for Subword, exact when no [UNK]
// is present. [UNK] decodes to the placeholder character.
inline std::string decode(const Encoding& e, const Vocabulary& v) {
  if (e.mode != v.mode) throw ForeignEncoding();
  std::string out;
  for (int id : e.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v.size()) {
      throw ForeignEncoding();
    }
    if (id == kUnkId) {
      out.push_back(kNonAsciiPlaceholder);
    } else if (id >= kNumSpecials) {
      out += v.symbol(id);
    } else {
      throw ForeignEncoding();  // CLS/SEP/MASK have no surface form
    }
  }
  return out;
}

inline void save_vocab(const Vocabulary& v, const std::filesystem::path& path) {
  write_file(path, v.to_json().dump(2) + "\n");
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
  return Vocabulary::from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace srclm
