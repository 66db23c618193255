#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "srclm/common.hpp"
#include "srclm/corpus.hpp"
#include "srclm/vocab.hpp"

namespace srclm {

struct MissingSpans : std::runtime_error {
  MissingSpans()
      : std::runtime_error("encoding carries no span alignment") {}
};

struct NoMaskedPositions : std::runtime_error {
  NoMaskedPositions()
      : std::runtime_error("mask plan selects no positions") {}
};

// Byte trie over stored strings. Deterministic lookups, no balancing.
class Trie {
 public:
  void insert(std::string_view s) {
    std::size_t node = 0;
    for (char c : s) {
      unsigned char u = static_cast<unsigned char>(c);
      int next = nodes_[node].child[u];
      if (next < 0) {
        next = static_cast<int>(nodes_.size());
        nodes_[node].child[u] = next;
        nodes_.emplace_back();
      }
      node = static_cast<std::size_t>(next);
    }
    if (!nodes_[node].terminal) {
      nodes_[node].terminal = true;
      ++size_;
    }
  }

  bool contains(std::string_view s) const {
    std::size_t node = 0;
    for (char c : s) {
      int next = nodes_[node].child[static_cast<unsigned char>(c)];
      if (next < 0) return false;
      node = static_cast<std::size_t>(next);
    }
    return nodes_[node].terminal;
  }

  std::size_t size() const { return size_; }

  void visit(const std::function<void(const std::string&)>& fn) const {
    std::string prefix;
    visit_node(0, prefix, fn);
  }

 private:
  struct Node {
    int child[256];
    bool terminal = false;
    Node() { std::fill(std::begin(child), std::end(child), -1); }
  };
  std::vector<Node> nodes_{1, Node{}};
  std::size_t size_ = 0;

  void visit_node(std::size_t n, std::string& prefix,
                  const std::function<void(const std::string&)>& fn) const {
    if (nodes_[n].terminal) fn(prefix);
    for (int c = 0; c < 256; ++c) {
      int next = nodes_[n].child[c];
      if (next >= 0) {
        prefix.push_back(static_cast<char>(c));
        visit_node(static_cast<std::size_t>(next), prefix, fn);
        prefix.pop_back();
      }
    }
  }
};

// Identifier strings extracted from a corpus, held in a trie. Only strings
// matching the identifier pattern, at least two characters long and not a C
// keyword, are stored.
class MaskDictionary {
 public:
  std::vector<std::string> source_patterns{"[A-Za-z_][A-Za-z0-9_]*"};

  void add(std::string_view s) {
    if (s.size() < 2 || is_c_keyword(s)) return;
    trie_.insert(s);
  }

  bool contains(std::string_view s) const { return trie_.contains(s); }
  std::size_t size() const { return trie_.size(); }

  // Serialization is the sorted string list; the trie is rebuilt on load.
  std::vector<std::string> sorted_strings() const {
    std::vector<std::string> out;
    out.reserve(trie_.size());
    trie_.visit([&out](const std::string& s) { out.push_back(s); });
    return out;  // trie traversal is already byte-lexicographic
  }

  static MaskDictionary from_strings(const std::vector<std::string>& strings) {
    MaskDictionary d;
    for (const auto& s : strings) d.add(s);
    return d;
  }

 private:
  Trie trie_;
};

// Scans text for matches of [A-Za-z_][A-Za-z0-9_]* (leftmost-longest, as the
// regex would produce) and feeds them through the dictionary filter.
inline void extract_from_text(std::string_view text, MaskDictionary& dict) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_ident_start(text[i])) {
      std::size_t j = i;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      dict.add(text.substr(i, j - i));
      i = j;
    } else {
      ++i;
    }
  }
}

inline MaskDictionary extract_maskable_strings(
    const std::vector<SourceFile>& corpus) {
  MaskDictionary dict;
  for (const auto& f : corpus) extract_from_text(f.content, dict);
  return dict;
}

enum class MaskAction { ReplaceWithMask, ReplaceWithRandom, Keep };

struct MaskedPosition {
  std::size_t position = 0;
  MaskAction action = MaskAction::ReplaceWithMask;
  int replacement_id = -1;  // set when action is ReplaceWithRandom
};

struct MaskPlan {
  std::vector<MaskedPosition> positions;  // strictly increasing by position
  std::uint64_t seed = 0;

  bool empty() const { return positions.empty(); }

  // Applies the plan to a token sequence, returning the corrupted input.
  std::vector<int> apply(const std::vector<int>& ids) const {
    std::vector<int> out = ids;
    for (const auto& m : positions) {
      switch (m.action) {
        case MaskAction::ReplaceWithMask: out[m.position] = kMaskId; break;
        case MaskAction::ReplaceWithRandom: out[m.position] = m.replacement_id; break;
        case MaskAction::Keep: break;
      }
    }
    return out;
  }
};

namespace detail {

inline bool maskable_id(int id) { return id != kClsId && id != kSepId; }

// 80/10/10 action split shared by MLM and WWM.
inline MaskAction draw_action(Rng& rng) {
  double r = rng.uniform();
  if (r < 0.8) return MaskAction::ReplaceWithMask;
  if (r < 0.9) return MaskAction::ReplaceWithRandom;
  return MaskAction::Keep;
}

inline int draw_replacement(Rng& rng, std::size_t vocab_size) {
  return kNumSpecials +
         static_cast<int>(rng.below(vocab_size - kNumSpecials));
}

}  // namespace detail

// BERT-style masking: each maskable position is selected independently.
inline MaskPlan select_mlm_masks(const std::vector<int>& ids,
                                 const Vocabulary& vocab, double rate,
                                 std::uint64_t seed) {
  MaskPlan plan;
  plan.seed = seed;
  Rng rng(derive_seed(seed, "mlm"));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!detail::maskable_id(ids[i])) continue;
    if (rng.uniform() >= rate) continue;
    MaskedPosition m;
    m.position = i;
    m.action = detail::draw_action(rng);
    if (m.action == MaskAction::ReplaceWithRandom) {
      m.replacement_id = detail::draw_replacement(rng, vocab.size());
    }
    plan.positions.push_back(m);
  }
  return plan;
}

// Whole-word masking. Seed tokens are chosen with `seed_rate`; a seed whose
// span lies inside a maximal identifier run found in the dictionary pulls
// every token overlapping that run into the plan. The whole run shares one
// action draw.
inline MaskPlan select_wwm_masks(const std::vector<int>& ids,
                                 const std::vector<Span>& spans,
                                 std::string_view source,
                                 const Vocabulary& vocab,
                                 const MaskDictionary& dict, double seed_rate,
                                 std::uint64_t seed) {
  if (spans.size() != ids.size()) throw MissingSpans();
  MaskPlan plan;
  plan.seed = seed;
  Rng rng(derive_seed(seed, "wwm"));
  std::vector<char> planned(ids.size(), 0);
  std::vector<MaskedPosition> collected;

  auto ident_run_around = [&](std::size_t begin, std::size_t end,
                              std::size_t& run_begin,
                              std::size_t& run_end) -> bool {
    if (begin >= end || end > source.size()) return false;
    for (std::size_t k = begin; k < end; ++k) {
      if (!is_ident_char(source[k])) return false;
    }
    run_begin = begin;
    while (run_begin > 0 && is_ident_char(source[run_begin - 1])) --run_begin;
    run_end = end;
    while (run_end < source.size() && is_ident_char(source[run_end])) ++run_end;
    return true;
  };

  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!detail::maskable_id(ids[i])) continue;
    if (rng.uniform() >= seed_rate) continue;
    if (planned[i]) continue;  // already swept in by an earlier span

    std::size_t group_begin = i, group_end = i + 1;
    std::size_t run_begin = 0, run_end = 0;
    if (ident_run_around(spans[i].begin, spans[i].end, run_begin, run_end) &&
        dict.contains(source.substr(run_begin, run_end - run_begin))) {
      // All tokens overlapping the run join the group (never CLS/SEP).
      group_begin = i;
      while (group_begin > 0 && detail::maskable_id(ids[group_begin - 1]) &&
             spans[group_begin - 1].end > run_begin) {
        --group_begin;
      }
      group_end = i + 1;
      while (group_end < ids.size() && detail::maskable_id(ids[group_end]) &&
             spans[group_end].begin < run_end) {
        ++group_end;
      }
    }

    MaskAction action = detail::draw_action(rng);
    for (std::size_t p = group_begin; p < group_end; ++p) {
      if (planned[p]) continue;
      planned[p] = 1;
      MaskedPosition m;
      m.position = p;
      m.action = action;
      if (action == MaskAction::ReplaceWithRandom) {
        m.replacement_id = detail::draw_replacement(rng, vocab.size());
      }
      collected.push_back(m);
    }
  }

  std::sort(collected.begin(), collected.end(),
            [](const MaskedPosition& a, const MaskedPosition& b) {
              return a.position < b.position;
            });
  plan.positions = std::move(collected);
  return plan;
}

// The seed rates keep the expected masked fraction near the 15% MLM rate.
inline double wwm_seed_rate(TokenizerMode mode) {
  return mode == TokenizerMode::Subword ? 0.09 : 0.03;
}

inline std::vector<std::string> save_dictionary(const MaskDictionary& d) {
  return d.sorted_strings();
}

}  // namespace srclm
