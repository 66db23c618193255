#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "srclm/common.hpp"

namespace srclm {

struct UnterminatedBlockComment : std::runtime_error {
  std::size_t position;
  explicit UnterminatedBlockComment(std::size_t pos)
      : std::runtime_error("unterminated block comment at offset " +
                           std::to_string(pos)),
        position(pos) {}
};

struct UnterminatedStringLiteral : std::runtime_error {
  std::size_t position;
  explicit UnterminatedStringLiteral(std::size_t pos)
      : std::runtime_error("unterminated string or char literal at offset " +
                           std::to_string(pos)),
        position(pos) {}
};

struct EmptyCorpus : std::runtime_error {
  EmptyCorpus() : std::runtime_error("corpus is empty") {}
};

// Removes // and /* */ comments. Each comment body collapses to a single
// space; newlines inside a block comment are kept so line numbers are stable.
// Comment-like sequences inside string and char literals are left alone.
inline std::string strip_comments(std::string_view src) {
  std::string out;
  out.reserve(src.size());
  std::size_t i = 0;
  const std::size_t n = src.size();
  while (i < n) {
    char c = src[i];
    if (c == '/' && i + 1 < n && src[i + 1] == '/') {
      out.push_back(' ');
      i += 2;
      while (i < n && src[i] != '\n') {
        // Backslash-newline continues a line comment; keep the newline.
        if (src[i] == '\\' && i + 1 < n && src[i + 1] == '\n') {
          out.push_back('\n');
          i += 2;
          continue;
        }
        ++i;
      }
    } else if (c == '/' && i + 1 < n && src[i + 1] == '*') {
      const std::size_t start = i;
      out.push_back(' ');
      i += 2;
      bool closed = false;
      while (i < n) {
        if (src[i] == '*' && i + 1 < n && src[i + 1] == '/') {
          i += 2;
          closed = true;
          break;
        }
        if (src[i] == '\n') out.push_back('\n');
        ++i;
      }
      if (!closed) throw UnterminatedBlockComment(start);
    } else if (c == '"' || c == '\'') {
      const char quote = c;
      const std::size_t start = i;
      out.push_back(c);
      ++i;
      bool closed = false;
      while (i < n) {
        char d = src[i];
        if (d == '\\' && i + 1 < n) {
          out.push_back(d);
          out.push_back(src[i + 1]);
          i += 2;
          continue;
        }
        if (d == '\n') break;  // raw newline never appears inside a literal
        out.push_back(d);
        ++i;
        if (d == quote) {
          closed = true;
          break;
        }
      }
      if (!closed) throw UnterminatedStringLiteral(start);
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

// Collapses every whitespace run to a single space. Used only for the
// duplicate-detection hash, never for content fed to tokenizers.
inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_run = false;
  for (char c : s) {
    if (is_space_char(c)) {
      if (!in_run) out.push_back(' ');
      in_run = true;
    } else {
      out.push_back(c);
      in_run = false;
    }
  }
  return out;
}

// Replaces non-ASCII bytes with the placeholder; reports the non-ASCII
// fraction of the original bytes.
inline double replace_non_ascii(std::string& content) {
  if (content.empty()) return 0.0;
  std::size_t bad = 0;
  for (char& c : content) {
    if (static_cast<unsigned char>(c) > 0x7f) {
      c = kNonAsciiPlaceholder;
      ++bad;
    }
  }
  return static_cast<double>(bad) / static_cast<double>(content.size());
}

struct SourceFile {
  std::string path;
  std::string content;       // cleaned: non-ASCII replaced, comments stripped
  std::string content_hash;  // sha256 of whitespace-collapsed content

  static SourceFile from_content(std::string path, std::string_view raw) {
    SourceFile f;
    f.path = std::move(path);
    std::string cleaned(raw);
    replace_non_ascii(cleaned);
    f.content = strip_comments(cleaned);
    f.content_hash = sha256_hex(collapse_whitespace(f.content));
    return f;
  }

  bool has_code() const {
    return std::any_of(content.begin(), content.end(),
                       [](char c) { return !is_space_char(c); });
  }
};

// Exact-match dedup on the normalized-content hash. Within a duplicate group
// the lexicographically earliest path wins; survivors keep their input order.
inline std::vector<SourceFile> deduplicate(std::vector<SourceFile> files) {
  std::unordered_map<std::string, std::string> best_path;  // hash -> min path
  for (const auto& f : files) {
    auto it = best_path.find(f.content_hash);
    if (it == best_path.end() || f.path < it->second) {
      best_path[f.content_hash] = f.path;
    }
  }
  std::vector<SourceFile> out;
  out.reserve(files.size());
  for (auto& f : files) {
    if (best_path.at(f.content_hash) == f.path) out.push_back(std::move(f));
  }
  return out;
}

enum class Split { Train, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    default: return "test";
  }
}

struct ManifestEntry {
  std::string path;
  std::string content_hash;
  Split split = Split::Train;
};

struct CorpusManifest {
  std::vector<ManifestEntry> files;  // sorted by path
  std::uint64_t seed = 0;
  double ratios[3] = {0.7, 0.1, 0.2};

  std::vector<std::string> paths_in(Split s) const {
    std::vector<std::string> out;
    for (const auto& e : files) {
      if (e.split == s) out.push_back(e.path);
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["ratios"] = {ratios[0], ratios[1], ratios[2]};
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : files) {
      arr.push_back({{"path", e.path},
                     {"content_hash", e.content_hash},
                     {"split", split_name(e.split)}});
    }
    j["files"] = std::move(arr);
    return j;
  }

  static CorpusManifest from_json(const nlohmann::json& j) {
    CorpusManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (int i = 0; i < 3; ++i) m.ratios[i] = j.at("ratios").at(i).get<double>();
    for (const auto& e : j.at("files")) {
      ManifestEntry entry;
      entry.path = e.at("path").get<std::string>();
      entry.content_hash = e.at("content_hash").get<std::string>();
      std::string s = e.at("split").get<std::string>();
      entry.split = s == "train"  ? Split::Train
                    : s == "dev" ? Split::Dev
                                 : Split::Test;
      m.files.push_back(std::move(entry));
    }
    return m;
  }
};

// File-level random split with floor-based counts; remainder goes to train.
inline CorpusManifest split_corpus(const std::vector<SourceFile>& files,
                                   const double (&ratios)[3],
                                   std::uint64_t seed) {
  if (files.empty()) throw EmptyCorpus();
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be positive and sum to 1");
  }

  std::vector<std::size_t> order(files.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Shuffle over the path-sorted order so the result does not depend on
  // directory traversal order.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return files[a].path < files[b].path;
  });
  Rng rng(derive_seed(seed, "corpus-split"));
  rng.shuffle(order);

  const std::size_t n = files.size();
  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(ratios[0] * static_cast<double>(n)));
  const std::size_t n_dev = static_cast<std::size_t>(
      std::floor(ratios[1] * static_cast<double>(n)));
  const std::size_t n_test = static_cast<std::size_t>(
      std::floor(ratios[2] * static_cast<double>(n)));

  std::vector<Split> assignment(n, Split::Train);  // remainder lands in train
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n_train; ++k) assignment[order[pos++]] = Split::Train;
  for (std::size_t k = 0; k < n_dev; ++k) assignment[order[pos++]] = Split::Dev;
  for (std::size_t k = 0; k < n_test; ++k) assignment[order[pos++]] = Split::Test;

  CorpusManifest m;
  m.seed = seed;
  m.ratios[0] = ratios[0];
  m.ratios[1] = ratios[1];
  m.ratios[2] = ratios[2];
  for (std::size_t i = 0; i < n; ++i) {
    m.files.push_back({files[i].path, files[i].content_hash, assignment[i]});
  }
  std::sort(m.files.begin(), m.files.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return a.path < b.path;
            });
  return m;
}

struct CorpusLoadOptions {
  std::vector<std::string> extensions = {".c", ".h"};
  double max_non_ascii_fraction = 0.5;
};

// Walks a directory tree, cleans every matching file, drops files that are
// empty after cleaning, are mostly non-ASCII, or fail comment stripping.
// Returns files sorted by path; `skipped`, when given, collects drop reasons.
inline std::vector<SourceFile> load_source_tree(
    const std::filesystem::path& root, const CorpusLoadOptions& opts = {},
    std::vector<std::string>* skipped = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::exists(root) || !fs::is_directory(root)) {
    throw std::runtime_error("source directory not found: " + root.string());
  }
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (std::find(opts.extensions.begin(), opts.extensions.end(), ext) !=
        opts.extensions.end()) {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());

  std::vector<SourceFile> out;
  for (const auto& p : paths) {
    std::string raw = read_file(p);
    std::string cleaned = raw;
    double frac = replace_non_ascii(cleaned);
    if (frac > opts.max_non_ascii_fraction) {
      if (skipped) skipped->push_back(p.string() + ": mostly non-ASCII");
      continue;
    }
    SourceFile f;
    f.path = p.string();
    try {
      f.content = strip_comments(cleaned);
    } catch (const std::runtime_error& e) {
      if (skipped) skipped->push_back(p.string() + ": " + e.what());
      continue;
    }
    if (!f.has_code()) {
      if (skipped) skipped->push_back(p.string() + ": empty after cleaning");
      continue;
    }
    f.content_hash = sha256_hex(collapse_whitespace(f.content));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace srclm
