#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "srclm/common.hpp"
#include "srclm/model.hpp"

namespace srclm {

struct VocabMismatch : std::runtime_error {
  VocabMismatch()
      : std::runtime_error(
            "checkpoint was trained with a different vocabulary") {}
};

struct BadCheckpoint : std::runtime_error {
  explicit BadCheckpoint(const std::string& why)
      : std::runtime_error("bad checkpoint: " + why) {}
};

// Checkpoint container: a magic line, a single-line JSON header describing
// the configuration and tensor layout, then the raw little-endian doubles in
// header order. Serialization is canonical, so load followed by save is
// byte-identical.
namespace checkpoint {

inline constexpr const char* kMagic = "SRCLM-CKPT-1";

inline std::string serialize(const Model& model,
                             const nlohmann::ordered_json& meta = {}) {
  nlohmann::ordered_json header;
  header["config"] = model.cfg.to_json();
  header["objective"] = model.objective;
  header["vocab_sha"] = model.vocab_sha;
  header["step_count"] = model.step_count;
  header["ast_label_names"] = model.ast_label_names;
  auto tensors = nlohmann::ordered_json::array();
  for (const Param* p : model.params.all()) {
    tensors.push_back(
        {{"name", p->name}, {"rows", p->value.rows}, {"cols", p->value.cols}});
  }
  header["tensors"] = std::move(tensors);
  header["meta"] = meta.is_null() ? nlohmann::ordered_json::object() : meta;

  std::string out = std::string(kMagic) + "\n" + header.dump() + "\n";
  for (const Param* p : model.params.all()) {
    const char* bytes = reinterpret_cast<const char*>(p->value.a.data());
    out.append(bytes, p->value.size() * sizeof(double));
  }
  return out;
}

inline void save(const Model& model, const std::filesystem::path& path,
                 const nlohmann::ordered_json& meta = {}) {
  write_file(path, serialize(model, meta));
}

struct Loaded {
  Model model;
  nlohmann::ordered_json meta;
};

inline Loaded deserialize(const std::string& bytes) {
  std::size_t p1 = bytes.find('\n');
  if (p1 == std::string::npos || bytes.substr(0, p1) != kMagic) {
    throw BadCheckpoint("magic mismatch");
  }
  std::size_t p2 = bytes.find('\n', p1 + 1);
  if (p2 == std::string::npos) throw BadCheckpoint("missing header");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(p1 + 1, p2 - p1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw BadCheckpoint(e.what());
  }

  ModelConfig cfg = ModelConfig::from_json(header.at("config"));
  Loaded out{Model(cfg, header.at("vocab_sha").get<std::string>(), 0),
             header.value("meta", nlohmann::json::object())};
  Model& m = out.model;
  m.objective = header.at("objective").get<std::string>();
  m.step_count = header.at("step_count").get<std::int64_t>();
  m.ast_label_names =
      header.at("ast_label_names").get<std::vector<std::string>>();

  std::size_t off = p2 + 1;
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const int rows = t.at("rows").get<int>();
    const int cols = t.at("cols").get<int>();
    Param& p = m.params.has(name) ? m.params.get(name)
                                  : m.params.create(name, rows, cols);
    if (p.value.rows != rows || p.value.cols != cols) {
      throw BadCheckpoint("tensor shape mismatch for " + name);
    }
    const std::size_t n = p.value.size() * sizeof(double);
    if (off + n > bytes.size()) throw BadCheckpoint("truncated tensor data");
    std::memcpy(p.value.a.data(), bytes.data() + off, n);
    off += n;
  }
  if (off != bytes.size()) throw BadCheckpoint("trailing bytes");
  return out;
}

inline Loaded load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

// Portable plain-text dump (name, shape, then row-major values), meant for
// diffing checkpoints across implementations.
inline std::string export_text(const Model& model) {
  std::string out;
  char buf[64];
  for (const Param* p : model.params.all()) {
    out += p->name;
    std::snprintf(buf, sizeof(buf), " %d %d\n", p->value.rows, p->value.cols);
    out += buf;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", p->value.a[i]);
      out += buf;
      out.push_back((i + 1) % static_cast<std::size_t>(p->value.cols) == 0
                        ? '\n'
                        : ' ');
    }
  }
  return out;
}

}  // namespace checkpoint
}  // namespace srclm
