#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srclm/autograd.hpp"
#include "srclm/common.hpp"
#include "srclm/masking.hpp"
#include "srclm/matrix.hpp"
#include "srclm/vocab.hpp"

namespace srclm {

struct SequenceTooLong : std::runtime_error {
  SequenceTooLong(std::size_t len, int max)
      : std::runtime_error("sequence of " + std::to_string(len) +
                           " tokens exceeds maximum length " +
                           std::to_string(max)) {}
};

struct MissingSpecials : std::runtime_error {
  MissingSpecials()
      : std::runtime_error(
            "input must start with [CLS] and end with [SEP]") {}
};

struct EmptySequence : std::runtime_error {
  EmptySequence() : std::runtime_error("empty sequence") {}
};

struct NonFiniteGradient : std::runtime_error {
  explicit NonFiniteGradient(const std::string& name)
      : std::runtime_error("non-finite gradient in parameter " + name) {}
};

struct ModelConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ffn = 256;
  int max_seq = 256;       // includes [CLS] and [SEP]
  int vocab_size = 0;
  int ast_labels = 0;      // 0 until an AST head is attached
  double dropout = 0.1;

  int head_dim() const { return hidden / heads; }

  void validate() const {
    if (hidden % heads != 0) {
      throw std::invalid_argument("hidden dim must be divisible by heads");
    }
    if (max_seq < 2) {
      throw std::invalid_argument("max_seq must leave room for [CLS]/[SEP]");
    }
  }

  nlohmann::ordered_json to_json() const {
    return {{"layers", layers},   {"hidden", hidden},
            {"heads", heads},     {"ffn", ffn},
            {"max_seq", max_seq}, {"vocab_size", vocab_size},
            {"ast_labels", ast_labels}, {"dropout", dropout}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn = j.at("ffn").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.ast_labels = j.at("ast_labels").get<int>();
    c.dropout = j.at("dropout").get<double>();
    return c;
  }
};

// Ordered name -> tensor map. Iteration order is the declaration order, which
// fixes the checkpoint layout and the finite-difference sweep order.
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols) {
    auto [it, inserted] = index_.emplace(name, params_.size());
    if (!inserted) throw std::logic_error("duplicate parameter: " + name);
    params_.push_back(std::make_unique<Param>(name, rows, cols));
    return *params_.back();
  }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return *params_[it->second];
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<const Param*> all() const {

    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.zero();
  }

  // Deep copy of values (used for best-checkpoint snapshots).
  std::map<std::string, Matrix> snapshot_values() const {
    std::map<std::string, Matrix> out;
    for (const auto& p : params_) out[p->name] = p->value;
    return out;
  }

  void restore_values(const std::map<std::string, Matrix>& snap) {
    for (auto& p : params_) {
      auto it = snap.find(p->name);
      if (it != snap.end()) p->value = it->second;
    }
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline void init_normal(Matrix& m, Rng& rng, double std_dev) {
  for (double& v : m.a) v = rng.normal() * std_dev;
}

inline void init_const(Matrix& m, double v) {
  std::fill(m.a.begin(), m.a.end(), v);
}

}  // namespace detail

// Bidirectional transformer encoder with post-layer-norm blocks, learned
// absolute position embeddings and GELU feed-forward, plus the task heads.
class Model {
 public:
  ModelConfig cfg;
  ParamStore params;
  std::string vocab_sha;
  std::string objective = "none";  // mlm | wwm | none
  std::vector<std::string> ast_label_names;
  std::int64_t step_count = 0;

  static constexpr double kInitStd = 0.02;

  Model(ModelConfig config, std::string vocab_hash, std::uint64_t init_seed)
      : cfg(config), vocab_sha(std::move(vocab_hash)) {
    cfg.validate();
    Rng rng(derive_seed(init_seed, "model-init"));
    auto normal = [&](const std::string& name, int r, int c) -> Param& {
      Param& p = params.create(name, r, c);
      detail::init_normal(p.value, rng, kInitStd);
      return p;
    };
    auto zeros = [&](const std::string& name, int r, int c) -> Param& {
      return params.create(name, r, c);
    };
    auto ones = [&](const std::string& name, int r, int c) -> Param& {
      Param& p = params.create(name, r, c);
      detail::init_const(p.value, 1.0);
      return p;
    };

    normal("embed.token", cfg.vocab_size, cfg.hidden);
    normal("embed.position", cfg.max_seq, cfg.hidden);
    ones("embed.ln.gain", 1, cfg.hidden);
    zeros("embed.ln.bias", 1, cfg.hidden);

    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      normal(pre + "attn.wq", cfg.hidden, cfg.hidden);
      zeros(pre + "attn.bq", 1, cfg.hidden);
      normal(pre + "attn.wk", cfg.hidden, cfg.hidden);
      zeros(pre + "attn.bk", 1, cfg.hidden);
      normal(pre + "attn.wv", cfg.hidden, cfg.hidden);
      zeros(pre + "attn.bv", 1, cfg.hidden);
      normal(pre + "attn.wo", cfg.hidden, cfg.hidden);
      zeros(pre + "attn.bo", 1, cfg.hidden);
      ones(pre + "ln1.gain", 1, cfg.hidden);
      zeros(pre + "ln1.bias", 1, cfg.hidden);
      normal(pre + "ffn.w1", cfg.hidden, cfg.ffn);
      zeros(pre + "ffn.b1", 1, cfg.ffn);
      normal(pre + "ffn.w2", cfg.ffn, cfg.hidden);
      zeros(pre + "ffn.b2", 1, cfg.hidden);
      ones(pre + "ln2.gain", 1, cfg.hidden);
      zeros(pre + "ln2.bias", 1, cfg.hidden);
    }
  }

  // Heads are attached lazily: pre-training creates the LM head, fine-tuning
  // creates freshly initialized task heads.
  void ensure_lm_head(std::uint64_t seed) {
    if (params.has("head.lm.w")) return;
    Rng rng(derive_seed(seed, "lm-head"));
    Param& w = params.create("head.lm.w", cfg.hidden, cfg.vocab_size);
    detail::init_normal(w.value, rng, kInitStd);
    params.create("head.lm.b", 1, cfg.vocab_size);
  }

  void ensure_ast_head(const std::vector<std::string>& labels,
                       std::uint64_t seed) {
    if (params.has("head.ast.w")) return;
    ast_label_names = labels;
    cfg.ast_labels = static_cast<int>(labels.size());
    Rng rng(derive_seed(seed, "ast-head"));
    Param& w = params.create("head.ast.w", cfg.hidden, cfg.ast_labels);
    detail::init_normal(w.value, rng, kInitStd);
    params.create("head.ast.b", 1, cfg.ast_labels);
  }

  void ensure_vi_head(bool aggregate, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "vi-head"));
    if (aggregate && !params.has("agg.fwd.w")) {
      const int in = cfg.hidden, h = cfg.hidden;
      for (const char* dir : {"fwd", "bwd"}) {
        Param& w = params.create(std::string("agg.") + dir + ".w", in + h, 4 * h);
        detail::init_normal(w.value, rng, kInitStd);
        params.create(std::string("agg.") + dir + ".b", 1, 4 * h);
      }
    }
    const std::string name = aggregate ? "head.vi.agg_w" : "head.vi.w";
    if (!params.has(name)) {
      const int in = aggregate ? 2 * cfg.hidden : cfg.hidden;
      Param& w = params.create(name, in, 1);
      detail::init_normal(w.value, rng, kInitStd);
    }
  }

  // Forward pass over one [CLS] ... [SEP] sequence; returns the T x d hidden
  // matrix. Dropout applies only when `train` is set; evaluation is
  // deterministic.
  NodeRef forward(Tape& tape, const std::vector<int>& ids, bool train = false,
                  Rng* dropout_rng = nullptr) {
    if (ids.size() < 2 || ids.front() != kClsId || ids.back() != kSepId) {
      throw MissingSpecials();
    }
    if (static_cast<int>(ids.size()) > cfg.max_seq) {
      throw SequenceTooLong(ids.size(), cfg.max_seq);
    }
    for (int id : ids) {
      if (id < 0 || id >= cfg.vocab_size) {
        throw std::out_of_range("token id outside vocabulary");
      }
    }
    const double rate = train ? cfg.dropout : 0.0;
    auto drop = [&](NodeRef x) {
      return rate > 0.0 && dropout_rng ? tape.dropout(x, rate, *dropout_rng)
                                       : x;
    };

    const int t = static_cast<int>(ids.size());
    std::vector<int> pos_ids(ids.size());
    for (int i = 0; i < t; ++i) pos_ids[i] = i;

    NodeRef tok = tape.gather_rows(tape.param(params.get("embed.token")), ids);
    NodeRef pos = tape.gather_rows(tape.param(params.get("embed.position")),
                                   pos_ids);
    NodeRef x = tape.add(tok, pos);
    x = tape.layer_norm(x, tape.param(params.get("embed.ln.gain")),
                        tape.param(params.get("embed.ln.bias")));
    x = drop(x);

    const int dh = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      NodeRef q = tape.add_rowvec(
          tape.matmul(x, tape.param(params.get(pre + "attn.wq"))),
          tape.param(params.get(pre + "attn.bq")));
      NodeRef k = tape.add_rowvec(
          tape.matmul(x, tape.param(params.get(pre + "attn.wk"))),
          tape.param(params.get(pre + "attn.bk")));
      NodeRef v = tape.add_rowvec(
          tape.matmul(x, tape.param(params.get(pre + "attn.wv"))),
          tape.param(params.get(pre + "attn.bv")));

      std::vector<NodeRef> head_ctx;
      head_ctx.reserve(cfg.heads);
      for (int h = 0; h < cfg.heads; ++h) {
        NodeRef qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        NodeRef kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        NodeRef vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        NodeRef scores = tape.scale(tape.matmul_nt(qh, kh), attn_scale);
        NodeRef probs = tape.softmax_rows(scores);
        head_ctx.push_back(tape.matmul(probs, vh));
      }
      NodeRef ctx = tape.concat_cols(head_ctx);
      NodeRef attn_out = tape.add_rowvec(
          tape.matmul(ctx, tape.param(params.get(pre + "attn.wo"))),
          tape.param(params.get(pre + "attn.bo")));
      attn_out = drop(attn_out);
      x = tape.layer_norm(tape.add(x, attn_out),
                          tape.param(params.get(pre + "ln1.gain")),
                          tape.param(params.get(pre + "ln1.bias")));

      NodeRef ff = tape.add_rowvec(
          tape.matmul(x, tape.param(params.get(pre + "ffn.w1"))),
          tape.param(params.get(pre + "ffn.b1")));
      ff = tape.gelu(ff);
      ff = tape.add_rowvec(
          tape.matmul(ff, tape.param(params.get(pre + "ffn.w2"))),
          tape.param(params.get(pre + "ffn.b2")));
      ff = drop(ff);
      x = tape.layer_norm(tape.add(x, ff),
                          tape.param(params.get(pre + "ln2.gain")),
                          tape.param(params.get(pre + "ln2.bias")));
    }
    return x;
  }

  NodeRef lm_logits(Tape& tape, NodeRef hidden) {
    return tape.add_rowvec(
        tape.matmul(hidden, tape.param(params.get("head.lm.w"))),
        tape.param(params.get("head.lm.b")));
  }

  NodeRef ast_logits(Tape& tape, NodeRef hidden) {
    return tape.add_rowvec(
        tape.matmul(hidden, tape.param(params.get("head.ast.w"))),
        tape.param(params.get("head.ast.b")));
  }

  // Per-token distribution over the vocabulary (rows sum to one).
  NodeRef lm_head(Tape& tape, NodeRef hidden) {
    return tape.softmax_rows(lm_logits(tape, hidden));
  }

  NodeRef ast_head(Tape& tape, NodeRef hidden) {
    return tape.softmax_rows(ast_logits(tape, hidden));
  }

  // Classification logit from a 1 x k feature row (h_CLS or the aggregator
  // output). p_VI = sigmoid of this.
  NodeRef vi_logit(Tape& tape, NodeRef features, bool aggregate) {
    const char* name = aggregate ? "head.vi.agg_w" : "head.vi.w";
    return tape.matmul(features, tape.param(params.get(name)));
  }

  double vi_probability(Tape& tape, NodeRef features, bool aggregate) {
    return tape.sigmoid_of(vi_logit(tape, features, aggregate))->val.at(0, 0);
  }

  // Bidirectional recurrent combination of per-segment [CLS] vectors.
  // `cls_rows` is N x hidden; the result is 1 x 2*hidden (final forward and
  // backward states). A single segment still passes through the recurrence.
  NodeRef recurrent_aggregate(Tape& tape, NodeRef cls_rows) {
    if (cls_rows->val.rows < 1) throw EmptySequence();
    NodeRef fwd = lstm_final(tape, cls_rows, "agg.fwd.", /*reverse=*/false);
    NodeRef bwd = lstm_final(tape, cls_rows, "agg.bwd.", /*reverse=*/true);
    return tape.concat_cols({fwd, bwd});
  }

 private:
  NodeRef lstm_final(Tape& tape, NodeRef rows, const std::string& prefix,
                     bool reverse) {
    const int n = rows->val.rows;
    const int h = cfg.hidden;
    NodeRef w = tape.param(params.get(prefix + "w"));
    NodeRef b = tape.param(params.get(prefix + "b"));
    NodeRef hprev = tape.input(Matrix(1, h));
    NodeRef cprev = tape.input(Matrix(1, h));
    for (int step = 0; step < n; ++step) {
      const int r = reverse ? n - 1 - step : step;
      NodeRef xt = tape.slice_rows(rows, r, r + 1);
      NodeRef zin = tape.concat_cols({xt, hprev});
      NodeRef gates = tape.add_rowvec(tape.matmul(zin, w), b);
      NodeRef ig = tape.sigmoid_of(tape.slice_cols(gates, 0, h));
      NodeRef fg = tape.sigmoid_of(tape.slice_cols(gates, h, 2 * h));
      NodeRef gg = tape.tanh_of(tape.slice_cols(gates, 2 * h, 3 * h));
      NodeRef og = tape.sigmoid_of(tape.slice_cols(gates, 3 * h, 4 * h));
      cprev = tape.add(tape.hadamard(fg, cprev), tape.hadamard(ig, gg));
      hprev = tape.hadamard(og, tape.tanh_of(cprev));
    }
    return hprev;
  }
};

// Adam with linear warmup. No weight decay.
class AdamOptimizer {
 public:
  struct Settings {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_fraction = 0.1;
    std::int64_t total_steps = 0;  // 0 disables warmup
  };

  explicit AdamOptimizer(Settings s) : s_(s) {}

  double current_lr() const {
    if (s_.total_steps <= 0 || s_.warmup_fraction <= 0.0) return s_.lr;
    const double warmup = std::max(1.0, s_.warmup_fraction *
                                            static_cast<double>(s_.total_steps));
    const double t = static_cast<double>(step_ + 1);
    return t < warmup ? s_.lr * t / warmup : s_.lr;
  }

  void step(ParamStore& params) {
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(step_));
    for (Param* p : params.all()) {
      if (!p->grad.finite()) throw NonFiniteGradient(p->name);
      auto& m = moment1_[p->name];
      auto& v = moment2_[p->name];
      if (m.size() != p->grad.size()) {
        m.assign(p->grad.size(), 0.0);
        v.assign(p->grad.size(), 0.0);
      }
      for (std::size_t i = 0; i < p->grad.size(); ++i) {
        const double g = p->grad.a[i];
        m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g;
        v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p->value.a[i] -= lr * mhat / (std::sqrt(vhat) + s_.eps);
      }
    }
  }

  std::int64_t steps_taken() const { return step_; }

 private:
  Settings s_;
  std::int64_t step_ = 0;
  std::map<std::string, std::vector<double>> moment1_;
  std::map<std::string, std::vector<double>> moment2_;
};

}  // namespace srclm
