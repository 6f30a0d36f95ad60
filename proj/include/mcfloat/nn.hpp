#pragma once

/// MCModule layers with the familiar layer-stack interface; the only extra
/// constructor argument relative to a plain layer is the component count nc.
/// Layers take working-precision inputs, hold MCTensor parameters, and
/// produce MC outputs whose evaluated sums flow to the next layer.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcfloat/autodiff.hpp"
#include "mcfloat/rng.hpp"
#include "mcfloat/serialize.hpp"

namespace mcf {

template <class P>
struct NamedParam {
  std::string name;
  MCTensor<P>* tensor;
};

template <class P>
class MCModule {
 public:
  virtual ~MCModule() = default;
  virtual Var forward(Tape<P>& tape, Var input) = 0;
  virtual std::vector<NamedParam<P>> parameters() { return {}; }
  virtual Json config() const = 0;

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }
};

/// Kaiming-style uniform fan-in initialization. Draws happen in binary64
/// from the caller's seeded generator and round into component 0, so models
/// of every precision and nc share the same initial values.
template <class P>
MCTensor<P> init_linear_weight(std::size_t out, std::size_t in, int nc, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  NdArray w(Shape{out, in});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return MCTensor<P>::from_float(round_to<P>(w), nc);
}

template <class P>
class MCLinear : public MCModule<P> {
 public:
  MCLinear(std::size_t in_features, std::size_t out_features, bool bias, int nc,
           Rng& rng)
      : in_(in_features), out_(out_features), nc_(nc),
        weight_(init_linear_weight<P>(out_features, in_features, nc, rng)) {
    if (bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
      NdArray b(Shape{out_features});
      for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-bound, bound);
      bias_ = MCTensor<P>::from_float(round_to<P>(b), nc);
    }
  }

  Var forward(Tape<P>& tape, Var input) override {
    return mc_linear_op(tape, input, weight_, bias_ ? &*bias_ : nullptr, plan);
  }

  std::vector<NamedParam<P>> parameters() override {
    std::vector<NamedParam<P>> out{{"weight", &weight_}};
    if (bias_) out.push_back({"bias", &*bias_});
    return out;
  }

  Json config() const override {
    return Json{{"type", "mclinear"},
                {"in", in_},
                {"out", out_},
                {"bias", bias_.has_value()},
                {"nc", nc_}};
  }

  MCTensor<P>& weight() { return weight_; }
  std::optional<MCTensor<P>>& bias() { return bias_; }

  ReductionPlan plan;

 private:
  std::size_t in_, out_;
  int nc_;
  MCTensor<P> weight_;
  std::optional<MCTensor<P>> bias_;
};

template <class P>
class MCEmbedding : public MCModule<P> {
 public:
  MCEmbedding(std::size_t num_embeddings, std::size_t dim, int nc, Rng& rng,
              double init_scale = 1e-3)
      : num_(num_embeddings), dim_(dim), nc_(nc), table_(Shape{num_embeddings, dim}, nc) {
    NdArray t(Shape{num_embeddings, dim});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, init_scale);
    table_ = MCTensor<P>::from_float(round_to<P>(t), nc);
  }

  Var forward_indices(Tape<P>& tape, const std::vector<std::size_t>& indices) {
    return mc_embedding_op(tape, table_, indices);
  }

  /// Row lookups are index-driven; the Var pathway is not part of this
  /// layer's interface.
  Var forward(Tape<P>&, Var) override {
    throw std::invalid_argument("MCEmbedding: use forward_indices");
  }

  std::vector<NamedParam<P>> parameters() override { return {{"table", &table_}}; }

  Json config() const override {
    return Json{{"type", "mcembedding"}, {"num", num_}, {"dim", dim_}, {"nc", nc_}};
  }

  MCTensor<P>& table() { return table_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return num_; }

 private:
  std::size_t num_, dim_;
  int nc_;
  MCTensor<P> table_;
};

template <class P>
class ReLULayer : public MCModule<P> {
 public:
  Var forward(Tape<P>& tape, Var input) override { return tape.relu(input); }
  Json config() const override { return Json{{"type", "relu"}}; }
};

template <class P>
class SigmoidLayer : public MCModule<P> {
 public:
  Var forward(Tape<P>& tape, Var input) override { return tape.sigmoid(input); }
  Json config() const override { return Json{{"type", "sigmoid"}}; }
};

template <class P>
class GELULayer : public MCModule<P> {
 public:
  Var forward(Tape<P>& tape, Var input) override { return tape.gelu(input); }
  Json config() const override { return Json{{"type", "gelu"}}; }
};

/// GELU on an evaluated sum (the activation used between MC layers).
template <class P>
inline NdArray mc_gelu(const NdArray& x) {
  return map<P>(x, [](double v) {
    const double k = 0.7978845608028654;
    return 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v)));
  });
}

template <class P>
class MCSequential : public MCModule<P> {
 public:
  MCSequential() = default;

  template <class Layer>
  MCSequential& add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  /// Layer outputs flow as evaluated sums: Var values are approx() of each
  /// MC layer's expansion, which is what the next layer consumes.
  Var forward(Tape<P>& tape, Var input) override {
    Var cur = input;
    for (auto& l : layers_) cur = l->forward(tape, cur);
    return cur;
  }

  std::vector<NamedParam<P>> parameters() override {
    std::vector<NamedParam<P>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto& p : layers_[i]->parameters()) {
        out.push_back({std::to_string(i) + "." + p.name, p.tensor});
      }
    }
    return out;
  }

  Json config() const override {
    Json layers = Json::array();
    for (const auto& l : layers_) layers.push_back(l->config());
    return Json{{"type", "sequential"}, {"layers", layers}};
  }

  std::size_t size() const { return layers_.size(); }
  MCModule<P>& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<MCModule<P>>> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoints: layer-topology manifest plus named parameter blobs.
// ---------------------------------------------------------------------------

template <class P>
Json checkpoint_to_json(MCModule<P>& model) {
  Json params = Json::object();
  for (auto& p : model.parameters()) params[p.name] = mct_to_json(*p.tensor);
  return Json{{"format", "mcf-checkpoint"},
              {"model", model.config()},
              {"params", params}};
}

/// Restores parameter values into an already-constructed model of matching
/// topology; bit-exact by the blob format.
template <class P>
void load_checkpoint(MCModule<P>& model, const Json& ckpt) {
  if (ckpt.value("format", "") != "mcf-checkpoint") {
    throw std::invalid_argument("load_checkpoint: not a checkpoint blob");
  }
  if (ckpt.at("model") != model.config()) {
    throw std::invalid_argument("load_checkpoint: model topology mismatch");
  }
  for (auto& p : model.parameters()) {
    *p.tensor = mct_from_json<P>(ckpt.at("params").at(p.name));
  }
}

/// Fraction of rows whose argmax matches the label.
inline double accuracy_from_logits(const NdArray& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.at(r, j) > logits.at(r, best)) best = j;
    }
    if (static_cast<int>(best) == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Fraction of sigmoid(logit) >= 1/2 decisions matching binary targets.
inline double accuracy_from_binary_logits(const NdArray& logits,
                                          const NdArray& targets) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const bool pred = logits[i] >= 0.0;
    if (pred == (targets[i] >= 0.5)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.numel());
}

}  // namespace mcf
