#pragma once

#include <algorithm>
#include <cctype>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kale/ops.hpp"
#include "kale/tensor.hpp"
#include "kale/vocab.hpp"

namespace kale {

enum class Pooling { cls, mean };

inline std::string to_string(Pooling p) { return p == Pooling::cls ? "cls" : "mean"; }

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "cls") return Pooling::cls;
  if (s == "mean") return Pooling::mean;
  throw ParseError("unknown pooling '" + s + "'");
}

struct EncoderConfig {
  int num_layers = 4;
  int hidden_dim = 64;
  int num_heads = 4;
  int ff_dim = 128;
  int vocab_size = 0;
  int max_seq_len = 32;
  double dropout_rate = 0.1;
  Pooling pooling = Pooling::cls;

  void validate() const {
    if (num_layers < 1) throw ConfigError("encoder: num_layers must be >= 1");
    if (num_heads < 1) throw ConfigError("encoder: num_heads must be >= 1");
    if (hidden_dim < 1 || hidden_dim % num_heads != 0)
      throw ConfigError("encoder: hidden_dim must be a positive multiple of num_heads");
    if (ff_dim < 1) throw ConfigError("encoder: ff_dim must be >= 1");
    if (vocab_size < 4) throw ConfigError("encoder: vocab_size must be >= 4");
    if (max_seq_len < 2) throw ConfigError("encoder: max_seq_len must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("encoder: dropout_rate must be in [0,1)");
  }
};

enum class Mode { train, eval };
enum class PruneStrategy { bottom, bottom_plus_top };

inline std::string to_string(PruneStrategy s) {
  return s == PruneStrategy::bottom ? "bottom" : "bottom_plus_top";
}

inline PruneStrategy prune_strategy_from_string(const std::string& s) {
  if (s == "bottom") return PruneStrategy::bottom;
  if (s == "bottom_plus_top") return PruneStrategy::bottom_plus_top;
  throw ParseError("unknown prune strategy '" + s + "'");
}

struct Tokenized {
  std::vector<int> ids;
  std::vector<int> mask;
};

// Lowercased whitespace tokenization against a fixed table:
// [CLS] + first (max_len-2) tokens + [SEP], right-padded with [PAD].
inline Tokenized tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
  Tokenized out;
  out.ids.reserve(static_cast<std::size_t>(max_len));
  out.ids.push_back(vocab.cls_id());
  std::istringstream ss(text);
  std::string word;
  while (static_cast<int>(out.ids.size()) < max_len - 1 && ss >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.ids.push_back(vocab.id_or_unk(word));
  }
  out.ids.push_back(vocab.sep_id());
  out.mask.assign(out.ids.size(), 1);
  while (static_cast<int>(out.ids.size()) < max_len) {
    out.ids.push_back(vocab.pad_id());
    out.mask.push_back(0);
  }
  return out;
}

// A miniature BERT-style tower: token+position embeddings, post-norm blocks
// of multi-head self-attention and a GELU feed-forward, pooled to a single
// vector. Parameters are held in a canonical, stable order.
template <typename S>
class TransformerEncoder {
 public:
  using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

  TransformerEncoder(EncoderConfig cfg, std::mt19937& rng) : cfg_(cfg) {
    cfg_.validate();
    std::normal_distribution<double> init(0.0, 0.02);
    auto weight = [&](const std::string& name, std::vector<int> shape) {
      std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
      for (auto& v : data) v = static_cast<S>(init(rng));
      add_param(name, Tensor<S>::from(std::move(data), std::move(shape), true));
    };
    auto constant = [&](const std::string& name, std::vector<int> shape, S value) {
      add_param(name, Tensor<S>::full(std::move(shape), value, true));
    };
    const int h = cfg_.hidden_dim, f = cfg_.ff_dim;
    weight("token_embedding.weight", {cfg_.vocab_size, h});
    weight("position_embedding.weight", {cfg_.max_seq_len, h});
    constant("embedding_norm.gamma", {h}, S(1));
    constant("embedding_norm.beta", {h}, S(0));
    for (int b = 0; b < cfg_.num_layers; ++b) {
      const std::string p = "block." + std::to_string(b) + ".";
      for (const char* proj : {"query", "key", "value", "output"}) {
        weight(p + "attention." + proj + ".weight", {h, h});
        constant(p + "attention." + proj + ".bias", {h}, S(0));
      }
      constant(p + "attention_norm.gamma", {h}, S(1));
      constant(p + "attention_norm.beta", {h}, S(0));
      weight(p + "ff.in.weight", {h, f});
      constant(p + "ff.in.bias", {f}, S(0));
      weight(p + "ff.out.weight", {f, h});
      constant(p + "ff.out.bias", {h}, S(0));
      constant(p + "ff_norm.gamma", {h}, S(1));
      constant(p + "ff_norm.beta", {h}, S(0));
    }
  }

  // Rebuilds a tower from an explicit parameter list (checkpoint load). The
  // set of names and shapes must match the config exactly.
  static TransformerEncoder from_parameters(EncoderConfig cfg, ParamList params) {
    cfg.validate();
    std::mt19937 rng(0);
    TransformerEncoder model(cfg, rng);
    if (params.size() != model.params_.size())
      throw InputError("parameter set mismatch: expected " +
                       std::to_string(model.params_.size()) + " tensors, got " +
                       std::to_string(params.size()));
    std::unordered_map<std::string, Tensor<S>> incoming;
    for (auto& [name, t] : params) {
      if (!incoming.emplace(name, t).second)
        throw InputError("duplicate parameter '" + name + "'");
    }
    for (auto& [name, t] : model.params_) {
      auto it = incoming.find(name);
      if (it == incoming.end()) throw InputError("missing parameter '" + name + "'");
      if (it->second.shape() != t.shape())
        throw InputError("parameter '" + name + "' has shape " +
                         shape_str(it->second.shape()) + ", expected " +
                         shape_str(t.shape()));
      t.value() = it->second.value();
    }
    return model;
  }

  const EncoderConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  ParamList& parameters() { return params_; }
  const ParamList& parameters() const { return params_; }

  Tensor<S>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("no parameter named '" + name + "'");
    return params_[it->second].second;
  }
  const Tensor<S>& param(const std::string& name) const {
    return const_cast<TransformerEncoder*>(this)->param(name);
  }
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : params_) t.set_requires_grad(rg);
  }

  // Maps one tokenized input to its pooled embedding. Dropout fires only in
  // train mode and draws from the supplied stream.
  Tensor<S> encode(const std::vector<int>& ids, const std::vector<int>& mask,
                   std::mt19937* dropout_rng = nullptr) const {
    if (ids.size() != mask.size())
      throw InputError("encode: ids and mask lengths differ");
    const int seq = static_cast<int>(ids.size());
    if (seq < 1 || seq > cfg_.max_seq_len)
      throw InputError("encode: sequence length " + std::to_string(seq) +
                       " outside [1," + std::to_string(cfg_.max_seq_len) + "]");
    const bool use_dropout = mode_ == Mode::train && cfg_.dropout_rate > 0.0;
    if (use_dropout && dropout_rng == nullptr)
      throw ParameterError("encode: train-mode dropout requires an RNG");
    const int h = cfg_.hidden_dim;
    const int heads = cfg_.num_heads;
    const int dh = h / heads;
    const S eps = S(1e-12);

    std::vector<int> positions(static_cast<std::size_t>(seq));
    for (int i = 0; i < seq; ++i) positions[static_cast<std::size_t>(i)] = i;
    std::vector<S> bias_data(static_cast<std::size_t>(seq));
    for (int i = 0; i < seq; ++i)
      bias_data[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? S(0) : S(-1e9);
    Tensor<S> attn_bias = Tensor<S>::from(std::move(bias_data), {seq});

    Tensor<S> x = add(embedding_rows(param("token_embedding.weight"), ids),
                      embedding_rows(param("position_embedding.weight"), positions));
    x = layer_norm(x, param("embedding_norm.gamma"), param("embedding_norm.beta"), eps);
    if (use_dropout) x = dropout(x, cfg_.dropout_rate, *dropout_rng);

    const S inv_sqrt_dh = S(1) / std::sqrt(S(dh));
    for (int b = 0; b < cfg_.num_layers; ++b) {
      const std::string p = "block." + std::to_string(b) + ".";
      Tensor<S> q = add_rowwise(matmul(x, param(p + "attention.query.weight")),
                                param(p + "attention.query.bias"));
      Tensor<S> k = add_rowwise(matmul(x, param(p + "attention.key.weight")),
                                param(p + "attention.key.bias"));
      Tensor<S> v = add_rowwise(matmul(x, param(p + "attention.value.weight")),
                                param(p + "attention.value.bias"));
      std::vector<Tensor<S>> head_outputs;
      head_outputs.reserve(static_cast<std::size_t>(heads));
      for (int hd = 0; hd < heads; ++hd) {
        Tensor<S> qh = slice_cols(q, hd * dh, dh);
        Tensor<S> kh = slice_cols(k, hd * dh, dh);
        Tensor<S> vh = slice_cols(v, hd * dh, dh);
        Tensor<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        scores = add_rowwise(scores, attn_bias);
        head_outputs.push_back(matmul(softmax(scores, S(1)), vh));
      }
      Tensor<S> attn = add_rowwise(
          matmul(concat_cols(head_outputs), param(p + "attention.output.weight")),
          param(p + "attention.output.bias"));
      if (use_dropout) attn = dropout(attn, cfg_.dropout_rate, *dropout_rng);
      x = layer_norm(add(x, attn), param(p + "attention_norm.gamma"),
                     param(p + "attention_norm.beta"), eps);
      Tensor<S> ff = gelu(add_rowwise(matmul(x, param(p + "ff.in.weight")),
                                      param(p + "ff.in.bias")));
      ff = add_rowwise(matmul(ff, param(p + "ff.out.weight")), param(p + "ff.out.bias"));
      if (use_dropout) ff = dropout(ff, cfg_.dropout_rate, *dropout_rng);
      x = layer_norm(add(x, ff), param(p + "ff_norm.gamma"), param(p + "ff_norm.beta"), eps);
    }

    if (cfg_.pooling == Pooling::cls) return row(x, 0);
    std::vector<S> weights(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = static_cast<S>(mask[i]);
    return masked_mean_rows(x, weights);
  }

  Tensor<S> encode(const Tokenized& t, std::mt19937* dropout_rng = nullptr) const {
    return encode(t.ids, t.mask, dropout_rng);
  }

  // Structural pruning: value-copies the embeddings and the surviving
  // blocks, renumbered consecutively. `bottom` keeps blocks [0, keep);
  // `bottom_plus_top` keeps [0, keep-1) plus the last block.
  TransformerEncoder prune_layers(int keep, PruneStrategy strategy) const {
    if (keep < 1 || keep > cfg_.num_layers)
      throw ParameterError("prune_layers: keep " + std::to_string(keep) +
                           " outside [1," + std::to_string(cfg_.num_layers) + "]");
    std::vector<int> survivors;
    if (strategy == PruneStrategy::bottom) {
      for (int b = 0; b < keep; ++b) survivors.push_back(b);
    } else {
      for (int b = 0; b < keep - 1; ++b) survivors.push_back(b);
      survivors.push_back(cfg_.num_layers - 1);
    }
    EncoderConfig cfg = cfg_;
    cfg.num_layers = keep;
    std::mt19937 rng(0);
    TransformerEncoder out(cfg, rng);
    out.mode_ = mode_;
    for (auto& [name, t] : out.params_) {
      std::string source = name;
      if (name.rfind("block.", 0) == 0) {
        const auto dot = name.find('.', 6);
        const int new_idx = std::stoi(name.substr(6, dot - 6));
        source = "block." + std::to_string(survivors[static_cast<std::size_t>(new_idx)]) +
                 name.substr(dot);
      }
      t.value() = param(source).value();
    }
    return out;
  }

 private:
  void add_param(const std::string& name, Tensor<S> t) {
    index_.emplace(name, params_.size());
    params_.emplace_back(name, std::move(t));
  }

  EncoderConfig cfg_;
  Mode mode_ = Mode::train;
  ParamList params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace kale
