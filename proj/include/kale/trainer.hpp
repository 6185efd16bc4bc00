#pragma once

#include <string>
#include <vector>

#include "kale/encoder.hpp"
#include "kale/losses.hpp"
#include "kale/vocab.hpp"

namespace kale {

struct TrainExample {
  std::string query;
  std::string positive_doc;
  std::vector<std::string> negative_docs;  // up to 8
};

enum class Objective { cosine_eq1, in_batch_contrastive };

inline std::string to_string(Objective o) {
  return o == Objective::cosine_eq1 ? "cosine_eq1" : "in_batch_contrastive";
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "cosine_eq1") return Objective::cosine_eq1;
  if (s == "in_batch_contrastive") return Objective::in_batch_contrastive;
  throw ParseError("unknown objective '" + s + "'");
}

enum class LrSchedule { linear, constant };

inline std::string to_string(LrSchedule s) {
  return s == LrSchedule::linear ? "linear" : "constant";
}

inline LrSchedule schedule_from_string(const std::string& s) {
  if (s == "linear") return LrSchedule::linear;
  if (s == "constant") return LrSchedule::constant;
  throw ParseError("unknown schedule '" + s + "'");
}

struct TrainConfig {
  Objective objective = Objective::in_batch_contrastive;
  int epochs = 40;                // grid: 3, 40
  int batch_size = 8;             // grid: 8, 128
  double learning_rate = 5e-5;    // grid: 1e-5, 5e-5, 5e-6
  LrSchedule schedule = LrSchedule::linear;
  int negatives_per_example = 1;  // grid: 1, 8
  Similarity similarity = Similarity::cosine;
  unsigned seed = 42;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
    if (negatives_per_example < 0 || negatives_per_example > 8)
      throw ConfigError("train: negatives_per_example must be in [0,8]");
  }
};

// Paired towers sharing an embedding width; depths may differ.
struct BiEncoder {
  TransformerEncoder<float> query_encoder;
  TransformerEncoder<float> document_encoder;

  void set_mode(Mode m) {
    query_encoder.set_mode(m);
    document_encoder.set_mode(m);
  }
};

struct TrainResult {
  BiEncoder model;
  std::vector<double> epoch_mean_loss;
};

// Trains a bi-encoder retriever. Deterministic under the config seed:
// initialization, shuffling, and dropout all draw from one seeded stream.
TrainResult train_retriever(const std::vector<TrainExample>& data,
                            const EncoderConfig& query_cfg,
                            const EncoderConfig& doc_cfg, const TrainConfig& cfg,
                            const Vocabulary& vocab);

// Eval-mode candidate-softmax argmax accuracy over batches of the dataset;
// chance level is 1/candidates per batch.
double candidate_accuracy(const BiEncoder& model, const std::vector<TrainExample>& data,
                          const Vocabulary& vocab, int batch_size,
                          Similarity sim = Similarity::cosine);

}  // namespace kale
