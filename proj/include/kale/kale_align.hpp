#pragma once

#include <string>
#include <vector>

#include "kale/losses.hpp"
#include "kale/trainer.hpp"

namespace kale {

struct KaleConfig {
  double temperature = 1.0;  // paper setting
  double loss_scale = 10.0;  // paper setting
  int epochs = 100;          // grid: 1, 10, 100
  int batch_size = 256;      // grid: 4, 64, 256
  double learning_rate = 5e-4;  // grid: 5e-5, 5e-4, 5e-6
  // Schedule is constant by protocol; no knob.
  int keep_layers = 1;
  PruneStrategy strategy = PruneStrategy::bottom;
  bool student_dropout = true;
  AlignDistance distance = AlignDistance::kl;
  int sample_size = 0;  // 0 = align on every provided query
  unsigned seed = 7;

  void validate() const {
    if (!(temperature > 0)) throw ConfigError("kale: temperature must be > 0");
    if (!(loss_scale > 0)) throw ConfigError("kale: loss_scale must be > 0");
    if (epochs < 1) throw ConfigError("kale: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("kale: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("kale: learning_rate must be > 0");
    if (keep_layers < 1) throw ConfigError("kale: keep_layers must be >= 1");
    if (sample_size < 0) throw ConfigError("kale: sample_size must be >= 0");
  }
};

struct KaleResult {
  TransformerEncoder<float> student;
  double initial_loss = 0.0;  // eval-mode mean loss before any update
  double final_loss = 0.0;    // eval-mode mean loss after the last epoch
  std::vector<double> epoch_mean_loss;
};

// Freezes the teacher query tower, prunes a copy, and fine-tunes the copy to
// minimize the scaled temperature-softmax KL divergence from the teacher's
// embeddings. The document tower is never touched, so any existing index
// stays valid.
KaleResult kale_align(const BiEncoder& trained, const std::vector<std::string>& queries,
                      const Vocabulary& vocab, const KaleConfig& cfg);

}  // namespace kale
