#include "kale/kale_align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kale/adam.hpp"

namespace kale {

namespace {

double mean_eval_loss(const TransformerEncoder<float>& student,
                      const std::vector<Tokenized>& tokens,
                      const std::vector<Tensor<float>>& teacher_vecs,
                      const KaleConfig& cfg) {
  NoGradGuard ng;
  TransformerEncoder<float> probe = student;  // shallow copy to flip mode
  probe.set_mode(Mode::eval);
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Tensor<float> sv = probe.encode(tokens[i]);
    total += kale_loss(sv, teacher_vecs[i], static_cast<float>(cfg.temperature),
                       static_cast<float>(cfg.loss_scale), cfg.distance)
                 .item();
  }
  return total / static_cast<double>(tokens.size());
}

}  // namespace

KaleResult kale_align(const BiEncoder& trained, const std::vector<std::string>& queries,
                      const Vocabulary& vocab, const KaleConfig& cfg) {
  cfg.validate();
  if (queries.empty()) throw InputError("kale_align: empty query sample");
  const int teacher_depth = trained.query_encoder.config().num_layers;
  if (cfg.keep_layers > teacher_depth)
    throw ConfigError("kale_align: keep_layers " + std::to_string(cfg.keep_layers) +
                      " exceeds teacher depth " + std::to_string(teacher_depth));

  std::mt19937 rng(cfg.seed);

  // The teacher runs deterministically and is never mutated; encoding under
  // NoGrad keeps its tensors untouched.
  TransformerEncoder<float> teacher = trained.query_encoder;  // shallow copy
  teacher.set_mode(Mode::eval);

  std::vector<std::string> sample = queries;
  if (cfg.sample_size > 0 && cfg.sample_size < static_cast<int>(sample.size())) {
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(static_cast<std::size_t>(cfg.sample_size));
  }

  std::vector<Tokenized> tokens;
  tokens.reserve(sample.size());
  for (const auto& q : sample)
    tokens.push_back(tokenize(q, vocab, teacher.config().max_seq_len));

  // Teacher embeddings are dropout-free, hence identical every epoch;
  // compute them once and cache.
  std::vector<Tensor<float>> teacher_vecs;
  teacher_vecs.reserve(tokens.size());
  {
    NoGradGuard ng;
    for (const auto& t : tokens) teacher_vecs.push_back(teacher.encode(t));
  }

  TransformerEncoder<float> student = teacher.prune_layers(cfg.keep_layers, cfg.strategy);
  student.set_mode(cfg.student_dropout ? Mode::train : Mode::eval);

  std::vector<AdamState<float>> states;
  for (auto& [name, t] : student.parameters())
    states.push_back(AdamState<float>::for_param(t, static_cast<float>(cfg.learning_rate)));

  KaleResult result{std::move(student), 0.0, 0.0, {}};
  result.initial_loss = mean_eval_loss(result.student, tokens, teacher_vecs, cfg);

  const float temperature = static_cast<float>(cfg.temperature);
  const float loss_scale = static_cast<float>(cfg.loss_scale);
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      Tensor<float> loss;
      for (std::size_t i = b0; i < b1; ++i) {
        const std::size_t idx = order[i];
        Tensor<float> sv = result.student.encode(tokens[idx], &rng);
        Tensor<float> term =
            kale_loss(sv, teacher_vecs[idx], temperature, loss_scale, cfg.distance);
        loss = i == b0 ? term : add(loss, term);
      }
      loss = scale(loss, 1.0f / static_cast<float>(b1 - b0));
      const float loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw TrainingError("kale alignment diverged: non-finite loss at step " +
                            std::to_string(step));
      loss_sum += loss_value;
      ++batches;

      result.student.zero_grad();
      loss.backward();
      auto& params = result.student.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].second;
        if (!t.has_grad()) continue;
        adam_step(t, t.grad(), states[i]);
      }
      ++step;
    }
    result.epoch_mean_loss.push_back(loss_sum / static_cast<double>(batches));
  }

  result.final_loss = mean_eval_loss(result.student, tokens, teacher_vecs, cfg);
  result.student.set_mode(Mode::eval);
  return result;
}

}  // namespace kale
