#include "kale/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kale/adam.hpp"

namespace kale {

namespace {

struct TokenizedExample {
  Tokenized query;
  Tokenized positive;
  std::vector<Tokenized> negatives;
};

std::vector<TokenizedExample> tokenize_data(const std::vector<TrainExample>& data,
                                            const Vocabulary& vocab, int q_max_len,
                                            int d_max_len, int negatives_cap) {
  std::vector<TokenizedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    if (ex.positive_doc.empty())
      throw InputError("train example with empty positive document");
    TokenizedExample te;
    te.query = tokenize(ex.query, vocab, q_max_len);
    te.positive = tokenize(ex.positive_doc, vocab, d_max_len);
    const int n = std::min<int>(negatives_cap, static_cast<int>(ex.negative_docs.size()));
    for (int i = 0; i < n; ++i)
      te.negatives.push_back(tokenize(ex.negative_docs[static_cast<std::size_t>(i)],
                                      vocab, d_max_len));
    out.push_back(std::move(te));
  }
  return out;
}

}  // namespace

TrainResult train_retriever(const std::vector<TrainExample>& data,
                            const EncoderConfig& query_cfg,
                            const EncoderConfig& doc_cfg, const TrainConfig& cfg,
                            const Vocabulary& vocab) {
  if (data.empty()) throw InputError("train_retriever: no training data");
  cfg.validate();
  if (query_cfg.hidden_dim != doc_cfg.hidden_dim)
    throw ConfigError("train_retriever: towers must share hidden_dim (" +
                      std::to_string(query_cfg.hidden_dim) + " vs " +
                      std::to_string(doc_cfg.hidden_dim) + ")");

  std::mt19937 rng(cfg.seed);
  TransformerEncoder<float> query_encoder(query_cfg, rng);
  TransformerEncoder<float> doc_encoder(doc_cfg, rng);
  query_encoder.set_mode(Mode::train);
  doc_encoder.set_mode(Mode::train);

  auto tokenized = tokenize_data(data, vocab, query_cfg.max_seq_len,
                                 doc_cfg.max_seq_len, cfg.negatives_per_example);

  std::vector<AdamState<float>> q_states, d_states;
  for (auto& [name, t] : query_encoder.parameters())
    q_states.push_back(AdamState<float>::for_param(t, static_cast<float>(cfg.learning_rate)));
  for (auto& [name, t] : doc_encoder.parameters())
    d_states.push_back(AdamState<float>::for_param(t, static_cast<float>(cfg.learning_rate)));

  const std::size_t n = tokenized.size();
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> epoch_mean_loss;
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<Tensor<float>> queries, positives, negatives;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& ex = tokenized[order[i]];
        queries.push_back(query_encoder.encode(ex.query, &rng));
        positives.push_back(doc_encoder.encode(ex.positive, &rng));
        if (cfg.objective == Objective::in_batch_contrastive)
          for (const auto& neg : ex.negatives)
            negatives.push_back(doc_encoder.encode(neg, &rng));
      }

      Tensor<float> loss;
      if (cfg.objective == Objective::cosine_eq1) {
        loss = cosine_loss(queries[0], positives[0]);
        for (std::size_t i = 1; i < queries.size(); ++i)
          loss = add(loss, cosine_loss(queries[i], positives[i]));
        loss = scale(loss, 1.0f / static_cast<float>(queries.size()));
      } else {
        loss = in_batch_contrastive_loss(queries, positives, negatives, cfg.similarity);
      }

      const float loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw TrainingError("training diverged: non-finite loss at step " +
                            std::to_string(step));
      loss_sum += loss_value;

      query_encoder.zero_grad();
      doc_encoder.zero_grad();
      loss.backward();

      float lr = static_cast<float>(cfg.learning_rate);
      if (cfg.schedule == LrSchedule::linear)
        lr *= 1.0f - static_cast<float>(step) / static_cast<float>(total_steps);
      auto apply = [&](TransformerEncoder<float>& enc, std::vector<AdamState<float>>& states) {
        auto& params = enc.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& t = params[i].second;
          if (!t.has_grad()) continue;
          states[i].learning_rate = lr;
          adam_step(t, t.grad(), states[i]);
        }
      };
      apply(query_encoder, q_states);
      apply(doc_encoder, d_states);
      ++step;
    }
    epoch_mean_loss.push_back(loss_sum / static_cast<double>(batches_per_epoch));
  }

  query_encoder.set_mode(Mode::eval);
  doc_encoder.set_mode(Mode::eval);
  return TrainResult{BiEncoder{std::move(query_encoder), std::move(doc_encoder)},
                     std::move(epoch_mean_loss)};
}

double candidate_accuracy(const BiEncoder& model, const std::vector<TrainExample>& data,
                          const Vocabulary& vocab, int batch_size, Similarity sim) {
  if (data.empty()) throw InputError("candidate_accuracy: no data");
  NoGradGuard ng;
  TransformerEncoder<float> q = model.query_encoder;  // shallow copies; eval mode
  TransformerEncoder<float> d = model.document_encoder;
  q.set_mode(Mode::eval);
  d.set_mode(Mode::eval);
  auto tokenized = tokenize_data(data, vocab, q.config().max_seq_len,
                                 d.config().max_seq_len, 8);
  double acc_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t b0 = 0; b0 < tokenized.size(); b0 += batch_size) {
    const std::size_t b1 = std::min(tokenized.size(), b0 + batch_size);
    if (b1 - b0 < 2) break;  // a one-query tail has no candidates to confuse
    std::vector<Tensor<float>> queries, positives, negatives;
    for (std::size_t i = b0; i < b1; ++i) {
      queries.push_back(q.encode(tokenized[i].query));
      positives.push_back(d.encode(tokenized[i].positive));
      for (const auto& neg : tokenized[i].negatives)
        negatives.push_back(d.encode(neg));
    }
    acc_sum += contrastive_accuracy(queries, positives, negatives, sim);
    ++batches;
  }
  if (batches == 0) throw InputError("candidate_accuracy: need at least 2 examples");
  return acc_sum / static_cast<double>(batches);
}

}  // namespace kale
