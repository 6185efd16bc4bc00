#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kale/metrics.hpp"
#include "kale/trainer.hpp"
#include "kale/vocab.hpp"

namespace kale {

// Documents, queries, ground truth, and train/dev query splits. All line
// formats are tab-separated for diff-ability and bit-exact round trips.
struct Corpus {
  std::vector<std::pair<std::string, std::string>> docs;     // (doc_id, text)
  std::vector<std::pair<std::string, std::string>> queries;  // (query_id, text)
  Qrels qrels;
  std::vector<std::string> train_split;  // query ids
  std::vector<std::string> dev_split;

  void validate() const;
  const std::string& doc_text(const std::string& doc_id) const;
  const std::string& query_text(const std::string& query_id) const;
  std::vector<std::pair<std::string, std::string>> split_queries(bool dev) const;
};

// Topic-cluster synthetic data: every document and query samples tokens from
// its topic vocabulary, with noise_rate tokens drawn from a shared pool;
// relevance is same-topic membership.
struct SyntheticSpec {
  int num_topics = 50;
  int vocab_per_topic = 20;
  int shared_vocab = 200;
  int docs_per_topic = 20;
  int doc_len = 12;
  int queries_per_topic = 8;  // split half train, half dev
  int query_len = 5;
  double noise_rate = 0.1;
  unsigned seed = 13;

  void validate() const;
};

Corpus generate_synthetic(const SyntheticSpec& spec);

// Specials followed by the corpus token inventory in sorted order.
Vocabulary build_vocabulary(const Corpus& corpus);

// gen-data validation oracle: rank documents by idf-weighted token overlap
// and report hit-rate@depth over the given split.
double lexical_overlap_hit_rate(const Corpus& corpus, bool dev_split, int depth);

// File round trips. Formats: docs/queries "id TAB text"; splits
// "query_id TAB train|dev"; training file
// "query-text TAB positive-doc-id TAB comma-separated-negative-doc-ids".
void save_doc_file(const std::vector<std::pair<std::string, std::string>>& items,
                   const std::string& path);
std::vector<std::pair<std::string, std::string>> load_doc_file(const std::string& path);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

void save_train_examples(const std::vector<TrainExample>& examples,
                         const Corpus& corpus, const std::string& path);
std::vector<TrainExample> load_train_examples(const std::string& path,
                                              const Corpus& corpus);

// Builds training examples from the train split, sampling
// negatives_per_example negatives uniformly from non-relevant documents.
std::vector<TrainExample> make_train_examples(const Corpus& corpus,
                                              int negatives_per_example,
                                              std::mt19937& rng);

}  // namespace kale
