#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kale/encoder.hpp"
#include "kale/losses.hpp"
#include "kale/metrics.hpp"
#include "kale/vocab.hpp"

namespace kale {

// Frozen document store with exact top-k search. Cosine mode stores
// L2-normalized rows, so search is a plain inner product either way.
struct RetrievalIndex {
  int dim = 0;
  Similarity similarity = Similarity::cosine;
  std::vector<std::string> doc_ids;
  std::vector<float> vectors;  // count x dim, row-major

  int count() const { return static_cast<int>(doc_ids.size()); }
};

struct ScoredDoc {
  std::string doc_id;
  float score;
  bool operator==(const ScoredDoc&) const = default;
};

RetrievalIndex build_index(const std::vector<std::pair<std::string, std::string>>& docs,
                           const TransformerEncoder<float>& encoder,
                           const Vocabulary& vocab, Similarity similarity);

// Exact top-k by similarity, descending; ties break by ascending doc id.
// k beyond the corpus returns the full ranking.
std::vector<ScoredDoc> search_topk(const RetrievalIndex& index,
                                   const std::vector<float>& query_vec, int k);

// Index file: magic "KALEIDX1", u32 LE dim, u32 LE count, similarity byte
// (0=cosine, 1=dot), id table (u16 LE length + UTF-8), f32 LE row-major
// vectors.
void save_index(const RetrievalIndex& index, const std::string& path);
RetrievalIndex load_index(const std::string& path);

// Results file: "query_id TAB doc_id TAB rank TAB score", 6-decimal scores.
struct ResultLine {
  std::string query_id;
  std::string doc_id;
  int rank;
  double score;
};

void save_results(const std::vector<ResultLine>& results, const std::string& path);
std::vector<ResultLine> load_results(const std::string& path);

// Encodes each (query_id, text) pair and ranks the index's documents.
struct SearchOutput {
  Rankings rankings;
  std::vector<ResultLine> lines;
};
SearchOutput search_queries(const RetrievalIndex& index,
                            const TransformerEncoder<float>& encoder,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<std::string, std::string>>& queries,
                            int k);

}  // namespace kale
