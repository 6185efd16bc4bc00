#include "kale/index.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

namespace kale {

namespace {

constexpr char kMagic[8] = {'K', 'A', 'L', 'E', 'I', 'D', 'X', '1'};

void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

RetrievalIndex build_index(const std::vector<std::pair<std::string, std::string>>& docs,
                           const TransformerEncoder<float>& encoder,
                           const Vocabulary& vocab, Similarity similarity) {
  if (docs.empty()) throw InputError("build_index: empty document list");
  if (encoder.mode() != Mode::eval)
    throw ParameterError("build_index: encoder must be in eval mode");
  std::set<std::string> seen;
  RetrievalIndex index;
  index.dim = encoder.config().hidden_dim;
  index.similarity = similarity;
  index.vectors.reserve(docs.size() * static_cast<std::size_t>(index.dim));
  NoGradGuard ng;
  for (const auto& [id, text] : docs) {
    if (!seen.insert(id).second)
      throw InputError("build_index: duplicate document id '" + id + "'");
    Tensor<float> vec = encoder.encode(tokenize(text, vocab, encoder.config().max_seq_len));
    std::vector<float> row = vec.value();
    if (similarity == Similarity::cosine) {
      float sq = 0.0f;
      for (float x : row) sq += x * x;
      if (sq == 0.0f)
        throw ParameterError("build_index: zero-norm embedding for document '" + id + "'");
      const float inv = 1.0f / std::sqrt(sq);
      for (float& x : row) x *= inv;
    }
    index.doc_ids.push_back(id);
    index.vectors.insert(index.vectors.end(), row.begin(), row.end());
  }
  return index;
}

std::vector<ScoredDoc> search_topk(const RetrievalIndex& index,
                                   const std::vector<float>& query_vec, int k) {
  if (k < 1) throw ParameterError("search_topk: k must be >= 1");
  if (static_cast<int>(query_vec.size()) != index.dim)
    throw InputError("search_topk: query dimension " + std::to_string(query_vec.size()) +
                     " does not match index dimension " + std::to_string(index.dim));
  std::vector<float> q = query_vec;
  if (index.similarity == Similarity::cosine) {
    float sq = 0.0f;
    for (float x : q) sq += x * x;
    if (sq == 0.0f) throw ParameterError("search_topk: zero-norm query");
    const float inv = 1.0f / std::sqrt(sq);
    for (float& x : q) x *= inv;
  }

  const int n = index.count();
  Eigen::Map<const MatrixX<float>> m(index.vectors.data(), n, index.dim);
  Eigen::Map<const Eigen::VectorXf> qv(q.data(), index.dim);
  Eigen::VectorXf scores = m * qv;

  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  auto better = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.doc_ids[static_cast<std::size_t>(a)] <
           index.doc_ids[static_cast<std::size_t>(b)];
  };
  const int take = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), better);

  std::vector<ScoredDoc> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i)
    out.push_back({index.doc_ids[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])],
                   scores[idx[static_cast<std::size_t>(i)]]});
  return out;
}

void save_index(const RetrievalIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write index " + path);
  out.write(kMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(index.dim));
  put_u32(out, static_cast<std::uint32_t>(index.count()));
  out.put(index.similarity == Similarity::cosine ? '\0' : '\1');
  for (const auto& id : index.doc_ids) {
    put_u16(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  out.write(reinterpret_cast<const char*>(index.vectors.data()),
            static_cast<std::streamsize>(index.vectors.size() * 4));
  if (!out) throw InputError("short write while saving index " + path);
}

RetrievalIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open index " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not an index file: " + path);
  RetrievalIndex index;
  index.dim = static_cast<int>(get_u32(in));
  const int count = static_cast<int>(get_u32(in));
  const int sim = in.get();
  if (sim != 0 && sim != 1) throw ParseError("bad similarity byte in " + path);
  index.similarity = sim == 0 ? Similarity::cosine : Similarity::dot;
  index.doc_ids.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint16_t len = get_u16(in);
    std::string id(len, '\0');
    in.read(id.data(), len);
    index.doc_ids.push_back(std::move(id));
  }
  index.vectors.resize(static_cast<std::size_t>(count) * index.dim);
  in.read(reinterpret_cast<char*>(index.vectors.data()),
          static_cast<std::streamsize>(index.vectors.size() * 4));
  if (!in) throw ParseError("truncated index file " + path);
  return index;
}

void save_results(const std::vector<ResultLine>& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write results " + path);
  char buf[64];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.score);
    out << r.query_id << '\t' << r.doc_id << '\t' << r.rank << '\t' << buf << '\n';
  }
}

SearchOutput search_queries(const RetrievalIndex& index,
                            const TransformerEncoder<float>& encoder,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<std::string, std::string>>& queries,
                            int k) {
  if (encoder.mode() != Mode::eval)
    throw ParameterError("search_queries: encoder must be in eval mode");
  NoGradGuard ng;
  SearchOutput out;
  for (const auto& [qid, text] : queries) {
    Tensor<float> vec =
        encoder.encode(tokenize(text, vocab, encoder.config().max_seq_len));
    auto ranked = search_topk(index, vec.value(), k);
    auto& ranking = out.rankings[qid];
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      ranking.push_back(ranked[i].doc_id);
      out.lines.push_back({qid, ranked[i].doc_id, static_cast<int>(i) + 1,
                           static_cast<double>(ranked[i].score)});
    }
  }
  return out;
}

std::vector<ResultLine> load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open results " + path);
  std::vector<ResultLine> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ResultLine r;
    std::size_t p0 = line.find('\t');
    std::size_t p1 = p0 == std::string::npos ? p0 : line.find('\t', p0 + 1);
    std::size_t p2 = p1 == std::string::npos ? p1 : line.find('\t', p1 + 1);
    if (p2 == std::string::npos)
      throw ParseError("malformed results line " + std::to_string(lineno) + " in " + path);
    r.query_id = line.substr(0, p0);
    r.doc_id = line.substr(p0 + 1, p1 - p0 - 1);
    r.rank = std::stoi(line.substr(p1 + 1, p2 - p1 - 1));
    r.score = std::stod(line.substr(p2 + 1));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace kale
