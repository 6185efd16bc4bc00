#include "kale/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace kale {

void Corpus::validate() const {
  std::unordered_set<std::string> doc_ids, query_ids;
  for (const auto& [id, text] : docs)
    if (!doc_ids.insert(id).second) throw InputError("duplicate doc id '" + id + "'");
  for (const auto& [id, text] : queries)
    if (!query_ids.insert(id).second) throw InputError("duplicate query id '" + id + "'");
  for (const auto& [qid, rel] : qrels.relevant) {
    if (rel.empty()) throw InputError("empty relevance set for query '" + qid + "'");
    if (!query_ids.count(qid)) throw InputError("qrels references unknown query '" + qid + "'");
    for (const auto& did : rel)
      if (!doc_ids.count(did)) throw InputError("qrels references unknown doc '" + did + "'");
  }
  std::unordered_set<std::string> train(train_split.begin(), train_split.end());
  for (const auto& qid : dev_split)
    if (train.count(qid))
      throw InputError("query '" + qid + "' appears in both train and dev splits");
}

const std::string& Corpus::doc_text(const std::string& doc_id) const {
  for (const auto& [id, text] : docs)
    if (id == doc_id) return text;
  throw InputError("unknown doc id '" + doc_id + "'");
}

const std::string& Corpus::query_text(const std::string& query_id) const {
  for (const auto& [id, text] : queries)
    if (id == query_id) return text;
  throw InputError("unknown query id '" + query_id + "'");
}

std::vector<std::pair<std::string, std::string>> Corpus::split_queries(bool dev) const {
  const auto& split = dev ? dev_split : train_split;
  std::unordered_set<std::string> wanted(split.begin(), split.end());
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& q : queries)
    if (wanted.count(q.first)) out.push_back(q);
  return out;
}

void SyntheticSpec::validate() const {
  if (num_topics < 1 || docs_per_topic < 1 || queries_per_topic < 1)
    throw ConfigError("synthetic spec: counts must be >= 1");
  if (doc_len < 1 || query_len < 1)
    throw ConfigError("synthetic spec: lengths must be >= 1");
  if (noise_rate < 0.0 || noise_rate >= 1.0)
    throw ConfigError("synthetic spec: noise_rate must be in [0,1)");
  if (vocab_per_topic < 1)
    throw ConfigError("synthetic spec: topic vocabulary exhausted (vocab_per_topic < 1)");
  if (noise_rate > 0.0 && shared_vocab < 1)
    throw ConfigError("synthetic spec: shared vocabulary exhausted with noise_rate > 0");
}

Corpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937 rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> topic_word(0, spec.vocab_per_topic - 1);
  std::uniform_int_distribution<int> shared_word(0, std::max(1, spec.shared_vocab) - 1);

  auto sample_text = [&](int topic, int len) {
    std::ostringstream os;
    for (int i = 0; i < len; ++i) {
      if (i) os << ' ';
      if (spec.noise_rate > 0.0 && coin(rng) < spec.noise_rate)
        os << 's' << shared_word(rng);
      else
        os << 't' << topic << 'w' << topic_word(rng);
    }
    return os.str();
  };

  Corpus corpus;
  for (int t = 0; t < spec.num_topics; ++t)
    for (int d = 0; d < spec.docs_per_topic; ++d)
      corpus.docs.emplace_back("d" + std::to_string(t) + "_" + std::to_string(d),
                               sample_text(t, spec.doc_len));
  for (int t = 0; t < spec.num_topics; ++t) {
    for (int q = 0; q < spec.queries_per_topic; ++q) {
      const std::string qid = "q" + std::to_string(t) + "_" + std::to_string(q);
      corpus.queries.emplace_back(qid, sample_text(t, spec.query_len));
      auto& rel = corpus.qrels.relevant[qid];
      for (int d = 0; d < spec.docs_per_topic; ++d)
        rel.insert("d" + std::to_string(t) + "_" + std::to_string(d));
      if (q < spec.queries_per_topic / 2 || spec.queries_per_topic == 1)
        corpus.train_split.push_back(qid);
      else
        corpus.dev_split.push_back(qid);
    }
  }
  corpus.validate();
  return corpus;
}

Vocabulary build_vocabulary(const Corpus& corpus) {
  std::set<std::string> inventory;
  auto collect = [&](const std::string& text) {
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) {
      std::transform(w.begin(), w.end(), w.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      inventory.insert(w);
    }
  };
  for (const auto& [id, text] : corpus.docs) collect(text);
  for (const auto& [id, text] : corpus.queries) collect(text);
  std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk,
                                     Vocabulary::kCls, Vocabulary::kSep};
  tokens.insert(tokens.end(), inventory.begin(), inventory.end());
  return Vocabulary::from_tokens(std::move(tokens));
}

double lexical_overlap_hit_rate(const Corpus& corpus, bool dev_split, int depth) {
  std::unordered_map<std::string, int> df;
  auto tokens_of = [](const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
  };
  std::vector<std::set<std::string>> doc_tokens;
  doc_tokens.reserve(corpus.docs.size());
  for (const auto& [id, text] : corpus.docs) {
    const auto toks = tokens_of(text);
    std::set<std::string> uniq(toks.begin(), toks.end());
    for (const auto& t : uniq) df[t]++;
    doc_tokens.push_back(std::move(uniq));
  }
  const double n_docs = static_cast<double>(corpus.docs.size());

  Rankings rankings;
  for (const auto& [qid, qtext] : corpus.split_queries(dev_split)) {
    const auto qtoks = tokens_of(qtext);
    std::vector<std::pair<double, std::string>> scored;
    scored.reserve(corpus.docs.size());
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
      double score = 0.0;
      for (const auto& t : qtoks) {
        if (!doc_tokens[d].count(t)) continue;
        const auto it = df.find(t);
        score += std::log(1.0 + n_docs / static_cast<double>(it->second));
      }
      scored.emplace_back(score, corpus.docs[d].first);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    auto& ranking = rankings[qid];
    for (int i = 0; i < depth && i < static_cast<int>(scored.size()); ++i)
      ranking.push_back(scored[static_cast<std::size_t>(i)].second);
  }
  return retrieval_accuracy(rankings, corpus.qrels, depth);
}

void save_doc_file(const std::vector<std::pair<std::string, std::string>>& items,
                   const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& [id, text] : items) out << id << '\t' << text << '\n';
}

std::vector<std::pair<std::string, std::string>> load_doc_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("malformed line " + std::to_string(lineno) + " in " + path);
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_doc_file(corpus.docs, dir + "/corpus.tsv");
  save_doc_file(corpus.queries, dir + "/queries.tsv");
  save_qrels(corpus.qrels, dir + "/qrels.tsv");
  std::ofstream out(dir + "/splits.tsv", std::ios::binary);
  if (!out) throw InputError("cannot write " + dir + "/splits.tsv");
  for (const auto& qid : corpus.train_split) out << qid << "\ttrain\n";
  for (const auto& qid : corpus.dev_split) out << qid << "\tdev\n";
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  corpus.docs = load_doc_file(dir + "/corpus.tsv");
  corpus.queries = load_doc_file(dir + "/queries.tsv");
  corpus.qrels = load_qrels(dir + "/qrels.tsv");
  for (const auto& [qid, split] : load_doc_file(dir + "/splits.tsv")) {
    if (split == "train")
      corpus.train_split.push_back(qid);
    else if (split == "dev")
      corpus.dev_split.push_back(qid);
    else
      throw ParseError("unknown split '" + split + "' in " + dir + "/splits.tsv");
  }
  corpus.validate();
  return corpus;
}

void save_train_examples(const std::vector<TrainExample>& examples,
                         const Corpus& corpus, const std::string& path) {
  std::unordered_map<std::string, std::string> text_to_id;
  for (const auto& [id, text] : corpus.docs) text_to_id.emplace(text, id);
  auto id_of = [&](const std::string& text) {
    auto it = text_to_id.find(text);
    if (it == text_to_id.end())
      throw InputError("training example document not found in corpus");
    return it->second;
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& ex : examples) {
    out << ex.query << '\t' << id_of(ex.positive_doc) << '\t';
    for (std::size_t i = 0; i < ex.negative_docs.size(); ++i) {
      if (i) out << ',';
      out << id_of(ex.negative_docs[i]);
    }
    out << '\n';
  }
}

std::vector<TrainExample> load_train_examples(const std::string& path,
                                              const Corpus& corpus) {
  std::unordered_map<std::string, std::string> id_to_text;
  for (const auto& [id, text] : corpus.docs) id_to_text.emplace(id, text);
  auto text_of = [&](const std::string& id, int lineno) {
    auto it = id_to_text.find(id);
    if (it == id_to_text.end())
      throw ParseError("training file line " + std::to_string(lineno) +
                       " references unknown doc id '" + id + "'");
    return it->second;
  };
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<TrainExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t0 = line.find('\t');
    const auto t1 = t0 == std::string::npos ? t0 : line.find('\t', t0 + 1);
    if (t1 == std::string::npos)
      throw ParseError("malformed training line " + std::to_string(lineno) + " in " + path);
    TrainExample ex;
    ex.query = line.substr(0, t0);
    ex.positive_doc = text_of(line.substr(t0 + 1, t1 - t0 - 1), lineno);
    const std::string negs = line.substr(t1 + 1);
    std::istringstream ss(negs);
    std::string id;
    while (std::getline(ss, id, ','))
      if (!id.empty()) ex.negative_docs.push_back(text_of(id, lineno));
    if (ex.negative_docs.size() > 8)
      throw ParseError("training line " + std::to_string(lineno) +
                       " lists more than 8 negatives");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainExample> make_train_examples(const Corpus& corpus,
                                              int negatives_per_example,
                                              std::mt19937& rng) {
  if (negatives_per_example < 0 || negatives_per_example > 8)
    throw ConfigError("negatives_per_example must be in [0,8]");
  std::vector<TrainExample> out;
  for (const auto& qid : corpus.train_split) {
    const auto& rel = corpus.qrels.for_query(qid);
    TrainExample ex;
    ex.query = corpus.query_text(qid);
    // Deterministic positive: the lexicographically first relevant doc.
    ex.positive_doc = corpus.doc_text(*rel.begin());
    std::uniform_int_distribution<std::size_t> pick(0, corpus.docs.size() - 1);
    while (static_cast<int>(ex.negative_docs.size()) < negatives_per_example) {
      const auto& [did, text] = corpus.docs[pick(rng)];
      if (rel.count(did)) continue;
      ex.negative_docs.push_back(text);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace kale
