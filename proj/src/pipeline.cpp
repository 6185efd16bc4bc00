#include "kale/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kale/bench.hpp"
#include "kale/checkpoint.hpp"
#include "kale/corpus.hpp"
#include "kale/digest.hpp"
#include "kale/index.hpp"
#include "kale/kale_align.hpp"
#include "kale/metrics.hpp"
#include "kale/trainer.hpp"

namespace kale {

const std::vector<std::string> kPipelineStages = {
    "gen-data", "train", "index", "eval", "prune",
    "align",    "eval-aligned", "bench", "report"};

namespace {

namespace fs = std::filesystem;

struct Ctx {
  const KeyValueConfig& cfg;
  std::string dir;
  bool force = false;
  std::map<std::string, std::string> manifest;

  std::string path(const std::string& name) const { return dir + "/" + name; }
};

std::string manifest_path(const Ctx& ctx) { return ctx.path("pipeline.manifest"); }

void load_manifest(Ctx& ctx) {
  std::ifstream in(manifest_path(ctx));
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ctx.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
}

void save_manifest(const Ctx& ctx) {
  std::ofstream out(manifest_path(ctx), std::ios::binary);
  if (!out) throw PipelineError("cannot write " + manifest_path(ctx));
  for (const auto& [k, v] : ctx.manifest) out << k << '=' << v << '\n';
}

struct LockFile {
  explicit LockFile(const std::string& dir) : path_(dir + "/.pipeline.lock") {
    if (fs::exists(path_))
      throw PipelineError("output directory is locked by another pipeline run: " + path_);
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~LockFile() { std::error_code ec; fs::remove(path_, ec); }
  std::string path_;
};

std::vector<int> keep_list(const KeyValueConfig& cfg) {
  std::vector<int> keeps;
  std::istringstream ss(cfg.get("kale.keep_layers", "2,1"));
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) keeps.push_back(std::stoi(tok));
  if (keeps.empty()) throw ConfigError("kale.keep_layers is empty");
  return keeps;
}

SyntheticSpec synth_spec(const KeyValueConfig& cfg) {
  SyntheticSpec s;
  s.num_topics = cfg.get_int("synth.num_topics", s.num_topics);
  s.vocab_per_topic = cfg.get_int("synth.vocab_per_topic", s.vocab_per_topic);
  s.shared_vocab = cfg.get_int("synth.shared_vocab", s.shared_vocab);
  s.docs_per_topic = cfg.get_int("synth.docs_per_topic", s.docs_per_topic);
  s.doc_len = cfg.get_int("synth.doc_len", s.doc_len);
  s.queries_per_topic = cfg.get_int("synth.queries_per_topic", s.queries_per_topic);
  s.query_len = cfg.get_int("synth.query_len", s.query_len);
  s.noise_rate = cfg.get_double("synth.noise_rate", s.noise_rate);
  s.seed = cfg.get_seed("synth.seed", cfg.get_seed("seed", 13));
  return s;
}

EncoderConfig encoder_config(const KeyValueConfig& cfg, int vocab_size,
                             const std::string& layers_key) {
  EncoderConfig e;
  e.num_layers = cfg.get_int(layers_key, 4);
  e.hidden_dim = cfg.get_int("enc.hidden_dim", 64);
  e.num_heads = cfg.get_int("enc.num_heads", 4);
  e.ff_dim = cfg.get_int("enc.ff_dim", 128);
  e.vocab_size = vocab_size;
  e.max_seq_len = cfg.get_int("enc.max_seq_len", 32);
  e.dropout_rate = cfg.get_double("enc.dropout_rate", 0.1);
  e.pooling = pooling_from_string(cfg.get("enc.pooling", "cls"));
  return e;
}

TrainConfig train_config(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.objective = objective_from_string(cfg.get("train.objective", "in_batch_contrastive"));
  t.epochs = cfg.get_int("train.epochs", 40);
  t.batch_size = cfg.get_int("train.batch_size", 8);
  t.learning_rate = cfg.get_double("train.learning_rate", 5e-5);
  t.schedule = schedule_from_string(cfg.get("train.schedule", "linear"));
  t.negatives_per_example = cfg.get_int("train.negatives", 1);
  t.similarity = similarity_from_string(cfg.get("train.similarity", "cosine"));
  t.seed = cfg.get_seed("train.seed", cfg.get_seed("seed", 42));
  return t;
}

KaleConfig kale_config(const KeyValueConfig& cfg, int keep) {
  KaleConfig k;
  k.temperature = cfg.get_double("kale.temperature", 1.0);
  k.loss_scale = cfg.get_double("kale.loss_scale", 10.0);
  k.epochs = cfg.get_int("kale.epochs", 100);
  k.batch_size = cfg.get_int("kale.batch_size", 64);
  k.learning_rate = cfg.get_double("kale.learning_rate", 5e-4);
  k.keep_layers = keep;
  k.strategy = prune_strategy_from_string(cfg.get("kale.strategy", "bottom"));
  k.student_dropout = cfg.get_bool("kale.student_dropout", true);
  k.distance = align_distance_from_string(cfg.get("kale.distance", "kl"));
  k.sample_size = cfg.get_int("kale.sample_size", 0);
  k.seed = cfg.get_seed("kale.seed", cfg.get_seed("seed", 7));
  return k;
}

BenchConfig bench_config(const KeyValueConfig& cfg) {
  BenchConfig b;
  b.num_queries = cfg.get_int("bench.num_queries", 512);
  b.runs = cfg.get_int("bench.runs", 5);
  b.warmup_iterations = cfg.get_int("bench.warmup", 10);
  b.seed = cfg.get_seed("bench.seed", cfg.get_seed("seed", 0));
  return b;
}

void save_loss_curve(const std::vector<double>& losses, const std::string& path,
                     double initial = -1.0, double final_loss = -1.0) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write " + path);
  char buf[64];
  if (initial >= 0.0) {
    std::snprintf(buf, sizeof(buf), "%.8f", initial);
    out << "initial\t" << buf << '\n';
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.8f", losses[i]);
    out << i + 1 << '\t' << buf << '\n';
  }
  if (final_loss >= 0.0) {
    std::snprintf(buf, sizeof(buf), "%.8f", final_loss);
    out << "final\t" << buf << '\n';
  }
}

// --- stage IO tables --------------------------------------------------

const std::vector<std::string> kCorpusFiles = {"corpus.tsv", "queries.tsv", "qrels.tsv",
                                               "splits.tsv", "vocab.txt", "train.tsv"};

std::vector<std::string> stage_inputs(const Ctx& ctx, const std::string& stage) {
  const auto keeps = keep_list(ctx.cfg);
  std::vector<std::string> in;
  auto corpus = [&] { in.insert(in.end(), kCorpusFiles.begin(), kCorpusFiles.end()); };
  if (stage == "train") corpus();
  if (stage == "index") { corpus(); in.push_back("doc_encoder.ckpt"); }
  if (stage == "eval") { corpus(); in.push_back("query_encoder.ckpt"); in.push_back("index.bin"); }
  if (stage == "prune") { corpus(); in.push_back("query_encoder.ckpt"); in.push_back("index.bin"); }
  if (stage == "align") { corpus(); in.push_back("query_encoder.ckpt"); }
  if (stage == "eval-aligned") {
    corpus();
    in.push_back("index.bin");
    in.push_back("eval_full.report");
    for (int k : keeps) in.push_back("student_k" + std::to_string(k) + ".ckpt");
  }
  if (stage == "bench") {
    corpus();
    in.push_back("query_encoder.ckpt");
    for (int k : keeps) in.push_back("student_k" + std::to_string(k) + ".ckpt");
  }
  if (stage == "report") {
    in.push_back("eval_full.report");
    in.push_back("bench_full.kv");
    for (int k : keeps) {
      in.push_back("eval_student_k" + std::to_string(k) + ".report");
      in.push_back("bench_student_k" + std::to_string(k) + ".kv");
    }
  }
  return in;
}

std::vector<std::string> stage_outputs(const Ctx& ctx, const std::string& stage) {
  const auto keeps = keep_list(ctx.cfg);
  std::vector<std::string> out;
  if (stage == "gen-data") {
    out.insert(out.end(), kCorpusFiles.begin(), kCorpusFiles.end());
    out.push_back("gen_report.txt");
  }
  if (stage == "train") {
    out = {"query_encoder.ckpt", "doc_encoder.ckpt", "train_loss.tsv"};
  }
  if (stage == "index") out = {"index.bin"};
  if (stage == "eval") out = {"results_full.tsv", "eval_full.report"};
  if (stage == "prune")
    for (int k : keeps) {
      out.push_back("pruned_k" + std::to_string(k) + ".ckpt");
      out.push_back("results_pruned_k" + std::to_string(k) + ".tsv");
      out.push_back("eval_pruned_k" + std::to_string(k) + ".report");
    }
  if (stage == "align")
    for (int k : keeps) {
      out.push_back("student_k" + std::to_string(k) + ".ckpt");
      out.push_back("align_loss_k" + std::to_string(k) + ".tsv");
    }
  if (stage == "eval-aligned")
    for (int k : keeps) {
      out.push_back("results_student_k" + std::to_string(k) + ".tsv");
      out.push_back("eval_student_k" + std::to_string(k) + ".report");
    }
  if (stage == "bench") {
    out = {"bench_full.txt", "bench_full.kv"};
    for (int k : keeps) {
      out.push_back("bench_student_k" + std::to_string(k) + ".txt");
      out.push_back("bench_student_k" + std::to_string(k) + ".kv");
    }
  }
  if (stage == "report") out = {"report.tsv"};
  return out;
}

// --- stage bodies ------------------------------------------------------

void run_gen_data(Ctx& ctx) {
  const SyntheticSpec spec = synth_spec(ctx.cfg);
  Corpus corpus = generate_synthetic(spec);
  save_corpus(corpus, ctx.dir);
  Vocabulary vocab = build_vocabulary(corpus);
  vocab.save(ctx.path("vocab.txt"));
  std::mt19937 rng(spec.seed + 1);
  const auto examples =
      make_train_examples(corpus, ctx.cfg.get_int("train.negatives", 1), rng);
  save_train_examples(examples, corpus, ctx.path("train.tsv"));

  // Learnability oracle: a lexical-overlap ranker should already solve a
  // topic-clustered corpus; if it cannot, no encoder will.
  const double lexical = lexical_overlap_hit_rate(corpus, true, 20);
  const int relevant = spec.docs_per_topic;
  const int n_docs = static_cast<int>(corpus.docs.size());
  std::ofstream out(ctx.path("gen_report.txt"), std::ios::binary);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "lexical_overlap_hit_rate_20=%.6f\n", lexical);
  out << buf;
  std::snprintf(buf, sizeof(buf), "random_hit_rate_20=%.6f\n",
                hypergeometric_hit_rate(n_docs, relevant, 20));
  out << buf;
  std::snprintf(buf, sizeof(buf), "random_recall_fraction_20=%.6f\n",
                random_recall_fraction(n_docs, 20));
  out << buf;
}

void run_train(Ctx& ctx) {
  Corpus corpus = load_corpus(ctx.dir);
  Vocabulary vocab = Vocabulary::load(ctx.path("vocab.txt"));
  const auto examples = load_train_examples(ctx.path("train.tsv"), corpus);
  const EncoderConfig qcfg = encoder_config(ctx.cfg, vocab.size(), "enc.query_layers");
  const EncoderConfig dcfg = encoder_config(ctx.cfg, vocab.size(), "enc.doc_layers");
  TrainResult result = train_retriever(examples, qcfg, dcfg, train_config(ctx.cfg), vocab);
  save_checkpoint(result.model.query_encoder, ctx.path("query_encoder.ckpt"));
  save_checkpoint(result.model.document_encoder, ctx.path("doc_encoder.ckpt"));
  save_loss_curve(result.epoch_mean_loss, ctx.path("train_loss.tsv"));
}

void run_index(Ctx& ctx) {
  Corpus corpus = load_corpus(ctx.dir);
  Vocabulary vocab = Vocabulary::load(ctx.path("vocab.txt"));
  TransformerEncoder<float> doc_encoder = load_checkpoint(ctx.path("doc_encoder.ckpt")).build();
  doc_encoder.set_mode(Mode::eval);
  const Similarity sim = similarity_from_string(ctx.cfg.get("index.similarity", "cosine"));
  RetrievalIndex index = build_index(corpus.docs, doc_encoder, vocab, sim);
  save_index(index, ctx.path("index.bin"));
}

void eval_checkpoint_against_index(Ctx& ctx, const std::string& ckpt_name,
                                   const std::string& results_name,
                                   const std::string& report_name,
                                   const std::string& baseline_report_name = "") {
  Corpus corpus = load_corpus(ctx.dir);
  Vocabulary vocab = Vocabulary::load(ctx.path("vocab.txt"));
  TransformerEncoder<float> encoder = load_checkpoint(ctx.path(ckpt_name)).build();
  encoder.set_mode(Mode::eval);
  RetrievalIndex index = load_index(ctx.path("index.bin"));
  const auto dev = corpus.split_queries(true);
  SearchOutput out = search_queries(index, encoder, vocab, dev, 200);
  save_results(out.lines, ctx.path(results_name));
  EvalReport report = evaluate(out.rankings, corpus.qrels);
  if (!baseline_report_name.empty()) {
    const EvalReport base = EvalReport::load(ctx.path(baseline_report_name));
    report = with_impacts(report, base, baseline_report_name);
  }
  report.save(ctx.path(report_name));
}

void run_eval(Ctx& ctx) {
  eval_checkpoint_against_index(ctx, "query_encoder.ckpt", "results_full.tsv",
                                "eval_full.report");
}

void run_prune(Ctx& ctx) {
  const auto strategy = prune_strategy_from_string(ctx.cfg.get("kale.strategy", "bottom"));
  TransformerEncoder<float> query_encoder =
      load_checkpoint(ctx.path("query_encoder.ckpt")).build();
  for (int k : keep_list(ctx.cfg)) {
    TransformerEncoder<float> pruned = query_encoder.prune_layers(k, strategy);
    pruned.set_mode(Mode::eval);
    const std::string tag = "k" + std::to_string(k);
    save_checkpoint(pruned, ctx.path("pruned_" + tag + ".ckpt"));
    eval_checkpoint_against_index(ctx, "pruned_" + tag + ".ckpt",
                                  "results_pruned_" + tag + ".tsv",
                                  "eval_pruned_" + tag + ".report", "eval_full.report");
  }
}

void run_align(Ctx& ctx) {
  Corpus corpus = load_corpus(ctx.dir);
  Vocabulary vocab = Vocabulary::load(ctx.path("vocab.txt"));
  TransformerEncoder<float> query_encoder =
      load_checkpoint(ctx.path("query_encoder.ckpt")).build();
  query_encoder.set_mode(Mode::eval);
  TransformerEncoder<float> doc_placeholder = query_encoder;  // unused by alignment
  const std::string teacher_digest = file_digest(ctx.path("query_encoder.ckpt"));

  std::vector<std::string> align_queries;
  for (const auto& [qid, text] : corpus.split_queries(false)) align_queries.push_back(text);

  for (int k : keep_list(ctx.cfg)) {
    const KaleConfig kcfg = kale_config(ctx.cfg, k);
    BiEncoder pair{query_encoder, doc_placeholder};
    KaleResult result = kale_align(pair, align_queries, vocab, kcfg);
    const std::string tag = "k" + std::to_string(k);
    char fmt[64];
    std::vector<std::pair<std::string, std::string>> extras;
    extras.emplace_back("teacher_digest", teacher_digest);
    extras.emplace_back("kale.keep_layers", std::to_string(kcfg.keep_layers));
    extras.emplace_back("kale.strategy", to_string(kcfg.strategy));
    std::snprintf(fmt, sizeof(fmt), "%g", kcfg.temperature);
    extras.emplace_back("kale.temperature", fmt);
    std::snprintf(fmt, sizeof(fmt), "%g", kcfg.loss_scale);
    extras.emplace_back("kale.loss_scale", fmt);
    extras.emplace_back("kale.epochs", std::to_string(kcfg.epochs));
    extras.emplace_back("kale.batch_size", std::to_string(kcfg.batch_size));
    std::snprintf(fmt, sizeof(fmt), "%g", kcfg.learning_rate);
    extras.emplace_back("kale.learning_rate", fmt);
    extras.emplace_back("kale.student_dropout", kcfg.student_dropout ? "true" : "false");
    extras.emplace_back("kale.distance", to_string(kcfg.distance));
    extras.emplace_back("kale.seed", std::to_string(kcfg.seed));
    save_checkpoint(result.student, ctx.path("student_" + tag + ".ckpt"), extras);
    save_loss_curve(result.epoch_mean_loss, ctx.path("align_loss_" + tag + ".tsv"),
                    result.initial_loss, result.final_loss);
  }
}

void run_eval_aligned(Ctx& ctx) {
  for (int k : keep_list(ctx.cfg)) {
    const std::string tag = "k" + std::to_string(k);
    eval_checkpoint_against_index(ctx, "student_" + tag + ".ckpt",
                                  "results_student_" + tag + ".tsv",
                                  "eval_student_" + tag + ".report", "eval_full.report");
  }
}

void run_bench_stage(Ctx& ctx) {
  Corpus corpus = load_corpus(ctx.dir);
  Vocabulary vocab = Vocabulary::load(ctx.path("vocab.txt"));
  std::vector<std::string> texts;
  for (const auto& [qid, text] : corpus.queries) texts.push_back(text);
  const BenchConfig bcfg = bench_config(ctx.cfg);
  auto bench_one = [&](const std::string& ckpt, const std::string& stem) {
    TransformerEncoder<float> encoder = load_checkpoint(ctx.path(ckpt)).build();
    encoder.set_mode(Mode::eval);
    BenchReport report = run_bench(encoder, texts, vocab, bcfg);
    report.save(ctx.path(stem + ".txt"), ctx.path(stem + ".kv"));
  };
  bench_one("query_encoder.ckpt", "bench_full");
  for (int k : keep_list(ctx.cfg))
    bench_one("student_k" + std::to_string(k) + ".ckpt",
              "bench_student_k" + std::to_string(k));
}

double kv_lookup(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) return std::stod(line.substr(key.size() + 1));
  }
  throw PipelineError("key '" + key + "' not found in " + path);
}

void run_report(Ctx& ctx) {
  // Two-column plot data: speedup of each aligned student against the full
  // query encoder vs relative accuracy impact at depth 100.
  const double base_qps = kv_lookup(ctx.path("bench_full.kv"), "average.items_sec");
  const EvalReport full = EvalReport::load(ctx.path("eval_full.report"));
  std::ofstream out(ctx.path("report.tsv"), std::ios::binary);
  if (!out) throw PipelineError("cannot write " + ctx.path("report.tsv"));
  out << "# speedup vs relative accuracy impact at depth 100\n";
  char buf[64];
  out << "1.000000\t0.000000\n";  // the uncompressed encoder anchors the curve
  for (int k : keep_list(ctx.cfg)) {
    const std::string tag = "k" + std::to_string(k);
    const double qps = kv_lookup(ctx.path("bench_student_" + tag + ".kv"),
                                 "average.items_sec");
    const EvalReport student = EvalReport::load(ctx.path("eval_student_" + tag + ".report"));
    const double impact = relative_impact(student.accuracy_at(100), full.accuracy_at(100));
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", speedup(qps, base_qps), impact);
    out << buf << '\n';
  }
}

// --- skip/stale logic ---------------------------------------------------

bool try_skip(Ctx& ctx, const std::string& stage) {
  const auto inputs = stage_inputs(ctx, stage);
  const auto outputs = stage_outputs(ctx, stage);
  for (const auto& in : inputs)
    if (!fs::exists(ctx.path(in)))
      throw PipelineError("stage '" + stage + "': missing upstream artifact '" + in + "'");
  if (ctx.force) return false;

  bool all_outputs_exist = true;
  for (const auto& out : outputs)
    all_outputs_exist = all_outputs_exist && fs::exists(ctx.path(out));
  if (!all_outputs_exist) return false;

  bool recorded = true;
  for (const auto& in : inputs)
    recorded = recorded && ctx.manifest.count(stage + ".in." + in) > 0;
  for (const auto& out : outputs)
    recorded = recorded && ctx.manifest.count(stage + ".out." + out) > 0;
  if (!recorded) return false;

  for (const auto& in : inputs)
    if (ctx.manifest[stage + ".in." + in] != file_digest(ctx.path(in))) return false;
  // Inputs match the recorded run; outputs must be exactly what that run
  // produced, otherwise someone edited an artifact by hand.
  for (const auto& out : outputs)
    if (ctx.manifest[stage + ".out." + out] != file_digest(ctx.path(out)))
      throw PipelineError("stage '" + stage + "': stale artifact '" + out +
                          "' does not match the manifest; rerun with force");
  return true;
}

void record(Ctx& ctx, const std::string& stage) {
  for (const auto& in : stage_inputs(ctx, stage))
    ctx.manifest[stage + ".in." + in] = file_digest(ctx.path(in));
  for (const auto& out : stage_outputs(ctx, stage)) {
    if (!fs::exists(ctx.path(out)))
      throw PipelineError("stage '" + stage + "' did not produce '" + out + "'");
    ctx.manifest[stage + ".out." + out] = file_digest(ctx.path(out));
  }
  save_manifest(ctx);
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const KeyValueConfig& config, bool force) {
  const std::string dir = config.require("out_dir");
  fs::create_directories(dir);
  LockFile lock(dir);

  std::set<std::string> requested;
  {
    std::istringstream ss(config.get("stages", ""));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) requested.insert(tok);
    if (requested.empty())
      requested.insert(kPipelineStages.begin(), kPipelineStages.end());
    for (const auto& s : requested)
      if (std::find(kPipelineStages.begin(), kPipelineStages.end(), s) ==
          kPipelineStages.end())
        throw ConfigError("unknown pipeline stage '" + s + "'");
  }

  Ctx ctx{config, dir, force, {}};
  load_manifest(ctx);

  std::vector<StageOutcome> outcomes;
  for (const auto& stage : kPipelineStages) {
    if (!requested.count(stage)) continue;
    if (try_skip(ctx, stage)) {
      outcomes.push_back({stage, true});
      continue;
    }
    if (stage == "gen-data") run_gen_data(ctx);
    else if (stage == "train") run_train(ctx);
    else if (stage == "index") run_index(ctx);
    else if (stage == "eval") run_eval(ctx);
    else if (stage == "prune") run_prune(ctx);
    else if (stage == "align") run_align(ctx);
    else if (stage == "eval-aligned") run_eval_aligned(ctx);
    else if (stage == "bench") run_bench_stage(ctx);
    else if (stage == "report") run_report(ctx);
    record(ctx, stage);
    outcomes.push_back({stage, false});
  }
  return outcomes;
}

}  // namespace kale
