#include "cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "proclip/binary_io.hpp"
#include "proclip/corpus.hpp"
#include "proclip/model.hpp"
#include "proclip/retrieval.hpp"
#include "proclip/trainer.hpp"

namespace proclip {
namespace {

namespace fs = std::filesystem;

// Carries an exit code and a machine-readable kind up to run_cli.
struct CliFailure {
  int code;
  std::string kind;
  std::string detail;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw CliFailure{kExitIo, "io-error", "no such file: " + path.string()};
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file(path, text);
  }
}

CorpusBundle load_corpus(const std::string& path) {
  require_file(path);
  return read_corpus(path);
}

std::shared_ptr<const ModelParams> load_model(const std::string& path, const CorpusBundle& corpus,
                                              std::uint64_t seed) {
  if (path.empty()) {
    ModelConfig config;
    config.raw_dim = corpus.dims.raw_dim;
    config.dim = corpus.dims.dim;
    config.seed = seed;
    return std::make_shared<const ModelParams>(ModelParams::init(config));
  }
  require_file(path);
  return std::make_shared<const ModelParams>(read_checkpoint(path));
}

std::vector<double> parse_k_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double k = 0;
    try {
      k = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(k > 0 && k <= 100)) {
      throw CliFailure{kExitUsage, "usage", "--k-list entries must lie in (0, 100]: '" + item + "'"};
    }
    out.push_back(k);
  }
  if (out.empty()) throw CliFailure{kExitUsage, "usage", "--k-list is empty"};
  return out;
}

// {"words": [[...], ...], "sentence": [...]} with D-wide rows.
QueryRecord load_query_file(const std::string& path) {
  require_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CliFailure{kExitValidation, "invalid-query", e.what()};
  }
  try {
    QueryRecord q;
    q.id = doc.value("id", std::string("query"));
    const auto sentence = doc.at("sentence").get<std::vector<float>>();
    const auto words = doc.at("words").get<std::vector<std::vector<float>>>();
    q.sentence = Eigen::Map<const FloatRow>(sentence.data(), static_cast<Eigen::Index>(sentence.size()));
    q.words = FloatMatrix(static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(sentence.size()));
    for (std::size_t r = 0; r < words.size(); ++r) {
      if (words[r].size() != sentence.size()) throw CliFailure{kExitValidation, "invalid-query", "ragged word rows"};
      for (std::size_t c = 0; c < sentence.size(); ++c) q.words(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = words[r][c];
    }
    if (words.empty() || sentence.empty()) throw CliFailure{kExitValidation, "invalid-query", "empty query"};
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw CliFailure{kExitValidation, "invalid-query", e.what()};
  }
}

std::string ranked_csv(const RankedList& list, std::size_t top) {
  std::string out = "rank,video_id,score,stage\n";
  char buf[64];
  for (std::size_t i = 0; i < std::min(top, list.ids.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%.9f", list.scores[i]);
    out += std::to_string(i + 1) + "," + list.ids[i] + "," + buf + "," + (i < list.candidate_count ? "2" : "1") + "\n";
  }
  return out;
}

struct Options {
  std::string corpus;
  std::string model;
  std::string output;
  std::uint64_t seed = 1;
  double k_percent = 50.0;
  int k_frames = 12;
  bool parallel = false;

  SynthSpec synth;

  std::string stage = "both";
  std::string log;
  std::string distill_log;
  TrainConfig train;

  std::string query_id;
  std::string query_file;
  std::size_t top = 10;

  std::string k_list = "100,90,80,70,60,50,40,30,20,10,5";
  int rounds = 10;
};

void add_retrieval_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--corpus", o.corpus, "Corpus file (.pclp)")->required();
  cmd->add_option("-m,--model", o.model, "Checkpoint (.pclw); a seeded untrained model when omitted");
  cmd->add_option("--seed", o.seed, "Seed of the untrained model");
  cmd->add_option("--k-frames", o.k_frames, "Frames kept per video at stage 2")->check(CLI::Range(1, 1 << 20));
  cmd->add_flag("--parallel", o.parallel, "Score stage-2 candidates on PROCLIP_THREADS workers");
  cmd->add_option("-o,--output", o.output, "Output path ('-' for stdout)");
}

int cmd_synth(const Options& o, std::ostream& out) {
  if (o.output.empty()) throw CliFailure{kExitUsage, "usage", "synth requires -o"};
  const CorpusBundle corpus = synth_corpus(o.synth);
  write_corpus(corpus, o.output);
  out << "wrote " << o.output << " videos=" << corpus.videos.size() << " queries=" << corpus.queries.size() << "\n";
  return kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out) {
  const CorpusBundle corpus = load_corpus(o.corpus);
  const ValidationReport report = validate_corpus(corpus);
  if (report.ok()) {
    out << "ok videos=" << corpus.videos.size() << " queries=" << corpus.queries.size() << "\n";
    return kExitOk;
  }
  for (const auto& v : report.violations) {
    out << v.kind << "," << v.subject << "," << (v.row ? std::to_string(*v.row) : "") << "," << one_line(v.message)
        << "\n";
  }
  throw CliFailure{kExitValidation, "validation",
                   std::to_string(report.violations.size()) + " violation(s), first: " +
                       report.violations.front().kind + " " + report.violations.front().subject};
}

void require_valid(const CorpusBundle& corpus) {
  const ValidationReport report = validate_corpus(corpus);
  if (!report.ok()) {
    throw CliFailure{kExitValidation, "validation",
                     report.violations.front().kind + " " + report.violations.front().subject};
  }
}

int cmd_train(Options o, std::ostream& out) {
  if (o.output.empty()) throw CliFailure{kExitUsage, "usage", "train requires -o"};
  const CorpusBundle corpus = load_corpus(o.corpus);
  require_valid(corpus);
  o.train.seed = o.seed;
  std::optional<ModelParams> model;
  if (o.stage == "retrieval" || o.stage == "both") {
    TrainResult stage1 = train_retrieval_stage(corpus, o.train);
    if (!o.log.empty()) write_file(o.log, training_log_csv(stage1.log));
    out << "retrieval: epochs=" << stage1.log.size() << " loss " << stage1.log.front().loss << " -> "
        << stage1.log.back().loss << "\n";
    model = std::move(stage1.model);
  }
  if (o.stage == "distill" || o.stage == "both") {
    if (!model) {
      if (o.model.empty()) throw CliFailure{kExitUsage, "usage", "--stage distill requires -m"};
      require_file(o.model);
      model = read_checkpoint(o.model);
    }
    TrainResult stage2 = train_distill_stage(corpus, *model, o.train);
    if (!o.distill_log.empty()) write_file(o.distill_log, training_log_csv(stage2.log));
    out << "distill: epochs=" << stage2.log.size() << " mse " << stage2.log.front().loss << " -> "
        << stage2.log.back().loss << "\n";
    model = std::move(stage2.model);
  }
  write_checkpoint(*model, o.output);
  out << "wrote " << o.output << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const CorpusBundle corpus = load_corpus(o.corpus);
  require_valid(corpus);
  const auto model = load_model(o.model, corpus, o.seed);
  const RetrievalIndex index = index_corpus(corpus, model);
  const MetricsReport report = evaluate(corpus.queries, index, {o.k_percent, o.k_frames, o.parallel});
  emit(metrics_csv(report), o.output, out);
  return kExitOk;
}

int cmd_query(const Options& o, std::ostream& out) {
  if (o.query_id.empty() == o.query_file.empty()) {
    throw CliFailure{kExitUsage, "usage", "query needs exactly one of --query-id or --query-file"};
  }
  const CorpusBundle corpus = load_corpus(o.corpus);
  require_valid(corpus);
  QueryRecord query;
  if (!o.query_id.empty()) {
    const auto it = std::find_if(corpus.queries.begin(), corpus.queries.end(),
                                 [&](const QueryRecord& q) { return q.id == o.query_id; });
    if (it == corpus.queries.end()) throw CliFailure{kExitValidation, "unknown-query", o.query_id};
    query = *it;
  } else {
    query = load_query_file(o.query_file);
  }
  const auto model = load_model(o.model, corpus, o.seed);
  const RetrievalIndex index = index_corpus(corpus, model);
  const RankedList list = retrieve(query, index, {o.k_percent, o.k_frames, o.parallel});
  emit(ranked_csv(list, o.top), o.output, out);
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const std::vector<double> ks = parse_k_list(o.k_list);
  const CorpusBundle corpus = load_corpus(o.corpus);
  require_valid(corpus);
  const auto model = load_model(o.model, corpus, o.seed);
  BenchConfig config;
  config.k_percents = ks;
  config.rounds = o.rounds;
  config.k_frames = o.k_frames;
  config.parallel = o.parallel;
  emit(latency_csv(bench(corpus, model, config)), o.output, out);
  return kExitOk;
}

int cmd_index(const Options& o, std::ostream& out) {
  if (o.output.empty()) throw CliFailure{kExitUsage, "usage", "index requires -o"};
  const CorpusBundle corpus = load_corpus(o.corpus);
  require_valid(corpus);
  const RetrievalIndex index = index_corpus(corpus, load_model(o.model, corpus, o.seed));
  write_index(index, o.output);
  out << "wrote " << o.output << " videos=" << index.size() << "\n";
  return kExitOk;
}

int format_exit_code(FormatErrorCode code) {
  return code == FormatErrorCode::kDimensionMismatch ? kExitValidation : kExitIo;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-aware two-stage text-video retrieval over embedding corpora", "proclip"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Write a planted synthetic corpus");
  synth->add_option("--videos", o.synth.n_videos)->check(CLI::Range(1U, 1U << 24));
  synth->add_option("--queries", o.synth.n_queries)->check(CLI::Range(0U, 1U << 24));
  synth->add_option("--frames-min", o.synth.frames_min)->check(CLI::Range(1U, 1U << 16));
  synth->add_option("--frames-max", o.synth.frames_max)->check(CLI::Range(1U, 1U << 16));
  synth->add_option("--words", o.synth.words_per_query)->check(CLI::Range(1U, 1U << 16));
  synth->add_option("--raw-dim", o.synth.raw_dim)->check(CLI::Range(1U, 1U << 16));
  synth->add_option("--dim", o.synth.dim)->check(CLI::Range(1U, 1U << 16));
  synth->add_option("--duration-lo", o.synth.duration_lo);
  synth->add_option("--duration-hi", o.synth.duration_hi);
  synth->add_option("--snr", o.synth.relevance_snr, "Relevance signal-to-noise ratio ('inf' for noise-free)");
  synth->add_option("--relevant-fraction", o.synth.relevant_frame_fraction)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", o.synth.seed);
  synth->add_option("-o,--output", o.output, "Corpus path")->required();

  auto* validate = app.add_subcommand("validate", "Check corpus invariants");
  validate->add_option("-c,--corpus", o.corpus)->required();

  auto* train = app.add_subcommand("train", "Train the retrieval and/or distillation stage");
  train->add_option("-c,--corpus", o.corpus)->required();
  train->add_option("-m,--model", o.model, "Stage-1 checkpoint for --stage distill");
  train->add_option("-o,--output", o.output, "Checkpoint to write")->required();
  train->add_option("--stage", o.stage)->check(CLI::IsMember({"retrieval", "distill", "both"}));
  train->add_option("--seed", o.seed);
  train->add_option("--epochs", o.train.epochs)->check(CLI::Range(1, 1 << 20));
  train->add_option("--batch", o.train.batch_size)->check(CLI::Range(2, 1 << 20));
  train->add_option("--backbone-lr", o.train.backbone_lr)->check(CLI::PositiveNumber);
  train->add_option("--head-lr", o.train.head_lr)->check(CLI::PositiveNumber);
  train->add_option("--k-frames", o.train.k_frames)->check(CLI::Range(1, 1 << 20));
  train->add_option("--distill-epochs", o.train.distill_epochs)->check(CLI::Range(1, 1 << 20));
  train->add_option("--distill-batch", o.train.distill_batch)->check(CLI::Range(1, 1 << 20));
  train->add_option("--distill-lr", o.train.distill_lr)->check(CLI::PositiveNumber);
  train->add_option("--log", o.log, "Stage-1 log CSV (epoch,loss,temperature)");
  train->add_option("--distill-log", o.distill_log, "Stage-2 log CSV");

  auto* eval = app.add_subcommand("eval", "R@1/5/10 and MnR as CSV");
  add_retrieval_flags(eval, o);
  eval->add_option("-k,--k-percent", o.k_percent, "Stage-1 retention percentage")->check(CLI::Range(1e-9, 100.0));

  auto* query = app.add_subcommand("query", "Top results of one query as CSV");
  add_retrieval_flags(query, o);
  query->add_option("-k,--k-percent", o.k_percent)->check(CLI::Range(1e-9, 100.0));
  query->add_option("--query-id", o.query_id, "Query from the corpus");
  query->add_option("--query-file", o.query_file, "JSON {\"words\": [[...]], \"sentence\": [...]}");
  query->add_option("--top", o.top)->check(CLI::Range(1, 1 << 30));

  auto* bench_cmd = app.add_subcommand("bench", "Latency sweep over retention percentages as CSV");
  add_retrieval_flags(bench_cmd, o);
  bench_cmd->add_option("--k-list", o.k_list, "Comma-separated percentages");
  bench_cmd->add_option("--rounds", o.rounds, "Warm retrievals averaged per k")->check(CLI::Range(1, 1 << 20));

  auto* index = app.add_subcommand("index", "Build and write the retrieval index");
  add_retrieval_flags(index, o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*validate) return cmd_validate(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*query) return cmd_query(o, out);
    if (*bench_cmd) return cmd_bench(o, out);
    if (*index) return cmd_index(o, out);
    err << "error: usage: no subcommand\n";
    return kExitUsage;
  } catch (const CliFailure& f) {
    err << "error: " << f.kind << ": " << one_line(f.detail) << "\n";
    return f.code;
  } catch (const FormatError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return format_exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: failure: " << one_line(e.what()) << "\n";
    return kExitFailure;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace proclip
