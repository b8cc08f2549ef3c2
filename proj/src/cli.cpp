#include "capsnet/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "capsnet/checkpoint.hpp"
#include "capsnet/config.hpp"
#include "capsnet/data.hpp"
#include "capsnet/gradcheck.hpp"
#include "capsnet/synth.hpp"
#include "capsnet/trainer.hpp"

namespace capsnet {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

EmbeddingTable embeddings_for(const RunConfig& rc, const std::string& override_path) {
  const std::string path = override_path.empty() ? rc.embeddings_path : override_path;
  if (path.empty()) throw UsageError("no embedding file: pass --embeddings or set 'embeddings' in the config");
  return load_embeddings(path);
}

void check_embed_dim(const EmbeddingTable& table, const ModelConfig& mc) {
  if (table.dim() != mc.embed_dim) {
    throw UsageError("embedding dimension " + std::to_string(table.dim()) + " does not match the model's " +
                     std::to_string(mc.embed_dim));
  }
}

void print_report(std::ostream& out, const EvalReport& report, const std::string& format) {
  if (format != "tsv") report.write_text(out);
  if (format != "text") report.write_tsv(out);
}

int cmd_train(const std::string& config_path, const std::string& checkpoint, const std::string& log_path,
              std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (!checkpoint.empty()) rc.checkpoint_path = checkpoint;
  if (rc.checkpoint_path.empty()) throw UsageError("no checkpoint path: pass --checkpoint or set 'checkpoint'");
  if (rc.train_path.empty()) throw UsageError("config has no 'train' dataset");
  const EmbeddingTable table = embeddings_for(rc, "");
  rc.model.embed_dim = table.dim();
  rc.model.validate();

  std::unique_ptr<std::ofstream> log;
  if (!log_path.empty()) {
    log = std::make_unique<std::ofstream>(log_path);
    if (!*log) throw UsageError(log_path + ": cannot open log file");
  }
  const EpochCallback on_epoch = [&](const EpochStats& s) {
    write_epoch_line(out, s);
    if (log) write_epoch_line(*log, s);
  };

  ModelParams params = ModelParams::random(rc.model, rc.train.seed);
  std::optional<EvalReport> report;
  if (rc.task == Task::classification) {
    const auto train = encode_classification(load_classification(rc.train_path, rc.model.num_labels), table,
                                             rc.model.max_len);
    train_classifier(params, train, rc.train, on_epoch);
    if (!rc.test_path.empty()) {
      const auto test = encode_classification(load_classification(rc.test_path, rc.model.num_labels), table,
                                              rc.model.max_len);
      report = evaluate_classifier(params, test, rc.train);
    }
  } else {
    if (rc.model.num_labels != 1) throw UsageError("qa task needs num_labels = 1");
    const auto train = encode_qa(group_qa(load_qa(rc.train_path)), table, rc.model.max_len);
    train_qa(params, train, rc.train, on_epoch);
    if (!rc.test_path.empty()) {
      report = evaluate_qa(params, encode_qa(group_qa(load_qa(rc.test_path)), table, rc.model.max_len), rc.train);
    }
  }
  save_checkpoint(rc.checkpoint_path, rc, params);
  if (report) print_report(out, *report, "both");
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& emb,
             const std::vector<std::size_t>& ks, const std::string& format, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const EmbeddingTable table = embeddings_for(ck.config, emb);
  check_embed_dim(table, ck.params.config());
  const std::size_t max_len = ck.params.config().max_len;
  EvalReport report;
  if (ck.config.task == Task::classification) {
    const auto set = encode_classification(load_classification(data, ck.params.config().num_labels), table, max_len);
    for (std::size_t k : ks) {
      if (k == 0) throw UsageError("--k values must be >= 1");
    }
    report = evaluate_classifier(ck.params, set, ck.config.train, ks);
  } else {
    report = evaluate_qa(ck.params, encode_qa(group_qa(load_qa(data)), table, max_len), ck.config.train);
  }
  print_report(out, report, format);
  return 0;
}

int cmd_trace(const std::string& checkpoint, const std::string& data, const std::string& emb, std::size_t index,
              const std::string& out_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const EmbeddingTable table = embeddings_for(ck.config, emb);
  check_embed_dim(table, ck.params.config());
  const std::size_t max_len = ck.params.config().max_len;
  RoutingResult result;
  if (ck.config.task == Task::classification) {
    const auto records = load_classification(data, ck.params.config().num_labels);
    if (index >= records.size()) throw UsageError("--index " + std::to_string(index) + " out of range");
    const EncodedDoc doc = encode_document(table.embed(records[index].tokens), max_len);
    result = forward(doc, ck.params, ck.config.train,
                     InferMode{candidate_labels(doc, ck.params, ck.config.train.candidates)});
  } else {
    const auto groups = group_qa(load_qa(data));
    if (index >= groups.size()) throw UsageError("--index " + std::to_string(index) + " out of range");
    const EncodedDoc doc = encode_document(table.embed(groups[index].question), max_len);
    result = forward(doc, ck.params, ck.config.train, InferMode{{0}});
  }
  std::ofstream file(out_path);
  if (!file) throw UsageError(out_path + ": cannot open for writing");
  write_trace(file, result);
  if (!file) throw UsageError(out_path + ": write failed");
  out << "wrote " << result.iterations << " iterations to " << out_path << '\n';
  return 0;
}

struct SynthArgs {
  std::string task = "classification";
  std::string out_dir;
  std::uint64_t seed = 1;
  std::size_t docs = 600;
  std::size_t labels = 6;
  double fraction = 1.0;
  std::size_t questions = 600;
  std::size_t embed_dim = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  RunConfig rc;
  if (a.task == "qa") {
    SynthQaOptions o;
    o.seed = a.seed;
    o.n_questions = a.questions;
    if (a.embed_dim) o.embed_dim = a.embed_dim;
    const auto corpus = synth_qa(o);
    write_qa((dir / "train.tsv").string(), corpus.train);
    write_qa((dir / "test.tsv").string(), corpus.test);
    write_embeddings((dir / "embeddings.txt").string(), corpus.embeddings);
    rc = toy_run_config(Task::qa);
    rc.model.embed_dim = o.embed_dim;
  } else {
    SynthOptions o;
    o.seed = a.seed;
    o.n_docs = a.docs;
    o.n_labels = a.labels;
    o.train_fraction = a.fraction;
    if (a.embed_dim) o.embed_dim = a.embed_dim;
    const auto corpus = synth_multilabel(o);
    write_classification((dir / "train.tsv").string(), corpus.train);
    write_classification((dir / "test.tsv").string(), corpus.test);
    write_embeddings((dir / "embeddings.txt").string(), corpus.embeddings);
    rc = toy_run_config(Task::classification, a.labels);
    rc.model.embed_dim = o.embed_dim;
  }
  rc.train.seed = a.seed;
  rc.train_path = "train.tsv";
  rc.test_path = "test.tsv";
  rc.embeddings_path = "embeddings.txt";
  rc.checkpoint_path = "model.ckpt";
  std::ofstream cfg(dir / "config.json");
  cfg << run_config_json(rc) << '\n';
  if (!cfg) throw UsageError((dir / "config.json").string() + ": write failed");
  out << "wrote train.tsv, test.tsv, embeddings.txt, config.json to " << a.out_dir << '\n';
  return 0;
}

int cmd_gradcheck(std::size_t models, std::uint64_t seed, const std::string& routing, double tolerance,
                  std::ostream& out) {
  std::vector<RoutingMethod> methods;
  if (routing != "dynamic") methods.push_back(RoutingMethod::kde);
  if (routing != "kde") methods.push_back(RoutingMethod::dynamic);
  double worst = 0.0;
  std::size_t failures = 0;
  out << "model\trouting\tentries\tmax_rel_error\n";
  for (RoutingMethod m : methods) {
    for (std::size_t q = 0; q < models; ++q) {
      const auto c = random_gradcheck_case(seed + q, m);
      const auto r = finite_diff_check(c.params, c.example, c.config);
      worst = std::max(worst, r.max_rel_error);
      if (!(r.max_rel_error < tolerance)) ++failures;
      out << seed + q << '\t' << method_name(m) << '\t' << r.entries << '\t' << std::setprecision(3)
          << std::scientific << r.max_rel_error << std::defaultfloat << '\n';
    }
  }
  out << "worst " << std::setprecision(3) << std::scientific << worst << std::defaultfloat << ", " << failures
      << " of " << models * methods.size() << " above " << tolerance << '\n';
  return failures ? 1 : 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Capsule network with adaptive KDE routing"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train from a config file; writes a checkpoint and epoch log");
  std::string config_path, checkpoint, log_path;
  train->add_option("-c,--config", config_path, "JSON run config")->required()->check(CLI::ExistingFile);
  train->add_option("--checkpoint", checkpoint, "Output checkpoint (overrides the config)");
  train->add_option("--log", log_path, "Also write epoch lines to this file");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_ck, eval_data, eval_emb, format = "both";
  std::vector<std::size_t> ks{1, 3, 5};
  eval->add_option("--checkpoint", eval_ck)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data)->required()->check(CLI::ExistingFile);
  eval->add_option("--embeddings", eval_emb, "Defaults to the path stored in the checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--k", ks, "Cutoffs for P@k and NDCG@k")->delimiter(',');
  eval->add_option("--format", format)->check(CLI::IsMember({"text", "tsv", "both"}));

  auto* trace = app.add_subcommand("trace", "Write the per-iteration routing trace of one instance");
  std::string tr_ck, tr_data, tr_emb, tr_out;
  std::size_t tr_index = 0;
  trace->add_option("--checkpoint", tr_ck)->required()->check(CLI::ExistingFile);
  trace->add_option("--data", tr_data)->required()->check(CLI::ExistingFile);
  trace->add_option("--embeddings", tr_emb)->check(CLI::ExistingFile);
  trace->add_option("--index", tr_index, "Record (or question group) index");
  trace->add_option("-o,--out", tr_out, "Trace file")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with embeddings and a starter config");
  SynthArgs sa;
  synth->add_option("--task", sa.task)->check(CLI::IsMember({"classification", "qa"}));
  synth->add_option("-o,--out-dir", sa.out_dir)->required();
  synth->add_option("--seed", sa.seed);
  synth->add_option("--docs", sa.docs)->check(CLI::PositiveNumber);
  synth->add_option("--labels", sa.labels)->check(CLI::Range(2, 1000000));
  synth->add_option("--fraction", sa.fraction, "Share of the training split kept")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--questions", sa.questions)->check(CLI::PositiveNumber);
  synth->add_option("--embed-dim", sa.embed_dim)->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "Compare backward against finite differences on random models");
  std::size_t gc_models = 20;
  std::uint64_t gc_seed = 1;
  std::string gc_routing = "both";
  double gc_tol = 1e-4;
  grad->add_option("--models", gc_models, "Models per routing method")->check(CLI::PositiveNumber);
  grad->add_option("--seed", gc_seed);
  grad->add_option("--routing", gc_routing)->check(CLI::IsMember({"kde", "dynamic", "both"}));
  grad->add_option("--tolerance", gc_tol)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(config_path, checkpoint, log_path, out);
    if (*eval) return cmd_eval(eval_ck, eval_data, eval_emb, ks, format, out);
    if (*trace) return cmd_trace(tr_ck, tr_data, tr_emb, tr_index, tr_out, out);
    if (*synth) return cmd_synth(sa, out);
    if (*grad) return cmd_gradcheck(gc_models, gc_seed, gc_routing, gc_tol, out);
  } catch (const std::exception& e) {
    err << "capsnet: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace capsnet
