#include "qaplaus/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "qaplaus/checkpoint.hpp"
#include "qaplaus/dataset.hpp"
#include "qaplaus/errors.hpp"
#include "qaplaus/pipeline.hpp"
#include "qaplaus/run_config.hpp"
#include "qaplaus/tokenizer.hpp"
#include "qaplaus/training.hpp"

namespace qaplaus {

namespace {

namespace fs = std::filesystem;

// Raised when training stops on a non-finite loss.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds the effective configuration: defaults, then the config file (from
// --config or the environment), then `--key value` overrides.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& extras) {
  RunConfig config;
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) path = env;
  }
  if (!path.empty()) config.load_file(path);

  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ValidationError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ValidationError("missing value for --" + key);
      value = extras[++i];
    }
    config.set(key, value);
  }
  return config;
}

std::string fixed(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

std::string cell(const std::optional<double>& value) { return value ? fixed(*value) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::vector<QAExample> load_optional(const fs::path& path) {
  return fs::exists(path) ? load_corpus(path) : std::vector<QAExample>{};
}

ModelConfig model_config_for(const RunConfig& config, const Vocab& vocab) {
  ModelConfig mc = config.model_config();
  mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

// ---------------------------------------------------------------------------

void cmd_ingest(const RunConfig& config, const fs::path& in_path, const fs::path& out_dir, std::ostream& out) {
  auto examples = load_corpus(in_path);
  const std::size_t input_count = examples.size();
  auto filtered = filter_where_questions(std::move(examples));

  std::vector<QAExample> kept;
  std::size_t cap_dropped = 0;
  for (auto& ex : filtered.kept) {
    if (enforce_label_span_cap(ex, config.span_cap()).ok) kept.push_back(std::move(ex));
    else ++cap_dropped;
  }
  const std::size_t kept_count = kept.size();
  auto splits = split_corpus(std::move(kept), config.split_fractions(), config.seed());

  ensure_dir(out_dir);
  write_corpus(out_dir / "train.jsonl", splits.train);
  write_corpus(out_dir / "val.jsonl", splits.val);
  write_corpus(out_dir / "test.jsonl", splits.test);

  nlohmann::ordered_json report;
  report["input"] = input_count;
  report["where_removed"] = filtered.removed.size();
  report["span_cap_dropped"] = cap_dropped;
  report["kept"] = kept_count;
  report["train"] = splits.train.size();
  report["val"] = splits.val.size();
  report["test"] = splits.test.size();
  report["seed"] = config.seed();
  write_text(out_dir / "ingest_report.json", report.dump(2) + "\n");
  out << report.dump() << '\n';
}

void cmd_synth(const RunConfig& config, const fs::path& out_path, std::ostream& out) {
  const auto corpus = synth_corpus(config.synth_count(), config.synth_proportions(), config.seed());
  write_corpus(out_path, corpus);
  const auto counts = count_classes(corpus);
  out << "wrote " << corpus.size() << " examples (yy=" << counts.yy << " yn=" << counts.yn << " ny=" << counts.ny
      << " nn=" << counts.nn << ") to " << out_path.string() << '\n';
}

void save_training(const fs::path& dir, const ModelConfig& mc, const TrainResult& result, const Vocab& vocab) {
  ensure_dir(dir);
  save_checkpoint(dir / "model.ckpt", {mc, result.best_params, vocab.fingerprint()});
  std::ostringstream log;
  write_epoch_log_csv(log, result.log);
  write_text(dir / "train_log.csv", log.str());
}

Vocab vocab_for(const RunConfig& config, const std::string& vocab_path, const std::vector<QAExample>& train) {
  if (!vocab_path.empty()) return Vocab::load(vocab_path);
  return build_vocab(train, config.vocab_max_size());
}

void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
               const std::string& vocab_path, std::ostream& out) {
  const auto train_examples = load_corpus(data_dir / "train.jsonl");
  const auto val_examples = load_optional(data_dir / "val.jsonl");
  const Vocab vocab = vocab_for(config, vocab_path, train_examples);
  const ModelConfig mc = model_config_for(config, vocab);
  const TrainConfig tc = config.train_config();

  const auto train_set = encode_corpus(train_examples, vocab, mc.max_len);
  const auto val_set = encode_corpus(val_examples, vocab, mc.max_len);
  const auto result = train(init_params(mc, tc.seed), mc, tc, train_set, val_set, [&out](const EpochLog& e) {
    out << "epoch " << e.epoch << " loss " << fixed(e.total_loss) << " selection " << cell(e.selection)
        << (e.improved ? " *" : "") << '\n';
  });

  ensure_dir(out_dir);
  vocab.save(out_dir / "vocab.txt");
  save_training(out_dir, mc, result, vocab);
  if (result.diverged) throw TrainingDiverged("training diverged (" + result.diagnostic + "); kept epoch " +
                                              std::to_string(result.best_epoch));
  out << "best epoch " << result.best_epoch << "; checkpoint " << (out_dir / "model.ckpt").string() << '\n';
}

void cmd_grid(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
              const std::string& vocab_path, std::ostream& out) {
  const auto train_examples = load_corpus(data_dir / "train.jsonl");
  const Vocab vocab = vocab_for(config, vocab_path, train_examples);
  const ModelConfig mc = model_config_for(config, vocab);
  GridInputs data;
  data.train = encode_corpus(train_examples, vocab, mc.max_len);
  data.val = encode_corpus(load_optional(data_dir / "val.jsonl"), vocab, mc.max_len);
  data.test = encode_corpus(load_optional(data_dir / "test.jsonl"), vocab, mc.max_len);

  ensure_dir(out_dir);
  vocab.save(out_dir / "vocab.txt");
  bool diverged = false;
  const auto rows = run_experiment_grid(data, mc, config.train_config(), [&](const GridRow& row) {
    ModelConfig variant_config = mc;
    variant_config.active_tasks = row.variant.tasks;
    save_training(out_dir / row.variant.name, variant_config, row.training, vocab);
    diverged = diverged || row.training.diverged;
    out << "variant " << row.variant.name << " best epoch " << row.training.best_epoch << '\n';
  });

  std::ostringstream csv;
  write_grid_csv(csv, rows);
  write_text(out_dir / "grid.csv", csv.str());

  std::ostringstream ref;
  ref << "variant,qp_acc,qp_auroc,rp_acc,rp_auroc,ae_f1\n";
  for (const auto& r : reference_results())
    ref << r.variant << ',' << cell(r.qp_acc) << ',' << cell(r.qp_auroc) << ',' << cell(r.rp_acc) << ','
        << cell(r.rp_auroc) << ',' << cell(r.ae_f1) << '\n';
  write_text(out_dir / "reference.csv", ref.str());
  out << csv.str();
  if (diverged) throw TrainingDiverged("at least one grid variant diverged; see its train_log.csv");
}

void cmd_eval(const fs::path& checkpoint_path, const fs::path& vocab_path, const fs::path& corpus_path,
              const std::string& out_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const Vocab vocab = Vocab::load(vocab_path);
  if (vocab.fingerprint() != ck.vocab_fingerprint)
    throw ValidationError("vocabulary fingerprint does not match the checkpoint");
  const auto examples = encode_corpus(load_corpus(corpus_path), vocab, ck.config.max_len);
  const auto tasks = ck.config.active_tasks;
  const EvalMetrics m = evaluate(ck.params, ck.config, examples, tasks);

  std::ostringstream csv;
  csv << "n,qp_acc,qp_auroc,rp_acc,rp_auroc,ae_f1,ae_exact_match\n";
  csv << m.count << ',' << cell(m.qp_accuracy) << ',' << cell(m.qp_auroc) << ',' << cell(m.rp_accuracy) << ','
      << cell(m.rp_auroc) << ',' << cell(m.ae_f1) << ',' << cell(m.ae_exact_match) << '\n';
  if (!out_path.empty()) write_text(out_path, csv.str());
  out << csv.str();
}

void cmd_clean(const RunConfig& config, const fs::path& in_path, const fs::path& out_path,
               const std::string& audit_path, std::ostream& out) {
  const auto pipeline = TwoStagePipeline::load(config.pipeline_config());
  const auto input = load_corpus(in_path);
  const auto result = clean_dataset(input, pipeline);
  write_corpus(out_path, result.cleaned);
  const fs::path audit = audit_path.empty() ? fs::path(out_path.string() + ".audit.json") : fs::path(audit_path);
  write_text(audit, result.audit.to_json() + "\n");
  out << "kept " << result.cleaned.size() << " of " << input.size() << " examples; audit " << audit.string()
      << '\n';
}

void cmd_predict(const RunConfig& config, const std::string& question, const std::string& response,
                 std::ostream& out) {
  const auto pipeline = TwoStagePipeline::load(config.pipeline_config());
  QAExample ex;
  ex.id = "predict";
  ex.question = question;
  ex.response = response;
  validate_example(ex);
  out << to_json(pipeline.infer(ex)) << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Question/response plausibility scoring and dataset cleaning", "qaplaus"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Config file of key = value lines")->check(CLI::ExistingFile);

  auto* ingest = app.add_subcommand("ingest", "Validate, filter and split a labelled corpus");
  std::string ingest_in, ingest_out;
  ingest->add_option("input", ingest_in, "Corpus JSONL")->required();
  ingest->add_option("out_dir", ingest_out, "Directory for train/val/test JSONL")->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  std::string synth_out;
  std::optional<std::size_t> synth_n;
  synth->add_option("--out", synth_out, "Output JSONL")->required();
  synth->add_option("--n", synth_n, "Number of examples (synth.n)");

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  auto* grid = app.add_subcommand("grid", "Train the five task-combination variants");
  std::string data_dir, model_out, vocab_in, tasks;
  for (auto* sub : {train_cmd, grid}) {
    sub->add_option("--data", data_dir, "Directory holding train.jsonl (and val.jsonl, test.jsonl)")->required();
    sub->add_option("--out", model_out, "Output directory")->required();
    sub->add_option("--vocab", vocab_in, "Reuse this vocabulary instead of building one");
  }
  train_cmd->add_option("--tasks", tasks, "Tasks to train, e.g. qp or rp,ae (train.tasks)");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  std::string eval_ckpt, eval_vocab, eval_corpus, eval_out;
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--vocab", eval_vocab)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", eval_corpus)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Write the metrics CSV here as well");

  auto* clean = app.add_subcommand("clean", "Run the two-stage pipeline over a corpus");
  std::string clean_in, clean_out, clean_audit;
  clean->add_option("input", clean_in)->required();
  clean->add_option("output", clean_out)->required();
  clean->add_option("--audit", clean_audit, "Audit JSON path (default <output>.audit.json)");

  auto* predict = app.add_subcommand("predict", "Score one question/response pair");
  std::string question, response;
  predict->add_option("--question", question)->required();
  predict->add_option("--response", response)->required();

  auto* config_cmd = app.add_subcommand("config", "Show the effective configuration");
  bool dump = false;
  config_cmd->add_flag("--dump", dump, "Print every key with its value");

  for (auto* sub : app.get_subcommands({})) sub->allow_extras();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    RunConfig config = resolve_config(config_path, active->remaining());
    if (synth_n) config.set("synth.n", std::to_string(*synth_n));
    if (!tasks.empty()) config.set("train.tasks", tasks);

    if (active == ingest) cmd_ingest(config, ingest_in, ingest_out, out);
    else if (active == synth) cmd_synth(config, synth_out, out);
    else if (active == train_cmd) cmd_train(config, data_dir, model_out, vocab_in, out);
    else if (active == grid) cmd_grid(config, data_dir, model_out, vocab_in, out);
    else if (active == eval) cmd_eval(eval_ckpt, eval_vocab, eval_corpus, eval_out, out);
    else if (active == clean) cmd_clean(config, clean_in, clean_out, clean_audit, out);
    else if (active == predict) cmd_predict(config, question, response, out);
    else if (active == config_cmd) config.dump(out);
    (void)dump;
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace qaplaus
