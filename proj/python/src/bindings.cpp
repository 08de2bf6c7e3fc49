#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "qaplaus/checkpoint.hpp"
#include "qaplaus/cli.hpp"
#include "qaplaus/dataset.hpp"
#include "qaplaus/errors.hpp"
#include "qaplaus/metrics.hpp"
#include "qaplaus/pipeline.hpp"
#include "qaplaus/tokenizer.hpp"
#include "qaplaus/training.hpp"

namespace py = pybind11;
using namespace qaplaus;

namespace {

std::vector<ScoredLabel> zip_scores(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::vector<ScoredLabel> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = {scores[i], labels[i]};
  return out;
}

py::dict metrics_dict(const EvalMetrics& m) {
  py::dict d;
  d["count"] = m.count;
  d["qp_accuracy"] = m.qp_accuracy;
  d["qp_auroc"] = m.qp_auroc;
  d["rp_accuracy"] = m.rp_accuracy;
  d["rp_auroc"] = m.rp_auroc;
  d["ae_f1"] = m.ae_f1;
  d["ae_exact_match"] = m.ae_exact_match;
  return d;
}

py::dict record_dict(const PredictionRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["qp_score"] = r.qp_score;
  d["rp_score"] = r.rp_score;
  d["question_verdict"] = r.question_verdict;
  d["response_verdict"] = r.response_verdict;
  d["extracted_answer"] = r.extracted_answer;
  if (r.answer_char_span)
    d["answer_char_span"] = py::make_tuple(r.answer_char_span->start, r.answer_char_span->end);
  else
    d["answer_char_span"] = py::none();
  return d;
}

struct TrainOutcome {
  Checkpoint checkpoint;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string diagnostic;
  std::vector<EpochLog> log;
};

TrainOutcome train_model(const std::vector<QAExample>& train_examples, const std::vector<QAExample>& val_examples,
                         const Vocab& vocab, ModelConfig model_config, const TrainConfig& train_config) {
  model_config.vocab_size = vocab.size();
  model_config.active_tasks = train_config.tasks;
  model_config.validate();
  train_config.validate();
  const auto train_set = encode_corpus(train_examples, vocab, model_config.max_len);
  const auto val_set = encode_corpus(val_examples, vocab, model_config.max_len);
  TrainResult result;
  {
    py::gil_scoped_release release;
    result = train(init_params(model_config, train_config.seed), model_config, train_config, train_set, val_set);
  }
  return {{model_config, std::move(result.best_params), vocab.fingerprint()}, result.best_epoch, result.diverged,
          result.diagnostic, std::move(result.log)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Question/response plausibility and answer extraction.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // Dataset.
  py::class_<QAExample>(m, "QAExample")
      .def(py::init([](std::string id, std::string question, std::string response,
                       std::optional<bool> question_plausible, std::optional<bool> response_plausible,
                       std::optional<std::pair<std::size_t, std::size_t>> answer) {
             QAExample e{std::move(id), std::move(question), std::move(response), question_plausible,
                         response_plausible};
             if (answer) e.answer = AnswerSpan{answer->first, answer->second};
             return e;
           }),
           py::arg("id"), py::arg("question"), py::arg("response"), py::arg("question_plausible") = py::none(),
           py::arg("response_plausible") = py::none(), py::arg("answer") = py::none())
      .def_readwrite("id", &QAExample::id)
      .def_readwrite("question", &QAExample::question)
      .def_readwrite("response", &QAExample::response)
      .def_readwrite("question_plausible", &QAExample::question_plausible)
      .def_readwrite("response_plausible", &QAExample::response_plausible)
      .def_property(
          "answer",
          [](const QAExample& e) -> std::optional<std::pair<std::size_t, std::size_t>> {
            if (!e.answer) return std::nullopt;
            return std::make_pair(e.answer->start, e.answer->end);
          },
          [](QAExample& e, std::optional<std::pair<std::size_t, std::size_t>> span) {
            if (span) e.answer = AnswerSpan{span->first, span->second};
            else e.answer.reset();
          })
      .def_property_readonly("answer_text", &answer_text)
      .def("to_json", &to_jsonl)
      .def(py::self == py::self)
      .def("__repr__", [](const QAExample& e) { return "QAExample(" + to_jsonl(e) + ")"; });

  m.def(
      "synth_corpus",
      [](std::size_t n, std::uint64_t seed) { return synth_corpus(n, ClassProportions::reference_mix(), seed); },
      py::arg("n"), py::arg("seed") = 13);
  m.def("load_corpus", &load_corpus, py::arg("path"));
  m.def("parse_corpus", [](const std::string& text) {
    std::istringstream in(text);
    return parse_corpus(in);
  });
  m.def("dump_corpus", [](const std::vector<QAExample>& examples) {
    std::ostringstream out;
    write_corpus(out, examples);
    return out.str();
  });
  m.def("is_where_question", &is_where_question);
  m.def("filter_where_questions", [](std::vector<QAExample> examples) {
    auto r = filter_where_questions(std::move(examples));
    return py::make_tuple(std::move(r.kept), std::move(r.removed));
  });
  m.def("class_counts", [](const std::vector<QAExample>& examples) {
    const auto c = count_classes(examples);
    py::dict d;
    d["yy"] = c.yy;
    d["yn"] = c.yn;
    d["ny"] = c.ny;
    d["nn"] = c.nn;
    return d;
  });

  // Tokenization.
  m.def("tokenize", [](std::string_view text) {
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> out;
    for (auto& t : tokenize(text)) out.emplace_back(std::move(t.text), t.range.start, t.range.end);
    return out;
  });

  py::class_<Vocab>(m, "Vocab")
      .def(py::init<std::vector<std::string>>(), py::arg("tokens"))
      .def_static("load", &Vocab::load, py::arg("path"))
      .def("save", &Vocab::save, py::arg("path"))
      .def("id", &Vocab::id)
      .def("token", &Vocab::token)
      .def_property_readonly("tokens", &Vocab::tokens)
      .def_property_readonly("fingerprint", &Vocab::fingerprint)
      .def("__len__", &Vocab::size);
  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("max_size") = 4096);

  py::class_<TokenizedInput>(m, "TokenizedInput")
      .def_readonly("token_ids", &TokenizedInput::token_ids)
      .def_readonly("segment_ids", &TokenizedInput::segment_ids)
      .def_readonly("pad_mask", &TokenizedInput::pad_mask)
      .def_property_readonly("response_char_spans",
                             [](const TokenizedInput& in) {
                               py::list out;
                               for (const auto& r : in.response_char_spans) {
                                 if (r) out.append(py::make_tuple(r->start, r->end));
                                 else out.append(py::none());
                               }
                               return out;
                             })
      .def_property_readonly("response_begin", &TokenizedInput::response_begin)
      .def_property_readonly("response_end", &TokenizedInput::response_end)
      .def("__len__", &TokenizedInput::length);
  m.def("encode_pair", &encode_pair, py::arg("question"), py::arg("response"), py::arg("vocab"),
        py::arg("max_len"));

  // Metrics.
  m.def(
      "accuracy",
      [](const std::vector<double>& scores, const std::vector<bool>& labels, double threshold) {
        return accuracy(zip_scores(scores, labels), threshold);
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);
  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<bool>& labels) {
        return auroc(zip_scores(scores, labels));
      },
      py::arg("scores"), py::arg("labels"));
  m.def("normalize_answer", &normalize_answer, py::arg("text"), py::arg("drop_articles") = false);
  m.def("span_f1", &span_f1, py::arg("predicted"), py::arg("gold"), py::arg("drop_articles") = false);
  m.def("exact_match", &exact_match, py::arg("predicted"), py::arg("gold"), py::arg("drop_articles") = false);

  // Model and training.
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("reference", &ModelConfig::reference)
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("num_heads", &ModelConfig::num_heads)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_len", &ModelConfig::max_len)
      .def_readwrite("head_dropout", &ModelConfig::head_dropout)
      .def_property(
          "tasks", [](const ModelConfig& c) { return c.active_tasks.to_string(); },
          [](ModelConfig& c, std::string_view text) { c.active_tasks = TaskSet::parse(text); })
      .def("validate", &ModelConfig::validate);
  m.def("parameter_count", py::overload_cast<const ModelConfig&>(&parameter_count), py::arg("config"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_property(
          "tasks", [](const TrainConfig& c) { return c.tasks.to_string(); },
          [](TrainConfig& c, std::string_view text) { c.tasks = TaskSet::parse(text); });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Checkpoint& c, const std::filesystem::path& path) { save_checkpoint(path, c); })
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("vocab_fingerprint", &Checkpoint::vocab_fingerprint)
      .def("evaluate", [](const Checkpoint& c, const std::vector<QAExample>& corpus, const Vocab& vocab) {
        if (vocab.fingerprint() != c.vocab_fingerprint)
          throw ValidationError("vocabulary does not match the checkpoint");
        const auto encoded = encode_corpus(corpus, vocab, c.config.max_len);
        return metrics_dict(evaluate(c.params, c.config, encoded, c.config.active_tasks));
      });

  py::class_<TrainOutcome>(m, "TrainOutcome")
      .def_readonly("checkpoint", &TrainOutcome::checkpoint)
      .def_readonly("best_epoch", &TrainOutcome::best_epoch)
      .def_readonly("diverged", &TrainOutcome::diverged)
      .def_readonly("diagnostic", &TrainOutcome::diagnostic)
      .def_property_readonly("log", [](const TrainOutcome& o) {
        py::list rows;
        for (const auto& e : o.log) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["loss"] = e.total_loss;
          d["selection"] = e.selection;
          d["improved"] = e.improved;
          d["validation"] = metrics_dict(e.validation);
          rows.append(d);
        }
        return rows;
      });
  m.def("train", &train_model, py::arg("train"), py::arg("val"), py::arg("vocab"), py::arg("model_config"),
        py::arg("train_config"));

  // Inference.
  py::class_<TwoStagePipeline>(m, "Pipeline")
      .def(py::init([](Vocab vocab, Checkpoint question_model, Checkpoint response_model, double qp_threshold,
                       double rp_threshold) {
             PipelineConfig config;
             config.qp_threshold = qp_threshold;
             config.rp_threshold = rp_threshold;
             return TwoStagePipeline(std::move(vocab), std::move(question_model), std::move(response_model),
                                     config);
           }),
           py::arg("vocab"), py::arg("question_model"), py::arg("response_model"), py::arg("qp_threshold") = 0.5,
           py::arg("rp_threshold") = 0.5)
      .def(
          "infer",
          [](const TwoStagePipeline& p, const std::string& question, const std::string& response) {
            return record_dict(p.infer(QAExample{"predict", question, response}));
          },
          py::arg("question"), py::arg("response"))
      .def("set_thresholds", &TwoStagePipeline::set_thresholds, py::arg("qp_threshold"), py::arg("rp_threshold"))
      .def("clean", [](const TwoStagePipeline& p, const std::vector<QAExample>& corpus) {
        auto r = clean_dataset(corpus, p);
        return py::make_tuple(std::move(r.cleaned), py::module_::import("json").attr("loads")(r.audit.to_json()));
      });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
