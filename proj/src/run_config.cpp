#include "qaplaus/run_config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "qaplaus/errors.hpp"

namespace qaplaus {

namespace {

enum class Kind { integer, real, text, tasks };

struct KeySpec {
  const char* key;
  const char* fallback;
  Kind kind;
};

constexpr KeySpec kKeys[] = {
    {"seed", "13", Kind::integer},
    {"model.layers", "2", Kind::integer},
    {"model.heads", "4", Kind::integer},
    {"model.hidden", "64", Kind::integer},
    {"model.ffn", "128", Kind::integer},
    {"model.max_len", "32", Kind::integer},
    {"model.head_dropout", "0.5", Kind::real},
    {"vocab.max_size", "4096", Kind::integer},
    {"train.tasks", "qp,rp,ae", Kind::tasks},
    {"train.lr", "0.0003", Kind::real},
    {"train.batch_size", "16", Kind::integer},
    {"train.max_epochs", "20", Kind::integer},
    {"train.patience", "3", Kind::integer},
    {"train.weight_qp", "1", Kind::real},
    {"train.weight_rp", "1", Kind::real},
    {"train.weight_ae", "1", Kind::real},
    {"split.train", "0.8", Kind::real},
    {"split.val", "0.1", Kind::real},
    {"split.test", "0.1", Kind::real},
    {"ingest.span_cap", "5", Kind::integer},
    {"synth.n", "1000", Kind::integer},
    {"synth.p_yy", "50.6", Kind::real},
    {"synth.p_yn", "22.8", Kind::real},
    {"synth.p_ny", "11.4", Kind::real},
    {"synth.p_nn", "15.3", Kind::real},
    {"pipeline.qp_threshold", "0.5", Kind::real},
    {"pipeline.rp_threshold", "0.5", Kind::real},
    {"pipeline.max_answer_tokens", "0", Kind::integer},
    {"pipeline.qp_checkpoint", "", Kind::text},
    {"pipeline.rpae_checkpoint", "", Kind::text},
    {"pipeline.vocab", "", Kind::text},
};

const KeySpec* find_spec(std::string_view key) {
  for (const auto& spec : kKeys)
    if (key == spec.key) return &spec;
  return nullptr;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_integer(std::string_view text, std::uint64_t& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

bool parse_real(std::string_view text, double& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty() && std::isfinite(out);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& spec : kKeys) values_.emplace(spec.key, spec.fallback);
}

void RunConfig::set(std::string_view key, std::string_view raw) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw ValidationError("unknown config key '" + std::string(key) + "'");
  const std::string_view value = trim(raw);
  switch (spec->kind) {
    case Kind::integer: {
      std::uint64_t v = 0;
      if (!parse_integer(value, v))
        throw ValidationError("config key '" + std::string(key) + "' needs a non-negative integer");
      break;
    }
    case Kind::real: {
      double v = 0;
      if (!parse_real(value, v)) throw ValidationError("config key '" + std::string(key) + "' needs a number");
      break;
    }
    case Kind::tasks:
      (void)TaskSet::parse(value);
      break;
    case Kind::text:
      break;
  }
  values_.find(key)->second = std::string(value);
}

const std::string& RunConfig::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      set(trim(view.substr(0, eq)), view.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  load_text(buffer.str(), path.string());
}

void RunConfig::dump(std::ostream& out) const {
  for (const auto& spec : kKeys) out << spec.key << " = " << values_.find(spec.key)->second << '\n';
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& spec : kKeys) out.emplace_back(spec.key);
  return out;
}

double RunConfig::real(std::string_view key) const {
  double v = 0;
  parse_real(get(key), v);
  return v;
}

std::size_t RunConfig::count(std::string_view key) const {
  std::uint64_t v = 0;
  parse_integer(get(key), v);
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::seed() const { return count("seed"); }

ModelConfig RunConfig::model_config() const {
  ModelConfig c;
  c.num_layers = count("model.layers");
  c.num_heads = count("model.heads");
  c.hidden_dim = count("model.hidden");
  c.ffn_dim = count("model.ffn");
  c.max_len = count("model.max_len");
  c.head_dropout = real("model.head_dropout");
  c.active_tasks = TaskSet::parse(get("train.tasks"));
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = real("train.lr");
  t.batch_size = count("train.batch_size");
  t.max_epochs = count("train.max_epochs");
  t.patience = count("train.patience");
  t.seed = seed();
  t.tasks = TaskSet::parse(get("train.tasks"));
  t.weights = {real("train.weight_qp"), real("train.weight_rp"), real("train.weight_ae")};
  t.validate();
  return t;
}

PipelineConfig RunConfig::pipeline_config() const {
  PipelineConfig p;
  p.qp_threshold = real("pipeline.qp_threshold");
  p.rp_threshold = real("pipeline.rp_threshold");
  if (const auto cap = count("pipeline.max_answer_tokens"); cap > 0) p.max_answer_tokens = cap;
  p.qp_checkpoint = get("pipeline.qp_checkpoint");
  p.rpae_checkpoint = get("pipeline.rpae_checkpoint");
  p.vocab = get("pipeline.vocab");
  p.validate();
  return p;
}

SplitFractions RunConfig::split_fractions() const {
  return {real("split.train"), real("split.val"), real("split.test")};
}

ClassProportions RunConfig::synth_proportions() const {
  return {real("synth.p_yy"), real("synth.p_yn"), real("synth.p_ny"), real("synth.p_nn")};
}

std::size_t RunConfig::synth_count() const { return count("synth.n"); }
std::size_t RunConfig::vocab_max_size() const { return count("vocab.max_size"); }
std::size_t RunConfig::span_cap() const { return count("ingest.span_cap"); }

}  // namespace qaplaus
