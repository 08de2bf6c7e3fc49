#include "qaplaus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "qaplaus/errors.hpp"

namespace qaplaus {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'P', 'C', 'K', 'P', 'T', '1'};

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["hidden_dim"] = c.hidden_dim;
  j["ffn_dim"] = c.ffn_dim;
  j["vocab_size"] = c.vocab_size;
  j["max_len"] = c.max_len;
  j["head_dropout"] = c.head_dropout;
  j["active_tasks"] = c.active_tasks.to_string();
  return j;
}

ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.head_dropout = j.at("head_dropout").get<double>();
  c.active_tasks = TaskSet::parse(j.at("active_tasks").get<std::string>());
  c.validate();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json header;
  header["format"] = "qaplaus-checkpoint";
  header["version"] = 1;
  header["config"] = config_to_json(ck.config);
  // Hex keeps the full 64 bits exact through JSON.
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(ck.vocab_fingerprint));
  header["vocab_fingerprint"] = fp;
  auto tensors = ck.params.tensors();
  nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
  for (const auto& t : tensors) shapes.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  header["tensors"] = std::move(shapes);
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t header_len = header_text.size();
  out.append(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out += header_text;
  for (const auto& t : tensors) out.append(reinterpret_cast<const char*>(t.data), t.size() * sizeof(double));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ValidationError("not a qaplaus checkpoint");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof kMagic, sizeof header_len);
  std::size_t offset = sizeof kMagic + sizeof header_len;
  if (header_len > bytes.size() - offset) throw ValidationError("truncated checkpoint header");

  Checkpoint ck;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> shapes;
  try {
    const auto header = nlohmann::ordered_json::parse(bytes.substr(offset, header_len));
    if (header.at("version").get<int>() != 1) throw ValidationError("unsupported checkpoint version");
    ck.config = config_from_json(header.at("config"));
    ck.vocab_fingerprint = std::stoull(header.at("vocab_fingerprint").get<std::string>(), nullptr, 16);
    for (const auto& t : header.at("tensors"))
      shapes.emplace_back(t.at("name").get<std::string>(), t.at("rows").get<std::size_t>(),
                          t.at("cols").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint header: ") + e.what());
  }
  offset += header_len;

  ck.params = ModelParams::zeros(ck.config);
  auto tensors = ck.params.tensors();
  if (tensors.size() != shapes.size()) throw ValidationError("checkpoint tensor count does not match its config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, rows, cols] = shapes[i];
    if (name != tensors[i].name || rows != tensors[i].rows || cols != tensors[i].cols)
      throw ValidationError("checkpoint tensor '" + name + "' does not match its config");
    const std::size_t nbytes = tensors[i].size() * sizeof(double);
    if (bytes.size() - offset < nbytes) throw ValidationError("truncated checkpoint tensor '" + name + "'");
    std::memcpy(tensors[i].data, bytes.data() + offset, nbytes);
    offset += nbytes;
  }
  if (offset != bytes.size()) throw ValidationError("trailing bytes after checkpoint tensors");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace qaplaus
