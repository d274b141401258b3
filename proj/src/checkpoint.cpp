#include "spanqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "spanqa/errors.hpp"

namespace spanqa {

using nlohmann::json;
using Kind = CheckpointError::Kind;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
  }
  return v;
}

void put_u64(std::string& out, std::uint64_t v) {
  v = to_le(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, 8);
  return to_le(v);
}

struct PayloadWriter {
  std::string bytes;

  std::uint64_t add(const Tensor& t) {
    const std::uint64_t offset = bytes.size();
    for (double d : t.values()) put_u64(bytes, std::bit_cast<std::uint64_t>(d));
    return offset;
  }
};

json config_json(const ModelConfig& c) {
  return {{"hidden_size", c.hidden_size}, {"dropout_rate", c.dropout_rate}, {"embedding_dim", c.embedding_dim},
          {"encoder_layers", c.encoder_layers}, {"context_cap", c.context_cap}, {"seed", c.seed}};
}

json training_json(const TrainSettings& t) {
  return {{"lr", t.adam.lr},           {"beta1", t.adam.beta1},         {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},         {"clip_norm", t.adam.clip_norm}, {"batch_size", t.batch_size},
          {"max_answer_len", t.max_answer_len}, {"eval_every", t.eval_every}};
}

template <typename T>
T get(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw CheckpointError(Kind::Schema, std::string("checkpoint metadata missing '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Schema, std::string("checkpoint field '") + key + "': " + e.what());
  }
}

Shape get_shape(const json& entry) {
  const auto shape = get<std::vector<std::size_t>>(entry, "shape");
  if (shape.empty()) throw CheckpointError(Kind::Schema, "checkpoint tensor with empty shape");
  return shape;
}

Tensor read_tensor(std::string_view payload, std::uint64_t offset, const Shape& shape, const std::string& name) {
  const std::size_t n = numel(shape);
  if (offset > payload.size() || payload.size() - offset < n * 8) {
    throw CheckpointError(Kind::Truncated, "checkpoint payload truncated inside tensor '" + name + "'");
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(get_u64(payload.data() + offset + 8 * i));
  return Tensor(shape, std::move(values));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  PayloadWriter payload;
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.add(t)}});
  }
  json moments = json::array();
  for (const auto& [name, m] : ckpt.optimizer.m) {
    const Tensor& v = ckpt.optimizer.v.at(name);
    const auto m_off = payload.add(m);
    const auto v_off = payload.add(v);
    moments.push_back({{"name", name}, {"shape", m.shape()}, {"m_offset", m_off}, {"v_offset", v_off}});
  }
  json meta = {
      {"format_version", kCheckpointVersion},
      {"config", config_json(ckpt.config)},
      {"training", training_json(ckpt.training)},
      {"iteration", ckpt.iteration},
      {"best_dev_f1", ckpt.best_dev_f1},
      {"glove_path", ckpt.glove_path},
      {"rng", {{"algorithm", "splitmix64-counter"}, {"seed", ckpt.rng.seed}, {"counter", ckpt.rng.counter}}},
      {"tensors", tensors},
      {"optimizer", {{"step", ckpt.optimizer.step}, {"moments", moments}}},
      {"payload_bytes", payload.bytes.size()},
  };
  const std::string meta_text = meta.dump();
  std::string out(kCheckpointMagic);
  put_u64(out, meta_text.size());
  out += meta_text;
  out += payload.bytes;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(Kind::Magic, "not a checkpoint file (bad magic)");
  }
  bytes.remove_prefix(kCheckpointMagic.size());
  if (bytes.size() < 8) throw CheckpointError(Kind::Truncated, "checkpoint truncated before metadata length");
  const std::uint64_t meta_len = get_u64(bytes.data());
  bytes.remove_prefix(8);
  if (bytes.size() < meta_len) throw CheckpointError(Kind::Truncated, "checkpoint truncated inside metadata");
  json meta;
  try {
    meta = json::parse(bytes.substr(0, meta_len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(Kind::Schema, std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(meta_len);

  const int version = get<int>(meta, "format_version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Version, "checkpoint format version " + std::to_string(version) +
                                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (payload.size() < get<std::uint64_t>(meta, "payload_bytes")) {
    throw CheckpointError(Kind::Truncated, "checkpoint payload truncated");
  }

  Checkpoint ck;
  const json& c = meta.at("config");
  ck.config.hidden_size = get<std::size_t>(c, "hidden_size");
  ck.config.dropout_rate = get<double>(c, "dropout_rate");
  ck.config.embedding_dim = get<std::size_t>(c, "embedding_dim");
  ck.config.encoder_layers = get<std::size_t>(c, "encoder_layers");
  ck.config.context_cap = get<std::size_t>(c, "context_cap");
  ck.config.seed = get<std::uint64_t>(c, "seed");
  const json& t = meta.at("training");
  ck.training.adam.lr = get<double>(t, "lr");
  ck.training.adam.beta1 = get<double>(t, "beta1");
  ck.training.adam.beta2 = get<double>(t, "beta2");
  ck.training.adam.eps = get<double>(t, "eps");
  ck.training.adam.clip_norm = get<double>(t, "clip_norm");
  ck.training.batch_size = get<std::size_t>(t, "batch_size");
  ck.training.max_answer_len = get<std::size_t>(t, "max_answer_len");
  ck.training.eval_every = get<std::size_t>(t, "eval_every");
  ck.iteration = get<std::uint64_t>(meta, "iteration");
  ck.best_dev_f1 = get<double>(meta, "best_dev_f1");
  ck.glove_path = get<std::string>(meta, "glove_path");
  const json& rng = meta.at("rng");
  ck.rng.seed = get<std::uint64_t>(rng, "seed");
  ck.rng.counter = get<std::uint64_t>(rng, "counter");

  for (const json& entry : meta.at("tensors")) {
    const auto name = get<std::string>(entry, "name");
    ck.params.emplace(name, read_tensor(payload, get<std::uint64_t>(entry, "offset"), get_shape(entry), name));
  }
  const json& opt = meta.at("optimizer");
  ck.optimizer.step = get<std::uint64_t>(opt, "step");
  for (const json& entry : opt.at("moments")) {
    const auto name = get<std::string>(entry, "name");
    const Shape shape = get_shape(entry);
    ck.optimizer.m.emplace(name, read_tensor(payload, get<std::uint64_t>(entry, "m_offset"), shape, name));
    ck.optimizer.v.emplace(name, read_tensor(payload, get<std::uint64_t>(entry, "v_offset"), shape, name));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::Io, tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError(Kind::Io, tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(Kind::Io, path.string() + ": rename failed: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, path.string() + ": cannot open checkpoint");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace spanqa
