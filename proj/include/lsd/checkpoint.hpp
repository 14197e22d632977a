// Binary model checkpoints.
//
// Layout: 8-byte magic "LSDCKPT\0", u32 format version, u64 header length,
// JSON header, then for every parameter in header order its values followed
// by the Adam first and second moments (when "adam" lists it), all in the
// header's dtype, little-endian. A sidecar <file>.json repeats the header for
// inspection.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "lsd/model.hpp"

namespace lsd {

inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingState {
  long step = 0;
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();  // caller-defined (e.g. training config)
};

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

template <class T>
void write_values(std::ostream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void read_values(std::istream& in, std::vector<T>& v, const std::string& what) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  if (!in) throw CheckpointError("checkpoint truncated while reading " + what);
}

}  // namespace detail

template <class T>
nlohmann::json checkpoint_header(const Model<T>& model, const nn::Adam<T>* adam, const TrainingState& state) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : model.params().entries()) params.push_back({{"name", name}, {"shape", t.shape()}});
  nlohmann::json adam_names = nlohmann::json::array();
  nlohmann::json adam_cfg = nullptr;
  if (adam) {
    for (const auto& [name, t] : model.params().entries())
      if (adam->state().count(name)) adam_names.push_back(name);
    const auto& c = adam->config();
    adam_cfg = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"t", adam->steps()}};
  }
  return {{"dtype", dtype_name<T>()},
          {"hyperparams", to_json(model.hp())},
          {"seed", model.seed()},
          {"step", state.step},
          {"epoch", state.epoch},
          {"extra", state.extra},
          {"params", params},
          {"adam", adam_names},
          {"adam_config", adam_cfg}};
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const nn::Adam<T>* adam = nullptr,
                     const TrainingState& state = {}) {
  const auto header = checkpoint_header(model, adam, state);
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : model.params().entries()) {
      detail::write_values(out, t.data());
      if (adam && adam->state().count(name)) {
        const auto& [m, v] = adam->state().at(name);
        detail::write_values(out, m);
        detail::write_values(out, v);
      }
    }
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
  std::ofstream side(path.string() + ".json");
  side << header.dump(2) << '\n';
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  nn::Adam<T> adam;
  TrainingState state;
  nlohmann::json header;
};

inline nlohmann::json read_checkpoint_header(std::istream& in, const std::string& where) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError(where + ": not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw CheckpointError(where + ": truncated header");
  if (version != kCheckpointVersion) throw CheckpointError(where + ": unsupported version " + std::to_string(version));
  if (len > (1u << 26)) throw CheckpointError(where + ": header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(where + ": truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": bad header: " + e.what());
  }
}

/// Rebuilds the model from the stored hyperparameters and seed, then
/// overwrites every parameter and the optimizer state with the stored values.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const auto header = read_checkpoint_header(in, path.string());
  if (header.at("dtype").get<std::string>() != dtype_name<T>())
    throw CheckpointError(path.string() + ": stored dtype " + header.at("dtype").get<std::string>() + ", expected " +
                          dtype_name<T>());
  const auto hp = hyperparams_from_json(header.at("hyperparams"));
  LoadedCheckpoint<T> ck{Model<T>(hp, header.at("seed").get<std::uint64_t>()), nn::Adam<T>(), {}, header};
  std::set<std::string> with_adam;
  for (const auto& n : header.at("adam")) with_adam.insert(n.get<std::string>());
  const auto& stored = header.at("params");
  auto& entries = ck.model.params().entries();
  if (stored.size() != entries.size()) throw CheckpointError(path.string() + ": parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, t] = entries[i];
    if (stored[i].at("name").get<std::string>() != name || stored[i].at("shape").get<ad::Shape>() != t.shape())
      throw CheckpointError(path.string() + ": parameter " + std::to_string(i) + " does not match the model layout");
    detail::read_values(in, t.mutable_data(), name);
    if (with_adam.count(name)) {
      std::vector<T> m(t.size()), v(t.size());
      detail::read_values(in, m, name + " (adam m)");
      detail::read_values(in, v, name + " (adam v)");
      ck.adam.state()[name] = {std::move(m), std::move(v)};
    }
  }
  if (const auto& c = header.at("adam_config"); !c.is_null()) {
    ck.adam.config() = nn::AdamConfig{c.at("lr").get<double>(), c.at("beta1").get<double>(), c.at("beta2").get<double>(),
                                      c.at("eps").get<double>()};
    ck.adam.set_steps(c.at("t").get<long>());
  }
  ck.state.step = header.at("step").get<long>();
  ck.state.epoch = header.at("epoch").get<int>();
  ck.state.extra = header.value("extra", nlohmann::json::object());
  return ck;
}

}  // namespace lsd
