#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "retseg/errors.hpp"
#include "retseg/saunet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::model {
namespace {

constexpr char kMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, path);
}

json read_sidecar(const fs::path& checkpoint) {
  std::ifstream in(sidecar_path(checkpoint));
  if (!in) throw CheckpointError("missing checkpoint sidecar " + sidecar_path(checkpoint).string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint sidecar: " + std::string(e.what()));
  }
}

void read_tensors(SAUNet& net, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint file: " + path.string());

  std::map<std::string, Tensor*> slots;
  for (Parameter* p : net.parameters()) slots[p->name] = &p->value;
  for (const Buffer& b : net.buffers()) slots[b.name] = b.value;

  const auto count = get<std::uint32_t>(in);
  if (count != slots.size()) throw CheckpointError("checkpoint tensor count does not match the network");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    Tensor::Shape shape;
    for (int& d : shape) d = get<std::int32_t>(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("checkpoint has unknown tensor '" + name + "'");
    if (it->second->shape() != shape) throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    in.read(reinterpret_cast<char*>(it->second->data()),
            static_cast<std::streamsize>(it->second->size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint " + path.string());
  }
}

CheckpointMeta meta_from(const json& j) {
  CheckpointMeta meta;
  meta.epoch = j.value("epoch", 0);
  meta.rng_seed = j.value("rng_seed", std::uint64_t{0});
  meta.metrics = j.value("metrics", json::object());
  return meta;
}

}  // namespace

fs::path sidecar_path(const fs::path& checkpoint) { return checkpoint.string() + ".json"; }

void save_checkpoint(const SAUNet& net, const fs::path& path, const CheckpointMeta& meta) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 8);
  auto params = net.parameters();
  auto buffers = const_cast<SAUNet&>(net).buffers();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  auto write_tensor = [&](const std::string& name, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  };
  for (const Parameter* p : params) write_tensor(p->name, p->value);
  for (const Buffer& b : buffers) write_tensor(b.name, *b.value);
  write_atomic(path, out.str());

  const json sidecar{{"config", to_json(net.config())},
                     {"epoch", meta.epoch},
                     {"rng_seed", meta.rng_seed},
                     {"metrics", meta.metrics},
                     {"fingerprint", net.fingerprint()}};
  write_atomic(sidecar_path(path), sidecar.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const json sidecar = read_sidecar(path);
  SAUNetConfig config;
  try {
    config = saunet_config_from_json(sidecar.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint sidecar has no valid config: " + std::string(e.what()));
  }
  LoadedCheckpoint loaded{SAUNet(config), meta_from(sidecar)};
  read_tensors(loaded.net, path);
  return loaded;
}

CheckpointMeta load_checkpoint_into(SAUNet& net, const fs::path& path) {
  const json sidecar = read_sidecar(path);
  SAUNetConfig stored;
  try {
    stored = saunet_config_from_json(sidecar.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint sidecar has no valid config: " + std::string(e.what()));
  }
  if (!(stored == net.config())) {
    throw CheckpointError("checkpoint config " + to_json(stored).dump() + " is incompatible with network config " +
                          to_json(net.config()).dump());
  }
  read_tensors(net, path);
  return meta_from(sidecar);
}

}  // namespace retseg::model
