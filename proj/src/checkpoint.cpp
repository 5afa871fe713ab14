#include "hybridlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace hybridlab {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::string get_bytes(std::istream& is, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 32)) throw std::runtime_error("checkpoint: implausible length field");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& os, HybridModel& model, const nlohmann::json& meta) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  nlohmann::json routers = nlohmann::json::object();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    if (l.moe) routers[std::to_string(i)] = {{"expert_bias", l.router.expert_bias}, {"load_counts", l.router.load_counts}};
  }
  const std::string header = nlohmann::json{{"model", to_json(model.cfg)},
                                            {"layout", to_json(model.layout)},
                                            {"routers", routers},
                                            {"meta", meta}}
                                 .dump();
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto tensors = model.named();
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (std::int64_t d : t->shape()) put<std::int64_t>(os, d);
    const auto data = t->data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

void save_checkpoint(const std::string& path, HybridModel& model, const nlohmann::json& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(f, model, meta);
}

LoadedCheckpoint load_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto header = nlohmann::json::parse(get_bytes(is, get<std::uint64_t>(is)));
  LoadedCheckpoint out{HybridModel::build(model_config_from_json(header.at("model")), layout_from_json(header.at("layout")), 0),
                       header.value("meta", nlohmann::json::object())};
  const nlohmann::json routers = header.value("routers", nlohmann::json::object());
  for (const auto& [idx, r] : routers.items()) {
    const std::size_t i = std::stoul(idx);
    if (i >= out.model.layers.size() || !out.model.layers[i].moe) throw std::runtime_error("checkpoint: router state for a non-MoE layer");
    RouterState& st = out.model.layers[i].router;
    r.at("expert_bias").get_to(st.expert_bias);
    r.at("load_counts").get_to(st.load_counts);
    if (st.expert_bias.size() != st.load_counts.size() ||
        static_cast<std::int64_t>(st.expert_bias.size()) != out.model.cfg.moe.n_experts) {
      throw std::runtime_error("checkpoint: router state has the wrong expert count");
    }
  }
  std::map<std::string, Tensor*> slots;
  for (const auto& [name, t] : out.model.named()) slots.emplace(name, t);
  const auto count = get<std::uint64_t>(is);
  if (count != slots.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(slots.size()) + " tensors, file has " +
                             std::to_string(count));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_bytes(is, get<std::uint32_t>(is));
    auto it = slots.find(name);
    if (it == slots.end()) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    const auto rank = get<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::int64_t>(is));
    if (shape != it->second->shape()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    auto dst = it->second->mutable_data();
    if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated file");
    }
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  return load_checkpoint(f);
}

}  // namespace hybridlab
