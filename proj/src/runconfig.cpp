#include "hybridlab/runconfig.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <sstream>
#include <stdexcept>

#include "hybridlab/layout.hpp"

namespace hybridlab {

const std::map<std::string, std::string>& run_config_keys() {
  static const std::map<std::string, std::string> keys{
      {"model.preset", "named preset"},
      {"model.vocab", "vocabulary size"},
      {"model.d_model", "residual width"},
      {"model.d_ffn", "FFN hidden width"},
      {"model.n_head", "query heads"},
      {"model.n_kv", "key/value heads"},
      {"model.d_head", "attention head width"},
      {"model.d_ssm", "SSM inner width"},
      {"model.d_head_ssm", "SSM head width"},
      {"model.d_state", "SSM state size"},
      {"model.n_conv", "SSM conv width"},
      {"model.chunk", "SSM scan chunk"},
      {"model.window", "sliding window length"},
      {"model.sink", "attention sink tokens"},
      {"model.rope_base", "RoPE base frequency"},
      {"layout.file", "layout file"},
      {"layout.depth", "number of blocks"},
      {"layout.ratio", "special:mamba ratio"},
      {"layout.counts", "explicit special,mamba counts"},
      {"layout.kind", "special block kind"},
      {"layout.pos", "positioning strategy"},
      {"layout.moe", "MoE FFN in every block"},
      {"fusion.norm", "branch norm (none|group)"},
      {"fusion.scalar", "branch scalar (none|scale|gate|diff_lambda)"},
      {"fusion.fusion", "fusion op (add|diff|concat)"},
      {"fusion.out_proj", "output projections (1|2)"},
      {"fusion.dim_ratio", "attention:ssm width share"},
      {"train.task", "copy|needle|ids|bytes"},
      {"train.data", "dataset file for ids/bytes tasks"},
      {"train.seq_len", "training sequence length"},
      {"train.steps", "optimizer steps"},
      {"train.batch", "sequences per step"},
      {"train.lr", "peak learning rate"},
      {"train.warmup", "warmup fraction"},
      {"train.cooldown", "cooldown fraction"},
      {"train.clip", "global gradient norm clip"},
      {"train.weight_decay", "decoupled weight decay"},
      {"train.seed", "seed"},
      {"train.stop_accuracy", "early-stop batch accuracy (0 disables)"},
  };
  return keys;
}

namespace {

RunConfig from_tree(const boost::property_tree::ptree& tree) {
  RunConfig rc;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::runtime_error("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) rc.set(section + "." + key, value.get_value<std::string>());
  }
  return rc;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const long long n = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  return n;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

RunConfig RunConfig::from_ini(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error("config: " + std::string(e.what()));
  }
  return from_tree(tree);
}

RunConfig RunConfig::from_ini_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error("config: " + std::string(e.what()));
  }
  return from_tree(tree);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!run_config_keys().count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  values_[key] = value;
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

ModelConfig RunConfig::model(const std::string& fallback_preset) const {
  ModelConfig c = preset(get("model.preset").value_or(fallback_preset)).model;
  const std::pair<const char*, std::int64_t ModelConfig::*> ints[] = {
      {"model.vocab", &ModelConfig::vocab},         {"model.d_model", &ModelConfig::d_model},
      {"model.d_ffn", &ModelConfig::d_ffn},         {"model.n_head", &ModelConfig::n_head},
      {"model.n_kv", &ModelConfig::n_kv},           {"model.d_head", &ModelConfig::d_head},
      {"model.d_ssm", &ModelConfig::d_ssm},         {"model.d_head_ssm", &ModelConfig::d_head_ssm},
      {"model.d_state", &ModelConfig::d_state},     {"model.n_conv", &ModelConfig::n_conv},
      {"model.chunk", &ModelConfig::chunk},         {"model.window", &ModelConfig::window},
      {"model.sink", &ModelConfig::sink}};
  for (const auto& [key, field] : ints) {
    if (auto v = get(key)) c.*field = to_int(key, *v);
  }
  if (auto v = get("model.rope_base")) c.rope_base = to_double("model.rope_base", *v);
  if (auto v = get("fusion.norm")) c.fusion.norm = parse_norm_kind(*v);
  if (auto v = get("fusion.scalar")) c.fusion.scalar = parse_scalar_kind(*v);
  if (auto v = get("fusion.fusion")) c.fusion.fusion = parse_fusion_op(*v);
  if (auto v = get("fusion.out_proj")) c.fusion.out_proj_count = static_cast<int>(to_int("fusion.out_proj", *v));
  if (auto v = get("fusion.dim_ratio")) {
    const auto r = parse_ratio(*v);
    c.fusion.dim_ratio = {static_cast<int>(r.first), static_cast<int>(r.second)};
  }
  c.validate();
  return c;
}

LayoutSpec RunConfig::layout(const std::string& fallback_preset) const {
  LayoutSpec l;
  const BlockKind kind = parse_block_kind(get("layout.kind").value_or("attn"));
  const Positioning pos = parse_positioning(get("layout.pos").value_or("scatter"));
  if (auto f = get("layout.file")) {
    l = load_layout(*f);
  } else if (auto counts = get("layout.counts")) {
    const auto comma = counts->find(',');
    if (comma == std::string::npos) throw std::invalid_argument("config: layout.counts expects 'special,mamba'");
    l = plan_layout_counts(to_int("layout.counts", counts->substr(0, comma)),
                           to_int("layout.counts", counts->substr(comma + 1)), kind, pos);
  } else if (auto ratio = get("layout.ratio")) {
    const auto d = get("layout.depth");
    const std::int64_t depth = d ? to_int("layout.depth", *d)
                                 : preset(get("model.preset").value_or(fallback_preset)).layout.depth();
    l = plan_layout(depth, parse_ratio(*ratio), kind, pos);
  } else {
    l = preset(get("model.preset").value_or(fallback_preset)).layout;
  }
  if (auto m = get("layout.moe"); m && to_bool("layout.moe", *m)) {
    for (auto& b : l.blocks) b.moe = true;
  }
  return l;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  if (auto v = get("train.steps")) t.steps = to_int("train.steps", *v);
  if (auto v = get("train.batch")) t.batch = to_int("train.batch", *v);
  if (auto v = get("train.lr")) t.peak_lr = to_double("train.lr", *v);
  if (auto v = get("train.warmup")) t.warmup_frac = to_double("train.warmup", *v);
  if (auto v = get("train.cooldown")) t.cooldown_frac = to_double("train.cooldown", *v);
  if (auto v = get("train.clip")) t.clip_norm = to_double("train.clip", *v);
  if (auto v = get("train.weight_decay")) t.weight_decay = to_double("train.weight_decay", *v);
  if (auto v = get("train.seed")) t.seed = static_cast<std::uint64_t>(to_int("train.seed", *v));
  if (auto v = get("train.stop_accuracy")) t.stop_accuracy = to_double("train.stop_accuracy", *v);
  t.validate();
  return t;
}

nlohmann::json RunConfig::resolved(const std::string& fallback_preset) const {
  nlohmann::json settings = nlohmann::json::object();
  for (const auto& [k, v] : values_) settings[k] = v;
  return nlohmann::json{{"settings", settings},
                        {"model", to_json(model(fallback_preset))},
                        {"layout", to_json(layout(fallback_preset))}};
}

}  // namespace hybridlab
