#include "dpal/config.hpp"

#include <fstream>

#include <json.hpp>

namespace dpal {

namespace {

using nlohmann::json;

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    raise(Err::InvalidConfig, "config key '" + key + "' has the wrong type");
  }
}

void apply_key(CliConfig& cfg, const std::string& key, const json& v) {
  auto& e = cfg.exp;
  auto& t = e.train;
  if (key == "dataset_path") e.dataset_path = get_as<std::string>(v, key);
  else if (key == "n_per_class") e.synthetic.n_per_class = get_as<int>(v, key);
  else if (key == "classes") e.synthetic.classes = get_as<int>(v, key);
  else if (key == "dims") e.synthetic.dims = get_as<int>(v, key);
  else if (key == "class_sep") e.synthetic.class_sep = get_as<double>(v, key);
  else if (key == "anchor_noise") e.synthetic.anchor_noise = get_as<double>(v, key);
  else if (key == "data_seed") e.data_seed = get_as<uint64_t>(v, key);
  else if (key == "split_seed") e.split_seed = get_as<uint64_t>(v, key);
  else if (key == "test_fraction") e.test_fraction = get_as<double>(v, key);
  else if (key == "rounds") e.rounds = get_as<int>(v, key);
  else if (key == "budget_fraction") e.budget_fraction = get_as<double>(v, key);
  else if (key == "strategy") e.strategy = get_as<std::string>(v, key);
  else if (key == "seeds") e.seeds = get_as<std::vector<uint64_t>>(v, key);
  else if (key == "init_per_class") e.init_per_class = get_as<int>(v, key);
  else if (key == "mine_per_class") e.mine_per_class = get_as<int>(v, key);
  else if (key == "temperature") t.temperature = get_as<double>(v, key);
  else if (key == "lambda") t.lambda = get_as<double>(v, key);
  else if (key == "l2_sign") {
    std::string s = get_as<std::string>(v, key);
    if (s == "corrected") t.l2_paper_sign = false;
    else if (s == "paper") t.l2_paper_sign = true;
    else raise(Err::InvalidConfig, "l2_sign must be \"corrected\" or \"paper\"");
  }
  else if (key == "lr") t.lr = get_as<double>(v, key);
  else if (key == "epochs") t.epochs = get_as<int>(v, key);
  else if (key == "batch_labeled") t.batch_labeled = get_as<int>(v, key);
  else if (key == "batch_pseudo") t.batch_pseudo = get_as<int>(v, key);
  else if (key == "ctx_tokens") t.ctx_tokens = get_as<int>(v, key);
  else if (key == "shared_ctx") t.shared_ctx = get_as<bool>(v, key);
  else if (key == "adapter_rank") t.adapter_rank = get_as<int>(v, key);
  else if (key == "adapter_enabled") t.adapter_enabled = get_as<bool>(v, key);
  else if (key == "init_sigma") t.init_sigma = get_as<double>(v, key);
  else if (key == "grad_eps") cfg.grad_eps = get_as<double>(v, key);
  else if (key == "grad_batch") cfg.grad_batch = get_as<int>(v, key);
  else if (key == "grad_seed") cfg.grad_seed = get_as<uint64_t>(v, key);
  else raise(Err::InvalidConfig, "unknown config key: " + key);
}

}  // namespace

CliConfig default_config() { return CliConfig{}; }

CliConfig parse_config(const std::string& json_text) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    raise(Err::InvalidConfig, "config must be a JSON object");
  CliConfig cfg = default_config();
  for (auto it = doc.begin(); it != doc.end(); ++it) apply_key(cfg, it.key(), it.value());
  return cfg;
}

CliConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Err::InvalidConfig, "cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

void apply_override(CliConfig& cfg, const std::string& key_value) {
  auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    raise(Err::InvalidConfig, "override must look like key=value: " + key_value);
  std::string key = key_value.substr(0, eq);
  std::string raw = key_value.substr(eq + 1);
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;  // bare word -> string
  apply_key(cfg, key, v);
}

std::string config_echo(const CliConfig& cfg) {
  const auto& e = cfg.exp;
  const auto& t = e.train;
  json j{{"dataset_path", e.dataset_path},
         {"n_per_class", e.synthetic.n_per_class},
         {"classes", e.synthetic.classes},
         {"dims", e.synthetic.dims},
         {"class_sep", e.synthetic.class_sep},
         {"anchor_noise", e.synthetic.anchor_noise},
         {"data_seed", e.data_seed},
         {"split_seed", e.split_seed},
         {"test_fraction", e.test_fraction},
         {"rounds", e.rounds},
         {"budget_fraction", e.budget_fraction},
         {"strategy", e.strategy},
         {"seeds", e.seeds},
         {"init_per_class", e.init_per_class},
         {"mine_per_class", e.mine_per_class},
         {"temperature", t.temperature},
         {"lambda", t.lambda},
         {"l2_sign", t.l2_paper_sign ? "paper" : "corrected"},
         {"lr", t.lr},
         {"epochs", t.epochs},
         {"batch_labeled", t.batch_labeled},
         {"batch_pseudo", t.batch_pseudo},
         {"ctx_tokens", t.ctx_tokens},
         {"shared_ctx", t.shared_ctx},
         {"adapter_rank", t.adapter_rank},
         {"adapter_enabled", t.adapter_enabled},
         {"init_sigma", t.init_sigma},
         {"grad_eps", cfg.grad_eps},
         {"grad_batch", cfg.grad_batch},
         {"grad_seed", cfg.grad_seed}};
  return j.dump();
}

}  // namespace dpal
