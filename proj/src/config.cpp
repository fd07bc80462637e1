#include "latnas/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace latnas {

namespace {

using nlohmann::json;

[[noreturn]] void bad_field(const std::string& field, const json& value, const std::string& why) {
  throw ConfigError("config field '" + field + "' = " + value.dump() + ": " + why);
}

void check_known_keys(const json& obj, const std::set<std::string>& known,
                      const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown field '" + (scope.empty() ? "" : scope + ".") +
                        it.key() + "'");
    }
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(key, obj.at(key), "wrong type");
  }
}

}  // namespace

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return from_json_text(os.str(), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + origin + "': " + e.what());
  }
  check_known_keys(j, {"corpus", "out_dir", "seed", "model_dim", "backbone", "search_space",
                       "batch_size", "seq_len", "train_ratio", "valid_ratio", "target_ratio",
                       "phase1", "phase2", "profile", "measure_repetitions", "sweep_targets"},
                   "");

  RunConfig c;
  c.corpus_path = get_or<std::string>(j, "corpus", "");
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.model_dim = get_or<int>(j, "model_dim", c.model_dim);
  c.backbone_keys = get_or<std::vector<std::string>>(j, "backbone", {});
  c.search_space_keys = get_or<std::vector<std::string>>(j, "search_space", {});
  c.batch_size = get_or<int>(j, "batch_size", c.batch_size);
  c.seq_len = get_or<int>(j, "seq_len", c.seq_len);
  c.train_ratio = get_or<double>(j, "train_ratio", c.train_ratio);
  c.valid_ratio = get_or<double>(j, "valid_ratio", c.valid_ratio);
  c.target_ratio = get_or<double>(j, "target_ratio", c.target_ratio);
  c.measure_reps = get_or<int>(j, "measure_repetitions", c.measure_reps);
  c.sweep_targets = get_or<std::vector<double>>(j, "sweep_targets", c.sweep_targets);

  if (j.contains("phase1")) {
    const json& p = j.at("phase1");
    check_known_keys(p, {"epochs", "arch_data_fraction", "arch_warmup_fraction",
                         "initial_temperature", "temperature_anneal_rate", "net_optimizer",
                         "net_lr", "arch_optimizer", "arch_lr", "grad_clip", "dropout",
                         "moe_dropout"},
                     "phase1");
    c.phase1.epochs = get_or<int>(p, "epochs", c.phase1.epochs);
    c.phase1.arch_data_fraction = get_or<double>(p, "arch_data_fraction", c.phase1.arch_data_fraction);
    c.phase1.arch_warmup_fraction =
        get_or<double>(p, "arch_warmup_fraction", c.phase1.arch_warmup_fraction);
    c.phase1.initial_temperature =
        get_or<double>(p, "initial_temperature", c.phase1.initial_temperature);
    c.phase1.temperature_anneal_rate =
        get_or<double>(p, "temperature_anneal_rate", c.phase1.temperature_anneal_rate);
    c.phase1.net_opt.type = get_or<std::string>(p, "net_optimizer", c.phase1.net_opt.type);
    c.phase1.net_opt.lr = get_or<double>(p, "net_lr", c.phase1.net_opt.lr);
    c.phase1.arch_opt.type = get_or<std::string>(p, "arch_optimizer", c.phase1.arch_opt.type);
    c.phase1.arch_opt.lr = get_or<double>(p, "arch_lr", c.phase1.arch_opt.lr);
    c.phase1.grad_clip = get_or<double>(p, "grad_clip", c.phase1.grad_clip);
    c.phase1.dropout = get_or<double>(p, "dropout", c.phase1.dropout);
    c.phase1.moe_dropout = get_or<double>(p, "moe_dropout", c.phase1.moe_dropout);
  }
  if (j.contains("phase2")) {
    const json& p = j.at("phase2");
    check_known_keys(p, {"epochs", "optimizer", "lr", "balance_coefficient", "dropout",
                         "moe_dropout", "grad_clip"},
                     "phase2");
    c.phase2.epochs = get_or<int>(p, "epochs", c.phase2.epochs);
    c.phase2.opt.type = get_or<std::string>(p, "optimizer", c.phase2.opt.type);
    c.phase2.opt.lr = get_or<double>(p, "lr", c.phase2.opt.lr);
    c.phase2.balance_coefficient =
        get_or<double>(p, "balance_coefficient", c.phase2.balance_coefficient);
    c.phase2.dropout = get_or<double>(p, "dropout", c.phase2.dropout);
    c.phase2.moe_dropout = get_or<double>(p, "moe_dropout", c.phase2.moe_dropout);
    c.phase2.grad_clip = get_or<double>(p, "grad_clip", c.phase2.grad_clip);
  }
  if (j.contains("profile")) {
    const json& p = j.at("profile");
    check_known_keys(p, {"batch", "seq_len", "repetitions", "warmup"}, "profile");
    c.profile_batch = get_or<int>(p, "batch", 0);
    c.profile_seq_len = get_or<int>(p, "seq_len", 0);
    c.profile_reps = get_or<int>(p, "repetitions", c.profile_reps);
    c.profile_warmup = get_or<int>(p, "warmup", c.profile_warmup);
  }
  return c;
}

void RunConfig::validate() const {
  if (corpus_path.empty()) throw ConfigError("config field 'corpus' is required");
  {
    std::ifstream f(corpus_path);
    if (!f) throw ConfigError("config field 'corpus' = \"" + corpus_path + "\": file not readable");
  }
  if (model_dim <= 0) throw ConfigError("config field 'model_dim' must be positive");
  if (backbone_keys.empty()) throw ConfigError("config field 'backbone' must be nonempty");
  if (search_space_keys.empty()) throw ConfigError("config field 'search_space' must be nonempty");
  if (batch_size <= 0) throw ConfigError("config field 'batch_size' must be positive");
  if (seq_len <= 0) throw ConfigError("config field 'seq_len' must be positive");
  if (train_ratio <= 0.0 || valid_ratio < 0.0 || train_ratio + valid_ratio >= 1.0) {
    throw ConfigError("config fields 'train_ratio'/'valid_ratio' must leave room for a test split");
  }
  if (target_ratio <= 0.0 || target_ratio > 1.0) {
    throw ConfigError("config field 'target_ratio' = " + std::to_string(target_ratio) +
                      ": must be in (0, 1]");
  }
  for (double t : sweep_targets) {
    if (t <= 0.0 || t > 1.0) {
      throw ConfigError("config field 'sweep_targets' contains " + std::to_string(t) +
                        ": must be in (0, 1]");
    }
  }
  if (profile_reps < 10) throw ConfigError("config field 'profile.repetitions' must be >= 10");
  if (profile_warmup < 3) throw ConfigError("config field 'profile.warmup' must be >= 3");
  if (measure_reps < 1) throw ConfigError("config field 'measure_repetitions' must be >= 1");

  // every menu/backbone entry must parse and instantiate at this width
  try {
    backbone().validate();
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config field 'backbone': ") + e.what());
  }
  try {
    for (const auto& menu : menus())
      for (const BlockSpec& s : menu) s.validate(model_dim);
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config field 'search_space': ") + e.what());
  }
  Phase1Config p1 = phase1;
  p1.target_ratio = target_ratio;
  p1.validate();
  phase2.validate();
}

BackboneSpec RunConfig::backbone() const {
  BackboneSpec b;
  b.model_dim = model_dim;
  for (const std::string& k : backbone_keys) b.slots.push_back(BlockSpec::parse(k));
  return b;
}

std::vector<std::vector<BlockSpec>> RunConfig::menus() const {
  std::vector<BlockSpec> menu;
  for (const std::string& k : search_space_keys) menu.push_back(BlockSpec::parse(k));
  return std::vector<std::vector<BlockSpec>>(backbone_keys.size(), menu);
}

ProfileContext RunConfig::profile_context() const {
  ProfileContext ctx;
  ctx.batch = profile_batch > 0 ? profile_batch : batch_size;
  ctx.seq_len = profile_seq_len > 0 ? profile_seq_len : seq_len;
  ctx.model_dim = model_dim;
  ctx.precision = "f64";
  return ctx;
}

std::vector<std::string> RunConfig::profile_keys() const {
  std::set<std::string> keys;
  for (const std::string& k : search_space_keys) keys.insert(BlockSpec::parse(k).key());
  for (const std::string& k : backbone_keys) keys.insert(BlockSpec::parse(k).key());
  return {keys.begin(), keys.end()};
}

}  // namespace latnas
