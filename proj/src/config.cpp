#include "sofpi/config.hpp"

#include <set>

namespace sofpi {

namespace {

void merge(KeyValues& into, const KeyValues& part, const std::string& prefix) {
  for (const auto& [k, v] : part.entries()) into.set(prefix + k, v);
}

KeyValues section(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv.entries())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error("config key '" + key + "' must be true or false, got '" + v + "'");
}

}  // namespace

LossConfig RunConfig::effective_loss() const {
  if (loss.alpha.empty() && loss.beta.empty()) return LossConfig::defaults(pipeline.stages);
  const auto n = static_cast<std::size_t>(pipeline.stages);
  if (loss.alpha.size() != n || loss.beta.size() != n)
    throw Error("loss.alpha and loss.beta need " + std::to_string(n) + " entries each");
  return loss;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv.set("command", command);
  kv.set("seed", seed);
  kv.set("out", out.string());
  kv.set("timing", timing ? "true" : "false");

  KeyValues d = data.to_key_values();
  KeyValues dd;
  for (const auto& [k, v] : d.entries())
    if (k != "seed" && k.rfind("sample.", 0) != 0) dd.set(k, v);
  merge(kv, dd, "data.");
  merge(kv, pipeline.to_key_values(), "pipeline.");

  kv.set("train.batch", train.batch);
  kv.set("train.pretrain_epochs", train.pretrain_epochs);
  kv.set("train.joint_epochs", train.joint_epochs);
  kv.set("train.warm_start_stages", train.warm_start_stages ? "true" : "false");
  kv.set("train.lr", train.adam.lr);
  kv.set("train.beta1", train.adam.beta1);
  kv.set("train.beta2", train.adam.beta2);
  kv.set("train.eps", train.adam.eps);

  kv.set("loss.alpha", join_doubles(loss.alpha));
  kv.set("loss.beta", join_doubles(loss.beta));

  kv.set("baseline.registration_weight", baseline.fidelity_weight);
  kv.set("baseline.registration_iters", baseline.max_iters);
  kv.set("baseline.armijo", baseline.armijo);
  kv.set("baseline.max_failures", baseline.max_failures);
  return kv;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  std::set<std::string> known;
  const KeyValues defaults = RunConfig{}.to_key_values();
  for (const auto& [k, v] : defaults.entries()) known.insert(k);
  for (const auto& [k, v] : kv.entries())
    if (!known.count(k)) throw Error("unknown config key '" + k + "'");

  RunConfig c;
  c.command = kv.get("command", c.command);
  c.seed = kv.get_u64("seed", c.seed);
  c.out = kv.get("out", c.out.string());
  c.timing = parse_bool("timing", kv.get("timing", "false"));

  c.data = DatasetManifest::from_key_values(section(kv, "data."));
  c.data.seed = c.seed;
  c.pipeline = PipelineConfig::from_key_values(section(kv, "pipeline."));

  c.train.batch = static_cast<int>(kv.get_int("train.batch", c.train.batch));
  c.train.pretrain_epochs = static_cast<int>(kv.get_int("train.pretrain_epochs", c.train.pretrain_epochs));
  c.train.joint_epochs = static_cast<int>(kv.get_int("train.joint_epochs", c.train.joint_epochs));
  c.train.warm_start_stages =
      parse_bool("train.warm_start_stages", kv.get("train.warm_start_stages", c.train.warm_start_stages ? "true" : "false"));
  c.train.adam.lr = kv.get_double("train.lr", c.train.adam.lr);
  c.train.adam.beta1 = kv.get_double("train.beta1", c.train.adam.beta1);
  c.train.adam.beta2 = kv.get_double("train.beta2", c.train.adam.beta2);
  c.train.adam.eps = kv.get_double("train.eps", c.train.adam.eps);
  if (c.train.batch < 1) throw Error("train.batch must be at least 1");

  if (kv.has("loss.alpha")) c.loss.alpha = kv.get_doubles("loss.alpha");
  if (kv.has("loss.beta")) c.loss.beta = kv.get_doubles("loss.beta");

  c.baseline.fidelity_weight = kv.get_double("baseline.registration_weight", c.baseline.fidelity_weight);
  c.baseline.max_iters = static_cast<int>(kv.get_int("baseline.registration_iters", c.baseline.max_iters));
  c.baseline.armijo = kv.get_double("baseline.armijo", c.baseline.armijo);
  c.baseline.max_failures = static_cast<int>(kv.get_int("baseline.max_failures", c.baseline.max_failures));
  return c;
}

RunConfig RunConfig::read(const std::filesystem::path& path) { return from_key_values(KeyValues::read(path)); }

}  // namespace sofpi
