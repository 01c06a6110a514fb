#include "fedsim/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fedsim/error.hpp"
#include "json.hpp"

namespace fedsim {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string to_string(StopMetric m) { return m == StopMetric::kValAcc ? "val_acc" : "val_loss"; }

StopMetric stop_metric_from_string(const std::string& name) {
  if (name == "val_acc") return StopMetric::kValAcc;
  if (name == "val_loss") return StopMetric::kValLoss;
  throw ConfigError("unknown metric '" + name + "' (expected val_acc or val_loss)");
}

Architecture RunConfig::architecture(std::size_t input_dim, std::size_t classes) const {
  Architecture arch;
  arch.layer_dims.push_back(input_dim);
  arch.layer_dims.insert(arch.layer_dims.end(), model.hidden.begin(), model.hidden.end());
  arch.layer_dims.push_back(classes);
  arch.activation = model.activation;
  return arch;
}

namespace {

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError(field(key) + " is required");
    return convert<T>(key);
  }

  std::optional<Fields> object(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return std::nullopt;
    return Fields(obj_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + field(key));
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
          throw ConfigError(field(key) + " must be a non-negative integer");
        }
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(field(key) + " must be a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key) + " must be true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key) + " must be a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

SgdConfig read_sgd(Fields& f, SgdConfig d) {
  d.learning_rate = f.get("learning_rate", d.learning_rate);
  d.momentum = f.get("momentum", d.momentum);
  return d;
}

AdamConfig read_adam(Fields& f, AdamConfig d) {
  d.learning_rate = f.get("learning_rate", d.learning_rate);
  d.beta1 = f.get("beta1", d.beta1);
  d.beta2 = f.get("beta2", d.beta2);
  d.epsilon = f.get("epsilon", d.epsilon);
  return d;
}

DataSection read_data(Fields& f) {
  DataSection d;
  if (auto src = f.object("source")) {
    const auto kind = src->get<std::string>("kind", "synthetic");
    if (kind == "synthetic") {
      SyntheticSpec s;
      s.classes = src->get("classes", s.classes);
      s.dims = src->get("dims", s.dims);
      s.examples = src->get("examples", s.examples);
      s.cluster_spread = src->get("cluster_spread", s.cluster_spread);
      s.center_scale = src->get("center_scale", s.center_scale);
      s.speakers = src->get("speakers", s.speakers);
      d.source = SyntheticSource{s};
    } else if (kind == "csv") {
      d.source = CsvSource{src->require<std::string>("path")};
    } else if (kind == "idx") {
      d.source = IdxSource{src->require<std::string>("images"), src->require<std::string>("labels")};
    } else {
      throw ConfigError(src->field("kind") + ": unknown source kind '" + kind + "'");
    }
    src->finish();
  }
  d.validation_fraction = f.get("validation_fraction", d.validation_fraction);
  d.rehearsal_fraction = f.get("rehearsal_fraction", d.rehearsal_fraction);
  if (auto p = f.object("partition")) {
    const auto kind = p->get<std::string>("kind", "iid");
    if (kind == "iid") {
      d.partition.kind = PartitionSpec::Kind::kIid;
    } else if (kind == "label_skew") {
      d.partition.kind = PartitionSpec::Kind::kLabelSkew;
    } else if (kind == "grouped") {
      d.partition.kind = PartitionSpec::Kind::kGrouped;
    } else if (kind == "grouped_iid") {
      d.partition.kind = PartitionSpec::Kind::kGroupedIid;
    } else {
      throw ConfigError(p->field("kind") + ": unknown partition kind '" + kind + "'");
    }
    if (d.partition.kind != PartitionSpec::Kind::kGrouped) {
      d.partition.clients = p->require<std::size_t>("clients");
    }
    if (d.partition.kind == PartitionSpec::Kind::kLabelSkew) {
      d.partition.concentration = p->get("concentration", d.partition.concentration);
    }
    p->finish();
  }
  if (auto n = f.object("noise")) {
    d.noise.noisy_client_fraction = n->get("noisy_client_fraction", 0.0);
    d.noise.label_flip_prob = n->get("label_flip_prob", 0.0);
    n->finish();
  }
  return d;
}

FederationConfig read_federation(Fields& f) {
  FederationConfig c;
  c.clients_per_round = f.require<std::size_t>("clients_per_round");
  c.max_rounds = f.get("max_rounds", c.max_rounds);
  c.client_steps = f.get("client_steps", c.client_steps);
  c.client_batch_size = f.get("client_batch_size", c.client_batch_size);
  if (auto o = f.object("client_optimizer")) {
    c.client_optimizer = read_sgd(*o, c.client_optimizer);
    o->finish();
  }
  if (auto o = f.object("server_optimizer")) {
    const auto kind = o->get<std::string>("kind", "adam");
    if (kind == "adam") {
      c.server_optimizer = read_adam(*o, AdamConfig{});
    } else if (kind == "sgd") {
      c.server_optimizer = read_sgd(*o, SgdConfig{1.0, 0.0});
    } else {
      throw ConfigError(o->field("kind") + ": unknown server optimizer '" + kind + "'");
    }
    o->finish();
  }
  if (auto o = f.object("rehearsal")) {
    RehearsalConfig r;
    r.steps = o->get("steps", r.steps);
    r.batch_size = o->get("batch_size", r.batch_size);
    r.learning_rate = o->get("learning_rate", r.learning_rate);
    o->finish();
    c.rehearsal = r;
  }
  c.size_weighting = f.get("size_weighting", c.size_weighting);
  c.workers = f.get("workers", c.workers);
  c.seed = f.get("seed", c.seed);
  return c;
}

StrategyConfig read_strategy(Fields& f) {
  const auto kind = f.get<std::string>("kind", "uniform");
  if (kind == "uniform") return UniformStrategy{};
  if (kind == "softmax") return SoftmaxStrategy{f.get("beta", 1.0)};
  if (kind == "rl") {
    RlStrategy rl;
    rl.beta = f.get("beta", rl.beta);
    rl.policy.threshold = f.get("threshold", rl.policy.threshold);
    rl.policy.reward = f.get("reward", rl.policy.reward);
    rl.agent.optimizer.learning_rate = f.get("learning_rate", rl.agent.optimizer.learning_rate);
    rl.agent.exploration = f.get("exploration", rl.agent.exploration);
    rl.agent.replay_capacity = f.get("replay_capacity", rl.agent.replay_capacity);
    rl.agent.minibatch = f.get("minibatch", rl.agent.minibatch);
    return rl;
  }
  throw ConfigError(f.field("kind") + ": unknown strategy '" + kind + "'");
}

void validate_run(const RunConfig& c) {
  c.data.partition.validate();
  c.data.noise.validate();
  if (const auto* s = std::get_if<SyntheticSource>(&c.data.source)) s->spec.validate();
  if (!(c.data.validation_fraction > 0.0) || !(c.data.rehearsal_fraction >= 0.0) ||
      c.data.validation_fraction + c.data.rehearsal_fraction >= 1.0) {
    throw ConfigError(
        "data.validation_fraction must be positive, data.rehearsal_fraction non-negative, and "
        "their sum below 1");
  }
  for (auto h : c.model.hidden) {
    if (h == 0) throw ConfigError("model.hidden widths must be positive");
  }
  const auto& fed = c.federation;
  if (c.data.partition.kind != PartitionSpec::Kind::kGrouped &&
      fed.clients_per_round > c.data.partition.clients) {
    throw ConfigError("federation.clients_per_round (" + std::to_string(fed.clients_per_round) +
                      ") exceeds data.partition.clients (" +
                      std::to_string(c.data.partition.clients) + ")");
  }
  // K is known only after loading for grouped partitions.
  fed.validate(c.data.partition.kind == PartitionSpec::Kind::kGrouped ? fed.clients_per_round
                                                                      : c.data.partition.clients);
  if (fed.rehearsal && fed.rehearsal->steps > 0 && c.data.rehearsal_fraction <= 0.0) {
    throw ConfigError("federation.rehearsal is enabled but data.rehearsal_fraction is 0");
  }
  validate_strategy(c.strategy);
  if (c.eval.target && !std::isfinite(*c.eval.target)) {
    throw ConfigError("eval.target must be finite");
  }
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config syntax error: ") + e.what());
  }
  RunConfig c;
  Fields root(doc, "");
  auto data = root.object("data");
  if (!data) throw ConfigError("data is required");
  c.data = read_data(*data);
  data->finish();
  if (auto m = root.object("model")) {
    c.model.hidden = m->get("hidden", c.model.hidden);
    c.model.activation = activation_from_string(m->get<std::string>("activation", "relu"));
    m->finish();
  }
  auto fed = root.object("federation");
  if (!fed) throw ConfigError("federation is required");
  c.federation = read_federation(*fed);
  fed->finish();
  if (auto s = root.object("strategy")) {
    c.strategy = read_strategy(*s);
    s->finish();
  }
  if (auto e = root.object("eval")) {
    c.eval.metric = stop_metric_from_string(e->get<std::string>("metric", "val_acc"));
    const double missing = std::numeric_limits<double>::quiet_NaN();
    if (const double t = e->get("target", missing); !std::isnan(t)) c.eval.target = t;
    c.eval.early_stop = e->get("early_stop", c.eval.early_stop);
    e->finish();
  }
  c.output_dir = root.get("output_dir", c.output_dir);
  c.deterministic = root.get("deterministic", c.deterministic);
  c.label = root.get("label", strategy_name(c.strategy));
  root.finish();

  c.federation.deterministic = c.deterministic;
  if (c.eval.target && c.eval.early_stop) {
    c.federation.early_stop = EarlyStop{c.eval.metric, *c.eval.target};
  }
  validate_run(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  ojson data;
  std::visit(
      [&](const auto& src) {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          data["source"] = {{"kind", "synthetic"},
                            {"classes", src.spec.classes},
                            {"dims", src.spec.dims},
                            {"examples", src.spec.examples},
                            {"cluster_spread", src.spec.cluster_spread},
                            {"center_scale", src.spec.center_scale},
                            {"speakers", src.spec.speakers}};
        } else if constexpr (std::is_same_v<T, CsvSource>) {
          data["source"] = {{"kind", "csv"}, {"path", src.path}};
        } else {
          data["source"] = {{"kind", "idx"}, {"images", src.images}, {"labels", src.labels}};
        }
      },
      c.data.source);
  data["validation_fraction"] = c.data.validation_fraction;
  data["rehearsal_fraction"] = c.data.rehearsal_fraction;
  ojson part;
  switch (c.data.partition.kind) {
    case PartitionSpec::Kind::kIid:
      part = {{"kind", "iid"}, {"clients", c.data.partition.clients}};
      break;
    case PartitionSpec::Kind::kLabelSkew:
      part = {{"kind", "label_skew"},
              {"clients", c.data.partition.clients},
              {"concentration", c.data.partition.concentration}};
      break;
    case PartitionSpec::Kind::kGrouped:
      part = {{"kind", "grouped"}};
      break;
    case PartitionSpec::Kind::kGroupedIid:
      part = {{"kind", "grouped_iid"}, {"clients", c.data.partition.clients}};
      break;
  }
  data["partition"] = part;
  data["noise"] = {{"noisy_client_fraction", c.data.noise.noisy_client_fraction},
                   {"label_flip_prob", c.data.noise.label_flip_prob}};

  const auto& f = c.federation;
  ojson fed;
  fed["clients_per_round"] = f.clients_per_round;
  fed["max_rounds"] = f.max_rounds;
  fed["client_steps"] = f.client_steps;
  fed["client_batch_size"] = f.client_batch_size;
  fed["client_optimizer"] = {{"learning_rate", f.client_optimizer.learning_rate},
                             {"momentum", f.client_optimizer.momentum}};
  if (const auto* sgd = std::get_if<SgdConfig>(&f.server_optimizer)) {
    fed["server_optimizer"] = {
        {"kind", "sgd"}, {"learning_rate", sgd->learning_rate}, {"momentum", sgd->momentum}};
  } else {
    const auto& a = std::get<AdamConfig>(f.server_optimizer);
    fed["server_optimizer"] = {{"kind", "adam"},       {"learning_rate", a.learning_rate},
                               {"beta1", a.beta1},     {"beta2", a.beta2},
                               {"epsilon", a.epsilon}};
  }
  if (f.rehearsal) {
    fed["rehearsal"] = {{"steps", f.rehearsal->steps},
                        {"batch_size", f.rehearsal->batch_size},
                        {"learning_rate", f.rehearsal->learning_rate}};
  } else {
    fed["rehearsal"] = nullptr;
  }
  fed["size_weighting"] = f.size_weighting;
  fed["workers"] = f.workers;
  fed["seed"] = f.seed;

  ojson strat;
  strat["kind"] = strategy_name(c.strategy);
  if (const auto* sm = std::get_if<SoftmaxStrategy>(&c.strategy)) {
    strat["beta"] = sm->beta;
  } else if (const auto* rl = std::get_if<RlStrategy>(&c.strategy)) {
    strat["beta"] = rl->beta;
    strat["threshold"] = rl->policy.threshold;
    strat["reward"] = rl->policy.reward;
    strat["learning_rate"] = rl->agent.optimizer.learning_rate;
    strat["exploration"] = rl->agent.exploration;
    strat["replay_capacity"] = rl->agent.replay_capacity;
    strat["minibatch"] = rl->agent.minibatch;
  }

  ojson eval;
  eval["metric"] = to_string(c.eval.metric);
  eval["target"] = c.eval.target ? ojson(*c.eval.target) : ojson(nullptr);
  eval["early_stop"] = c.eval.early_stop;

  ojson root;
  root["label"] = c.label;
  root["data"] = data;
  root["model"] = {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  root["federation"] = fed;
  root["strategy"] = strat;
  root["eval"] = eval;
  root["output_dir"] = c.output_dir;
  root["deterministic"] = c.deterministic;
  return root.dump(2);
}

}  // namespace fedsim
