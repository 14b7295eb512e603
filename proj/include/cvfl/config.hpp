#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cvfl/attacks.hpp"
#include "cvfl/data.hpp"
#include "cvfl/defense.hpp"
#include "cvfl/error.hpp"
#include "cvfl/model.hpp"
#include "cvfl/privacy.hpp"

namespace cvfl {

enum class DataSource { synthetic, idx };
enum class Partition { iid, noniid_shards };
enum class AttackKind { none, label_flip, label_fraction, backdoor };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  SyntheticSpec synthetic;  // num_classes / input_dim also describe idx data
  int test_per_class = 100;
  std::string train_images, train_labels, test_images, test_labels;
  Partition partition = Partition::iid;
  std::optional<std::uint64_t> seed;  // synthetic layout/sample seed; defaults to the experiment seed
};

struct AttackConfig {
  AttackKind kind = AttackKind::none;
  int src = 1, dst = 5;              // label-flip
  double fraction = 0.02;            // label-fraction
  int target = 0;                    // label-fraction, backdoor
  int trigger_class = 0;             // backdoor
  int trigger_subcluster = 0;        // backdoor
  int augment_copies = 0;            // backdoor
  double jitter_scale = 0.0;         // backdoor
  int extra_samples = 0;             // extra source-class samples given to each attacker before poisoning
  std::optional<int> iterations;         // attacker's local training, defaults to train.*
  std::optional<double> learning_rate;
  ScalingSpec scaling;
  int malicious_count = 0;
  std::optional<double> proportion;  // alternative to malicious_count
  std::vector<int> malicious_ids;    // explicit ids override both
  std::optional<int> start_round;
  double start_accuracy = 0.9;
  std::optional<ReportStrategy> report;

  bool enabled() const { return kind != AttackKind::none; }
};

struct DefenseConfig {
  bool enabled = false;
  DelegationMode delegation = DelegationMode::iid;
  int u = 0;  // exactly one of u, d for IID delegation
  int d = 0;
  int e = 3;
  int m = 3;
  double v = 0.5;
  double margin = 0.1;
  int presence_threshold = 1;
  int eval_min_samples = 1;
  AggregationRule aggregation = AggregationRule::penalized_deltas;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int clients = 100;   // N
  int per_round = 50;  // K
  int rounds = 50;     // T
  ModelSpec model;     // input_dim / num_classes follow the data section
  TrainConfig train;
  DataConfig data;
  AttackConfig attack;
  DefenseConfig defense;
  std::optional<DpConfig> dp;

  int resolved_malicious_count() const {
    if (!attack.enabled()) return 0;
    if (!attack.malicious_ids.empty()) return static_cast<int>(attack.malicious_ids.size());
    if (attack.proportion) {
      const double n = *attack.proportion * clients;
      return static_cast<int>(std::lround(n));
    }
    return attack.malicious_count;
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec spec = data.synthetic;
    spec.seed = data.seed.value_or(seed);
    return spec;
  }

  // Sub-model size for IID delegation.
  int iid_u() const { return defense.u > 0 ? defense.u : (defense.d > 0 ? per_round / defense.d : 0); }

  // Throws ConfigError naming the first inconsistency found.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (clients < 1) fail("experiment.clients must be at least 1");
    if (per_round < 1 || per_round > clients) fail("experiment.per_round must be in [1, clients]");
    if (rounds < 0) fail("experiment.rounds must be nonnegative");
    try {
      model.validate();
      data.synthetic.validate();
    } catch (const InputError& e) {
      fail(e.what());
    }
    if (train.iterations < 0) fail("train.iterations must be nonnegative");
    if (train.batch_size < 1) fail("train.batch_size must be at least 1");
    if (!(train.learning_rate > 0.0)) fail("train.learning_rate must be positive");
    if (data.test_per_class < 1) fail("data.test_per_class must be at least 1");
    if (data.source == DataSource::synthetic) {
      const long long total = static_cast<long long>(data.synthetic.per_class) * data.synthetic.num_classes;
      const long long need = data.partition == Partition::noniid_shards ? 2LL * clients : clients;
      if (total < need) {
        fail("synthetic data has " + std::to_string(total) + " samples, partition needs at least " +
             std::to_string(need));
      }
    } else if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
               data.test_labels.empty()) {
      fail("idx data needs train_images, train_labels, test_images and test_labels");
    }

    if (attack.enabled()) {
      if (!attack.malicious_ids.empty()) {
        std::set<int> ids(attack.malicious_ids.begin(), attack.malicious_ids.end());
        if (ids.size() != attack.malicious_ids.size()) fail("attack.malicious_ids contains duplicates");
        if (*ids.begin() < 0 || *ids.rbegin() >= clients) fail("attack.malicious_ids out of range");
      } else if (attack.proportion) {
        const double n = *attack.proportion * clients;
        if (!(*attack.proportion > 0.0 && *attack.proportion < 1.0)) fail("attack.proportion must be in (0, 1)");
        if (std::abs(n - std::round(n)) > 1e-9) fail("attack.proportion * clients must be a whole number");
      } else if (attack.malicious_count < 1 || attack.malicious_count >= clients) {
        fail("attack.malicious_count must be in [1, clients)");
      }
      const int nc = data.synthetic.num_classes;
      auto in_range = [&](int c) { return c >= 0 && c < nc; };
      switch (attack.kind) {
        case AttackKind::label_flip:
          if (!in_range(attack.src) || !in_range(attack.dst)) fail("attack.src/dst out of range");
          if (attack.src == attack.dst) fail("attack.src and attack.dst must differ");
          break;
        case AttackKind::label_fraction:
          if (!(attack.fraction > 0.0 && attack.fraction <= 1.0)) fail("attack.fraction must be in (0, 1]");
          if (!in_range(attack.target)) fail("attack.target out of range");
          break;
        case AttackKind::backdoor:
          if (data.source != DataSource::synthetic || data.synthetic.subclusters < 2) {
            fail("backdoor attacks need synthetic data with at least 2 sub-clusters per class");
          }
          if (!(data.synthetic.subcluster_offset > 0.0)) fail("backdoor attacks need data.subcluster_offset > 0");
          if (!in_range(attack.target) || !in_range(attack.trigger_class)) fail("attack classes out of range");
          if (attack.target == attack.trigger_class) fail("attack.target must differ from attack.trigger_class");
          if (attack.trigger_subcluster < 0 || attack.trigger_subcluster >= data.synthetic.subclusters) {
            fail("attack.trigger_subcluster out of range");
          }
          if (attack.augment_copies < 0 || attack.jitter_scale < 0.0) {
            fail("attack.augment_copies and attack.jitter_scale must be nonnegative");
          }
          break;
        case AttackKind::none:
          break;
      }
      if (attack.extra_samples < 0) fail("attack.extra_samples must be nonnegative");
      if (attack.iterations && *attack.iterations < 0) fail("attack.iterations must be nonnegative");
      if (attack.learning_rate && !(*attack.learning_rate > 0.0)) fail("attack.learning_rate must be positive");
      if (attack.scaling.mode == ScalingMode::scale_by_factor && !(attack.scaling.factor > 0.0)) {
        fail("attack.factor must be positive");
      }
      if (attack.start_round && *attack.start_round < 1) fail("attack.start_round must be at least 1");
      if (attack.report && !(attack.report->frame_rate >= 0.0 && attack.report->frame_rate <= 1.0)) {
        fail("attack.frame_rate must be in [0, 1]");
      }
    }

    if (defense.enabled) {
      if (defense.e < 3) fail("defense.e must be at least 3 (got " + std::to_string(defense.e) + ")");
      if (defense.m < 1) fail("defense.m must be at least 1");
      if (!(defense.v > 0.0 && defense.v <= 1.0)) fail("defense.v must be in (0, 1]");
      if (!(defense.margin >= 0.0)) fail("defense.margin must be nonnegative");
      if (defense.presence_threshold < 1) fail("defense.presence_threshold must be at least 1");
      if (defense.eval_min_samples < 1) fail("defense.eval_min_samples must be at least 1");
      if (defense.delegation == DelegationMode::iid) {
        if ((defense.u > 0) == (defense.d > 0)) fail("defense needs exactly one of u or d for IID delegation");
        const int u = iid_u();
        if (u < 1 || per_round % u != 0 || (defense.d > 0 && per_round % defense.d != 0)) {
          fail("defense sub-model size must divide experiment.per_round");
        }
        const int d = per_round / u;
        if (per_round - u < defense.e) {
          fail("defense.e = " + std::to_string(defense.e) + " exceeds the " + std::to_string(per_round - u) +
               " non-member clients available per sub-model");
        }
        if (static_cast<long long>(defense.e) * d > static_cast<long long>(defense.m) * per_round) {
          fail("infeasible delegation: e*d = " + std::to_string(defense.e * d) + " exceeds m*K = " +
               std::to_string(defense.m * per_round));
        }
      }
    }

    if (dp) {
      if (!(dp->clip > 0.0)) fail("dp.clip must be positive");
      if (!(dp->sigma >= 0.0)) fail("dp.sigma must be nonnegative");
    }
  }
};

namespace detail {

// Reads typed values from one INI section and remembers which keys were used.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

  std::string raw(const std::string& key) {
    used_.insert(key);
    return tree_->get<std::string>(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = parse<T>(key, raw(key));
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    out = parse<T>(key, raw(key));
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required key " + name_ + "." + key);
    return parse<T>(key, raw(key));
  }

  void check_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.count(key)) throw ConfigError("unknown key " + name_ + "." + key);
    }
  }

  template <typename T>
  T parse(const std::string& key, const std::string& text) const {
    std::istringstream in(text);
    T value{};
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "off" || text == "no") return false;
      throw ConfigError(name_ + "." + key + ": expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      in >> value;
      if (in.fail() || !(in >> std::ws).eof()) {
        throw ConfigError(name_ + "." + key + ": cannot parse '" + text + "'");
      }
      return value;
    }
  }

 private:
  const boost::property_tree::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename Enum>
Enum parse_choice(const std::string& where, const std::string& text,
                  std::initializer_list<std::pair<const char*, Enum>> choices) {
  std::string names;
  for (const auto& [name, value] : choices) {
    if (text == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(where + ": '" + text + "' is not one of " + names);
}

inline std::vector<int> parse_int_list(const std::string& where, const std::string& text) {
  std::vector<int> out;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError(where + ": cannot parse '" + token + "' as an integer");
    }
  }
  return out;
}

}  // namespace detail

// Parses INI text with sections [experiment] [model] [train] [data] [attack]
// [defense] [dp]. Unknown sections or keys are errors. The result is
// validated before it is returned.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    pt::ini_parser::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  static const std::set<std::string> sections{"experiment", "model", "train", "data", "attack", "defense", "dp"};
  for (const auto& [name, sub] : root) {
    if (!sections.count(name)) throw ConfigError("unknown config section [" + name + "]");
    if (sub.empty() && !sub.data().empty()) throw ConfigError("config key '" + name + "' outside a section");
  }
  auto section = [&](const char* name) {
    const auto it = root.find(name);
    return detail::SectionReader(it == root.not_found() ? nullptr : &it->second, name);
  };

  ExperimentConfig cfg;

  auto ex = section("experiment");
  ex.read("seed", cfg.seed);
  ex.read("clients", cfg.clients);
  ex.read("per_round", cfg.per_round);
  ex.read("rounds", cfg.rounds);
  ex.check_unknown();

  auto data = section("data");
  if (data.has("source")) {
    cfg.data.source = detail::parse_choice<DataSource>("data.source", data.raw("source"),
                                                       {{"synthetic", DataSource::synthetic}, {"idx", DataSource::idx}});
  }
  if (data.has("partition")) {
    cfg.data.partition = detail::parse_choice<Partition>(
        "data.partition", data.raw("partition"), {{"iid", Partition::iid}, {"noniid-shards", Partition::noniid_shards}});
  }
  auto& syn = cfg.data.synthetic;
  data.read("num_classes", syn.num_classes);
  data.read("input_dim", syn.input_dim);
  data.read("per_class", syn.per_class);
  data.read("separation", syn.separation);
  data.read("cluster_spread", syn.cluster_spread);
  data.read("subclusters", syn.subclusters);
  data.read("subcluster_offset", syn.subcluster_offset);
  data.read("seed", cfg.data.seed);
  data.read("test_per_class", cfg.data.test_per_class);
  data.read("train_images", cfg.data.train_images);
  data.read("train_labels", cfg.data.train_labels);
  data.read("test_images", cfg.data.test_images);
  data.read("test_labels", cfg.data.test_labels);
  data.check_unknown();

  auto model = section("model");
  if (model.has("kind")) {
    cfg.model.kind = detail::parse_choice<ModelKind>(
        "model.kind", model.raw("kind"),
        {{"softmax-linear", ModelKind::softmax_linear}, {"mlp-1hidden", ModelKind::mlp_1hidden}});
  }
  model.read("hidden_dim", cfg.model.hidden_dim);
  model.check_unknown();
  cfg.model.input_dim = syn.input_dim;
  cfg.model.num_classes = syn.num_classes;

  auto train = section("train");
  train.read("iterations", cfg.train.iterations);
  train.read("batch_size", cfg.train.batch_size);
  cfg.train.learning_rate = train.require<double>("learning_rate");
  train.check_unknown();

  auto atk = section("attack");
  auto& a = cfg.attack;
  if (atk.has("kind")) {
    a.kind = detail::parse_choice<AttackKind>("attack.kind", atk.raw("kind"),
                                              {{"none", AttackKind::none},
                                               {"label-flip", AttackKind::label_flip},
                                               {"label-fraction", AttackKind::label_fraction},
                                               {"backdoor", AttackKind::backdoor}});
  }
  atk.read("src", a.src);
  atk.read("dst", a.dst);
  atk.read("fraction", a.fraction);
  atk.read("target", a.target);
  atk.read("trigger_class", a.trigger_class);
  atk.read("trigger_subcluster", a.trigger_subcluster);
  atk.read("augment_copies", a.augment_copies);
  atk.read("jitter_scale", a.jitter_scale);
  atk.read("extra_samples", a.extra_samples);
  atk.read("iterations", a.iterations);
  atk.read("learning_rate", a.learning_rate);
  if (atk.has("scaling")) {
    a.scaling.mode = detail::parse_choice<ScalingMode>("attack.scaling", atk.raw("scaling"),
                                                       {{"none", ScalingMode::none},
                                                        {"scale", ScalingMode::scale_by_factor},
                                                        {"replace", ScalingMode::full_replacement}});
  }
  if (atk.has("factor")) {
    if (a.scaling.mode != ScalingMode::scale_by_factor) throw ConfigError("attack.factor requires scaling = scale");
    a.scaling.factor = atk.parse<double>("factor", atk.raw("factor"));
  } else if (a.scaling.mode == ScalingMode::scale_by_factor) {
    throw ConfigError("attack.scaling = scale requires attack.factor");
  }
  atk.read("malicious_count", a.malicious_count);
  atk.read("proportion", a.proportion);
  if (atk.has("malicious_ids")) a.malicious_ids = detail::parse_int_list("attack.malicious_ids", atk.raw("malicious_ids"));
  atk.read("start_round", a.start_round);
  atk.read("start_accuracy", a.start_accuracy);
  if (atk.has("report")) {
    ReportStrategy rs;
    rs.kind = detail::parse_choice<ReportKind>("attack.report", atk.raw("report"),
                                               {{"always-clear", ReportKind::always_clear},
                                                {"frame-honest", ReportKind::frame_honest}});
    a.report = rs;
  }
  if (atk.has("frame_rate")) {
    if (!a.report || a.report->kind != ReportKind::frame_honest) {
      throw ConfigError("attack.frame_rate requires report = frame-honest");
    }
    a.report->frame_rate = atk.parse<double>("frame_rate", atk.raw("frame_rate"));
  } else if (a.report && a.report->kind == ReportKind::frame_honest) {
    throw ConfigError("attack.report = frame-honest requires attack.frame_rate");
  }
  atk.check_unknown();

  auto def = section("defense");
  auto& dcfg = cfg.defense;
  def.read("enabled", dcfg.enabled);
  if (def.has("delegation")) {
    dcfg.delegation = detail::parse_choice<DelegationMode>(
        "defense.delegation", def.raw("delegation"), {{"iid", DelegationMode::iid}, {"noniid", DelegationMode::noniid}});
  }
  def.read("u", dcfg.u);
  def.read("d", dcfg.d);
  def.read("e", dcfg.e);
  def.read("m", dcfg.m);
  def.read("v", dcfg.v);
  def.read("margin", dcfg.margin);
  def.read("presence_threshold", dcfg.presence_threshold);
  def.read("eval_min_samples", dcfg.eval_min_samples);
  if (def.has("aggregation")) {
    dcfg.aggregation = detail::parse_choice<AggregationRule>(
        "defense.aggregation", def.raw("aggregation"),
        {{"penalized-deltas", AggregationRule::penalized_deltas}, {"literal-models", AggregationRule::literal_models}});
  }
  def.check_unknown();

  auto dp = section("dp");
  bool dp_enabled = false;
  dp.read("enabled", dp_enabled);
  DpConfig dpc;
  dp.read("clip", dpc.clip);
  dp.read("sigma", dpc.sigma);
  if (dp.has("apply_to")) {
    dpc.submodels = dpc.global = false;
    std::istringstream in(dp.raw("apply_to"));
    std::string item;
    while (std::getline(in, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item == "submodels") {
        dpc.submodels = true;
      } else if (item == "global") {
        dpc.global = true;
      } else if (!item.empty()) {
        throw ConfigError("dp.apply_to: '" + item + "' is not one of submodels, global");
      }
    }
  }
  dp.check_unknown();
  if (dp_enabled) cfg.dp = dpc;

  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in);
}

}  // namespace cvfl
