#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvfl/attacks.hpp"
#include "cvfl/config.hpp"
#include "cvfl/data.hpp"
#include "cvfl/defense.hpp"
#include "cvfl/federation.hpp"
#include "cvfl/model.hpp"
#include "cvfl/privacy.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

// Everything a run needs, materialized from an ExperimentConfig.
struct Scenario {
  ExperimentConfig config;
  ModelSpec spec;
  std::vector<ClientState> clients;  // index == id
  Dataset test;
  Dataset train_union;  // clean training data of all clients
  std::optional<AttackSpec> attack;
  std::optional<SyntheticLayout> layout;

  std::vector<ClientId> pool() const {
    std::vector<ClientId> ids;
    for (const auto& c : clients) ids.push_back(c.id);
    return ids;
  }

  std::vector<ClientId> malicious_ids() const {
    std::vector<ClientId> ids;
    for (const auto& c : clients) {
      if (c.malicious()) ids.push_back(c.id);
    }
    return ids;
  }

  const ClientState& client(ClientId id) const { return clients.at(static_cast<std::size_t>(id.value)); }
};

namespace detail {

inline std::vector<Sample> draw_extra_samples(const Scenario& sc, int label, int count, Rng& rng,
                                              const Trigger* trigger) {
  std::vector<Sample> out;
  if (count <= 0) return out;
  if (sc.layout) {
    const auto& syn = sc.config.data.synthetic;
    const auto& subs = sc.layout->subcluster_means[static_cast<std::size_t>(label)];
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
      const std::size_t which = trigger ? static_cast<std::size_t>(trigger->index) : static_cast<std::size_t>(i) % subs.size();
      Sample s{subs[which], label};
      for (double& v : s.features) v += syn.cluster_spread * normal(rng);
      out.push_back(std::move(s));
    }
    return out;
  }
  std::vector<const Sample*> same;
  for (const auto& s : sc.train_union.samples) {
    if (s.label == label) same.push_back(&s);
  }
  if (same.empty()) throw ConfigError("no training samples of class " + std::to_string(label) + " to draw from");
  std::uniform_int_distribution<std::size_t> pick(0, same.size() - 1);
  for (int i = 0; i < count; ++i) out.push_back(*same[pick(rng)]);
  return out;
}

}  // namespace detail

inline Scenario build_scenario(const ExperimentConfig& cfg) {
  cfg.validate();
  Scenario sc;
  sc.config = cfg;
  sc.spec = cfg.model;

  Dataset train;
  if (cfg.data.source == DataSource::synthetic) {
    const SyntheticSpec syn = cfg.synthetic_spec();
    sc.layout = make_layout(syn);
    train = sample_synthetic(*sc.layout, syn, syn.per_class, derive_seed(syn.seed, "synthetic-train"));
    sc.test = sample_synthetic(*sc.layout, syn, cfg.data.test_per_class, derive_seed(syn.seed, "synthetic-test"));
  } else {
    train = load_idx(cfg.data.train_images, cfg.data.train_labels, cfg.data.synthetic.num_classes);
    sc.test = load_idx(cfg.data.test_images, cfg.data.test_labels, cfg.data.synthetic.num_classes);
    if (train.input_dim() != static_cast<std::size_t>(cfg.model.input_dim)) {
      throw ConfigError("idx data has " + std::to_string(train.input_dim()) + " features but data.input_dim = " +
                        std::to_string(cfg.model.input_dim));
    }
    if (cfg.data.partition == Partition::noniid_shards && train.size() < 2 * static_cast<std::size_t>(cfg.clients)) {
      throw ConfigError("idx training set too small for 2 shards per client");
    }
  }
  sc.train_union = train;

  Rng part_rng = make_stream(cfg.seed, "partition");
  auto parts = cfg.data.partition == Partition::iid ? partition_iid(train, cfg.clients, part_rng)
                                                    : partition_noniid_shards(train, cfg.clients, part_rng);
  sc.clients.resize(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    sc.clients[i].id = ClientId{static_cast<int>(i)};
    sc.clients[i].data = std::move(parts[i]);
  }

  if (!cfg.attack.enabled()) return sc;

  const auto& a = cfg.attack;
  AttackSpec spec;
  spec.scaling = a.scaling;
  const Trigger* trigger = nullptr;
  int extra_label = 0;
  switch (a.kind) {
    case AttackKind::label_flip:
      spec.kind = LabelFlip{a.src, a.dst};
      extra_label = a.src;
      break;
    case AttackKind::label_fraction:
      spec.kind = LabelFraction{a.fraction, a.target};
      break;
    case AttackKind::backdoor:
      spec.kind = Backdoor{subcluster_trigger(*sc.layout, a.trigger_class, a.trigger_subcluster), a.target,
                           a.augment_copies, a.jitter_scale};
      trigger = &std::get<Backdoor>(spec.kind).trigger;
      extra_label = a.trigger_class;
      break;
    case AttackKind::none:
      break;
  }
  sc.attack = spec;
  if (const auto* b = std::get_if<Backdoor>(&sc.attack->kind)) trigger = &b->trigger;

  std::vector<ClientId> bad;
  if (!a.malicious_ids.empty()) {
    for (int id : a.malicious_ids) bad.push_back(ClientId{id});
  } else {
    Rng pick = make_stream(cfg.seed, "malicious");
    const auto pool = sc.pool();
    bad = select_clients(pool, static_cast<std::size_t>(cfg.resolved_malicious_count()), pick);
  }
  for (ClientId id : bad) {
    auto& c = sc.clients[static_cast<std::size_t>(id.value)];
    c.role = Role::malicious;
    c.attack = sc.attack;
    c.report_strategy = a.report;
    if (a.iterations || a.learning_rate) {
      TrainConfig tc = cfg.train;
      tc.iterations = a.iterations.value_or(tc.iterations);
      tc.learning_rate = a.learning_rate.value_or(tc.learning_rate);
      c.attack_train = tc;
    }
    Dataset base = c.data;
    const bool add_extra = a.kind == AttackKind::label_flip || a.kind == AttackKind::backdoor;
    if (add_extra && a.extra_samples > 0) {
      Rng extra_rng = make_stream(cfg.seed, "poison-extra", {static_cast<std::uint64_t>(id.value)});
      auto extra = detail::draw_extra_samples(sc, extra_label, a.extra_samples, extra_rng, trigger);
      base.samples.insert(base.samples.end(), extra.begin(), extra.end());
    }
    Rng poison_rng = make_stream(cfg.seed, "poison", {static_cast<std::uint64_t>(id.value)});
    try {
      c.poisoned_data = poison(base, *sc.attack, poison_rng);
    } catch (const InputError& e) {
      throw ConfigError("cannot poison client " + to_string(id) + ": " + e.what());
    }
  }
  return sc;
}

// Attack success on the test set: label-flip = share of true-src samples
// predicted dst; label-fraction = share of non-target samples predicted
// target; backdoor = share of trigger matches predicted target.
inline double measure_subtask(const ModelSpec& spec, const ParameterVector& params, const AttackSpec& attack,
                              const Dataset& test) {
  std::size_t hits = 0, total = 0;
  for (const auto& s : test.samples) {
    int want = -1;
    if (const auto* f = std::get_if<LabelFlip>(&attack.kind)) {
      if (s.label == f->src) want = f->dst;
    } else if (const auto* p = std::get_if<LabelFraction>(&attack.kind)) {
      if (s.label != p->target) want = p->target;
    } else if (const auto* b = std::get_if<Backdoor>(&attack.kind)) {
      if (b->trigger.matches(s)) want = b->target;
    }
    if (want < 0) continue;
    ++total;
    if (predict(spec, params, s.features) == want) ++hits;
  }
  if (total == 0) throw InputError("no test samples to measure the attack subtask on");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// One round
// ---------------------------------------------------------------------------

struct RoundOutcome {
  std::vector<SubModel> submodels;  // used for aggregation
  std::vector<SubModel> evaluated;  // sent to evaluators (noised when DP covers sub-models)
  DelegationPlan plan;
  std::vector<EvaluationReport> reports;
  std::vector<int> report_counts;
  PenaltyVector penalties;
  std::vector<bool> poisoned;  // ground truth: holds an active attacker's update
  ParameterVector next_global;

  // Union of classes flagged by any evaluator, per sub-model.
  std::vector<std::vector<int>> flagged_classes() const {
    std::vector<std::vector<int>> out(submodels.size());
    for (const auto& rep : reports) {
      auto& v = out[static_cast<std::size_t>(rep.submodel)];
      for (std::size_t i = 0; i < rep.flags.size(); ++i) {
        if (rep.flags[i]) v.push_back(rep.classes[i]);
      }
    }
    for (auto& v : out) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return out;
  }
};

inline bool attacker_active_in(const Scenario& sc, ClientId id, bool attack_active) {
  const auto& c = sc.client(id);
  return attack_active && c.malicious() && c.attack.has_value();
}

// Sub-models, delegation, evaluation, penalties and aggregation for one round.
inline RoundOutcome defended_round(const Scenario& sc, const RoundContext& ctx, std::span<const UpdateRecord> updates,
                                   bool attack_active) {
  const auto& cfg = sc.config;
  const auto& def = cfg.defense;
  const std::uint64_t seed = cfg.seed;
  const auto t = static_cast<std::uint64_t>(ctx.t);
  const int k = static_cast<int>(updates.size());

  // Non-IID: d comes from the selected set's coverage, evaluators from the
  // whole population.
  std::vector<ClassPresenceVector> pool_presence;
  int u = cfg.iid_u();
  if (def.delegation == DelegationMode::noniid) {
    std::vector<ClassPresenceVector> selected;
    for (ClientId id : ctx.selected) selected.push_back(presence_of(id, sc.client(id).data, def.presence_threshold));
    u = k / choose_d_noniid(selected, k);
    for (const auto& c : sc.clients) pool_presence.push_back(presence_of(c.id, c.data, def.presence_threshold));
  }

  RoundOutcome out;
  Rng group_rng = make_stream(seed, "submodels", {t});
  const std::vector<SubModel> raw = build_submodels(ctx.global, updates, u, group_rng);

  // DP: aggregation uses clipped member deltas; evaluators may see noised copies.
  const std::optional<DpConfig>& dp = cfg.dp;
  if (dp) {
    require_disjoint_members(raw);
    for (const auto& sub : raw) {
      Rng unused(0);
      out.submodels.push_back(perturb_submodel(sub, updates, ctx.global, dp->clip, 0.0, unused));
    }
    for (const auto& sub : raw) {
      if (dp->submodels) {
        Rng noise = make_stream(seed, "noise", {t, static_cast<std::uint64_t>(sub.id)});
        out.evaluated.push_back(perturb_submodel(sub, updates, ctx.global, dp->clip, dp->sigma, noise));
      } else {
        out.evaluated.push_back(out.submodels[static_cast<std::size_t>(sub.id)]);
      }
    }
  } else {
    out.submodels = raw;
    out.evaluated = raw;
  }

  for (const auto& sub : raw) {
    bool bad = false;
    for (ClientId id : sub.members) bad = bad || attacker_active_in(sc, id, attack_active);
    out.poisoned.push_back(bad);
  }

  Rng delegate_rng = make_stream(seed, "delegate", {t});
  out.plan = def.delegation == DelegationMode::iid
                 ? delegate_iid(out.evaluated, ctx.selected, def.e, def.m, sc.spec.num_classes, delegate_rng)
                 : delegate_noniid(out.evaluated, pool_presence, def.e, def.m, delegate_rng);

  for (ClientId evaluator : out.plan.evaluators()) {
    const ClientState& client = sc.client(evaluator);
    const auto tasks = out.plan.tasks_for(evaluator);
    if (client.malicious() && client.report_strategy) {
      Rng report_rng = make_stream(seed, "report", {t, static_cast<std::uint64_t>(evaluator.value)});
      auto reps = malicious_report(tasks, [&](int s) { return out.poisoned[static_cast<std::size_t>(s)]; },
                                   *client.report_strategy, report_rng);
      out.reports.insert(out.reports.end(), reps.begin(), reps.end());
      continue;
    }
    const auto baseline = evaluate_per_class(sc.spec, ctx.global, client.data);
    for (const auto& task : tasks) {
      out.reports.push_back(evaluate_submodel(sc.spec, evaluator, client.data,
                                              out.evaluated[static_cast<std::size_t>(task.submodel)], task.classes,
                                              baseline, def.margin, def.eval_min_samples));
    }
  }

  out.report_counts = tally_reports(out.plan, out.reports);
  out.penalties = penalties_from(out.report_counts, def.e, def.v);
  out.next_global = weighted_aggregate(ctx.global, out.submodels, out.penalties, def.aggregation);
  if (dp && dp->global && dp->sigma > 0.0) {
    Rng noise = make_stream(seed, "noise-global", {t});
    std::normal_distribution<double> gauss(0.0, dp->sigma * dp->clip);
    for (double& v : out.next_global) v += gauss(noise) / static_cast<double>(k);
  }
  return out;
}

// Plain FedAvg, or the clipped-and-noised mean when DP covers the global model.
inline ParameterVector baseline_round(const Scenario& sc, const RoundContext& ctx, std::span<const UpdateRecord> updates) {
  const auto& dp = sc.config.dp;
  if (!dp) return fedavg_aggregate(ctx.global, updates);
  std::vector<const UpdateRecord*> ordered;
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->owner < b->owner; });
  std::vector<ParameterVector> deltas;
  for (const auto* u : ordered) deltas.push_back(u->delta);
  Rng noise = make_stream(sc.config.seed, "noise-global", {static_cast<std::uint64_t>(ctx.t)});
  return ctx.global + dp_mean(deltas, dp->clip, dp->global ? dp->sigma : 0.0, noise);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class Mode { fedavg_baseline, defended };

struct SubModelRecord {
  int id = 0;
  std::vector<ClientId> members;
  bool poisoned = false;
  int r = 0;
  double c = 1.0;
  std::vector<int> flagged_classes;
  std::vector<ClientId> evaluators;
};

struct MetricsRecord {
  int t = 0;
  double main_task_accuracy = 0.0;
  std::optional<double> subtask_success;
  double train_loss = 0.0;
  bool attack_active = false;
  std::vector<std::optional<double>> class_accuracy;
  std::vector<SubModelRecord> submodels;  // empty in baseline mode
  double wall_time_ms = 0.0;
};

struct TrainingResult {
  ParameterVector initial_model;
  double initial_loss = 0.0;
  double initial_accuracy = 0.0;
  std::vector<MetricsRecord> metrics;
  std::vector<ParameterVector> trajectory;  // global model after each round
  ParameterVector final_model;
};

using RoundCallback = std::function<void(const MetricsRecord&)>;

inline MetricsRecord measure_round(const Scenario& sc, int t, const ParameterVector& w, bool attack_active) {
  MetricsRecord rec;
  rec.t = t;
  rec.attack_active = attack_active;
  const auto per_class = evaluate_per_class(sc.spec, w, sc.test);
  for (const auto& pc : per_class) rec.class_accuracy.push_back(pc.accuracy);
  rec.main_task_accuracy = accuracy(sc.spec, w, sc.test);
  if (sc.attack) rec.subtask_success = measure_subtask(sc.spec, w, *sc.attack, sc.test);
  rec.train_loss = loss(sc.spec, w, sc.train_union);
  return rec;
}

inline TrainingResult run_training(const Scenario& sc, Mode mode, const RoundCallback& on_round = {}) {
  const auto& cfg = sc.config;
  TrainingResult result;
  ParameterVector w = init_model(sc.spec, derive_seed(cfg.seed, "model"));
  result.initial_model = w;
  result.initial_loss = loss(sc.spec, w, sc.train_union);
  result.initial_accuracy = accuracy(sc.spec, w, sc.test);

  const auto pool = sc.pool();
  double last_accuracy = result.initial_accuracy;
  bool attack_active = false;
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    if (sc.attack && !attack_active) {
      attack_active = cfg.attack.start_round ? t >= *cfg.attack.start_round
                                             : last_accuracy >= cfg.attack.start_accuracy;
    }
    Rng select_rng = make_stream(cfg.seed, "select", {static_cast<std::uint64_t>(t)});
    RoundContext ctx{t, select_clients(pool, static_cast<std::size_t>(cfg.per_round), select_rng), w};
    const auto updates = collect_updates(ctx, sc.clients, sc.spec, cfg.train, cfg.seed, attack_active);

    std::vector<SubModelRecord> subs;
    if (mode == Mode::defended) {
      const RoundOutcome out = defended_round(sc, ctx, updates, attack_active);
      const auto flagged = out.flagged_classes();
      for (std::size_t i = 0; i < out.submodels.size(); ++i) {
        SubModelRecord s;
        s.id = out.submodels[i].id;
        s.members = out.submodels[i].members;
        s.poisoned = out.poisoned[i];
        s.r = out.penalties[i].r;
        s.c = out.penalties[i].c;
        s.flagged_classes = flagged[i];
        for (const auto& a : out.plan.per_submodel[i]) s.evaluators.push_back(a.evaluator);
        subs.push_back(std::move(s));
      }
      w = out.next_global;
    } else {
      w = baseline_round(sc, ctx, updates);
    }
    if (!all_finite(w)) throw std::runtime_error("global model became non-finite in round " + std::to_string(t));

    MetricsRecord rec = measure_round(sc, t, w, attack_active);
    rec.submodels = std::move(subs);
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    last_accuracy = rec.main_task_accuracy;
    result.trajectory.push_back(w);
    if (on_round) on_round(rec);
    result.metrics.push_back(std::move(rec));
  }
  result.final_model = w;
  return result;
}

}  // namespace cvfl
