#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvfl/common.hpp"
#include "cvfl/error.hpp"
#include "cvfl/federation.hpp"
#include "cvfl/model.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/plan.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

// ---------------------------------------------------------------------------
// Sub-models
// ---------------------------------------------------------------------------

// Shuffles the round's updates and averages consecutive groups of u into
// d = K/u sub-models.
inline std::vector<SubModel> build_submodels(const ParameterVector& global, std::span<const UpdateRecord> updates,
                                             int u, Rng& rng) {
  if (u < 1) throw InputError("sub-model size u must be at least 1");
  if (updates.empty()) throw InputError("no updates to group into sub-models");
  if (updates.size() % static_cast<std::size_t>(u) != 0) {
    throw InputError("sub-model size u=" + std::to_string(u) + " does not divide K=" +
                     std::to_string(updates.size()));
  }
  std::vector<const UpdateRecord*> order;
  for (const auto& rec : updates) {
    global.check_same_dim(rec.delta, "build_submodels");
    order.push_back(&rec);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->owner < b->owner; });
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t group = static_cast<std::size_t>(u);
  const std::size_t d = order.size() / group;
  std::vector<SubModel> subs(d);
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<const UpdateRecord*> members(order.begin() + static_cast<std::ptrdiff_t>(i * group),
                                             order.begin() + static_cast<std::ptrdiff_t>((i + 1) * group));
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->owner < b->owner; });
    SubModel& sub = subs[i];
    sub.id = static_cast<int>(i);
    sub.mean_delta = ParameterVector(global.dim());
    for (const auto* m : members) {
      sub.members.push_back(m->owner);
      sub.mean_delta += m->delta;
    }
    sub.mean_delta *= 1.0 / static_cast<double>(group);
    sub.materialized = global + sub.mean_delta;
  }
  return subs;
}

// ---------------------------------------------------------------------------
// Delegation
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_member(const SubModel& sub, ClientId id) {
  return std::binary_search(sub.members.begin(), sub.members.end(), id);
}

inline std::vector<int> all_classes(int num_classes) {
  std::vector<int> v(static_cast<std::size_t>(num_classes));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Capacitated bipartite assignment of e distinct evaluators per sub-model
// with augmenting paths: a full evaluator may hand one of its sub-models to
// another evaluator to make room. Succeeds whenever any valid assignment
// exists.
class IidAssigner {
 public:
  IidAssigner(std::vector<std::vector<int>> candidates, int num_clients, int m)
      : candidates_(std::move(candidates)),
        assigned_(candidates_.size()),
        by_client_(static_cast<std::size_t>(num_clients)),
        m_(m) {}

  bool add_one(int sub) {
    visited_.assign(by_client_.size(), false);
    return augment(sub);
  }

  const std::vector<std::vector<int>>& assigned() const { return assigned_; }

 private:
  bool holds(int sub, int client) const {
    const auto& a = assigned_[static_cast<std::size_t>(sub)];
    return std::find(a.begin(), a.end(), client) != a.end();
  }

  void link(int sub, int client) {
    assigned_[static_cast<std::size_t>(sub)].push_back(client);
    by_client_[static_cast<std::size_t>(client)].push_back(sub);
  }

  void unlink(int sub, int client) {
    auto& a = assigned_[static_cast<std::size_t>(sub)];
    a.erase(std::find(a.begin(), a.end(), client));
    auto& b = by_client_[static_cast<std::size_t>(client)];
    b.erase(std::find(b.begin(), b.end(), sub));
  }

  bool augment(int sub) {
    for (int c : candidates_[static_cast<std::size_t>(sub)]) {
      if (visited_[static_cast<std::size_t>(c)] || holds(sub, c)) continue;
      visited_[static_cast<std::size_t>(c)] = true;
      if (static_cast<int>(by_client_[static_cast<std::size_t>(c)].size()) < m_) {
        link(sub, c);
        return true;
      }
      const std::vector<int> current = by_client_[static_cast<std::size_t>(c)];
      for (int other : current) {
        if (augment(other)) {
          unlink(other, c);
          link(sub, c);
          return true;
        }
      }
    }
    return false;
  }

  std::vector<std::vector<int>> candidates_;
  std::vector<std::vector<int>> assigned_;
  std::vector<std::vector<int>> by_client_;
  std::vector<bool> visited_;
  int m_;
};

}  // namespace detail

// Every sub-model gets exactly e distinct non-member evaluators from pool,
// each evaluating all classes; no evaluator takes more than m sub-models.
inline DelegationPlan delegate_iid(std::span<const SubModel> submodels, std::span<const ClientId> pool, int e,
                                   int m, int num_classes, Rng& rng) {
  if (e < 1) throw ConfigError("evaluators per sub-model e must be at least 1");
  if (m < 1) throw ConfigError("max tasks per evaluator m must be at least 1");
  const auto d = static_cast<long long>(submodels.size());
  const auto slots_needed = static_cast<long long>(e) * d;
  const auto slots_available = static_cast<long long>(m) * static_cast<long long>(pool.size());
  if (slots_needed > slots_available) {
    throw ConfigError("infeasible delegation: e*d = " + std::to_string(slots_needed) +
                      " task slots needed but m*|pool| = " + std::to_string(slots_available) + " exist");
  }

  std::vector<std::vector<int>> candidates(submodels.size());
  for (std::size_t s = 0; s < submodels.size(); ++s) {
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (!detail::is_member(submodels[s], pool[c])) candidates[s].push_back(static_cast<int>(c));
    }
    if (static_cast<int>(candidates[s].size()) < e) {
      throw ConfigError("infeasible delegation: sub-model " + std::to_string(submodels[s].id) + " has only " +
                        std::to_string(candidates[s].size()) + " non-member evaluators, e = " + std::to_string(e));
    }
    std::shuffle(candidates[s].begin(), candidates[s].end(), rng);
  }

  detail::IidAssigner assigner(std::move(candidates), static_cast<int>(pool.size()), m);
  std::vector<int> order(submodels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int round = 0; round < e; ++round) {
    for (int s : order) {
      if (!assigner.add_one(s)) {
        throw ConfigError("infeasible delegation: sub-model " + std::to_string(submodels[static_cast<std::size_t>(s)].id) +
                          " cannot receive " + std::to_string(e) + " evaluators under the per-client limit m = " +
                          std::to_string(m));
      }
    }
  }

  DelegationPlan plan{DelegationMode::iid, static_cast<int>(d), 0, e, m, {}};
  if (!submodels.empty()) plan.u = static_cast<int>(submodels.front().members.size());
  const auto classes = detail::all_classes(num_classes);
  plan.per_submodel.resize(submodels.size());
  for (std::size_t s = 0; s < submodels.size(); ++s) {
    for (int c : assigner.assigned()[s]) {
      plan.per_submodel[s].push_back({pool[static_cast<std::size_t>(c)], submodels[s].id, classes});
    }
    std::sort(plan.per_submodel[s].begin(), plan.per_submodel[s].end(),
              [](const Assignment& a, const Assignment& b) { return a.evaluator < b.evaluator; });
  }
  return plan;
}

struct ClassPresenceVector {
  ClientId client;
  std::vector<bool> present;
  int threshold = 1;
};

inline ClassPresenceVector presence_of(ClientId id, const Dataset& data, int threshold) {
  if (threshold < 1) throw InputError("presence threshold must be at least 1");
  ClassPresenceVector v{id, std::vector<bool>(static_cast<std::size_t>(data.num_classes), false), threshold};
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) v.present[c] = counts[c] >= threshold;
  return v;
}

inline std::vector<ClassPresenceVector> collect_presence(std::span<const ClientState> clients, int threshold) {
  std::vector<ClassPresenceVector> out;
  out.reserve(clients.size());
  for (const auto& c : clients) out.push_back(presence_of(c.id, c.data, threshold));
  return out;
}

// Number of clients holding each class (column sums of the presence vectors).
inline std::vector<int> class_coverage(std::span<const ClassPresenceVector> presence) {
  std::vector<int> counts;
  for (const auto& p : presence) {
    if (counts.size() < p.present.size()) counts.resize(p.present.size(), 0);
    for (std::size_t c = 0; c < p.present.size(); ++c) counts[c] += p.present[c] ? 1 : 0;
  }
  return counts;
}

inline int largest_divisor_at_most(int k, int bound) {
  for (int d = std::min(k, bound); d >= 1; --d) {
    if (k % d == 0) return d;
  }
  return 1;
}

// Smallest class coverage, reduced to the largest divisor of K not above it.
inline int choose_d_noniid(std::span<const ClassPresenceVector> presence, int k) {
  if (k < 1) throw InputError("K must be positive");
  const auto counts = class_coverage(presence);
  if (counts.empty()) throw ConfigError("no presence information");
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw ConfigError("class " + std::to_string(c) + " is held by no client");
  }
  const int raw = *std::min_element(counts.begin(), counts.end());
  return largest_divisor_at_most(k, raw);
}

namespace detail {

// Depth-first search for a non-IID plan. Branches on the most constrained
// (sub-model, class) pair; adding an evaluator to a sub-model lets it cover
// every still-needed class it holds, so evaluators are reused across classes.
class NoniidSearch {
 public:
  NoniidSearch(std::span<const SubModel> subs, std::span<const ClassPresenceVector> presence, int e, int m,
               std::size_t node_budget)
      : subs_(subs), presence_(presence), e_(e), m_(m), budget_(node_budget) {
    num_classes_ = presence.empty() ? 0 : static_cast<int>(presence.front().present.size());
    eligible_.resize(subs.size());
    for (std::size_t s = 0; s < subs.size(); ++s) {
      for (std::size_t k = 0; k < presence.size(); ++k) {
        if (!is_member(subs[s], presence[k].client)) eligible_[s].push_back(static_cast<int>(k));
      }
    }
  }

  enum class Outcome { found, infeasible, budget_exhausted };

  Outcome run(Rng& rng) {
    const auto ns = subs_.size();
    const auto nc = static_cast<std::size_t>(num_classes_);
    need_.assign(ns * nc, e_);
    load_.assign(presence_.size(), 0);
    chosen_.assign(ns, std::vector<std::pair<int, std::vector<int>>>{});
    priority_.resize(presence_.size());
    std::uniform_int_distribution<std::uint32_t> dist;
    for (auto& p : priority_) p = dist(rng);
    nodes_ = 0;
    exhausted_ = false;
    if (search()) return Outcome::found;
    return exhausted_ ? Outcome::budget_exhausted : Outcome::infeasible;
  }

  // per sub-model: (pool index, classes covered)
  const std::vector<std::vector<std::pair<int, std::vector<int>>>>& chosen() const { return chosen_; }

 private:
  bool holds(int k, int c) const { return presence_[static_cast<std::size_t>(k)].present[static_cast<std::size_t>(c)]; }

  int& need(std::size_t s, int c) { return need_[s * static_cast<std::size_t>(num_classes_) + static_cast<std::size_t>(c)]; }

  bool in_sub(std::size_t s, int k) const {
    for (const auto& [kk, _] : chosen_[s]) {
      if (kk == k) return true;
    }
    return false;
  }

  bool usable(std::size_t s, int k, int c) const {
    return holds(k, c) && load_[static_cast<std::size_t>(k)] < m_ && !in_sub(s, k);
  }

  bool search() {
    if (++nodes_ > budget_) {
      exhausted_ = true;
      return false;
    }
    // most constrained open pair
    std::size_t best_s = 0;
    int best_c = -1;
    int best_slack = std::numeric_limits<int>::max();
    for (std::size_t s = 0; s < subs_.size(); ++s) {
      for (int c = 0; c < num_classes_; ++c) {
        const int n = need(s, c);
        if (n == 0) continue;
        int avail = 0;
        for (int k : eligible_[s]) avail += usable(s, k, c) ? 1 : 0;
        const int slack = avail - n;
        if (slack < 0) return false;
        if (slack < best_slack) {
          best_slack = slack;
          best_s = s;
          best_c = c;
        }
      }
    }
    if (best_c < 0) return true;

    struct Cand {
      int k;
      int gain;
      std::uint32_t prio;
    };
    std::vector<Cand> cands;
    for (int k : eligible_[best_s]) {
      if (!usable(best_s, k, best_c)) continue;
      int gain = 0;
      for (int c = 0; c < num_classes_; ++c) gain += (need(best_s, c) > 0 && holds(k, c)) ? 1 : 0;
      cands.push_back({k, gain, priority_[static_cast<std::size_t>(k)]});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.gain != b.gain) return a.gain > b.gain;
      return a.prio < b.prio;
    });

    for (const Cand& cand : cands) {
      std::vector<int> covered;
      for (int c = 0; c < num_classes_; ++c) {
        if (need(best_s, c) > 0 && holds(cand.k, c)) {
          --need(best_s, c);
          covered.push_back(c);
        }
      }
      ++load_[static_cast<std::size_t>(cand.k)];
      chosen_[best_s].emplace_back(cand.k, covered);
      if (search()) return true;
      chosen_[best_s].pop_back();
      --load_[static_cast<std::size_t>(cand.k)];
      for (int c : covered) ++need(best_s, c);
      if (exhausted_) return false;
    }
    return false;
  }

  std::span<const SubModel> subs_;
  std::span<const ClassPresenceVector> presence_;
  int e_;
  int m_;
  int num_classes_ = 0;
  std::size_t budget_;
  std::size_t nodes_ = 0;
  bool exhausted_ = false;
  std::vector<std::vector<int>> eligible_;
  std::vector<int> need_;
  std::vector<int> load_;
  std::vector<std::uint32_t> priority_;
  std::vector<std::vector<std::pair<int, std::vector<int>>>> chosen_;
};

}  // namespace detail

struct NoniidSearchLimits {
  int restarts = 1000;
  std::size_t nodes_per_attempt = 20000;
};

// Each (sub-model, class) pair gets exactly e distinct non-member evaluators
// holding that class; evaluators are reused across the classes they hold.
// presence lists the candidate evaluators (the round's pool).
inline DelegationPlan delegate_noniid(std::span<const SubModel> submodels,
                                      std::span<const ClassPresenceVector> presence, int e, int m, Rng& rng,
                                      NoniidSearchLimits limits = {}) {
  if (e < 1) throw ConfigError("evaluators per class e must be at least 1");
  if (m < 1) throw ConfigError("max tasks per evaluator m must be at least 1");
  if (presence.empty()) throw ConfigError("no candidate evaluators");
  const int num_classes = static_cast<int>(presence.front().present.size());

  for (const auto& sub : submodels) {
    for (int c = 0; c < num_classes; ++c) {
      int holders = 0;
      for (const auto& p : presence) {
        if (p.present[static_cast<std::size_t>(c)] && !detail::is_member(sub, p.client)) ++holders;
      }
      if (holders < e) {
        throw ConfigError("infeasible delegation: class " + std::to_string(c) + " is starved for sub-model " +
                          std::to_string(sub.id) + " (" + std::to_string(holders) + " non-member holders, e = " +
                          std::to_string(e) + ")");
      }
    }
  }

  detail::NoniidSearch search(submodels, presence, e, m, limits.nodes_per_attempt);
  for (int attempt = 0; attempt < std::max(limits.restarts, 1); ++attempt) {
    const auto outcome = search.run(rng);
    if (outcome == detail::NoniidSearch::Outcome::infeasible) {
      throw ConfigError("infeasible delegation: no plan covers every class " + std::to_string(e) +
                        " times with at most m = " + std::to_string(m) + " sub-models per evaluator");
    }
    if (outcome == detail::NoniidSearch::Outcome::found) {
      DelegationPlan plan{DelegationMode::noniid, static_cast<int>(submodels.size()), 0, e, m, {}};
      if (!submodels.empty()) plan.u = static_cast<int>(submodels.front().members.size());
      plan.per_submodel.resize(submodels.size());
      for (std::size_t s = 0; s < submodels.size(); ++s) {
        for (const auto& [k, classes] : search.chosen()[s]) {
          auto sorted = classes;
          std::sort(sorted.begin(), sorted.end());
          plan.per_submodel[s].push_back({presence[static_cast<std::size_t>(k)].client, submodels[s].id, sorted});
        }
        std::sort(plan.per_submodel[s].begin(), plan.per_submodel[s].end(),
                  [](const Assignment& a, const Assignment& b) { return a.evaluator < b.evaluator; });
      }
      return plan;
    }
  }
  throw ConfigError("infeasible delegation: no plan found after " + std::to_string(limits.restarts) +
                    " randomized restarts");
}

// ---------------------------------------------------------------------------
// Evaluation and penalties
// ---------------------------------------------------------------------------

// Flags class c iff the sub-model's local accuracy on c is below
// baseline_c - margin. Classes with fewer than min_samples local samples (or
// no baseline) are reported unflagged.
inline EvaluationReport evaluate_submodel(const ModelSpec& spec, ClientId evaluator, const Dataset& data,
                                          const SubModel& sub, std::span<const int> classes,
                                          std::span<const ClassAccuracy> baseline, double margin,
                                          int min_samples = 1) {
  EvaluationReport rep{evaluator, sub.id, std::vector<int>(classes.begin(), classes.end()),
                       std::vector<bool>(classes.size(), false)};
  const auto local = evaluate_per_class(spec, sub.materialized, data);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto c = static_cast<std::size_t>(classes[i]);
    if (c >= local.size() || c >= baseline.size()) continue;
    if (!local[c].accuracy || !baseline[c].accuracy || local[c].count < min_samples) continue;
    rep.flags[i] = *local[c].accuracy < *baseline[c].accuracy - margin;
  }
  return rep;
}

// Penalizing coefficient for a sub-model reported by r evaluators:
// 1 when r = 0, otherwise max(v * (1 - 4((r-1)/(e-2))^2), 0), which expands to
// max(-4v/(e-2)^2 r^2 + 8v/(e-2)^2 r - 4v/(e-2)^2 + v, 0).
inline double penalty(int r, int e, double v) {
  if (e < 3) throw ConfigError("penalty needs e >= 3 (got e = " + std::to_string(e) + ")");
  if (!(v > 0.0 && v <= 1.0)) throw ConfigError("initial penalty v must be in (0, 1]");
  if (r < 0) throw InputError("report count must be nonnegative");
  if (r == 0) return 1.0;
  const double x = static_cast<double>(r - 1) / static_cast<double>(e - 2);
  return std::max(v * (1.0 - 4.0 * x * x), 0.0);
}

struct SubModelPenalty {
  int r = 0;
  double c = 1.0;
};

using PenaltyVector = std::vector<SubModelPenalty>;

// r_i = number of distinct evaluators that flagged at least one class of
// sub-model i. Reports must match the plan's assignments exactly.
inline std::vector<int> tally_reports(const DelegationPlan& plan, std::span<const EvaluationReport> reports) {
  std::vector<int> r(plan.per_submodel.size(), 0);
  std::vector<std::vector<ClientId>> seen(plan.per_submodel.size());
  for (const auto& rep : reports) {
    if (rep.submodel < 0 || static_cast<std::size_t>(rep.submodel) >= plan.per_submodel.size()) {
      throw ProtocolError("report for unknown sub-model " + std::to_string(rep.submodel));
    }
    const auto s = static_cast<std::size_t>(rep.submodel);
    const auto& tasks = plan.per_submodel[s];
    const auto it = std::find_if(tasks.begin(), tasks.end(),
                                 [&](const Assignment& a) { return a.evaluator == rep.evaluator; });
    if (it == tasks.end()) {
      throw ProtocolError("client " + to_string(rep.evaluator) + " was not assigned sub-model " +
                          std::to_string(rep.submodel));
    }
    if (rep.classes != it->classes || rep.flags.size() != rep.classes.size()) {
      throw ProtocolError("report from client " + to_string(rep.evaluator) + " on sub-model " +
                          std::to_string(rep.submodel) + " does not cover the assigned classes");
    }
    if (std::find(seen[s].begin(), seen[s].end(), rep.evaluator) != seen[s].end()) {
      throw ProtocolError("duplicate report from client " + to_string(rep.evaluator) + " on sub-model " +
                          std::to_string(rep.submodel));
    }
    seen[s].push_back(rep.evaluator);
    if (rep.any_flag()) ++r[s];
  }
  return r;
}

inline PenaltyVector penalties_from(std::span<const int> report_counts, int e, double v) {
  PenaltyVector out;
  out.reserve(report_counts.size());
  for (int r : report_counts) out.push_back({r, penalty(r, e, v)});
  return out;
}

enum class AggregationRule {
  penalized_deltas,  // w_t + (1/d) sum c_i * mean_delta_i
  literal_models,    // (1/d) sum c_i * (w_t + mean_delta_i)
};

inline ParameterVector weighted_aggregate(const ParameterVector& global, std::span<const SubModel> submodels,
                                          std::span<const SubModelPenalty> penalties,
                                          AggregationRule rule = AggregationRule::penalized_deltas) {
  if (submodels.empty()) throw InputError("aggregation over zero sub-models");
  if (penalties.size() != submodels.size()) {
    throw InputError("penalty vector covers " + std::to_string(penalties.size()) + " of " +
                     std::to_string(submodels.size()) + " sub-models");
  }
  const double inv_d = 1.0 / static_cast<double>(submodels.size());
  if (rule == AggregationRule::literal_models) {
    ParameterVector acc(global.dim());
    for (std::size_t i = 0; i < submodels.size(); ++i) acc.axpy(penalties[i].c, submodels[i].materialized);
    return acc *= inv_d;
  }
  ParameterVector acc(global.dim());
  for (std::size_t i = 0; i < submodels.size(); ++i) acc.axpy(penalties[i].c, submodels[i].mean_delta);
  return global + acc * inv_d;
}

}  // namespace cvfl
