#pragma once

#include <algorithm>
#include <map>
#include <string>

#include "cvfl/defense.hpp"

namespace cvfl::testing {

// Empty string when the plan satisfies the delegation invariants, otherwise a
// description of the first violation.
inline std::string iid_plan_violation(const DelegationPlan& plan, std::span<const SubModel> subs, int e, int m,
                                      int num_classes) {
  std::map<ClientId, int> load;
  if (plan.per_submodel.size() != subs.size()) return "wrong sub-model count";
  for (std::size_t s = 0; s < subs.size(); ++s) {
    const auto& tasks = plan.per_submodel[s];
    if (static_cast<int>(tasks.size()) != e) return "sub-model " + std::to_string(s) + " has " + std::to_string(tasks.size()) + " evaluators";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto& a = tasks[i];
      const auto& mem = subs[s].members;
      if (std::find(mem.begin(), mem.end(), a.evaluator) != mem.end()) return "self-evaluation";
      if (i > 0 && tasks[i - 1].evaluator == a.evaluator) return "duplicate evaluator";
      if (static_cast<int>(a.classes.size()) != num_classes) return "IID task does not cover all classes";
      if (a.submodel != subs[s].id) return "task points at the wrong sub-model";
      ++load[a.evaluator];
    }
  }
  for (const auto& [_, n] : load) {
    if (n > m) return "evaluator load exceeds m";
  }
  return {};
}

inline std::string noniid_plan_violation(const DelegationPlan& plan, std::span<const SubModel> subs,
                                         std::span<const ClassPresenceVector> presence, int e, int m) {
  std::map<ClientId, const ClassPresenceVector*> by_id;
  for (const auto& p : presence) by_id[p.client] = &p;
  const std::size_t nc = presence.front().present.size();
  std::map<ClientId, int> load;
  if (plan.per_submodel.size() != subs.size()) return "wrong sub-model count";
  for (std::size_t s = 0; s < subs.size(); ++s) {
    std::vector<int> per_class(nc, 0);
    const auto& tasks = plan.per_submodel[s];
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto& a = tasks[i];
      const auto& mem = subs[s].members;
      if (std::find(mem.begin(), mem.end(), a.evaluator) != mem.end()) return "self-evaluation";
      if (i > 0 && tasks[i - 1].evaluator == a.evaluator) return "duplicate evaluator";
      if (a.classes.empty()) return "task with no classes";
      const auto it = by_id.find(a.evaluator);
      if (it == by_id.end()) return "evaluator outside the pool";
      for (int c : a.classes) {
        if (!it->second->present[static_cast<std::size_t>(c)]) return "evaluator lacks an assigned class";
        ++per_class[static_cast<std::size_t>(c)];
      }
      ++load[a.evaluator];
    }
    for (std::size_t c = 0; c < nc; ++c) {
      if (per_class[c] != e) {
        return "sub-model " + std::to_string(s) + " class " + std::to_string(c) + " has " +
               std::to_string(per_class[c]) + " evaluators";
      }
    }
  }
  for (const auto& [_, n] : load) {
    if (n > m) return "evaluator load exceeds m";
  }
  return {};
}

}  // namespace cvfl::testing
