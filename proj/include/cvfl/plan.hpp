#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cvfl/common.hpp"
#include "cvfl/parameter_vector.hpp"

namespace cvfl {

// Average of u update deltas, plus that average applied to the global model.
struct SubModel {
  int id = 0;
  std::vector<ClientId> members;  // sorted
  ParameterVector mean_delta;
  ParameterVector materialized;  // w_t + mean_delta
};

enum class DelegationMode { iid, noniid };

// One evaluation task: evaluator checks the listed classes of a sub-model.
struct Assignment {
  ClientId evaluator;
  int submodel = 0;
  std::vector<int> classes;  // sorted
};

struct DelegationPlan {
  DelegationMode mode = DelegationMode::iid;
  int d = 0;  // sub-models
  int u = 0;  // updates per sub-model
  int e = 0;  // evaluators per sub-model (IID) or per (sub-model, class) (non-IID)
  int m = 0;  // max sub-models per evaluator
  std::vector<std::vector<Assignment>> per_submodel;

  // Every task assigned to one evaluator, in sub-model order.
  std::vector<Assignment> tasks_for(ClientId evaluator) const {
    std::vector<Assignment> out;
    for (const auto& tasks : per_submodel) {
      for (const auto& a : tasks) {
        if (a.evaluator == evaluator) out.push_back(a);
      }
    }
    return out;
  }

  std::vector<ClientId> evaluators() const {
    std::vector<ClientId> out;
    for (const auto& tasks : per_submodel) {
      for (const auto& a : tasks) out.push_back(a.evaluator);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

struct EvaluationReport {
  ClientId evaluator;
  int submodel = 0;
  std::vector<int> classes;  // same order as the assignment
  std::vector<bool> flags;   // true = anomalous

  bool any_flag() const {
    for (bool f : flags) {
      if (f) return true;
    }
    return false;
  }
};

}  // namespace cvfl
