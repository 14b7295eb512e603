#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvfl/common.hpp"
#include "cvfl/error.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/plan.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

struct DpConfig {
  double clip = 15.0;   // S
  double sigma = 0.0;   // noise std is sigma * S
  bool submodels = true;
  bool global = false;

  void validate() const {
    if (!(clip > 0.0)) throw InputError("DP clipping bound S must be positive");
    if (!(sigma >= 0.0)) throw InputError("DP sigma must be nonnegative");
  }
};

// delta / max(1, ||delta|| / S)
inline ParameterVector clip_delta(ParameterVector delta, double clip) {
  if (!(clip > 0.0)) throw InputError("clipping bound must be positive");
  const double norm = l2_norm(delta);
  const double scale = std::max(1.0, norm / clip);
  if (scale > 1.0) delta *= 1.0 / scale;
  return delta;
}

// (1/K) (sum_i clip(delta_i, S) + N(0, sigma^2 S^2 I)); the noise is drawn
// once for the group sum.
inline ParameterVector dp_mean(std::span<const ParameterVector> deltas, double clip, double sigma, Rng& rng) {
  if (deltas.empty()) throw InputError("dp_mean over an empty list");
  if (!(sigma >= 0.0)) throw InputError("sigma must be nonnegative");
  ParameterVector sum(deltas.front().dim());
  for (const auto& d : deltas) sum += clip_delta(d, clip);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma * clip);
    for (double& v : sum) v += noise(rng);
  }
  return sum *= 1.0 / static_cast<double>(deltas.size());
}

// Replaces the sub-model's mean with the noised clipped mean of its members'
// deltas. updates must contain every member's record.
inline SubModel perturb_submodel(const SubModel& sub, std::span<const UpdateRecord> updates,
                                 const ParameterVector& global, double clip, double sigma, Rng& rng) {
  std::vector<ParameterVector> member_deltas;
  for (ClientId id : sub.members) {
    const auto it = std::find_if(updates.begin(), updates.end(), [&](const UpdateRecord& r) { return r.owner == id; });
    if (it == updates.end()) throw InputError("no update for sub-model member " + to_string(id));
    member_deltas.push_back(it->delta);
  }
  SubModel out = sub;
  out.mean_delta = dp_mean(member_deltas, clip, sigma, rng);
  out.materialized = global + out.mean_delta;
  return out;
}

// Throws unless the sub-models' member sets are pairwise disjoint, which is
// what lets one noise draw per group count once against the privacy budget.
inline void require_disjoint_members(std::span<const SubModel> subs) {
  std::vector<ClientId> all;
  for (const auto& s : subs) all.insert(all.end(), s.members.begin(), s.members.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw InputError("sub-model member sets overlap; noise cannot be applied per group");
  }
}

}  // namespace cvfl
