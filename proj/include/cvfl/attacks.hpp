#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cvfl/error.hpp"
#include "cvfl/model.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/plan.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

// Feature predicate standing in for a semantic trigger: a sample of
// source_class matches when its features lie closer to centers[index] than
// to any other center of that class (a designated sub-cluster). Test-time
// inputs are never modified.
struct Trigger {
  int source_class = 0;
  std::vector<std::vector<double>> centers;
  int index = 0;

  bool matches(const Sample& s) const {
    if (s.label != source_class || centers.empty()) return false;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < s.features.size(); ++i) {
        const double diff = s.features[i] - centers[k][i];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return static_cast<int>(best) == index;
  }
};

struct LabelFlip {
  int src = 0;
  int dst = 0;
};

// Mislabel a fraction of samples with one target class.
struct LabelFraction {
  double fraction = 0.0;
  int target = 0;
};

struct Backdoor {
  Trigger trigger;
  int target = 0;
  int augment_copies = 0;
  double jitter_scale = 0.0;
};

enum class ScalingMode { none, scale_by_factor, full_replacement };

struct ScalingSpec {
  ScalingMode mode = ScalingMode::none;
  double factor = 1.0;  // meaningful for scale_by_factor only

  void validate() const {
    if (mode == ScalingMode::scale_by_factor && !(factor > 0.0)) {
      throw InputError("scaling factor must be positive");
    }
  }
};

struct AttackSpec {
  std::variant<LabelFlip, LabelFraction, Backdoor> kind;
  ScalingSpec scaling;

  void validate(int num_classes) const {
    auto valid = [&](int c) { return c >= 0 && c < num_classes; };
    if (const auto* f = std::get_if<LabelFlip>(&kind)) {
      if (!valid(f->src) || !valid(f->dst)) throw InputError("label-flip classes out of range");
      if (f->src == f->dst) throw InputError("label-flip source and destination must differ");
    } else if (const auto* p = std::get_if<LabelFraction>(&kind)) {
      if (!(p->fraction > 0.0 && p->fraction <= 1.0)) throw InputError("poison fraction must be in (0, 1]");
      if (!valid(p->target)) throw InputError("poison target class out of range");
    } else if (const auto* b = std::get_if<Backdoor>(&kind)) {
      if (!valid(b->target)) throw InputError("backdoor target class out of range");
      if (!valid(b->trigger.source_class)) throw InputError("backdoor trigger class out of range");
      if (b->trigger.source_class == b->target) {
        throw InputError("backdoor trigger class must differ from the target class");
      }
      if (b->augment_copies < 0 || b->jitter_scale < 0.0) {
        throw InputError("backdoor augment_copies and jitter_scale must be nonnegative");
      }
    }
    scaling.validate();
  }
};

enum class ReportKind { always_clear, frame_honest };

struct ReportStrategy {
  ReportKind kind = ReportKind::always_clear;
  double frame_rate = 0.0;  // frame_honest only
};

inline Dataset poison_labelflip(Dataset data, int src, int dst) {
  if (src == dst) throw InputError("label-flip source and destination must differ");
  if (src < 0 || dst < 0 || src >= data.num_classes || dst >= data.num_classes) {
    throw InputError("label-flip classes out of range");
  }
  for (auto& s : data.samples) {
    if (s.label == src) s.label = dst;
  }
  return data;
}

// Relabels ceil(fraction * |data|) uniformly chosen samples as target.
inline Dataset poison_fraction(Dataset data, double fraction, int target, Rng& rng) {
  if (data.empty()) throw InputError("cannot poison an empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("poison fraction must be in (0, 1]");
  if (target < 0 || target >= data.num_classes) throw InputError("poison target class out of range");
  const auto n = data.size();
  auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  count = std::min(count, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
    data.samples[idx[i]].label = target;
  }
  return data;
}

// Relabels trigger matches as target and appends augment_copies jittered
// copies of them (cycled in order), all labeled target.
inline Dataset poison_backdoor(Dataset data, const Trigger& trigger, int target, int augment_copies,
                               double jitter_scale, Rng& rng) {
  if (target < 0 || target >= data.num_classes) throw InputError("backdoor target class out of range");
  if (augment_copies < 0 || jitter_scale < 0.0) {
    throw InputError("augment_copies and jitter_scale must be nonnegative");
  }
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (trigger.matches(data.samples[i])) hits.push_back(i);
  }
  if (hits.empty()) throw InputError("backdoor trigger matches no sample");
  for (auto i : hits) data.samples[i].label = target;
  std::normal_distribution<double> noise(0.0, 1.0);
  data.samples.reserve(data.size() + static_cast<std::size_t>(augment_copies));
  for (int k = 0; k < augment_copies; ++k) {
    Sample copy = data.samples[hits[static_cast<std::size_t>(k) % hits.size()]];
    if (jitter_scale > 0.0) {
      for (double& f : copy.features) f += jitter_scale * noise(rng);
    }
    data.samples.push_back(std::move(copy));
  }
  return data;
}

inline Dataset poison(const Dataset& data, const AttackSpec& attack, Rng& rng) {
  return std::visit(
      [&](const auto& a) -> Dataset {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, LabelFlip>) {
          return poison_labelflip(data, a.src, a.dst);
        } else if constexpr (std::is_same_v<A, LabelFraction>) {
          return poison_fraction(data, a.fraction, a.target, rng);
        } else {
          return poison_backdoor(data, a.trigger, a.target, a.augment_copies, a.jitter_scale, rng);
        }
      },
      attack.kind);
}

// Turns the attacker's desired model X into the delta it submits.
//   none:             X - G
//   scale_by_factor:  factor * (X - G)
//   full_replacement: K(X - G) - sum(others), K = |others| + 1, so that
//                     G + mean(submitted, others...) == X.
// The full-replacement delta is the model-space replacement
// (n/eta)X - (n/eta - 1)G - sum(L_i - G) minus G, with n/eta = K.
inline ParameterVector craft_update(const ScalingSpec& scaling, const ParameterVector& target,
                                    const ParameterVector& global,
                                    std::optional<std::span<const ParameterVector>> others = std::nullopt) {
  target.check_same_dim(global, "craft_update");
  scaling.validate();
  ParameterVector diff = target - global;
  switch (scaling.mode) {
    case ScalingMode::none:
      return diff;
    case ScalingMode::scale_by_factor:
      return diff *= scaling.factor;
    case ScalingMode::full_replacement: {
      if (!others) throw InputError("full-replacement needs the other clients' deltas");
      const double k = static_cast<double>(others->size() + 1);
      diff *= k;
      for (const auto& o : *others) diff -= o;
      return diff;
    }
  }
  return diff;
}

// Reports filed by a colluding evaluator. poisoned(submodel) tells the
// attacker which sub-models carry a poisoned update.
inline std::vector<EvaluationReport> malicious_report(std::span<const Assignment> assignments,
                                                      const std::function<bool(int)>& poisoned,
                                                      const ReportStrategy& strategy, Rng& rng) {
  std::vector<EvaluationReport> out;
  std::bernoulli_distribution frame(std::clamp(strategy.frame_rate, 0.0, 1.0));
  for (const auto& a : assignments) {
    EvaluationReport rep{a.evaluator, a.submodel, a.classes, std::vector<bool>(a.classes.size(), false)};
    if (strategy.kind == ReportKind::frame_honest && !poisoned(a.submodel)) {
      for (std::size_t i = 0; i < rep.flags.size(); ++i) rep.flags[i] = frame(rng);
    }
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace cvfl
