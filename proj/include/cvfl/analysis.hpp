#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cvfl/defense.hpp"
#include "cvfl/error.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

// One round's sampling setup: K updates of which `malicious` come from
// colluding clients; a sub-model averages u of them and is evaluated by e
// clients drawn from the K - u non-members. t is the number of malicious
// evaluators asked about.
struct EvasionParams {
  int clients = 0;    // K
  int malicious = 0;  // K*p
  int u = 1;
  int e = 1;
  int t = 0;

  static EvasionParams from_proportion(int clients, double p, int u, int e, int t) {
    const double kp = clients * p;
    const double rounded = std::round(kp);
    if (std::abs(kp - rounded) > 1e-9) {
      throw InputError("K*p = " + std::to_string(kp) + " is not a whole number of clients");
    }
    return {clients, static_cast<int>(rounded), u, e, t};
  }

  void validate() const {
    if (clients < 1) throw InputError("K must be positive");
    if (malicious < 0 || malicious > clients) throw InputError("malicious count must be in [0, K]");
    if (u < 1 || u > clients) throw InputError("u must be in [1, K]");
    if (e < 0 || e > clients - u) throw InputError("e must be in [0, K - u]");
    if (t < 0 || t > e) throw InputError("t must be in [0, e]");
  }
};

// Which event the probability describes.
enum class EvasionReading {
  // Sum over i = 1..u of P(i poisoned members) * P(t malicious evaluators | i):
  // the sub-model holds >= 1 poisoned update and exactly t evaluators collude.
  any_poisoned_joint,
  // Same, conditioned on the sub-model holding >= 1 poisoned update.
  any_poisoned_conditional,
  // Only the i = 1 term: exactly one poisoned update, joint probability.
  single_poisoned_joint,
  // Exactly one poisoned update, conditioned on that event.
  single_poisoned_conditional,
};

inline const char* to_string(EvasionReading r) {
  switch (r) {
    case EvasionReading::any_poisoned_joint: return "any_joint";
    case EvasionReading::any_poisoned_conditional: return "any_conditional";
    case EvasionReading::single_poisoned_joint: return "single_joint";
    case EvasionReading::single_poisoned_conditional: return "single_conditional";
  }
  return "?";
}

// log C(n, k), or -inf where the coefficient is zero by convention
// (negative or out-of-range arguments).
inline double log_binomial(long long n, long long k) {
  if (n < 0 || k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

namespace detail {

// P(exactly i of the u members are malicious)
inline double member_term(const EvasionParams& p, int i) {
  const long long k = p.clients, mal = p.malicious, hon = k - mal;
  const double lg = log_binomial(hon, p.u - i) + log_binomial(mal, i) - log_binomial(k, p.u);
  return std::isinf(lg) ? 0.0 : std::exp(lg);
}

// P(exactly t of e evaluators malicious | i malicious members)
inline double evaluator_term(const EvasionParams& p, int i) {
  const long long k = p.clients, mal = p.malicious, hon = k - mal;
  const double lg = log_binomial(mal - i, p.t) + log_binomial(hon - p.u + i, p.e - p.t) -
                    log_binomial(k - p.u, p.e);
  return std::isinf(lg) ? 0.0 : std::exp(lg);
}

}  // namespace detail

inline double p_evade_exact(const EvasionParams& params,
                            EvasionReading reading = EvasionReading::any_poisoned_joint) {
  params.validate();
  const bool single = reading == EvasionReading::single_poisoned_joint ||
                      reading == EvasionReading::single_poisoned_conditional;
  const int lo = 1;
  const int hi = single ? 1 : params.u;
  double joint = 0.0;
  double condition = 0.0;
  for (int i = lo; i <= hi; ++i) {
    const double m = detail::member_term(params, i);
    condition += m;
    joint += m * detail::evaluator_term(params, i);
  }
  if (reading == EvasionReading::any_poisoned_joint || reading == EvasionReading::single_poisoned_joint) {
    return joint;
  }
  return condition > 0.0 ? joint / condition : 0.0;
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  long long trials = 0;     // trials drawn
  long long effective = 0;  // trials in the estimator's denominator
};

// Simulates the draw literally: u members from K clients (ids below
// `malicious` are colluders), then e evaluators from the remaining K - u.
inline MonteCarloEstimate p_evade_montecarlo(const EvasionParams& params, EvasionReading reading, long long trials,
                                             Rng& rng) {
  params.validate();
  if (trials < 1) throw InputError("Monte Carlo needs at least one trial");
  const bool single = reading == EvasionReading::single_poisoned_joint ||
                      reading == EvasionReading::single_poisoned_conditional;
  const bool conditional = reading == EvasionReading::any_poisoned_conditional ||
                           reading == EvasionReading::single_poisoned_conditional;

  std::vector<int> ids(static_cast<std::size_t>(params.clients));
  std::iota(ids.begin(), ids.end(), 0);
  const auto n = ids.size();
  const auto u = static_cast<std::size_t>(params.u);
  const auto e = static_cast<std::size_t>(params.e);

  long long hits = 0;
  long long conditioned = 0;
  for (long long trial = 0; trial < trials; ++trial) {
    int in_sub = 0;
    for (std::size_t j = 0; j < u; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, n - 1);
      std::swap(ids[j], ids[pick(rng)]);
      in_sub += ids[j] < params.malicious ? 1 : 0;
    }
    const bool holds = single ? in_sub == 1 : in_sub >= 1;
    if (!holds) continue;
    ++conditioned;
    int bad_evaluators = 0;
    for (std::size_t j = u; j < u + e; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, n - 1);
      std::swap(ids[j], ids[pick(rng)]);
      bad_evaluators += ids[j] < params.malicious ? 1 : 0;
    }
    if (bad_evaluators == params.t) ++hits;
  }

  MonteCarloEstimate out;
  out.trials = trials;
  out.effective = conditional ? conditioned : trials;
  if (out.effective == 0) return out;
  const double p = static_cast<double>(hits) / static_cast<double>(out.effective);
  out.estimate = p;
  out.standard_error = std::sqrt(p * (1.0 - p) / static_cast<double>(out.effective));
  return out;
}

inline std::vector<std::pair<int, double>> penalty_curve(int e, double v, int r_max) {
  if (r_max < 0) throw InputError("r_max must be nonnegative");
  std::vector<std::pair<int, double>> rows;
  for (int r = 0; r <= r_max; ++r) rows.emplace_back(r, penalty(r, e, v));
  return rows;
}

}  // namespace cvfl
