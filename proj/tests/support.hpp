#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "cvfl/defense.hpp"
#include "cvfl/model.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/rng.hpp"

namespace cvfl::testing {

inline Dataset random_dataset(int n, int input_dim, int num_classes, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::uniform_int_distribution<int> label(0, num_classes - 1);
  Dataset d;
  d.num_classes = num_classes;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.features.resize(static_cast<std::size_t>(input_dim));
    for (double& v : s.features) v = normal(rng);
    s.label = label(rng);
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline ParameterVector random_vector(std::size_t dim, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  ParameterVector v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

// Central differences of the mean loss, one coordinate at a time.
inline ParameterVector numeric_gradient(const ModelSpec& spec, ParameterVector w, const std::vector<Sample>& batch,
                                        double h = 1e-5) {
  ParameterVector g(w.dim());
  for (std::size_t i = 0; i < w.dim(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = loss(spec, w, batch);
    w[i] = keep - h;
    const double down = loss(spec, w, batch);
    w[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<ClientId> ids(int n) {
  std::vector<ClientId> out;
  for (int i = 0; i < n; ++i) out.push_back(ClientId{i});
  return out;
}

// d disjoint sub-models of u members drawn from clients 0..pool-1.
inline std::vector<SubModel> random_groups(int pool, int d, int u, Rng& rng) {
  auto members = ids(pool);
  std::shuffle(members.begin(), members.end(), rng);
  std::vector<SubModel> subs(static_cast<std::size_t>(d));
  for (int s = 0; s < d; ++s) {
    subs[static_cast<std::size_t>(s)].id = s;
    for (int j = 0; j < u; ++j) subs[static_cast<std::size_t>(s)].members.push_back(members[static_cast<std::size_t>(s * u + j)]);
    std::sort(subs[static_cast<std::size_t>(s)].members.begin(), subs[static_cast<std::size_t>(s)].members.end());
  }
  return subs;
}

inline std::vector<ClassPresenceVector> random_presence(int pool, int classes, double density, Rng& rng) {
  std::bernoulli_distribution has(density);
  std::vector<ClassPresenceVector> out;
  for (int k = 0; k < pool; ++k) {
    ClassPresenceVector p{ClientId{k}, std::vector<bool>(static_cast<std::size_t>(classes)), 1};
    for (std::size_t c = 0; c < p.present.size(); ++c) p.present[c] = has(rng);
    out.push_back(p);
  }
  return out;
}

}  // namespace cvfl::testing
