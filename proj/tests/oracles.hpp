#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "cvfl/defense.hpp"

namespace cvfl::testing {

// Edmonds-Karp on a dense capacity matrix.
inline int max_flow(std::vector<std::vector<int>> cap, int source, int sink) {
  const int n = static_cast<int>(cap.size());
  int flow = 0;
  while (true) {
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    parent[static_cast<std::size_t>(source)] = source;
    std::queue<int> q;
    q.push(source);
    while (!q.empty() && parent[static_cast<std::size_t>(sink)] < 0) {
      const int v = q.front();
      q.pop();
      for (int w = 0; w < n; ++w) {
        if (parent[static_cast<std::size_t>(w)] < 0 && cap[static_cast<std::size_t>(v)][static_cast<std::size_t>(w)] > 0) {
          parent[static_cast<std::size_t>(w)] = v;
          q.push(w);
        }
      }
    }
    if (parent[static_cast<std::size_t>(sink)] < 0) return flow;
    int push = std::numeric_limits<int>::max();
    for (int v = sink; v != source; v = parent[static_cast<std::size_t>(v)]) {
      push = std::min(push, cap[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])][static_cast<std::size_t>(v)]);
    }
    for (int v = sink; v != source; v = parent[static_cast<std::size_t>(v)]) {
      const auto p = static_cast<std::size_t>(parent[static_cast<std::size_t>(v)]);
      cap[p][static_cast<std::size_t>(v)] -= push;
      cap[static_cast<std::size_t>(v)][p] += push;
    }
    flow += push;
  }
}

// An IID plan exists iff source -> sub (cap e) -> non-member (cap 1) -> sink
// (cap m) carries e*d units.
inline bool iid_feasible(std::span<const SubModel> subs, std::span<const ClientId> pool, int e, int m) {
  const int d = static_cast<int>(subs.size());
  const int p = static_cast<int>(pool.size());
  const int n = d + p + 2, source = d + p, sink = d + p + 1;
  std::vector<std::vector<int>> cap(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  for (int s = 0; s < d; ++s) {
    cap[static_cast<std::size_t>(source)][static_cast<std::size_t>(s)] = e;
    for (int k = 0; k < p; ++k) {
      const auto& mem = subs[static_cast<std::size_t>(s)].members;
      if (std::find(mem.begin(), mem.end(), pool[static_cast<std::size_t>(k)]) == mem.end()) {
        cap[static_cast<std::size_t>(s)][static_cast<std::size_t>(d + k)] = 1;
      }
    }
  }
  for (int k = 0; k < p; ++k) cap[static_cast<std::size_t>(d + k)][static_cast<std::size_t>(sink)] = m;
  return max_flow(cap, source, sink) == e * d;
}

// A non-IID plan exists iff some choice of evaluator sets E_s (non-members,
// each client in at most m sets) gives every class of every sub-model at
// least e holders; surplus holders can then simply skip that class.
inline bool noniid_feasible(std::span<const SubModel> subs, std::span<const ClassPresenceVector> presence, int e,
                            int m) {
  const std::size_t p = presence.size();
  const std::size_t nc = presence.empty() ? 0 : presence.front().present.size();
  std::vector<std::uint32_t> allowed(subs.size(), 0);
  for (std::size_t s = 0; s < subs.size(); ++s) {
    for (std::size_t k = 0; k < p; ++k) {
      const auto& mem = subs[s].members;
      if (std::find(mem.begin(), mem.end(), presence[k].client) == mem.end()) allowed[s] |= 1u << k;
    }
  }
  auto covers = [&](std::uint32_t set) {
    for (std::size_t c = 0; c < nc; ++c) {
      int n = 0;
      for (std::size_t k = 0; k < p; ++k) n += ((set >> k) & 1u) && presence[k].present[c];
      if (n < e) return false;
    }
    return true;
  };
  std::vector<int> load(p, 0);
  auto rec = [&](auto&& self, std::size_t s) -> bool {
    if (s == subs.size()) return true;
    for (std::uint32_t set = 0; set < (1u << p); ++set) {
      if ((set & ~allowed[s]) != 0 || !covers(set)) continue;
      bool ok = true;
      for (std::size_t k = 0; k < p; ++k) ok = ok && (!((set >> k) & 1u) || load[k] < m);
      if (!ok) continue;
      for (std::size_t k = 0; k < p; ++k) load[k] += (set >> k) & 1u;
      const bool found = self(self, s + 1);
      for (std::size_t k = 0; k < p; ++k) load[k] -= (set >> k) & 1u;
      if (found) return true;
    }
    return false;
  };
  return rec(rec, 0);
}

}  // namespace cvfl::testing
