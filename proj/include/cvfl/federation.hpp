#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvfl/attacks.hpp"
#include "cvfl/common.hpp"
#include "cvfl/error.hpp"
#include "cvfl/model.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

enum class Role { honest, malicious };

struct ClientState {
  ClientId id;
  Dataset data;
  Role role = Role::honest;
  std::optional<AttackSpec> attack;
  std::optional<ReportStrategy> report_strategy;
  // Training set used once the attack is active; built from data by the harness.
  std::optional<Dataset> poisoned_data;
  // Local training used once the attack is active; defaults to the round's.
  std::optional<TrainConfig> attack_train;

  bool malicious() const noexcept { return role == Role::malicious; }

  void validate() const {
    if (role == Role::honest && (attack || report_strategy || poisoned_data || attack_train)) {
      throw InputError("honest client " + to_string(id) + " carries attack state");
    }
  }
};

struct RoundContext {
  int t = 0;
  std::vector<ClientId> selected;  // S_t, sorted
  ParameterVector global;          // w_t
};

// Uniformly random K-subset of pool, returned sorted.
inline std::vector<ClientId> select_clients(std::span<const ClientId> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) {
    throw InputError("cannot select " + std::to_string(k) + " clients from a pool of " +
                     std::to_string(pool.size()));
  }
  std::vector<ClientId> ids(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Per-client training stream for round t.
inline Rng client_train_stream(std::uint64_t master_seed, int t, ClientId id) {
  return make_stream(master_seed, "train", {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(id.value)});
}

// One record per selected client, sorted by owner. Honest clients (and
// malicious ones before the attack starts) submit a plain local_train delta;
// active attackers train on their poisoned data and pass the result through
// craft_update. Full-replacement attackers see the round's honest deltas.
inline std::vector<UpdateRecord> collect_updates(const RoundContext& ctx, std::span<const ClientState> clients,
                                                 const ModelSpec& spec, const TrainConfig& cfg,
                                                 std::uint64_t master_seed, bool attack_active = false) {
  auto find = [&](ClientId id) -> const ClientState& {
    for (const auto& c : clients) {
      if (c.id == id) return c;
    }
    throw InputError("selected client " + to_string(id) + " is not in the client list");
  };

  std::vector<UpdateRecord> out;
  out.reserve(ctx.selected.size());
  std::vector<const ClientState*> attackers;
  for (ClientId id : ctx.selected) {
    const ClientState& client = find(id);
    if (attack_active && client.malicious() && client.attack) {
      attackers.push_back(&client);
      out.push_back({id, {}});
      continue;
    }
    try {
      Rng rng = client_train_stream(master_seed, ctx.t, id);
      out.push_back({id, local_train(spec, ctx.global, client.data, cfg, rng)});
    } catch (const InputError& e) {
      throw ClientError(id.value, e.what());
    }
  }

  if (attackers.empty()) return out;

  std::vector<ParameterVector> honest;
  for (const auto& rec : out) {
    if (!rec.delta.empty()) honest.push_back(rec.delta);
  }
  for (const ClientState* attacker : attackers) {
    try {
      const Dataset& train_set = attacker->poisoned_data ? *attacker->poisoned_data : attacker->data;
      Rng rng = client_train_stream(master_seed, ctx.t, attacker->id);
      const TrainConfig& train_cfg = attacker->attack_train ? *attacker->attack_train : cfg;
      const ParameterVector target = ctx.global + local_train(spec, ctx.global, train_set, train_cfg, rng);
      std::optional<std::span<const ParameterVector>> others;
      if (attacker->attack->scaling.mode == ScalingMode::full_replacement) others = std::span(honest);
      ParameterVector delta = craft_update(attacker->attack->scaling, target, ctx.global, others);
      for (auto& rec : out) {
        if (rec.owner == attacker->id) rec.delta = std::move(delta);
      }
    } catch (const InputError& e) {
      throw ClientError(attacker->id.value, e.what());
    }
  }
  return out;
}

// w_t + mean of the deltas, summed in client-id order.
inline ParameterVector fedavg_aggregate(const ParameterVector& global, std::span<const UpdateRecord> updates) {
  if (updates.empty()) throw InputError("aggregation over an empty update list");
  std::vector<const UpdateRecord*> ordered;
  for (const auto& u : updates) {
    global.check_same_dim(u.delta, "fedavg_aggregate");
    ordered.push_back(&u);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const UpdateRecord* a, const UpdateRecord* b) { return a->owner < b->owner; });
  ParameterVector sum(global.dim());
  for (const auto* u : ordered) sum += u->delta;
  return global + sum * (1.0 / static_cast<double>(updates.size()));
}

}  // namespace cvfl
