#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "cvfl/federation.hpp"
#include "support.hpp"

using namespace cvfl;
using cvfl::testing::random_dataset;
using cvfl::testing::random_vector;

namespace {

std::vector<ClientId> ids(int n) {
  std::vector<ClientId> out;
  for (int i = 0; i < n; ++i) out.push_back(ClientId{i});
  return out;
}

std::vector<ClientState> make_clients(int n, const ModelSpec& spec, Rng& rng) {
  std::vector<ClientState> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({ClientId{i}, random_dataset(12, spec.input_dim, spec.num_classes, rng), Role::honest, {}, {}, {}, {}});
  }
  return out;
}

}  // namespace

TEST(SelectClients, WholePoolWhenKEqualsPool) {
  Rng rng(1);
  const auto pool = ids(7);
  EXPECT_EQ(select_clients(pool, 7, rng), pool);
}

TEST(SelectClients, DeterministicSortedAndDistinct) {
  const auto pool = ids(10);
  Rng a(42), b(42);
  const auto x = select_clients(pool, 4, a);
  EXPECT_EQ(x, select_clients(pool, 4, b));
  EXPECT_TRUE(std::is_sorted(x.begin(), x.end()));
  EXPECT_EQ(std::adjacent_find(x.begin(), x.end()), x.end());
}

TEST(SelectClients, RejectsKLargerThanPool) {
  Rng rng(1);
  EXPECT_THROW(select_clients(ids(3), 4, rng), InputError);
}

TEST(SelectClients, SubsetsAreUniform) {
  // 10 choose 3 = 120 subsets; chi-square with 119 dof, 0.1% critical value ~ 169.
  const auto pool = ids(10);
  Rng rng(7);
  std::map<std::vector<ClientId>, int> counts;
  const int trials = 60000;
  for (int i = 0; i < trials; ++i) ++counts[select_clients(pool, 3, rng)];
  ASSERT_EQ(counts.size(), 120u);
  const double expected = trials / 120.0;
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 169.0);
}

TEST(SelectClients, InclusionFrequencyIsKOverN) {
  const auto pool = ids(20);
  Rng rng(99);
  std::vector<int> hits(20, 0);
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    for (auto c : select_clients(pool, 5, rng)) ++hits[static_cast<std::size_t>(c.value)];
  }
  const double p = 0.25, se = std::sqrt(p * (1 - p) / trials);
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / trials, p, 5 * se);
}

TEST(CollectUpdates, HonestDeltasReplayLocalTraining) {
  Rng rng(3);
  const ModelSpec spec{ModelKind::softmax_linear, 3, 3, 0};
  const auto clients = make_clients(6, spec, rng);
  const TrainConfig cfg{4, 3, 0.1};
  const auto w = random_vector(spec.parameter_count(), rng, 0.1);
  const RoundContext ctx{5, {ClientId{1}, ClientId{3}, ClientId{4}}, w};
  const auto updates = collect_updates(ctx, clients, spec, cfg, 123);
  ASSERT_EQ(updates.size(), 3u);
  for (const auto& u : updates) {
    Rng stream = client_train_stream(123, 5, u.owner);
    const auto want = local_train(spec, w, clients[static_cast<std::size_t>(u.owner.value)].data, cfg, stream);
    EXPECT_EQ(u.delta, want);
  }
  EXPECT_EQ(updates[0].owner, ClientId{1});
  EXPECT_EQ(updates[2].owner, ClientId{4});
}

TEST(CollectUpdates, AttackersActOnlyOnceActive) {
  Rng rng(4);
  const ModelSpec spec{ModelKind::softmax_linear, 3, 3, 0};
  auto clients = make_clients(4, spec, rng);
  auto& bad = clients[2];
  bad.role = Role::malicious;
  bad.attack = AttackSpec{LabelFlip{0, 1}, {ScalingMode::scale_by_factor, 3.0}};
  bad.poisoned_data = poison_labelflip(bad.data, 0, 1);
  const TrainConfig cfg{3, 2, 0.1};
  const auto w = random_vector(spec.parameter_count(), rng, 0.1);
  const RoundContext ctx{1, ids(4), w};

  const auto quiet = collect_updates(ctx, clients, spec, cfg, 9, false);
  Rng honest_stream = client_train_stream(9, 1, ClientId{2});
  EXPECT_EQ(quiet[2].delta, local_train(spec, w, bad.data, cfg, honest_stream));

  const auto loud = collect_updates(ctx, clients, spec, cfg, 9, true);
  Rng poison_stream = client_train_stream(9, 1, ClientId{2});
  const auto x = w + local_train(spec, w, *bad.poisoned_data, cfg, poison_stream);
  EXPECT_LE(max_abs_diff(loud[2].delta, (x - w) * 3.0), 1e-15);
  EXPECT_EQ(loud[0].delta, quiet[0].delta);
}

TEST(CollectUpdates, FullReplacementLandsOnTarget) {
  Rng rng(5);
  const ModelSpec spec{ModelKind::softmax_linear, 3, 3, 0};
  auto clients = make_clients(5, spec, rng);
  clients[0].role = Role::malicious;
  clients[0].attack = AttackSpec{LabelFlip{0, 1}, {ScalingMode::full_replacement, 1.0}};
  clients[0].poisoned_data = poison_labelflip(clients[0].data, 0, 1);
  const TrainConfig cfg{3, 2, 0.1};
  const auto w = random_vector(spec.parameter_count(), rng, 0.1);
  const RoundContext ctx{2, ids(5), w};
  const auto updates = collect_updates(ctx, clients, spec, cfg, 1, true);
  Rng stream = client_train_stream(1, 2, ClientId{0});
  const auto x = w + local_train(spec, w, *clients[0].poisoned_data, cfg, stream);
  EXPECT_LE(max_abs_diff(fedavg_aggregate(w, updates), x), 1e-12);
}

TEST(CollectUpdates, ClientFailureNamesTheClient) {
  Rng rng(6);
  const ModelSpec spec{ModelKind::softmax_linear, 3, 3, 0};
  auto clients = make_clients(3, spec, rng);
  clients[1].data.samples.resize(1);
  const RoundContext ctx{1, ids(3), ParameterVector(spec.parameter_count())};
  try {
    collect_updates(ctx, clients, spec, {2, 4, 0.1}, 1);
    FAIL() << "expected ClientError";
  } catch (const ClientError& e) {
    EXPECT_EQ(e.client(), 1);
  }
}

TEST(FedAvg, MeanOfDeltasAddedToGlobal) {
  const ParameterVector g(std::vector<double>{1, 1});
  const std::vector<UpdateRecord> ups{{ClientId{0}, ParameterVector(std::vector<double>{2, 0})},
                                      {ClientId{1}, ParameterVector(std::vector<double>{0, 4})}};
  EXPECT_EQ(fedavg_aggregate(g, ups).values(), (std::vector<double>{2, 3}));
  EXPECT_THROW(fedavg_aggregate(g, std::vector<UpdateRecord>{}), InputError);
}

TEST(FedAvg, BitwiseInvariantUnderPermutation) {
  Rng rng(10);
  const auto g = random_vector(50, rng);
  std::vector<UpdateRecord> ups;
  for (int i = 0; i < 17; ++i) ups.push_back({ClientId{i}, random_vector(50, rng, 1e3)});
  const auto ref = fedavg_aggregate(g, ups);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(ups.begin(), ups.end(), rng);
    EXPECT_EQ(fedavg_aggregate(g, ups), ref);
  }
}

TEST(ClientState, HonestClientsCarryNoAttackState) {
  ClientState c{ClientId{0}, Dataset{2, {}}, Role::honest, AttackSpec{}, {}, {}, {}};
  EXPECT_THROW(c.validate(), InputError);
  c.role = Role::malicious;
  EXPECT_NO_THROW(c.validate());
}
