#include <gtest/gtest.h>

#include "cvfl/attacks.hpp"
#include "cvfl/federation.hpp"
#include "support.hpp"

using namespace cvfl;
using cvfl::testing::random_vector;

namespace {

Dataset labeled(std::vector<int> labels, int classes = 10) {
  Dataset d{classes, {}};
  double x = 0.0;
  for (int l : labels) d.samples.push_back({{x++, 0.0}, l});
  return d;
}

std::vector<int> labels_of(const Dataset& d) {
  std::vector<int> out;
  for (const auto& s : d.samples) out.push_back(s.label);
  return out;
}

}  // namespace

TEST(LabelFlip, RelabelsEverySourceSample) {
  const auto d = labeled({1, 0, 1, 7, 1, 5});
  const auto p = poison_labelflip(d, 1, 5);
  EXPECT_EQ(labels_of(p), (std::vector<int>{5, 0, 5, 7, 5, 5}));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(p.samples[i].features, d.samples[i].features);
}

TEST(LabelFlip, AbsentSourceAndIdempotence) {
  const auto d = labeled({0, 2, 3});
  EXPECT_EQ(labels_of(poison_labelflip(d, 1, 5)), labels_of(d));
  const auto once = poison_labelflip(labeled({1, 1, 4}), 1, 5);
  EXPECT_EQ(labels_of(poison_labelflip(once, 1, 5)), labels_of(once));
  EXPECT_THROW(poison_labelflip(d, 3, 3), InputError);
  EXPECT_THROW(poison_labelflip(d, 3, 10), InputError);
}

TEST(LabelFraction, RelabelsCeilOfFraction) {
  std::vector<int> labels(100, 3);
  Rng rng(1);
  const auto p = poison_fraction(labeled(labels), 0.02, 7, rng);
  int changed = 0;
  for (const auto& s : p.samples) changed += s.label == 7;
  EXPECT_EQ(changed, 2);

  Rng rng2(1);
  const auto q = poison_fraction(labeled(std::vector<int>(7, 3)), 0.2, 0, rng2);
  changed = 0;
  for (const auto& s : q.samples) changed += s.label == 0;
  EXPECT_EQ(changed, 2);  // ceil(1.4)

  Rng rng3(1);
  const auto all = poison_fraction(labeled({1, 2, 3}), 1.0, 0, rng3);
  EXPECT_EQ(labels_of(all), (std::vector<int>{0, 0, 0}));
  EXPECT_THROW(poison_fraction(labeled({1}), 0.0, 0, rng3), InputError);
}

TEST(LabelFraction, DeterministicPerSeed) {
  std::vector<int> labels(50, 1);
  Rng a(5), b(5);
  EXPECT_EQ(labels_of(poison_fraction(labeled(labels), 0.1, 2, a)), labels_of(poison_fraction(labeled(labels), 0.1, 2, b)));
}

TEST(Backdoor, RelabelsTriggerMatchesAndAugments) {
  // class 2 has two sub-cluster centers; the trigger is the one near (10, 0)
  Trigger trig{2, {{0.0, 0.0}, {10.0, 0.0}}, 1};
  Dataset d{4, {{{9.0, 0.5}, 2}, {{0.5, 0.0}, 2}, {{9.5, 0.0}, 1}, {{11.0, 0.0}, 2}}};
  Rng rng(3);
  const auto p = poison_backdoor(d, trig, 3, 3, 0.0, rng);
  ASSERT_EQ(p.size(), 7u);
  EXPECT_EQ(labels_of(p), (std::vector<int>{3, 2, 1, 3, 3, 3, 3}));
  EXPECT_EQ(p.samples[4].features, d.samples[0].features);
  EXPECT_EQ(p.samples[5].features, d.samples[3].features);
  EXPECT_EQ(p.samples[6].features, d.samples[0].features);

  Rng rng2(3);
  const auto jittered = poison_backdoor(d, trig, 3, 1, 0.5, rng2);
  EXPECT_NE(jittered.samples[4].features, d.samples[0].features);
}

TEST(Backdoor, NoMatchingSampleIsAnError) {
  Trigger trig{2, {{0.0, 0.0}, {10.0, 0.0}}, 1};
  Dataset d{4, {{{0.0, 0.0}, 2}, {{10.0, 0.0}, 1}}};
  Rng rng(1);
  EXPECT_THROW(poison_backdoor(d, trig, 3, 0, 0.0, rng), InputError);
}

TEST(AttackSpec, Validation) {
  EXPECT_THROW((AttackSpec{LabelFlip{1, 1}, {}}.validate(10)), InputError);
  EXPECT_THROW((AttackSpec{LabelFlip{1, 12}, {}}.validate(10)), InputError);
  EXPECT_THROW((AttackSpec{LabelFlip{1, 5}, {ScalingMode::scale_by_factor, 0.0}}.validate(10)), InputError);
  EXPECT_NO_THROW((AttackSpec{LabelFlip{1, 5}, {ScalingMode::scale_by_factor, 10.0}}.validate(10)));
}

TEST(CraftUpdate, NoneAndScale) {
  const ParameterVector g(std::vector<double>{1, 2});
  const ParameterVector x(std::vector<double>{2, 0});
  EXPECT_EQ(craft_update({ScalingMode::none, 1.0}, x, g).values(), (std::vector<double>{1, -2}));
  EXPECT_EQ(craft_update({ScalingMode::scale_by_factor, 10.0}, x, g).values(), (std::vector<double>{10, -20}));
  EXPECT_THROW(craft_update({ScalingMode::full_replacement, 1.0}, x, g), InputError);
}

TEST(CraftUpdate, FullReplacementReproducesTarget) {
  Rng rng(17);
  for (int k : {1, 2, 5, 10, 20}) {
    const auto g = random_vector(40, rng);
    const auto x = random_vector(40, rng);
    std::vector<ParameterVector> honest;
    for (int i = 0; i < k - 1; ++i) honest.push_back(random_vector(40, rng, 0.3));
    std::vector<UpdateRecord> all{{ClientId{0}, craft_update({ScalingMode::full_replacement, 1.0}, x, g, honest)}};
    for (int i = 0; i < k - 1; ++i) all.push_back({ClientId{i + 1}, honest[static_cast<std::size_t>(i)]});
    EXPECT_LE(max_abs_diff(fedavg_aggregate(g, all), x), 1e-9) << "K=" << k;
  }
}

TEST(CraftUpdate, SingleClientReplacementIsPlainDelta) {
  Rng rng(2);
  const auto g = random_vector(5, rng), x = random_vector(5, rng);
  const std::vector<ParameterVector> none;
  EXPECT_LE(max_abs_diff(craft_update({ScalingMode::full_replacement, 1.0}, x, g, none), x - g), 1e-15);
}

TEST(MaliciousReport, AlwaysClearNeverFlags) {
  const std::vector<Assignment> tasks{{ClientId{3}, 0, {0, 1, 2}}, {ClientId{3}, 4, {5}}};
  Rng rng(1);
  const auto reps = malicious_report(tasks, [](int) { return true; }, {ReportKind::always_clear, 0.0}, rng);
  ASSERT_EQ(reps.size(), 2u);
  for (const auto& r : reps) EXPECT_FALSE(r.any_flag());
  EXPECT_EQ(reps[1].classes, (std::vector<int>{5}));
}

TEST(MaliciousReport, FrameHonestFlagsOnlyCleanSubmodels) {
  const std::vector<Assignment> tasks{{ClientId{3}, 0, {0, 1}}, {ClientId{3}, 1, {0, 1}}};
  Rng rng(1);
  const auto reps = malicious_report(tasks, [](int s) { return s == 1; }, {ReportKind::frame_honest, 1.0}, rng);
  EXPECT_TRUE(reps[0].any_flag());
  EXPECT_FALSE(reps[1].any_flag());
  const auto none = malicious_report(tasks, [](int) { return false; }, {ReportKind::frame_honest, 0.0}, rng);
  for (const auto& r : none) EXPECT_FALSE(r.any_flag());
}
