// Copyright 2026 The flowattack Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "flowattack/eval.hpp"
#include "flowattack/synthetic.hpp"
#include "flowattack/universal.hpp"
#include "test_util.hpp"

namespace flowattack {
namespace {

using testing::TempDir;

TEST(Universal, ZeroBudgetGivesZeroPerturbation) {
  const auto data = frame_pairs(synthetic_suite(2, 16, 1));
  UniversalTrainConfig c;
  c.epsilon2 = 0.0;
  c.mode = PerturbationMode::kJoint;
  const UniversalResult r = train_universal(builtin_estimator("hs"), data, c);
  EXPECT_EQ(r.perturbation, Perturbation::zeros(PerturbationMode::kJoint, data[0].first.shape()));
  EXPECT_EQ(r.l2_norm, 0.0);
}

// One pair and the same step budget: close to a frame-specific joint attack.
TEST(Universal, SinglePairMatchesFrameSpecificJointAttack) {
  const FlowEstimator e = builtin_estimator("hs");
  const auto s = synthetic_suite(1, 32, 2026)[0];
  PcfaConfig pc;
  pc.box = BoxConstraint::kClipping;
  pc.mode = PerturbationMode::kJoint;
  pc.steps = 20;
  const AttackResult frame = pcfa_attack(e, s.first, s.second, pc);

  UniversalTrainConfig uc;
  uc.mode = PerturbationMode::kJoint;
  uc.epochs = 20;
  uc.batch_size = 1;
  const UniversalResult uni = train_universal(e, {{s.first, s.second}}, uc);
  const FramePair adv = apply_universal(uni.perturbation, s.first, s.second);
  const double strength =
      attack_strength(e.estimate_flow(adv.first, adv.second), frame.target_flow);
  const double reference = attack_strength(frame.adversarial_flow, frame.target_flow);
  EXPECT_NEAR(strength, reference, 0.05 * reference);
}

TEST(Universal, NormBoundAndDeterminism) {
  const FlowEstimator e = builtin_estimator("hs");
  const auto data = frame_pairs(synthetic_suite(5, 24, 3));
  for (PerturbationMode mode : {PerturbationMode::kDisjoint, PerturbationMode::kJoint}) {
    UniversalTrainConfig c;
    c.mode = mode;
    c.epochs = 3;
    c.batch_size = 2;
    c.seed = 17;
    const UniversalResult a = train_universal(e, data, c);
    EXPECT_LE(a.l2_norm, 1.01 * a.bound);
    EXPECT_EQ(a.perturbation.mode(), mode);
    EXPECT_EQ(a.perturbation.stored_fields().size(),
              mode == PerturbationMode::kJoint ? 1u : 2u);
    EXPECT_EQ(a.epoch_objective.size(), 3u);
    c.jobs = 3;  // threading must not change the result
    const UniversalResult b = train_universal(e, data, c);
    EXPECT_EQ(a.perturbation, b.perturbation);
    EXPECT_EQ(a.epoch_objective, b.epoch_objective);
  }
}

TEST(Universal, RejectsBadConfig) {
  const auto data = frame_pairs(synthetic_suite(1, 16, 1));
  const FlowEstimator e = builtin_estimator("hs");
  UniversalTrainConfig c;
  c.box = BoxConstraint::kChangeOfVariables;
  EXPECT_THROW(train_universal(e, data, c), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(train_universal(e, data, c), ConfigError);
  c = {};
  EXPECT_THROW(train_universal(e, std::vector<FramePair>{}, c), ConfigError);
  auto mixed = data;
  mixed.push_back(frame_pairs(synthetic_suite(1, 20, 1))[0]);
  EXPECT_THROW(train_universal(e, mixed, c), StructuralError);
}

TEST(ApplyUniversal, ZeroPerturbationLeavesFramesUnchanged) {
  const auto s = synthetic_suite(1, 16, 4)[0];
  for (PerturbationMode m : {PerturbationMode::kDisjoint, PerturbationMode::kJoint}) {
    const FramePair p = apply_universal(Perturbation::zeros(m, s.first.shape()), s.first, s.second);
    EXPECT_EQ(p.first, s.first);
    EXPECT_EQ(p.second, s.second);
  }
}

TEST(ApplyUniversal, JointAddsSameFieldAndClips) {
  Field a({1, 1, 3}), b({1, 1, 3});
  // Dyadic values so the differences are exact.
  a.values()[0] = 0.25;
  a.values()[1] = 0.5;
  a.values()[2] = 1.0;
  b.values()[0] = 0.625;
  b.values()[1] = 0.375;
  b.values()[2] = 0.9375;
  const Perturbation p = Perturbation::joint(Field({1, 1, 3}, 0.125));
  const FramePair out = apply_universal(p, Image(a), Image(b));
  EXPECT_EQ(out.first.values()[0] - a.values()[0], out.second.values()[0] - b.values()[0]);
  EXPECT_EQ(out.first.values()[1] - a.values()[1], out.second.values()[1] - b.values()[1]);
  EXPECT_EQ(out.first.values()[2], 1.0);  // already white, stays white
  EXPECT_EQ(out.second.values()[2], 1.0);
}

TEST(ApplyUniversal, SizeMismatchIsStructural) {
  const auto s = synthetic_suite(1, 16, 4)[0];
  EXPECT_THROW(apply_universal(Perturbation::zeros(PerturbationMode::kJoint, {3, 8, 8}),
                               s.first, s.second),
               StructuralError);
}

TEST(Manifest, Parse) {
  const DatasetManifest m = parse_manifest(
      "# pairs\n"
      "a.png b.png\n"
      "\n"
      "  /abs/c.ppm   d.ppm  gt.flo  # with ground truth\n",
      "/data");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].first, fs::path("/data/a.png"));
  EXPECT_FALSE(m.entries[0].ground_truth);
  EXPECT_EQ(m.entries[1].first, fs::path("/abs/c.ppm"));
  EXPECT_EQ(*m.entries[1].ground_truth, fs::path("/data/gt.flo"));
  EXPECT_THROW(parse_manifest("only_one.png\n"), FormatError);
  EXPECT_THROW(parse_manifest("a b c d\n"), FormatError);
}

TEST(Manifest, LoadSkipsUnreadablePairs) {
  TempDir dir;
  const auto s = synthetic_suite(2, 12, 5);
  write_png(dir / "a1.png", s[0].first, 16);
  write_png(dir / "a2.png", s[0].second, 16);
  write_png(dir / "b1.png", s[1].first, 16);
  write_png(dir / "b2.png", s[1].second, 16);
  testing::spit(dir / "broken.png", "not a png");
  testing::spit(dir / "list.txt",
                "a1.png a2.png\nmissing.png a2.png\nbroken.png b2.png\nb1.png b2.png\n");
  std::vector<std::string> warnings;
  const LoadedDataset d =
      load_dataset(read_manifest(dir / "list.txt"),
                   [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(d.pairs.size(), 2u);
  EXPECT_EQ(d.skipped.size(), 2u);
  EXPECT_EQ(warnings.size(), 2u);

  testing::spit(dir / "bad.txt", "missing.png nope.png\n");
  EXPECT_THROW(load_dataset(read_manifest(dir / "bad.txt")), IoError);
  EXPECT_THROW(load_dataset(DatasetManifest{}), ConfigError);
  EXPECT_THROW(read_manifest(dir / "absent.txt"), IoError);
}

TEST(Manifest, SizeMismatchIsAnError) {
  TempDir dir;
  const auto a = synthetic_suite(1, 12, 5)[0];
  const auto b = synthetic_suite(1, 14, 5)[0];
  write_png(dir / "a1.png", a.first);
  write_png(dir / "a2.png", a.second);
  write_png(dir / "b1.png", b.first);
  write_png(dir / "b2.png", b.second);
  testing::spit(dir / "list.txt", "a1.png a2.png\nb1.png b2.png\n");
  EXPECT_THROW(load_dataset(read_manifest(dir / "list.txt")), StructuralError);
  testing::spit(dir / "mixed.txt", "a1.png b2.png\n");
  EXPECT_THROW(load_dataset(read_manifest(dir / "mixed.txt")), StructuralError);
}

TEST(Manifest, TrainFromManifest) {
  TempDir dir;
  const auto s = synthetic_suite(2, 12, 6);
  std::string list;
  for (int i = 0; i < 2; ++i) {
    write_png(dir / ("f" + std::to_string(i) + "a.png"), s[i].first, 16);
    write_png(dir / ("f" + std::to_string(i) + "b.png"), s[i].second, 16);
    list += "f" + std::to_string(i) + "a.png f" + std::to_string(i) + "b.png\n";
  }
  testing::spit(dir / "list.txt", list);
  UniversalTrainConfig c;
  c.epochs = 2;
  const UniversalResult r = train_universal(builtin_estimator("hs"),
                                            read_manifest(dir / "list.txt"), c);
  EXPECT_LE(r.l2_norm, 1.01 * r.bound);
  EXPECT_GT(r.l2_norm, 0.0);
}

}  // namespace
}  // namespace flowattack
