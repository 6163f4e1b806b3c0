// Copyright 2026 The psyframe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "psyframe/model.hpp"
#include "psyframe/weights_io.hpp"

using namespace psyframe;

namespace {

std::vector<Sample> small_batch(std::size_t n, std::uint64_t seed) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<ClassLabel>(i % kNumClasses);
    out.push_back({preprocess_and_extract(synth_window(c, mix_seed(seed, i))), c});
  }
  return out;
}

// Init plus small random offsets on biases and gains so no gradient path is trivially zero.
Weights perturbed_weights(std::uint64_t seed) {
  Weights w = init_weights(ModelConfig{}, seed);
  SplitMix64 rng(seed + 99);
  visit_params(w, [&](const std::string& name, Tensor& t) {
    if (!is_matrix_param(name))
      for (double& v : t.data) v += rng.uniform(-0.2, 0.2);
  });
  return w;
}

struct Coord {
  Tensor* t;
  std::size_t i;
};

std::vector<Coord> all_coords(Weights& w) {
  std::vector<Coord> out;
  visit_params(w, [&](const std::string&, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back({&t, i});
  });
  return out;
}

double grad_norm(const Tensor& t) {
  return std::sqrt(std::inner_product(t.data.begin(), t.data.end(), t.data.begin(), 0.0));
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_tokens(), 15u);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.n_classes = 4;
  EXPECT_THROW(c.validate(), Error);
}

TEST(InitWeights, GlorotBoundsAndDeterminism) {
  const auto w = init_weights(ModelConfig{}, 3);
  EXPECT_EQ(w, init_weights(ModelConfig{}, 3));
  EXPECT_NE(w, init_weights(ModelConfig{}, 4));
  visit_params(w, [&](const std::string& name, const Tensor& t) {
    const double bound = glorot_bound(t);
    for (double v : t.data) {
      ASSERT_TRUE(std::isfinite(v)) << name;
      if (is_gain_param(name)) {
        EXPECT_EQ(v, 1.0) << name;
      } else if (is_matrix_param(name)) {
        EXPECT_LE(std::abs(v), bound) << name;
      } else {
        EXPECT_EQ(v, 0.0) << name;
      }
    }
  });
  EXPECT_EQ(w.proj_w.shape, (std::vector<std::size_t>{13, 32}));
  EXPECT_EQ(w.head_w.shape, (std::vector<std::size_t>{32, 5}));
  EXPECT_EQ(w.layers.size(), 2u);
  const auto n = parameter_count(w);
  EXPECT_GT(n, 20000u);
  EXPECT_LT(n, 60000u);
}

TEST(Softmax, SumsToOneForRandomInputs) {
  const auto w = init_weights(ModelConfig{}, 1);
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureVector f;
    for (double& v : f.values) v = std::abs(rng.normal()) * 3.0;
    const auto p = predict(w, f);
    double s = 0.0;
    for (double v : p.probs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  const std::array<double, 5> big{1000.0, 999.0, -1000.0, 0.0, 3.0};
  const auto p = softmax(big);
  EXPECT_NEAR(p.probs[0] + p.probs[1], 1.0, 1e-12);
}

TEST(Forward, ZeroHeadGivesUniformPosterior) {
  auto w = init_weights(ModelConfig{}, 2);
  std::ranges::fill(w.head_w.data, 0.0);
  std::ranges::fill(w.head_b.data, 0.0);
  const auto p = predict(w, small_batch(1, 1)[0].features);
  for (double v : p.probs) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Forward, PermutingChannelTokensChangesLogits) {
  const auto w = init_weights(ModelConfig{}, 2);
  const auto f = small_batch(1, 4)[0].features;
  auto g = f;
  for (std::size_t s = 0; s < slot::kPerChannel; ++s)
    std::swap(g.values[2 * slot::kPerChannel + s], g.values[9 * slot::kPerChannel + s]);
  const auto a = forward(w, f), b = forward(w, g);
  double diff = 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) diff = std::max(diff, std::abs(a[k] - b[k]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Forward, HeadScalingScalesLogits) {
  const auto w = perturbed_weights(8);
  const auto f = small_batch(1, 5)[0].features;
  const auto base = forward(w, f);
  for (double c : {0.5, 2.0, 7.0}) {
    auto s = w;
    for (double& v : s.head_w.data) v *= c;
    for (double& v : s.head_b.data) v *= c;
    const auto scaled = forward(s, f);
    for (std::size_t k = 0; k < kNumClasses; ++k) EXPECT_NEAR(scaled[k], c * base[k], 1e-12 * (1 + std::abs(c * base[k])));
    EXPECT_EQ(softmax(scaled).argmax(), softmax(base).argmax());
  }
}

TEST(Forward, RejectsLayoutMismatch) {
  const auto w = init_weights(ModelConfig{}, 2);
  FeatureVector f;
  f.layout_id = "other-layout";
  EXPECT_THROW(forward(w, f), Error);
}

TEST(LossCe, AnalyticValues) {
  const std::array<double, 5> uniform{0.3, 0.3, 0.3, 0.3, 0.3};
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(loss_ce(uniform, class_from_id(c)), std::log(5.0), 1e-12);
  const std::array<double, 5> sat{30, -30, -30, -30, -30};
  EXPECT_LT(loss_ce(sat, ClassLabel::PullForward), 1e-9);
  SplitMix64 rng(1);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 5> l;
    for (double& v : l) v = 20.0 * rng.normal();
    EXPECT_GE(loss_ce(l, class_from_id(static_cast<int>(rng.below(5)))), 0.0);
  }
}

// Oracle: central finite differences of the batch loss.
TEST(Gradients, MatchCentralFiniteDifferences) {
  auto w = perturbed_weights(11);
  auto batch = small_batch(4, 21);
  batch.push_back({preprocess_and_extract(synth_noise_window(3)), ClassLabel::PullForward, true});
  const auto analytic = gradients(w, batch);

  Weights g = analytic.grad;
  auto wc = all_coords(w);
  auto gc = all_coords(g);
  ASSERT_EQ(wc.size(), gc.size());
  SplitMix64 rng(77);
  const double h = 1e-5;
  const std::size_t n_check = 300;
  double worst = 0.0;
  for (std::size_t k = 0; k < n_check; ++k) {
    const std::size_t idx = rng.below(wc.size());
    double& p = wc[idx].t->data[wc[idx].i];
    const double orig = p;
    p = orig + h;
    const double lp = batch_loss(w, batch);
    p = orig - h;
    const double lm = batch_loss(w, batch);
    p = orig;
    const double numeric = (lp - lm) / (2 * h);
    const double a = gc[idx].t->data[gc[idx].i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
    EXPECT_LT(rel, 1e-4) << "coordinate " << idx << " analytic " << a << " numeric " << numeric;
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(LossUniform, MinimizedByEqualLogits) {
  const std::array<double, 5> flat{1.0, 1.0, 1.0, 1.0, 1.0};
  EXPECT_NEAR(loss_uniform(flat), std::log(5.0), 1e-12);
  const std::array<double, 5> peaked{4.0, 0.0, 0.0, 0.0, 0.0};
  EXPECT_GT(loss_uniform(peaked), std::log(5.0));
}

TEST(Gradients, SaturatedCorrectPredictionHasNoHeadGradient) {
  auto w = init_weights(ModelConfig{}, 4);
  std::ranges::fill(w.head_w.data, 0.0);
  std::ranges::fill(w.head_b.data, -40.0);
  w.head_b.data[3] = 40.0;
  std::vector<Sample> batch = small_batch(3, 2);
  for (auto& s : batch) s.label = ClassLabel::RightLegPedal;
  const auto r = gradients(w, batch);
  EXPECT_LT(r.loss, 1e-9);
  EXPECT_LT(std::hypot(grad_norm(r.grad.head_w), grad_norm(r.grad.head_b)), 1e-6);
}

TEST(Gradients, DuplicatedBatchGivesSameGradient) {
  const auto w = perturbed_weights(12);
  const auto batch = small_batch(3, 3);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto a = gradients(w, batch), b = gradients(w, doubled);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  auto ca = all_coords(const_cast<Weights&>(a.grad));
  auto cb = all_coords(const_cast<Weights&>(b.grad));
  for (std::size_t i = 0; i < ca.size(); ++i)
    ASSERT_NEAR(ca[i].t->data[ca[i].i], cb[i].t->data[cb[i].i], 1e-12);
  EXPECT_THROW(gradients(w, std::span<const Sample>{}), Error);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  const auto w = perturbed_weights(1);
  const auto g = gradients(w, small_batch(5, 9)).grad;
  auto [w1, s1] = adam_step(w, g, AdamState::for_weights(w));
  EXPECT_EQ(s1.step, 1u);
  auto c0 = all_coords(const_cast<Weights&>(w));
  auto c1 = all_coords(w1);
  auto cg = all_coords(const_cast<Weights&>(g));
  std::size_t checked = 0;
  for (std::size_t i = 0; i < c0.size(); ++i) {
    const double gi = cg[i].t->data[cg[i].i];
    const double delta = c1[i].t->data[c1[i].i] - c0[i].t->data[c0[i].i];
    if (std::abs(gi) < 1e-3) continue;
    EXPECT_NEAR(delta, -1e-3 * std::copysign(1.0, gi), 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 100u);

  auto [w2, s2] = adam_step(w, g, AdamState::for_weights(w));
  EXPECT_EQ(w1, w2);
  EXPECT_EQ(s1, s2);
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  const auto w = perturbed_weights(2);
  auto [w1, s1] = adam_step(w, zero_weights(w.cfg), AdamState::for_weights(w));
  EXPECT_EQ(w1, w);
}

TEST(Evaluate, PerfectAndConstantPredictors) {
  std::vector<ClassLabel> truth;
  std::vector<std::size_t> pred;
  for (int i = 0; i < 10; ++i) {
    truth.push_back(class_from_id(i % 5));
    pred.push_back(static_cast<std::size_t>(i % 5));
  }
  const auto perfect = evaluate_predictions(truth, pred);
  EXPECT_EQ(perfect.accuracy, 1.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(perfect.confusion[i][j], i == j ? 2u : 0u);

  std::ranges::fill(pred, 0u);
  const auto constant = evaluate_predictions(truth, pred);
  EXPECT_DOUBLE_EQ(constant.accuracy, 0.2);
  std::size_t total = 0;
  for (const auto& row : constant.confusion) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
  EXPECT_EQ(total, truth.size());
  EXPECT_THROW(evaluate_predictions({}, {}), Error);
  EXPECT_THROW(evaluate(init_weights(ModelConfig{}, 0), Dataset{}), Error);
}

TEST(Evaluate, UntrainedModelIsNearChance) {
  const auto val = build_dataset(100, 901);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto e = evaluate(init_weights(ModelConfig{}, seed), val);
    EXPECT_GE(e.accuracy, 0.08) << "seed " << seed;
    EXPECT_LE(e.accuracy, 0.35) << "seed " << seed;
  }
}

TEST(Train, ReachesNinetyPercentOnDefaultSyntheticData) {
  const auto [tr, va] = split_dataset(build_dataset(100, 2024), 0.8, 2024);
  TrainOptions opt;
  opt.seed = 2024;
  const auto [w, report] = train(tr, va, ModelConfig{}, opt);
  ASSERT_EQ(report.epochs.size(), 30u);
  double best = INFINITY;
  for (const auto& e : report.epochs) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    best = std::min(best, e.train_loss);
  }
  EXPECT_LT(best, report.epochs.front().train_loss);
  EXPECT_GE(report.final_val_accuracy(), 0.90);
  EXPECT_EQ(report.final_eval.total, 100u);

  // Background windows stay near uniform, so a leaky integrator fed with them settles far below threshold.
  std::array<double, kNumClasses> mean{};
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto p = predict(w, preprocess_and_extract(synth_noise_window(5000 + s)));
    for (std::size_t k = 0; k < kNumClasses; ++k) mean[k] += p.probs[k] / 100.0;
  }
  for (double m : mean) EXPECT_LT(m, 0.35);
}

TEST(Train, BitIdenticalAcrossRuns) {
  const auto [tr, va] = split_dataset(build_dataset(10, 5), 0.8, 5);
  TrainOptions opt;
  opt.epochs = 2;
  opt.seed = 9;
  const auto a = train(tr, va, ModelConfig{}, opt);
  const auto b = train(tr, va, ModelConfig{}, opt);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  Dataset other = va;
  other.layout_id = "other";
  EXPECT_THROW(train(tr, other, ModelConfig{}, opt), Error);
}

TEST(WeightsFile, BitExactRoundTripAndManifest) {
  ModelFile m{perturbed_weights(31), std::string(kLayoutId), 31};
  m.weights.input_scale.data[5] = 1.0 / 3.0;
  m.weights.head_b.data[0] = -0.0;
  std::stringstream ss;
  write_weights(ss, m);
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind(R"({"record":"manifest","format":"psyframe-weights","version":1,"layout_id":"psyframe-feat-v1")", 0),
            0u);
  const auto back = read_weights(ss);
  EXPECT_EQ(weights_hash(back.weights), weights_hash(m.weights));
  EXPECT_EQ(back, m);
  EXPECT_TRUE(std::signbit(back.weights.head_b.data[0]));

  std::stringstream cut(text.substr(0, text.find('\n') + 1));
  EXPECT_THROW(read_weights(cut), Error);
  std::stringstream junk("not json\n");
  EXPECT_THROW(read_weights(junk), Error);
}
