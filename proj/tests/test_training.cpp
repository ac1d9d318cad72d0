#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "ftnode/training.hpp"
#include "support.hpp"

using namespace ftnode;
using testing_support::randomize;
using testing_support::rel_err;

namespace {

Classifier zero_field_identity_output() { return make_preset(Arch::ex2); }

Dataset make_batch(std::vector<std::array<double, 2>> x, std::vector<ClassId> c) {
  Dataset ds;
  ds.inputs = std::move(x);
  ds.classes = std::move(c);
  return ds;
}

Classifier random_model(Arch a, double t_end, std::uint64_t seed, double scale = 0.8) {
  auto m = make_preset(a, FlowConfig{0.1, t_end});
  Rng rng(seed);
  randomize(m.field, rng, scale);
  for (double& v : m.output.weight.data()) v = rng.normal();
  for (double& v : m.output.bias) v = 0.3 * rng.normal();
  return m;
}

template <class Loss>
std::vector<double> fd_gradient(Classifier m, Loss loss, double h = 1e-5) {
  auto p = flat_params(m);
  const auto mask = trainable_flat_mask(m);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!mask[i]) continue;
    const double keep = p[i];
    p[i] = keep + h;
    set_flat_params(m, p);
    const double up = loss(m);
    p[i] = keep - h;
    set_flat_params(m, p);
    const double down = loss(m);
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Predict, DistanceRatioExamples) {
  const double blue[2] = {0.0, 1.0}, mid[2] = {0.0, 0.0}, q[2] = {0.0, 0.5};
  EXPECT_EQ(pred_from_output(blue), 1.0);
  EXPECT_EQ(pred_from_output(mid), 0.5);
  EXPECT_DOUBLE_EQ(pred_from_output(q), 0.75);
  EXPECT_EQ(predicted_class(0.75), ClassId::blue);
  EXPECT_EQ(predicted_class(0.25), ClassId::orange);
}

TEST(Predict, ZeroFieldIdentityOutputIsPassThrough) {
  const auto m = zero_field_identity_output();
  const double x[2] = {0.0, 0.5};
  EXPECT_DOUBLE_EQ(predict(m, x), 0.75);
}

TEST(Mse, Examples) {
  const auto m = zero_field_identity_output();
  EXPECT_EQ(mse_loss(m, make_batch({{0.0, 1.0}, {0.0, -1.0}}, {ClassId::blue, ClassId::orange})), 0.0);
  EXPECT_EQ(mse_loss(m, make_batch({{0.0, 0.0}}, {ClassId::blue})), 1.0);
  EXPECT_EQ(mse_loss(m, make_batch({{0.0, 0.0}, {0.0, 1.0}}, {ClassId::blue, ClassId::orange})), 2.5);
  EXPECT_THROW(mse_loss(m, Dataset{}), InvalidInput);
}

TEST(Mse, DivergenceNamesTheSample) {
  auto m = make_preset(Arch::ex1);
  he_init(m, 1);
  for (double& v : m.field.tensor(0, 1, TensorKind::V)) v = 1e308;  // saturated sums overflow
  try {
    mse_loss(m, make_batch({{0.5, 0.5}}, {ClassId::blue}));
    FAIL() << "expected divergence";
  } catch (const Divergence& e) {
    EXPECT_NE(std::string(e.what()).find("sample 0"), std::string::npos);
  }
}

TEST(Reg, ThresholdedMean) {
  const auto m = random_model(Arch::ex2, 10.0, 5, 1.0);
  const std::vector<std::array<double, 2>> pts{{0.3, -0.2}, {-1.0, 0.8}, {1.5, 1.1}};
  const FlowConfig rc{0.1, 2.0};
  double manual = 0.0;
  for (const auto& p : pts) manual += std::max(lambda_max(m.field, p, rc), 0.05);
  EXPECT_NEAR(reg_term(m, pts, 0.05, 2.0), manual / 3.0, 1e-15);
}

TEST(Reg, LinearFieldClosedForms) {
  NodeClassifier<LinearField> m{LinearField(2, ParamSchedule({0.0, 10.0})), identity_output(), FlowConfig{}};
  const std::vector<std::array<double, 2>> pts{{0.1, 0.2}, {1.0, -1.0}};
  m.field.set_matrix(0, Mat{{0.2, 0.0}, {0.0, -0.2}});
  EXPECT_NEAR(reg_term(m, pts, 0.05, 2.0), std::log(1.02) / 0.1, 1e-12);
  m.field.set_matrix(0, Mat{{-0.5, 0.0}, {0.0, -0.2}});
  EXPECT_EQ(reg_term(m, pts, 0.05, 2.0), 0.05);
}

TEST(Reg, ZeroFieldGivesDelta) {
  const auto m = zero_field_identity_output();
  const std::vector<std::array<double, 2>> pts{{0.1, 0.2}, {1.0, -1.0}};
  EXPECT_EQ(reg_term(m, pts, 0.05, 2.0), 0.05);
  EXPECT_THROW(reg_term(m, pts, 0.05, 2.05), AlignmentError);
}

TEST(Reg, MonotoneInDelta) {
  const auto m = random_model(Arch::ex1, 10.0, 6, 1.0);
  std::vector<std::array<double, 2>> pts;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) pts.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2)});
  double prev = -1e300;
  for (double delta = -1.0; delta <= 2.0; delta += 0.1) {
    const double v = reg_term(m, pts, delta, 2.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(GradMse, ZeroLossGivesZeroGradient) {
  const auto m = zero_field_identity_output();
  const auto g = grad_mse(m, make_batch({{0.0, 1.0}, {0.0, -1.0}}, {ClassId::blue, ClassId::orange}));
  EXPECT_TRUE(g.all_zero());
}

TEST(GradMse, MatchesFiniteDifferencesOnBothArchitectures) {
  for (auto arch : {Arch::ex1, Arch::ex2}) {
    const auto m = random_model(arch, 1.0, 11);
    const auto batch = make_moons(6, 0.1, 3);
    double loss = 0.0;
    const auto g = grad_mse(m, batch, 1, &loss);
    EXPECT_NEAR(loss, mse_loss(m, batch), 1e-14);
    const auto fd = fd_gradient(m, [&](const Classifier& c) { return mse_loss(c, batch); });
    for (std::size_t i = 0; i < fd.size(); ++i)
      EXPECT_LT(rel_err(g.values[i], fd[i]), 1e-4) << to_string(arch) << " param " << i;
  }
}

TEST(GradMse, FrozenEntriesGetExactZeros) {
  const auto m = random_model(Arch::ex1, 1.0, 12);
  const auto g = grad_mse(m, make_moons(10, 0.1, 4));
  const auto mask = trainable_flat_mask(m);
  std::size_t frozen = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) {
      EXPECT_EQ(g.values[i], 0.0);
      ++frozen;
    }
  EXPECT_EQ(frozen, 30u);  // 5x5 V and 5-vector a of the first layer
}

TEST(GradMse, ThreadCountDoesNotChangeBits) {
  const auto m = random_model(Arch::ex2, 10.0, 13);
  const auto batch = make_moons(40, 0.1, 5);
  EXPECT_EQ(grad_mse(m, batch, 1).values, grad_mse(m, batch, 4).values);
}

TEST(GradReg, AllBelowThresholdGivesZero) {
  const auto m = zero_field_identity_output();
  const std::vector<std::array<double, 2>> pts{{0.1, 0.2}, {1.0, -1.0}};
  const auto rg = grad_reg(m, pts, 0.05, 2.0);
  EXPECT_TRUE(rg.grad.all_zero());
  EXPECT_EQ(rg.active, 0u);
  EXPECT_EQ(rg.value, 0.05);
}

TEST(GradReg, LinearSaddleDerivative) {
  const double a = 0.7;
  NodeClassifier<LinearField> m{LinearField(2, ParamSchedule({0.0, 10.0})), OutputLayer{}, FlowConfig{}};
  m.field.set_matrix(0, Mat{{a, 0.0}, {0.0, -a}});
  const std::array<double, 2> x0{0.4, -0.3};
  const auto rg = grad_reg(m, std::span(&x0, 1), 0.05, 2.0);
  EXPECT_NEAR(rg.value, std::log(1.0 + 0.1 * a) / 0.1, 1e-12);
  const auto f = rg.grad.field();
  EXPECT_NEAR(f[0], 1.0 / (1.0 + 0.1 * a), 1e-8);
  EXPECT_NEAR(f[1], 0.0, 1e-12);
  EXPECT_NEAR(f[2], 0.0, 1e-12);
  EXPECT_NEAR(f[3], 0.0, 1e-12);
  EXPECT_EQ(f[4], 0.0);
  EXPECT_EQ(f[5], 0.0);
}

TEST(GradReg, MatchesFiniteDifferencesOfRegTerm) {
  for (auto arch : {Arch::ex2, Arch::ex1}) {
    const auto m = random_model(arch, 10.0, 21, 1.0);
    const std::vector<std::array<double, 2>> pts{{0.4, -0.1}, {-0.9, 0.7}};
    const double delta = -50.0;  // keep every sample on the active side
    const auto rg = grad_reg(m, pts, delta, 1.0);
    ASSERT_EQ(rg.active, 2u);
    const auto fd = fd_gradient(m, [&](const Classifier& c) { return reg_term(c, pts, delta, 1.0); });
    for (std::size_t i = 0; i < fd.size(); ++i)
      EXPECT_LT(rel_err(rg.grad.values[i], fd[i]), 1e-3) << to_string(arch) << " param " << i;
  }
}

TEST(GradReg, CoarserRegularizerStep) {
  const auto m = random_model(Arch::ex2, 10.0, 22, 1.0);
  const std::vector<std::array<double, 2>> pts{{0.2, 0.2}};
  const auto rg = grad_reg(m, pts, -50.0, 2.0, 0.2);
  const auto fd = fd_gradient(m, [&](const Classifier& c) { return reg_term(c, pts, -50.0, 2.0, 0.2); });
  for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LT(rel_err(rg.grad.values[i], fd[i]), 1e-3) << i;
  EXPECT_THROW(grad_reg(m, pts, 0.05, 2.1, 0.2), AlignmentError);
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.0, 0.0};
  AdamState st(2);
  adam_step(p, g, st, TrainConfig{});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<double> p{0.0, 0.0, 0.0};
  const std::vector<double> g{3.0, -0.5, 1e-3};
  AdamState st(3);
  adam_step(p, g, st, cfg);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(p[i], -0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientApproachesLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<double> p{0.0};
  const std::vector<double> g{0.2};
  AdamState st(1);
  double last = 0.0;
  for (int k = 0; k < 5000; ++k) {
    const double before = p[0];
    adam_step(p, g, st, cfg);
    last = before - p[0];
  }
  EXPECT_NEAR(last, 0.01, 1e-6);
}

TEST(Adam, MaskedEntriesUntouched) {
  std::vector<double> p{1.0, 1.0};
  const std::vector<double> g{1.0, 1.0};
  const std::vector<unsigned char> mask{1, 0};
  AdamState st(2);
  adam_step(p, g, st, TrainConfig{}, mask);
  EXPECT_LT(p[0], 1.0);
  EXPECT_EQ(p[1], 1.0);
}

TEST(HeInit, WeightVarianceIsTwoOverFanIn) {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; n < 100000; ++seed) {
    auto m = make_preset(Arch::ex2);
    he_init(m, seed);
    for (std::size_t k = 0; k < m.field.blocks(); ++k)
      for (double v : m.field.tensor(k, 0, TensorKind::W)) {
        sum += v;
        sum2 += v * v;
        ++n;
      }
  }
  const double mean = sum / static_cast<double>(n);
  EXPECT_NEAR(sum2 / static_cast<double>(n) - mean * mean, 1.0, 0.03);
}

TEST(HeInit, BiasesZeroFrozenFixedAndDeterministic) {
  auto a = make_preset(Arch::ex1);
  auto b = make_preset(Arch::ex1);
  he_init(a, 77);
  he_init(b, 77);
  EXPECT_EQ(flat_params(a), flat_params(b));
  for (double v : a.field.tensor(0, 0, TensorKind::b)) EXPECT_EQ(v, 0.0);
  for (double v : a.field.tensor(0, 1, TensorKind::a)) EXPECT_EQ(v, 0.0);
  for (double v : a.field.tensor(0, 0, TensorKind::a)) EXPECT_EQ(v, 0.0);
  const auto v0 = a.field.tensor(0, 0, TensorKind::V);
  ASSERT_EQ(v0.size(), 25u);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(v0[r * 5 + c], r == c ? 1.0 : 0.0);
  he_init(b, 78);
  EXPECT_NE(flat_params(a), flat_params(b));
}

TEST(Train, GammaZeroMatchesPlainLoop) {
  const auto ds = make_moons(150, 0.1, 2);
  auto m = make_preset(Arch::ex2);
  he_init(m, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.record_seconds = false;
  const auto res = train(m, ds, Dataset{}, cfg);

  // reference: shuffled minibatch MSE descent with no regularizer code at all
  auto p = flat_params(m);
  const auto mask = trainable_flat_mask(m);
  AdamState st(p.size());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    TrainConfig ecfg = cfg;
    ecfg.learning_rate = cfg.epoch_learning_rate(e);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + cfg.batch_size)));
      auto g = grad_mse(m, subset(ds, idx));
      double norm = 0.0;
      for (double v : g.values) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > cfg.grad_clip) g.scale(cfg.grad_clip / norm);
      adam_step(p, g.values, st, ecfg, mask);
      set_flat_params(m, p);
    }
  }
  EXPECT_EQ(flat_params(res.model), p);
}

TEST(Train, DeterministicLogAndModel) {
  const auto ds = make_moons(200, 0.1, 8);
  const auto [tr, te] = split(ds, 0.25, 8);
  auto m = make_preset(Arch::ex1);
  he_init(m, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.gamma = 1.0;
  cfg.record_seconds = false;
  cfg.probe_resolution = 6;
  const auto a = train(m, tr, te, cfg);
  cfg.threads = 3;
  const auto b = train(m, tr, te, cfg);
  EXPECT_EQ(flat_params(a.model), flat_params(b.model));
  std::ostringstream la, lb;
  write_train_log(a.log, la);
  write_train_log(b.log, lb);
  EXPECT_EQ(la.str(), lb.str());
  ASSERT_EQ(a.log.epochs.size(), 2u);
  EXPECT_EQ(la.str().substr(0, la.str().find('\n')), "epoch,mse,reg,train_acc,test_acc,mean_lmax_T1,seconds");
  EXPECT_GE(a.log.epochs[1].reg, cfg.delta);
}

TEST(Train, RegularizerLowersProbeExponentOnShortRun) {
  const auto ds = make_moons(400, 0.1, 8);
  auto m = make_preset(Arch::ex2);
  he_init(m, 1);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.record_seconds = false;
  cfg.probe_resolution = 8;
  const auto base = train(m, ds, Dataset{}, cfg);
  cfg.gamma = 20.0;
  cfg.t1_reg = 6.0;
  const auto reg = train(m, ds, Dataset{}, cfg);
  EXPECT_LT(reg.log.epochs.back().mean_lmax_t1, base.log.epochs.back().mean_lmax_t1);
}

TEST(Train, DivergenceKeepsLastStableModel) {
  const auto ds = make_moons(20, 0.1, 1);
  auto m = make_preset(Arch::ex1);
  he_init(m, 1);
  for (double& v : m.field.tensor(0, 1, TensorKind::V)) v = 1e308;
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto res = train(m, ds, Dataset{}, cfg);
  EXPECT_TRUE(res.diverged);
  EXPECT_TRUE(res.log.epochs.empty());
  EXPECT_NE(res.divergence_message.find("epoch 1"), std::string::npos);
}

TEST(Train, ConfigValidation) {
  const auto ds = make_moons(20, 0.1, 1);
  const auto m = make_preset(Arch::ex2);
  TrainConfig cfg;
  cfg.gamma = -1.0;
  EXPECT_THROW(train(m, ds, Dataset{}, cfg), InvalidInput);
  cfg = TrainConfig{};
  cfg.t1_reg = 11.0;
  EXPECT_THROW(train(m, ds, Dataset{}, cfg), InvalidInput);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, ds, Dataset{}, cfg), InvalidInput);
  EXPECT_THROW(train(m, Dataset{}, Dataset{}, TrainConfig{}), InvalidInput);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto m = random_model(Arch::ex1, 10.0, 40);
  std::stringstream ss;
  write_checkpoint(m, ss);
  const auto back = read_checkpoint(ss);
  EXPECT_EQ(flat_params(back), flat_params(m));
  EXPECT_EQ(trainable_flat_mask(back), trainable_flat_mask(m));
  EXPECT_EQ(back.flow.dt, m.flow.dt);
  EXPECT_EQ(back.flow.t_end, m.flow.t_end);
  EXPECT_EQ(back.field.schedule().blocks(), m.field.schedule().blocks());
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream empty;
  EXPECT_THROW(read_checkpoint(empty), InvalidInput);
  auto m = random_model(Arch::ex2, 10.0, 41);
  std::stringstream ss;
  write_checkpoint(m, ss);
  std::string text = ss.str();
  text.resize(text.size() / 2);
  std::stringstream cut(text);
  EXPECT_THROW(read_checkpoint(cut), InvalidInput);
  EXPECT_THROW(read_checkpoint("/nonexistent/ckpt.txt"), InvalidInput);
}
