#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "urlguard/char_encoder.hpp"
#include "urlguard/cnn.hpp"
#include "urlguard/url.hpp"

using namespace urlguard;
using namespace urlguard::cnn;

namespace {

CnnConfig tiny_config() {
  CnnConfig c;
  c.seq_len = 8;
  c.embed_dim = 2;
  c.conv_filters = {2, 2, 2};
  c.kernel_sizes = {3, 2, 2};
  c.dense_hidden = 3;
  return c;
}

std::vector<std::uint8_t> random_sequences(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<std::uint8_t> out(n * len);
  for (auto& v : out) v = static_cast<std::uint8_t>(g() % kEmbeddingRows);
  return out;
}

// Central difference of the loss with respect to every scalar parameter,
// holding the dropout seed fixed so both evaluations see the same mask.
double max_relative_error(const CnnParams<double>& params, const SequenceBatch& batch,
                          Labels labels, std::uint64_t seed, std::size_t* checked) {
  const double h = 1e-4;
  const auto analytic = loss_and_grads(params, batch, labels, seed).grads;
  std::vector<std::span<const double>> grads;
  analytic.for_each_tensor([&](std::string_view, std::span<const double> d) { grads.push_back(d); });

  CnnParams<double> probe = params;
  std::vector<std::span<double>> slots;
  probe.for_each_tensor([&](std::string_view, std::span<double> d) { slots.push_back(d); });
  double worst = 0.0;
  *checked = 0;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    for (std::size_t i = 0; i < slots[t].size(); ++i) {
      const double orig = slots[t][i];
      slots[t][i] = orig + h;
      const double up = loss_and_grads(probe, batch, labels, seed).loss;
      slots[t][i] = orig - h;
      const double down = loss_and_grads(probe, batch, labels, seed).loss;
      slots[t][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[t][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      // Below 1e-7 both sides are rounding noise; compare absolutely.
      const double err = scale < 1e-7 ? std::abs(a - numeric) * 1e3 : std::abs(a - numeric) / scale;
      worst = std::max(worst, err);
      ++*checked;
    }
  }
  return worst;
}

}  // namespace

TEST(Cnn, ConfigValidation) {
  EXPECT_NO_THROW(CnnConfig{}.validate());
  EXPECT_TRUE(CnnConfig{}.filters_increasing());
  CnnConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.conv_out_len(2), 4u);
  c.seq_len = 4;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Cnn, DefaultParameterCount) {
  const auto p = CnnParams<float>::zeros(CnnConfig{});
  // 72*128 + (3*128*64+64) + (4*64*128+128) + (5*128*256+256) + (256*128+128) + 128 + 1
  EXPECT_EQ(p.parameter_count(), 9216u + 24640u + 32896u + 164096u + 32896u + 129u);
}

TEST(Cnn, GlorotInitIsSeededAndPadRowIsZero) {
  const auto a = CnnParams<double>::glorot(tiny_config(), 3);
  const auto b = CnnParams<double>::glorot(tiny_config(), 3);
  const auto c = CnnParams<double>::glorot(tiny_config(), 4);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  EXPECT_TRUE(a.embedding.row(0).isZero());
  EXPECT_TRUE(a.all_finite());
}

TEST(Cnn, GradientMatchesCentralDifferences) {
  const CnnConfig cfg = tiny_config();
  const std::vector<std::uint8_t> labels = {1, 0, 1, 0, 0, 1};
  const auto seqs = random_sequences(labels.size(), cfg.seq_len, 17);
  const SequenceBatch batch{seqs, cfg.seq_len};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto params = CnnParams<double>::glorot(cfg, seed);
    // Nonzero biases keep ReLUs away from exact ties with zero.
    for (int l = 0; l < 3; ++l) params.conv_b[l].setConstant(0.05);
    params.dense_b.setConstant(0.05);
    std::size_t checked = 0;
    const double err = max_relative_error(params, batch, labels, 100 + seed, &checked);
    EXPECT_EQ(checked, params.parameter_count());
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(Cnn, BatchForwardMatchesSingleExamples) {
  const CnnConfig cfg = tiny_config();
  const auto params = CnnParams<double>::glorot(cfg, 9);
  const auto seqs = random_sequences(5, cfg.seq_len, 4);
  const auto all = logits(params, SequenceBatch{seqs, cfg.seq_len});
  for (std::size_t i = 0; i < 5; ++i) {
    const std::span<const std::uint8_t> one(seqs.data() + i * cfg.seq_len, cfg.seq_len);
    EXPECT_EQ(logits(params, SequenceBatch{one, cfg.seq_len})[0], all[i]);
  }
}

TEST(Cnn, RejectsBadBatches) {
  const CnnConfig cfg = tiny_config();
  const auto params = CnnParams<double>::glorot(cfg, 9);
  const std::vector<std::uint8_t> ragged(11, 1);
  EXPECT_THROW(logits(params, SequenceBatch{ragged, cfg.seq_len}), Error);
  const std::vector<std::uint8_t> out_of_vocab(8, 200);
  EXPECT_THROW(logits(params, SequenceBatch{out_of_vocab, cfg.seq_len}), Error);
  const std::vector<std::uint8_t> seq(8, 1), labels = {1, 0};
  EXPECT_THROW(loss_and_grads(params, SequenceBatch{seq, cfg.seq_len}, labels, 0), Error);
}

TEST(Adam, MatchesClosedFormUpdate) {
  AdamHyper h;
  h.lr = 0.01;
  std::vector<double> p = {1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  const std::vector<std::vector<double>> grads = {{0.5, -1.0}, {0.1, 0.3}, {-0.2, 0.0}};
  double ref_p[2] = {1.0, -2.0}, ref_m[2] = {0, 0}, ref_v[2] = {0, 0};
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    adam_update<double>(p, grads[t - 1], m, v, t, h);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      ref_m[i] = 0.9 * ref_m[i] + 0.1 * g;
      ref_v[i] = 0.999 * ref_v[i] + 0.001 * g * g;
      const double mhat = ref_m[i] / (1 - std::pow(0.9, t));
      const double vhat = ref_v[i] / (1 - std::pow(0.999, t));
      ref_p[i] -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
      EXPECT_NEAR(p[i], ref_p[i], 1e-15);
    }
  }
  // First step moves each coordinate by lr in the direction of -sign(g).
  std::vector<double> q = {0.0}, qm = {0.0}, qv = {0.0};
  adam_update<double>(q, std::vector<double>{3.0}, qm, qv, 1, h);
  EXPECT_NEAR(q[0], -0.01, 1e-9);
}

TEST(EarlyStopper, PatienceCountsStaleEpochs) {
  EarlyStopper s(1, 1e-5);
  EXPECT_TRUE(s.observe(0.8));
  EXPECT_FALSE(s.should_stop());
  EXPECT_TRUE(s.observe(0.9));
  EXPECT_FALSE(s.observe(0.9 + 1e-6));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 2u);
}

TEST(CnnTrain, LearnsASeparableTaskAndIsDeterministic) {
  // Digit noise, then a final 'z' (class 1) or 'a' (class 0).
  CnnConfig cfg = tiny_config();
  cfg.seq_len = 12;
  cfg.embed_dim = 4;
  cfg.conv_filters = {4, 6, 8};
  cfg.dense_hidden = 8;
  std::mt19937_64 g(1);
  std::vector<std::uint8_t> x, y, vx, vy;
  for (int i = 0; i < 240; ++i) {
    const std::uint8_t label = i % 2;
    auto& xs = i < 200 ? x : vx;
    auto& ys = i < 200 ? y : vy;
    for (std::size_t t = 0; t + 1 < cfg.seq_len; ++t) xs.push_back(static_cast<std::uint8_t>(27 + g() % 10));
    xs.push_back(label ? 26 : 1);
    ys.push_back(label);
  }
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 15;
  tc.patience = 15;
  tc.learning_rate = 0.01;
  tc.seed = 5;
  const SequenceBatch tx{x, cfg.seq_len}, vxb{vx, cfg.seq_len};
  const auto r1 = train<double>(tx, y, vxb, vy, tc, cfg);
  const auto r2 = train<double>(tx, y, vxb, vy, tc, cfg);
  EXPECT_TRUE(r1.best_params == r2.best_params);
  ASSERT_FALSE(r1.history.empty());
  EXPECT_LT(r1.history.back().train_loss, r1.history.front().train_loss);
  EXPECT_GT(r1.history[r1.best_epoch - 1].val_auc, 0.95);

  const std::vector<std::uint8_t> one_class(vy.size(), 1);
  EXPECT_THROW(train<double>(tx, y, vxb, one_class, tc, cfg), Error);
}
