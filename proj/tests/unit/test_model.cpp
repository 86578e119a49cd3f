#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "ibro/model/model.hpp"
#include "ibro/numerics/numerics.hpp"

namespace model = ibro::model;
namespace num = ibro::num;
using ibro::TokenId;
using ibro::TokenSeq;

namespace {

model::ModelConfig tiny(bool value_head = false) {
  model::ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 64;
  c.has_value_head = value_head;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Init, SameSeedIsBitIdentical) {
  auto a = model::init<float>(tiny());
  auto b = model::init<float>(tiny());
  EXPECT_EQ(a.flatten(), b.flatten());
  auto c = tiny();
  c.seed = 6;
  EXPECT_NE(a.flatten(), model::init<float>(c).flatten());
}

TEST(Init, DistanceFromInitStartsAtZeroAndTracksEdits) {
  auto p = model::init<double>(tiny());
  EXPECT_EQ(p.param_l2_from_init(), 0.0);
  p.w_out.mutable_values()[0] += 3.0;
  p.b_out.mutable_values()[1] -= 4.0;
  EXPECT_NEAR(p.param_l2_from_init(), 5.0, 1e-12);
}

TEST(Init, ParameterCountMatchesClosedForm) {
  const std::size_t v = 16, d = 32, layers = 2, len = 64;
  const std::size_t per_block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * 4 * d + 4 * d) +
                                (4 * d * d + d);
  const std::size_t expected = v * d + len * d + layers * per_block + 2 * d + (d * v + v);
  EXPECT_EQ(expected, 28560u);
  EXPECT_EQ(model::init<float>(tiny()).parameter_count(), expected);
  EXPECT_EQ(model::init<float>(tiny(true)).parameter_count(), expected + d + 1);
}

TEST(Config, RejectsInvalid) {
  auto c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ibro::ConfigError);
  c = tiny();
  c.vocab_size = 1;
  EXPECT_THROW(c.validate(), ibro::ConfigError);
  c = tiny();
  c.max_seq_len = 1;
  EXPECT_THROW(c.validate(), ibro::ConfigError);
}

TEST(Forward, ShapesAndErrors) {
  auto p = model::init<float>(tiny(true));
  const TokenSeq one{3};
  auto out = model::forward(p, std::span<const TokenId>(one));
  EXPECT_EQ(out.logits.shape(), (num::Shape{1, 16}));
  EXPECT_EQ(out.values.shape(), (num::Shape{1}));
  EXPECT_TRUE(std::isfinite(out.values[0]));
  const TokenSeq bad{3, 16};
  EXPECT_THROW(model::forward(p, std::span<const TokenId>(bad)), ibro::VocabError);
  const TokenSeq neg{-1};
  EXPECT_THROW(model::forward(p, std::span<const TokenId>(neg)), ibro::VocabError);
  const TokenSeq too_long(65, 2);
  EXPECT_THROW(model::forward(p, std::span<const TokenId>(too_long)), ibro::LengthError);
  const TokenSeq empty;
  EXPECT_THROW(model::forward(p, std::span<const TokenId>(empty)), ibro::LengthError);
}

TEST(Forward, Causality) {
  auto p = model::init<float>(tiny());
  const TokenSeq base{0, 5, 9, 2, 7, 11, 1};
  const auto ref = model::forward(p, std::span<const TokenId>(base)).logits;
  for (std::size_t t = 0; t < base.size(); ++t) {
    TokenSeq changed = base;
    changed[t] = (changed[t] + 3) % 16;
    const auto out = model::forward(p, std::span<const TokenId>(changed)).logits;
    for (std::size_t i = 0; i < t * 16; ++i) ASSERT_EQ(out[i], ref[i]) << "position " << t;
  }
}

TEST(Forward, ValuesFiniteEverywhere) {
  auto p = model::init<float>(tiny(true));
  TokenSeq s;
  for (int i = 0; i < 64; ++i) s.push_back(static_cast<TokenId>((i * 7) % 16));
  auto out = model::forward(p, std::span<const TokenId>(s));
  for (float v : out.values.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, PackedMatchesSolo) {
  auto p = model::init<double>(tiny());
  const std::vector<TokenSeq> seqs{{0, 5, 6}, {0, 7}, {0, 8, 9, 10, 11}};
  auto packed = model::forward_packed(p, std::span<const TokenSeq>(seqs));
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    auto solo = model::forward(p, std::span<const TokenId>(seqs[s])).logits;
    const auto off = packed.segments[s].offset * 16;
    for (std::size_t i = 0; i < solo.size(); ++i) EXPECT_NEAR(packed.logits[off + i], solo[i], 1e-12);
  }
}

TEST(Decoder, IncrementalMatchesFullForward) {
  auto base = model::init<double>(tiny());
  ibro::Rng rng(8);
  for (auto& t : base.all()) {
    for (auto& x : t.mutable_values()) x += 0.3 * ibro::standard_normal(rng);
  }
  const std::vector<TokenSeq> seqs{{0, 5, 6, 9, 3}, {0, 7, 1}, {0, 8, 9, 10, 11, 12}};
  model::IncrementalDecoder<double> dec(base, seqs.size());
  // Prompts of different lengths first, then one token at a time.
  std::vector<std::size_t> all{0, 1, 2};
  std::vector<TokenSeq> first{{0, 5}, {0}, {0, 8, 9}};
  std::vector<std::vector<double>> got(seqs.size());
  auto logits = dec.feed(std::span<const std::size_t>(all), std::span<const TokenSeq>(first));
  const std::size_t v = 16;
  auto check = [&](std::size_t s, std::size_t slot, const std::vector<double>& out) {
    const auto full = model::forward(base, std::span<const TokenId>(seqs[s].data(), dec.length(s))).logits;
    const std::size_t row = dec.length(s) - 1;
    for (std::size_t j = 0; j < v; ++j) EXPECT_NEAR(out[slot * v + j], full[row * v + j], 1e-12);
  };
  for (std::size_t s = 0; s < 3; ++s) check(s, s, logits);
  for (std::size_t step = 0; step < 3; ++step) {
    std::vector<std::size_t> which;
    std::vector<TokenSeq> feed;
    for (std::size_t s = 0; s < 3; ++s) {
      if (dec.length(s) < seqs[s].size()) {
        which.push_back(s);
        feed.push_back({seqs[s][dec.length(s)]});
      }
    }
    logits = dec.feed(std::span<const std::size_t>(which), std::span<const TokenSeq>(feed));
    for (std::size_t i = 0; i < which.size(); ++i) check(which[i], i, logits);
  }
  EXPECT_THROW(dec.feed(std::span<const std::size_t>(all), std::span<const TokenSeq>(std::vector<TokenSeq>(3, TokenSeq(60, 0)))),
               ibro::LengthError);
}

// Snapshot of the default-config logits recorded from the first verified
// build; a regression anchor for the forward pass.
constexpr double kSnapshotSum = 4.7179817055690556;
constexpr double kSnapshotWeighted = 22.432450551916538;
constexpr double kSnapshotFirst = 0.18582485283197728;
constexpr double kSnapshotLast = 0.071076974710488572;

TEST(Forward, SnapshotAnchor) {
  model::ModelConfig c;
  c.seed = 1234;
  auto p = model::init<double>(c);
  const TokenSeq toks{0, 5, 6, 7};
  auto logits = model::forward(p, std::span<const TokenId>(toks)).logits;
  double sum = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    sum += logits[i];
    weighted += logits[i] * static_cast<double>(i % 7 + 1);
  }
  EXPECT_NEAR(sum, kSnapshotSum, 1e-9);
  EXPECT_NEAR(weighted, kSnapshotWeighted, 1e-9);
  EXPECT_NEAR(logits[0], kSnapshotFirst, 1e-10);
  EXPECT_NEAR(logits[logits.size() - 1], kSnapshotLast, 1e-10);
}

TEST(Forward, LogLikelihoodGradient) {
  auto c = tiny(true);
  c.d_model = 8;
  c.vocab_size = 7;
  c.max_seq_len = 8;
  auto p = model::init<double>(c);
  // Larger weights so the check exercises nonlinear regimes.
  ibro::Rng rng(9);
  for (auto& t : p.all()) {
    auto v = t.mutable_values();
    for (auto& x : v) x += 0.3 * ibro::standard_normal(rng);
  }
  const TokenSeq seq{0, 5, 6, 2, 3, 1};
  const std::vector<TokenId> next(seq.begin() + 1, seq.end());
  auto f = [&] {
    const TokenSeq in(seq.begin(), seq.end() - 1);
    auto out = model::forward(p, std::span<const TokenId>(in));
    auto ll = num::sum(num::gather(num::log_softmax(out.logits), std::span<const TokenId>(next)));
    return num::add(ll, num::scale(num::sum(out.values), 0.5));
  };
  auto params = p.all();
  auto rep = num::grad_check<double>(f, std::span<num::Tensor<double>>(params), 1e-5);
  EXPECT_LT(rep.max_relative_error, 1e-4);
  EXPECT_GT(rep.coordinates_checked, 100u);
}

TEST(Sampling, NucleusExample) {
  const std::vector<double> logp{std::log(0.5), std::log(0.3), std::log(0.1), std::log(0.1)};
  auto q = model::sampling_distribution(std::span<const double>(logp), 1.0, 0.7);
  EXPECT_NEAR(q[0], 0.625, 1e-12);
  EXPECT_NEAR(q[1], 0.375, 1e-12);
  EXPECT_EQ(q[2], 0.0);
  EXPECT_EQ(q[3], 0.0);
}

TEST(Sampling, NucleusTiesBreakByLowerId) {
  const std::vector<double> logits{0.0, 1.0, 1.0, 0.0};
  auto q = model::sampling_distribution(std::span<const double>(logits), 1.0, 0.3);
  EXPECT_EQ(q[1], 1.0);
  EXPECT_EQ(q[2], 0.0);
}

TEST(Sampling, GreedyIsArgmax) {
  const std::vector<float> logits{0.1f, 2.0f, -1.0f, 1.9f};
  ibro::Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(model::sample_token(std::span<const float>(logits), 1e-7, 1.0, rng), 1);
  }
}

TEST(Sampling, MonteCarloMatchesSoftmax) {
  const std::vector<double> logits{0.3, -1.2, 2.5, 0.0, 1.7};
  const auto p = model::sampling_distribution(std::span<const double>(logits), 1.0, 1.0);
  ibro::Rng rng(20251018);
  const int n = 100000;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) ++counts[model::sample_token(std::span<const double>(logits), 1.0, 1.0, rng)];
  for (int k = 0; k < 5; ++k) {
    const double se = std::sqrt(p[k] * (1 - p[k]) / n);
    EXPECT_LE(std::abs(counts[k] / static_cast<double>(n) - p[k]), 3 * se) << "token " << k;
  }
}

TEST(Sampling, Errors) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> dead{ninf, ninf};
  ibro::Rng rng(1);
  EXPECT_THROW(model::sample_token(std::span<const double>(dead), 1.0, 1.0, rng), ibro::SamplingError);
  const std::vector<double> ok{0.0, 1.0};
  EXPECT_THROW(model::sample_token(std::span<const double>(ok), 0.0, 1.0, rng), ibro::SamplingError);
  EXPECT_THROW(model::sample_token(std::span<const double>(ok), 1.0, 0.0, rng), ibro::SamplingError);
  const std::vector<double> partial{ninf, 0.0};
  EXPECT_EQ(model::sample_token(std::span<const double>(partial), 1.0, 1.0, rng), 1);
}

TEST(Checkpoint, RoundTripAndRejections) {
  auto p = model::init<float>(tiny(true));
  const auto path = (std::filesystem::temp_directory_path() / "ibro_ckpt_test.bin").string();
  model::save_checkpoint(path, p);
  auto q = model::load_checkpoint<float>(path, tiny(true));
  EXPECT_EQ(p.flatten(), q.flatten());
  EXPECT_EQ(q.config, p.config);

  EXPECT_THROW(model::load_checkpoint<float>(path, tiny(false)), ibro::FormatError);
  auto bytes = model::serialize_checkpoint(p);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(model::deserialize_checkpoint<float>(bad_version), ibro::FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(model::deserialize_checkpoint<float>(bad_magic), ibro::FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(model::deserialize_checkpoint<float>(truncated), ibro::FormatError);
  std::filesystem::remove(path);
}
