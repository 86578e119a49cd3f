#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ibro/harness/batch.hpp"
#include "ibro/model/transformer.hpp"
#include "ibro/numerics/grad_check.hpp"
#include "ibro/numerics/ops.hpp"
#include "ibro/random.hpp"
#include "ibro/rlcore/losses.hpp"

namespace ibro::harness {

struct NamedGradReport {
  std::string name;
  num::GradReport report;
};

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

using DTensor = num::Tensor<double>;

inline DTensor random_tensor(num::Shape shape, std::uint64_t seed, bool requires_grad = true) {
  Rng rng(seed);
  std::vector<double> v(num::shape_size(shape));
  for (auto& x : v) x = standard_normal(rng);
  return DTensor::from_values(std::move(v), std::move(shape), requires_grad);
}

// Weighted sum, so every output coordinate receives a distinct gradient.
inline DTensor weighted_sum(const DTensor& t, std::uint64_t seed) {
  return num::sum(num::mul(t, random_tensor(t.shape(), seed, false)));
}

}  // namespace detail

// Finite-difference checks of every differentiable op and of the full
// policy loss on a tiny model in each regularizer mode, all in double.
inline std::vector<NamedGradReport> run_gradcheck_suite(std::uint64_t seed = 0) {
  using detail::DTensor;
  std::vector<NamedGradReport> out;
  const auto check = [&out](std::string name, const std::function<DTensor()>& f, std::vector<DTensor> params) {
    out.push_back({std::move(name), num::grad_check<double>(f, std::span<DTensor>(params), kGradCheckEps)});
  };
  const auto r = [seed](num::Shape s, std::uint64_t k) { return detail::random_tensor(std::move(s), derive_seed(seed, {k})); };
  const auto ws = [seed](const DTensor& t) { return detail::weighted_sum(t, derive_seed(seed, {99})); };

  auto a = r({3, 4}, 1), b = r({4, 5}, 2), bias = r({5}, 3), c = r({3, 4}, 4);
  auto gain = r({4}, 5), shift = r({4}, 6), table = r({6, 4}, 7), qkv = r({7, 12}, 8);
  const std::vector<TokenId> ids{2, 5, 2, 0};
  const std::vector<TokenId> picks{1, 0, 3};
  const std::vector<std::size_t> rows{2, 0};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const std::vector<num::Segment> segs{{0, 3}, {3, 4}};

  check("matmul", [&] { return ws(num::matmul(a, b)); }, {a, b});
  check("linear", [&] { return ws(num::linear(a, b, bias)); }, {a, b, bias});
  check("add", [&] { return ws(num::add(a, c)); }, {a, c});
  check("sub", [&] { return ws(num::sub(a, c)); }, {a, c});
  check("mul", [&] { return ws(num::mul(a, c)); }, {a, c});
  check("scale", [&] { return ws(num::scale(a, 1.7)); }, {a});
  check("reshape", [&] { return ws(num::reshape(a, {4, 3})); }, {a});
  check("gelu", [&] { return ws(num::gelu(a)); }, {a});
  check("embedding", [&] { return ws(num::embedding(table, std::span<const TokenId>(ids))); }, {table});
  check("select_rows", [&] { return ws(num::select_rows(a, std::span<const std::size_t>(rows))); }, {a});
  check("gather", [&] { return ws(num::gather(a, std::span<const TokenId>(picks))); }, {a});
  check("masked_mean", [&] {
    return num::masked_mean(num::gather(a, std::span<const TokenId>(picks)), std::span<const std::uint8_t>(mask)).value;
  }, {a});
  check("layer_norm", [&] { return ws(num::layer_norm(a, gain, shift)); }, {a, gain, shift});
  check("log_softmax", [&] { return ws(num::log_softmax(a)); }, {a});
  check("entropy", [&] { return ws(num::entropy_from_logits(a)); }, {a});
  check("causal_attention",
        [&] { return ws(num::causal_attention(qkv, 2, std::span<const num::Segment>(segs))); }, {qkv});

  model::ModelConfig mc;
  mc.vocab_size = 7;
  mc.d_model = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.max_seq_len = 8;
  mc.has_value_head = true;
  mc.seed = seed;
  auto p = model::init<double>(mc);
  Rng rng(derive_seed(seed, {0x9c}));
  for (auto& t : p.all()) {
    for (auto& x : t.mutable_values()) x += 0.4 * standard_normal(rng);
  }
  UpdateBatch batch;
  const std::vector<TokenSeq> seqs{{0, 5, 6, 2, 3, 1}, {0, 4, 2, 6, 1}};
  std::size_t offset = 0;
  for (const auto& s : seqs) {
    for (std::size_t t = 2; t < s.size(); ++t) {
      batch.rows.push_back(offset + t - 1);
      batch.targets.push_back(s[t]);
      batch.advantages.push_back(1.5 * standard_normal(rng));
      batch.mask.push_back(batch.mask.size() == 3 ? 0 : 1);
      batch.returns.push_back(standard_normal(rng));
      batch.old_values.push_back(0.0);
    }
    offset += s.size();
  }
  batch.seqs = seqs;
  {
    // Old log-probs sit a fixed distance from the current ones, away from the clip edges.
    auto fwd = model::forward_packed(p, std::span<const TokenSeq>(batch.seqs));
    auto lp = num::gather(num::log_softmax(num::select_rows(fwd.logits, std::span<const std::size_t>(batch.rows))),
                          std::span<const TokenId>(batch.targets));
    for (std::size_t i = 0; i < lp.size(); ++i) {
      batch.old_logp.push_back(lp[i] + (i % 3 == 0 ? 0.4 : -0.05));
      batch.old_values[i] = fwd.values[batch.rows[i]] + (i % 2 ? 0.5 : -0.5);
    }
  }
  for (auto kind : {rlcore::RegularizerKind::none, rlcore::RegularizerKind::naive, rlcore::RegularizerKind::ib,
                    rlcore::RegularizerKind::generalized_ib}) {
    const rlcore::RegularizerMode mode{kind, 0.3, 0.5, false};
    check("total_policy_loss/" + rlcore::to_string(kind),
          [&] { return batch_loss(p, batch, rlcore::ClipConfig{}, mode).total; }, p.actor());
  }
  check("value_loss", [&] { return batch_loss(p, batch, rlcore::ClipConfig{}, {}, 1.0, 0.2).total; }, p.all());
  return out;
}

inline double max_relative_error(const std::vector<NamedGradReport>& reports) {
  double m = 0.0;
  for (const auto& r : reports) m = std::max(m, r.report.max_relative_error);
  return m;
}

}  // namespace ibro::harness
