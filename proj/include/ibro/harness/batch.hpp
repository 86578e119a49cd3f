#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ibro/model/transformer.hpp"
#include "ibro/numerics/ops.hpp"
#include "ibro/rlcore/losses.hpp"
#include "ibro/rollout/rollout.hpp"

namespace ibro::harness {

// Flattened response tokens of several trajectories, ready for one packed
// forward. Token k is predicted by logits row `rows[k]`.
struct UpdateBatch {
  std::vector<TokenSeq> seqs;
  std::vector<std::size_t> rows;
  std::vector<TokenId> targets;
  std::vector<double> old_logp;
  std::vector<double> advantages;
  std::vector<std::uint8_t> mask;
  std::vector<double> returns;     // ppo only
  std::vector<double> old_values;  // ppo only

  std::size_t tokens() const { return targets.size(); }

  // Appends one trajectory with a per-token advantage vector.
  void add(const rollout::Trajectory& tr, std::span<const double> adv) {
    std::size_t offset = 0;
    for (const auto& s : seqs) offset += s.size();
    TokenSeq seq = tr.prompt_tokens;
    seq.insert(seq.end(), tr.response_tokens.begin(), tr.response_tokens.end());
    const std::size_t p = tr.prompt_tokens.size();
    for (std::size_t t = 0; t < tr.response_tokens.size(); ++t) {
      rows.push_back(offset + p + t - 1);
      targets.push_back(tr.response_tokens[t]);
      old_logp.push_back(tr.old_logprobs[t]);
      advantages.push_back(adv[t]);
      mask.push_back(tr.response_mask[t]);
    }
    seqs.push_back(std::move(seq));
  }
};

template <class T>
struct BatchLoss {
  num::Tensor<T> total;
  rlcore::LossReport report;
};

// Policy loss (plus the weighted value loss when value_coeff > 0 and the
// model has a value head) for one mini-batch.
template <class T>
BatchLoss<T> batch_loss(const model::PolicyParams<T>& params, const UpdateBatch& b,
                        const rlcore::ClipConfig& clip, const rlcore::RegularizerMode& reg,
                        double value_coeff = 0.0, std::optional<double> value_clip = std::nullopt) {
  auto out = model::forward_packed(params, std::span<const TokenSeq>(b.seqs));
  const std::span<const std::size_t> rows(b.rows);
  auto logits = num::select_rows(out.logits, rows);
  auto logp = num::gather(num::log_softmax(logits), std::span<const TokenId>(b.targets));
  auto ent = num::entropy_from_logits(logits);
  const std::span<const double> adv(b.advantages);
  const std::span<const std::uint8_t> mask(b.mask);
  auto pg = rlcore::ppo_clip_loss(logp, std::span<const double>(b.old_logp), adv, mask, clip);
  auto j = rlcore::entropy_regularizer(ent, adv, mask, reg);
  BatchLoss<T> res;
  res.total = rlcore::total_policy_loss(pg.loss, j, reg.alpha);
  auto& rep = res.report;
  rep.pg_loss = static_cast<double>(pg.loss.item());
  rep.entropy_reg_value = static_cast<double>(j.item());
  rep.clip_fraction = pg.clip_fraction;
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ent.size(); ++i) {
    if (!b.mask[i]) continue;
    s += static_cast<double>(ent[i]);
    ++n;
  }
  rep.mean_token_entropy = n ? s / static_cast<double>(n) : 0.0;
  if (params.config.has_value_head && value_coeff > 0) {
    auto values = num::select_rows(num::reshape(out.values, {out.values.size(), 1}), rows);
    auto vl = rlcore::value_loss(num::reshape(values, {b.rows.size()}), std::span<const double>(b.returns),
                                 std::span<const double>(b.old_values), mask, value_clip);
    rep.value_loss = static_cast<double>(vl.item());
    res.total = num::add(res.total, num::scale(vl, static_cast<T>(value_coeff)));
  }
  rep.total_loss = static_cast<double>(res.total.item());
  return res;
}

}  // namespace ibro::harness
