#pragma once

// MLM corruption shared by the code and text encoders. Per sequence, exactly
// round(mask_ratio * maskable) positions are selected; special tokens (CLS,
// PAD, SEP, ...) are never maskable. Selected positions are replaced by the
// mask token, a random content token, or kept, per the configured split.

#include <cmath>
#include <cstdint>
#include <vector>

#include "icdc/errors.hpp"
#include "icdc/rng.hpp"

namespace icdc {

struct MaskingPolicy {
  double mask_ratio = 0.20;
  double mask_token_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;
  std::int32_t ignore_index = -100;

  void validate() const {
    if (!(mask_ratio > 0.0) || !(mask_ratio < 1.0)) {
      throw ConfigError("MaskingPolicy: mask_ratio must be in (0, 1)");
    }
    if (std::abs(mask_token_frac + random_frac + keep_frac - 1.0) > 1e-9) {
      throw ConfigError("MaskingPolicy: corruption fractions must sum to 1");
    }
  }
};

struct MaskedBatch {
  std::vector<std::int32_t> ids;     // corrupted, same layout as the input
  std::vector<std::int32_t> labels;  // original ids at selected positions, ignore_index elsewhere
  std::size_t n_masked = 0;
};

// ids is row-major [rows, row_len]; positions at col >= lengths[row] are PAD.
// Content tokens are those with id >= first_content_id.
inline MaskedBatch apply_mlm_masking(const std::vector<std::int32_t>& ids, std::size_t rows,
                                     std::size_t row_len, const std::vector<std::size_t>& lengths,
                                     const MaskingPolicy& policy, std::int32_t mask_id,
                                     std::int32_t first_content_id, std::int32_t vocab_size,
                                     RngStream& rng) {
  policy.validate();
  if (vocab_size <= first_content_id) throw ConfigError("apply_mlm_masking: no content tokens in vocab");
  MaskedBatch out;
  out.ids = ids;
  out.labels.assign(ids.size(), policy.ignore_index);

  std::vector<std::size_t> maskable;
  for (std::size_t r = 0; r < rows; ++r) {
    maskable.clear();
    for (std::size_t c = 0; c < lengths[r]; ++c) {
      if (ids[r * row_len + c] >= first_content_id) maskable.push_back(r * row_len + c);
    }
    const auto n_select =
        static_cast<std::size_t>(std::lround(policy.mask_ratio * static_cast<double>(maskable.size())));
    if (n_select == 0) continue;
    // Partial Fisher-Yates over the maskable positions.
    for (std::size_t i = 0; i < n_select; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next_below(maskable.size() - i));
      std::swap(maskable[i], maskable[j]);
      const std::size_t pos = maskable[i];
      out.labels[pos] = ids[pos];
      const double u = rng.uniform();
      if (u < policy.mask_token_frac) {
        out.ids[pos] = mask_id;
      } else if (u < policy.mask_token_frac + policy.random_frac) {
        out.ids[pos] = first_content_id +
                       static_cast<std::int32_t>(rng.next_below(
                           static_cast<std::uint64_t>(vocab_size - first_content_id)));
      }  // else keep the original token
      ++out.n_masked;
    }
  }
  return out;
}

}  // namespace icdc
