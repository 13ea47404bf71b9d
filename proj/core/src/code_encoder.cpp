#include "icdc/code_encoder.hpp"

#include <algorithm>

namespace icdc {

std::vector<EncounterSequence> build_sequence_variants(const Patient& patient, const CodeVocab& vocab,
                                                       std::size_t k, std::size_t max_len, RngStream& rng) {
  if (patient.encounters.empty()) throw DataError("build_sequence_variants: patient has no encounters");
  if (max_len < 2) throw DataError("build_sequence_variants: max_len must be >= 2");

  std::vector<std::int32_t> token_ids;
  std::vector<std::size_t> token_encounter;
  for (std::size_t e = 0; e < patient.encounters.size(); ++e) {
    for (const auto& code : patient.encounters[e].codes) {
      token_ids.push_back(vocab.lookup(code));
      token_encounter.push_back(e);
    }
  }

  const std::size_t n_enc = patient.encounters.size();
  const auto chosen = rng.sample_without_replacement(n_enc, std::min(k, n_enc));

  std::vector<EncounterSequence> variants;
  variants.reserve(chosen.size());
  const std::size_t budget = max_len - 1;  // CLS is prepended at batch assembly
  for (std::size_t current : chosen) {
    EncounterSequence seq;
    seq.patient_id = patient.patient_id;
    seq.current_encounter = current;

    std::size_t start = 0, count = token_ids.size();
    if (token_ids.size() > budget) {
      // Keep a window centered on the current encounter's token span so the
      // offset-0 block always survives truncation.
      std::size_t first = token_ids.size(), last = 0;
      for (std::size_t t = 0; t < token_encounter.size(); ++t) {
        if (token_encounter[t] == current) {
          first = std::min(first, t);
          last = t;
        }
      }
      const std::size_t center = (first + last) / 2;
      start = center > budget / 2 ? center - budget / 2 : 0;
      start = std::min(start, token_ids.size() - budget);
      count = budget;
    }

    const std::int64_t current_day = patient.encounters[current].day;
    for (std::size_t t = start; t < start + count; ++t) {
      seq.token_ids.push_back(token_ids[t]);
      seq.day_offsets.push_back(patient.encounters[token_encounter[t]].day - current_day);
      seq.token_types.push_back(token_encounter[t] == current ? 1 : 0);
    }
    variants.push_back(std::move(seq));
  }
  return variants;
}

EncounterSequence single_encounter_sequence(const std::vector<std::string>& codes, const CodeVocab& vocab,
                                            const std::string& patient_id) {
  EncounterSequence seq;
  seq.patient_id = patient_id;
  for (const auto& code : codes) {
    seq.token_ids.push_back(vocab.lookup(code));
    seq.day_offsets.push_back(0);
    seq.token_types.push_back(1);
  }
  return seq;
}

CodeBatch make_code_batch(const std::vector<const EncounterSequence*>& sequences) {
  if (sequences.empty()) throw DataError("make_code_batch: empty batch");
  CodeBatch batch;
  batch.batch = sequences.size();
  std::size_t longest = 0;
  for (const auto* seq : sequences) longest = std::max(longest, seq->token_ids.size());
  batch.max_len = longest + 1;  // CLS

  batch.ids.assign(batch.batch * batch.max_len, CodeVocab::kPad);
  batch.offsets.assign(batch.batch * batch.max_len, 0);
  batch.types.assign(batch.batch * batch.max_len, 0);
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    const EncounterSequence& seq = *sequences[r];
    const std::size_t base = r * batch.max_len;
    batch.ids[base] = CodeVocab::kCls;
    batch.types[base] = 1;  // CLS sits with the current encounter at offset 0
    for (std::size_t t = 0; t < seq.token_ids.size(); ++t) {
      batch.ids[base + 1 + t] = seq.token_ids[t];
      batch.offsets[base + 1 + t] = seq.day_offsets[t];
      batch.types[base + 1 + t] = seq.token_types[t];
    }
    batch.lengths.push_back(seq.token_ids.size() + 1);
  }
  return batch;
}

CodeBatch make_code_batch(const std::vector<EncounterSequence>& sequences) {
  std::vector<const EncounterSequence*> ptrs;
  ptrs.reserve(sequences.size());
  for (const auto& s : sequences) ptrs.push_back(&s);
  return make_code_batch(ptrs);
}

MaskedBatch mask_code_batch(const CodeBatch& batch, const MaskingPolicy& policy, std::int32_t vocab_size,
                            RngStream& rng) {
  return apply_mlm_masking(batch.ids, batch.batch, batch.max_len, batch.lengths, policy, CodeVocab::kMask,
                           CodeVocab::kNumSpecials, vocab_size, rng);
}

}  // namespace icdc
