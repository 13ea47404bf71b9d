#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icdc/rng.hpp"

namespace icdc {

struct Encounter {
  std::int64_t day = 0;
  std::vector<std::string> codes;  // nonempty, no duplicates
  std::string note_text;           // empty means no note attached
  int primary_condition = -1;      // latent generator state, kept for diagnostics
};

struct Patient {
  std::string patient_id;
  std::vector<Encounter> encounters;  // days strictly increasing
};

struct NoteRecord {
  std::string note_id;
  std::string text;
  std::vector<std::string> codes;  // code set of the same encounter
  std::int64_t day = 0;
};

struct SynthConfig {
  std::size_t n_patients = 200;
  std::size_t n_conditions = 20;        // latent comorbidity clusters
  std::size_t codes_per_condition = 15;
  std::size_t n_background_codes = 120; // pure long-tail codes outside any cluster
  double zipf_exponent = 1.1;           // background rank-frequency tail
  double mean_codes_per_sequence = 86.64;
  std::size_t min_encounters = 5;
  double noise_rate = 0.2;              // fraction of code slots drawn from the background
  std::size_t note_sentences = 3;
  std::vector<std::string> template_vocabulary;  // filler words; defaults used when empty
};

struct Cohort {
  std::vector<Patient> patients;
  SynthConfig config;  // echo of the generating configuration
  std::uint64_t seed = 0;
};

// Deterministic code universe derived from the config: conditions own
// interleaved ranks so every cluster mixes common and rare codes, and the
// remaining ranks form the pure background tail. Code strings look like
// ICD-10 ("A42", "B07.3") so real description files stay pluggable.
std::size_t universe_size(const SynthConfig& config);
std::string code_for_rank(std::size_t rank);
std::vector<std::vector<std::string>> condition_code_pools(const SynthConfig& config);
std::vector<std::string> condition_words(std::size_t condition, std::size_t n_words = 6);

// Synthetic textual descriptions for every code in the universe. Condition
// codes share vocabulary with the notes of their cluster so that description
// matching is learnable.
std::map<std::string, std::string> synth_descriptions(const SynthConfig& config);

// Deterministic for a fixed (config, seed); per-patient substreams make
// generation order-independent. Throws ConfigError on infeasible configs.
Cohort generate_cohort(const SynthConfig& config, std::uint64_t seed);

// n iid draws from the background noise distribution used by the generator:
// P(rank r) proportional to (r + 1)^-zipf_exponent over the code universe.
std::vector<std::string> background_code_sample(const SynthConfig& config, std::size_t n, RngStream& rng);

// Flatten every encounter that carries a note.
std::vector<NoteRecord> cohort_notes(const Cohort& cohort);

// ICD-9 -> ICD-10 translation. A unique candidate is returned as-is;
// ambiguous mappings take a uniform seeded draw from the candidate list.
using IcdMapping = std::map<std::string, std::vector<std::string>>;
std::string map_icd9_to_icd10(const std::string& icd9, const IcdMapping& mapping, RngStream& rng);

// Caching wrapper: the first draw for an ambiguous code is reused for every
// later occurrence of that code.
class Icd9Mapper {
 public:
  Icd9Mapper(IcdMapping mapping, RngStream stream) : mapping_(std::move(mapping)), stream_(std::move(stream)) {}
  const std::string& map(const std::string& icd9);

 private:
  IcdMapping mapping_;
  RngStream stream_;
  std::map<std::string, std::string> cache_;
};

// Removes de-identification placeholders "[** ... **]", collapses whitespace
// runs to single spaces, trims the ends.
std::string preprocess_text(const std::string& raw);

}  // namespace icdc
