#include "icdc/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "icdc/errors.hpp"

namespace icdc {

namespace {

const char* kSyllables[] = {"ax",  "bro", "cor", "dex", "em",  "fib", "gast", "hep", "iv",  "lys",
                            "myo", "neo", "oss", "path", "quin", "ren", "sten", "tox", "ul",  "vas"};
constexpr std::size_t kNumSyllables = sizeof(kSyllables) / sizeof(kSyllables[0]);

const char* kDefaultFillers[] = {
    "patient", "presents", "with",    "history", "of",    "exam",  "reveals", "stable", "followup",
    "plan",    "continue", "monitor", "denies",  "acute", "onset", "noted",   "during", "admission",
    "course",  "improved", "daily",   "review",  "labs",  "within", "limits"};
constexpr std::size_t kNumFillers = sizeof(kDefaultFillers) / sizeof(kDefaultFillers[0]);

std::vector<std::string> default_fillers() {
  return std::vector<std::string>(kDefaultFillers, kDefaultFillers + kNumFillers);
}

// Inverse-CDF sampler for P(rank) proportional to (rank + 1)^-s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s) : cdf_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += std::pow(static_cast<double>(r + 1), -s);
      cdf_[r] = total;
    }
    for (auto& c : cdf_) c /= total;
  }

  std::size_t draw(RngStream& rng) const {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

void validate(const SynthConfig& c) {
  if (c.n_patients == 0 || c.n_conditions == 0 || c.codes_per_condition == 0 || c.min_encounters == 0 ||
      c.note_sentences == 0) {
    throw ConfigError("generate_cohort: all counts must be positive");
  }
  if (!(c.zipf_exponent > 0.0)) throw ConfigError("generate_cohort: zipf_exponent must be > 0");
  if (c.noise_rate < 0.0 || c.noise_rate > 1.0) throw ConfigError("generate_cohort: noise_rate must be in [0,1]");
  if (c.mean_codes_per_sequence < static_cast<double>(c.min_encounters)) {
    throw ConfigError("generate_cohort: mean_codes_per_sequence below one code per required encounter");
  }
  const double mean_encounters = static_cast<double>(c.min_encounters) + 3.5;
  const std::size_t per_encounter = static_cast<std::size_t>(
      std::lround(c.mean_codes_per_sequence / mean_encounters)) + 4;
  if (per_encounter > universe_size(c)) {
    throw ConfigError("generate_cohort: requested codes per encounter exceed the code universe");
  }
}

}  // namespace

std::size_t universe_size(const SynthConfig& config) {
  return config.n_conditions * config.codes_per_condition + config.n_background_codes;
}

std::string code_for_rank(std::size_t rank) {
  const char letter = static_cast<char>('A' + rank % 26);
  const std::size_t number = (rank / 26) % 100;
  const std::size_t sub = rank / 2600;
  std::string code;
  code += letter;
  code += static_cast<char>('0' + number / 10);
  code += static_cast<char>('0' + number % 10);
  if (sub > 0) code += "." + std::to_string(sub);
  return code;
}

std::vector<std::vector<std::string>> condition_code_pools(const SynthConfig& config) {
  // Interleave ranks across conditions: condition c owns ranks c, c+N, c+2N...
  std::vector<std::vector<std::string>> pools(config.n_conditions);
  for (std::size_t c = 0; c < config.n_conditions; ++c) {
    for (std::size_t j = 0; j < config.codes_per_condition; ++j) {
      pools[c].push_back(code_for_rank(c + j * config.n_conditions));
    }
  }
  return pools;
}

std::vector<std::string> condition_words(std::size_t condition, std::size_t n_words) {
  std::vector<std::string> words;
  RngStream rng(condition, "condition-words");
  for (std::size_t w = 0; w < n_words; ++w) {
    std::string word = kSyllables[rng.next_below(kNumSyllables)];
    word += kSyllables[rng.next_below(kNumSyllables)];
    word += kSyllables[rng.next_below(kNumSyllables)];
    words.push_back(std::move(word));
  }
  return words;
}

std::map<std::string, std::string> synth_descriptions(const SynthConfig& config) {
  std::map<std::string, std::string> descriptions;
  const auto pools = condition_code_pools(config);
  for (std::size_t c = 0; c < config.n_conditions; ++c) {
    const auto words = condition_words(c);
    for (std::size_t j = 0; j < pools[c].size(); ++j) {
      const std::string& w1 = words[j % words.size()];
      const std::string& w2 = words[(j + 1) % words.size()];
      std::string qualifier = j % 3 == 0 ? "chronic" : (j % 3 == 1 ? "acute" : "recurrent");
      descriptions[pools[c][j]] = qualifier + " " + w1 + " with " + w2 + " grade " + std::to_string(j);
    }
  }
  const std::size_t tail_start = config.n_conditions * config.codes_per_condition;
  for (std::size_t r = tail_start; r < universe_size(config); ++r) {
    RngStream rng(r, "background-words");
    std::string word = kSyllables[rng.next_below(kNumSyllables)];
    word += kSyllables[rng.next_below(kNumSyllables)];
    descriptions[code_for_rank(r)] = "unspecified " + word + " finding " + std::to_string(r - tail_start);
  }
  return descriptions;
}

namespace {

std::string make_note(const SynthConfig& config, const std::vector<std::string>& fillers,
                      const std::vector<std::size_t>& patient_conditions, std::size_t primary,
                      RngStream& rng) {
  const auto primary_words = condition_words(primary);
  auto pick_filler = [&]() -> const std::string& { return fillers[rng.next_below(fillers.size())]; };
  auto pick_primary = [&]() -> const std::string& { return primary_words[rng.next_below(primary_words.size())]; };

  std::string note;
  for (std::size_t s = 0; s < config.note_sentences; ++s) {
    if (s) note += " ";
    // The opening sentence always names the presenting condition so that the
    // note-to-diagnosis signal survives shorter notes.
    switch (s == 0 ? 0 : rng.next_below(4)) {
      case 0:
        note += "patient presents with " + pick_primary() + " and " + pick_primary();
        break;
      case 1:
        note += "exam reveals " + pick_primary() + " " + pick_filler() + " " + pick_filler();
        break;
      case 2: {
        // Comorbidity mention from another of the patient's conditions.
        const std::size_t other = patient_conditions[rng.next_below(patient_conditions.size())];
        const auto other_words = condition_words(other);
        note += "history of " + other_words[rng.next_below(other_words.size())] + " " + pick_filler();
        break;
      }
      default:
        note += "plan " + pick_filler() + " " + pick_filler() + " monitor " + pick_primary();
        break;
    }
  }
  return note;
}

}  // namespace

Cohort generate_cohort(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  const auto pools = condition_code_pools(config);
  const std::vector<std::string> fillers =
      config.template_vocabulary.empty() ? default_fillers() : config.template_vocabulary;
  const ZipfSampler zipf(universe_size(config), config.zipf_exponent);

  const double mean_encounters = static_cast<double>(config.min_encounters) + 3.5;
  const double codes_per_encounter = config.mean_codes_per_sequence / mean_encounters;
  const std::size_t k_base = static_cast<std::size_t>(
      std::max<long>(1, std::lround(codes_per_encounter) - 3));

  Cohort cohort;
  cohort.config = config;
  cohort.seed = seed;
  cohort.patients.resize(config.n_patients);

  for (std::size_t p = 0; p < config.n_patients; ++p) {
    RngStream rng(seed, "cohort", p);
    Patient& patient = cohort.patients[p];
    patient.patient_id = "p" + std::to_string(100000 + p);

    const std::size_t n_cond = 1 + rng.next_below(4);
    const auto conditions = rng.sample_without_replacement(config.n_conditions, n_cond);

    const std::size_t n_enc = config.min_encounters + rng.next_below(8);
    std::int64_t day = 1 + static_cast<std::int64_t>(rng.next_below(30));
    for (std::size_t e = 0; e < n_enc; ++e) {
      Encounter enc;
      enc.day = day;
      day += 1 + static_cast<std::int64_t>(rng.next_below(90));
      const std::size_t primary = conditions[rng.next_below(conditions.size())];
      enc.primary_condition = static_cast<int>(primary);

      const std::size_t k = k_base + rng.next_below(7);
      std::set<std::string> used;
      for (std::size_t slot = 0; slot < k; ++slot) {
        std::string code;
        if (rng.uniform() < config.noise_rate) {
          code = code_for_rank(zipf.draw(rng));
          if (used.count(code)) code = code_for_rank(zipf.draw(rng));  // one retry
        } else {
          const std::size_t cond =
              rng.uniform() < 0.7 ? primary : conditions[rng.next_below(conditions.size())];
          const auto& pool = pools[cond];
          code = pool[rng.next_below(pool.size())];
          if (used.count(code)) code = pool[rng.next_below(pool.size())];
        }
        if (used.insert(code).second) enc.codes.push_back(std::move(code));
      }
      if (enc.codes.empty()) enc.codes.push_back(pools[primary][0]);

      enc.note_text = make_note(config, fillers, conditions, primary, rng);
      patient.encounters.push_back(std::move(enc));
    }
  }
  return cohort;
}

std::vector<std::string> background_code_sample(const SynthConfig& config, std::size_t n, RngStream& rng) {
  const ZipfSampler zipf(universe_size(config), config.zipf_exponent);
  std::vector<std::string> codes;
  codes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) codes.push_back(code_for_rank(zipf.draw(rng)));
  return codes;
}

std::vector<NoteRecord> cohort_notes(const Cohort& cohort) {
  std::vector<NoteRecord> notes;
  for (const auto& patient : cohort.patients) {
    for (std::size_t e = 0; e < patient.encounters.size(); ++e) {
      const Encounter& enc = patient.encounters[e];
      if (enc.note_text.empty()) continue;
      notes.push_back({patient.patient_id + "-e" + std::to_string(e), enc.note_text, enc.codes, enc.day});
    }
  }
  return notes;
}

std::string map_icd9_to_icd10(const std::string& icd9, const IcdMapping& mapping, RngStream& rng) {
  auto it = mapping.find(icd9);
  if (it == mapping.end() || it->second.empty()) {
    throw DataError("map_icd9_to_icd10: no mapping for ICD-9 code " + icd9);
  }
  const auto& candidates = it->second;
  if (candidates.size() == 1) return candidates[0];
  return candidates[rng.next_below(candidates.size())];
}

const std::string& Icd9Mapper::map(const std::string& icd9) {
  auto cached = cache_.find(icd9);
  if (cached != cache_.end()) return cached->second;
  return cache_.emplace(icd9, map_icd9_to_icd10(icd9, mapping_, stream_)).first->second;
}

std::string preprocess_text(const std::string& raw) {
  std::string no_placeholders;
  no_placeholders.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw.compare(i, 3, "[**") == 0) {
      const std::size_t close = raw.find("**]", i + 3);
      if (close != std::string::npos) {
        i = close + 3;
        continue;
      }
    }
    no_placeholders.push_back(raw[i++]);
  }
  std::string out;
  out.reserve(no_placeholders.size());
  bool in_space = false;
  for (char c : no_placeholders) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace icdc
