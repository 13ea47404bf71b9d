#include <doctest.h>

#include <cmath>
#include <map>
#include <fstream>
#include <sstream>

#include "icdc/data_io.hpp"
#include "icdc/errors.hpp"
#include "icdc/synth.hpp"

using namespace icdc;
namespace fs = std::filesystem;

namespace {

std::string serialize_cohort(const Cohort& cohort) {
  auto enc_path = fs::temp_directory_path() / "icdc_synth_enc.csv";
  auto notes_path = fs::temp_directory_path() / "icdc_synth_notes.jsonl";
  emit_encounters(enc_path, cohort.patients);
  emit_notes(notes_path, cohort_notes(cohort));
  std::ifstream e(enc_path), n(notes_path);
  std::stringstream ss;
  ss << e.rdbuf() << n.rdbuf();
  fs::remove(enc_path);
  fs::remove(notes_path);
  return ss.str();
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("identical config and seed give byte-identical cohorts") {
  SynthConfig cfg;
  cfg.n_patients = 20;
  CHECK(serialize_cohort(generate_cohort(cfg, 7)) == serialize_cohort(generate_cohort(cfg, 7)));
  CHECK(serialize_cohort(generate_cohort(cfg, 7)) != serialize_cohort(generate_cohort(cfg, 8)));
}

TEST_CASE("every patient has at least min_encounters encounters") {
  SynthConfig cfg;
  cfg.n_patients = 50;
  cfg.min_encounters = 5;
  Cohort cohort = generate_cohort(cfg, 3);
  for (const auto& p : cohort.patients) CHECK(p.encounters.size() >= 5);
}

TEST_CASE("per-patient code totals hit the configured mean within 20 percent") {
  SynthConfig cfg;
  cfg.n_patients = 300;
  Cohort cohort = generate_cohort(cfg, 11);
  double total = 0.0;
  for (const auto& p : cohort.patients) {
    for (const auto& e : p.encounters) total += static_cast<double>(e.codes.size());
  }
  const double mean = total / static_cast<double>(cohort.patients.size());
  CHECK(mean > 86.64 * 0.8);
  CHECK(mean < 86.64 * 1.2);
}

TEST_CASE("patient invariants: strictly increasing days, nonempty code sets") {
  Cohort cohort = generate_cohort(SynthConfig{.n_patients = 30}, 5);
  for (const auto& p : cohort.patients) {
    for (std::size_t e = 0; e < p.encounters.size(); ++e) {
      CHECK_FALSE(p.encounters[e].codes.empty());
      if (e) CHECK(p.encounters[e].day > p.encounters[e - 1].day);
    }
  }
}

TEST_CASE("infeasible configs are rejected") {
  SynthConfig cfg;
  cfg.n_conditions = 0;
  CHECK_THROWS_AS(generate_cohort(cfg, 1), ConfigError);
  SynthConfig cfg2;
  cfg2.zipf_exponent = 0.0;
  CHECK_THROWS_AS(generate_cohort(cfg2, 1), ConfigError);
  SynthConfig cfg3;
  cfg3.n_conditions = 1;
  cfg3.codes_per_condition = 2;
  cfg3.n_background_codes = 0;
  cfg3.mean_codes_per_sequence = 90.0;
  CHECK_THROWS_AS(generate_cohort(cfg3, 1), ConfigError);
}

TEST_CASE("background sampler follows the configured zipf tail") {
  SynthConfig cfg;
  RngStream rng(99, "zipf-check");
  const auto sample = background_code_sample(cfg, 10000, rng);
  std::map<std::string, std::size_t> counts;
  for (const auto& c : sample) ++counts[c];
  std::vector<std::size_t> freqs;
  for (const auto& [code, n] : counts) freqs.push_back(n);
  std::sort(freqs.rbegin(), freqs.rend());

  // Least-squares slope of log(freq) on log(rank) over the head that carries
  // 80% of the sampled mass.
  std::size_t cum = 0;
  std::size_t head = 0;
  while (head < freqs.size() && cum < sample.size() * 8 / 10) cum += freqs[head++];
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t r = 0; r < head; ++r) {
    const double x = std::log(static_cast<double>(r + 1));
    const double y = std::log(static_cast<double>(freqs[r]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(head);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(-cfg.zipf_exponent).epsilon(0.15 / cfg.zipf_exponent));
}

TEST_CASE("bag-of-words signal: notes predict their primary condition") {
  SynthConfig cfg;
  cfg.n_patients = 120;
  Cohort cohort = generate_cohort(cfg, 21);

  // Collect (note words, primary condition) pairs; train a count-based
  // classifier on even patients, evaluate on odd ones.
  std::vector<std::map<std::string, double>> word_scores(cfg.n_conditions);
  auto words_of = [](const std::string& text) {
    std::vector<std::string> ws;
    std::istringstream is(text);
    std::string w;
    while (is >> w) ws.push_back(w);
    return ws;
  };
  for (std::size_t p = 0; p < cohort.patients.size(); p += 2) {
    for (const auto& e : cohort.patients[p].encounters) {
      for (const auto& w : words_of(e.note_text)) word_scores[static_cast<std::size_t>(e.primary_condition)][w] += 1.0;
    }
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t p = 1; p < cohort.patients.size(); p += 2) {
    for (const auto& e : cohort.patients[p].encounters) {
      std::size_t best = 0;
      double best_score = -1.0;
      for (std::size_t c = 0; c < cfg.n_conditions; ++c) {
        double score = 0.0;
        double norm = 1.0;
        for (const auto& [w, n] : word_scores[c]) norm += n;
        for (const auto& w : words_of(e.note_text)) {
          auto it = word_scores[c].find(w);
          score += std::log((1.0 + (it == word_scores[c].end() ? 0.0 : it->second)) / norm);
        }
        if (best_score == -1.0 || score > best_score) {
          best_score = score;
          best = c;
        }
      }
      correct += best == static_cast<std::size_t>(e.primary_condition);
      ++total;
    }
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) > 0.8);
}

TEST_CASE("icd9 mapping: unique candidate needs no randomness") {
  IcdMapping mapping = {{"250.00", {"E11.9"}}, {"401.9", {"I10", "I15.0", "I15.9"}}};
  RngStream rng(42, "icd-map");
  CHECK(map_icd9_to_icd10("250.00", mapping, rng) == "E11.9");
}

TEST_CASE("icd9 mapping: ambiguous candidate follows the documented draw") {
  IcdMapping mapping = {{"401.9", {"I10", "I15.0", "I15.9"}}};
  RngStream rng(42, "icd-map");
  const std::string got = map_icd9_to_icd10("401.9", mapping, rng);
  RngStream oracle(42, "icd-map");
  CHECK(got == mapping["401.9"][oracle.next_below(3)]);
}

TEST_CASE("icd9 mapping: unmapped code raises an error naming the code") {
  IcdMapping mapping = {{"250.00", {"E11.9"}}};
  RngStream rng(1, "icd-map");
  CHECK_THROWS_WITH_AS(map_icd9_to_icd10("999.99", mapping, rng),
                       doctest::Contains("999.99"), DataError);
}

TEST_CASE("icd9 mapper caches ambiguous choices per code") {
  IcdMapping mapping = {{"401.9", {"I10", "I15.0", "I15.9"}}};
  Icd9Mapper mapper(mapping, RngStream(9, "icd-map"));
  const std::string first = mapper.map("401.9");
  for (int i = 0; i < 10; ++i) CHECK(mapper.map("401.9") == first);
}

TEST_CASE("preprocess removes placeholders and collapses whitespace") {
  CHECK(preprocess_text("Pt [**Name**]  seen") == "Pt seen");
  CHECK(preprocess_text("a\n\n b") == "a b");
  CHECK(preprocess_text("  plain   text  ") == "plain text");
  CHECK(preprocess_text("x [**2145-3-2**] y [**Dr. Foo**] z") == "x y z");
}

TEST_SUITE_END();
