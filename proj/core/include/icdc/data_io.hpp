#pragma once

// File formats shared with external tooling:
//   notes:        JSON Lines {"note_id", "text", "codes": [..], "day"}
//   encounters:   CSV "patient_id,encounter_id,day,codes" with '|'-separated codes
//   descriptions: TSV "code<TAB>description"
//   icd mapping:  CSV "icd9,icd10", several rows per icd9 allowed
// Emitters and loaders are inverses: emit -> load -> emit is byte-stable.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icdc/synth.hpp"

namespace icdc {

void emit_notes(const std::filesystem::path& path, const std::vector<NoteRecord>& notes);
std::vector<NoteRecord> load_notes(const std::filesystem::path& path);

void emit_encounters(const std::filesystem::path& path, const std::vector<Patient>& patients);
std::vector<Patient> load_encounters(const std::filesystem::path& path);

void emit_descriptions(const std::filesystem::path& path, const std::map<std::string, std::string>& descriptions);
std::map<std::string, std::string> load_descriptions(const std::filesystem::path& path);

void emit_icd_mapping(const std::filesystem::path& path, const IcdMapping& mapping);
IcdMapping load_icd_mapping(const std::filesystem::path& path);

}  // namespace icdc
