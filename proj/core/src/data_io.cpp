#include "icdc/data_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "icdc/errors.hpp"

namespace icdc {

namespace {

using json = nlohmann::ordered_json;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

[[noreturn]] void fail_at(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

void emit_notes(const std::filesystem::path& path, const std::vector<NoteRecord>& notes) {
  auto out = open_out(path);
  for (const auto& n : notes) {
    json j;
    j["note_id"] = n.note_id;
    j["text"] = n.text;
    j["codes"] = n.codes;
    j["day"] = n.day;
    out << j.dump() << '\n';
  }
}

std::vector<NoteRecord> load_notes(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<NoteRecord> notes;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_at(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    for (const char* field : {"note_id", "text", "codes", "day"}) {
      if (!j.contains(field)) fail_at(path, line_no, std::string("missing field \"") + field + "\"");
    }
    NoteRecord n;
    try {
      n.note_id = j["note_id"].get<std::string>();
      n.text = j["text"].get<std::string>();
      n.codes = j["codes"].get<std::vector<std::string>>();
      n.day = j["day"].get<std::int64_t>();
    } catch (const json::exception& e) {
      fail_at(path, line_no, std::string("bad field type: ") + e.what());
    }
    if (!seen_ids.insert(n.note_id).second) fail_at(path, line_no, "duplicate note_id " + n.note_id);
    if (n.codes.empty()) fail_at(path, line_no, "note " + n.note_id + " has no codes");
    if (n.text.empty()) fail_at(path, line_no, "note " + n.note_id + " has empty text");
    notes.push_back(std::move(n));
  }
  return notes;
}

void emit_encounters(const std::filesystem::path& path, const std::vector<Patient>& patients) {
  auto out = open_out(path);
  out << "patient_id,encounter_id,day,codes\n";
  for (const auto& p : patients) {
    for (std::size_t e = 0; e < p.encounters.size(); ++e) {
      out << p.patient_id << ',' << e << ',' << p.encounters[e].day << ',';
      const auto& codes = p.encounters[e].codes;
      for (std::size_t c = 0; c < codes.size(); ++c) {
        if (c) out << '|';
        out << codes[c];
      }
      out << '\n';
    }
  }
}

std::vector<Patient> load_encounters(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != "patient_id,encounter_id,day,codes") {
    fail_at(path, 1, "expected header \"patient_id,encounter_id,day,codes\"");
  }
  line_no = 1;

  std::vector<Patient> patients;
  std::map<std::string, std::size_t> index_of;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 4) fail_at(path, line_no, "expected 4 comma-separated fields");
    Encounter enc;
    try {
      enc.day = std::stoll(fields[2]);
    } catch (const std::exception&) {
      fail_at(path, line_no, "day is not an integer: " + fields[2]);
    }
    for (auto& code : split(fields[3], '|')) {
      if (!code.empty()) enc.codes.push_back(std::move(code));
    }
    if (enc.codes.empty()) fail_at(path, line_no, "encounter has no codes");

    auto [it, inserted] = index_of.emplace(fields[0], patients.size());
    if (inserted) patients.push_back({fields[0], {}});
    Patient& p = patients[it->second];
    if (!p.encounters.empty() && enc.day <= p.encounters.back().day) {
      fail_at(path, line_no, "days not strictly increasing for patient " + p.patient_id);
    }
    p.encounters.push_back(std::move(enc));
  }
  return patients;
}

void emit_descriptions(const std::filesystem::path& path, const std::map<std::string, std::string>& descriptions) {
  auto out = open_out(path);
  for (const auto& [code, text] : descriptions) out << code << '\t' << text << '\n';
}

std::map<std::string, std::string> load_descriptions(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::map<std::string, std::string> descriptions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      fail_at(path, line_no, "expected \"code<TAB>description\"");
    }
    descriptions[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return descriptions;
}

void emit_icd_mapping(const std::filesystem::path& path, const IcdMapping& mapping) {
  auto out = open_out(path);
  out << "icd9,icd10\n";
  for (const auto& [icd9, candidates] : mapping) {
    for (const auto& icd10 : candidates) out << icd9 << ',' << icd10 << '\n';
  }
}

IcdMapping load_icd_mapping(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "icd9,icd10") fail_at(path, 1, "expected header \"icd9,icd10\"");
  IcdMapping mapping;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      fail_at(path, line_no, "expected \"icd9,icd10\"");
    }
    mapping[fields[0]].push_back(fields[1]);
  }
  return mapping;
}

}  // namespace icdc
