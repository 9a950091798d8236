#pragma once

// On-disk dataset layout: a directory holding
//   samples.jsonl  one sample per line
//   manifest.json  seed, counts, discards, provenance
// Output is byte-stable for a given dataset (keys are emitted sorted).

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/fsutil.hpp"

namespace mgtbench {

using json = nlohmann::json;

inline constexpr int kDatasetSchemaVersion = 1;

namespace detail {

inline json opt_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<std::string> opt_str(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline std::string samples_to_jsonl(const PairedDataset& ds) {
  std::string out;
  for (const auto& s : ds.samples) {
    const auto split = ds.split_of(s.pair_id);
    json j = {
        {"sample_id", s.sample_id},
        {"pair_id", s.pair_id},
        {"text", s.text},
        {"label", to_string(s.label)},
        {"generator", detail::opt_json(s.generator)},
        {"attack", detail::opt_json(s.attack)},
        {"prompt_id", detail::opt_json(s.prompt_id)},
        {"split", split ? json(to_string(*split)) : json(nullptr)},
    };
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline json manifest_to_json(const PairedDataset& ds) {
  std::size_t humans = 0, machines = 0;
  for (const auto& s : ds.samples) (s.label == Label::human ? humans : machines)++;
  json discards = json::array();
  for (const auto& d : ds.manifest.discards) discards.push_back({{"pair_id", d.pair_id}, {"reason", d.reason}});
  json split_counts = json::object();
  for (const auto& [split, ids] : ds.splits) split_counts[to_string(split)] = ids.size();
  return {
      {"schema_version", kDatasetSchemaVersion},
      {"dataset_id", ds.dataset_id},
      {"generator", ds.generator},
      {"attack", detail::opt_json(ds.attack)},
      {"seed", ds.seed},
      {"calibration_locked", ds.calibration_locked},
      {"source_corpus", ds.manifest.source_corpus},
      {"articles_in", ds.manifest.articles_in},
      {"missing_generation", ds.manifest.missing_generation},
      {"discards", discards},
      {"generation", ds.manifest.generation},
      {"counts", {{"samples", ds.samples.size()}, {"human", humans}, {"machine", machines}, {"pairs_per_split", split_counts}}},
  };
}

inline void save_dataset(const PairedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  fs::atomic_write(dir / "samples.jsonl", samples_to_jsonl(ds));
  fs::atomic_write(dir / "manifest.json", manifest_to_json(ds).dump(2) + "\n");
}

inline PairedDataset load_dataset(const std::filesystem::path& dir) {
  const json m = json::parse(fs::read_file(dir / "manifest.json"));
  if (m.value("schema_version", 0) != kDatasetSchemaVersion) {
    throw VersionError("dataset '" + dir.string() + "' has schema_version " +
                       std::to_string(m.value("schema_version", 0)) + ", expected " +
                       std::to_string(kDatasetSchemaVersion) + "; rebuild it with build-dataset --force");
  }
  PairedDataset ds;
  ds.dataset_id = m.at("dataset_id").get<std::string>();
  ds.generator = m.at("generator").get<std::string>();
  ds.attack = detail::opt_str(m, "attack");
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.calibration_locked = m.at("calibration_locked").get<bool>();
  ds.manifest.source_corpus = m.at("source_corpus").get<std::string>();
  ds.manifest.articles_in = m.at("articles_in").get<std::size_t>();
  ds.manifest.missing_generation = m.at("missing_generation").get<std::size_t>();
  ds.manifest.generation = m.value("generation", json::object());
  for (const auto& d : m.at("discards")) ds.manifest.discards.push_back({d.at("pair_id"), d.at("reason")});
  for (const auto& [name, _] : m.at("counts").at("pairs_per_split").items()) ds.splits[parse_split(name)];

  std::istringstream lines(fs::read_file(dir / "samples.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    TextSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.pair_id = j.at("pair_id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    s.label = parse_label(j.at("label").get<std::string>());
    s.generator = detail::opt_str(j, "generator");
    s.attack = detail::opt_str(j, "attack");
    s.prompt_id = detail::opt_str(j, "prompt_id");
    if (auto split = detail::opt_str(j, "split")) ds.splits[parse_split(*split)].insert(s.pair_id);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Raw corpora are JSON Lines of {"id": ..., "text": ...}.
inline std::vector<RawRecord> load_raw_corpus(const std::filesystem::path& path) {
  std::istringstream lines(fs::read_file(path));
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
  }
  return out;
}

}  // namespace mgtbench
