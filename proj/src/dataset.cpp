#include "xmreid/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace xmreid {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view to_string(Modality m) { return m == Modality::vision ? "vision" : "text"; }
std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

Modality parse_modality(std::string_view s) {
  if (s == "vision") return Modality::vision;
  if (s == "text") return Modality::text;
  throw FormatError("unknown modality '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + ": " + ec.message());
}

Dataset Dataset::from_records(std::vector<SampleRecord> records, Split split) {
  Dataset ds;
  ds.split_ = split;
  std::unordered_map<std::string, int> identity_index;
  ds.samples_.reserve(records.size());

  for (auto& r : records) {
    if (r.sample_id.empty()) throw ValidationError("empty sample_id");
    if (ds.by_id_.count(r.sample_id)) {
      throw ValidationError("duplicate sample_id '" + r.sample_id + "'");
    }
    auto [it, inserted] =
        identity_index.emplace(r.identity.name, static_cast<int>(ds.identities_.size()));
    if (inserted) ds.identities_.push_back(r.identity);

    if (r.modality == Modality::vision) {
      if (r.vision.empty()) {
        throw ValidationError("sample '" + r.sample_id + "' has an empty vision payload");
      }
      if (ds.vision_dim_ == 0) ds.vision_dim_ = r.vision.size();
      if (r.vision.size() != ds.vision_dim_) {
        throw ValidationError("sample '" + r.sample_id + "' has vision dimension " +
                              std::to_string(r.vision.size()) + ", expected " +
                              std::to_string(ds.vision_dim_));
      }
      for (double v : r.vision) {
        if (!std::isfinite(v)) {
          throw ValidationError("sample '" + r.sample_id + "' has a non-finite payload");
        }
      }
    } else if (r.text.empty()) {
      throw ValidationError("sample '" + r.sample_id + "' has an empty text payload");
    }

    ds.by_id_.emplace(r.sample_id, ds.samples_.size());
    Sample s;
    s.sample_id = std::move(r.sample_id);
    s.identity_id = it->second;
    s.modality = r.modality;
    s.view_id = r.view_id;
    s.vision = std::move(r.vision);
    s.text = std::move(r.text);
    s.image_ref = std::move(r.image_ref);
    ds.samples_.push_back(std::move(s));
  }

  const std::size_t n = ds.samples_.size();
  ds.descriptions_.assign(n, {});
  ds.image_of_.assign(n, std::nullopt);

  // First image per (identity, view) for descriptions without image_ref.
  std::map<std::pair<int, int>, std::size_t> first_image;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples_[i];
    if (s.modality == Modality::vision) first_image.emplace(std::pair{s.identity_id, s.view_id}, i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples_[i];
    if (s.modality != Modality::text) continue;
    std::optional<std::size_t> img;
    if (!s.image_ref.empty()) {
      auto f = ds.by_id_.find(s.image_ref);
      if (f == ds.by_id_.end()) {
        throw ValidationError("sample '" + s.sample_id + "' references unknown image '" +
                              s.image_ref + "'");
      }
      const auto& target = ds.samples_[f->second];
      if (target.modality != Modality::vision || target.identity_id != s.identity_id) {
        throw ValidationError("sample '" + s.sample_id +
                              "' must reference a vision sample of the same identity");
      }
      img = f->second;
    } else if (auto f = first_image.find({s.identity_id, s.view_id}); f != first_image.end()) {
      img = f->second;
    }
    if (img) {
      ds.image_of_[i] = img;
      ds.descriptions_[*img].push_back(i);
    }
  }

  std::vector<int> vision_count(ds.identities_.size(), 0), text_count(ds.identities_.size(), 0);
  for (const auto& s : ds.samples_) {
    (s.modality == Modality::vision ? vision_count : text_count)[static_cast<std::size_t>(s.identity_id)]++;
  }
  for (std::size_t id = 0; id < ds.identities_.size(); ++id) {
    for (Modality m : {Modality::vision, Modality::text}) {
      const int c = (m == Modality::vision ? vision_count : text_count)[id];
      if (c > 0) continue;
      const std::string msg = "identity '" + ds.identities_[id].name + "' has no " +
                              std::string(to_string(m)) + " samples";
      if (split == Split::train) throw ValidationError(msg);
      ds.report_.warnings.push_back(msg);
    }
  }
  return ds;
}

std::optional<std::size_t> Dataset::find(std::string_view sample_id) const {
  auto it = by_id_.find(std::string(sample_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t Dataset::index_of(std::string_view sample_id) const {
  auto i = find(sample_id);
  if (!i) throw ValidationError("unknown sample_id '" + std::string(sample_id) + "'");
  return *i;
}

std::optional<int> Dataset::find_identity(std::string_view name) const {
  for (std::size_t i = 0; i < identities_.size(); ++i) {
    if (identities_[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

const std::vector<std::size_t>& Dataset::descriptions_of(std::size_t vision_index) const {
  return descriptions_.at(vision_index);
}

std::optional<std::size_t> Dataset::image_of(std::size_t text_index) const {
  return image_of_.at(text_index);
}

std::vector<std::size_t> Dataset::indices(Modality m) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].modality == m) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::count(Modality m) const {
  std::size_t c = 0;
  for (const auto& s : samples_) c += s.modality == m;
  return c;
}

namespace {

std::vector<double> read_f64_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % 8 != 0) {
    throw FormatError(path.string() + ": size is not a multiple of 8 bytes");
  }
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 7; b >= 0; --b) {
      u = (u << 8) | static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)]);
    }
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

SampleRecord parse_record(const json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> allowed = {"sample_id", "identity_id", "modality",
                                                "view_id", "payload", "image_ref"};
  if (!j.is_object()) throw FormatError("record is not a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw FormatError("unknown key '" + k + "'");
  }
  for (const char* k : {"sample_id", "identity_id", "modality", "payload"}) {
    if (!j.contains(k)) throw FormatError(std::string("missing key '") + k + "'");
  }
  SampleRecord r;
  if (!j["sample_id"].is_string()) throw FormatError("sample_id must be a string");
  r.sample_id = j["sample_id"].get<std::string>();

  const auto& id = j["identity_id"];
  if (id.is_string()) {
    r.identity.name = id.get<std::string>();
  } else if (id.is_number_integer()) {
    r.identity.name = std::to_string(id.get<long long>());
    r.identity.numeric = true;
  } else {
    throw FormatError("identity_id must be a string or an integer");
  }

  if (!j["modality"].is_string()) throw FormatError("modality must be a string");
  r.modality = parse_modality(j["modality"].get<std::string>());

  if (j.contains("view_id")) {
    if (!j["view_id"].is_number_integer()) throw FormatError("view_id must be an integer");
    r.view_id = j["view_id"].get<int>();
  }

  const auto& p = j["payload"];
  if (r.modality == Modality::vision) {
    if (p.is_array()) {
      r.vision.reserve(p.size());
      for (const auto& v : p) {
        if (!v.is_number()) throw FormatError("vision payload must be numeric");
        r.vision.push_back(v.get<double>());
      }
    } else if (p.is_string()) {
      r.vision = read_f64_file(base_dir / p.get<std::string>());
    } else {
      throw FormatError("vision payload must be an array or a file path");
    }
  } else {
    if (!p.is_string()) throw FormatError("text payload must be a string");
    r.text = p.get<std::string>();
  }
  if (j.contains("image_ref")) {
    if (!j["image_ref"].is_string()) throw FormatError("image_ref must be a string");
    r.image_ref = j["image_ref"].get<std::string>();
  }
  return r;
}

}  // namespace

Dataset parse_dataset(std::string_view jsonl, const IngestOptions& options,
                      const std::filesystem::path& base_dir) {
  std::vector<SampleRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      records.push_back(parse_record(json::parse(line), base_dir));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Dataset::from_records(std::move(records), options.split);
}

Dataset ingest_dataset(const std::filesystem::path& path, const IngestOptions& options) {
  if (!std::filesystem::exists(path)) throw Error("dataset file not found: " + path.string());
  return parse_dataset(read_file(path), options, path.parent_path());
}

std::string serialize_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& s : dataset.samples()) {
    const auto& label = dataset.identity_label(s.identity_id);
    json j;
    j["sample_id"] = s.sample_id;
    if (label.numeric) {
      j["identity_id"] = std::stoll(label.name);
    } else {
      j["identity_id"] = label.name;
    }
    j["modality"] = std::string(to_string(s.modality));
    j["view_id"] = s.view_id;
    if (s.modality == Modality::vision) {
      j["payload"] = s.vision;
    } else {
      j["payload"] = s.text;
      if (!s.image_ref.empty()) j["image_ref"] = s.image_ref;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

}  // namespace xmreid
