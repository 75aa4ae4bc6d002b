#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xmreid/common.hpp"

namespace xmreid {

enum class Modality { vision, text };
enum class Split { train, test };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);

// Original identity label as it appeared in the source file.
struct IdentityLabel {
  std::string name;
  bool numeric = false;

  bool operator==(const IdentityLabel&) const = default;
};

struct Sample {
  std::string sample_id;
  int identity_id = 0;  // dense index in 0..I-1
  Modality modality = Modality::vision;
  int view_id = 0;
  std::vector<double> vision;  // vision payload
  std::string text;            // text payload
  std::string image_ref;       // text only: sample_id of the described image

  bool operator==(const Sample&) const = default;
};

// Input record before identity re-indexing.
struct SampleRecord {
  std::string sample_id;
  IdentityLabel identity;
  Modality modality = Modality::vision;
  int view_id = 0;
  std::vector<double> vision;
  std::string text;
  std::string image_ref;
};

struct ValidationReport {
  std::vector<std::string> warnings;
};

// Immutable collection of samples with dense identity indices. Text samples
// are attached to the image they describe: through image_ref when present,
// otherwise to the first image of the same identity and view.
class Dataset {
 public:
  Dataset() = default;

  // Re-indexes identities to 0..I-1 in order of first appearance and
  // validates the split's invariants.
  static Dataset from_records(std::vector<SampleRecord> records, Split split);

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& sample(std::size_t i) const { return samples_.at(i); }
  std::size_t size() const { return samples_.size(); }
  int identity_count() const { return static_cast<int>(identities_.size()); }
  Split split() const { return split_; }
  std::size_t vision_dim() const { return vision_dim_; }
  const IdentityLabel& identity_label(int identity) const {
    return identities_.at(static_cast<std::size_t>(identity));
  }
  const std::vector<IdentityLabel>& identity_labels() const { return identities_; }
  const ValidationReport& report() const { return report_; }

  std::optional<std::size_t> find(std::string_view sample_id) const;
  std::size_t index_of(std::string_view sample_id) const;  // throws if absent
  std::optional<int> find_identity(std::string_view name) const;

  // Indices of text samples attached to a vision sample.
  const std::vector<std::size_t>& descriptions_of(std::size_t vision_index) const;
  // Vision sample a text sample is attached to, if any.
  std::optional<std::size_t> image_of(std::size_t text_index) const;

  std::vector<std::size_t> indices(Modality m) const;
  std::size_t count(Modality m) const;

  bool operator==(const Dataset& other) const {
    return split_ == other.split_ && identities_ == other.identities_ &&
           samples_ == other.samples_;
  }

 private:
  std::vector<Sample> samples_;
  std::vector<IdentityLabel> identities_;
  Split split_ = Split::train;
  std::size_t vision_dim_ = 0;
  ValidationReport report_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::vector<std::size_t>> descriptions_;  // per sample
  std::vector<std::optional<std::size_t>> image_of_;    // per sample
};

struct IngestOptions {
  Split split = Split::train;
};

// JSON-lines, one sample per line. Vision payloads are numeric arrays or a
// path (relative to the dataset file) to a raw little-endian float64 file.
Dataset ingest_dataset(const std::filesystem::path& path, const IngestOptions& options = {});
Dataset parse_dataset(std::string_view jsonl, const IngestOptions& options = {},
                      const std::filesystem::path& base_dir = {});

std::string serialize_dataset(const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Temp file + rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace xmreid
