#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmreid/cca.hpp"
#include "xmreid/protocol.hpp"
#include "xmreid/retrieval.hpp"
#include "xmreid/trainer.hpp"

namespace xmreid {

struct DataSection {
  std::string train;      // JSON-lines dataset paths; relative to the config file
  std::string test;
  std::string auxiliary;  // auxiliary classification set for vision pre-training
};

struct TextSection {
  int max_length = kDefaultMaxLength;
  int min_count = 1;
};

struct ModelSection {
  int feature_dim = 64;
  int vision_hidden = 64;
  double keep_prob = 0.25;
  int embed_dim = 300;
  int language_channels = 64;
  bool masked_pool = false;
  bool residual = false;
  // Explicit layer lists override the width knobs above.
  std::vector<LayerSpec> vision_layers;
  std::vector<LayerSpec> language_layers;
};

struct InitSection {
  std::string vision_task;       // checkpoint paths
  std::string vision_auxiliary;
  std::string language_task;
};

struct CcaSection {
  std::optional<double> regularization;  // unset = 1e-4 trace / d per side
  int components = 0;                    // 0 = min(d_x, d_y)
};

struct ProtocolSection {
  ProtocolMode mode = ProtocolMode::across_pose;
  std::uint64_t seed = 1;
};

struct RunConfig {
  DataSection data;
  TextSection text;
  ModelSection model;
  TrainConfig train;
  int strategy = 4;
  InitSection init;
  CcaSection cca;
  ProtocolSection protocol;
  std::vector<Scenario> scenarios = {Scenario::VxV, Scenario::LxL, Scenario::LxV, Scenario::VLxV,
                                     Scenario::VLxVL};
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir;  // default: $XMREID_OUTPUT_DIR, else "xmreid_out"

  // Directory relative data/init paths resolve against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  void validate() const;
};

std::string default_output_dir();

// Strict: unknown keys anywhere are errors. Missing keys take their defaults.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical JSON with every field spelled out.
std::string run_config_to_json(const RunConfig& c);
// Hex FNV-1a of the canonical JSON.
std::string config_hash(const RunConfig& c);

ModelSpec model_spec_for(const RunConfig& c, int vision_input, int identity_count);
CcaRegularization cca_regularization(const RunConfig& c);

}  // namespace xmreid
