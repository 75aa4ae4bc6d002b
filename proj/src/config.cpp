#include "xmreid/config.hpp"

#include <cstdlib>
#include <set>

#include "layer_json.hpp"

namespace xmreid {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError("config: unknown key '" + where + "." + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

std::string pairing_name(DescriptionPairing p) { return p == DescriptionPairing::image ? "image" : "identity"; }

DescriptionPairing parse_pairing(const std::string& s) {
  if (s == "image") return DescriptionPairing::image;
  if (s == "identity") return DescriptionPairing::identity;
  throw ValidationError("config: train.pairing must be 'image' or 'identity'");
}

}  // namespace

std::string default_output_dir() {
  const char* env = std::getenv("XMREID_OUTPUT_DIR");
  return env && *env ? std::string(env) : std::string("xmreid_out");
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

void RunConfig::validate() const {
  train.validate();
  if (strategy < 1 || strategy > 5) throw ValidationError("config: strategy must be 1..5");
  if (text.max_length < 1) throw ValidationError("config: text.max_length must be >= 1");
  if (text.min_count < 1) throw ValidationError("config: text.min_count must be >= 1");
  if (model.feature_dim < 1 || model.vision_hidden < 1 || model.embed_dim < 1 || model.language_channels < 1) {
    throw ValidationError("config: model widths must be >= 1");
  }
  if (!(model.keep_prob > 0 && model.keep_prob <= 1)) throw ValidationError("config: model.keep_prob must be in (0, 1]");
  if (cca.regularization && !(*cca.regularization >= 0)) {
    throw ValidationError("config: cca.regularization must be non-negative");
  }
  if (cca.components < 0) throw ValidationError("config: cca.components must be >= 0");
  if (scenarios.empty()) throw ValidationError("config: scenarios must not be empty");
  if (seeds.empty()) throw ValidationError("config: seeds must not be empty");
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  c.output_dir = default_output_dir();
  try {
    check_keys(j, {"data", "text", "model", "train", "strategy", "init", "cca", "protocol", "scenarios", "seeds",
                   "output_dir"},
               "");
    if (j.contains("data")) {
      const auto& s = j["data"];
      check_keys(s, {"train", "test", "auxiliary"}, "data");
      read(s, "train", c.data.train);
      read(s, "test", c.data.test);
      read(s, "auxiliary", c.data.auxiliary);
    }
    if (j.contains("text")) {
      const auto& s = j["text"];
      check_keys(s, {"max_length", "min_count"}, "text");
      read(s, "max_length", c.text.max_length);
      read(s, "min_count", c.text.min_count);
    }
    if (j.contains("model")) {
      const auto& s = j["model"];
      check_keys(s, {"feature_dim", "vision_hidden", "keep_prob", "embed_dim", "language_channels", "masked_pool",
                     "residual", "vision_layers", "language_layers"},
                 "model");
      read(s, "feature_dim", c.model.feature_dim);
      read(s, "vision_hidden", c.model.vision_hidden);
      read(s, "keep_prob", c.model.keep_prob);
      read(s, "embed_dim", c.model.embed_dim);
      read(s, "language_channels", c.model.language_channels);
      read(s, "masked_pool", c.model.masked_pool);
      read(s, "residual", c.model.residual);
      if (s.contains("vision_layers")) c.model.vision_layers = detail::layers_from_json(s["vision_layers"]);
      if (s.contains("language_layers")) c.model.language_layers = detail::layers_from_json(s["language_layers"]);
    }
    if (j.contains("train")) {
      const auto& s = j["train"];
      check_keys(s, {"loss_weight_img", "loss_weight_txt", "batch_size", "learning_rate", "momentum", "epochs",
                     "decay_factor", "decay_period", "stages", "stage_epochs", "stage_lr", "sharing", "pairing",
                     "word_drop", "zero_shift", "classifier_lr_scale", "seed"},
                 "train");
      auto& t = c.train;
      read(s, "loss_weight_img", t.loss_weight_img);
      read(s, "loss_weight_txt", t.loss_weight_txt);
      read(s, "batch_size", t.batch_size);
      read(s, "learning_rate", t.learning_rate);
      read(s, "momentum", t.momentum);
      read(s, "epochs", t.epochs);
      read(s, "decay_factor", t.decay_factor);
      read(s, "decay_period", t.decay_period);
      read(s, "stages", t.stages);
      read(s, "stage_epochs", t.stage_epochs);
      read(s, "stage_lr", t.stage_lr);
      if (s.contains("sharing")) t.sharing = parse_sharing(s["sharing"].get<std::string>());
      if (s.contains("pairing")) t.pairing = parse_pairing(s["pairing"].get<std::string>());
      read(s, "word_drop", t.word_drop);
      read(s, "zero_shift", t.zero_shift);
      read(s, "classifier_lr_scale", t.classifier_lr_scale);
      read(s, "seed", t.seed);
    }
    read(j, "strategy", c.strategy);
    if (j.contains("init")) {
      const auto& s = j["init"];
      check_keys(s, {"vision_task", "vision_auxiliary", "language_task"}, "init");
      read(s, "vision_task", c.init.vision_task);
      read(s, "vision_auxiliary", c.init.vision_auxiliary);
      read(s, "language_task", c.init.language_task);
    }
    if (j.contains("cca")) {
      const auto& s = j["cca"];
      check_keys(s, {"regularization", "components"}, "cca");
      if (s.contains("regularization") && !s["regularization"].is_null()) {
        c.cca.regularization = s["regularization"].get<double>();
      }
      read(s, "components", c.cca.components);
    }
    if (j.contains("protocol")) {
      const auto& s = j["protocol"];
      check_keys(s, {"mode", "seed"}, "protocol");
      if (s.contains("mode")) c.protocol.mode = parse_protocol_mode(s["mode"].get<std::string>());
      read(s, "seed", c.protocol.seed);
    }
    if (j.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : j["scenarios"]) c.scenarios.push_back(parse_scenario(s.get<std::string>()));
    }
    read(j, "seeds", c.seeds);
    read(j, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"train", c.data.train}, {"test", c.data.test}, {"auxiliary", c.data.auxiliary}};
  j["text"] = {{"max_length", c.text.max_length}, {"min_count", c.text.min_count}};
  j["model"] = {
      {"feature_dim", c.model.feature_dim},
      {"vision_hidden", c.model.vision_hidden},
      {"keep_prob", c.model.keep_prob},
      {"embed_dim", c.model.embed_dim},
      {"language_channels", c.model.language_channels},
      {"masked_pool", c.model.masked_pool},
      {"residual", c.model.residual},
      {"vision_layers", detail::layers_to_json(c.model.vision_layers)},
      {"language_layers", detail::layers_to_json(c.model.language_layers)},
  };
  const auto& t = c.train;
  j["train"] = {
      {"loss_weight_img", t.loss_weight_img},
      {"loss_weight_txt", t.loss_weight_txt},
      {"batch_size", t.batch_size},
      {"learning_rate", t.learning_rate},
      {"momentum", t.momentum},
      {"epochs", t.epochs},
      {"decay_factor", t.decay_factor},
      {"decay_period", t.decay_period},
      {"stages", t.stages},
      {"stage_epochs", t.stage_epochs},
      {"stage_lr", t.stage_lr},
      {"sharing", std::string(to_string(t.sharing))},
      {"pairing", pairing_name(t.pairing)},
      {"word_drop", t.word_drop},
      {"zero_shift", t.zero_shift},
      {"classifier_lr_scale", t.classifier_lr_scale},
      {"seed", t.seed},
  };
  j["strategy"] = c.strategy;
  j["init"] = {{"vision_task", c.init.vision_task},
               {"vision_auxiliary", c.init.vision_auxiliary},
               {"language_task", c.init.language_task}};
  j["cca"] = {{"regularization", c.cca.regularization ? json(*c.cca.regularization) : json(nullptr)},
              {"components", c.cca.components}};
  j["protocol"] = {{"mode", std::string(to_string(c.protocol.mode))}, {"seed", c.protocol.seed}};
  json scenarios = json::array();
  for (auto s : c.scenarios) scenarios.push_back(std::string(to_string(s)));
  j["scenarios"] = scenarios;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.output_dir.clear();  // where results go does not change them
  return hex64(fnv1a(run_config_to_json(copy)));
}

ModelSpec model_spec_for(const RunConfig& c, int vision_input, int identity_count) {
  ModelSpec s;
  s.vision_input = vision_input;
  s.vision_layers = c.model.vision_layers.empty()
                        ? default_vision_layers(c.model.vision_hidden, c.model.feature_dim, c.model.keep_prob)
                        : c.model.vision_layers;
  s.embed_dim = c.model.embed_dim;
  s.max_length = c.text.max_length;
  s.language_layers = c.model.language_layers.empty()
                          ? default_language_layers(c.model.language_channels, c.model.feature_dim,
                                                    c.model.masked_pool, c.model.residual)
                          : c.model.language_layers;
  s.identity_count = identity_count;
  s.sharing = c.train.sharing;
  return s;
}

CcaRegularization cca_regularization(const RunConfig& c) {
  if (c.cca.regularization) return CcaRegularization::both(*c.cca.regularization);
  return {};
}

}  // namespace xmreid
