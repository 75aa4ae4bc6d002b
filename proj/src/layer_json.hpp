#pragma once

#include <set>

#include "json.hpp"
#include "xmreid/nn.hpp"

namespace xmreid::detail {

inline nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(s.kind));
  if (s.kind == LayerKind::dense || s.kind == LayerKind::conv1d_k3) {
    j["width"] = s.width;
    j["bias"] = s.bias;
    j["residual"] = s.residual;
  }
  if (s.kind == LayerKind::dropout) j["keep_prob"] = s.keep_prob;
  if (s.kind == LayerKind::global_avg_pool) j["masked"] = s.masked;
  j["group"] = s.group == ParamGroup::head ? "head" : "backbone";
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed = {"kind", "width", "bias", "residual", "keep_prob", "masked", "group"};
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError("unknown layer key '" + k + "'");
  }
  LayerSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.width = j.value("width", 0);
  s.bias = j.value("bias", true);
  s.residual = j.value("residual", false);
  s.keep_prob = j.value("keep_prob", 0.25);
  s.masked = j.value("masked", false);
  const std::string group = j.value("group", std::string("backbone"));
  if (group == "head") {
    s.group = ParamGroup::head;
  } else if (group != "backbone") {
    throw ValidationError("layer group must be 'backbone' or 'head'");
  }
  return s;
}

inline nlohmann::json layers_to_json(const std::vector<LayerSpec>& layers) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& l : layers) a.push_back(layer_to_json(l));
  return a;
}

inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& a) {
  std::vector<LayerSpec> out;
  for (const auto& j : a) out.push_back(layer_from_json(j));
  return out;
}

}  // namespace xmreid::detail
