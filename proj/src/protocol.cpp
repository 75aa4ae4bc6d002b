#include "xmreid/protocol.hpp"

#include <map>
#include <set>

#include "json.hpp"
#include "xmreid/rng.hpp"

namespace xmreid {

using nlohmann::json;

std::string_view to_string(ProtocolMode m) {
  return m == ProtocolMode::across_pose ? "across_pose" : "within_pose";
}

ProtocolMode parse_protocol_mode(std::string_view s) {
  if (s == "across_pose") return ProtocolMode::across_pose;
  if (s == "within_pose") return ProtocolMode::within_pose;
  throw ValidationError("unknown protocol mode '" + std::string(s) + "'");
}

RetrievalProtocol build_protocol(const Dataset& dataset, ProtocolMode mode, std::uint64_t seed) {
  if (dataset.split() != Split::test) {
    throw ValidationError("protocols are built on test splits");
  }
  // identity -> view -> images, in dataset order
  std::vector<std::map<int, std::vector<std::size_t>>> views(
      static_cast<std::size_t>(dataset.identity_count()));
  for (std::size_t i : dataset.indices(Modality::vision)) {
    const auto& s = dataset.sample(i);
    views[static_cast<std::size_t>(s.identity_id)][s.view_id].push_back(i);
  }

  RetrievalProtocol p;
  p.mode = mode;
  p.seed = seed;
  Rng rng(seed);
  std::vector<std::size_t> gallery_images, query_images;
  std::size_t kept = 0;

  for (std::size_t id = 0; id < views.size(); ++id) {
    const auto& by_view = views[id];
    std::vector<int> eligible;
    for (const auto& [view, images] : by_view) {
      if (mode == ProtocolMode::across_pose || images.size() >= 2) eligible.push_back(view);
    }
    const bool keep = mode == ProtocolMode::across_pose ? by_view.size() >= 2 : !eligible.empty();
    if (!keep) {
      p.discarded_identities.push_back(dataset.identity_label(static_cast<int>(id)).name);
      continue;
    }
    ++kept;
    const int gallery_view = eligible[rng.index(eligible.size())];
    const auto& candidates = by_view.at(gallery_view);
    const std::size_t gallery_image = candidates[rng.index(candidates.size())];
    gallery_images.push_back(gallery_image);
    for (const auto& [view, images] : by_view) {
      const bool same_view = view == gallery_view;
      if (mode == ProtocolMode::across_pose && same_view) continue;
      if (mode == ProtocolMode::within_pose && !same_view) continue;
      for (std::size_t img : images) {
        if (img != gallery_image) query_images.push_back(img);
      }
    }
  }
  if (kept < 2) {
    throw ValidationError("protocol needs at least 2 identities, " + std::to_string(kept) +
                          " survived");
  }

  auto emit = [&](const std::vector<std::size_t>& images, std::vector<std::string>& side) {
    for (std::size_t img : images) side.push_back(dataset.sample(img).sample_id);
    for (std::size_t img : images) {
      for (std::size_t t : dataset.descriptions_of(img)) side.push_back(dataset.sample(t).sample_id);
    }
  };
  emit(gallery_images, p.gallery);
  emit(query_images, p.query);
  validate_protocol(p, dataset);
  return p;
}

void validate_protocol(const RetrievalProtocol& protocol, const Dataset& dataset) {
  std::set<std::string> gallery(protocol.gallery.begin(), protocol.gallery.end());
  if (gallery.size() != protocol.gallery.size()) {
    throw ValidationError("protocol gallery lists a sample twice");
  }
  std::set<std::pair<int, int>> gallery_pose;
  std::map<int, int> gallery_images_per_identity;
  for (const auto& id : protocol.gallery) {
    const auto& s = dataset.sample(dataset.index_of(id));
    gallery_pose.emplace(s.identity_id, s.view_id);
    if (s.modality == Modality::vision) gallery_images_per_identity[s.identity_id]++;
  }
  for (const auto& [identity, n] : gallery_images_per_identity) {
    if (n != 1) {
      throw ValidationError("single-shot gallery holds " + std::to_string(n) +
                            " images of identity '" + dataset.identity_label(identity).name + "'");
    }
  }
  std::set<std::string> seen;
  for (const auto& id : protocol.query) {
    if (gallery.count(id)) throw ValidationError("sample '" + id + "' is in gallery and query");
    if (!seen.insert(id).second) throw ValidationError("protocol query lists '" + id + "' twice");
    const auto& s = dataset.sample(dataset.index_of(id));
    if (protocol.mode == ProtocolMode::across_pose && gallery_pose.count({s.identity_id, s.view_id})) {
      throw ValidationError("across-pose query '" + id + "' shares a view with the gallery");
    }
  }
}

std::string protocol_to_json(const RetrievalProtocol& protocol) {
  json j;
  j["mode"] = std::string(to_string(protocol.mode));
  j["shot"] = "single_shot";
  j["seed"] = protocol.seed;
  j["gallery"] = protocol.gallery;
  j["query"] = protocol.query;
  j["discarded_identities"] = protocol.discarded_identities;
  return j.dump(2) + "\n";
}

RetrievalProtocol protocol_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("protocol: ") + e.what());
  }
  RetrievalProtocol p;
  try {
    p.mode = parse_protocol_mode(j.at("mode").get<std::string>());
    if (j.contains("shot") && j["shot"].get<std::string>() != "single_shot") {
      throw FormatError("protocol: only single_shot is supported");
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    p.gallery = j.at("gallery").get<std::vector<std::string>>();
    p.query = j.at("query").get<std::vector<std::string>>();
    if (j.contains("discarded_identities")) {
      p.discarded_identities = j["discarded_identities"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("protocol: ") + e.what());
  }
  return p;
}

void save_protocol(const RetrievalProtocol& protocol, const std::filesystem::path& path) {
  write_file_atomic(path, protocol_to_json(protocol));
}

RetrievalProtocol load_protocol(const std::filesystem::path& path) {
  return protocol_from_json(read_file(path));
}

ProtocolEntries resolve_protocol(const RetrievalProtocol& protocol, const Dataset& dataset) {
  validate_protocol(protocol, dataset);
  auto side = [&](const std::vector<std::string>& ids) {
    std::vector<ProtocolEntry> entries;
    std::map<std::size_t, std::size_t> entry_of_image;
    std::vector<std::size_t> texts;
    for (const auto& id : ids) {
      const std::size_t i = dataset.index_of(id);
      const auto& s = dataset.sample(i);
      if (s.modality == Modality::vision) {
        entry_of_image[i] = entries.size();
        entries.push_back({i, {}, s.identity_id});
      } else {
        texts.push_back(i);
      }
    }
    for (std::size_t t : texts) {
      auto img = dataset.image_of(t);
      if (!img || !entry_of_image.count(*img)) {
        throw ValidationError("description '" + dataset.sample(t).sample_id +
                              "' is not attached to an image on the same protocol side");
      }
      entries[entry_of_image[*img]].descriptions.push_back(t);
    }
    return entries;
  };
  return {side(protocol.gallery), side(protocol.query)};
}

}  // namespace xmreid
