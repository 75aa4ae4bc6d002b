#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmreid/dataset.hpp"

namespace xmreid {

enum class ProtocolMode { across_pose, within_pose };

std::string_view to_string(ProtocolMode m);
ProtocolMode parse_protocol_mode(std::string_view s);

// Single-shot gallery/query split of a test dataset. Both sides list vision
// sample ids followed by the descriptions attached to those images.
struct RetrievalProtocol {
  ProtocolMode mode = ProtocolMode::across_pose;
  std::uint64_t seed = 0;
  std::vector<std::string> gallery;
  std::vector<std::string> query;
  std::vector<std::string> discarded_identities;  // original identity names

  bool operator==(const RetrievalProtocol&) const = default;
};

// Per identity (in dataset order) the seeded generator draws:
//   across_pose: a gallery view among the identity's views, then a gallery
//                image of that view; every image of the other views is a query.
//                Identities with a single view are discarded.
//   within_pose: a view among those holding >= 2 images, then a gallery image;
//                the remaining images of that view are queries. Identities with
//                no such view are discarded.
RetrievalProtocol build_protocol(const Dataset& dataset, ProtocolMode mode, std::uint64_t seed);

// Throws ValidationError when an invariant (disjointness, pose separation,
// single-shot gallery, known ids) does not hold.
void validate_protocol(const RetrievalProtocol& protocol, const Dataset& dataset);

std::string protocol_to_json(const RetrievalProtocol& protocol);
RetrievalProtocol protocol_from_json(std::string_view text);
void save_protocol(const RetrievalProtocol& protocol, const std::filesystem::path& path);
RetrievalProtocol load_protocol(const std::filesystem::path& path);

// Image entries of one protocol side, with their attached descriptions.
struct ProtocolEntry {
  std::size_t image;                      // dataset index of the vision sample
  std::vector<std::size_t> descriptions;  // dataset indices of described text
  int identity = 0;
};

struct ProtocolEntries {
  std::vector<ProtocolEntry> gallery;
  std::vector<ProtocolEntry> query;
};

ProtocolEntries resolve_protocol(const RetrievalProtocol& protocol, const Dataset& dataset);

}  // namespace xmreid
