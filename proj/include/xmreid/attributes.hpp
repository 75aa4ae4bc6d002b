#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmreid/dataset.hpp"
#include "xmreid/protocol.hpp"
#include "xmreid/retrieval.hpp"
#include "xmreid/rng.hpp"

namespace xmreid {

struct AttributeSchema {
  std::vector<std::string> names;
  std::vector<int> cardinality;  // 2 = binary, > 2 = categorical

  std::size_t size() const { return names.size(); }
  // Length of the encoded vector: 1 per binary, cardinality per categorical.
  Eigen::Index encoded_size() const;
  void validate() const;
};

// 26 binary attributes plus a four-valued age, as annotated for Market-1501.
AttributeSchema market_attribute_schema();

using AttributeVector = std::vector<int>;                 // value per attribute
using AttributeTable = std::map<std::string, AttributeVector>;  // identity name -> values

// Uniform values per identity; a pure function of (identity name, seed).
AttributeTable generate_attributes(const Dataset& dataset, const AttributeSchema& schema, std::uint64_t seed);

void validate_attributes(const AttributeVector& v, const AttributeSchema& schema);

// Binary -> +/-1, categorical -> one-hot; scaled by 1 / sqrt(attribute count).
Vector encode_attributes(const AttributeVector& v, const AttributeSchema& schema);

// Shuffles the attribute positions, then flips (binary) or resamples to a
// different value (categorical) the first n. Prefixes of one rng stream give
// nested flip sets across n.
AttributeVector flip_attributes(const AttributeVector& v, const AttributeSchema& schema, std::size_t n,
                                Rng& rng);

struct FlipCurvePoint {
  std::size_t flips = 0;
  std::vector<Metrics> per_seed;
  double mean_rank1 = 0.0;
  double mean_map = 0.0;
};

// Concatenated [f_img / |f_img|, attributes] retrieval, queries being the
// protocol's query images with perturbed attributes and the gallery keeping the
// true ones. The flip stream for query q under seed s is Rng::derive(s, q).
std::vector<FlipCurvePoint> attribute_flip_experiment(const ProtocolEntries& entries, const Dataset& dataset,
                                                      const FeatureTable& features,
                                                      const AttributeTable& attributes,
                                                      const AttributeSchema& schema, std::size_t max_flips,
                                                      std::span<const std::uint64_t> seeds);

// JSON object mapping identity name to its value array.
std::string attributes_to_json(const AttributeTable& t);
AttributeTable attributes_from_json(std::string_view text);

}  // namespace xmreid
