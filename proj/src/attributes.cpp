#include "xmreid/attributes.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

namespace xmreid {

Eigen::Index AttributeSchema::encoded_size() const {
  Eigen::Index n = 0;
  for (int c : cardinality) n += c == 2 ? 1 : c;
  return n;
}

void AttributeSchema::validate() const {
  if (names.empty()) throw ValidationError("attribute schema is empty");
  if (names.size() != cardinality.size()) throw ValidationError("attribute names and cardinalities differ in length");
  for (std::size_t i = 0; i < cardinality.size(); ++i) {
    if (cardinality[i] < 2) throw ValidationError("attribute '" + names[i] + "' needs at least 2 values");
  }
}

AttributeSchema market_attribute_schema() {
  AttributeSchema s;
  auto binary = [&](const char* n) {
    s.names.emplace_back(n);
    s.cardinality.push_back(2);
  };
  for (const char* n : {"gender", "hair", "up", "down", "clothes", "hat", "backpack", "bag", "handbag"}) binary(n);
  s.names.emplace_back("age");
  s.cardinality.push_back(4);
  for (const char* n : {"upblack", "upwhite", "upred", "uppurple", "upyellow", "upgray", "upblue", "upgreen"}) {
    binary(n);
  }
  for (const char* n : {"downblack", "downwhite", "downpink", "downpurple", "downyellow", "downgray", "downblue",
                        "downgreen", "downbrown"}) {
    binary(n);
  }
  return s;
}

AttributeTable generate_attributes(const Dataset& dataset, const AttributeSchema& schema, std::uint64_t seed) {
  schema.validate();
  AttributeTable t;
  for (const auto& label : dataset.identity_labels()) {
    Rng rng = Rng::derive(seed, fnv1a(label.name));
    AttributeVector v(schema.size());
    for (std::size_t a = 0; a < v.size(); ++a) {
      v[a] = static_cast<int>(rng.index(static_cast<std::size_t>(schema.cardinality[a])));
    }
    t[label.name] = std::move(v);
  }
  return t;
}

void validate_attributes(const AttributeVector& v, const AttributeSchema& schema) {
  if (v.size() != schema.size()) {
    throw ValidationError("attribute vector has " + std::to_string(v.size()) + " entries, schema has " +
                          std::to_string(schema.size()));
  }
  for (std::size_t a = 0; a < v.size(); ++a) {
    if (v[a] < 0 || v[a] >= schema.cardinality[a]) {
      throw ValidationError("attribute '" + schema.names[a] + "' value " + std::to_string(v[a]) + " out of range");
    }
  }
}

Vector encode_attributes(const AttributeVector& v, const AttributeSchema& schema) {
  validate_attributes(v, schema);
  Vector out = Vector::Zero(schema.encoded_size());
  Eigen::Index at = 0;
  for (std::size_t a = 0; a < v.size(); ++a) {
    if (schema.cardinality[a] == 2) {
      out(at++) = v[a] == 1 ? 1.0 : -1.0;
    } else {
      out(at + v[a]) = 1.0;
      at += schema.cardinality[a];
    }
  }
  return out / std::sqrt(static_cast<double>(schema.size()));
}

AttributeVector flip_attributes(const AttributeVector& v, const AttributeSchema& schema, std::size_t n, Rng& rng) {
  validate_attributes(v, schema);
  if (n > v.size()) {
    throw ValidationError("cannot flip " + std::to_string(n) + " of " + std::to_string(v.size()) + " attributes");
  }
  std::vector<std::size_t> positions(v.size());
  std::iota(positions.begin(), positions.end(), 0);
  rng.shuffle(positions);
  AttributeVector out = v;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = positions[k];
    const int card = schema.cardinality[a];
    if (card == 2) {
      out[a] = 1 - out[a];
    } else {
      const int draw = static_cast<int>(rng.index(static_cast<std::size_t>(card - 1)));
      out[a] = draw >= v[a] ? draw + 1 : draw;
    }
  }
  return out;
}

namespace {

Vector vision_part(const FeatureTable& features, std::size_t image) {
  const Vector f = features.row(image);
  const double n = f.norm();
  if (n == 0.0) throw ValidationError("zero vision feature for sample " + std::to_string(image));
  return f / n;
}

const AttributeVector& attributes_of(const AttributeTable& t, const Dataset& dataset, int identity) {
  const auto& name = dataset.identity_label(identity).name;
  auto it = t.find(name);
  if (it == t.end()) throw ValidationError("no attributes for identity '" + name + "'");
  return it->second;
}

}  // namespace

std::vector<FlipCurvePoint> attribute_flip_experiment(const ProtocolEntries& entries, const Dataset& dataset,
                                                      const FeatureTable& features,
                                                      const AttributeTable& attributes,
                                                      const AttributeSchema& schema, std::size_t max_flips,
                                                      std::span<const std::uint64_t> seeds) {
  schema.validate();
  if (max_flips > schema.size()) {
    throw ValidationError("N_flips " + std::to_string(max_flips) + " exceeds the " +
                          std::to_string(schema.size()) + " attributes");
  }
  if (seeds.empty()) throw ValidationError("attribute experiment needs at least one seed");
  if (entries.gallery.empty() || entries.query.empty()) throw ValidationError("empty protocol side");

  const Eigen::Index dv = features.dim();
  const Eigen::Index da = schema.encoded_size();
  Matrix gallery(static_cast<Eigen::Index>(entries.gallery.size()), dv + da);
  std::vector<int> gallery_labels;
  for (std::size_t g = 0; g < entries.gallery.size(); ++g) {
    const auto& e = entries.gallery[g];
    gallery.row(static_cast<Eigen::Index>(g)) << vision_part(features, e.image).transpose(),
        encode_attributes(attributes_of(attributes, dataset, e.identity), schema).transpose();
    gallery_labels.push_back(e.identity);
  }
  std::vector<int> query_labels;
  Matrix query_vision(static_cast<Eigen::Index>(entries.query.size()), dv);
  for (std::size_t q = 0; q < entries.query.size(); ++q) {
    query_vision.row(static_cast<Eigen::Index>(q)) = vision_part(features, entries.query[q].image).transpose();
    query_labels.push_back(entries.query[q].identity);
  }

  std::vector<FlipCurvePoint> curve(max_flips + 1);
  for (std::size_t n = 0; n <= max_flips; ++n) curve[n].flips = n;
  for (std::uint64_t seed : seeds) {
    for (std::size_t n = 0; n <= max_flips; ++n) {
      Matrix query(query_vision.rows(), dv + da);
      for (std::size_t q = 0; q < entries.query.size(); ++q) {
        Rng rng = Rng::derive(seed, q);
        const auto& truth = attributes_of(attributes, dataset, entries.query[q].identity);
        const auto row = static_cast<Eigen::Index>(q);
        query.row(row) << query_vision.row(row), encode_attributes(flip_attributes(truth, schema, n, rng), schema).transpose();
      }
      const RankingResult r = rank_similarities(similarity_matrix(query, gallery), query_labels, gallery_labels);
      curve[n].per_seed.push_back(evaluate(r, query_labels, gallery_labels));
    }
  }
  for (auto& p : curve) {
    for (const auto& m : p.per_seed) {
      p.mean_rank1 += m.rank1;
      p.mean_map += m.map;
    }
    p.mean_rank1 /= static_cast<double>(p.per_seed.size());
    p.mean_map /= static_cast<double>(p.per_seed.size());
  }
  return curve;
}

std::string attributes_to_json(const AttributeTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : t) j[name] = v;
  return j.dump() + "\n";
}

AttributeTable attributes_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw FormatError("attribute file must be a JSON object");
    AttributeTable t;
    for (const auto& [name, v] : j.items()) t[name] = v.get<AttributeVector>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attributes: ") + e.what());
  }
}

}  // namespace xmreid
