#include <gtest/gtest.h>

#include <cmath>

#include "xmreid/attributes.hpp"
#include "xmreid/synthetic.hpp"

using namespace xmreid;

namespace {

Dataset test_split(int identities) {
  SyntheticSpec s;
  s.identity_count = identities;
  s.split = Split::test;
  return generate_synthetic(s);
}

FeatureTable noisy_vision(const Dataset& d, Eigen::Index dim, Rng& rng) {
  FeatureTable t;
  t.values = Matrix::Zero(static_cast<Eigen::Index>(d.size()), dim);
  t.present.assign(d.size(), false);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.sample(i).modality != Modality::vision) continue;
    for (Eigen::Index c = 0; c < dim; ++c) t.values(static_cast<Eigen::Index>(i), c) = rng.normal();
    t.present[i] = true;
  }
  return t;
}

}  // namespace

TEST(Attributes, MarketSchema) {
  const AttributeSchema s = market_attribute_schema();
  EXPECT_EQ(s.size(), 27u);
  EXPECT_EQ(std::count(s.cardinality.begin(), s.cardinality.end(), 2), 26);
  EXPECT_EQ(s.encoded_size(), 26 + 4);
  EXPECT_NO_THROW(s.validate());
  AttributeSchema bad = s;
  bad.cardinality[0] = 1;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Attributes, Encoding) {
  AttributeSchema s;
  s.names = {"a", "b", "c"};
  s.cardinality = {2, 3, 2};
  const Vector e = encode_attributes({1, 2, 0}, s);
  const double k = 1 / std::sqrt(3.0);
  EXPECT_EQ(e.size(), 5);
  EXPECT_EQ(e, (Vector(5) << k, 0, 0, k, -k).finished());
  EXPECT_THROW(encode_attributes({1, 3, 0}, s), ValidationError);
  EXPECT_THROW(encode_attributes({1, 2}, s), ValidationError);
}

TEST(Attributes, GenerationIsPerIdentityDeterministic) {
  const AttributeSchema s = market_attribute_schema();
  const AttributeTable a = generate_attributes(test_split(8), s, 3);
  const AttributeTable b = generate_attributes(test_split(5), s, 3);
  EXPECT_EQ(a.size(), 8u);
  for (const auto& [name, v] : b) {
    EXPECT_EQ(a.at(name), v);
    EXPECT_NO_THROW(validate_attributes(v, s));
  }
  EXPECT_NE(generate_attributes(test_split(8), s, 4), a);
}

TEST(Attributes, FlipsChangeExactlyNAndNest) {
  const AttributeSchema s = market_attribute_schema();
  Rng values(1);
  AttributeVector v(s.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(values.index(s.cardinality[i]));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AttributeVector previous = v;
    for (std::size_t n = 0; n <= s.size(); ++n) {
      Rng rng = Rng::derive(seed, 0);
      const AttributeVector f = flip_attributes(v, s, n, rng);
      std::size_t changed = 0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (f[i] != v[i]) ++changed;
        if (previous[i] != v[i]) {
          EXPECT_EQ(f[i], previous[i]) << "flip set not nested at n=" << n;
        }
      }
      EXPECT_EQ(changed, n);
      EXPECT_NO_THROW(validate_attributes(f, s));
      previous = f;
    }
  }
  Rng rng(0);
  EXPECT_THROW(flip_attributes(v, s, s.size() + 1, rng), ValidationError);
}

TEST(Attributes, FlipPositionsAreUniform) {
  AttributeSchema s;
  s.names = {"a", "b", "c", "d"};
  s.cardinality = {2, 2, 2, 2};
  const AttributeVector v = {0, 0, 0, 0};
  std::vector<int> hits(4, 0);
  Rng rng(9);
  const int trials = 40000;
  for (int t = 0; t < trials; ++t) {
    const AttributeVector f = flip_attributes(v, s, 1, rng);
    for (std::size_t i = 0; i < 4; ++i) hits[i] += f[i];
  }
  // Binomial(40000, 1/4): five standard deviations is about 433.
  for (int h : hits) EXPECT_NEAR(h, trials / 4, 433);
}

TEST(Attributes, ZeroFlipsEqualsBaselineAndCurveDecreases) {
  const Dataset d = test_split(30);
  const ProtocolEntries e = resolve_protocol(build_protocol(d, ProtocolMode::across_pose, 1), d);
  Rng rng(2);
  const FeatureTable f = noisy_vision(d, 8, rng);
  const AttributeSchema s = market_attribute_schema();
  const AttributeTable a = generate_attributes(d, s, 5);

  Matrix gallery(static_cast<Eigen::Index>(e.gallery.size()), 8 + s.encoded_size());
  Matrix query(static_cast<Eigen::Index>(e.query.size()), 8 + s.encoded_size());
  std::vector<int> gl;
  std::vector<int> ql;
  for (std::size_t g = 0; g < e.gallery.size(); ++g) {
    gallery.row(static_cast<Eigen::Index>(g)) << f.row(e.gallery[g].image).normalized().transpose(),
        encode_attributes(a.at(d.identity_label(e.gallery[g].identity).name), s).transpose();
    gl.push_back(e.gallery[g].identity);
  }
  for (std::size_t q = 0; q < e.query.size(); ++q) {
    query.row(static_cast<Eigen::Index>(q)) << f.row(e.query[q].image).normalized().transpose(),
        encode_attributes(a.at(d.identity_label(e.query[q].identity).name), s).transpose();
    ql.push_back(e.query[q].identity);
  }
  const Metrics baseline = evaluate(rank_similarities(similarity_matrix(query, gallery), ql, gl), ql, gl);

  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto curve = attribute_flip_experiment(e, d, f, a, s, 5, seeds);
  ASSERT_EQ(curve.size(), 6u);
  for (const Metrics& m : curve[0].per_seed) {
    EXPECT_EQ(m.rank1, baseline.rank1);
    EXPECT_EQ(m.map, baseline.map);
    EXPECT_EQ(m.medr, baseline.medr);
  }
  for (std::size_t n = 1; n < curve.size(); ++n) {
    EXPECT_LE(curve[n].mean_rank1, curve[n - 1].mean_rank1) << n;
    EXPECT_EQ(curve[n].per_seed.size(), seeds.size());
  }
  EXPECT_LT(curve[5].mean_rank1, curve[0].mean_rank1);
  EXPECT_THROW(attribute_flip_experiment(e, d, f, a, s, 28, seeds), ValidationError);
  EXPECT_THROW(attribute_flip_experiment(e, d, f, a, s, 1, {}), ValidationError);
}

TEST(Attributes, JsonRoundTrip) {
  const AttributeTable a = generate_attributes(test_split(4), market_attribute_schema(), 1);
  EXPECT_EQ(attributes_from_json(attributes_to_json(a)), a);
  EXPECT_THROW(attributes_from_json("[1, 2]"), FormatError);
  EXPECT_THROW(attributes_from_json("{\"p\": \"x\"}"), FormatError);
}
