#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmreid/cca.hpp"
#include "xmreid/common.hpp"
#include "xmreid/protocol.hpp"

namespace xmreid {

// Normalised dot product. Throws on a zero vector or mismatched sizes.
double cosine_similarity(const Vector& q, const Vector& g);

enum class Scenario { VxV, LxL, LxV, VLxV, VLxVL };

struct ScenarioSpec {
  Scenario id;
  std::string_view name;
  bool text_queries;  // one query per description instead of per image
  bool needs_cca;
  int size_factor;  // assembled length = size_factor * d
};

const ScenarioSpec& scenario_spec(Scenario s);
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);
// Comma-separated list, e.g. "VxV,LxV".
std::vector<Scenario> parse_scenarios(std::string_view list);
const std::vector<Scenario>& all_scenarios();

// One feature row per dataset sample: f_img for vision samples and f_txt for
// text samples.
struct FeatureTable {
  Matrix values;  // dataset.size() x d
  std::vector<bool> present;

  Eigen::Index dim() const { return values.cols(); }
  Vector row(std::size_t i) const;
};

struct AssembledFeatures {
  Matrix query;    // one row per query item
  Matrix gallery;  // one row per gallery image
  std::vector<int> query_labels;
  std::vector<int> gallery_labels;
  std::vector<std::size_t> query_samples;    // dataset index of each query item
  std::vector<std::size_t> gallery_samples;  // dataset index of each gallery image
};

// Scenario recipes, with CCA side x = image and y = text and P_* the
// projection onto the shared space:
//   VxV    f_img                      vs f_img
//   LxL    f_txt                      vs mean f_txt of the image's descriptions
//   LxV    P_txt (f_txt - mean_txt)   vs P_img (f_img - mean_img)
//   VLxV   [f_img, P_txt f_txt]       vs [f_img, P_img f_img]
//   VLxVL  [f_img, f_txt]             vs [f_img, mean f_txt]
// Text queries take f_img from the image their description is attached to.
AssembledFeatures assemble_features(Scenario scenario, const ProtocolEntries& entries,
                                    const FeatureTable& features, const CcaModel* cca);

struct RankingResult {
  std::vector<std::vector<int>> order;  // per query, gallery positions best first
  std::vector<int> first_match;         // 1-based rank of the first correct item, 0 if none
};

// Cosine similarity of every query row against every gallery row.
Matrix similarity_matrix(const Matrix& queries, const Matrix& gallery);

// Descending similarity, ties broken by lower gallery position.
RankingResult rank_similarities(const Matrix& similarity, std::span<const int> query_labels,
                                std::span<const int> gallery_labels);
RankingResult rank_gallery(const AssembledFeatures& features);

struct Metrics {
  double rank1 = 0.0;  // percent
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;  // percent
  double medr = 0.0;
  std::size_t queries = 0;
};

double average_precision(std::span<const int> order, int query_label, std::span<const int> gallery_labels);

// Throws if a query has no relevant gallery item.
Metrics evaluate(const RankingResult& ranking, std::span<const int> query_labels,
                 std::span<const int> gallery_labels);

struct EvaluationReport {
  std::string scenario;
  std::string protocol_mode;
  std::uint64_t protocol_seed = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  Metrics metrics;
  std::size_t gallery_size = 0;
  std::vector<std::string> notes;
};

std::string report_to_json(const EvaluationReport& r);
std::string report_csv_header();
std::string report_csv_row(const EvaluationReport& r);

}  // namespace xmreid
