#include "xmreid/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace xmreid {

double cosine_similarity(const Vector& q, const Vector& g) {
  if (q.size() != g.size()) throw ValidationError("cosine similarity needs equal dimensions");
  const double nq = q.norm();
  const double ng = g.norm();
  if (nq == 0.0 || ng == 0.0) throw ValidationError("cosine similarity of a zero vector");
  return q.dot(g) / (nq * ng);
}

namespace {

const std::vector<ScenarioSpec>& specs() {
  static const std::vector<ScenarioSpec> s = {
      {Scenario::VxV, "VxV", false, false, 1},  {Scenario::LxL, "LxL", true, false, 1},
      {Scenario::LxV, "LxV", true, true, 1},    {Scenario::VLxV, "VLxV", true, true, 2},
      {Scenario::VLxVL, "VLxVL", true, false, 2},
  };
  return s;
}

}  // namespace

const ScenarioSpec& scenario_spec(Scenario s) { return specs().at(static_cast<std::size_t>(s)); }

std::string_view to_string(Scenario s) { return scenario_spec(s).name; }

Scenario parse_scenario(std::string_view name) {
  for (const auto& s : specs()) {
    if (s.name == name) return s.id;
  }
  throw ValidationError("unknown scenario '" + std::string(name) + "' (expected VxV, LxL, LxV, VLxV, VLxVL)");
}

std::vector<Scenario> parse_scenarios(std::string_view list) {
  std::vector<Scenario> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = std::min(list.find(',', start), list.size());
    const auto item = list.substr(start, comma - start);
    if (!item.empty()) out.push_back(parse_scenario(item));
    start = comma + 1;
  }
  if (out.empty()) throw ValidationError("empty scenario list");
  return out;
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all = {Scenario::VxV, Scenario::LxL, Scenario::LxV, Scenario::VLxV,
                                            Scenario::VLxVL};
  return all;
}

Vector FeatureTable::row(std::size_t i) const {
  if (i >= present.size() || !present[i]) {
    throw ValidationError("no feature for sample " + std::to_string(i));
  }
  return values.row(static_cast<Eigen::Index>(i)).transpose();
}

namespace {

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

Vector mean_description(const ProtocolEntry& e, const FeatureTable& f) {
  if (e.descriptions.empty()) {
    throw ValidationError("gallery image " + std::to_string(e.image) + " has no description (text modality missing)");
  }
  Vector m = Vector::Zero(f.dim());
  for (std::size_t t : e.descriptions) m += f.row(t);
  return m / static_cast<double>(e.descriptions.size());
}

Matrix stack_rows(const std::vector<Vector>& rows, Eigen::Index dim) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

}  // namespace

AssembledFeatures assemble_features(Scenario scenario, const ProtocolEntries& entries,
                                    const FeatureTable& features, const CcaModel* cca) {
  const ScenarioSpec& spec = scenario_spec(scenario);
  if (spec.needs_cca && cca == nullptr) {
    throw ValidationError("scenario " + std::string(spec.name) + " needs a fitted CCA model");
  }
  if (cca != nullptr && spec.needs_cca &&
      (cca->input_dim(CcaSide::x) != features.dim() || cca->input_dim(CcaSide::y) != features.dim())) {
    throw ValidationError("CCA model dimensions do not match the features");
  }
  auto proj_img = [&](const Vector& f) { return cca->project_one(f, CcaSide::x); };
  auto proj_txt = [&](const Vector& f) { return cca->project_one(f, CcaSide::y); };

  AssembledFeatures out;
  std::vector<Vector> gallery, query;
  for (const auto& e : entries.gallery) {
    const Vector img = features.row(e.image);
    switch (scenario) {
      case Scenario::VxV: gallery.push_back(img); break;
      case Scenario::LxL: gallery.push_back(mean_description(e, features)); break;
      case Scenario::LxV: gallery.push_back(proj_img(img)); break;
      case Scenario::VLxV: gallery.push_back(concat(img, proj_img(img))); break;
      case Scenario::VLxVL: gallery.push_back(concat(img, mean_description(e, features))); break;
    }
    out.gallery_labels.push_back(e.identity);
    out.gallery_samples.push_back(e.image);
  }
  for (const auto& e : entries.query) {
    const Vector img = features.row(e.image);
    if (!spec.text_queries) {
      query.push_back(img);
      out.query_labels.push_back(e.identity);
      out.query_samples.push_back(e.image);
      continue;
    }
    for (std::size_t t : e.descriptions) {
      const Vector txt = features.row(t);
      switch (scenario) {
        case Scenario::LxL: query.push_back(txt); break;
        case Scenario::LxV: query.push_back(proj_txt(txt)); break;
        case Scenario::VLxV: query.push_back(concat(img, proj_txt(txt))); break;
        case Scenario::VLxVL: query.push_back(concat(img, txt)); break;
        case Scenario::VxV: break;
      }
      out.query_labels.push_back(e.identity);
      out.query_samples.push_back(t);
    }
  }
  if (gallery.empty()) throw ValidationError("empty gallery");
  if (query.empty()) {
    throw ValidationError("scenario " + std::string(spec.name) + " has no query items (text modality missing)");
  }
  const Eigen::Index dim = gallery.front().size();
  out.gallery = stack_rows(gallery, dim);
  out.query = stack_rows(query, dim);
  return out;
}

Matrix similarity_matrix(const Matrix& queries, const Matrix& gallery) {
  if (queries.cols() != gallery.cols()) throw ValidationError("query and gallery dimensions differ");
  const Vector qn = queries.rowwise().norm();
  const Vector gn = gallery.rowwise().norm();
  if ((qn.array() == 0.0).any() || (gn.array() == 0.0).any()) {
    throw ValidationError("cosine similarity of a zero vector");
  }
  Matrix s = queries * gallery.transpose();
  s.array().colwise() /= qn.array();
  s.array().rowwise() /= gn.transpose().array();
  return s;
}

RankingResult rank_similarities(const Matrix& similarity, std::span<const int> query_labels,
                                std::span<const int> gallery_labels) {
  const auto nq = similarity.rows();
  const auto ng = similarity.cols();
  if (ng == 0) throw ValidationError("empty gallery");
  if (static_cast<std::size_t>(nq) != query_labels.size() ||
      static_cast<std::size_t>(ng) != gallery_labels.size()) {
    throw ValidationError("similarity matrix and label counts differ");
  }
  RankingResult r;
  r.order.resize(static_cast<std::size_t>(nq));
  r.first_match.assign(static_cast<std::size_t>(nq), 0);
  for (Eigen::Index q = 0; q < nq; ++q) {
    auto& order = r.order[static_cast<std::size_t>(q)];
    order.resize(static_cast<std::size_t>(ng));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return similarity(q, a) > similarity(q, b); });
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (gallery_labels[static_cast<std::size_t>(order[k])] == query_labels[static_cast<std::size_t>(q)]) {
        r.first_match[static_cast<std::size_t>(q)] = static_cast<int>(k) + 1;
        break;
      }
    }
  }
  return r;
}

RankingResult rank_gallery(const AssembledFeatures& f) {
  return rank_similarities(similarity_matrix(f.query, f.gallery), f.query_labels, f.gallery_labels);
}

double average_precision(std::span<const int> order, int query_label, std::span<const int> gallery_labels) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (gallery_labels[static_cast<std::size_t>(order[k])] != query_label) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw ValidationError("query has no relevant gallery item");
  return sum / hits;
}

Metrics evaluate(const RankingResult& ranking, std::span<const int> query_labels,
                 std::span<const int> gallery_labels) {
  const std::size_t n = ranking.order.size();
  if (n == 0) throw ValidationError("no queries to evaluate");
  if (query_labels.size() != n) throw ValidationError("ranking and query label counts differ");
  Metrics m;
  m.queries = n;
  std::vector<int> ranks;
  ranks.reserve(n);
  int r1 = 0, r5 = 0, r10 = 0;
  double ap = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    const int first = ranking.first_match[q];
    if (first < 1) {
      throw ValidationError("query " + std::to_string(q) + " has no relevant gallery item");
    }
    ranks.push_back(first);
    r1 += first <= 1;
    r5 += first <= 5;
    r10 += first <= 10;
    ap += average_precision(ranking.order[q], query_labels[q], gallery_labels);
  }
  const double pct = 100.0 / static_cast<double>(n);
  m.rank1 = r1 * pct;
  m.rank5 = r5 * pct;
  m.rank10 = r10 * pct;
  m.map = ap * pct;
  std::sort(ranks.begin(), ranks.end());
  m.medr = ranks[(n - 1) / 2];
  return m;
}

std::string report_to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["protocol"] = {{"mode", r.protocol_mode}, {"seed", r.protocol_seed}, {"shot", "single_shot"}};
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["rank@1"] = r.metrics.rank1;
  j["rank@5"] = r.metrics.rank5;
  j["rank@10"] = r.metrics.rank10;
  j["mAP"] = r.metrics.map;
  j["medR"] = r.metrics.medr;
  j["queries"] = r.metrics.queries;
  j["gallery"] = r.gallery_size;
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

std::string report_csv_header() {
  return "scenario,protocol,protocol_seed,seed,rank1,rank5,rank10,mAP,medR,queries,gallery,config_hash\n";
}

std::string report_csv_row(const EvaluationReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.scenario << ',' << r.protocol_mode << ',' << r.protocol_seed << ',' << r.seed << ','
     << r.metrics.rank1 << ',' << r.metrics.rank5 << ',' << r.metrics.rank10 << ',' << r.metrics.map << ','
     << r.metrics.medr << ',' << r.metrics.queries << ',' << r.gallery_size << ',' << r.config_hash << '\n';
  return os.str();
}

}  // namespace xmreid
