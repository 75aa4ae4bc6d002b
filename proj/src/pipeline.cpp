#include "xmreid/pipeline.hpp"

#include <algorithm>

namespace xmreid {

Dictionary dictionary_for(const Dataset& dataset, int min_count) {
  std::vector<std::string> corpus;
  for (std::size_t i : dataset.indices(Modality::text)) corpus.push_back(dataset.sample(i).text);
  return Dictionary::build(corpus, min_count);
}

FeatureTable encode_dataset(const CrossModalModel& model, const Dataset& dataset) {
  constexpr std::size_t kChunk = 256;
  FeatureTable t;
  t.values = Matrix::Zero(static_cast<Eigen::Index>(dataset.size()), model.feature_dim());
  t.present.assign(dataset.size(), false);

  const auto images = dataset.indices(Modality::vision);
  const auto D = static_cast<Eigen::Index>(dataset.vision_dim());
  if (!images.empty() && D != model.vision.input_width()) {
    throw ValidationError("dataset vision dimension " + std::to_string(D) + " differs from the model's " +
                          std::to_string(model.vision.input_width()));
  }
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    Matrix x(static_cast<Eigen::Index>(end - start), D);
    for (std::size_t k = start; k < end; ++k) {
      x.row(static_cast<Eigen::Index>(k - start)) =
          Eigen::Map<const Eigen::RowVectorXd>(dataset.sample(images[k]).vision.data(), D);
    }
    const Matrix f = forward_vision(model.vision, x, Mode::eval);
    for (std::size_t k = start; k < end; ++k) {
      t.values.row(static_cast<Eigen::Index>(images[k])) = f.row(static_cast<Eigen::Index>(k - start));
      t.present[images[k]] = true;
    }
  }

  const auto texts = dataset.indices(Modality::text);
  for (std::size_t start = 0; start < texts.size(); start += kChunk) {
    const std::size_t end = std::min(texts.size(), start + kChunk);
    std::vector<Matrix> embedded;
    std::vector<std::vector<int>> indices;
    for (std::size_t k = start; k < end; ++k) {
      const TokenSequence tok = encode_sentence(dataset.sample(texts[k]).text, model.dictionary, model.max_length);
      embedded.push_back(embed_tokens(tok, model.embedding));
      indices.push_back(tok.indices);
    }
    const Matrix f = forward_language(model.language, stack_sequences(embedded, indices), Mode::eval);
    for (std::size_t k = start; k < end; ++k) {
      t.values.row(static_cast<Eigen::Index>(texts[k])) = f.row(static_cast<Eigen::Index>(k - start));
      t.present[texts[k]] = true;
    }
  }
  return t;
}

CcaModel fit_cca_on_features(const Dataset& dataset, const FeatureTable& features, const CcaRegularization& r,
                             Eigen::Index components) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t t : dataset.indices(Modality::text)) {
    if (auto img = dataset.image_of(t)) pairs.emplace_back(*img, t);
  }
  if (pairs.size() < 2) throw ValidationError("CCA needs at least 2 image-description pairs");
  const auto d = features.dim();
  Matrix X(d, static_cast<Eigen::Index>(pairs.size()));
  Matrix Y(d, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    X.col(static_cast<Eigen::Index>(k)) = features.row(pairs[k].first);
    Y.col(static_cast<Eigen::Index>(k)) = features.row(pairs[k].second);
  }
  return fit_cca(X, Y, r, components);
}

std::string lxl_gallery_note() {
  return "LxL and VLxVL gallery text features average the descriptions of each gallery image";
}

ScenarioRun run_scenario(Scenario scenario, const Dataset& test, const RetrievalProtocol& protocol,
                         const FeatureTable& features, const CcaModel* cca) {
  const ProtocolEntries entries = resolve_protocol(protocol, test);
  ScenarioRun run;
  run.features = assemble_features(scenario, entries, features, cca);
  run.ranking = rank_gallery(run.features);
  run.report.scenario = std::string(to_string(scenario));
  run.report.protocol_mode = std::string(to_string(protocol.mode));
  run.report.protocol_seed = protocol.seed;
  run.report.metrics = evaluate(run.ranking, run.features.query_labels, run.features.gallery_labels);
  run.report.gallery_size = static_cast<std::size_t>(run.features.gallery.rows());
  if (scenario == Scenario::LxL || scenario == Scenario::VLxVL) run.report.notes.push_back(lxl_gallery_note());
  return run;
}

}  // namespace xmreid
