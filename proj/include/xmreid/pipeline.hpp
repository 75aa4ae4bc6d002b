#pragma once

#include <string>
#include <vector>

#include "xmreid/cca.hpp"
#include "xmreid/dataset.hpp"
#include "xmreid/protocol.hpp"
#include "xmreid/retrieval.hpp"
#include "xmreid/trainer.hpp"

namespace xmreid {

// Dictionary over the dataset's descriptions, in sample order.
Dictionary dictionary_for(const Dataset& dataset, int min_count = 1);

// Eval-mode features for every sample of the dataset.
FeatureTable encode_dataset(const CrossModalModel& model, const Dataset& dataset);

// CCA over (image, description) training pairs: one column per description
// attached to an image. Side x is the image feature.
CcaModel fit_cca_on_features(const Dataset& dataset, const FeatureTable& features,
                             const CcaRegularization& r = {}, Eigen::Index components = 0);

struct ScenarioRun {
  EvaluationReport report;
  RankingResult ranking;
  AssembledFeatures features;
};

ScenarioRun run_scenario(Scenario scenario, const Dataset& test, const RetrievalProtocol& protocol,
                         const FeatureTable& features, const CcaModel* cca);

std::string lxl_gallery_note();

}  // namespace xmreid
