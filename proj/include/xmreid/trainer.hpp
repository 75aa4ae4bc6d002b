#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmreid/dataset.hpp"
#include "xmreid/nn.hpp"
#include "xmreid/text.hpp"

namespace xmreid {

enum class ClassifierSharing { shared, separate };

std::string_view to_string(ClassifierSharing s);
ClassifierSharing parse_sharing(std::string_view s);

// Identity classifier without bias. In shared mode there is a single I x d
// matrix and both loss paths read that same storage; in separate
// mode each modality owns one (the separately-trained baseline).
class JointClassifier {
 public:
  JointClassifier() = default;
  JointClassifier(int identities, int dim, ClassifierSharing sharing, Rng& rng);

  ClassifierSharing sharing() const { return sharing_; }
  const Matrix& image_weights() const { return image_; }
  const Matrix& text_weights() const { return sharing_ == ClassifierSharing::shared ? image_ : text_; }
  Matrix& mutable_image_weights() { return image_; }
  Matrix& mutable_text_weights() { return sharing_ == ClassifierSharing::shared ? image_ : text_; }
  int identity_count() const { return static_cast<int>(image_.rows()); }

 private:
  ClassifierSharing sharing_ = ClassifierSharing::shared;
  Matrix image_;
  Matrix text_;
};

struct IdentityLoss {
  double value = 0.0;
  Matrix grad_weights;   // I x d
  Matrix grad_features;  // N x d
  int correct = 0;       // argmax hits
};

// -(1/N) sum_n log softmax(W f_n)[label_n], shifted by the max logit.
IdentityLoss identity_loss(const Matrix& features, std::span<const int> labels, const Matrix& weights);
inline IdentityLoss image_id_loss(const Matrix& f_img, std::span<const int> labels, const Matrix& w) {
  return identity_loss(f_img, labels, w);
}
inline IdentityLoss text_id_loss(const Matrix& f_txt, std::span<const int> labels, const Matrix& w) {
  return identity_loss(f_txt, labels, w);
}

enum class DescriptionPairing { image, identity };

struct TrainConfig {
  double loss_weight_img = 1.0;
  double loss_weight_txt = 1.0;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 60;
  double decay_factor = 0.1;
  int decay_period = 20;
  std::vector<int> stages = {1, 2};
  std::vector<int> stage_epochs;    // per stage; empty = `epochs` each
  std::vector<double> stage_lr;     // per stage; empty = `learning_rate` each
  ClassifierSharing sharing = ClassifierSharing::shared;
  DescriptionPairing pairing = DescriptionPairing::image;
  double word_drop = 0.1;
  bool zero_shift = true;
  double classifier_lr_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  int epochs_for(std::size_t stage_index) const;
  double lr_for(std::size_t stage_index) const;
};

enum class InitSource { auxiliary_pretrained, task_pretrained, random };

std::string_view to_string(InitSource s);

struct GroupPlan {
  InitSource init = InitSource::random;
  bool learnable_in_stage1 = true;
};

// Initialisation and stage-1 freezing for the vision backbone, the language
// backbone and the fully-connected head.
struct StrategyPlan {
  int id = 0;
  GroupPlan vision;
  GroupPlan language;
  GroupPlan fc;  // always random and learnable
};

// Strategies 1-5: initialisation source and stage-1 freezing per group.
StrategyPlan apply_strategy(int strategy_id);
// Everything random and learnable; used for single-branch pre-training.
StrategyPlan from_scratch_plan();

struct ModelSpec {
  int vision_input = 0;
  std::vector<LayerSpec> vision_layers;
  int embed_dim = 300;
  int max_length = kDefaultMaxLength;
  std::vector<LayerSpec> language_layers;
  int identity_count = 0;
  ClassifierSharing sharing = ClassifierSharing::shared;
};

// [dense(hidden), bn, relu] x 2, then the two-FC head:
// dense(d), bn, relu, dropout, dense(d), bn.
std::vector<LayerSpec> default_vision_layers(int hidden, int feature_dim, double keep_prob = 0.25);
// [conv1d_k3(channels), relu] x 2, conv1d_k3(d), relu, global_avg_pool.
std::vector<LayerSpec> default_language_layers(int channels, int feature_dim, bool masked_pool = false,
                                               bool residual = false);

struct CrossModalModel {
  Dictionary dictionary;
  int max_length = kDefaultMaxLength;
  Encoder vision;
  EmbeddingTable embedding;
  Encoder language;
  JointClassifier classifier;

  static CrossModalModel create(const ModelSpec& spec, Dictionary dictionary, Rng& rng);
  int feature_dim() const { return vision.output_width(); }
  ModelSpec spec() const;
};

enum class TrainGroup { vision, language, fc };

struct ParamSlot {
  std::string name;
  Matrix* value = nullptr;
  TrainGroup group = TrainGroup::fc;
};

// Trainable parameters in a fixed order; names are stable across copies.
std::vector<ParamSlot> parameter_slots(CrossModalModel& model);

class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  // v <- mu v + g;  theta <- theta - lr * scale * v. Slots with skip[i] set
  // are left untouched, velocity included.
  void step(std::span<const ParamSlot> slots, std::span<const Matrix> grads, double lr,
            std::span<const double> lr_scale, std::span<const bool> skip);
  // Zero matrix if the slot has not been stepped yet.
  Matrix velocity(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;
  void reset() { velocity_.clear(); }

 private:
  double momentum_;
  std::map<std::string, Matrix> velocity_;
};

struct Batch {
  Matrix vision;                      // N x D
  std::vector<TokenSequence> tokens;  // N, already augmented
  std::vector<int> labels;            // N
};

struct StepMetrics {
  double loss_img = 0.0;
  double loss_txt = 0.0;
  double total = 0.0;
  int correct_img = 0;
  int correct_txt = 0;
  int size = 0;
};

struct FreezeState {
  bool vision = false;    // vision backbone
  bool language = false;  // language backbone, embedding included
};

// One SGD step on loss_weight_img * L_img + loss_weight_txt * L_txt. The
// shared classifier receives (loss_weight_img * g_img + loss_weight_txt *
// g_txt) / 2; every other parameter its plain weighted gradient. A branch with
// weight 0 is skipped and reports zero loss. Dropout draws come from `rng`, vision
// branch first.
StepMetrics joint_step(CrossModalModel& model, SgdMomentum& optimizer, const Batch& batch,
                       const TrainConfig& config, const FreezeState& freeze, double lr, Rng& rng);

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double loss_img = 0.0;
  double loss_txt = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double acc_img = 0.0;
  double acc_txt = 0.0;
};

std::string epoch_record_json(const EpochRecord& r);

struct InitSources {
  const Encoder* vision_task = nullptr;        // trained on the task split
  const Encoder* vision_auxiliary = nullptr;   // trained on an auxiliary population
  const CrossModalModel* language_task = nullptr;
};

struct StageResult {
  int stage = 1;
  CrossModalModel model;
};

struct TrainingRun {
  std::vector<StageResult> stages;
  std::vector<EpochRecord> log;
  const CrossModalModel& final_model() const { return stages.back().model; }
};

// Builds the model from `spec`, applies the plan's initialisation, then runs
// each configured stage. Stage 1 honours the plan's freeze flags; later stages
// tune everything. Momentum buffers restart at every stage.
TrainingRun train(const Dataset& dataset, const Dictionary& dictionary, const ModelSpec& spec,
                  const TrainConfig& config, const StrategyPlan& plan, const InitSources& init = {});

// Trains one branch alone with its own classifier (single stage, from scratch).
CrossModalModel train_single_branch(const Dataset& dataset, const Dictionary& dictionary,
                                    const ModelSpec& spec, TrainConfig config, Modality branch);

// Copies the backbone-group layers of `from` into `to`; architectures must match.
void copy_backbone(const Encoder& from, Encoder& to);

}  // namespace xmreid
