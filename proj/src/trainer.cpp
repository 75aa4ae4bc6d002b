#include "xmreid/trainer.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

namespace xmreid {

std::string_view to_string(ClassifierSharing s) {
  return s == ClassifierSharing::shared ? "shared" : "separate";
}

ClassifierSharing parse_sharing(std::string_view s) {
  if (s == "shared") return ClassifierSharing::shared;
  if (s == "separate") return ClassifierSharing::separate;
  throw ValidationError("unknown classifier sharing '" + std::string(s) + "'");
}

std::string_view to_string(InitSource s) {
  switch (s) {
    case InitSource::auxiliary_pretrained: return "auxiliary-pretrained";
    case InitSource::task_pretrained: return "task-pretrained";
    case InitSource::random: return "random";
  }
  return "?";
}

namespace {

Matrix gaussian(int rows, int cols, double sigma, Rng& rng) {
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = sigma * rng.normal();
  return m;
}

}  // namespace

JointClassifier::JointClassifier(int identities, int dim, ClassifierSharing sharing, Rng& rng)
    : sharing_(sharing) {
  if (identities < 1 || dim < 1) throw ValidationError("classifier needs I >= 1 and d >= 1");
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  image_ = gaussian(identities, dim, sigma, rng);
  if (sharing == ClassifierSharing::separate) text_ = gaussian(identities, dim, sigma, rng);
}

IdentityLoss identity_loss(const Matrix& features, std::span<const int> labels, const Matrix& weights) {
  const auto n = features.rows();
  if (n == 0) throw ValidationError("identity loss on an empty batch");
  if (static_cast<std::size_t>(n) != labels.size()) throw ValidationError("feature/label count mismatch");
  if (features.cols() != weights.cols()) throw ValidationError("feature and classifier widths differ");
  const auto classes = weights.rows();
  Matrix logits = features * weights.transpose();
  if (!logits.allFinite()) throw NumericError("non-finite logits");

  IdentityLoss out;
  Matrix g(n, classes);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    }
    Eigen::Index arg = 0;
    const double top = logits.row(i).maxCoeff(&arg);
    const Eigen::RowVectorXd e = (logits.row(i).array() - top).exp().matrix();
    const double z = e.sum();
    total += std::log(z) - (logits(i, y) - top);
    g.row(i) = e / z;
    g(i, y) -= 1.0;
    out.correct += arg == y;
  }
  g /= static_cast<double>(n);
  out.value = total / static_cast<double>(n);
  out.grad_weights = g.transpose() * features;
  out.grad_features = g * weights;
  return out;
}

void TrainConfig::validate() const {
  if (loss_weight_img < 0 || loss_weight_txt < 0 || !(loss_weight_img + loss_weight_txt > 0)) {
    throw ValidationError("loss weights must be non-negative with a positive sum");
  }
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ValidationError("momentum must be in [0, 1)");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(decay_factor > 0)) throw ValidationError("decay_factor must be positive");
  if (decay_period < 1) throw ValidationError("decay_period must be >= 1");
  if (stages.empty()) throw ValidationError("at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] != 1 && stages[i] != 2) throw ValidationError("stages must be 1 or 2");
    if (i > 0 && stages[i] <= stages[i - 1]) throw ValidationError("stages must be increasing");
  }
  if (!stage_epochs.empty() && stage_epochs.size() != stages.size()) {
    throw ValidationError("stage_epochs must list one value per stage");
  }
  if (!stage_lr.empty() && stage_lr.size() != stages.size()) {
    throw ValidationError("stage_lr must list one value per stage");
  }
  if (!(word_drop >= 0 && word_drop < 1)) throw ValidationError("word_drop must be in [0, 1)");
  if (!(classifier_lr_scale > 0)) throw ValidationError("classifier_lr_scale must be positive");
}

int TrainConfig::epochs_for(std::size_t stage_index) const {
  return stage_epochs.empty() ? epochs : stage_epochs.at(stage_index);
}

double TrainConfig::lr_for(std::size_t stage_index) const {
  return stage_lr.empty() ? learning_rate : stage_lr.at(stage_index);
}

StrategyPlan apply_strategy(int id) {
  using S = InitSource;
  StrategyPlan p;
  p.id = id;
  p.fc = {S::random, true};
  switch (id) {
    case 1: p.vision = {S::task_pretrained, false}; p.language = {S::task_pretrained, false}; break;
    case 2: p.vision = {S::task_pretrained, true}; p.language = {S::task_pretrained, true}; break;
    case 3: p.vision = {S::task_pretrained, false}; p.language = {S::task_pretrained, true}; break;
    case 4: p.vision = {S::auxiliary_pretrained, false}; p.language = {S::random, true}; break;
    case 5: p.vision = {S::random, true}; p.language = {S::task_pretrained, false}; break;
    default: throw ValidationError("strategy must be 1..5, got " + std::to_string(id));
  }
  return p;
}

StrategyPlan from_scratch_plan() {
  StrategyPlan p;
  p.id = 0;
  p.vision = {InitSource::random, true};
  p.language = {InitSource::random, true};
  p.fc = {InitSource::random, true};
  return p;
}

std::vector<LayerSpec> default_vision_layers(int hidden, int feature_dim, double keep_prob) {
  using K = LayerKind;
  std::vector<LayerSpec> s;
  for (int i = 0; i < 2; ++i) {
    s.push_back({.kind = K::dense, .width = hidden});
    s.push_back({.kind = K::batch_norm});
    s.push_back({.kind = K::relu});
  }
  const auto head = ParamGroup::head;
  s.push_back({.kind = K::dense, .width = feature_dim, .group = head});
  s.push_back({.kind = K::batch_norm, .group = head});
  s.push_back({.kind = K::relu, .group = head});
  s.push_back({.kind = K::dropout, .keep_prob = keep_prob, .group = head});
  s.push_back({.kind = K::dense, .width = feature_dim, .group = head});
  s.push_back({.kind = K::batch_norm, .group = head});
  return s;
}

std::vector<LayerSpec> default_language_layers(int channels, int feature_dim, bool masked_pool,
                                               bool residual) {
  using K = LayerKind;
  return {
      {.kind = K::conv1d_k3, .width = channels},
      {.kind = K::relu},
      {.kind = K::conv1d_k3, .width = channels, .residual = residual},
      {.kind = K::relu},
      {.kind = K::conv1d_k3, .width = feature_dim},
      {.kind = K::relu},
      {.kind = K::global_avg_pool, .masked = masked_pool},
  };
}

CrossModalModel CrossModalModel::create(const ModelSpec& spec, Dictionary dictionary, Rng& rng) {
  if (spec.identity_count < 1) throw ValidationError("model needs identity_count >= 1");
  if (spec.max_length < 1) throw ValidationError("max_length must be >= 1");
  bool pooled = false;
  for (const auto& l : spec.language_layers) pooled |= l.kind == LayerKind::global_avg_pool;
  if (!pooled) throw ValidationError("language encoder must contain global_avg_pool");
  for (const auto& l : spec.vision_layers) {
    if (l.kind == LayerKind::conv1d_k3 || l.kind == LayerKind::global_avg_pool) {
      throw ValidationError("vision encoder takes vectors; sequence layers are not allowed");
    }
  }
  CrossModalModel m;
  m.max_length = spec.max_length;
  m.vision = Encoder(spec.vision_input, spec.vision_layers, rng);
  m.embedding = EmbeddingTable::random(dictionary.row_count(), spec.embed_dim, rng);
  m.language = Encoder(spec.embed_dim, spec.language_layers, rng);
  if (m.language.output_width() != m.vision.output_width()) {
    throw ValidationError("vision and language feature widths differ (" +
                          std::to_string(m.vision.output_width()) + " vs " +
                          std::to_string(m.language.output_width()) + ")");
  }
  m.classifier = JointClassifier(spec.identity_count, m.vision.output_width(), spec.sharing, rng);
  m.dictionary = std::move(dictionary);
  return m;
}

ModelSpec CrossModalModel::spec() const {
  ModelSpec s;
  s.vision_input = vision.input_width();
  s.vision_layers = vision.specs();
  s.embed_dim = embedding.dim();
  s.max_length = max_length;
  s.language_layers = language.specs();
  s.identity_count = classifier.identity_count();
  s.sharing = classifier.sharing();
  return s;
}

std::vector<ParamSlot> parameter_slots(CrossModalModel& model) {
  std::vector<ParamSlot> slots;
  auto add_encoder = [&](Encoder& enc, const std::string& prefix, TrainGroup backbone_group) {
    for (std::size_t i = 0; i < enc.layer_count(); ++i) {
      auto& layer = enc.layer(i);
      const TrainGroup g = layer.spec().group == ParamGroup::head ? TrainGroup::fc : backbone_group;
      for (auto& b : layer.blocks()) {
        if (b.trainable) slots.push_back({prefix + std::to_string(i) + "/" + b.name, &b.value, g});
      }
    }
  };
  add_encoder(model.vision, "vision/", TrainGroup::vision);
  slots.push_back({"embedding", &model.embedding.mutable_weights(), TrainGroup::language});
  add_encoder(model.language, "language/", TrainGroup::language);
  if (model.classifier.sharing() == ClassifierSharing::shared) {
    slots.push_back({"classifier/joint", &model.classifier.mutable_image_weights(), TrainGroup::fc});
  } else {
    slots.push_back({"classifier/image", &model.classifier.mutable_image_weights(), TrainGroup::fc});
    slots.push_back({"classifier/text", &model.classifier.mutable_text_weights(), TrainGroup::fc});
  }
  return slots;
}

void SgdMomentum::step(std::span<const ParamSlot> slots, std::span<const Matrix> grads, double lr,
                       std::span<const double> lr_scale, std::span<const bool> skip) {
  if (grads.size() != slots.size() || lr_scale.size() != slots.size() || skip.size() != slots.size()) {
    throw ValidationError("optimizer inputs must be parallel to the parameter slots");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (skip[i]) continue;
    Matrix& theta = *slots[i].value;
    auto it = velocity_.find(slots[i].name);
    if (it == velocity_.end()) {
      it = velocity_.emplace(slots[i].name, Matrix::Zero(theta.rows(), theta.cols())).first;
    }
    Matrix& v = it->second;
    v = momentum_ * v + grads[i];
    theta -= (lr * lr_scale[i]) * v;
  }
}

Matrix SgdMomentum::velocity(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  auto it = velocity_.find(name);
  if (it == velocity_.end()) return Matrix::Zero(rows, cols);
  return it->second;
}

namespace {

Activation embed_batch(const CrossModalModel& model, const std::vector<TokenSequence>& tokens) {
  std::vector<Matrix> embedded;
  std::vector<std::vector<int>> indices;
  embedded.reserve(tokens.size());
  indices.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.max_length() != model.max_length) {
      throw ValidationError("token sequence length " + std::to_string(t.max_length()) +
                            " differs from model max_length " + std::to_string(model.max_length));
    }
    embedded.push_back(embed_tokens(t, model.embedding));
    indices.push_back(t.indices);
  }
  return stack_sequences(embedded, indices);
}

}  // namespace

StepMetrics joint_step(CrossModalModel& model, SgdMomentum& optimizer, const Batch& batch,
                       const TrainConfig& config, const FreezeState& freeze, double lr, Rng& rng) {
  const auto n = batch.labels.size();
  if (n == 0) throw ValidationError("empty batch");
  if (static_cast<std::size_t>(batch.vision.rows()) != n || batch.tokens.size() != n) {
    throw ValidationError("batch modalities must hold one entry per label");
  }
  const bool use_img = config.loss_weight_img > 0.0;
  const bool use_txt = config.loss_weight_txt > 0.0;

  StepMetrics m;
  m.size = static_cast<int>(n);
  Encoder::Trace vtrace, ltrace;
  IdentityLoss li, lt;
  if (use_img) {
    const Matrix f = forward_vision(model.vision, batch.vision, Mode::train, &rng, &vtrace);
    li = image_id_loss(f, batch.labels, model.classifier.image_weights());
  }
  if (use_txt) {
    const Activation emb = embed_batch(model, batch.tokens);
    const Matrix f = forward_language(model.language, emb, Mode::train, &rng, &ltrace);
    lt = text_id_loss(f, batch.labels, model.classifier.text_weights());
  }
  m.loss_img = li.value;
  m.loss_txt = lt.value;
  m.total = config.loss_weight_img * li.value + config.loss_weight_txt * lt.value;
  m.correct_img = li.correct;
  m.correct_txt = lt.correct;
  if (!std::isfinite(m.total)) {
    throw NumericError("non-finite loss (L_img=" + std::to_string(li.value) +
                       ", L_txt=" + std::to_string(lt.value) + "); step aborted");
  }

  auto slots = parameter_slots(model);
  std::vector<Matrix> grads(slots.size());
  std::vector<double> scale(slots.size(), 1.0);
  std::vector<bool> skip_flags(slots.size(), false);
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    at[slots[i].name] = i;
    grads[i] = Matrix::Zero(slots[i].value->rows(), slots[i].value->cols());
  }

  auto scatter = [&](const Encoder& enc, const Encoder::Gradients& g, const std::string& prefix) {
    for (std::size_t l = 0; l < enc.layer_count(); ++l) {
      const auto& blocks = enc.layer(l).blocks();
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].trainable) grads[at.at(prefix + std::to_string(l) + "/" + blocks[b].name)] = g.layers[l][b];
      }
    }
  };
  if (use_img) {
    scatter(model.vision, model.vision.backward(vtrace, config.loss_weight_img * li.grad_features), "vision/");
  }
  if (use_txt) {
    const auto g = model.language.backward(ltrace, config.loss_weight_txt * lt.grad_features);
    scatter(model.language, g, "language/");
    Matrix& table_grad = grads[at.at("embedding")];
    const auto L = static_cast<Eigen::Index>(model.max_length);
    for (std::size_t b = 0; b < n; ++b) {
      accumulate_embedding_gradient(batch.tokens[b], g.input.middleRows(static_cast<Eigen::Index>(b) * L, L),
                                    table_grad);
    }
  }

  if (model.classifier.sharing() == ClassifierSharing::shared) {
    Matrix& gw = grads[at.at("classifier/joint")];
    if (use_img) gw += config.loss_weight_img * li.grad_weights;
    if (use_txt) gw += config.loss_weight_txt * lt.grad_weights;
    gw /= 2.0;
  } else {
    if (use_img) grads[at.at("classifier/image")] = config.loss_weight_img * li.grad_weights;
    if (use_txt) grads[at.at("classifier/text")] = config.loss_weight_txt * lt.grad_weights;
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name.rfind("classifier/", 0) == 0) scale[i] = config.classifier_lr_scale;
    skip_flags[i] = (slots[i].group == TrainGroup::vision && freeze.vision) ||
                    (slots[i].group == TrainGroup::language && freeze.language) ||
                    (slots[i].name == "embedding" && !model.embedding.trainable());
  }
  std::vector<char> skip_storage(skip_flags.begin(), skip_flags.end());
  const std::span<const bool> skip(reinterpret_cast<const bool*>(skip_storage.data()), skip_storage.size());
  optimizer.step(slots, grads, lr, scale, skip);

  auto trainable_layer = [](bool frozen) {
    return [frozen](const LayerSpec& s) { return !(frozen && s.group == ParamGroup::backbone); };
  };
  if (use_img) model.vision.commit_running_stats(vtrace, trainable_layer(freeze.vision));
  if (use_txt) model.language.commit_running_stats(ltrace, trainable_layer(freeze.language));
  return m;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["L_img"] = r.loss_img;
  j["L_txt"] = r.loss_txt;
  j["total"] = r.total;
  j["lr"] = r.lr;
  j["acc_img"] = r.acc_img;
  j["acc_txt"] = r.acc_txt;
  return j.dump();
}

void copy_backbone(const Encoder& from, Encoder& to) {
  if (from.input_width() != to.input_width() || from.specs() != to.specs()) {
    throw ValidationError("pretrained encoder architecture does not match the model");
  }
  for (std::size_t i = 0; i < to.layer_count(); ++i) {
    if (to.layer(i).spec().group != ParamGroup::backbone) continue;
    to.layer(i).blocks() = from.layer(i).blocks();
  }
}

TrainingRun train(const Dataset& dataset, const Dictionary& dictionary, const ModelSpec& spec,
                  const TrainConfig& config, const StrategyPlan& plan, const InitSources& init) {
  config.validate();
  if (dataset.split() != Split::train) throw ValidationError("train needs a training split");
  if (spec.identity_count != dataset.identity_count()) {
    throw ValidationError("model identity_count differs from the dataset's");
  }

  Rng init_rng = Rng::derive(config.seed, 10);
  CrossModalModel model = CrossModalModel::create(spec, dictionary, init_rng);

  switch (plan.vision.init) {
    case InitSource::random: break;
    case InitSource::task_pretrained:
      if (!init.vision_task) throw ValidationError("strategy needs a task-pretrained vision checkpoint");
      copy_backbone(*init.vision_task, model.vision);
      break;
    case InitSource::auxiliary_pretrained:
      if (!init.vision_auxiliary) {
        throw ValidationError("strategy needs an auxiliary-pretrained vision checkpoint");
      }
      copy_backbone(*init.vision_auxiliary, model.vision);
      break;
  }
  if (plan.language.init == InitSource::auxiliary_pretrained) {
    throw ValidationError("no auxiliary pre-training exists for the language branch");
  }
  if (plan.language.init == InitSource::task_pretrained) {
    if (!init.language_task) throw ValidationError("strategy needs a task-pretrained language checkpoint");
    if (!(init.language_task->dictionary == model.dictionary)) {
      throw ValidationError("pretrained language checkpoint uses a different dictionary");
    }
    model.embedding = init.language_task->embedding;
    copy_backbone(init.language_task->language, model.language);
  }

  // Token sequences for every description, encoded once.
  std::vector<TokenSequence> tokens(dataset.size());
  std::vector<std::vector<std::size_t>> identity_texts(static_cast<std::size_t>(dataset.identity_count()));
  for (std::size_t i : dataset.indices(Modality::text)) {
    tokens[i] = encode_sentence(dataset.sample(i).text, model.dictionary, model.max_length);
    identity_texts[static_cast<std::size_t>(dataset.sample(i).identity_id)].push_back(i);
  }
  std::vector<std::size_t> images;
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t i : dataset.indices(Modality::vision)) {
    const auto& own = dataset.descriptions_of(i);
    const auto& fallback = identity_texts[static_cast<std::size_t>(dataset.sample(i).identity_id)];
    const bool per_image = config.pairing == DescriptionPairing::image && !own.empty();
    images.push_back(i);
    candidates.push_back(per_image ? own : fallback);
  }

  TrainingRun run;
  Rng rng = Rng::derive(config.seed, 20);
  const auto D = static_cast<Eigen::Index>(dataset.vision_dim());

  for (std::size_t si = 0; si < config.stages.size(); ++si) {
    const int stage = config.stages[si];
    FreezeState freeze;
    if (stage == 1) {
      freeze.vision = !plan.vision.learnable_in_stage1;
      freeze.language = !plan.language.learnable_in_stage1;
    }
    SgdMomentum optimizer(config.momentum);
    const int epochs = config.epochs_for(si);
    const double base_lr = config.lr_for(si);

    for (int e = 0; e < epochs; ++e) {
      const double lr = base_lr * std::pow(config.decay_factor, e / config.decay_period);
      std::vector<std::size_t> order(images.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      rng.shuffle(order);

      EpochRecord rec;
      rec.stage = stage;
      rec.epoch = e + 1;
      rec.lr = lr;
      std::size_t seen = 0;
      int correct_img = 0, correct_txt = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        if (end - start < 2) break;  // batch-norm needs two rows
        Batch batch;
        batch.vision.resize(static_cast<Eigen::Index>(end - start), D);
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t img = images[order[k]];
          const auto& sample = dataset.sample(img);
          batch.vision.row(static_cast<Eigen::Index>(k - start)) =
              Eigen::Map<const Eigen::RowVectorXd>(sample.vision.data(), D);
          const auto& cands = candidates[order[k]];
          TokenSequence t = tokens[cands[rng.index(cands.size())]];
          if (config.word_drop > 0.0) t = augment_word_drop(t, config.word_drop, rng);
          if (config.zero_shift) t = augment_zero_shift(t, rng);
          batch.tokens.push_back(std::move(t));
          batch.labels.push_back(sample.identity_id);
        }
        const StepMetrics m = joint_step(model, optimizer, batch, config, freeze, lr, rng);
        const auto w = static_cast<double>(m.size);
        rec.loss_img += m.loss_img * w;
        rec.loss_txt += m.loss_txt * w;
        rec.total += m.total * w;
        correct_img += m.correct_img;
        correct_txt += m.correct_txt;
        seen += static_cast<std::size_t>(m.size);
      }
      if (seen > 0) {
        const auto s = static_cast<double>(seen);
        rec.loss_img /= s;
        rec.loss_txt /= s;
        rec.total /= s;
        rec.acc_img = correct_img / s;
        rec.acc_txt = correct_txt / s;
      }
      run.log.push_back(rec);
    }
    run.stages.push_back({stage, model});
  }
  return run;
}

CrossModalModel train_single_branch(const Dataset& dataset, const Dictionary& dictionary,
                                    const ModelSpec& spec, TrainConfig config, Modality branch) {
  ModelSpec s = spec;
  s.sharing = ClassifierSharing::separate;
  if (branch == Modality::vision) {
    config.loss_weight_img = config.loss_weight_img > 0 ? config.loss_weight_img : 1.0;
    config.loss_weight_txt = 0.0;
  } else {
    config.loss_weight_txt = config.loss_weight_txt > 0 ? config.loss_weight_txt : 1.0;
    config.loss_weight_img = 0.0;
  }
  const int epochs = config.epochs_for(0);
  const double lr = config.lr_for(0);
  config.stages = {1};
  config.stage_epochs = {epochs};
  config.stage_lr = {lr};
  auto run = train(dataset, dictionary, s, config, from_scratch_plan());
  return std::move(run.stages.back().model);
}

}  // namespace xmreid
