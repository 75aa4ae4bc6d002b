// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "xmreid/attributes.hpp"
#include "xmreid/checkpoint.hpp"
#include "xmreid/pipeline.hpp"
#include "xmreid/synthetic.hpp"

using namespace xmreid;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const Outcome& o) {
  std::printf("%s criterion %d: %s (%s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run(int id, const char* title, const std::function<Outcome()>& body) {
  try {
    report(id, title, body());
  } catch (const std::exception& e) {
    report(id, title, {false, std::string("exception: ") + e.what()});
  }
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// ---------------------------------------------------------------- gradients

struct GradCase {
  std::string name;
  int input_width;
  std::vector<LayerSpec> layers;
  int positions = 1;
  int padding = 0;  // trailing padding positions per sequence
  Mode mode = Mode::train;
};

// Smallest |pre-activation| seen by any ReLU; central differences straddling
// a kink would measure the kink, not the gradient.
double relu_margin(const Encoder& e, const Activation& input, const GradientCheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 2);
  Activation x = input;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < e.layer_count(); ++l) {
    if (e.layer(l).spec().kind == LayerKind::relu) margin = std::min(margin, x.values.cwiseAbs().minCoeff());
    x = e.layer(l).forward(x, o.mode, &rng, nullptr);
  }
  return margin;
}

Outcome gradient_criterion() {
  using K = LayerKind;
  const auto t0 = Clock::now();
  const std::vector<GradCase> cases = {
      {"dense", 5, {{.kind = K::dense, .width = 4}}},
      {"dense residual", 5, {{.kind = K::dense, .width = 5, .residual = true}}},
      {"conv1d_k3", 3, {{.kind = K::conv1d_k3, .width = 4}}, 5},
      {"conv1d_k3 residual", 4, {{.kind = K::conv1d_k3, .width = 4, .residual = true}}, 5, 1},
      {"relu", 5, {{.kind = K::relu}}},
      {"batch_norm train", 4, {{.kind = K::batch_norm}}},
      {"batch_norm eval", 4, {{.kind = K::batch_norm}}, 1, 0, Mode::eval},
      {"dropout", 4, {{.kind = K::dropout, .keep_prob = 0.5}}},
      {"global_avg_pool", 3, {{.kind = K::global_avg_pool}}, 5, 2},
      {"global_avg_pool masked", 3, {{.kind = K::global_avg_pool, .masked = true}}, 5, 2},
      {"vision stack train", 32, default_vision_layers(32, 16, 0.75)},
      {"vision stack eval", 32, default_vision_layers(32, 16, 0.75), 1, 0, Mode::eval},
      {"language stack", 16, default_language_layers(16, 16), 8, 3},
      {"language stack masked residual", 16, default_language_layers(16, 16, true, true), 8, 3},
  };
  const double margin_needed = 1e-3;
  double worst = 0.0;
  std::string worst_case;
  std::size_t checked = 0;
  std::size_t largest = 0;
  for (const auto& c : cases) {
    bool found = false;
    for (std::uint64_t seed = 1; seed <= 100 && !found; ++seed) {
      Rng rng(seed);
      Encoder e(c.input_width, c.layers, rng);
      for (std::size_t l = 0; l < e.layer_count(); ++l) {
        for (auto& b : e.layer(l).blocks()) {
          if (b.name == "bias" || b.name == "beta") {
            for (Eigen::Index i = 0; i < b.value.size(); ++i) b.value.data()[i] = 0.1 * rng.normal();
          }
          if (b.name == "running_var") b.value = (b.value.array() + 0.5).matrix();
        }
      }
      Activation in;
      in.positions = c.positions;
      in.values = gaussian(6 * c.positions, c.input_width, rng);
      if (c.padding > 0) {
        in.mask = Vector::Ones(in.values.rows());
        for (int b = 0; b < 6; ++b) in.mask.segment(b * c.positions + c.positions - c.padding, c.padding).setZero();
      }
      GradientCheckOptions o;
      o.step = 1e-5;
      o.tolerance = 1e-5;
      o.mode = c.mode;
      o.seed = seed;
      if (relu_margin(e, in, o) < margin_needed) continue;
      found = true;
      const GradientCheckReport r = gradient_check(e, in, o);
      checked += r.checked;
      largest = std::max(largest, e.parameter_count());
      if (r.max_relative_error >= worst) {
        worst = r.max_relative_error;
        worst_case = c.name + " " + r.worst_entry;
      }
    }
    if (!found) return {false, c.name + ": no draw met the ReLU margin"};
  }
  const double elapsed = seconds_since(t0);
  const bool pass = worst < 1e-5 && elapsed < 60.0 && largest <= 5000;
  return {pass, fmt("max relative error %.3g at ", worst) + worst_case + ", " + std::to_string(checked) +
                    " entries, largest stack " + std::to_string(largest) + " parameters, " +
                    fmt("%.1f s", elapsed)};
}

// ---------------------------------------------------------------- CCA

Outcome cca_criterion() {
  Rng rng(2024);
  double worst_rho = 0.0;
  double worst_white = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto dx = static_cast<Eigen::Index>(1 + rng.index(8));
    const auto dy = static_cast<Eigen::Index>(1 + rng.index(8));
    const auto m = static_cast<Eigen::Index>(dx + dy + 10 + rng.index(200 - static_cast<std::size_t>(dx + dy + 10) + 1));
    const auto latent = static_cast<Eigen::Index>(1 + rng.index(3));
    const Matrix z = gaussian(latent, m, rng);
    const Matrix X = gaussian(dx, latent, rng) * z + 0.5 * gaussian(dx, m, rng);
    const Matrix Y = gaussian(dy, latent, rng) * z + 0.5 * gaussian(dy, m, rng);
    const CovarianceSet cov = estimate_covariances(X, Y);
    const CcaModel cca = fit_cca(X, Y);
    const auto rho = oracle::canonical_correlations(X, Y, cov.r_x, cov.r_y);
    for (Eigen::Index k = 0; k < cca.components(); ++k) {
      worst_rho = std::max(worst_rho, std::abs(cca.correlations(k) - static_cast<double>(rho[static_cast<std::size_t>(k)])));
    }
    const Eigen::Index k = cca.components();
    worst_white = std::max(worst_white, (cca.w_x.transpose() * cov.sxx * cca.w_x - Matrix::Identity(k, k)).cwiseAbs().maxCoeff());
    worst_white = std::max(worst_white, (cca.w_y.transpose() * cov.syy * cca.w_y - Matrix::Identity(k, k)).cwiseAbs().maxCoeff());
  }
  return {worst_rho < 1e-8 && worst_white < 1e-6,
          fmt("100 instances, max |rho - oracle| %.3g", worst_rho) + fmt(", max whitening deviation %.3g", worst_white)};
}

// ---------------------------------------------------------------- shared classifier

Outcome shared_classifier_criterion() {
  SyntheticSpec s;
  s.identity_count = 12;
  s.seed = 3;
  const Dataset d = generate_synthetic(s);
  const Dictionary dict = dictionary_for(d);
  ModelSpec spec;
  spec.vision_input = static_cast<int>(d.vision_dim());
  spec.vision_layers = default_vision_layers(16, 8, 0.75);
  spec.embed_dim = 8;
  spec.max_length = 24;
  spec.language_layers = default_language_layers(8, 8);
  spec.identity_count = d.identity_count();
  Rng init(7);
  CrossModalModel model = CrossModalModel::create(spec, dict, init);

  TrainConfig config;
  SgdMomentum optimizer(config.momentum);
  Rng rng(11);
  Rng pick(12);
  const auto images = d.indices(Modality::vision);
  double worst = 0.0;
  bool same_storage = true;
  const double lr = 0.05;
  for (int step = 0; step < 10; ++step) {
    config.loss_weight_img = 0.1 + 1.9 * pick.uniform();
    config.loss_weight_txt = 0.1 + 1.9 * pick.uniform();
    Batch batch;
    const std::size_t n = 8;
    batch.vision.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d.vision_dim()));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t img = images[pick.index(images.size())];
      const Sample& smp = d.sample(img);
      batch.vision.row(static_cast<Eigen::Index>(k)) =
          Eigen::Map<const Eigen::RowVectorXd>(smp.vision.data(), static_cast<Eigen::Index>(smp.vision.size()));
      batch.tokens.push_back(encode_sentence(d.sample(d.descriptions_of(img).front()).text, dict, spec.max_length));
      batch.labels.push_back(smp.identity_id);
    }

    // Two independent single-loss backward passes on the pre-step weights.
    const Matrix w = model.classifier.image_weights();
    Rng replay = rng;
    const Matrix f_img = forward_vision(model.vision, batch.vision, Mode::train, &replay);
    std::vector<Matrix> embedded;
    std::vector<std::vector<int>> indices;
    for (const auto& t : batch.tokens) {
      embedded.push_back(embed_tokens(t, model.embedding));
      indices.push_back(t.indices);
    }
    const Matrix f_txt = forward_language(model.language, stack_sequences(embedded, indices), Mode::train, &replay);
    const Matrix g_img = identity_loss(f_img, batch.labels, w).grad_weights;
    const Matrix g_txt = identity_loss(f_txt, batch.labels, w).grad_weights;
    const Matrix expected = (config.loss_weight_img * g_img + config.loss_weight_txt * g_txt) / 2.0;

    const Matrix v_before = optimizer.velocity("classifier/joint", w.rows(), w.cols());
    joint_step(model, optimizer, batch, config, {}, lr, rng);
    const Matrix v_after = optimizer.velocity("classifier/joint", w.rows(), w.cols());
    const Matrix applied = v_after - config.momentum * v_before;
    worst = std::max(worst, (applied - expected).cwiseAbs().maxCoeff());
    worst = std::max(worst, ((w - lr * v_after) - model.classifier.image_weights()).cwiseAbs().maxCoeff());
    same_storage = same_storage && &model.classifier.image_weights() == &model.classifier.text_weights() &&
                   model.classifier.image_weights() == model.classifier.text_weights();
  }

  TrainConfig full;
  full.stage_epochs = {1, 1};
  const TrainingRun trained = train(d, dict, spec, full, from_scratch_plan());
  for (const auto& stage : trained.stages) {
    same_storage = same_storage && &stage.model.classifier.image_weights() == &stage.model.classifier.text_weights();
  }
  return {worst < 1e-10 && same_storage,
          fmt("10 steps, max |applied - (w_img g_img + w_txt g_txt)/2| %.3g", worst) +
              (same_storage ? ", one matrix behind both losses" : ", classifier storage diverged")};
}

// ---------------------------------------------------------------- metrics

Outcome metric_criterion() {
  Rng rng(404);
  std::size_t rank_mismatch = 0;
  double worst_ap = 0.0;
  double worst_summary = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Matrix s(50, 100);
    const bool coarse = trial % 2 == 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double v = rng.normal();
      s.data()[i] = coarse ? std::round(v * 3) / 3 : v;
    }
    std::vector<int> gl(100);
    for (auto& l : gl) l = static_cast<int>(rng.index(30));
    std::vector<int> ql(50);
    for (auto& l : ql) l = gl[rng.index(gl.size())];
    const RankingResult r = rank_similarities(s, ql, gl);
    const Metrics m = evaluate(r, ql, gl);
    std::vector<int> firsts;
    long double ap_sum = 0;
    for (Eigen::Index q = 0; q < 50; ++q) {
      const auto qi = static_cast<std::size_t>(q);
      const auto o = oracle::brute_force_query(s.row(q), ql[qi], gl);
      if (o.first_match != r.first_match[qi]) ++rank_mismatch;
      worst_ap = std::max(worst_ap, std::abs(average_precision(r.order[qi], ql[qi], gl) - static_cast<double>(o.ap)));
      firsts.push_back(o.first_match);
      ap_sum += o.ap;
    }
    auto within = [&](int k) {
      return 100.0 * static_cast<double>(std::count_if(firsts.begin(), firsts.end(), [k](int f) { return f <= k; })) / 50.0;
    };
    std::sort(firsts.begin(), firsts.end());
    const double medr = firsts[(firsts.size() - 1) / 2];
    if (m.rank1 != within(1) || m.rank5 != within(5) || m.rank10 != within(10) || m.medr != medr) ++rank_mismatch;
    worst_summary = std::max(worst_summary, std::abs(m.map - static_cast<double>(100 * ap_sum / 50)));
  }

  // First matches at ranks 1, 3 and 7 in a single-shot gallery of ten.
  std::vector<int> gl(10);
  for (int g = 0; g < 10; ++g) gl[static_cast<std::size_t>(g)] = g;
  Matrix s = Matrix::Zero(3, 10);
  const std::vector<int> ql = {0, 1, 2};
  const int firsts[] = {1, 3, 7};
  for (int q = 0; q < 3; ++q) {
    int slot = 0;
    for (int g = 0; g < 10; ++g) {
      if (g == q) continue;
      if (slot + 1 == firsts[q]) ++slot;
      s(q, g) = 10.0 - slot++;
    }
    s(q, q) = 10.0 - (firsts[q] - 1);
  }
  const Metrics hand = evaluate(rank_similarities(s, ql, gl), ql, gl);
  const bool hand_ok = std::abs(hand.rank1 - 100.0 / 3) < 1e-12 && std::abs(hand.rank5 - 200.0 / 3) < 1e-12 &&
                       hand.rank10 == 100.0 && std::abs(hand.map - 100.0 * (1 + 1.0 / 3 + 1.0 / 7) / 3) < 1e-12 &&
                       std::abs(hand.map - 49.21) < 0.005 && hand.medr == 3.0;
  return {rank_mismatch == 0 && worst_ap < 1e-12 && worst_summary < 1e-12 && hand_ok,
          std::to_string(rank_mismatch) + " rank mismatches over 200 matrices" + fmt(", max AP deviation %.3g", worst_ap) +
              fmt("; {1,3,7}: mAP %.4f", hand.map) + fmt(", medR %.0f", hand.medr)};
}

// ---------------------------------------------------------------- benchmark trends

struct BenchmarkSeed {
  double joint_across = 0;
  double separate_across = 0;
  double joint_within = 0;
};

BenchmarkSeed run_benchmark(std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  s.view_shift = 0.3;
  s.text_vocab = std::max(256, s.attribute_words());
  const Dataset train_set = generate_synthetic(s);
  SyntheticSpec ts = s;
  ts.identity_count = 50;
  ts.identity_stream = 1;
  ts.split = Split::test;
  const Dataset test_set = generate_synthetic(ts);
  SyntheticSpec as = s;
  as.identity_count = 100;
  as.identity_stream = 2;
  const Dataset aux_set = generate_synthetic(as);

  ModelSpec spec;
  spec.vision_input = static_cast<int>(train_set.vision_dim());
  spec.vision_layers = default_vision_layers(16, 16, 0.75);
  spec.embed_dim = 16;
  spec.max_length = 32;
  spec.language_layers = default_language_layers(16, 16);
  spec.identity_count = train_set.identity_count();
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.stage_epochs = {30, 30};
  cfg.stage_lr = {0.1, 0.01};
  cfg.decay_period = 1000;

  ModelSpec aux_spec = spec;
  aux_spec.identity_count = aux_set.identity_count();
  TrainConfig aux_cfg = cfg;
  aux_cfg.stage_epochs = {60};
  aux_cfg.stage_lr = {0.1};
  const CrossModalModel aux = train_single_branch(aux_set, dictionary_for(aux_set), aux_spec, aux_cfg, Modality::vision);
  InitSources init;
  init.vision_auxiliary = &aux.vision;

  const Dictionary dict = dictionary_for(train_set);
  BenchmarkSeed out;
  for (ClassifierSharing sharing : {ClassifierSharing::shared, ClassifierSharing::separate}) {
    ModelSpec ms = spec;
    ms.sharing = sharing;
    TrainConfig c = cfg;
    c.sharing = sharing;
    const TrainingRun run = train(train_set, dict, ms, c, apply_strategy(4), init);
    const CrossModalModel& model = run.final_model();
    const CcaModel cca = fit_cca_on_features(train_set, encode_dataset(model, train_set));
    const FeatureTable test_features = encode_dataset(model, test_set);
    for (ProtocolMode mode : {ProtocolMode::across_pose, ProtocolMode::within_pose}) {
      if (sharing == ClassifierSharing::separate && mode == ProtocolMode::within_pose) continue;
      double acc = 0;
      for (std::uint64_t p = 0; p < 10; ++p) {
        const RetrievalProtocol protocol = build_protocol(test_set, mode, seed * 1000 + p);
        acc += run_scenario(Scenario::LxV, test_set, protocol, test_features, &cca).report.metrics.rank1 / 10;
      }
      if (sharing == ClassifierSharing::separate) {
        out.separate_across = acc;
      } else if (mode == ProtocolMode::across_pose) {
        out.joint_across = acc;
      } else {
        out.joint_within = acc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- attributes

Outcome attribute_criterion() {
  SyntheticSpec s;
  s.identity_count = 50;
  s.identity_stream = 1;
  s.split = Split::test;
  s.seed = 5;
  s.noise_sigma = 3.0;
  s.view_shift = 0.3;
  const Dataset d = generate_synthetic(s);
  const ProtocolEntries entries = resolve_protocol(build_protocol(d, ProtocolMode::across_pose, 5), d);
  FeatureTable f;
  f.values = Matrix::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.vision_dim()));
  f.present.assign(d.size(), false);
  for (std::size_t i : d.indices(Modality::vision)) {
    const auto& v = d.sample(i).vision;
    f.values.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    f.present[i] = true;
  }
  const AttributeSchema schema = market_attribute_schema();
  const AttributeTable attributes = generate_attributes(d, schema, 5);

  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto curve = attribute_flip_experiment(entries, d, f, attributes, schema, 5, seeds);

  // Baseline with untouched query attributes, assembled independently.
  const Eigen::Index dv = f.dim();
  const Eigen::Index da = schema.encoded_size();
  auto row_for = [&](const ProtocolEntry& e) {
    Vector r(dv + da);
    r << f.row(e.image).normalized(), encode_attributes(attributes.at(d.identity_label(e.identity).name), schema);
    return r;
  };
  Matrix g(static_cast<Eigen::Index>(entries.gallery.size()), dv + da);
  Matrix q(static_cast<Eigen::Index>(entries.query.size()), dv + da);
  std::vector<int> gl;
  std::vector<int> ql;
  for (std::size_t k = 0; k < entries.gallery.size(); ++k) {
    g.row(static_cast<Eigen::Index>(k)) = row_for(entries.gallery[k]).transpose();
    gl.push_back(entries.gallery[k].identity);
  }
  for (std::size_t k = 0; k < entries.query.size(); ++k) {
    q.row(static_cast<Eigen::Index>(k)) = row_for(entries.query[k]).transpose();
    ql.push_back(entries.query[k].identity);
  }
  const Metrics baseline = evaluate(rank_similarities(similarity_matrix(q, g), ql, gl), ql, gl);

  bool exact = curve[0].per_seed.size() == seeds.size();
  for (const Metrics& m : curve[0].per_seed) {
    exact = exact && m.rank1 == baseline.rank1 && m.rank5 == baseline.rank5 && m.rank10 == baseline.rank10 &&
            m.map == baseline.map && m.medr == baseline.medr;
  }
  bool monotone = true;
  std::string trace;
  for (std::size_t n = 0; n < curve.size(); ++n) {
    if (n > 0) monotone = monotone && curve[n].mean_rank1 <= curve[n - 1].mean_rank1;
    trace += (n ? " -> " : "") + fmt("%.2f", curve[n].mean_rank1);
  }
  return {exact && monotone, "mean rank@1 over 10 seeds " + trace + (exact ? "; N=0 equals baseline" : "; N=0 differs")};
}

// ---------------------------------------------------------------- augmentation

Outcome augmentation_criterion() {
  Rng rng(808);
  std::size_t drop_bad = 0;
  std::size_t shift_bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int L = 1 + static_cast<int>(rng.index(40));
    const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(L)));
    TokenSequence t;
    t.indices.assign(static_cast<std::size_t>(L), 0);
    for (int k = 0; k < n; ++k) t.indices[static_cast<std::size_t>(k)] = 1 + static_cast<int>(rng.index(20));
    t.true_length = n;
    const double p = rng.uniform();

    const TokenSequence dropped = augment_word_drop(t, p, rng);
    std::vector<int> kept;
    for (int v : dropped.indices) {
      if (v != 0) kept.push_back(v);
    }
    std::size_t at = 0;
    for (int k = 0; k < n && at < kept.size(); ++k) {
      if (t.indices[static_cast<std::size_t>(k)] == kept[at]) ++at;
    }
    const bool packed = std::all_of(dropped.indices.begin(), dropped.indices.begin() + static_cast<long>(kept.size()),
                                    [](int v) { return v != 0; });
    if (kept.empty() || at != kept.size() || !packed || dropped.max_length() != L ||
        dropped.true_length != static_cast<int>(kept.size())) {
      ++drop_bad;
    }

    const TokenSequence shifted = augment_zero_shift(t, rng);
    std::vector<int> before(t.indices.begin(), t.indices.begin() + n);
    std::vector<int> words;
    int first = -1;
    int last = -1;
    for (int k = 0; k < shifted.max_length(); ++k) {
      const int v = shifted.indices[static_cast<std::size_t>(k)];
      if (v == 0) continue;
      if (first < 0) first = k;
      last = k;
      words.push_back(v);
    }
    std::vector<int> a = before;
    std::vector<int> b = words;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b || last - first + 1 != n || shifted.max_length() != L) ++shift_bad;
  }
  return {drop_bad == 0 && shift_bad == 0, "10000 applications each: " + std::to_string(drop_bad) +
                                               " word-drop violations, " + std::to_string(shift_bad) +
                                               " zero-shift violations"};
}

// ---------------------------------------------------------------- determinism

Outcome determinism_criterion() {
  auto one_run = [] {
    SyntheticSpec s;
    s.identity_count = 8;
    s.seed = 9;
    const Dataset train_set = generate_synthetic(s);
    SyntheticSpec ts = s;
    ts.identity_stream = 1;
    ts.split = Split::test;
    const Dataset test_set = generate_synthetic(ts);
    const Dictionary dict = dictionary_for(train_set);
    ModelSpec spec;
    spec.vision_input = static_cast<int>(train_set.vision_dim());
    spec.vision_layers = default_vision_layers(12, 8, 0.5);
    spec.embed_dim = 8;
    spec.max_length = 24;
    spec.language_layers = default_language_layers(8, 8);
    spec.identity_count = train_set.identity_count();
    TrainConfig cfg;
    cfg.seed = 21;
    cfg.stage_epochs = {2, 2};
    const TrainingRun run = train(train_set, dict, spec, cfg, from_scratch_plan());
    const CcaModel cca = fit_cca_on_features(train_set, encode_dataset(run.final_model(), train_set));
    Checkpoint ck = model_to_checkpoint(run.final_model(), {"cfg", cfg.seed, 2, 2, 0});
    put_cca(ck, cca);
    std::string bytes = serialize_checkpoint(ck);
    const FeatureTable f = encode_dataset(run.final_model(), test_set);
    const RetrievalProtocol p = build_protocol(test_set, ProtocolMode::across_pose, 3);
    std::string reports;
    for (Scenario sc : all_scenarios()) reports += report_to_json(run_scenario(sc, test_set, p, f, &cca).report);
    for (const auto& e : run.log) reports += epoch_record_json(e);
    return std::make_pair(bytes, reports);
  };
  const auto a = one_run();
  const auto b = one_run();

  const fs::path dir = fs::temp_directory_path() / "xmreid_acceptance";
  fs::create_directories(dir);
  const Checkpoint original = deserialize_checkpoint(a.first);
  save_checkpoint(original, dir / "model.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "model.ckpt");
  bool bitwise = loaded.arrays.size() == original.arrays.size() && loaded.metadata == original.metadata;
  for (std::size_t i = 0; bitwise && i < loaded.arrays.size(); ++i) {
    const auto& x = loaded.arrays[i];
    const auto& y = original.arrays[i];
    bitwise = x.name == y.name && x.shape == y.shape && x.data.size() == y.data.size() &&
              std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(double)) == 0;
  }
  bitwise = bitwise && serialize_checkpoint(loaded) == a.first;
  fs::remove_all(dir);
  const bool same = a.first == b.first && a.second == b.second;
  return {same && bitwise, std::string(same ? "two identical runs byte-identical" : "runs differ") + " (" +
                               std::to_string(a.first.size()) + " checkpoint bytes, " +
                               std::to_string(a.second.size()) + " report bytes); round trip " +
                               (bitwise ? "bitwise exact" : "not exact")};
}

// ---------------------------------------------------------------- scenarios

Outcome scenario_criterion() {
  SyntheticSpec s;
  s.identity_count = 20;
  s.split = Split::test;
  const Dataset d = generate_synthetic(s);
  const ProtocolEntries entries = resolve_protocol(build_protocol(d, ProtocolMode::across_pose, 2), d);
  Rng rng(10);
  bool dims_ok = true;
  bool order_ok = true;
  std::string dims;
  for (Eigen::Index dim : {Eigen::Index{16}, Eigen::Index{2048}}) {
    FeatureTable f;
    f.values = gaussian(static_cast<Eigen::Index>(d.size()), dim, rng);
    f.present.assign(d.size(), true);
    const CcaModel cca = CcaModel::identity(dim);
    for (Scenario sc : all_scenarios()) {
      const AssembledFeatures a = assemble_features(sc, entries, f, &cca);
      const Eigen::Index want = scenario_spec(sc).size_factor * dim;
      dims_ok = dims_ok && a.query.cols() == want && a.gallery.cols() == want;
      if (dim == 2048) dims += std::string(dims.empty() ? "" : ", ") + std::string(to_string(sc)) + " " + std::to_string(a.query.cols());
      const RankingResult base = rank_gallery(a);
      for (int trial = 0; trial < 20; ++trial) {
        AssembledFeatures scaled = a;
        for (Eigen::Index r = 0; r < scaled.query.rows(); ++r) scaled.query.row(r) *= std::exp(4 * rng.normal());
        for (Eigen::Index r = 0; r < scaled.gallery.rows(); ++r) scaled.gallery.row(r) *= std::exp(4 * rng.normal());
        order_ok = order_ok && rank_gallery(scaled).order == base.order;
      }
    }
  }
  dims_ok = dims_ok && scenario_spec(Scenario::VLxV).size_factor * 2048 == 4096;
  return {dims_ok && order_ok, "d=2048: " + dims + (order_ok ? "; rankings unchanged under positive scaling"
                                                             : "; scaling changed a ranking")};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  run(1, "gradient correctness", gradient_criterion);
  run(2, "CCA oracle equivalence", cca_criterion);
  run(3, "shared-classifier invariant", shared_classifier_criterion);
  run(4, "metric oracle", metric_criterion);

  std::vector<BenchmarkSeed> bench;
  std::string bench_error;
  const auto tb = Clock::now();
  try {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      bench.push_back(run_benchmark(seed));
      std::fprintf(stderr, "benchmark seed %llu: joint %.1f separate %.1f within %.1f (%.0f s)\n",
                   static_cast<unsigned long long>(seed), bench.back().joint_across, bench.back().separate_across,
                   bench.back().joint_within, seconds_since(tb));
    }
  } catch (const std::exception& e) {
    bench_error = e.what();
  }
  const double bench_seconds = seconds_since(tb);
  if (!bench_error.empty()) {
    report(5, "joint vs separate trend", {false, "exception: " + bench_error});
    report(6, "within vs across pose trend", {false, "exception: " + bench_error});
  } else {
    int joint_wins = 0;
    int within_wins = 0;
    std::string a;
    std::string b;
    for (const auto& r : bench) {
      joint_wins += r.joint_across >= r.separate_across;
      within_wins += r.joint_within >= r.joint_across;
      a += fmt(" %.1f", r.joint_across) + fmt("/%.1f", r.separate_across);
      b += fmt(" %.1f", r.joint_within) + fmt("/%.1f", r.joint_across);
    }
    report(5, "joint vs separate trend",
           {joint_wins >= 4 && bench_seconds < 600.0,
            "L x V rank@1 joint/separate per seed:" + a + "; " + std::to_string(joint_wins) + " of 5 seeds" +
                fmt(", %.0f s", bench_seconds)});
    report(6, "within vs across pose trend",
           {within_wins >= 4, "L x V rank@1 within/across per seed:" + b + "; " + std::to_string(within_wins) +
                                  " of 5 seeds"});
  }

  run(7, "attribute-flip sensitivity", attribute_criterion);
  run(8, "augmentation properties", augmentation_criterion);
  run(9, "determinism and persistence", determinism_criterion);
  run(10, "scenario assembly", scenario_criterion);
  std::printf("%d of 10 criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
