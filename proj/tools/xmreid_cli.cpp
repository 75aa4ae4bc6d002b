#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmreid/attributes.hpp"
#include "xmreid/checkpoint.hpp"
#include "xmreid/config.hpp"
#include "xmreid/pipeline.hpp"
#include "xmreid/synthetic.hpp"

using namespace xmreid;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Options shared by every subcommand.
struct Common {
  std::string output_dir;
  std::string config_path;

  fs::path out_root() const { return output_dir.empty() ? fs::path(default_output_dir()) : fs::path(output_dir); }
  // Relative output paths live under the output directory.
  fs::path out(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : out_root() / path;
  }
};

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::string params_hash(const json& params) { return hex64(fnv1a(params.dump())); }

std::optional<RunConfig> maybe_config(const Common& c) {
  if (c.config_path.empty()) return std::nullopt;
  RunConfig rc = load_run_config(c.config_path);
  return rc;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const std::uint64_t a = std::stoull(item.substr(0, dash));
        const std::uint64_t b = std::stoull(item.substr(dash + 1));
        if (b < a) throw ValidationError("descending seed range '" + item + "'");
        for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
      } else {
        out.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      throw ValidationError("bad seed list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty seed list");
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (std::uint64_t v : parse_seed_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

Dataset load_split(const std::string& path, Split split) {
  if (path.empty()) throw ValidationError("dataset path is empty");
  IngestOptions o;
  o.split = split;
  return ingest_dataset(path, o);
}

struct LoadedModel {
  CrossModalModel model;
  CheckpointInfo info;
  std::optional<CcaModel> cca;
};

LoadedModel load_model(const std::string& path) {
  const Checkpoint c = load_checkpoint(path);
  return {model_from_checkpoint(c), checkpoint_info(c), cca_from_checkpoint(c)};
}

json metrics_json(const Metrics& m) {
  return {{"rank@1", m.rank1}, {"rank@5", m.rank5}, {"rank@10", m.rank10},
          {"mAP", m.map},      {"medR", m.medr},    {"queries", m.queries}};
}

// ---------------------------------------------------------------- synth-gen

struct SynthOptions {
  std::string spec_path;
  std::string out = "data";
};

SyntheticSpec synthetic_spec_from_json(const json& j, int& train_ids, int& test_ids, int& aux_ids) {
  static const std::vector<std::string> keys = {
      "train_identities", "test_identities", "auxiliary_identities", "samples_per_identity_per_modality",
      "latent_dim",       "vision_dim",      "text_vocab",           "noise_sigma",
      "seed",             "view_count",      "pose_dim",             "levels",
      "distractor_rate",  "view_shift"};
  if (!j.is_object()) throw ValidationError("synthetic spec must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ValidationError("synthetic spec: unknown key '" + k + "'");
  }
  SyntheticSpec s;
  auto read = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
  };
  read("train_identities", train_ids);
  read("test_identities", test_ids);
  read("auxiliary_identities", aux_ids);
  read("samples_per_identity_per_modality", s.samples_per_identity_per_modality);
  read("latent_dim", s.latent_dim);
  read("vision_dim", s.vision_dim);
  read("text_vocab", s.text_vocab);
  read("noise_sigma", s.noise_sigma);
  read("seed", s.seed);
  read("view_count", s.view_count);
  read("pose_dim", s.pose_dim);
  read("levels", s.levels);
  read("distractor_rate", s.distractor_rate);
  read("view_shift", s.view_shift);
  return s;
}

int cmd_synth_gen(const Common& c, const SynthOptions& o) {
  json spec_json = json::object();
  if (!o.spec_path.empty()) {
    try {
      spec_json = json::parse(read_file(o.spec_path));
    } catch (const json::parse_error& e) {
      throw FormatError(o.spec_path + ": " + e.what());
    }
  }
  int train_ids = 200;
  int test_ids = 50;
  int aux_ids = 0;
  SyntheticSpec base;
  try {
    base = synthetic_spec_from_json(spec_json, train_ids, test_ids, aux_ids);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  const json params = {{"command", "synth-gen"}, {"spec", spec_json}};
  const std::string hash = params_hash(params);
  const fs::path dir = c.out(o.out);
  json manifest = {{"config_hash", hash}, {"spec", spec_json}, {"files", json::object()}};
  auto emit = [&](const char* name, int identities, int stream, Split split) {
    if (identities <= 0) return;
    SyntheticSpec s = base;
    s.identity_count = identities;
    s.identity_stream = stream;
    s.split = split;
    const Dataset d = generate_synthetic(s);
    const fs::path file = dir / (std::string(name) + ".jsonl");
    save_dataset(d, file);
    manifest["files"][name] = {{"path", file.filename().string()},
                               {"identities", d.identity_count()},
                               {"samples", d.size()},
                               {"split", std::string(to_string(split))}};
  };
  emit("train", train_ids, 0, Split::train);
  emit("test", test_ids, 1, Split::test);
  emit("auxiliary", aux_ids, 2, Split::train);
  write_json(dir / "manifest.json", manifest);
  std::cout << manifest.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- ingest

struct IngestCmd {
  std::string input;
  std::string split = "train";
  std::string out;
};

int cmd_ingest(const Common& c, const IngestCmd& o) {
  const Dataset d = load_split(o.input, parse_split(o.split));
  const json params = {{"command", "ingest"}, {"input", o.input}, {"split", o.split}};
  json r = {{"config_hash", params_hash(params)},
            {"split", o.split},
            {"samples", d.size()},
            {"vision", d.count(Modality::vision)},
            {"text", d.count(Modality::text)},
            {"identities", d.identity_count()},
            {"vision_dim", d.vision_dim()},
            {"warnings", d.report().warnings}};
  if (!o.out.empty()) {
    save_dataset(d, c.out(o.out));
    r["output"] = c.out(o.out).string();
  }
  std::cout << r.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- build-protocol

struct ProtocolCmd {
  std::string dataset;
  std::string mode = "across_pose";
  std::uint64_t seed = 1;
  std::string out = "protocol.json";
};

int cmd_build_protocol(const Common& c, const ProtocolCmd& o) {
  const Dataset d = load_split(o.dataset, Split::test);
  const RetrievalProtocol p = build_protocol(d, parse_protocol_mode(o.mode), o.seed);
  save_protocol(p, c.out(o.out));
  const json params = {{"command", "build-protocol"}, {"dataset", o.dataset}, {"mode", o.mode}, {"seed", o.seed}};
  std::cout << json{{"config_hash", params_hash(params)},
                    {"output", c.out(o.out).string()},
                    {"gallery", p.gallery.size()},
                    {"query", p.query.size()},
                    {"discarded_identities", p.discarded_identities}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainCmd {
  std::optional<int> strategy;
  std::string stages;
  std::string single_modality;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const Common& c, const TrainCmd& o) {
  auto loaded = maybe_config(c);
  if (!loaded) throw ValidationError("train needs --config");
  RunConfig rc = *loaded;
  if (o.strategy) rc.strategy = *o.strategy;
  if (!o.stages.empty()) rc.train.stages = parse_int_list(o.stages);
  if (o.seed) rc.train.seed = *o.seed;
  if (!c.output_dir.empty()) rc.output_dir = c.output_dir;
  rc.validate();
  const std::string hash = config_hash(rc);
  const fs::path dir = fs::path(rc.output_dir);

  const Dataset train_set = load_split(rc.resolve(rc.data.train).string(), Split::train);
  const Dictionary dict = dictionary_for(train_set, rc.text.min_count);
  const ModelSpec spec = model_spec_for(rc, static_cast<int>(train_set.vision_dim()), train_set.identity_count());
  write_file_atomic(dir / "config.json", run_config_to_json(rc));

  std::string log;
  auto log_epoch = [&](const EpochRecord& r) {
    json j = json::parse(epoch_record_json(r));
    j["config_hash"] = hash;
    log += j.dump() + "\n";
  };

  json summary = {{"config_hash", hash}, {"seed", rc.train.seed}, {"checkpoints", json::array()}};
  if (!o.single_modality.empty()) {
    const Modality branch = parse_modality(o.single_modality);
    TrainConfig cfg = rc.train;
    cfg.stages = {1};
    const CrossModalModel m = train_single_branch(train_set, dict, spec, cfg, branch);
    const fs::path path = dir / ("single_" + o.single_modality + ".ckpt");
    save_checkpoint(model_to_checkpoint(m, {hash, rc.train.seed, 1, cfg.epochs_for(0), 0}), path);
    summary["checkpoints"].push_back(path.filename().string());
    summary["single_modality"] = o.single_modality;
  } else {
    const StrategyPlan plan = apply_strategy(rc.strategy);
    InitSources init;
    std::optional<CrossModalModel> vision_task;
    std::optional<CrossModalModel> vision_aux;
    std::optional<CrossModalModel> language_task;
    if (plan.vision.init == InitSource::task_pretrained) {
      if (rc.init.vision_task.empty()) throw ValidationError("strategy needs init.vision_task");
      vision_task = model_from_checkpoint(load_checkpoint(rc.resolve(rc.init.vision_task)));
      init.vision_task = &vision_task->vision;
    }
    if (plan.vision.init == InitSource::auxiliary_pretrained) {
      if (!rc.init.vision_auxiliary.empty()) {
        vision_aux = model_from_checkpoint(load_checkpoint(rc.resolve(rc.init.vision_auxiliary)));
      } else if (!rc.data.auxiliary.empty()) {
        const Dataset aux = load_split(rc.resolve(rc.data.auxiliary).string(), Split::train);
        ModelSpec aspec = spec;
        aspec.identity_count = aux.identity_count();
        TrainConfig acfg = rc.train;
        int total = 0;
        for (std::size_t s = 0; s < rc.train.stages.size(); ++s) total += rc.train.epochs_for(s);
        acfg.stages = {1};
        acfg.stage_epochs = {total};
        acfg.stage_lr = {rc.train.lr_for(0)};
        vision_aux = train_single_branch(aux, dictionary_for(aux, rc.text.min_count), aspec, acfg, Modality::vision);
        save_checkpoint(model_to_checkpoint(*vision_aux, {hash, rc.train.seed, 0, total, 0}), dir / "auxiliary.ckpt");
        summary["checkpoints"].push_back("auxiliary.ckpt");
      } else {
        throw ValidationError("strategy needs init.vision_auxiliary or data.auxiliary");
      }
      init.vision_auxiliary = &vision_aux->vision;
    }
    if (plan.language.init == InitSource::task_pretrained) {
      if (rc.init.language_task.empty()) throw ValidationError("strategy needs init.language_task");
      language_task = model_from_checkpoint(load_checkpoint(rc.resolve(rc.init.language_task)));
      init.language_task = &*language_task;
    }
    const TrainingRun run = train(train_set, dict, spec, rc.train, plan, init);
    for (std::size_t s = 0; s < run.stages.size(); ++s) {
      const auto& st = run.stages[s];
      const std::string name = "stage" + std::to_string(st.stage) + ".ckpt";
      save_checkpoint(model_to_checkpoint(st.model, {hash, rc.train.seed, st.stage, rc.train.epochs_for(s), rc.strategy}),
                      dir / name);
      summary["checkpoints"].push_back(name);
    }
    for (const auto& r : run.log) log_epoch(r);
    if (!run.log.empty()) summary["final_total_loss"] = run.log.back().total;
    summary["strategy"] = rc.strategy;
  }
  write_file_atomic(dir / "epochs.jsonl", log);
  write_json(dir / "train_summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- fit-cca

struct FitCcaCmd {
  std::string checkpoint;
  std::string dataset;
  std::optional<double> regularization;
  int components = 0;
  std::string out = "model_cca.ckpt";
};

int cmd_fit_cca(const Common& c, const FitCcaCmd& o) {
  const auto rc = maybe_config(c);
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const CrossModalModel model = model_from_checkpoint(ck);
  std::string dataset = o.dataset;
  if (dataset.empty() && rc) dataset = rc->resolve(rc->data.train).string();
  const Dataset train_set = load_split(dataset, Split::train);
  CcaRegularization reg = rc ? cca_regularization(*rc) : CcaRegularization{};
  if (o.regularization) reg = CcaRegularization::both(*o.regularization);
  const int components = o.components > 0 ? o.components : (rc ? rc->cca.components : 0);
  const CcaModel cca = fit_cca_on_features(train_set, encode_dataset(model, train_set), reg, components);
  put_cca(ck, cca);
  save_checkpoint(ck, c.out(o.out));
  std::vector<double> rho(cca.correlations.data(), cca.correlations.data() + cca.correlations.size());
  std::cout << json{{"config_hash", checkpoint_info(ck).config_hash},
                    {"output", c.out(o.out).string()},
                    {"components", cca.components()},
                    {"correlations", rho}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- encode

struct EncodeCmd {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string out = "features.json";
};

int cmd_encode(const Common& c, const EncodeCmd& o) {
  const LoadedModel m = load_model(o.checkpoint);
  const Dataset d = load_split(o.dataset, parse_split(o.split));
  const FeatureTable f = encode_dataset(m.model, d);
  json rows = json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!f.present[i]) continue;
    const Vector v = f.row(i);
    rows.push_back({{"sample_id", d.sample(i).sample_id},
                    {"modality", std::string(to_string(d.sample(i).modality))},
                    {"feature", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  const json out = {{"config_hash", m.info.config_hash}, {"dim", f.dim()}, {"samples", rows}};
  write_json(c.out(o.out), out);
  std::cout << json{{"config_hash", m.info.config_hash}, {"output", c.out(o.out).string()}, {"samples", rows.size()}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- retrieve

struct RetrieveCmd {
  std::string checkpoint;
  std::string dataset;
  std::string protocol;
  std::string scenario = "LxV";
  std::string query;
  int top = 10;
  std::string out;
};

int cmd_retrieve(const Common& c, const RetrieveCmd& o) {
  const LoadedModel m = load_model(o.checkpoint);
  const Dataset d = load_split(o.dataset, Split::test);
  const RetrievalProtocol p = load_protocol(o.protocol);
  const Scenario sc = parse_scenario(o.scenario);
  const AssembledFeatures a =
      assemble_features(sc, resolve_protocol(p, d), encode_dataset(m.model, d), m.cca ? &*m.cca : nullptr);
  const std::size_t qi = d.index_of(o.query);
  const auto it = std::find(a.query_samples.begin(), a.query_samples.end(), qi);
  if (it == a.query_samples.end()) {
    throw ValidationError("'" + o.query + "' is not a " + o.scenario + " query of this protocol");
  }
  const auto row = static_cast<Eigen::Index>(it - a.query_samples.begin());
  const Matrix sims = similarity_matrix(a.query.row(row), a.gallery);
  const RankingResult r = rank_similarities(sims, std::vector<int>{a.query_labels[static_cast<std::size_t>(row)]},
                                            a.gallery_labels);
  json ranked = json::array();
  const auto& order = r.order[0];
  for (std::size_t k = 0; k < order.size() && static_cast<int>(k) < o.top; ++k) {
    const int g = order[k];
    const std::size_t gi = a.gallery_samples[static_cast<std::size_t>(g)];
    ranked.push_back({{"rank", k + 1},
                      {"sample_id", d.sample(gi).sample_id},
                      {"identity", d.identity_label(d.sample(gi).identity_id).name},
                      {"similarity", sims(0, g)},
                      {"match", a.gallery_labels[static_cast<std::size_t>(g)] == a.query_labels[static_cast<std::size_t>(row)]}});
  }
  const json out = {{"config_hash", m.info.config_hash},
                    {"scenario", o.scenario},
                    {"query", o.query},
                    {"first_match", r.first_match[0]},
                    {"ranking", ranked}};
  if (!o.out.empty()) write_json(c.out(o.out), out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateCmd {
  std::string checkpoint;
  std::string dataset;
  std::string protocol;
  std::string scenarios;
  std::string out = "reports";
};

int cmd_evaluate(const Common& c, const EvaluateCmd& o) {
  const auto rc = maybe_config(c);
  const LoadedModel m = load_model(o.checkpoint);
  std::string dataset = o.dataset;
  if (dataset.empty() && rc) dataset = rc->resolve(rc->data.test).string();
  const Dataset d = load_split(dataset, Split::test);
  RetrievalProtocol p;
  if (!o.protocol.empty()) {
    p = load_protocol(o.protocol);
  } else if (rc) {
    p = build_protocol(d, rc->protocol.mode, rc->protocol.seed);
  } else {
    throw ValidationError("evaluate needs --protocol or --config");
  }
  std::vector<Scenario> scenarios = all_scenarios();
  if (!o.scenarios.empty()) {
    scenarios = parse_scenarios(o.scenarios);
  } else if (rc) {
    scenarios = rc->scenarios;
  }
  const FeatureTable f = encode_dataset(m.model, d);
  const fs::path dir = c.out(o.out);
  std::string csv = report_csv_header() + "\n";
  json index = json::array();
  for (Scenario sc : scenarios) {
    ScenarioRun run = run_scenario(sc, d, p, f, m.cca ? &*m.cca : nullptr);
    run.report.config_hash = m.info.config_hash;
    run.report.seed = m.info.seed;
    const std::string name = "report_" + std::string(to_string(sc)) + ".json";
    write_file_atomic(dir / name, report_to_json(run.report));
    csv += report_csv_row(run.report) + "\n";
    index.push_back({{"scenario", std::string(to_string(sc))}, {"file", name}, {"metrics", metrics_json(run.report.metrics)}});
  }
  write_file_atomic(dir / "reports.csv", csv);
  const json summary = {{"config_hash", m.info.config_hash}, {"protocol_seed", p.seed},
                        {"protocol_mode", std::string(to_string(p.mode))}, {"reports", index}};
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- attr-sensitivity

struct AttrCmd {
  std::string dataset;
  std::string protocol;
  std::string checkpoint;
  std::string attributes;
  std::uint64_t attribute_seed = 1;
  int max_flips = 5;
  std::string seeds = "1-10";
  std::string out = "attribute_sensitivity.json";
};

int cmd_attr(const Common& c, const AttrCmd& o) {
  const Dataset d = load_split(o.dataset, Split::test);
  const RetrievalProtocol p = load_protocol(o.protocol);
  const AttributeSchema schema = market_attribute_schema();
  const AttributeTable attrs =
      o.attributes.empty() ? generate_attributes(d, schema, o.attribute_seed) : attributes_from_json(read_file(o.attributes));
  FeatureTable f;
  std::string hash;
  if (!o.checkpoint.empty()) {
    const LoadedModel m = load_model(o.checkpoint);
    f = encode_dataset(m.model, d);
    hash = m.info.config_hash;
  } else {
    f.values = Matrix::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.vision_dim()));
    f.present.assign(d.size(), false);
    for (std::size_t i : d.indices(Modality::vision)) {
      const auto& v = d.sample(i).vision;
      f.values.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      f.present[i] = true;
    }
    hash = params_hash({{"command", "attr-sensitivity"}, {"dataset", o.dataset}, {"protocol", o.protocol},
                        {"attributes", o.attributes}, {"attribute_seed", o.attribute_seed},
                        {"max_flips", o.max_flips}, {"seeds", o.seeds}});
  }
  if (o.max_flips < 0) throw ValidationError("--max-flips must be >= 0");
  const auto seeds = parse_seed_list(o.seeds);
  const auto curve = attribute_flip_experiment(resolve_protocol(p, d), d, f, attrs, schema,
                                               static_cast<std::size_t>(o.max_flips), seeds);
  json points = json::array();
  for (const auto& pt : curve) {
    json per_seed = json::array();
    for (const auto& m : pt.per_seed) per_seed.push_back(metrics_json(m));
    points.push_back({{"flips", pt.flips}, {"mean_rank@1", pt.mean_rank1}, {"mean_mAP", pt.mean_map}, {"per_seed", per_seed}});
  }
  const json out = {{"config_hash", hash}, {"seeds", seeds}, {"curve", points}};
  write_json(c.out(o.out), out);
  json brief = json::array();
  for (const auto& pt : curve) brief.push_back({{"flips", pt.flips}, {"mean_rank@1", pt.mean_rank1}});
  std::cout << json{{"config_hash", hash}, {"output", c.out(o.out).string()}, {"curve", brief}}.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradCmd {
  int vision_input = 32;
  std::uint64_t seed = 1;
  std::size_t max_checks = 2000;
  int batch = 4;
  std::string out = "gradcheck.json";
};

int cmd_gradcheck(const Common& c, const GradCmd& o) {
  const auto rc = maybe_config(c);
  RunConfig cfg = rc ? *rc : parse_run_config("{}");
  const ModelSpec spec = model_spec_for(cfg, o.vision_input, 2);
  const std::string hash = rc ? config_hash(*rc)
                              : params_hash({{"command", "gradcheck"}, {"vision_input", o.vision_input}, {"seed", o.seed}});
  Rng rng(o.seed);
  const Encoder vision(spec.vision_input, spec.vision_layers, rng);
  const Encoder language(spec.embed_dim, spec.language_layers, rng);
  GradientCheckOptions opt;
  opt.seed = o.seed;
  opt.max_checks = o.max_checks;

  auto gaussian = [&](Eigen::Index r, Eigen::Index k) {
    Matrix m(r, k);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  Activation vin;
  vin.values = gaussian(o.batch, spec.vision_input);
  Activation lin;
  lin.positions = spec.max_length;
  lin.values = gaussian(static_cast<Eigen::Index>(o.batch) * spec.max_length, spec.embed_dim);

  json results = json::array();
  bool passed = true;
  auto check = [&](const char* name, const Encoder& e, const Activation& in) {
    const GradientCheckReport r = gradient_check(e, in, opt);
    passed = passed && r.passed;
    results.push_back({{"encoder", name},
                       {"parameters", e.parameter_count()},
                       {"checked", r.checked},
                       {"max_relative_error", r.max_relative_error},
                       {"worst_entry", r.worst_entry},
                       {"passed", r.passed}});
  };
  check("vision", vision, vin);
  check("language", language, lin);
  const json out = {{"config_hash", hash}, {"step", opt.step}, {"tolerance", opt.tolerance}, {"results", results}};
  write_json(c.out(o.out), out);
  std::cout << out.dump(2) << "\n";
  return passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint vision-language person re-identification"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--output-dir", common.output_dir, "Output directory (default: $XMREID_OUTPUT_DIR or xmreid_out)");

  auto with_config = [&](CLI::App* sub, bool required = false) {
    auto* opt = sub->add_option("--config", common.config_path, "Run configuration (JSON)");
    if (required) opt->required();
    opt->check(CLI::ExistingFile);
  };

  SynthOptions synth;
  auto* s_synth = app.add_subcommand("synth-gen", "Generate synthetic train/test/auxiliary datasets");
  s_synth->add_option("--spec", synth.spec_path, "Synthetic spec (JSON)")->check(CLI::ExistingFile);
  s_synth->add_option("--out", synth.out, "Output directory for the dataset files");

  IngestCmd ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Validate a JSON-lines dataset");
  s_ingest->add_option("--input", ingest.input, "Dataset file")->required()->check(CLI::ExistingFile);
  s_ingest->add_option("--split", ingest.split, "train or test");
  s_ingest->add_option("--out", ingest.out, "Write the canonical dataset here");

  ProtocolCmd proto;
  auto* s_proto = app.add_subcommand("build-protocol", "Build a gallery/query retrieval protocol");
  s_proto->add_option("--dataset", proto.dataset, "Test dataset")->required()->check(CLI::ExistingFile);
  s_proto->add_option("--mode", proto.mode, "across_pose or within_pose");
  s_proto->add_option("--seed", proto.seed, "Protocol seed");
  s_proto->add_option("--out", proto.out, "Protocol file");

  TrainCmd trainc;
  auto* s_train = app.add_subcommand("train", "Train the joint model");
  with_config(s_train, true);
  s_train->add_option("--strategy", trainc.strategy, "Initialisation strategy 1..5");
  s_train->add_option("--stage", trainc.stages, "Stages to run, e.g. 1,2");
  s_train->add_option("--single-modality", trainc.single_modality, "Train one branch alone: vision or text");
  s_train->add_option("--seed", trainc.seed, "Training seed");

  FitCcaCmd cca;
  auto* s_cca = app.add_subcommand("fit-cca", "Fit CCA on training features and store it with the model");
  with_config(s_cca);
  s_cca->add_option("--checkpoint", cca.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  s_cca->add_option("--dataset", cca.dataset, "Training dataset (default: config data.train)");
  s_cca->add_option("--regularization", cca.regularization, "Ridge added to both covariances");
  s_cca->add_option("--components", cca.components, "Number of canonical components");
  s_cca->add_option("--out", cca.out, "Output checkpoint");

  EncodeCmd enc;
  auto* s_enc = app.add_subcommand("encode", "Dump eval-mode features for a dataset");
  s_enc->add_option("--checkpoint", enc.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  s_enc->add_option("--dataset", enc.dataset, "Dataset")->required()->check(CLI::ExistingFile);
  s_enc->add_option("--split", enc.split, "train or test");
  s_enc->add_option("--out", enc.out, "Feature file");

  RetrieveCmd ret;
  auto* s_ret = app.add_subcommand("retrieve", "Ranked gallery for one query sample");
  s_ret->add_option("--checkpoint", ret.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  s_ret->add_option("--dataset", ret.dataset, "Test dataset")->required()->check(CLI::ExistingFile);
  s_ret->add_option("--protocol", ret.protocol, "Protocol file")->required()->check(CLI::ExistingFile);
  s_ret->add_option("--scenario", ret.scenario, "VxV, LxL, LxV, VLxV or VLxVL");
  s_ret->add_option("--query", ret.query, "Query sample id")->required();
  s_ret->add_option("--top", ret.top, "Entries to list");
  s_ret->add_option("--out", ret.out, "Also write the ranking here");

  EvaluateCmd ev;
  auto* s_ev = app.add_subcommand("evaluate", "Evaluate retrieval scenarios");
  with_config(s_ev);
  s_ev->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  s_ev->add_option("--dataset", ev.dataset, "Test dataset (default: config data.test)");
  s_ev->add_option("--protocol", ev.protocol, "Protocol file (default: built from config)");
  s_ev->add_option("--scenarios", ev.scenarios, "Comma-separated scenario list");
  s_ev->add_option("--out", ev.out, "Report directory");

  AttrCmd attr;
  auto* s_attr = app.add_subcommand("attr-sensitivity", "Attribute-flip sensitivity curve");
  s_attr->add_option("--dataset", attr.dataset, "Test dataset")->required()->check(CLI::ExistingFile);
  s_attr->add_option("--protocol", attr.protocol, "Protocol file")->required()->check(CLI::ExistingFile);
  s_attr->add_option("--checkpoint", attr.checkpoint, "Model checkpoint (default: raw vision payloads)");
  s_attr->add_option("--attributes", attr.attributes, "Attribute file (default: generated)");
  s_attr->add_option("--attribute-seed", attr.attribute_seed, "Seed for generated attributes");
  s_attr->add_option("--max-flips", attr.max_flips, "Largest number of flipped attributes");
  s_attr->add_option("--seeds", attr.seeds, "Flip seeds, e.g. 1-10");
  s_attr->add_option("--out", attr.out, "Curve file");

  GradCmd grad;
  auto* s_grad = app.add_subcommand("gradcheck", "Finite-difference check of both encoders");
  with_config(s_grad);
  s_grad->add_option("--vision-input", grad.vision_input, "Vision input width");
  s_grad->add_option("--seed", grad.seed, "Seed for weights, inputs and projection");
  s_grad->add_option("--max-checks", grad.max_checks, "Entries checked per encoder (0 = all)");
  s_grad->add_option("--batch", grad.batch, "Batch size");
  s_grad->add_option("--out", grad.out, "Report file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s_synth) return cmd_synth_gen(common, synth);
    if (*s_ingest) return cmd_ingest(common, ingest);
    if (*s_proto) return cmd_build_protocol(common, proto);
    if (*s_train) return cmd_train(common, trainc);
    if (*s_cca) return cmd_fit_cca(common, cca);
    if (*s_enc) return cmd_encode(common, enc);
    if (*s_ret) return cmd_retrieve(common, ret);
    if (*s_ev) return cmd_evaluate(common, ev);
    if (*s_attr) return cmd_attr(common, attr);
    if (*s_grad) return cmd_gradcheck(common, grad);
  } catch (const std::exception& e) {
    std::cerr << "xmreid: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
