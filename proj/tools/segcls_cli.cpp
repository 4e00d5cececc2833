// segcls: segment-based audio classification workbench.
//
//   segcls synth      generate a class-separable WAV corpus + manifest
//   segcls featurize  WAV manifest -> per-segment LMEL files + norm stats
//   segcls inspect    shape trace and parameter count of a model spec
//   segcls train      mini-batch Adam training with validation + lr decay
//   segcls evaluate   segment scoring, sample averaging, AUC / accuracy

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "segcls/error.hpp"
#include "segcls/features.hpp"
#include "segcls/manifest.hpp"
#include "segcls/modelspec.hpp"
#include "segcls/network.hpp"
#include "segcls/pipeline.hpp"
#include "segcls/synth.hpp"
#include "segcls/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segcls;

namespace {

/// Lets `--config file.json` feed CLI11: top-level keys set global options,
/// nested objects ({"train": {...}}) set that subcommand's options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const auto name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? json(res.front()) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else if (value.is_boolean()) {
        item.inputs.push_back(value.get<bool>() ? "true" : "false");
      } else {
        item.inputs.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string precision = "f32";
};

model::ModelSpec resolve_model(const std::string& ref) {
  if (ref.ends_with(".json") || fs::exists(ref)) {
    std::ifstream is(ref);
    if (!is) throw UsageError("cannot read model spec " + ref);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw UsageError("model spec " + ref + " is not valid JSON: " + e.what());
    }
    return model::model_from_json(j);
  }
  return model::catalog(ref);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n_clips = 60;
  std::size_t n_classes = 8;
  double seconds = 10.0;
  bool single_label = false;
  std::string prefix = "synth";
  std::string out;
};

int run_synth(const SynthArgs& a, const Globals& g) {
  synth::Options opt;
  opt.n_clips = a.n_clips;
  opt.n_classes = a.n_classes;
  opt.seed = g.seed;
  opt.clip_seconds = a.seconds;
  opt.single_label = a.single_label;
  opt.id_prefix = a.prefix;
  const auto m = synth::generate(opt, a.out);
  std::cout << "wrote " << m.rows.size() << " clips, " << m.classes.size() << " classes to " << a.out << "\n";
  return 0;
}

struct FeaturizeArgs {
  std::string manifest;
  std::string classes;
  std::string out;
  bool no_fit_norm = false;
  unsigned threads = 0;
};

int run_featurize(const FeaturizeArgs& a, const Globals& g) {
  const auto m = manifest::load(a.manifest, a.classes);
  pipeline::FeaturizeOptions opt;
  opt.fit_norm = !a.no_fit_norm;
  opt.threads = g.deterministic ? 1 : (a.threads ? a.threads : std::max(1u, std::thread::hardware_concurrency()));
  const auto r = pipeline::featurize(m, a.out, opt);
  json report{{"clips", r.clips}, {"segments", r.segments}, {"skipped", json::array()}};
  for (const auto& s : r.skipped) {
    std::cerr << "skipped " << s.clip_id << ": " << s.reason << "\n";
    report["skipped"].push_back({{"clip_id", s.clip_id}, {"reason", s.reason}});
  }
  write_text(fs::path(a.out) / "featurize_report.json", report.dump(2) + "\n");
  std::cout << "featurized " << r.clips << " clips (" << r.segments << " segments), skipped " << r.skipped.size()
            << "\n";
  return r.skipped.empty() ? 0 : static_cast<int>(ExitCode::kData);
}

struct InspectArgs {
  std::string model;
  std::string reduce = "none";
  bool json_out = false;
  std::string out;
};

int run_inspect(const InspectArgs& a) {
  const auto reduction = model::Reduction::parse(a.reduce);
  auto spec = model::apply_reduction(resolve_model(a.model), reduction);
  auto report = model::count_params(spec);
  if (reduction.kind == model::Reduction::Kind::kNone) report.note = model::catalog_note(a.model);
  const std::string text = a.json_out ? model::to_json(report).dump(2) + "\n" : model::to_text(report);
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << text;
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string classes;
  std::string features;
  std::string norm;
  std::string model = "toy-gap-cnn";
  std::string reduce = "none";
  std::string mode = "multi_label";
  std::string out;
  std::size_t max_epochs = 200;
  double val_fraction = 0.1;
  bool quiet = false;
  train::OptimizerConfig opt;
  train::DecaySchedule schedule;
};

json optimizer_json(const train::OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"batch_size", o.batch_size}, {"beta1", o.beta1},
          {"beta2", o.beta2},                 {"adam_eps", o.adam_eps},     {"weight_decay", o.weight_decay},
          {"dropout_p", o.dropout_p}};
}

template <typename T>
int train_with(const TrainArgs& a, const Globals& g, const model::ModelSpec& spec, const manifest::Manifest& m,
               train::TaskMode mode, const std::string& norm_path) {
  const auto norm = features::load_lnrm(norm_path);
  const auto all = pipeline::load_dataset<T>(m, a.features, norm);
  if (all.example_dims != spec.input_shape) {
    throw UsageError("model input " + model::shape_string(spec.input_shape) + " does not match features " +
                     model::shape_string(all.example_dims));
  }
  auto [tr_idx, val_idx] = train::split_validation(all.samples(), a.val_fraction, g.seed);
  const auto tr = all.subset(tr_idx);
  const auto val = all.subset(val_idx);

  nn::Network<T> net(spec, g.seed);
  train::FitOptions fo;
  fo.optimizer = a.opt;
  fo.schedule = a.schedule;
  fo.max_epochs = a.max_epochs;
  fo.seed = g.seed;
  fo.mode = mode;
  std::ofstream history(fs::path(a.out) / "history.jsonl", std::ios::binary);
  if (!history) throw DataError("cannot write history in " + a.out);
  fo.on_epoch = [&](const train::EpochRecord& r) {
    history << train::to_json(r).dump() << "\n";
    history.flush();
    if (!a.quiet) {
      std::fprintf(stderr, "epoch %3zu  lr %.2e  loss %.5f  val %.5f  best %.5f  %.2fs\n", r.epoch, r.lr,
                   r.train_loss, r.val_metric, r.best_val, r.seconds);
    }
  };
  const auto result = train::fit(net, tr, val, fo);
  nn::save_checkpoint((fs::path(a.out) / "checkpoint.ssck").string(), result.best_state);
  std::cout << "trained " << result.history.size() << " epochs on " << tr.samples() << " clips (" << tr.segments()
            << " segments), validation " << val.samples() << " clips";
  if (!result.history.empty()) std::cout << ", best validation " << result.history.back().best_val;
  std::cout << (result.early_stopped ? " (early stop)" : "") << "\n";
  return 0;
}

int run_train(const TrainArgs& a, const Globals& g) {
  const auto mode = train::parse_mode(a.mode);
  a.opt.validate();
  a.schedule.validate();
  const auto m = manifest::load(a.manifest, a.classes);
  pipeline::check_mode_labels(m, mode);

  auto spec = resolve_model(a.model);
  const bool from_file = a.model.ends_with(".json") || fs::exists(a.model);
  if (from_file) {
    model::infer_shapes(spec);
    const auto& out = std::get<model::Output>(spec.layers.back());
    if (out.activation != train::activation_for(mode)) {
      throw UsageError("model output uses " + model::activation_name(out.activation) + " but mode " + a.mode +
                       " needs " + model::activation_name(train::activation_for(mode)));
    }
  }
  spec = model::apply_reduction(spec, model::Reduction::parse(a.reduce));
  spec = model::with_output(spec, m.class_count(), train::activation_for(mode));
  spec = train::with_dropout(spec, a.opt.dropout_p);
  model::infer_shapes(spec);

  fs::create_directories(a.out);
  const std::string norm_path = a.norm.empty() ? (fs::path(a.features) / pipeline::kNormFile).string() : a.norm;
  json resolved{{"model", model::to_json(spec)},
                {"mode", a.mode},
                {"optimizer", optimizer_json(a.opt)},
                {"schedule", {{"factor", a.schedule.factor}, {"patience", a.schedule.patience}}},
                {"max_epochs", a.max_epochs},
                {"val_fraction", a.val_fraction},
                {"seed", g.seed},
                {"deterministic", g.deterministic},
                {"precision", g.precision},
                {"manifest", fs::absolute(a.manifest).string()},
                {"features", fs::absolute(a.features).string()},
                {"norm", fs::absolute(norm_path).string()},
                {"checkpoint", "checkpoint.ssck"}};
  write_text(fs::path(a.out) / "run_config.json", resolved.dump(2) + "\n");

  if (g.precision == "f64") return train_with<double>(a, g, spec, m, mode, norm_path);
  return train_with<float>(a, g, spec, m, mode, norm_path);
}

struct EvaluateArgs {
  std::string run;
  std::string checkpoint;
  std::string model;
  std::string manifest;
  std::string classes;
  std::string features;
  std::string norm;
  std::string mode;
  std::string out;
};

template <typename T>
int evaluate_with(const model::ModelSpec& spec, const std::string& checkpoint, const manifest::Manifest& m,
                  const std::string& features_dir, const std::string& norm_path, train::TaskMode mode,
                  const std::string& out) {
  nn::Network<T> net(spec, 0);
  net.load_state(nn::load_checkpoint(checkpoint));
  const auto data = pipeline::load_dataset<T>(m, features_dir, features::load_lnrm(norm_path));
  const auto report = pipeline::evaluate(net, data, mode);
  if (!out.empty()) write_text(out, pipeline::to_json(report).dump(2) + "\n");
  if (report.auc) {
    std::vector<std::string> names;
    for (const auto& c : m.classes) names.push_back(c.display_name);
    std::cout << eval::to_text(*report.auc, names);
  } else {
    std::printf("accuracy %.4f over %zu samples\n", *report.accuracy, report.samples);
  }
  return 0;
}

int run_evaluate(const EvaluateArgs& a, const Globals& g) {
  json run;
  if (!a.run.empty()) run = read_json(fs::path(a.run) / "run_config.json");
  model::ModelSpec spec;
  if (!a.model.empty()) {
    spec = resolve_model(a.model);
  } else if (run.contains("model")) {
    spec = model::model_from_json(run["model"]);
  } else {
    throw UsageError("evaluate needs --run or --model");
  }
  std::string checkpoint = a.checkpoint;
  if (checkpoint.empty() && !a.run.empty()) checkpoint = (fs::path(a.run) / "checkpoint.ssck").string();
  if (checkpoint.empty()) throw UsageError("evaluate needs --checkpoint or --run");
  const std::string mode_str = !a.mode.empty() ? a.mode : run.value("mode", std::string("multi_label"));
  const auto mode = train::parse_mode(mode_str);
  const auto& out_layer = std::get<model::Output>(spec.layers.back());
  if (out_layer.activation != train::activation_for(mode)) {
    throw UsageError("model output uses " + model::activation_name(out_layer.activation) + " but mode " +
                     mode_str + " was requested");
  }
  const auto m = manifest::load(a.manifest, a.classes);
  pipeline::check_mode_labels(m, mode);
  if (out_layer.classes != m.class_count()) {
    throw UsageError("model predicts " + std::to_string(out_layer.classes) + " classes, manifest has " +
                     std::to_string(m.class_count()));
  }
  const std::string features_dir = a.features.empty() ? run.value("features", std::string()) : a.features;
  if (features_dir.empty()) throw UsageError("evaluate needs --features");
  std::string norm_path = a.norm;
  if (norm_path.empty()) norm_path = run.value("norm", (fs::path(features_dir) / pipeline::kNormFile).string());

  if (g.precision == "f64") return evaluate_with<double>(spec, checkpoint, m, features_dir, norm_path, mode, a.out);
  return evaluate_with<float>(spec, checkpoint, m, features_dir, norm_path, mode, a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-based audio classification workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values (nested objects per subcommand)");

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "Serial featurization and fixed reduction order");
  app.add_option("--precision", g.precision, "Training/evaluation precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-label WAV corpus");
  synth_cmd->add_option("--n-clips", sa.n_clips, "Number of clips")->capture_default_str();
  synth_cmd->add_option("--n-classes", sa.n_classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--seconds", sa.seconds, "Clip length")->capture_default_str();
  synth_cmd->add_option("--prefix", sa.prefix, "Clip id prefix")->capture_default_str();
  synth_cmd->add_flag("--single-label", sa.single_label, "Exactly one class per clip");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();

  FeaturizeArgs fa;
  auto* feat_cmd = app.add_subcommand("featurize", "Segment clips and write 64-band log-mel features");
  feat_cmd->add_option("--manifest", fa.manifest, "manifest.csv")->required();
  feat_cmd->add_option("--classes", fa.classes, "Class map (default: classes.csv beside the manifest)");
  feat_cmd->add_option("--out", fa.out, "Output directory")->required();
  feat_cmd->add_flag("--no-fit-norm", fa.no_fit_norm, "Do not fit norm.lnrm (use for evaluation sets)");
  feat_cmd->add_option("--threads", fa.threads, "Worker threads (0 = all cores)")->capture_default_str();

  InspectArgs ia;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print shape trace and parameter counts");
  inspect_cmd->add_option("model", ia.model, "Catalog name or model-spec JSON path")->required();
  inspect_cmd->add_option("--reduce", ia.reduce,
                          "none | bneck-final-K | bneck-mid-K | fc-K | global-avg-pool")
      ->capture_default_str();
  inspect_cmd->add_flag("--json", ia.json_out, "Emit the report as JSON");
  inspect_cmd->add_option("--out", ia.out, "Also write the report to this file");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on featurized segments");
  train_cmd->add_option("--manifest", ta.manifest, "Training manifest.csv")->required();
  train_cmd->add_option("--classes", ta.classes, "Class map");
  train_cmd->add_option("--features", ta.features, "Features directory")->required();
  train_cmd->add_option("--norm", ta.norm, "Normaliser (default: <features>/norm.lnrm)");
  train_cmd->add_option("--model", ta.model, "Catalog name or model-spec JSON")->capture_default_str();
  train_cmd->add_option("--reduce", ta.reduce, "Complexity reduction to apply")->capture_default_str();
  train_cmd->add_option("--mode", ta.mode, "multi_label | single_label")
      ->check(CLI::IsMember({"multi_label", "single_label"}))
      ->capture_default_str();
  train_cmd->add_option("--out", ta.out, "Run directory")->required();
  train_cmd->add_option("--max-epochs", ta.max_epochs, "Epoch budget")->capture_default_str();
  train_cmd->add_option("--val-fraction", ta.val_fraction, "Validation share of clips")->capture_default_str();
  train_cmd->add_option("--lr", ta.opt.learning_rate, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", ta.opt.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--beta1", ta.opt.beta1, "Adam beta1")->capture_default_str();
  train_cmd->add_option("--beta2", ta.opt.beta2, "Adam beta2")->capture_default_str();
  train_cmd->add_option("--weight-decay", ta.opt.weight_decay, "Decoupled weight decay")->capture_default_str();
  train_cmd->add_option("--dropout", ta.opt.dropout_p, "Dropout probability")->capture_default_str();
  train_cmd->add_option("--decay-factor", ta.schedule.factor, "LR multiplier on plateau")->capture_default_str();
  train_cmd->add_option("--patience", ta.schedule.patience, "Epochs without improvement before decay")
      ->capture_default_str();
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch progress on stderr");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score segments, average per clip, report AUC or accuracy");
  eval_cmd->add_option("--run", ea.run, "Run directory written by train");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint (default: <run>/checkpoint.ssck)");
  eval_cmd->add_option("--model", ea.model, "Model spec (default: from <run>/run_config.json)");
  eval_cmd->add_option("--manifest", ea.manifest, "Evaluation manifest.csv")->required();
  eval_cmd->add_option("--classes", ea.classes, "Class map");
  eval_cmd->add_option("--features", ea.features, "Features directory (default: from run config)");
  eval_cmd->add_option("--norm", ea.norm, "Normaliser (default: from run config)");
  eval_cmd->add_option("--mode", ea.mode, "multi_label | single_label (default: from run config)");
  eval_cmd->add_option("--out", ea.out, "Write the metric report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*synth_cmd) return run_synth(sa, g);
    if (*feat_cmd) return run_featurize(fa, g);
    if (*inspect_cmd) return run_inspect(ia);
    if (*train_cmd) return run_train(ta, g);
    if (*eval_cmd) return run_evaluate(ea, g);
  } catch (const segcls::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return static_cast<int>(ExitCode::kUsage);
}
