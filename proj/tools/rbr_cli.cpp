// rbr: command-line front end for representation-based distance regression.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rbr/rbr.hpp"

namespace {

using namespace rbr;

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> assignments;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "config file of key=value lines");
    app->add_option("-s,--set", assignments, "override a config key (key=value); repeatable");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& a : assignments) apply_assignment(cfg, a, "--set: ");
    return cfg;
  }
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

FeatureDataset read_any(const std::string& path) {
  if (!ends_with(path, ".csv")) return read_features(path);
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return read_features_csv(is, path);
}

void write_any(const FeatureDataset& ds, const std::string& path) {
  if (!ends_with(path, ".csv")) return write_features(ds, path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  write_features_csv(ds, os);
}

std::vector<DistancePair> read_pairs_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot open pairs file '" + path + "'");
  std::vector<DistancePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    DistancePair p;
    char comma = 0;
    std::istringstream ls(line);
    if (!(ls >> p.truth >> comma >> p.predicted) || comma != ',') {
      if (lineno == 1) continue;  // header
      throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(lineno) + ": expected truth,predicted");
    }
    pairs.push_back(p);
  }
  return pairs;
}

int cmd_build_dict(const ConfigArgs& ca, const std::string& out) {
  ExperimentConfig cfg = ca.load();
  if (cfg.data_path.empty()) throw Error(ErrorCode::Config, "build-dict needs data.path (or --data)");
  const FeatureDataset ds = read_any(cfg.data_path);
  SplitSpec split = cfg.split;
  split.seed = run_seed(cfg, 0);
  const Splits s = make_splits(ds, split);
  const std::size_t m = compressed_dim(ds.d, cfg.compression_ratio);
  const DictionaryBundle b = build_dictionary(s.dict, fit_pca(s.dict, m), cfg.lambda, cfg.split, cfg.blocks_per_row);
  save_bundle(b, out);
  std::printf("m=%zu n=%zu C=%zu P=%zu grid=%zux%zu block=%zux%zu lambda=%.6g\n", b.dict.m(), b.dict.n(),
              b.dict.classes, b.dict.per_class, b.layout.grid_rows, b.layout.grid_cols, b.layout.block_rows,
              b.layout.block_cols, b.dict.lambda);
  return 0;
}

int cmd_search_lambda(const ConfigArgs& ca, const std::string& method, std::size_t run) {
  ExperimentConfig cfg = ca.load();
  cfg.lambda_search = true;
  cfg.methods = {method};
  cfg.out_dir.clear();
  validate_config(cfg);
  FeatureDataset ds;
  if (!cfg.data_path.empty()) ds = read_any(cfg.data_path);
  const Splits s = splits_for_run(cfg, cfg.data_path.empty() ? nullptr : &ds, run);
  const RunOutcome ro = run_once(cfg, s, run, nullptr);
  const MethodOutcome& mo = ro.methods.front();
  if (!mo.ok) throw Error(mo.code, mo.error);
  std::printf("method=%s best_lambda=%.6g test_rmse=%.6f\n", method.c_str(), mo.lambda, mo.report.rmse);
  return 0;
}

int cmd_run(const ConfigArgs& ca) {
  ExperimentConfig cfg = ca.load();
  const ExperimentResult res = run_experiment(cfg, &std::cout);
  return res.exit_code;
}

int cmd_eval(const std::string& pairs_path, const std::string& model_path, const std::string& dict_path,
             const std::string& data_path, const std::string& label, const std::string& json_out) {
  std::vector<DistancePair> pairs;
  if (!pairs_path.empty()) {
    pairs = read_pairs_csv(pairs_path);
  } else {
    if (model_path.empty() || dict_path.empty() || data_path.empty())
      throw Error(ErrorCode::Config, "eval needs --pairs, or --model, --dict and --data");
    const CsenModel model = load_model(model_path);
    const DictionaryBundle bundle = load_bundle(dict_path);
    const FeatureDataset ds = read_any(data_path);
    const Vector pred = predict_batch(model, bundle, ds);
    for (std::size_t i = 0; i < ds.size(); ++i) pairs.push_back({ds.records[i].distance, pred[i]});
  }
  const EvalReport rep = evaluate(std::move(pairs));
  std::printf("%s\n%s\n", report_csv_header().c_str(), report_csv_row(label, rep).c_str());
  if (!json_out.empty()) {
    std::ofstream os(json_out, std::ios::binary);
    if (!os) throw Error(ErrorCode::Io, "cannot write '" + json_out + "'");
    os << report_json(label, rep).dump(1) << "\n";
  }
  return 0;
}

int cmd_synth(SynthSpec spec, const std::string& out, const std::string& prefix) {
  const SynthData data = synth_generate(spec);
  if (!out.empty()) write_any(data.all(), out);
  if (!prefix.empty()) {
    write_features(data.dict, prefix + "_dict.rbf1");
    write_features(data.train, prefix + "_train.rbf1");
    write_features(data.test, prefix + "_test.rbf1");
  }
  std::printf("records=%zu d=%zu classes=%zu\n", data.dict.size() + data.train.size() + data.test.size(), spec.d,
              spec.classes);
  return 0;
}

int cmd_convert(const std::string& in, const std::string& out) {
  const FeatureDataset ds = read_any(in);
  write_any(ds, out);
  std::printf("records=%zu d=%zu\n", ds.size(), ds.d);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"representation-based distance regression"};
  app.require_subcommand(1);

  ConfigArgs build_args, search_args, run_args;
  std::string dict_out = "dictionary.rbd", data_override;
  auto* build = app.add_subcommand("build-dict", "build and save a dictionary / denoiser / layout bundle");
  build_args.attach(build);
  build->add_option("--data", data_override, "RBF1 or CSV dataset");
  build->add_option("-o,--out", dict_out, "bundle path");

  std::string search_method = "csen";
  std::size_t search_run = 0;
  auto* search = app.add_subcommand("search-lambda", "coarse-to-fine λ search for one method");
  search_args.attach(search);
  search->add_option("-m,--method", search_method, "method name");
  search->add_option("--run", search_run, "run index whose split is searched");

  auto* run = app.add_subcommand("run", "multi-run experiment with per-run reports and a mean/std summary");
  run_args.attach(run);

  std::string pairs_path, model_path, bundle_path, data_path, label = "model", json_out;
  auto* eval = app.add_subcommand("eval", "evaluate a saved model or a truth,predicted CSV");
  eval->add_option("--pairs", pairs_path, "CSV of truth,predicted rows");
  eval->add_option("--model", model_path, "RBM1 model file");
  eval->add_option("--dict", bundle_path, "RBD1 bundle the model was trained with");
  eval->add_option("--data", data_path, "test dataset");
  eval->add_option("--label", label, "method label for the report row");
  eval->add_option("--json", json_out, "also write the report with all pairs as JSON");

  SynthSpec spec;
  std::string synth_out, synth_prefix;
  auto* synth = app.add_subcommand("synth", "generate a synthetic class-template dataset");
  synth->add_option("-o,--out", synth_out, "combined dataset (RBF1, or CSV by extension)");
  synth->add_option("--split-prefix", synth_prefix, "also write <prefix>_{dict,train,test}.rbf1");
  synth->add_option("--seed", spec.seed);
  synth->add_option("--classes", spec.classes);
  synth->add_option("--dict-per-class", spec.dict_per_class);
  synth->add_option("--train-per-class", spec.train_per_class);
  synth->add_option("--test-per-class", spec.test_per_class);
  synth->add_option("-d,--dim", spec.d);
  synth->add_option("--sigma", spec.noise_sigma);
  synth->add_option("--jitter", spec.jitter, "within-bin distance jitter in [0, 1]");

  std::string conv_in, conv_out;
  auto* convert = app.add_subcommand("convert", "convert between RBF1 and CSV (chosen by file extension)");
  convert->add_option("-i,--in", conv_in)->required();
  convert->add_option("-o,--out", conv_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (build->parsed()) {
      if (!data_override.empty()) build_args.assignments.insert(build_args.assignments.begin(), "data.path=" + data_override);
      return cmd_build_dict(build_args, dict_out);
    }
    if (search->parsed()) return cmd_search_lambda(search_args, search_method, search_run);
    if (run->parsed()) return cmd_run(run_args);
    if (eval->parsed()) return cmd_eval(pairs_path, model_path, bundle_path, data_path, label, json_out);
    if (synth->parsed()) {
      if (synth_out.empty() && synth_prefix.empty()) throw Error(ErrorCode::Config, "synth needs --out or --split-prefix");
      return cmd_synth(spec, synth_out, synth_prefix);
    }
    if (convert->parsed()) return cmd_convert(conv_in, conv_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
