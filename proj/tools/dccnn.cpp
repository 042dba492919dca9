// Command-line front end: train / eval / predict / verify.
//
// Exit codes: 0 success, 1 usage or data error, 2 verification failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dccnn/dccnn.hpp"

namespace {

using json = nlohmann::json;
using namespace dccnn;

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

struct DataFlags {
  std::string data_path;
  std::string labels_path;
  bool csv = false;
  std::vector<int> classes;  // binary filter: two raw label values
  int n_train = 0;
  int n_test = 0;
  int downsample = 0;
  std::uint64_t seed = 1;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool need_labels) {
  cmd->add_option("--data", f.data_path, "input file (IDX images or CSV)")
      ->required();
  auto* lab = cmd->add_option("--labels", f.labels_path,
                              "IDX label file (unused for CSV)");
  if (need_labels) lab->needs("--data");
  cmd->add_flag("--csv", f.csv, "treat --data as CSV (label,features...)");
  cmd->add_option("--classes", f.classes,
                  "two raw label values mapped to +1/-1")
      ->expected(2);
  cmd->add_option("--n-train", f.n_train, "training samples to draw");
  cmd->add_option("--n-test", f.n_test, "test samples to draw");
  cmd->add_option("--downsample", f.downsample,
                  "2x2 average-downsampling passes");
  cmd->add_option("--seed", f.seed, "shuffle/split seed");
}

Dataset load_dataset(const DataFlags& f) {
  if (!std::ifstream(f.data_path).good())
    throw InvalidInput("--data: cannot open " + f.data_path);
  Dataset ds;
  if (f.csv) {
    ds = load_csv(f.data_path);
  } else {
    if (f.labels_path.empty())
      throw InvalidInput("--labels is required for IDX data");
    if (!std::ifstream(f.labels_path).good())
      throw InvalidInput("--labels: cannot open " + f.labels_path);
    ds = load_idx(f.data_path, f.labels_path);
  }
  for (int pass = 0; pass < f.downsample; ++pass) ds = downsample_2x2(ds);
  return ds;
}

/// Binary prep: optional class filter + split; labels become +-1.
struct PreppedBinary {
  Dataset train;
  Dataset test;
};

PreppedBinary prep_binary(const Dataset& ds, const DataFlags& f) {
  if (!f.classes.empty()) {
    const BinarySplit split = filter_binary(ds, f.classes[0], f.classes[1],
                                            f.n_train, f.n_test, f.seed);
    return {split.train, split.test};
  }
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    if (ds.labels[i] != 1 && ds.labels[i] != -1)
      throw InvalidInput(
          "labels must be +-1 when --classes is not given (row " +
          std::to_string(i) + " has " + std::to_string(ds.labels[i]) + ")");
  return {ds, Dataset{}};
}

/// Multiclass labels must be contiguous, 0- or 1-based; both train and eval
/// apply the same shift so no mapping needs to travel with the model.
Eigen::VectorXi remap_multiclass_labels(const Eigen::VectorXi& raw, int m) {
  const int shift = raw.minCoeff() == 0 ? 1 : 0;
  Eigen::VectorXi mapped = raw.array() + shift;
  for (Eigen::Index i = 0; i < mapped.size(); ++i)
    if (mapped[i] < 1 || mapped[i] > m)
      throw InvalidInput(
          "multiclass labels must lie in [0, m) or [1, m]; row " +
          std::to_string(i) + " has " + std::to_string(raw[i]) +
          " with --task-classes " + std::to_string(m));
  return mapped;
}

std::vector<LayerSpec> parse_layers(const std::string& layers_spec,
                                    const std::string& pool_spec) {
  std::vector<LayerSpec> layers;
  std::stringstream ss(layers_spec);
  std::string part;
  while (std::getline(ss, part, ';')) {
    LayerSpec layer;
    if (std::sscanf(part.c_str(), "%d,%d,%d", &layer.filter_width,
                    &layer.stride, &layer.padding) != 3)
      throw InvalidInput("--layers-spec: expected 'filter,stride,padding' "
                         "per layer, got '" + part + "'");
    layers.push_back(layer);
  }
  if (layers.empty()) throw InvalidInput("--layers-spec: no layers given");
  if (!pool_spec.empty()) {
    std::stringstream ps(pool_spec);
    std::size_t idx = 0;
    while (std::getline(ps, part, ';') && idx < layers.size()) {
      if (part != "none" && !part.empty()) {
        PoolingDescriptor pd;
        if (std::sscanf(part.c_str(), "%d:%d", &pd.pool_width,
                        &pd.pool_stride) != 2)
          throw InvalidInput("--pool: expected 'width:stride' or 'none', "
                             "got '" + part + "'");
        layers[idx].pooling = pd;
      }
      ++idx;
    }
  }
  return layers;
}

/// Median-heuristic bandwidth: 1 / median squared distance over random patch
/// pairs of the first layer.
double median_gamma(const Matrix& inputs, const PatchGeometry& geom,
                    std::uint64_t seed) {
  SplitMix64 rng(seed ^ 0x6d656469616eULL);
  std::vector<PatchMatrix> patches(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i)
    patches[static_cast<std::size_t>(i)] =
        normalize_patches(extract_patches(inputs.row(i).transpose(), geom));
  std::vector<double> d2;
  d2.reserve(1000);
  const auto n = static_cast<std::uint64_t>(inputs.rows());
  const auto p = static_cast<std::uint64_t>(geom.patch_count());
  for (int t = 0; t < 1000; ++t) {
    const auto i = rng.below(n), j = rng.below(n);
    const auto a = rng.below(p), b = rng.below(p);
    const double d =
        (patches[i].entries.col(static_cast<Eigen::Index>(a)) -
         patches[j].entries.col(static_cast<Eigen::Index>(b)))
            .squaredNorm();
    if (d > 1e-12) d2.push_back(d);
  }
  if (d2.empty()) return 1.0;
  std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
  const double med = d2[d2.size() / 2];
  return 1.0 / med;
}

KernelSpec make_kernel(const std::string& kind, double gamma, int degree,
                       double offset) {
  if (kind == "gaussian") return KernelSpec::gaussian(gamma);
  if (kind == "linear") return KernelSpec::linear();
  if (kind == "polynomial") return KernelSpec::polynomial(degree, offset);
  throw InvalidInput("--kernel must be gaussian, linear, or polynomial");
}

LossSpec make_loss(const std::string& kind) {
  for (LossKind k : {LossKind::hinge, LossKind::squared_hinge,
                     LossKind::logistic, LossKind::exponential})
    if (kind == loss_name(k)) return LossSpec{k};
  throw InvalidInput("--loss must be hinge, squared_hinge, logistic, or "
                     "exponential");
}

int cmd_train(const DataFlags& dflags, const std::string& kernel_kind,
              std::optional<double> gamma, int degree, double offset,
              const std::string& loss_kind, double c,
              const std::string& layers_spec, const std::string& pool_spec,
              double threshold, int sweeps, int polish, int task_classes,
              const std::string& out_path, const std::string& report_path) {
  const auto start = std::chrono::steady_clock::now();
  if (!(c > 0)) throw InvalidInput("--c must be positive");
  if (!(threshold > 0.0) || threshold > 1.0)
    throw InvalidInput("--threshold must be in (0, 1]");
  if (sweeps < 1) throw InvalidInput("--sweeps must be >= 1");

  Dataset raw = load_dataset(dflags);
  Matrix inputs;
  Eigen::VectorXi labels;
  int class_count = 0;
  if (task_classes >= 2) {
    inputs = raw.inputs;
    labels = remap_multiclass_labels(raw.labels, task_classes);
    class_count = task_classes;
  } else {
    const PreppedBinary prep = prep_binary(raw, dflags);
    inputs = prep.train.inputs;
    labels = prep.train.labels;
    raw.height = prep.train.height;
    raw.width = prep.train.width;
    raw.channels = prep.train.channels;
  }
  if (inputs.rows() == 0) throw EmptyDataset("no training samples after prep");

  TrainConfig config;
  config.layers = parse_layers(layers_spec, pool_spec);
  config.loss = make_loss(loss_kind);
  config.c = c;
  config.threshold = threshold;
  config.solver.sweeps = sweeps;
  config.solver.polish_iters = polish;
  config.class_count = class_count;

  double gamma_used = gamma.value_or(0.0);
  if (kernel_kind == "gaussian" && !gamma) {
    const PatchGeometry g1{raw.height, raw.width, raw.channels,
                           config.layers[0].filter_width,
                           config.layers[0].stride, config.layers[0].padding};
    g1.validate();
    gamma_used = median_gamma(inputs, g1, dflags.seed);
    std::cout << "gamma (median heuristic): " << gamma_used << "\n";
  }
  config.kernel = make_kernel(kernel_kind, gamma_used, degree, offset);

  const Model model = train_layerwise(inputs, labels, raw.height, raw.width,
                                      raw.channels, config);
  save_model(model, out_path);

  json report;
  report["command"] = "train";
  report["kernel"] = kernel_kind;
  report["gamma"] = gamma_used;
  report["loss"] = loss_kind;
  report["c"] = c;
  report["threshold"] = threshold;
  report["sweeps"] = sweeps;
  report["seed"] = dflags.seed;
  report["n_train"] = inputs.rows();
  report["model"] = out_path;
  report["layers"] = json::array();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerModel& layer = model.layers[l];
    json jl;
    jl["rank"] = layer.linear_weight.rank();
    jl["final_lambda_max"] = layer.dual.final_lambda_max;
    jl["dual_objective"] = layer.dual.objective;
    jl["patch_count"] = layer.geometry.patch_count();
    jl["near_misses"] = layer.linear_weight.near_misses.size();
    report["layers"].push_back(jl);
    std::cout << "layer " << (l + 1) << ": rank r = "
              << layer.linear_weight.rank()
              << ", lambda_max = " << layer.dual.final_lambda_max
              << ", dual objective = " << layer.dual.objective << "\n";
  }
  report["wall_ms"] = elapsed_ms(start);
  std::cout << "model written to " << out_path << " ("
            << report["wall_ms"].get<double>() << " ms)\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const DataFlags& dflags,
             double c_reported, const std::string& report_path,
             const std::string& dataset_name) {
  const auto start = std::chrono::steady_clock::now();
  const Model model = load_model(model_path);
  Dataset raw = load_dataset(dflags);

  Matrix inputs;
  Eigen::VectorXi labels;
  if (model.is_multiclass()) {
    inputs = raw.inputs;
    labels = remap_multiclass_labels(raw.labels, model.class_count);
  } else {
    const PreppedBinary prep = prep_binary(raw, dflags);
    const Dataset& use = prep.test.size() > 0 ? prep.test : prep.train;
    inputs = use.inputs;
    labels = use.labels;
  }
  if (inputs.rows() == 0) throw EmptyDataset("no evaluation samples");
  if (inputs.cols() != model.layers.front().geometry.input_size())
    throw InvalidInput(
        "input length " + std::to_string(inputs.cols()) +
        " does not match the model's layer-1 geometry (" +
        std::to_string(model.layers.front().geometry.input_size()) + ")");

  const Eigen::VectorXi pred = predict_batch(model, inputs);
  Eigen::Index correct = 0;
  std::map<std::pair<int, int>, int> confusion;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++correct;
    ++confusion[{labels[i], pred[i]}];
  }
  const double accuracy = static_cast<double>(correct) / pred.size();
  const double wall = elapsed_ms(start);

  std::cout << "accuracy: " << accuracy << " (" << correct << "/"
            << pred.size() << ")\n";
  for (const auto& [key, count] : confusion)
    std::cout << "  true " << key.first << " -> predicted " << key.second
              << ": " << count << "\n";

  if (!report_path.empty()) {
    const bool fresh = !std::ifstream(report_path).good();
    std::ofstream out(report_path, std::ios::app);
    if (fresh)
      out << "dataset,layers,kernel,gamma,c,threshold,rank,accuracy,wall_ms\n";
    const LayerModel& last = model.layers.back();
    const char* kname = last.kernel.kind == KernelKind::gaussian_rbf
                            ? "gaussian"
                            : (last.kernel.kind == KernelKind::linear
                                   ? "linear"
                                   : "polynomial");
    double c_out = c_reported;
    if (!(c_out > 0)) c_out = model.layers.front().dual.alpha.maxCoeff();
    out << dataset_name << "," << model.depth() << "," << kname << ","
        << (last.kernel.kind == KernelKind::gaussian_rbf ? last.kernel.gamma
                                                         : 0.0)
        << "," << c_out << "," << last.linear_weight.threshold_used << ","
        << last.linear_weight.rank() << "," << accuracy << "," << wall << "\n";
  }
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& input_path) {
  const Model model = load_model(model_path);
  std::ifstream in(input_path);
  if (!in) throw InvalidInput("--input: cannot open " + input_path);
  std::vector<double> values;
  std::string tok;
  while (in >> tok) {
    std::replace(tok.begin(), tok.end(), ',', ' ');
    std::stringstream ts(tok);
    double v;
    while (ts >> v) values.push_back(v);
  }
  const Vector x = Eigen::Map<const Vector>(
      values.data(), static_cast<Eigen::Index>(values.size()));
  std::cout << predict(model, x) << "\n";
  return 0;
}

int cmd_verify(int seeds, std::optional<std::uint64_t> single_seed, int max_n,
               bool inject_corrupt) {
  VerifyOptions opts;
  opts.max_n = max_n;
  opts.inject_corrupt_alpha = inject_corrupt;
  std::vector<std::uint64_t> run_seeds;
  if (single_seed)
    run_seeds.push_back(*single_seed);
  else
    for (int s = 1; s <= seeds; ++s)
      run_seeds.push_back(static_cast<std::uint64_t>(s));

  int failures = 0;
  for (std::uint64_t seed : run_seeds) {
    const DualityCaseResult r = run_duality_case(seed, opts);
    std::cout << "seed " << seed << ": n=" << r.n << " d1=" << r.d1
              << " p=" << r.p << " c=" << r.c << " relgap=" << r.relative_gap
              << " max_angle=" << r.max_angle
              << " product_dev=" << r.product_deviation
              << (r.ok() ? "  [pass]" : "  [FAIL]") << "\n";
    if (!r.ok()) {
      ++failures;
      std::cout << "  failing seed " << seed << ": gap_ok=" << r.gap_ok
                << " recovery_ok=" << r.recovery_ok
                << " feasible=" << r.dual_feasible << "\n";
    }
  }
  if (failures > 0) {
    std::cout << failures << " of " << run_seeds.size() << " seeds failed\n";
    return 2;
  }
  std::cout << "all " << run_seeds.size() << " seeds passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual convexified convolutional network trainer"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model layerwise");
  DataFlags train_data;
  add_data_flags(train, train_data, true);
  std::string kernel_kind = "gaussian";
  double gamma_in = 0.0;
  bool gamma_set = false;
  int degree = 2;
  double offset = 1.0;
  std::string loss_kind = "hinge";
  double c = 1.0;
  std::string layers_spec = "5,1,2";
  std::string pool_spec;
  double threshold = 0.9;
  int sweeps = 1;
  int polish = 0;
  int task_classes = 0;
  std::string out_path = "model.dcnn";
  std::string report_path;
  train->add_option("--kernel", kernel_kind, "gaussian | linear | polynomial");
  train->add_option("--gamma", gamma_in, "gaussian bandwidth")
      ->check(CLI::PositiveNumber)
      ->each([&](const std::string&) { gamma_set = true; });
  train->add_option("--degree", degree, "polynomial degree");
  train->add_option("--offset", offset, "polynomial offset");
  train->add_option("--loss", loss_kind,
                    "hinge | squared_hinge | logistic | exponential");
  train->add_option("--c", c, "loss weight");
  train->add_option("--layers-spec", layers_spec,
                    "per layer 'filter,stride,padding', ';'-separated");
  train->add_option("--pool", pool_spec,
                    "per layer 'width:stride' or 'none', ';'-separated");
  train->add_option("--threshold", threshold, "eigenvalue threshold in (0,1]");
  train->add_option("--sweeps", sweeps, "coordinate sweeps");
  train->add_option("--polish", polish, "post-sweep polish iterations");
  train->add_option("--task-classes", task_classes,
                    "class count for multiclass training (0 = binary)");
  train->add_option("--out", out_path, "model output path");
  train->add_option("--report", report_path, "JSON training report path");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a model");
  DataFlags eval_data;
  std::string eval_model;
  std::string eval_report;
  std::string dataset_name = "data";
  double eval_c = 0.0;
  add_data_flags(eval, eval_data, true);
  eval->add_option("--model", eval_model, "model file")->required();
  eval->add_option("--report", eval_report, "CSV report path (appended)");
  eval->add_option("--dataset-name", dataset_name, "name for the CSV row");
  eval->add_option("--c", eval_c, "c hyperparameter for the CSV row");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "predict one input");
  std::string pred_model, pred_input;
  predict_cmd->add_option("--model", pred_model, "model file")->required();
  predict_cmd->add_option("--input", pred_input, "text file of input values")
      ->required();

  // verify
  auto* verify = app.add_subcommand(
      "verify", "duality-gap and recovery certification on tiny instances");
  int seeds = 20;
  int max_n = 8;
  std::uint64_t one_seed = 0;
  bool seed_set = false;
  bool inject = false;
  verify->add_option("--seeds", seeds, "number of seeded instances");
  verify->add_option("--seed", one_seed, "run a single seed")
      ->each([&](const std::string&) { seed_set = true; });
  verify->add_option("--max-n", max_n, "sample-count cap per instance");
  verify->add_flag("--inject-corrupt-alpha", inject,
                   "negative control: corrupt the dual before checking");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(train_data, kernel_kind,
                       gamma_set ? std::optional<double>(gamma_in)
                                 : std::nullopt,
                       degree, offset, loss_kind, c, layers_spec, pool_spec,
                       threshold, sweeps, polish, task_classes, out_path,
                       report_path);
    if (eval->parsed())
      return cmd_eval(eval_model, eval_data, eval_c, eval_report, dataset_name);
    if (predict_cmd->parsed()) return cmd_predict(pred_model, pred_input);
    if (verify->parsed())
      return cmd_verify(seeds,
                        seed_set ? std::optional<std::uint64_t>(one_seed)
                                 : std::nullopt,
                        max_n, inject);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
