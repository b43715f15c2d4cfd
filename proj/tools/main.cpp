#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attacknet/crossdb.hpp"
#include "attacknet/dataset.hpp"
#include "attacknet/errors.hpp"
#include "attacknet/io_util.hpp"
#include "attacknet/metrics.hpp"
#include "attacknet/model.hpp"
#include "attacknet/train.hpp"
#include "attacknet/weights_io.hpp"

namespace {

using namespace attacknet;

// --seed wins; otherwise ATTACKNET_SEED; otherwise 0.
std::uint64_t default_seed() {
  const char* env = std::getenv("ATTACKNET_SEED");
  if (env == nullptr || *env == '\0') return 0;
  std::uint64_t value = 0;
  const char* end = env + std::string_view(env).size();
  auto [ptr, ec] = std::from_chars(env, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string("ATTACKNET_SEED is not an unsigned integer: '") +
                      env + "'");
  }
  return value;
}

std::string fmt(const char* spec, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, value);
  return buf;
}

struct SynthArgs {
  std::string out;
  std::int64_t per_class = 256;
  std::int64_t size = 64;
  double noise_sigma = 0.05;
  std::int64_t stripe_period = 8;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec;
  spec.per_class = a.per_class;
  spec.height = a.size;
  spec.width = a.size;
  spec.noise_sigma = a.noise_sigma;
  spec.stripe_period = a.stripe_period;
  spec.seed = a.seed;
  Dataset d = generate_synthetic(spec);
  save_packed_dataset(d, a.out);
  std::cout << "wrote " << a.out << ": " << d.count() << " samples ("
            << d.bonafide_count() << " bonafide, " << d.attacker_count()
            << " attacker), " << d.height() << "x" << d.width() << "x"
            << d.channels() << ", seed " << a.seed << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::int64_t epochs = 5;
  std::int64_t batch = 32;
  double lr = 1e-3;
  double val_split = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string history;
};

nlohmann::json history_json(const TrainHistory& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochStats& e : history) {
    nlohmann::json row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["train_accuracy"] = e.train_accuracy;
    row["holdout_loss"] =
        e.holdout_loss ? nlohmann::json(*e.holdout_loss) : nullptr;
    row["holdout_accuracy"] =
        e.holdout_accuracy ? nlohmann::json(*e.holdout_accuracy) : nullptr;
    arr.push_back(row);
  }
  return arr;
}

int run_train(const TrainArgs& a) {
  Dataset full = load_packed_dataset(a.data);

  ModelConfig mc;
  mc.input_height = full.height();
  mc.input_width = full.width();
  mc.input_channels = full.channels();
  mc.validate();

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.validate();

  const Dataset* train_set = &full;
  const Dataset* holdout = nullptr;
  SplitResult split;
  if (a.val_split > 0.0) {
    split = split_dataset(full, a.val_split, a.seed);
    train_set = &split.train;
    holdout = &split.holdout;
    std::cerr << "holding out " << split.holdout.count() << " of "
              << full.count() << " samples for validation\n";
  }
  if (train_set->count() % tc.batch_size == 1) {
    std::cerr << "note: the final batch each epoch has 1 sample and is "
                 "dropped (batch normalization needs at least 2)\n";
  }

  ModelWeights init = init_weights(mc, a.seed);
  TrainResult result = train_model(
      init, *train_set, holdout, tc, [&](const EpochStats& e) {
        std::cerr << "epoch " << e.epoch << "/" << tc.epochs << ": loss "
                  << fmt("%.6f", e.train_loss) << ", accuracy "
                  << fmt("%.3f", e.train_accuracy);
        if (e.holdout_loss) {
          std::cerr << " | holdout loss " << fmt("%.6f", *e.holdout_loss)
                    << ", accuracy " << fmt("%.3f", *e.holdout_accuracy);
        }
        std::cerr << "\n";
      });

  save_weights(a.out, result.weights);
  if (!a.history.empty()) {
    atomic_write_file(a.history, history_json(result.history).dump(2) + "\n");
  }

  std::cout << "trained on " << full.name << ": " << train_set->count()
            << " samples, " << tc.epochs << " epochs -> " << a.out;
  if (!result.history.empty()) {
    std::cout << " (final loss "
              << fmt("%.4f", result.history.back().train_loss) << ", accuracy "
              << fmt("%.3f", result.history.back().train_accuracy) << ")";
  }
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string data;
  double threshold = 0.5;
  std::string report;
  std::string format = "json";
};

int run_eval(const EvalArgs& a) {
  ModelWeights w = load_weights(a.model);
  Dataset d = load_packed_dataset(a.data);
  const OutputFormat format = parse_output_format(a.format);

  std::vector<double> scores = predict_scores_chunked(
      w, d.count(), 64,
      [&](std::int64_t start, std::int64_t n) { return d.batch_tensor(start, n); });
  EvalReport report = build_report(d.name, scores, d.labels, a.threshold);
  atomic_write_file(a.report, render_report(report, format));

  std::cout << d.name << ": HTER " << fmt("%.3f", report.rates.hter)
            << " (FAR " << fmt("%.3f", report.rates.far) << ", FRR "
            << fmt("%.3f", report.rates.frr) << "), threshold "
            << fmt("%.3f", a.threshold) << " -> " << a.report << "\n";
  return 0;
}

struct CrossArgs {
  std::vector<std::string> data;
  std::int64_t epochs = 5;
  std::int64_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool include_diagonal = false;
  std::string out;
  std::string format = "csv";
};

int run_cross_eval(const CrossArgs& a) {
  const OutputFormat format = parse_output_format(a.format);
  std::vector<Dataset> datasets;
  for (const std::string& path : a.data) {
    datasets.push_back(load_packed_dataset(path));
    std::cerr << "loaded " << datasets.back().name << ": "
              << datasets.back().count() << " samples\n";
  }
  if (datasets.size() < 2) {
    throw InputError("cross-eval needs at least 2 datasets, got " +
                     std::to_string(datasets.size()));
  }

  ModelConfig mc;
  mc.input_height = datasets.front().height();
  mc.input_width = datasets.front().width();
  mc.input_channels = datasets.front().channels();
  mc.validate();

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.validate();

  CrossDbResult result = run_cross_matrix(
      datasets, mc, tc, a.include_diagonal, 0.5, 0.2,
      [](const std::string& name, bool within) {
        std::cerr << "training on " << name
                  << (within ? " (within-database split)" : "") << "\n";
      });
  atomic_write_file(a.out, render_matrix(result.matrix, format));

  std::cout << "cross-eval over " << datasets.size() << " datasets: "
            << result.matrix.cells.size() << " cells -> " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"liveness-detection toolkit: synthetic data, training, "
               "evaluation, cross-database matrices"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  TrainArgs train_args;
  EvalArgs eval_args;
  CrossArgs cross_args;

  CLI::App* synth =
      app.add_subcommand("synth", "Generate a packed synthetic dataset");
  synth->add_option("--out", synth_args.out, "Output .lvds path")->required();
  synth->add_option("--per-class", synth_args.per_class,
                    "Samples per class")->capture_default_str();
  synth->add_option("--size", synth_args.size, "Square image side (multiple of 4)")
      ->capture_default_str();
  synth->add_option("--noise-sigma", synth_args.noise_sigma,
                    "Gaussian noise level")->capture_default_str();
  synth->add_option("--stripe-period", synth_args.stripe_period,
                    "Attacker stripe period in pixels")->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "RNG seed");

  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--data", train_args.data, "Packed dataset path")->required();
  train->add_option("--epochs", train_args.epochs, "Training epochs")
      ->capture_default_str();
  train->add_option("--batch", train_args.batch, "Batch size")
      ->capture_default_str();
  train->add_option("--lr", train_args.lr, "Adam learning rate")
      ->capture_default_str();
  train->add_option("--val-split", train_args.val_split,
                    "Holdout fraction (0 = none)")->capture_default_str();
  train->add_option("--seed", train_args.seed, "RNG seed");
  train->add_option("--out", train_args.out, "Weights output path")->required();
  train->add_option("--history", train_args.history,
                    "Optional per-epoch history JSON path");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate weights on a dataset");
  eval->add_option("--model", eval_args.model, "Weights path")->required();
  eval->add_option("--data", eval_args.data, "Packed dataset path")->required();
  eval->add_option("--threshold", eval_args.threshold,
                   "Bonafide acceptance threshold")->capture_default_str();
  eval->add_option("--report", eval_args.report, "Report output path")->required();
  eval->add_option("--format", eval_args.format, "json, md, or csv")
      ->capture_default_str();

  CLI::App* cross = app.add_subcommand(
      "cross-eval", "Train per dataset and evaluate on the others");
  cross->add_option("--data", cross_args.data,
                    "Comma-separated packed dataset paths")
      ->required()
      ->delimiter(',');
  cross->add_option("--epochs", cross_args.epochs, "Training epochs")
      ->capture_default_str();
  cross->add_option("--batch", cross_args.batch, "Batch size")
      ->capture_default_str();
  cross->add_option("--lr", cross_args.lr, "Adam learning rate")
      ->capture_default_str();
  cross->add_option("--seed", cross_args.seed, "RNG seed");
  cross->add_flag("--include-diagonal", cross_args.include_diagonal,
                  "Also evaluate within-database splits");
  cross->add_option("--out", cross_args.out, "Matrix output path")->required();
  cross->add_option("--format", cross_args.format, "csv, md, or json")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const std::uint64_t env_seed = default_seed();
    if (synth->parsed()) {
      if (synth->count("--seed") == 0) synth_args.seed = env_seed;
      return run_synth(synth_args);
    }
    if (train->parsed()) {
      if (train->count("--seed") == 0) train_args.seed = env_seed;
      return run_train(train_args);
    }
    if (eval->parsed()) {
      return run_eval(eval_args);
    }
    if (cross->parsed()) {
      if (cross->count("--seed") == 0) cross_args.seed = env_seed;
      return run_cross_eval(cross_args);
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
