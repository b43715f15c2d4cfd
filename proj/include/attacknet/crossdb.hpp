#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "attacknet/dataset.hpp"
#include "attacknet/errors.hpp"
#include "attacknet/metrics.hpp"
#include "attacknet/model.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/train.hpp"

namespace attacknet {

// ---------------------------------------------------------------------------
// Cross-database protocol: train a model on each dataset in turn and score it
// on every other one.
// ---------------------------------------------------------------------------

struct CrossDbCell {
  std::string trained_on;
  std::string tested_on;
  ErrorRates rates;
  bool within_database = false;
};

struct CrossDbMatrix {
  std::vector<std::string> datasets;  // in input order
  std::vector<CrossDbCell> cells;     // ordered by (trained_on, tested_on)
};

struct CrossDbResult {
  CrossDbMatrix matrix;
  std::map<std::string, ModelWeights> models;  // full-data model per source
};

namespace detail {

inline std::vector<double> score_dataset(const ModelWeights& w,
                                         const Dataset& data) {
  return predict_scores_chunked(
      w, data.count(), 64,
      [&](std::int64_t start, std::int64_t n) {
        return data.batch_tensor(start, n);
      });
}

}  // namespace detail

// Each source dataset gets its own seed, derived so that adding datasets to
// the list never perturbs the models trained on earlier ones. Cross cells
// come from a model trained on the full source dataset; diagonal cells (when
// requested) retrain on an 80% split and score the held-out 20%, because
// testing on training data would be trivially optimistic.
// Invoked before each training run: dataset name and whether this is the
// within-database (split) retraining pass.
using TrainStartCallback = std::function<void(const std::string&, bool)>;

inline CrossDbResult run_cross_matrix(const std::vector<Dataset>& datasets,
                                      const ModelConfig& model_config,
                                      const TrainConfig& train_config,
                                      bool include_diagonal,
                                      double threshold = 0.5,
                                      double holdout_fraction = 0.2,
                                      const TrainStartCallback& on_train_start =
                                          nullptr) {
  model_config.validate();
  train_config.validate();
  const std::size_t k = datasets.size();
  if (k < 2) {
    throw InputError("cross-database evaluation needs at least 2 datasets, got " +
                     std::to_string(k));
  }
  std::set<std::string> names;
  for (const Dataset& d : datasets) {
    d.validate();
    if (d.name.empty()) {
      throw InputError("every dataset needs a non-empty name");
    }
    if (!names.insert(d.name).second) {
      throw InputError("duplicate dataset name '" + d.name + "'");
    }
    if (d.height() != model_config.input_height ||
        d.width() != model_config.input_width ||
        d.channels() != model_config.input_channels) {
      throw InputError("dataset '" + d.name + "' is " +
                       d.samples.shape_string() +
                       " which does not match the model input " +
                       std::to_string(model_config.input_height) + "x" +
                       std::to_string(model_config.input_width) + "x" +
                       std::to_string(model_config.input_channels));
    }
  }

  CrossDbResult result;
  for (const Dataset& d : datasets) {
    result.matrix.datasets.push_back(d.name);
  }

  for (std::size_t i = 0; i < k; ++i) {
    const Dataset& source = datasets[i];
    const std::uint64_t derived =
        train_config.seed ^ splitmix64(static_cast<std::uint64_t>(i));
    TrainConfig tc = train_config;
    tc.seed = derived;

    if (on_train_start) on_train_start(source.name, false);
    ModelWeights full_model = init_weights(model_config, derived);
    try {
      full_model =
          std::move(train_model(full_model, source, nullptr, tc).weights);
    } catch (const NumericError& e) {
      throw NumericError("training on dataset '" + source.name + "' (index " +
                         std::to_string(i) + ") failed: " + e.what());
    }

    for (std::size_t j = 0; j < k; ++j) {
      CrossDbCell cell;
      cell.trained_on = source.name;
      if (i == j) {
        if (!include_diagonal) continue;
        if (on_train_start) on_train_start(source.name, true);
        SplitResult split = split_dataset(source, holdout_fraction, derived);
        ModelWeights diag_model = init_weights(model_config, derived);
        try {
          diag_model =
              std::move(train_model(diag_model, split.train, nullptr, tc)
                            .weights);
        } catch (const NumericError& e) {
          throw NumericError("training on dataset '" + source.name +
                             "' (index " + std::to_string(i) +
                             ", within-database split) failed: " + e.what());
        }
        cell.tested_on = source.name;
        cell.within_database = true;
        cell.rates = error_rates(detail::score_dataset(diag_model, split.holdout),
                                 split.holdout.labels, threshold);
      } else {
        cell.tested_on = datasets[j].name;
        cell.rates = error_rates(detail::score_dataset(full_model, datasets[j]),
                                 datasets[j].labels, threshold);
      }
      result.matrix.cells.push_back(std::move(cell));
    }
    result.models.emplace(source.name, std::move(full_model));
  }
  return result;
}

inline std::string render_matrix(const CrossDbMatrix& matrix,
                                 OutputFormat format) {
  if (format == OutputFormat::json) {
    nlohmann::json j;
    j["datasets"] = matrix.datasets;
    j["cells"] = nlohmann::json::array();
    for (const CrossDbCell& c : matrix.cells) {
      j["cells"].push_back({
          {"trained_on", c.trained_on},
          {"tested_on", c.tested_on},
          {"far", c.rates.far},
          {"frr", c.rates.frr},
          {"hter", c.rates.hter},
          {"threshold", c.rates.decision_threshold},
          {"regime", c.within_database ? "within-database" : "cross-database"},
      });
    }
    return j.dump(2) + "\n";
  }
  if (format == OutputFormat::csv) {
    std::string out = "Trained on,Tested on,FAR,FRR,HTER\n";
    for (const CrossDbCell& c : matrix.cells) {
      out += c.trained_on + ',' + c.tested_on + ',' +
             detail::round3(c.rates.far) + ',' + detail::round3(c.rates.frr) +
             ',' + detail::round3(c.rates.hter) + '\n';
    }
    return out;
  }
  std::string out =
      "| Trained on | Tested on | FAR | FRR | HTER |\n"
      "| --- | --- | --- | --- | --- |\n";
  for (const CrossDbCell& c : matrix.cells) {
    out += "| " + c.trained_on + " | " + c.tested_on + " | " +
           detail::round3(c.rates.far) + " | " + detail::round3(c.rates.frr) +
           " | " + detail::round3(c.rates.hter) + " |\n";
  }
  return out;
}

}  // namespace attacknet
