#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tosopt/corpus.hpp"
#include "tosopt/embed.hpp"
#include "tosopt/gateway.hpp"
#include "tosopt/metrics.hpp"

namespace tosopt {

/// One (prompt, clause) evaluation of the backend: did it reproduce the gold
/// label? `correct` is 1 exactly when predicted == gold.
struct CorrectnessRecord {
  int prompt_id = 0;
  std::string clause_id;
  int gold = 0;
  int predicted = 0;
  int correct = 0;
};

struct CorrectnessDataset {
  std::vector<CorrectnessRecord> records;
  std::vector<std::string> prompts;                 // index == prompt_id
  std::map<std::string, std::string> clause_texts;  // clause id -> text

  struct Provenance {
    std::string backend_id;
    std::uint64_t seed = 0;
    std::string built_at;
    long long requested = 0;  // |prompts| * |clauses|
    long long excluded = 0;   // gateway failures dropped from the records
  } provenance;

  void validate() const;
};

/// Queries the backend once per (prompt, clause) pair at temperature 0 and
/// labels each pair with the correctness bit. Gateway failures exclude the
/// pair and are counted in provenance. `enforce_balance` asserts the 50:50
/// stratification the training build uses; validation builds pass false.
CorrectnessDataset build_correctness_dataset(const std::vector<std::string>& prompts,
                                             const ClauseBatch& clauses,
                                             LlmGateway& gateway, const MetaPromptSet& meta,
                                             bool enforce_balance = true);

void save_correctness_dataset(const CorrectnessDataset& dataset,
                              const std::filesystem::path& records_path,
                              const std::filesystem::path& sidecar_path);
CorrectnessDataset load_correctness_dataset(const std::filesystem::path& records_path,
                                            const std::filesystem::path& sidecar_path);

enum class ProxyVariant { Linear, Multilayer };
const char* to_string(ProxyVariant variant);
ProxyVariant proxy_variant_from_string(const std::string& name);

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  double inverse_reg_c = 1.0;  // L2 strength is 1/C, applied to weights only
};

struct MlpModel {
  std::vector<std::size_t> dims;             // {in, hidden..., 1}
  std::vector<std::vector<double>> weights;  // layer l: dims[l+1] x dims[l], row major
  std::vector<std::vector<double>> biases;   // layer l: dims[l+1]
  double dropout = 0.3;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // multilayer only
  double val_accuracy = 0.0;
  int steps = 0;  // iterations (linear) or epochs (multilayer)
  long long train_records = 0;
  long long val_records = 0;
  long long excluded = 0;
  bool converged = false;

  nlohmann::json to_json() const;
  static TrainReport from_json(const nlohmann::json& j);
};

struct ProxyModel {
  ProxyVariant variant = ProxyVariant::Linear;
  LinearModel linear;
  MlpModel mlp;
  FeatureLayout layout;
  std::string provider_id;
  TrainReport report;
};

struct TrainConfig {
  ProxyVariant variant = ProxyVariant::Linear;

  // linear: iterative minimization of mean BCE + (1/C)/(2n) * ||w||^2 until
  // the gradient norm drops below tolerance or the iteration cap is hit.
  int linear_max_iterations = 1000;
  double inverse_reg_c = 1.0;     // C; regularization strength is 1/C
  double linear_fixed_step = 0.0; // 0 -> backtracking line search
  double gradient_tolerance = 1e-6;

  // multilayer
  std::vector<std::size_t> hidden_dims = {512, 256, 128};
  double learning_rate = 1e-3;
  double dropout = 0.3;
  int batch_size = 32;
  int early_stop_patience = 10;
  double weight_decay = 1e-4;
  int max_epochs = 200;

  // 10% of the records are held out (by shuffled seed) when no separately
  // built validation dataset is supplied.
  double holdout_fraction = 0.1;
  std::uint64_t shuffle_seed = 1;

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Row-major feature matrix plus correctness targets for a dataset.
struct FeatureMatrix {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> targets;
  FeatureLayout layout;

  const double* row(std::size_t i) const { return values.data() + i * cols; }
};

FeatureMatrix assemble_features(const CorrectnessDataset& dataset,
                                EmbeddingProvider& provider, EmbeddingCache* cache);

ProxyModel train_proxy(const CorrectnessDataset& dataset, const TrainConfig& config,
                       EmbeddingProvider& provider, EmbeddingCache* cache,
                       const CorrectnessDataset* validation = nullptr);

/// Sigmoid output clamped to (0, 1); deterministic (dropout disabled).
double predict_correctness(const ProxyModel& model, const FeatureVector& z);

/// Predicted correctness for every row of a feature matrix.
std::vector<double> predict_correctness_batch(const ProxyModel& model,
                                              const FeatureMatrix& features);

using CorrectnessFn = std::function<double(const std::string& prompt, const Clause& clause,
                                           int gold)>;

/// The flip rule: keep the gold label where predicted correctness clears the
/// threshold, invert it otherwise, then score the synthesized predictions
/// against gold. No gateway traffic.
MetricReport flip_rule_score(const CorrectnessFn& correctness, const std::string& prompt,
                             const ClauseBatch& batch, double threshold = 0.5);

MetricReport proxy_score(const ProxyModel& model, const std::string& prompt,
                         const ClauseBatch& batch, EmbeddingProvider& provider,
                         EmbeddingCache* cache, double threshold = 0.5);

void save_proxy_model(const ProxyModel& model, const std::filesystem::path& path);
ProxyModel load_proxy_model(const std::filesystem::path& path);

// --- internals exposed for gradient checking and optimizer tests ---

std::vector<double> flatten_params(const ProxyModel& model);
void unflatten_params(ProxyModel& model, const std::vector<double>& params);

/// Training objective at the model's current parameters, dropout disabled:
/// mean BCE, plus the L2 term for the linear variant.
double proxy_loss(const ProxyModel& model, const FeatureMatrix& features);

/// Objective and its analytic gradient in flatten_params order.
double proxy_loss_and_grad(const ProxyModel& model, const FeatureMatrix& features,
                           std::vector<double>& grad);

}  // namespace tosopt
