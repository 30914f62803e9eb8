#include "tosopt/proxy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "tosopt/kernels.hpp"
#include "tosopt/rng.hpp"

namespace tosopt {

namespace {

constexpr double kProbEps = 1e-12;

double clamp_prob(double p) { return std::min(1.0 - kProbEps, std::max(kProbEps, p)); }

std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Correctness dataset
// ---------------------------------------------------------------------------

void CorrectnessDataset::validate() const {
  std::set<std::pair<int, std::string>> seen;
  for (const auto& r : records) {
    if (r.correct != ((r.predicted == r.gold) ? 1 : 0)) {
      throw IntegrityError("correctness bit inconsistent for prompt " +
                           std::to_string(r.prompt_id) + ", clause " + r.clause_id);
    }
    if (r.prompt_id < 0 || static_cast<std::size_t>(r.prompt_id) >= prompts.size()) {
      throw IntegrityError("record references unknown prompt id " +
                           std::to_string(r.prompt_id));
    }
    if (!clause_texts.count(r.clause_id)) {
      throw IntegrityError("record references unknown clause id " + r.clause_id);
    }
    if (!seen.emplace(r.prompt_id, r.clause_id).second) {
      throw IntegrityError("duplicate (prompt, clause) pair: " +
                           std::to_string(r.prompt_id) + ", " + r.clause_id);
    }
  }
}

CorrectnessDataset build_correctness_dataset(const std::vector<std::string>& prompts,
                                             const ClauseBatch& clauses,
                                             LlmGateway& gateway, const MetaPromptSet& meta,
                                             bool enforce_balance) {
  if (prompts.empty() || clauses.clauses.empty()) {
    throw PreconditionError("build_correctness_dataset: prompts and clauses must be nonempty");
  }
  {
    std::set<std::string> unique(prompts.begin(), prompts.end());
    if (unique.size() != prompts.size()) {
      throw PreconditionError("build_correctness_dataset: prompts must be unique");
    }
  }
  if (clauses.kind != BatchKind::CorrectnessSet) {
    throw PreconditionError("build_correctness_dataset expects a correctness-set batch");
  }
  if (enforce_balance &&
      std::llabs(clauses.fair_count() - clauses.unfair_count()) > 1) {
    throw PreconditionError("correctness-set batch is not 50:50 balanced (" +
                            std::to_string(clauses.fair_count()) + " fair vs " +
                            std::to_string(clauses.unfair_count()) + " unfair)");
  }

  CorrectnessDataset ds;
  ds.prompts = prompts;
  for (const auto& c : clauses.clauses) ds.clause_texts[c.id] = c.text;
  ds.provenance.backend_id = gateway.backend().id();
  ds.provenance.seed = clauses.seed;
  ds.provenance.built_at = now_iso8601();
  ds.provenance.requested =
      static_cast<long long>(prompts.size()) * static_cast<long long>(clauses.size());

  for (std::size_t p = 0; p < prompts.size(); ++p) {
    BatchPredictions preds =
        classify_batch(gateway, meta, prompts[p], clauses.clauses,
                       Phase::CorrectnessBuild, FailurePolicy::Exclude);
    for (std::size_t j = 0; j < clauses.clauses.size(); ++j) {
      if (preds.unavailable[j]) {
        ++ds.provenance.excluded;
        continue;
      }
      const Clause& clause = clauses.clauses[j];
      CorrectnessRecord r;
      r.prompt_id = static_cast<int>(p);
      r.clause_id = clause.id;
      r.gold = clause.fairness;
      r.predicted = preds.predictions[j];
      r.correct = (r.predicted == r.gold) ? 1 : 0;
      ds.records.push_back(std::move(r));
    }
  }
  ds.validate();
  return ds;
}

void save_correctness_dataset(const CorrectnessDataset& dataset,
                              const std::filesystem::path& records_path,
                              const std::filesystem::path& sidecar_path) {
  {
    std::ofstream out(records_path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + records_path.string());
    for (const auto& r : dataset.records) {
      nlohmann::json j{{"prompt_id", r.prompt_id},
                       {"clause_id", r.clause_id},
                       {"gold", r.gold},
                       {"predicted", r.predicted},
                       {"correct", r.correct}};
      out << j.dump() << '\n';
    }
  }
  nlohmann::json sidecar{
      {"prompts", dataset.prompts},
      {"clause_texts", dataset.clause_texts},
      {"provenance",
       {{"backend_id", dataset.provenance.backend_id},
        {"seed", dataset.provenance.seed},
        {"built_at", dataset.provenance.built_at},
        {"requested", dataset.provenance.requested},
        {"excluded", dataset.provenance.excluded}}}};
  write_text_file(sidecar_path, sidecar.dump(2) + "\n");
}

CorrectnessDataset load_correctness_dataset(const std::filesystem::path& records_path,
                                            const std::filesystem::path& sidecar_path) {
  CorrectnessDataset ds;
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(read_text_file(sidecar_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar_path.string() + ": " + e.what());
  }
  ds.prompts = sidecar.at("prompts").get<std::vector<std::string>>();
  ds.clause_texts = sidecar.at("clause_texts").get<std::map<std::string, std::string>>();
  const auto& prov = sidecar.at("provenance");
  ds.provenance.backend_id = prov.value("backend_id", std::string());
  ds.provenance.seed = prov.value("seed", std::uint64_t{0});
  ds.provenance.built_at = prov.value("built_at", std::string());
  ds.provenance.requested = prov.value("requested", 0LL);
  ds.provenance.excluded = prov.value("excluded", 0LL);

  std::ifstream in(records_path);
  if (!in) throw ConfigError("cannot open " + records_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      CorrectnessRecord r;
      r.prompt_id = j.at("prompt_id").get<int>();
      r.clause_id = j.at("clause_id").get<std::string>();
      r.gold = j.at("gold").get<int>();
      r.predicted = j.at("predicted").get<int>();
      r.correct = j.at("correct").get<int>();
      ds.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(records_path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Feature assembly
// ---------------------------------------------------------------------------

FeatureMatrix assemble_features(const CorrectnessDataset& dataset,
                                EmbeddingProvider& provider, EmbeddingCache* cache) {
  if (dataset.records.empty()) {
    throw PreconditionError("assemble_features: dataset has no records");
  }
  // Warm the cache with one batched call over the distinct texts.
  std::vector<std::string> texts = dataset.prompts;
  for (const auto& [id, text] : dataset.clause_texts) texts.push_back(text);
  embed_all(provider, texts, cache);

  const std::size_t dim = provider.dim();
  FeatureMatrix fm;
  fm.layout = FeatureLayout{dim, dim, 2};
  fm.rows = dataset.records.size();
  fm.cols = fm.layout.total();
  fm.values.assign(fm.rows * fm.cols, 0.0);
  fm.targets.assign(fm.rows, 0.0);

  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    const auto prompt_vec = embed(provider, dataset.prompts[r.prompt_id], cache);
    const auto clause_vec = embed(provider, dataset.clause_texts.at(r.clause_id), cache);
    double* row = fm.values.data() + i * fm.cols;
    for (std::size_t d = 0; d < dim; ++d) row[d] = prompt_vec[d];
    for (std::size_t d = 0; d < dim; ++d) row[dim + d] = clause_vec[d];
    auto oh = one_hot(r.gold);
    row[2 * dim] = oh[0];
    row[2 * dim + 1] = oh[1];
    fm.targets[i] = static_cast<double>(r.correct);
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Model plumbing
// ---------------------------------------------------------------------------

const char* to_string(ProxyVariant variant) {
  return variant == ProxyVariant::Linear ? "linear" : "multilayer";
}

ProxyVariant proxy_variant_from_string(const std::string& name) {
  if (name == "linear") return ProxyVariant::Linear;
  if (name == "multilayer" || name == "mlp") return ProxyVariant::Multilayer;
  throw ConfigError("unknown proxy variant: " + name);
}

void TrainConfig::validate() const {
  if (linear_max_iterations < 1 || inverse_reg_c <= 0.0 || gradient_tolerance <= 0.0 ||
      learning_rate <= 0.0 || batch_size < 1 || early_stop_patience < 1 ||
      weight_decay < 0.0 || max_epochs < 1 || dropout < 0.0 || dropout >= 1.0 ||
      holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("train config: rates and counts must be positive");
  }
  if (hidden_dims.empty()) {
    throw ConfigError("train config: multilayer variant needs at least one hidden layer");
  }
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("variant")) c.variant = proxy_variant_from_string(j.at("variant"));
  c.linear_max_iterations = j.value("linear_max_iterations", c.linear_max_iterations);
  c.inverse_reg_c = j.value("inverse_reg_c", c.inverse_reg_c);
  c.linear_fixed_step = j.value("linear_fixed_step", c.linear_fixed_step);
  c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
  c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.dropout = j.value("dropout", c.dropout);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.validate();
  return c;
}

nlohmann::json TrainReport::to_json() const {
  return nlohmann::json{{"train_loss", train_loss},
                        {"val_loss", val_loss},
                        {"val_accuracy", val_accuracy},
                        {"steps", steps},
                        {"train_records", train_records},
                        {"val_records", val_records},
                        {"excluded", excluded},
                        {"converged", converged}};
}

TrainReport TrainReport::from_json(const nlohmann::json& j) {
  TrainReport r;
  r.train_loss = j.value("train_loss", std::vector<double>{});
  r.val_loss = j.value("val_loss", std::vector<double>{});
  r.val_accuracy = j.value("val_accuracy", 0.0);
  r.steps = j.value("steps", 0);
  r.train_records = j.value("train_records", 0LL);
  r.val_records = j.value("val_records", 0LL);
  r.excluded = j.value("excluded", 0LL);
  r.converged = j.value("converged", false);
  return r;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

// Logits for a batch. When training, dropout runs on the hidden activations
// with a per-(step, layer) counter stream so replays are exact. Retains the
// per-layer inputs and post-relu activations when pointers are given.
std::vector<double> mlp_forward(const MlpModel& model, const double* x, std::size_t rows,
                                bool training, std::uint64_t drop_seed,
                                std::uint64_t drop_salt,
                                std::vector<std::vector<double>>* inputs,
                                std::vector<std::vector<double>>* relu_acts) {
  const std::size_t layer_count = model.dims.size() - 1;
  std::vector<double> current(x, x + rows * model.dims[0]);
  if (inputs) {
    inputs->assign(layer_count, {});
    (*inputs)[0] = current;
  }
  if (relu_acts) relu_acts->assign(layer_count - 1, {});

  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::size_t in_dim = model.dims[l];
    const std::size_t out_dim = model.dims[l + 1];
    std::vector<double> z(rows * out_dim);
    kernels::gemm_nt(current.data(), model.weights[l].data(), z.data(), rows, in_dim,
                     out_dim);
    kernels::add_bias_rows(z.data(), model.biases[l].data(), rows, out_dim);
    if (l + 1 < layer_count) {
      kernels::relu_forward(z.data(), z.size());
      if (relu_acts) (*relu_acts)[l] = z;
      if (training && model.dropout > 0.0) {
        kernels::dropout_apply(z.data(), z.size(), model.dropout, drop_seed,
                               hash64(drop_salt ^ l));
      }
      if (inputs) (*inputs)[l + 1] = z;
    }
    current = std::move(z);
  }
  return current;  // rows x 1 logits
}

struct MlpGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

MlpGradients make_gradients(const MlpModel& model) {
  MlpGradients g;
  g.weights.resize(model.weights.size());
  g.biases.resize(model.biases.size());
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    g.weights[l].assign(model.weights[l].size(), 0.0);
    g.biases[l].assign(model.biases[l].size(), 0.0);
  }
  return g;
}

// Mean-BCE gradient for one batch; expects the forward pass's retained
// buffers. Returns the mean loss.
double mlp_backward(const MlpModel& model, std::size_t rows, const double* targets,
                    const std::vector<double>& logits,
                    const std::vector<std::vector<double>>& inputs,
                    const std::vector<std::vector<double>>& relu_acts, bool training,
                    std::uint64_t drop_seed, std::uint64_t drop_salt, MlpGradients& grads) {
  const std::size_t layer_count = model.dims.size() - 1;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  double loss = kernels::bce_loss_sum(logits.data(), targets, rows) * inv_rows;

  std::vector<double> delta(rows);
  kernels::bce_logit_grad(logits.data(), targets, delta.data(), rows);
  kernels::scale(inv_rows, delta.data(), rows);

  for (std::size_t l = layer_count; l-- > 0;) {
    const std::size_t in_dim = model.dims[l];
    const std::size_t out_dim = model.dims[l + 1];
    kernels::gemm_tn(delta.data(), inputs[l].data(), grads.weights[l].data(), out_dim,
                     rows, in_dim);
    kernels::col_sums(delta.data(), grads.biases[l].data(), rows, out_dim);
    if (l == 0) break;
    std::vector<double> prev(rows * in_dim);
    kernels::gemm_nn(delta.data(), model.weights[l].data(), prev.data(), rows, out_dim,
                     in_dim);
    if (training && model.dropout > 0.0) {
      kernels::dropout_apply(prev.data(), prev.size(), model.dropout, drop_seed,
                             hash64(drop_salt ^ (l - 1)));
    }
    kernels::relu_backward(relu_acts[l - 1].data(), prev.data(), prev.size());
    delta = std::move(prev);
  }
  return loss;
}

std::vector<double> linear_logits(const LinearModel& model, const double* x,
                                  std::size_t rows, std::size_t cols) {
  std::vector<double> logits(rows);
  kernels::gemm_nn(x, model.weights.data(), logits.data(), rows, cols, 1);
  for (std::size_t i = 0; i < rows; ++i) logits[i] += model.bias;
  return logits;
}

// Objective: mean BCE + (1/C)/(2n) * ||w||^2 (bias unregularized). The same
// scaling sklearn's logistic regression minimizes, divided by n.
double linear_loss_and_grad(const LinearModel& model, const FeatureMatrix& fm,
                            std::vector<double>* grad_w, double* grad_b) {
  const std::size_t n = fm.rows;
  const std::size_t d = fm.cols;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double lambda = 1.0 / model.inverse_reg_c;

  std::vector<double> logits = linear_logits(model, fm.values.data(), n, d);
  double loss = kernels::bce_loss_sum(logits.data(), fm.targets.data(), n) * inv_n;
  loss += 0.5 * lambda * inv_n * kernels::squared_norm(model.weights.data(), d);

  if (grad_w) {
    std::vector<double> residual(n);
    kernels::bce_logit_grad(logits.data(), fm.targets.data(), residual.data(), n);
    grad_w->assign(d, 0.0);
    kernels::gemm_tn(fm.values.data(), residual.data(), grad_w->data(), d, n, 1);
    kernels::scale(inv_n, grad_w->data(), d);
    kernels::axpy(lambda * inv_n, model.weights.data(), grad_w->data(), d);
    double rb = 0.0;
    for (std::size_t i = 0; i < n; ++i) rb += residual[i];
    *grad_b = rb * inv_n;
  }
  return loss;
}

double accuracy_at_half(const std::vector<double>& probs, const std::vector<double>& targets) {
  if (probs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    int pred = probs[i] >= 0.5 ? 1 : 0;
    if (pred == static_cast<int>(targets[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

FeatureMatrix take_rows(const FeatureMatrix& fm, const std::vector<std::size_t>& rows) {
  FeatureMatrix out;
  out.layout = fm.layout;
  out.rows = rows.size();
  out.cols = fm.cols;
  out.values.resize(out.rows * out.cols);
  out.targets.resize(out.rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.values.data() + i * out.cols, fm.row(rows[i]),
                out.cols * sizeof(double));
    out.targets[i] = fm.targets[rows[i]];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

void train_linear(ProxyModel& model, const FeatureMatrix& train, const TrainConfig& cfg) {
  LinearModel& lin = model.linear;
  lin.weights.assign(train.cols, 0.0);
  lin.bias = 0.0;
  lin.inverse_reg_c = cfg.inverse_reg_c;

  std::vector<double> grad_w;
  double grad_b = 0.0;
  double step = 1.0;

  for (int iter = 0; iter < cfg.linear_max_iterations; ++iter) {
    double loss = linear_loss_and_grad(lin, train, &grad_w, &grad_b);
    if (!std::isfinite(loss)) {
      throw TrainingError("linear training diverged at iteration " + std::to_string(iter) +
                          " (loss is not finite)");
    }
    model.report.train_loss.push_back(loss);
    model.report.steps = iter + 1;

    double grad_norm_sq = kernels::squared_norm(grad_w.data(), grad_w.size()) +
                          grad_b * grad_b;
    if (std::sqrt(grad_norm_sq) <= cfg.gradient_tolerance) {
      model.report.converged = true;
      break;
    }

    if (cfg.linear_fixed_step > 0.0) {
      kernels::axpy(-cfg.linear_fixed_step, grad_w.data(), lin.weights.data(),
                    lin.weights.size());
      lin.bias -= cfg.linear_fixed_step * grad_b;
      continue;
    }

    // Backtracking line search along the negative gradient (Armijo, 1e-4).
    step = std::min(step * 2.0, 1024.0);
    LinearModel trial = lin;
    for (;;) {
      trial.weights = lin.weights;
      kernels::axpy(-step, grad_w.data(), trial.weights.data(), trial.weights.size());
      trial.bias = lin.bias - step * grad_b;
      double trial_loss = linear_loss_and_grad(trial, train, nullptr, nullptr);
      if (trial_loss <= loss - 1e-4 * step * grad_norm_sq || step < 1e-14) break;
      step *= 0.5;
    }
    lin.weights = std::move(trial.weights);
    lin.bias = trial.bias;
  }
}

void init_mlp(MlpModel& mlp, std::size_t input_dim, const TrainConfig& cfg) {
  mlp.dims.clear();
  mlp.dims.push_back(input_dim);
  for (std::size_t h : cfg.hidden_dims) mlp.dims.push_back(h);
  mlp.dims.push_back(1);
  mlp.dropout = cfg.dropout;

  SplitMix64 rng(mix_seed(cfg.shuffle_seed, 0x1417u));
  mlp.weights.clear();
  mlp.biases.clear();
  for (std::size_t l = 0; l + 1 < mlp.dims.size(); ++l) {
    const std::size_t fan_in = mlp.dims[l];
    const std::size_t fan_out = mlp.dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_out * fan_in);
    std::vector<double> b(fan_out);
    for (auto& v : w) v = (2.0 * rng.next_unit() - 1.0) * bound;
    for (auto& v : b) v = (2.0 * rng.next_unit() - 1.0) * bound;
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(std::move(b));
  }
}

void train_mlp(ProxyModel& model, const FeatureMatrix& train, const FeatureMatrix& val,
               const TrainConfig& cfg) {
  MlpModel& mlp = model.mlp;
  init_mlp(mlp, train.cols, cfg);

  struct AdamState {
    std::vector<double> m, v;
  };
  std::vector<AdamState> w_state(mlp.weights.size()), b_state(mlp.biases.size());
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    w_state[l].m.assign(mlp.weights[l].size(), 0.0);
    w_state[l].v.assign(mlp.weights[l].size(), 0.0);
    b_state[l].m.assign(mlp.biases[l].size(), 0.0);
    b_state[l].v.assign(mlp.biases[l].size(), 0.0);
  }

  SplitMix64 shuffle_rng(mix_seed(cfg.shuffle_seed, 0x5105u));
  std::vector<std::size_t> order(train.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  MlpGradients grads = make_gradients(mlp);
  long long adam_t = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  MlpModel best = mlp;

  auto eval_loss = [&](const FeatureMatrix& fm) {
    auto logits = mlp_forward(mlp, fm.values.data(), fm.rows, false, 0, 0, nullptr, nullptr);
    return kernels::bce_loss_sum(logits.data(), fm.targets.data(), fm.rows) /
           static_cast<double>(fm.rows);
  };

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_inplace(order, shuffle_rng);
    for (std::size_t start = 0; start < train.rows;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(train.rows, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch_rows(order.begin() + static_cast<long>(start),
                                          order.begin() + static_cast<long>(end));
      FeatureMatrix batch = take_rows(train, batch_rows);

      ++adam_t;
      std::uint64_t drop_salt = mix_seed(static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(adam_t));
      std::vector<std::vector<double>> inputs, relu_acts;
      auto logits = mlp_forward(mlp, batch.values.data(), batch.rows, true,
                                cfg.shuffle_seed, drop_salt, &inputs, &relu_acts);
      double loss = mlp_backward(mlp, batch.rows, batch.targets.data(), logits, inputs,
                                 relu_acts, true, cfg.shuffle_seed, drop_salt, grads);
      if (!std::isfinite(loss)) {
        throw TrainingError("multilayer training diverged at epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(adam_t));
      }

      for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        if (cfg.weight_decay > 0.0) {
          kernels::axpy(cfg.weight_decay, mlp.weights[l].data(), grads.weights[l].data(),
                        mlp.weights[l].size());
        }
        kernels::adam_step(mlp.weights[l].data(), w_state[l].m.data(), w_state[l].v.data(),
                           grads.weights[l].data(), mlp.weights[l].size(),
                           cfg.learning_rate, 0.9, 0.999, 1e-8, adam_t);
        kernels::adam_step(mlp.biases[l].data(), b_state[l].m.data(), b_state[l].v.data(),
                           grads.biases[l].data(), mlp.biases[l].size(), cfg.learning_rate,
                           0.9, 0.999, 1e-8, adam_t);
      }
    }

    double train_loss = eval_loss(train);
    double val_loss = eval_loss(val);
    model.report.train_loss.push_back(train_loss);
    model.report.val_loss.push_back(val_loss);
    model.report.steps = epoch + 1;

    if (val_loss < best_val_loss) {
      best_val_loss = val_loss;
      best = mlp;
      stall = 0;
    } else if (++stall >= cfg.early_stop_patience) {
      model.report.converged = true;
      break;
    }
  }

  mlp = std::move(best);
}

}  // namespace

ProxyModel train_proxy(const CorrectnessDataset& dataset, const TrainConfig& config,
                       EmbeddingProvider& provider, EmbeddingCache* cache,
                       const CorrectnessDataset* validation) {
  config.validate();
  if (dataset.records.empty()) {
    throw PreconditionError("train_proxy: dataset has no records");
  }

  FeatureMatrix all = assemble_features(dataset, provider, cache);

  FeatureMatrix train, val;
  if (validation) {
    train = std::move(all);
    val = assemble_features(*validation, provider, cache);
    if (val.layout != train.layout) {
      throw IntegrityError("validation dataset feature layout differs from training");
    }
  } else {
    std::vector<std::size_t> order(all.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(mix_seed(config.shuffle_seed, 0x401dULL));
    shuffle_inplace(order, rng);
    std::size_t val_rows = std::max<std::size_t>(
        1, static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(all.rows)));
    if (val_rows >= all.rows) {
      throw PreconditionError("train_proxy: dataset too small to hold out a validation split");
    }
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_rows));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(val_rows), order.end());
    val = take_rows(all, val_idx);
    train = take_rows(all, train_idx);
  }

  ProxyModel model;
  model.variant = config.variant;
  model.layout = train.layout;
  model.provider_id = provider.id();
  model.report.train_records = static_cast<long long>(train.rows);
  model.report.val_records = static_cast<long long>(val.rows);
  model.report.excluded = dataset.provenance.excluded;

  if (config.variant == ProxyVariant::Linear) {
    train_linear(model, train, config);
  } else {
    train_mlp(model, train, val, config);
  }

  auto val_probs = predict_correctness_batch(model, val);
  model.report.val_accuracy = accuracy_at_half(val_probs, val.targets);
  return model;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::vector<double> predict_correctness_batch(const ProxyModel& model,
                                              const FeatureMatrix& features) {
  if (features.layout != model.layout) {
    throw IntegrityError("feature layout does not match the model's layout");
  }
  std::vector<double> logits;
  if (model.variant == ProxyVariant::Linear) {
    logits = linear_logits(model.linear, features.values.data(), features.rows,
                           features.cols);
  } else {
    logits = mlp_forward(model.mlp, features.values.data(), features.rows, false, 0, 0,
                         nullptr, nullptr);
  }
  std::vector<double> probs(logits.size());
  kernels::sigmoid(logits.data(), probs.data(), logits.size());
  for (auto& p : probs) p = clamp_prob(p);
  return probs;
}

double predict_correctness(const ProxyModel& model, const FeatureVector& z) {
  if (z.layout != model.layout) {
    throw IntegrityError("feature layout " + z.layout.to_json().dump() +
                         " does not match model layout " + model.layout.to_json().dump());
  }
  FeatureMatrix fm;
  fm.layout = z.layout;
  fm.rows = 1;
  fm.cols = z.values.size();
  fm.values = z.values;
  fm.targets = {0.0};
  return predict_correctness_batch(model, fm)[0];
}

MetricReport flip_rule_score(const CorrectnessFn& correctness, const std::string& prompt,
                             const ClauseBatch& batch, double threshold) {
  if (batch.clauses.empty()) {
    throw PreconditionError("flip_rule_score: empty batch");
  }
  std::vector<int> predictions;
  std::vector<int> golds;
  predictions.reserve(batch.size());
  golds.reserve(batch.size());
  for (const auto& clause : batch.clauses) {
    double c_hat = correctness(prompt, clause, clause.fairness);
    int predicted = c_hat >= threshold ? clause.fairness : 1 - clause.fairness;
    predictions.push_back(predicted);
    golds.push_back(clause.fairness);
  }
  return compute_metrics(predictions, golds);
}

MetricReport proxy_score(const ProxyModel& model, const std::string& prompt,
                         const ClauseBatch& batch, EmbeddingProvider& provider,
                         EmbeddingCache* cache, double threshold) {
  if (provider.id() != model.provider_id) {
    throw IntegrityError("proxy model was trained with provider '" + model.provider_id +
                         "', got '" + provider.id() + "'");
  }
  // One batched embedding pass; per-clause scoring then hits the cache.
  std::vector<std::string> texts{prompt};
  for (const auto& c : batch.clauses) texts.push_back(c.text);
  embed_all(provider, texts, cache);

  return flip_rule_score(
      [&](const std::string& p, const Clause& clause, int gold) {
        return predict_correctness(model, featurize(p, clause, gold, provider, cache));
      },
      prompt, batch, threshold);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[8] = {'T', 'O', 'S', 'P', 'X', 'M', '0', '1'};
}

void save_proxy_model(const ProxyModel& model, const std::filesystem::path& path) {
  nlohmann::json header{{"version", 1},
                        {"variant", to_string(model.variant)},
                        {"layout", model.layout.to_json()},
                        {"provider_id", model.provider_id},
                        {"report", model.report.to_json()}};
  if (model.variant == ProxyVariant::Linear) {
    header["weights"] = model.linear.weights.size();
    header["inverse_reg_c"] = model.linear.inverse_reg_c;
  } else {
    header["dims"] = model.mlp.dims;
    header["dropout"] = model.mlp.dropout;
  }
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write model file: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  auto write_doubles = [&](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  if (model.variant == ProxyVariant::Linear) {
    write_doubles(model.linear.weights);
    write_doubles({model.linear.bias});
  } else {
    for (std::size_t l = 0; l < model.mlp.weights.size(); ++l) {
      write_doubles(model.mlp.weights[l]);
      write_doubles(model.mlp.biases[l]);
    }
  }
  if (!out) throw ConfigError("model write failed: " + path.string());
}

ProxyModel load_proxy_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model file: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kModelMagic, sizeof(kModelMagic)) != 0) {
    throw IntegrityError("model file has wrong magic/version: " + path.string());
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    throw IntegrityError("truncated model header: " + path.string());
  }
  std::string header_str(len, '\0');
  if (!in.read(header_str.data(), static_cast<std::streamsize>(len))) {
    throw IntegrityError("truncated model header: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("bad model header: " + std::string(e.what()));
  }

  ProxyModel model;
  model.variant = proxy_variant_from_string(header.at("variant"));
  model.layout = FeatureLayout::from_json(header.at("layout"));
  model.provider_id = header.at("provider_id").get<std::string>();
  model.report = TrainReport::from_json(header.value("report", nlohmann::json::object()));

  auto read_doubles = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    if (!in.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw IntegrityError("truncated model payload: " + path.string());
    }
  };
  if (model.variant == ProxyVariant::Linear) {
    std::size_t d = header.at("weights").get<std::size_t>();
    model.linear.inverse_reg_c = header.at("inverse_reg_c").get<double>();
    read_doubles(model.linear.weights, d);
    std::vector<double> bias;
    read_doubles(bias, 1);
    model.linear.bias = bias[0];
  } else {
    model.mlp.dims = header.at("dims").get<std::vector<std::size_t>>();
    model.mlp.dropout = header.at("dropout").get<double>();
    for (std::size_t l = 0; l + 1 < model.mlp.dims.size(); ++l) {
      std::vector<double> w, b;
      read_doubles(w, model.mlp.dims[l + 1] * model.mlp.dims[l]);
      read_doubles(b, model.mlp.dims[l + 1]);
      model.mlp.weights.push_back(std::move(w));
      model.mlp.biases.push_back(std::move(b));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient-check support
// ---------------------------------------------------------------------------

std::vector<double> flatten_params(const ProxyModel& model) {
  std::vector<double> out;
  if (model.variant == ProxyVariant::Linear) {
    out = model.linear.weights;
    out.push_back(model.linear.bias);
  } else {
    for (std::size_t l = 0; l < model.mlp.weights.size(); ++l) {
      out.insert(out.end(), model.mlp.weights[l].begin(), model.mlp.weights[l].end());
      out.insert(out.end(), model.mlp.biases[l].begin(), model.mlp.biases[l].end());
    }
  }
  return out;
}

void unflatten_params(ProxyModel& model, const std::vector<double>& params) {
  std::size_t pos = 0;
  if (model.variant == ProxyVariant::Linear) {
    if (params.size() != model.linear.weights.size() + 1) {
      throw PreconditionError("unflatten_params: size mismatch");
    }
    std::copy(params.begin(), params.end() - 1, model.linear.weights.begin());
    model.linear.bias = params.back();
    return;
  }
  for (std::size_t l = 0; l < model.mlp.weights.size(); ++l) {
    for (auto& v : model.mlp.weights[l]) v = params.at(pos++);
    for (auto& v : model.mlp.biases[l]) v = params.at(pos++);
  }
  if (pos != params.size()) {
    throw PreconditionError("unflatten_params: size mismatch");
  }
}

double proxy_loss(const ProxyModel& model, const FeatureMatrix& features) {
  if (model.variant == ProxyVariant::Linear) {
    return linear_loss_and_grad(model.linear, features, nullptr, nullptr);
  }
  auto logits = mlp_forward(model.mlp, features.values.data(), features.rows, false, 0, 0,
                            nullptr, nullptr);
  return kernels::bce_loss_sum(logits.data(), features.targets.data(), features.rows) /
         static_cast<double>(features.rows);
}

double proxy_loss_and_grad(const ProxyModel& model, const FeatureMatrix& features,
                           std::vector<double>& grad) {
  if (model.variant == ProxyVariant::Linear) {
    std::vector<double> gw;
    double gb = 0.0;
    double loss = linear_loss_and_grad(model.linear, features, &gw, &gb);
    grad = std::move(gw);
    grad.push_back(gb);
    return loss;
  }
  std::vector<std::vector<double>> inputs, relu_acts;
  auto logits = mlp_forward(model.mlp, features.values.data(), features.rows, false, 0, 0,
                            &inputs, &relu_acts);
  MlpGradients grads = make_gradients(model.mlp);
  double loss = mlp_backward(model.mlp, features.rows, features.targets.data(), logits,
                             inputs, relu_acts, false, 0, 0, grads);
  grad.clear();
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    grad.insert(grad.end(), grads.weights[l].begin(), grads.weights[l].end());
    grad.insert(grad.end(), grads.biases[l].begin(), grads.biases[l].end());
  }
  return loss;
}

}  // namespace tosopt
