#pragma once

// Command-line front end: configuration, ingestion, the detect / simulate /
// compare / evaluate pipelines and result serialization.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "treecpd/csv_io.hpp"
#include "treecpd/edge_dynamics.hpp"
#include "treecpd/errors.hpp"
#include "treecpd/marginals.hpp"
#include "treecpd/segment_likelihood.hpp"
#include "treecpd/segmentation_dp.hpp"
#include "treecpd/simulate.hpp"
#include "treecpd/tree_algebra.hpp"

namespace treecpd::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "treecpd 1.0.0";
inline constexpr const char* kOutputDirEnv = "TREECPD_OUTPUT_DIR";

enum ExitCode { ok = 0, other_failure = 1, ingestion_failure = 2, config_failure = 3, numerical_failure = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ingestion:
      return ingestion_failure;
    case ErrorKind::configuration:
      return config_failure;
    case ErrorKind::numerical:
      return numerical_failure;
  }
  return other_failure;
}

// Every field has a default; unset optionals are resolved from the data.
struct RunConfig {
  // inputs
  std::vector<std::string> data;  // CSV files, or one directory of CSV files
  bool standardize = false;
  // prior on the continuous parameters
  std::optional<double> alpha;  // default p + 10
  std::string phi = "identity";  // identity: (alpha-p-1) I | data: from sample covariance | path to p x p CSV
  std::string mean_mode = "zero";
  double kappa0 = 1.0;
  std::vector<double> mu0;  // empty: zero vector
  std::string backend = "tree";
  std::optional<double> temper_alpha;  // default 1, or U with U replicates
  // segmentation prior
  Index min_length = 1;
  std::string segment_weights;  // CSV of (s, t, weight); missing segments weigh 1
  std::string k_prior = "poisson";
  double k_gamma = 4.0;
  Index k_max = 10;
  // structure
  std::string edge_prior = "uniform";  // or path to p x p CSV of positive weights
  Index edge_time_k = 0;               // 0 off, -1 use the posterior mode of K, else that K
  double edge_mass_floor = 1e-12;
  std::vector<Index> change_points;  // fixed segmentation for compare
  std::vector<double> lambda{0.25, 0.5, 0.25};
  double pi = 0.5;
  // simulation
  std::string structure = "tree";
  std::optional<double> p_connect;  // default 2 / p
  Index n = 210;
  Index p = 10;
  std::vector<double> fractions{3.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0};
  std::uint64_t seed = 1;
  Index replicates = 1;
  // evaluation
  std::string results;
  std::string truth;
  double local_max_floor = 0.05;
  Index tolerance = 3;
  // execution
  int threads = 1;
  std::string output_dir = "treecpd_out";
};

namespace detail {

template <typename T>
void put(json& j, const char* key, const T& v) {
  j[key] = v;
}
template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v)
    j[key] = *v;
  else
    j[key] = nullptr;
}
template <typename T>
void get(const json& j, const char* key, T& v) {
  v = j.get<T>();
  (void)key;
}
template <typename T>
void get(const json& j, const char* key, std::optional<T>& v) {
  if (j.is_null())
    v.reset();
  else
    v = j.get<T>();
  (void)key;
}

template <typename Cfg, typename F>
void visit_fields(Cfg& c, F&& f) {
  f("data", c.data);
  f("standardize", c.standardize);
  f("alpha", c.alpha);
  f("phi", c.phi);
  f("mean_mode", c.mean_mode);
  f("kappa0", c.kappa0);
  f("mu0", c.mu0);
  f("backend", c.backend);
  f("temper_alpha", c.temper_alpha);
  f("min_length", c.min_length);
  f("segment_weights", c.segment_weights);
  f("k_prior", c.k_prior);
  f("k_gamma", c.k_gamma);
  f("k_max", c.k_max);
  f("edge_prior", c.edge_prior);
  f("edge_time_k", c.edge_time_k);
  f("edge_mass_floor", c.edge_mass_floor);
  f("change_points", c.change_points);
  f("lambda", c.lambda);
  f("pi", c.pi);
  f("structure", c.structure);
  f("p_connect", c.p_connect);
  f("n", c.n);
  f("p", c.p);
  f("fractions", c.fractions);
  f("seed", c.seed);
  f("replicates", c.replicates);
  f("results", c.results);
  f("truth", c.truth);
  f("local_max_floor", c.local_max_floor);
  f("tolerance", c.tolerance);
  f("threads", c.threads);
  f("output_dir", c.output_dir);
}

}  // namespace detail

inline json config_to_json(const RunConfig& cfg) {
  json j = json::object();
  detail::visit_fields(cfg, [&](const char* key, const auto& v) { detail::put(j, key, v); });
  return j;
}

// Applies the keys present in `j` on top of `cfg`; unknown keys are errors.
inline void apply_config_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  std::set<std::string> known;
  detail::visit_fields(cfg, [&](const char* key, auto&) { known.insert(key); });
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
  detail::visit_fields(cfg, [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      detail::get(j.at(key), key, field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("configuration key '") + key + "': " + e.what());
    }
  });
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("configuration file '" + path + "': " + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

struct Log {
  std::vector<std::string> warnings;
  bool quiet = false;
  void warn(const std::string& w) {
    warnings.push_back(w);
    if (!quiet) std::cerr << "warning: " << w << "\n";
  }
};

// ---------------------------------------------------------------- ingestion

inline std::vector<std::string> resolve_data_paths(const std::vector<std::string>& data) {
  if (data.empty()) throw ConfigError("no input data given");
  if (data.size() == 1 && fs::is_directory(data.front())) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(data.front()))
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IngestionError("directory '" + data.front() + "' holds no .csv files");
    return files;
  }
  return data;
}

inline std::vector<Dataset> load_datasets(const RunConfig& cfg) {
  std::vector<Dataset> out;
  for (const auto& path : resolve_data_paths(cfg.data)) out.push_back(read_dataset_csv(path));
  for (size_t u = 1; u < out.size(); ++u)
    if (out[u].length() != out[0].length() || out[u].dim() != out[0].dim()) {
      std::ostringstream os;
      os << "replicate '" << out[u].replicate_id << "' is " << out[u].length() << " x " << out[u].dim()
         << " but '" << out[0].replicate_id << "' is " << out[0].length() << " x " << out[0].dim();
      throw IngestionError(os.str());
    }
  return out;
}

// Column-wise z-scores with mean and variance pooled over all replicates.
inline void standardize_pooled(std::vector<Dataset>& sets) {
  const Index p = sets.front().dim();
  for (Index c = 0; c < p; ++c) {
    double sum = 0.0;
    double count = 0.0;
    for (const auto& d : sets) {
      sum += d.values.col(c).sum();
      count += static_cast<double>(d.length());
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& d : sets) ss += (d.values.col(c).array() - mean).square().sum();
    const double sd = std::sqrt(ss / (count - 1.0));
    if (!(sd > 0.0)) {
      std::ostringstream os;
      os << "cannot standardize: column " << c + 1 << " is constant";
      throw IngestionError(os.str());
    }
    for (auto& d : sets) d.values.col(c) = (d.values.col(c).array() - mean) / sd;
  }
}

inline EdgeWeightMatrix load_edge_prior(const std::string& spec, Index p) {
  if (spec == "uniform") return EdgeWeightMatrix::uniform(p);
  const Eigen::MatrixXd w = read_matrix_csv(spec);
  if (w.rows() != p || w.cols() != p) {
    std::ostringstream os;
    os << "edge prior '" << spec << "' must be " << p << " x " << p;
    throw ConfigError(os.str());
  }
  return EdgeWeightMatrix::from_weights(w);
}

inline SegmentPrior load_segment_prior(const RunConfig& cfg, Index n) {
  SegmentPrior sp;
  sp.min_length = cfg.min_length;
  if (!cfg.segment_weights.empty()) {
    const Eigen::MatrixXd tab = read_matrix_csv(cfg.segment_weights);
    if (tab.cols() != 3) throw ConfigError("segment weights need three columns (s, t, weight)");
    for (Index r = 0; r < tab.rows(); ++r) {
      const double s = tab(r, 0), t = tab(r, 1), w = tab(r, 2);
      if (s != std::floor(s) || t != std::floor(t) || s < 1 || t > static_cast<double>(n + 1) || s >= t) {
        std::ostringstream os;
        os << "segment weights row " << r + 1 << ": need integers 1 <= s < t <= N+1 = " << n + 1;
        throw ConfigError(os.str());
      }
      if (!(w >= 0.0) || !std::isfinite(w)) {
        std::ostringstream os;
        os << "segment weights row " << r + 1 << ": weight must be finite and >= 0";
        throw ConfigError(os.str());
      }
      sp.custom_log_weight[{static_cast<Index>(s), static_cast<Index>(t)}] = w > 0.0 ? std::log(w) : kNegInf;
    }
  }
  sp.validate();
  return sp;
}

inline KPrior make_k_prior(const RunConfig& cfg) {
  KPrior kp;
  if (cfg.k_prior == "poisson")
    kp.kind = KPrior::Kind::truncated_poisson;
  else if (cfg.k_prior == "uniform")
    kp.kind = KPrior::Kind::uniform;
  else
    throw ConfigError("k_prior must be 'poisson' or 'uniform'");
  kp.gamma = cfg.k_gamma;
  kp.k_max = cfg.k_max;
  kp.validate();
  return kp;
}

// Data and model shared by detect and compare.
struct PreparedModel {
  std::vector<Dataset> datasets;
  std::unique_ptr<SegmentModel> model;
  RunConfig resolved;
};

inline PreparedModel prepare_model(const RunConfig& cfg, Log& log) {
  PreparedModel out;
  out.resolved = cfg;
  out.datasets = load_datasets(cfg);
  if (cfg.standardize) standardize_pooled(out.datasets);
  const Index p = out.datasets.front().dim();
  const Index U = static_cast<Index>(out.datasets.size());
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");

  const double alpha = cfg.alpha.value_or(static_cast<double>(p) + 10.0);
  out.resolved.alpha = alpha;
  PriorSpec prior;
  if (cfg.phi == "identity") {
    prior.alpha = alpha;
    if (!(alpha > static_cast<double>(p) + 1.0))
      throw ConfigError("phi = identity scaling (alpha - p - 1) needs alpha > p + 1");
    prior.phi = Eigen::MatrixXd::Identity(p, p) * (alpha - static_cast<double>(p) - 1.0);
  } else if (cfg.phi == "data") {
    // Centre every replicate, then pool for the sample covariance.
    Dataset pooled;
    pooled.values.resize(out.datasets.front().length() * U, p);
    for (Index u = 0; u < U; ++u) {
      auto& d = out.datasets[static_cast<size_t>(u)];
      d.values.rowwise() -= d.values.colwise().mean();
      pooled.values.middleRows(u * d.length(), d.length()) = d.values;
    }
    prior = data_driven_prior(pooled, alpha).prior;
  } else {
    prior.alpha = alpha;
    prior.phi = read_matrix_csv(cfg.phi);
    if (prior.phi.rows() != p || prior.phi.cols() != p) {
      std::ostringstream os;
      os << "phi matrix '" << cfg.phi << "' must be " << p << " x " << p;
      throw ConfigError(os.str());
    }
  }
  if (cfg.mean_mode == "zero")
    prior.mean_mode = MeanMode::zero;
  else if (cfg.mean_mode == "unknown")
    prior.mean_mode = MeanMode::unknown;
  else
    throw ConfigError("mean_mode must be 'zero' or 'unknown'");
  prior.kappa0 = cfg.kappa0;
  if (!cfg.mu0.empty()) prior.mu0 = Eigen::Map<const Eigen::VectorXd>(cfg.mu0.data(), static_cast<Index>(cfg.mu0.size()));
  if (cfg.backend == "tree")
    prior.backend = Backend::tree;
  else if (cfg.backend == "full")
    prior.backend = Backend::full;
  else
    throw ConfigError("backend must be 'tree' or 'full'");
  prior.temper_alpha = cfg.temper_alpha.value_or(static_cast<double>(U));
  out.resolved.temper_alpha = prior.temper_alpha;
  if (U > 1 && !cfg.temper_alpha)
    log.warn("replicate mode with " + std::to_string(U) + " datasets: likelihood tempered with temper_alpha = " +
             std::to_string(U) + " by default");
  prior.validate();

  std::vector<CumulativeStats> stats;
  for (const auto& d : out.datasets) stats.emplace_back(d);
  out.model = std::make_unique<SegmentModel>(std::move(stats), prior, load_edge_prior(cfg.edge_prior, p));
  return out;
}

inline fs::path resolve_output_dir(const RunConfig& cfg) {
  fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

inline json vector_from(const Eigen::VectorXd& v, Index from) {
  json a = json::array();
  for (Index k = from; k < v.size(); ++k) a.push_back(std::isfinite(v(k)) ? json(v(k)) : json(nullptr));
  return a;
}

// ---------------------------------------------------------------- detect

struct DetectResult {
  PosteriorSummary summary;
  Segmentation map;
  Index k_max_used = 0;
  std::optional<EdgeTimeTensor> edge_time;
  std::vector<std::string> warnings;
  json summary_json;
};

inline DetectResult cmd_detect(const RunConfig& cfg_in, bool quiet = false) {
  Log log;
  log.quiet = quiet;
  PreparedModel pm = prepare_model(cfg_in, log);
  RunConfig& cfg = pm.resolved;
  const SegmentModel& model = *pm.model;
  const Index n = model.length();
  const Index p = model.dim();
  const fs::path dir = resolve_output_dir(cfg);

  const KPrior kprior = make_k_prior(cfg);
  const SegmentPrior seg_prior = load_segment_prior(cfg, n);
  const double temper = model.prior().temper_alpha;
  const Index k_cap = std::min(cfg.k_max, n);
  const Index k_used = max_admissible_segments(weight_matrix(seg_prior, n, temper), k_cap);
  if (k_used < 1) throw ConfigError("no admissible segmentation of the series under the segment prior");
  if (k_used < cfg.k_max) {
    std::ostringstream os;
    os << "K_max = " << cfg.k_max << " exceeds the largest admissible number of segments; using K_max = " << k_used;
    log.warn(os.str());
    cfg.k_max = k_used;
  }

  const SegmentLikelihoodMatrix log_A = model.build_A(seg_prior, cfg.threads);
  const DPTables tab = dp_tables(log_A, seg_prior, k_used, temper);
  KPrior kp_used = kprior;
  kp_used.k_max = k_used;

  DetectResult res;
  res.k_max_used = k_used;
  res.summary = summarize(tab, kp_used);
  const auto& sum = res.summary;
  res.map = sum.map_by_K[static_cast<size_t>(sum.K_hat_2 - 1)];

  if (cfg.edge_time_k != 0) {
    if (model.prior().backend != Backend::tree) throw ConfigError("the edge-time sweep needs the tree backend");
    const Index K = cfg.edge_time_k < 0 ? sum.K_hat_1 : cfg.edge_time_k;
    if (K < 1 || K > k_used) throw ConfigError("edge_time_k is outside 1..K_max");
    res.edge_time = edge_prob_over_time(sum.segments[static_cast<size_t>(K - 1)], model, cfg.edge_mass_floor,
                                        cfg.threads);
    for (const auto& w : res.edge_time->warnings) log.warn(w);
  }

  // tables
  {
    CsvWriter w((dir / "segment_loglik.csv").string());
    w.header({"s", "t", "log_A"});
    for (Index s = 1; s <= n; ++s)
      for (Index t = s + 1; t <= n + 1; ++t) {
        const double v = log_A(s, t);
        if (v == kNegInf) continue;
        w.cell(static_cast<long long>(s)).cell(static_cast<long long>(t)).cell(v);
        w.end_row();
      }
    w.close();
  }
  {
    CsvWriter w((dir / "changepoints.csv").string());
    std::vector<std::string> cols{"t", "B"};
    for (Index K = 1; K <= k_used; ++K) cols.push_back("B_K" + std::to_string(K));
    w.header(cols);
    if (k_used >= 2)
      for (Index t = 2; t <= n; ++t) {
        w.cell(static_cast<long long>(t)).cell(sum.B(t));
        for (Index K = 1; K <= k_used; ++K) w.cell(sum.changepoints[static_cast<size_t>(K - 1)].total(t));
        w.end_row();
      }
    w.close();
  }
  {
    CsvWriter w((dir / "changepoints_by_k.csv").string());
    w.header({"K", "k", "t", "prob"});
    for (Index K = 2; K <= k_used; ++K)
      for (Index k = 1; k < K; ++k)
        for (Index t = 2; t <= n; ++t) {
          w.cell(static_cast<long long>(K)).cell(static_cast<long long>(k)).cell(static_cast<long long>(t));
          w.cell(sum.changepoints[static_cast<size_t>(K - 1)].by_k[static_cast<size_t>(k - 1)](t));
          w.end_row();
        }
    w.close();
  }
  {
    CsvWriter w((dir / "segments.csv").string());
    w.header({"K", "s", "t", "prob"});
    for (Index K = 1; K <= k_used; ++K) {
      const auto& sp = sum.segments[static_cast<size_t>(K - 1)];
      for (Index s = 1; s <= n; ++s)
        for (Index t = s + 1; t <= n + 1; ++t) {
          const double v = sp(s, t);
          if (v <= 0.0) continue;
          w.cell(static_cast<long long>(K)).cell(static_cast<long long>(s)).cell(static_cast<long long>(t)).cell(v);
          w.end_row();
        }
    }
    w.close();
  }
  if (model.prior().backend == Backend::tree) {
    CsvWriter w((dir / "map_edges.csv").string());
    w.header({"segment", "s", "t", "i", "j", "prob"});
    const auto bounds = res.map.boundaries(n);
    for (size_t k = 0; k + 1 < bounds.size(); ++k) {
      const Eigen::MatrixXd probs = model.segment_edge_posterior(bounds[k], bounds[k + 1]);
      for (Index i = 0; i < p; ++i)
        for (Index j = i + 1; j < p; ++j) {
          w.cell(static_cast<long long>(k + 1)).cell(static_cast<long long>(bounds[k]));
          w.cell(static_cast<long long>(bounds[k + 1])).cell(static_cast<long long>(i + 1));
          w.cell(static_cast<long long>(j + 1)).cell(probs(i, j));
          w.end_row();
        }
    }
    w.close();
  }
  if (res.edge_time) {
    CsvWriter w((dir / "edge_time.csv").string());
    w.header({"K", "t", "i", "j", "prob"});
    for (Index t = 1; t <= n; ++t)
      for (Index i = 0; i < p; ++i)
        for (Index j = i + 1; j < p; ++j) {
          w.cell(static_cast<long long>(res.edge_time->K)).cell(static_cast<long long>(t));
          w.cell(static_cast<long long>(i + 1)).cell(static_cast<long long>(j + 1));
          w.cell(res.edge_time->probs[static_cast<size_t>(t)](i, j));
          w.end_row();
        }
    w.close();
  }

  json j;
  j["version"] = kVersion;
  j["command"] = "detect";
  j["N"] = n;
  j["p"] = p;
  j["replicates"] = model.replicate_count();
  j["K_max"] = k_used;
  j["log_evidence_by_K"] = vector_from(sum.log_evidence_by_K, 1);
  j["log_C_by_K"] = vector_from(sum.log_C_by_K, 1);
  j["posterior_K"] = vector_from(sum.posterior_K, 1);
  j["K_hat_1"] = sum.K_hat_1;
  j["K_hat_2"] = sum.K_hat_2;
  j["map"] = {{"K", res.map.segments()}, {"change_points", res.map.change_points},
              {"log_joint", sum.map_log_joint_by_K(sum.K_hat_2)}};
  json maps = json::array();
  for (Index K = 1; K <= k_used; ++K) {
    const auto& m = sum.map_by_K[static_cast<size_t>(K - 1)];
    maps.push_back({{"K", K}, {"change_points", m.change_points}, {"log_joint", sum.map_log_joint_by_K(K)}});
  }
  j["map_by_K"] = maps;
  if (res.edge_time) {
    j["edge_time"] = {{"K", res.edge_time->K},
                      {"evaluated_segments", res.edge_time->evaluated_segments},
                      {"skipped_mass", res.edge_time->skipped_mass}};
  }
  j["warnings"] = log.warnings;
  j["config"] = config_to_json(cfg);
  write_json(dir / "summary.json", j);
  res.warnings = log.warnings;
  res.summary_json = std::move(j);
  return res;
}

// ---------------------------------------------------------------- simulate

inline Scenario make_scenario(const RunConfig& cfg) {
  Scenario sc;
  if (cfg.structure == "tree")
    sc.structure = StructureKind::uniform_tree;
  else if (cfg.structure == "erdos-renyi")
    sc.structure = StructureKind::erdos_renyi;
  else
    throw ConfigError("structure must be 'tree' or 'erdos-renyi'");
  sc.n = cfg.n;
  sc.p = cfg.p;
  sc.p_connect = cfg.p_connect.value_or(2.0 / static_cast<double>(cfg.p));
  sc.fractions = cfg.fractions;
  sc.seed = cfg.seed;
  if (cfg.n < 2) throw ConfigError("N must be >= 2");
  if (cfg.p < 2) throw ConfigError("p must be >= 2");
  if (sc.structure == StructureKind::erdos_renyi && !(sc.p_connect > 0.0 && sc.p_connect <= 1.0))
    throw ConfigError("p_connect must lie in (0, 1]");
  return sc;
}

inline json truth_to_json(const GroundTruth& truth) {
  json j;
  j["change_points"] = truth.change_points;
  json adj = json::array();
  json prec = json::array();
  for (size_t k = 0; k < truth.adjacency_by_segment.size(); ++k) {
    const auto& a = truth.adjacency_by_segment[k];
    const auto& l = truth.precision_by_segment[k];
    json ar = json::array();
    json lr = json::array();
    for (Index i = 0; i < a.rows(); ++i) {
      std::vector<int> row(static_cast<size_t>(a.cols()));
      std::vector<double> lrow(static_cast<size_t>(a.cols()));
      for (Index c = 0; c < a.cols(); ++c) {
        row[static_cast<size_t>(c)] = a(i, c);
        lrow[static_cast<size_t>(c)] = l(i, c);
      }
      ar.push_back(row);
      lr.push_back(lrow);
    }
    adj.push_back(ar);
    prec.push_back(lr);
  }
  j["adjacency_by_segment"] = adj;
  j["precision_by_segment"] = prec;
  return j;
}

inline GroundTruth truth_from_json(const json& j) {
  GroundTruth truth;
  try {
    truth.change_points = j.at("change_points").get<std::vector<Index>>();
    for (const auto& seg : j.at("adjacency_by_segment")) {
      const Index p = static_cast<Index>(seg.size());
      Adjacency a(p, p);
      for (Index i = 0; i < p; ++i) {
        if (static_cast<Index>(seg[static_cast<size_t>(i)].size()) != p) throw IngestionError("adjacency is not square");
        for (Index c = 0; c < p; ++c) a(i, c) = seg[static_cast<size_t>(i)][static_cast<size_t>(c)].get<int>();
      }
      truth.adjacency_by_segment.push_back(a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("malformed truth file: ") + e.what());
  }
  if (truth.adjacency_by_segment.size() != truth.change_points.size() + 1)
    throw IngestionError("truth file: need one adjacency matrix per segment");
  return truth;
}

inline GroundTruth load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open truth file '" + path + "'");
  try {
    return truth_from_json(json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("truth file '" + path + "': " + e.what());
  }
}

// Writes data.csv (or replicates/rep_XXX.csv) and truth.json.
inline std::pair<std::vector<Dataset>, GroundTruth> cmd_simulate(const RunConfig& cfg) {
  const Scenario sc = make_scenario(cfg);
  if (cfg.replicates < 1) throw ConfigError("replicates must be >= 1");
  const fs::path dir = resolve_output_dir(cfg);
  std::vector<Dataset> sets;
  GroundTruth truth;
  for (Index u = 0; u < cfg.replicates; ++u) {
    auto [data, t] = generate_dataset(sc, static_cast<std::uint64_t>(u));
    if (u == 0) truth = std::move(t);
    sets.push_back(std::move(data));
  }
  if (cfg.replicates == 1) {
    write_dataset_csv((dir / "data.csv").string(), sets.front());
  } else {
    fs::create_directories(dir / "replicates");
    for (Index u = 0; u < cfg.replicates; ++u) {
      char name[32];
      std::snprintf(name, sizeof name, "rep_%03lld.csv", static_cast<long long>(u + 1));
      write_dataset_csv((dir / "replicates" / name).string(), sets[static_cast<size_t>(u)]);
    }
  }
  write_json(dir / "truth.json", truth_to_json(truth));
  json j;
  j["version"] = kVersion;
  j["command"] = "simulate";
  j["change_points"] = truth.change_points;
  RunConfig echo = cfg;
  echo.p_connect = sc.p_connect;
  j["config"] = config_to_json(echo);
  write_json(dir / "summary.json", j);
  return {std::move(sets), std::move(truth)};
}

// ---------------------------------------------------------------- compare

struct CompareResult {
  EdgeStatusResult edge_status;
  StructureComparisonPosterior structure;
  std::vector<std::string> warnings;
};

inline CompareResult cmd_compare(const RunConfig& cfg_in, bool quiet = false) {
  Log log;
  log.quiet = quiet;
  if (cfg_in.lambda.size() != 3) throw ConfigError("lambda needs three values (absent, mixed, present)");
  const StatusTriple lambda{cfg_in.lambda[0], cfg_in.lambda[1], cfg_in.lambda[2]};
  validate_status_prior(lambda);
  if (!(cfg_in.pi > 0.0 && cfg_in.pi < 1.0)) throw ConfigError("pi must lie in (0, 1)");
  PreparedModel pm = prepare_model(cfg_in, log);
  const RunConfig& cfg = pm.resolved;
  if (pm.model->prior().backend != Backend::tree) throw ConfigError("structure comparison needs the tree backend");
  const fs::path dir = resolve_output_dir(cfg);

  CompareResult res;
  res.edge_status = edge_status_comparison(*pm.model, cfg.change_points, lambda);
  res.structure = structure_comparison(*pm.model, cfg.change_points, cfg.pi);
  for (const auto& w : res.edge_status.warnings) log.warn(w);
  for (const auto& w : res.structure.warnings) log.warn(w);

  CsvWriter w((dir / "edge_status.csv").string());
  w.header({"i", "j", "prior_q_absent", "prior_q_mixed", "prior_q_present", "post_q_absent", "post_q_mixed",
            "post_q_present", "prob_absent", "prob_mixed", "prob_present"});
  for (const auto& e : res.edge_status.edges) {
    w.cell(static_cast<long long>(e.i + 1)).cell(static_cast<long long>(e.j + 1));
    w.cell(e.prior_q.absent).cell(e.prior_q.mixed).cell(e.prior_q.present);
    w.cell(e.posterior_q.absent).cell(e.posterior_q.mixed).cell(e.posterior_q.present);
    w.cell(e.posterior.absent).cell(e.posterior.mixed).cell(e.posterior.present);
    w.end_row();
  }
  w.close();

  json j;
  j["version"] = kVersion;
  j["command"] = "compare";
  j["N"] = pm.model->length();
  j["p"] = pm.model->dim();
  j["change_points"] = cfg.change_points;
  j["structure"] = {{"pi", res.structure.pi},
                    {"pi_star", res.structure.pi_star},
                    {"log_q0", res.structure.log_q0},
                    {"log_q", res.structure.log_q},
                    {"trivial", res.structure.trivial}};
  j["edge_status_trivial"] = res.edge_status.trivial;
  j["warnings"] = log.warnings;
  j["config"] = config_to_json(cfg);
  write_json(dir / "summary.json", j);
  res.warnings = log.warnings;
  return res;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateResult {
  std::vector<std::pair<Index, double>> auc_by_time;
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  double mean_midpoint_auc = std::numeric_limits<double>::quiet_NaN();
  std::vector<Index> local_maxima;
  std::vector<Index> localization_error;  // -1 when no local maximum exists
  Index K_true = 0;
  Index K_hat_1 = 0;
  Index K_hat_2 = 0;
  std::vector<std::string> warnings;
};

inline EvaluateResult cmd_evaluate(const RunConfig& cfg, bool quiet = false) {
  Log log;
  log.quiet = quiet;
  if (cfg.results.empty() || cfg.truth.empty()) throw ConfigError("evaluate needs --results and --truth");
  const fs::path rdir(cfg.results);
  const fs::path truth_path = fs::is_directory(cfg.truth) ? fs::path(cfg.truth) / "truth.json" : fs::path(cfg.truth);
  const GroundTruth truth = load_truth(truth_path.string());
  const fs::path dir = resolve_output_dir(cfg);

  json summary;
  {
    std::ifstream in(rdir / "summary.json");
    if (!in) throw IngestionError("cannot open '" + (rdir / "summary.json").string() + "'");
    try {
      summary = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(std::string("result summary: ") + e.what());
    }
  }
  const Index n = summary.at("N").get<Index>();
  const Index p = summary.at("p").get<Index>();
  const Index tp = truth.adjacency_by_segment.front().rows();
  if (tp != p) {
    std::ostringstream os;
    os << "results have p = " << p << " but the truth has p = " << tp;
    throw IngestionError(os.str());
  }
  for (Index c : truth.change_points)
    if (c < 2 || c > n) throw IngestionError("truth change-points fall outside 2..N of the results");

  EvaluateResult res;
  res.K_true = static_cast<Index>(truth.change_points.size()) + 1;
  res.K_hat_1 = summary.at("K_hat_1").get<Index>();
  res.K_hat_2 = summary.at("K_hat_2").get<Index>();

  // Change-point localization from B(t).
  Eigen::VectorXd B = Eigen::VectorXd::Zero(n + 2);
  {
    const CsvTable cp = read_csv_table((rdir / "changepoints.csv").string());
    for (Index r = 0; r < cp.values.rows(); ++r) {
      const Index t = static_cast<Index>(cp.values(r, 0));
      if (t < 2 || t > n) throw IngestionError("changepoints.csv: time index out of range");
      B(t) = cp.values(r, 1);
    }
  }
  res.local_maxima = local_maxima(B, n, cfg.local_max_floor);
  res.localization_error = localization_errors(truth.change_points, res.local_maxima);
  if (res.local_maxima.empty()) log.warn("B(t) has no local maximum above the floor");

  // AUC per time-point from the edge-time tensor.
  const fs::path et = rdir / "edge_time.csv";
  if (fs::exists(et)) {
    const CsvTable tab = read_csv_table(et.string());
    std::vector<Eigen::MatrixXd> scores(static_cast<size_t>(n + 1), Eigen::MatrixXd::Zero(p, p));
    for (Index r = 0; r < tab.values.rows(); ++r) {
      const Index t = static_cast<Index>(tab.values(r, 1));
      const Index i = static_cast<Index>(tab.values(r, 2)) - 1;
      const Index j = static_cast<Index>(tab.values(r, 3)) - 1;
      if (t < 1 || t > n || i < 0 || j < 0 || i >= p || j >= p) throw IngestionError("edge_time.csv: index out of range");
      scores[static_cast<size_t>(t)](i, j) = scores[static_cast<size_t>(t)](j, i) = tab.values(r, 4);
    }
    double total = 0.0;
    bool undefined = false;
    for (Index t = 1; t <= n; ++t) {
      try {
        const double a = auc_roc(scores[static_cast<size_t>(t)],
                                 truth.adjacency_by_segment[static_cast<size_t>(truth.segment_at(t))]);
        res.auc_by_time.emplace_back(t, a);
        total += a;
      } catch (const ConfigError&) {
        undefined = true;
      }
    }
    if (undefined) log.warn("AUC undefined at some time-points (true graph complete or empty)");
    if (!res.auc_by_time.empty()) res.mean_auc = total / static_cast<double>(res.auc_by_time.size());
    const auto bounds = [&] {
      std::vector<Index> b{1};
      b.insert(b.end(), truth.change_points.begin(), truth.change_points.end());
      b.push_back(n + 1);
      return b;
    }();
    double mid_total = 0.0;
    Index mid_count = 0;
    for (size_t k = 0; k + 1 < bounds.size(); ++k) {
      const Index mid = (bounds[k] + bounds[k + 1] - 1) / 2;
      for (const auto& [t, a] : res.auc_by_time)
        if (t == mid) {
          mid_total += a;
          ++mid_count;
        }
    }
    if (mid_count > 0) res.mean_midpoint_auc = mid_total / static_cast<double>(mid_count);
    CsvWriter w((dir / "auc_by_time.csv").string());
    w.header({"t", "auc"});
    for (const auto& [t, a] : res.auc_by_time) {
      w.cell(static_cast<long long>(t)).cell(a);
      w.end_row();
    }
    w.close();
  } else {
    log.warn("no edge_time.csv in the results: AUC skipped");
  }

  {
    CsvWriter w((dir / "localization.csv").string());
    w.header({"change_point", "nearest_local_max", "distance"});
    for (size_t k = 0; k < truth.change_points.size(); ++k) {
      const Index c = truth.change_points[k];
      const Index d = res.localization_error[k];
      w.cell(static_cast<long long>(c));
      if (d < 0) {
        w.cell(std::string_view("")).cell(std::string_view(""));
      } else {
        Index nearest = 0;
        for (Index m : res.local_maxima)
          if ((m > c ? m - c : c - m) == d) {
            nearest = m;
            break;
          }
        w.cell(static_cast<long long>(nearest)).cell(static_cast<long long>(d));
      }
      w.end_row();
    }
    w.close();
  }

  json j;
  j["version"] = kVersion;
  j["command"] = "evaluate";
  j["K_true"] = res.K_true;
  j["K_hat_1"] = res.K_hat_1;
  j["K_hat_2"] = res.K_hat_2;
  j["K_hat_1_correct"] = res.K_hat_1 == res.K_true;
  j["K_hat_2_correct"] = res.K_hat_2 == res.K_true;
  j["local_maxima"] = res.local_maxima;
  Index hits = 0;
  json errs = json::array();
  for (Index d : res.localization_error) {
    errs.push_back(d < 0 ? json(nullptr) : json(d));
    if (d >= 0 && d <= cfg.tolerance) ++hits;
  }
  j["localization_error"] = errs;
  j["change_points_recovered"] = hits;
  j["tolerance"] = cfg.tolerance;
  j["mean_auc"] = std::isfinite(res.mean_auc) ? json(res.mean_auc) : json(nullptr);
  j["mean_midpoint_auc"] = std::isfinite(res.mean_midpoint_auc) ? json(res.mean_midpoint_auc) : json(nullptr);
  j["warnings"] = log.warnings;
  j["config"] = config_to_json(cfg);
  write_json(dir / "evaluation.json", j);
  res.warnings = log.warnings;
  return res;
}

// ---------------------------------------------------------------- entry point

namespace detail {

// Flag values land in private holders and are copied over the config-file
// values only when the flag was given.
class Binder {
 public:
  template <typename T>
  CLI::Option* option(CLI::App& app, const std::string& name, T RunConfig::*field, const std::string& desc) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app.add_option(name, *holder, desc);
    apply_.push_back([opt, holder, field](RunConfig& c) {
      if (opt->count() > 0) c.*field = *holder;
    });
    return opt;
  }
  template <typename T>
  CLI::Option* option(CLI::App& app, const std::string& name, std::optional<T> RunConfig::*field,
                      const std::string& desc) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app.add_option(name, *holder, desc);
    apply_.push_back([opt, holder, field](RunConfig& c) {
      if (opt->count() > 0) c.*field = *holder;
    });
    return opt;
  }
  CLI::Option* flag(CLI::App& app, const std::string& name, bool RunConfig::*field, const std::string& desc) {
    auto holder = std::make_shared<bool>(false);
    CLI::Option* opt = app.add_flag(name, *holder, desc);
    apply_.push_back([opt, holder, field](RunConfig& c) {
      if (opt->count() > 0) c.*field = *holder;
    });
    return opt;
  }
  void apply(RunConfig& c) const {
    for (const auto& f : apply_) f(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> apply_;
};

inline void add_model_options(CLI::App& app, Binder& b) {
  b.option(app, "data", &RunConfig::data, "CSV file(s), or one directory of replicate CSV files");
  b.flag(app, "--standardize", &RunConfig::standardize, "Z-score every column (pooled over replicates)");
  b.option(app, "--alpha", &RunConfig::alpha, "Prior degrees of freedom (default p + 10)");
  b.option(app, "--phi", &RunConfig::phi, "Prior scale: identity | data | path to p x p CSV");
  b.option(app, "--mean-mode", &RunConfig::mean_mode, "zero | unknown");
  b.option(app, "--kappa0", &RunConfig::kappa0, "Prior precision scale of the mean (unknown-mean mode)");
  b.option(app, "--mu0", &RunConfig::mu0, "Prior mean (comma separated, unknown-mean mode)")->delimiter(',');
  b.option(app, "--backend", &RunConfig::backend, "tree | full");
  b.option(app, "--temper-alpha", &RunConfig::temper_alpha, "Likelihood tempering exponent (default: replicate count)");
  b.option(app, "--edge-prior", &RunConfig::edge_prior, "uniform | path to p x p CSV of edge weights");
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Exact Bayesian change-point detection with tree-structured Gaussian graphical models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string config_path;
  detail::Binder b;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file (flags take precedence)");
    b.option(*sub, "--output-dir,-o", &RunConfig::output_dir, "Output directory (env " + std::string(kOutputDirEnv) + ")");
    b.option(*sub, "--threads", &RunConfig::threads, "Worker threads");
  };

  CLI::App* detect = app.add_subcommand("detect", "Posterior over segmentations and structures");
  add_common(detect);
  detail::add_model_options(*detect, b);
  b.option(*detect, "--min-length", &RunConfig::min_length, "Minimum segment length");
  b.option(*detect, "--segment-weights", &RunConfig::segment_weights, "CSV of (s, t, weight) prior segment weights");
  b.option(*detect, "--k-prior", &RunConfig::k_prior, "poisson | uniform");
  b.option(*detect, "--gamma", &RunConfig::k_gamma, "Poisson rate of the K prior");
  b.option(*detect, "--k-max", &RunConfig::k_max, "Largest number of segments");
  b.option(*detect, "--edge-k", &RunConfig::edge_time_k, "Edge-time sweep: 0 off, -1 posterior mode of K, else K");
  b.option(*detect, "--edge-mass-floor", &RunConfig::edge_mass_floor, "Skip segments with less posterior mass");

  CLI::App* compare = app.add_subcommand("compare", "Edge-status and structure comparison for a fixed segmentation");
  add_common(compare);
  detail::add_model_options(*compare, b);
  b.option(*compare, "--change-points", &RunConfig::change_points, "Sorted change-points (comma separated)")
      ->delimiter(',');
  b.option(*compare, "--lambda", &RunConfig::lambda, "Edge-status prior (absent, mixed, present)")->delimiter(',');
  b.option(*compare, "--pi", &RunConfig::pi, "Prior probability that all segments share one tree");

  CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic series with changing graphs");
  add_common(simulate);
  b.option(*simulate, "--structure", &RunConfig::structure, "tree | erdos-renyi");
  b.option(*simulate, "--p-connect", &RunConfig::p_connect, "Edge probability for erdos-renyi (default 2/p)");
  b.option(*simulate, "-n,--length", &RunConfig::n, "Number of time-points");
  b.option(*simulate, "-p,--variables", &RunConfig::p, "Number of variables");
  b.option(*simulate, "--fractions", &RunConfig::fractions, "Segment length fractions (comma separated)")
      ->delimiter(',');
  b.option(*simulate, "--seed", &RunConfig::seed, "Random seed");
  b.option(*simulate, "--replicates", &RunConfig::replicates, "Independent series sharing the structures");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score detect results against a simulated truth");
  add_common(evaluate);
  b.option(*evaluate, "--results", &RunConfig::results, "Output directory of a detect run");
  b.option(*evaluate, "--truth", &RunConfig::truth, "truth.json or the simulate output directory");
  b.option(*evaluate, "--local-max-floor", &RunConfig::local_max_floor, "Smallest B(t) counted as a local maximum");
  b.option(*evaluate, "--tolerance", &RunConfig::tolerance, "Localization tolerance in time-points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_failure;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) cfg.output_dir = env;
    b.apply(cfg);
    const auto start = std::chrono::steady_clock::now();
    std::string command;
    if (detect->parsed()) {
      command = "detect";
      cmd_detect(cfg);
    } else if (compare->parsed()) {
      command = "compare";
      cmd_compare(cfg);
    } else if (simulate->parsed()) {
      command = "simulate";
      cmd_simulate(cfg);
    } else {
      command = "evaluate";
      cmd_evaluate(cfg);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(fs::path(cfg.output_dir) / "run_info.json",
               json{{"version", kVersion}, {"command", command}, {"wall_time_seconds", seconds}});
    return ok;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return config_failure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return other_failure;
  }
}

}  // namespace treecpd::cli
