// Config-driven experiment runner.
//
//   ncl <subcommand> --config <path> [--seed N] [--out DIR]
//   ncl validate --config <path>
//
// Exit status: 0 all assertions pass, 1 an assertion (or the experiment) failed,
// 2 usage or config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <ncl/attention.hpp>
#include <ncl/autonomous.hpp>
#include <ncl/diffusion.hpp>
#include <ncl/node.hpp>
#include <ncl/shallow.hpp>
#include <ncl/training.hpp>
#include <ncl/transport.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum class Kind { Int, Num, Bool, Str, List, Matrix };
enum class Bound { None, Positive, NonNegative, AtLeast1, AtLeast2 };

struct Param {
  std::string key;
  Kind kind;
  json def;  // null: optional without default
  Bound bound = Bound::None;
};

const std::map<std::string, std::vector<Param>>& schemas() {
  static const std::map<std::string, std::vector<Param>> s = {
      {"metrics-w1",
       {{"a", Kind::Matrix, nullptr},
        {"b", Kind::Matrix, nullptr},
        {"a_csv", Kind::Str, nullptr},
        {"b_csv", Kind::Str, nullptr},
        {"n", Kind::Int, 16, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"identical", Kind::Bool, false},
        {"expect", Kind::Num, nullptr, Bound::NonNegative}}},
      {"shallow-lp",
       {{"dataset", Kind::Str, nullptr},
        {"n", Kind::Int, 4, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"epsilon", Kind::Num, 0.0, Bound::NonNegative},
        {"directions", Kind::Int, 2000, Bound::AtLeast1},
        {"shells", Kind::Int, 1, Bound::AtLeast1},
        {"radius", Kind::Num, 1.0, Bound::Positive},
        {"restarts", Kind::Int, 20, Bound::AtLeast1},
        {"width", Kind::Int, nullptr, Bound::AtLeast1}}},
      {"shallow-generalization",
       {{"n", Kind::Int, 8, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"draws", Kind::Int, 20, Bound::AtLeast1},
        {"width_factor", Kind::Int, 2, Bound::AtLeast1}}},
      {"node-synthesize",
       {{"dataset", Kind::Str, nullptr},
        {"n", Kind::Int, 10, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast2},
        {"width", Kind::Int, 1, Bound::AtLeast1},
        {"horizon", Kind::Num, 1.0, Bound::Positive}}},
      {"node-train",
       {{"dataset", Kind::Str, nullptr},
        {"n", Kind::Int, 4, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast2},
        {"alpha", Kind::Num, 1e-3, Bound::Positive},
        {"iterations", Kind::Int, 100, Bound::AtLeast1},
        {"horizon", Kind::Num, 1.0, Bound::Positive}}},
      {"node-autonomous",
       {{"dataset", Kind::Str, nullptr},
        {"n", Kind::Int, 2, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast2},
        {"widths", Kind::List, json::array({32, 64, 128, 256})},
        {"fits", Kind::Int, 5, Bound::AtLeast1},
        {"samples", Kind::Int, 4000, Bound::AtLeast1},
        {"horizon", Kind::Num, 1.0, Bound::Positive}}},
      {"node-transport",
       {{"n", Kind::Int, 16, Bound::AtLeast1},
        {"fresh", Kind::Int, 128, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast2},
        {"shift", Kind::Num, 3.0},
        {"width", Kind::Int, 1, Bound::AtLeast1},
        {"horizon", Kind::Num, 1.0, Bound::Positive}}},
      {"attention-run",
       {{"tokens", Kind::Matrix, nullptr},
        {"A", Kind::Matrix, nullptr},
        {"n", Kind::Int, 6, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"random_A", Kind::Bool, false},
        {"alpha", Kind::Num, 1.0, Bound::Positive},
        {"tau", Kind::Num, 0.0, Bound::NonNegative},
        {"tol", Kind::Num, 1e-9, Bound::Positive},
        {"max_layers", Kind::Int, 10000, Bound::AtLeast1}}},
      {"diffusion-sample",
       {{"data", Kind::Matrix, nullptr},
        {"n_data", Kind::Int, 4, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"T", Kind::Num, 1.0, Bound::Positive},
        {"t_min", Kind::Num, 0.01, Bound::Positive},
        {"nu", Kind::Num, 1.0, Bound::NonNegative},
        {"steps", Kind::Int, 512, Bound::AtLeast1},
        {"samples", Kind::Int, 1024, Bound::AtLeast1},
        {"geometric", Kind::Bool, true}}},
      {"diffusion-sweep",
       {{"data", Kind::Matrix, nullptr},
        {"n_data", Kind::Int, 4, Bound::AtLeast1},
        {"d", Kind::Int, 2, Bound::AtLeast1},
        {"T", Kind::Num, 1.0, Bound::Positive},
        {"t_mins", Kind::List, json::array({0.001, 0.01, 0.1})},
        {"nu", Kind::Num, 1.0, Bound::NonNegative},
        {"steps", Kind::Int, 256, Bound::AtLeast1},
        {"samples", Kind::Int, 256, Bound::AtLeast1},
        {"seeds", Kind::Int, 1, Bound::AtLeast1},
        {"geometric", Kind::Bool, true}}},
  };
  return s;
}

const char* bound_text(Bound b) {
  switch (b) {
    case Bound::Positive: return "must be > 0";
    case Bound::NonNegative: return "must be >= 0";
    case Bound::AtLeast1: return "must be >= 1";
    case Bound::AtLeast2: return "must be >= 2";
    default: return "";
  }
}

bool within(Bound b, double v) {
  switch (b) {
    case Bound::Positive: return v > 0;
    case Bound::NonNegative: return v >= 0;
    case Bound::AtLeast1: return v >= 1;
    case Bound::AtLeast2: return v >= 2;
    default: return std::isfinite(v);
  }
}

std::optional<std::string> check_value(const Param& p, const json& v) {
  auto bad = [&](const std::string& what) { return std::optional<std::string>(p.key + ": " + what); };
  switch (p.kind) {
    case Kind::Int:
      if (!v.is_number_integer()) return bad("expected an integer");
      if (!within(p.bound, v.get<double>())) return bad(std::string(bound_text(p.bound)) + " (got " + v.dump() + ")");
      break;
    case Kind::Num:
      if (!v.is_number()) return bad("expected a number");
      if (!within(p.bound, v.get<double>())) return bad(std::string(bound_text(p.bound)) + " (got " + v.dump() + ")");
      break;
    case Kind::Bool:
      if (!v.is_boolean()) return bad("expected true or false");
      break;
    case Kind::Str:
      if (!v.is_string()) return bad("expected a string");
      break;
    case Kind::List:
      if (!v.is_array() || v.empty()) return bad("expected a nonempty list of numbers");
      for (const auto& e : v)
        if (!e.is_number() || !(e.get<double>() > 0)) return bad("entries must be positive numbers");
      break;
    case Kind::Matrix: {
      if (!v.is_array() || v.empty()) return bad("expected a nonempty list of rows");
      std::size_t cols = 0;
      for (const auto& row : v) {
        if (!row.is_array() || row.empty()) return bad("rows must be nonempty lists");
        if (cols && row.size() != cols) return bad("rows differ in length");
        cols = row.size();
        for (const auto& e : row)
          if (!e.is_number()) return bad("entries must be numbers");
      }
      break;
    }
  }
  return std::nullopt;
}

// Schema check without execution. `name` overrides the config's "subcommand".
std::vector<std::string> diagnose(const json& cfg, std::optional<std::string> name, bool seed_on_cli) {
  std::vector<std::string> diag;
  if (!cfg.is_object()) return {"config: expected a JSON object"};
  std::string sub;
  if (cfg.contains("subcommand")) {
    if (!cfg["subcommand"].is_string()) diag.push_back("subcommand: expected a string");
    else sub = cfg["subcommand"].get<std::string>();
  }
  if (name) {
    if (!sub.empty() && sub != *name) diag.push_back("subcommand: config is for '" + sub + "', not '" + *name + "'");
    sub = *name;
  }
  if (sub.empty()) {
    diag.push_back("subcommand: missing");
    return diag;
  }
  auto it = schemas().find(sub);
  if (it == schemas().end()) {
    diag.push_back("subcommand: unknown '" + sub + "'");
    return diag;
  }
  if (!cfg.contains("seed")) {
    if (!seed_on_cli) diag.push_back("seed: missing (required for reproducibility)");
  } else if (!cfg["seed"].is_number_unsigned()) {
    diag.push_back("seed: expected a nonnegative integer");
  }
  if (cfg.contains("out") && !cfg["out"].is_string()) diag.push_back("out: expected a string");
  for (const auto& [key, value] : cfg.items()) {
    if (key == "subcommand" || key == "seed" || key == "out") continue;
    const Param* p = nullptr;
    for (const auto& q : it->second)
      if (q.key == key) p = &q;
    if (!p) {
      diag.push_back(key + ": unknown key for " + sub);
      continue;
    }
    if (auto e = check_value(*p, value)) diag.push_back(*e);
  }
  return diag;
}

// Effective parameters: config values over schema defaults.
json resolve(const json& cfg, const std::string& sub) {
  json out = json::object();
  for (const auto& p : schemas().at(sub)) out[p.key] = cfg.contains(p.key) ? cfg[p.key] : p.def;
  return out;
}

ncl::Mat to_mat(const json& rows) {
  ncl::Mat m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

json from_mat(const ncl::Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct Run {
  fs::path dir;
  std::uint64_t seed = 0;
  json params;
  json summary = json::object();
  std::vector<std::string> artifacts;
  std::vector<std::pair<std::string, bool>> assertions;

  fs::path file(const std::string& name) {
    artifacts.push_back(name);
    return dir / name;
  }
  void check(const std::string& name, bool ok) { assertions.emplace_back(name, ok); }
  void write_json(const std::string& name, const json& j) {
    std::ofstream os(file(name));
    os << j.dump(2) << "\n";
  }
  void write_csv(const std::string& name, const ncl::Mat& m, const std::string& header) {
    ncl::csv::write(file(name).string(), m, header);
  }
};

// ---- experiments ----

void run_metrics_w1(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  ncl::Mat a, b;
  if (!p["a"].is_null()) a = to_mat(p["a"]);
  else if (!p["a_csv"].is_null()) a = ncl::csv::read(p["a_csv"].get<std::string>());
  else a = ncl::gaussian_mat(rng, p["n"].get<int>(), p["d"].get<int>());
  if (!p["b"].is_null()) b = to_mat(p["b"]);
  else if (!p["b_csv"].is_null()) b = ncl::csv::read(p["b_csv"].get<std::string>());
  else if (p["identical"].get<bool>()) b = a;
  else b = ncl::gaussian_mat(rng, a.rows(), a.cols());
  ncl::EmpiricalMeasure mu(a), nu(b);
  double w = ncl::w1_empirical(mu, nu);
  double back = ncl::w1_empirical(nu, mu);
  r.write_csv("a.csv", a, "");
  r.write_csv("b.csv", b, "");
  r.summary["w1"] = w;
  r.write_json("w1.json", {{"w1", w}, {"n", a.rows()}, {"d", a.cols()}});
  r.check("finite_nonnegative", std::isfinite(w) && w >= 0);
  r.check("symmetric", std::abs(w - back) <= 1e-12 * std::max(1.0, w));
  if (p["identical"].get<bool>() && p["b"].is_null() && p["b_csv"].is_null()) r.check("zero_on_identical", w == 0.0);
  if (!p["expect"].is_null()) r.check("matches_expected", std::abs(w - p["expect"].get<double>()) <= 1e-9);
}

void run_shallow_lp(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  ncl::LabeledDataset data;
  if (!p["dataset"].is_null()) {
    data = ncl::LabeledDataset::from_csv(p["dataset"].get<std::string>());
  } else {
    int n = p["n"], d = p["d"];
    data = {ncl::uniform_mat(rng, n, d, -1, 1), ncl::uniform_mat(rng, n, 1, -1, 1)};
  }
  const Eigen::Index N = data.size(), d = data.dim();
  const double eps = p["epsilon"], radius = p["radius"];
  const int dirs = p["directions"], shells = p["shells"];
  const Eigen::Index width = p["width"].is_null() ? N : p["width"].get<Eigen::Index>();
  ncl::Mat coarse = ncl::make_grid(d, std::max(1, dirs / 4), 1, radius, r.seed);
  ncl::Mat fine = ncl::grid_union(coarse, ncl::make_grid(d, dirs, shells, radius, r.seed + 1));
  auto lp_coarse = ncl::relaxed_lp_fit(data, coarse, eps);
  auto lp_fine = ncl::relaxed_lp_fit(data, fine, eps);
  ncl::MultistartOptions mo;
  mo.radius = radius;
  auto ms = ncl::nonconvex_multistart(data, width, eps, p["restarts"], r.seed, mo);
  ncl::Mat snapped = ncl::grid_union(fine, (ncl::Mat(width, d + 1) << ms.params.a, ms.params.b).finished());
  auto lp_snapped = ncl::relaxed_lp_fit(data, snapped, eps);

  ncl::Mat ds(N, d + 1);
  ds << data.x, data.y;
  r.write_csv("dataset.csv", ds, "");
  const auto& atoms = lp_fine.measure.atoms;
  ncl::Mat am(atoms.size(), d + 2);
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    am(k, 0) = atoms[k].w;
    am.row(k).tail(d + 1) = atoms[k].loc.transpose();
  }
  std::string header = "w";
  for (Eigen::Index k = 0; k < d; ++k) header += ",a" + std::to_string(k);
  r.write_csv("atoms.csv", am, header + ",b");
  r.summary = {{"lp_coarse", lp_coarse.value}, {"lp_fine", lp_fine.value},       {"lp_snapped", lp_snapped.value},
               {"multistart", ms.value},       {"atoms", atoms.size()},           {"grid_nodes", fine.rows()},
               {"feasible_restarts", ms.feasible_restarts}};
  r.write_json("report.json", r.summary);
  r.check("nested_grids_monotone", lp_fine.value <= lp_coarse.value + 1e-9);
  r.check("snapped_lp_le_multistart", lp_snapped.value <= ms.value + 1e-6);
  if (eps == 0.0) r.check("atoms_le_n", static_cast<Eigen::Index>(atoms.size()) <= N);
}

void run_shallow_generalization(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  const int n = p["n"], d = p["d"], draws = p["draws"], factor = p["width_factor"];
  ncl::Mat rows(draws, 7);
  bool all = true;
  for (int k = 0; k < draws; ++k) {
    ncl::LabeledDataset train{ncl::uniform_mat(rng, n, d, -1, 1), ncl::Vec(n)};
    ncl::LabeledDataset test{ncl::uniform_mat(rng, n, d, -1, 1), ncl::Vec(n)};
    for (int i = 0; i < n; ++i) {
      train.y[i] = std::sin(3 * train.x.row(i).sum());
      test.y[i] = std::sin(3 * test.x.row(i).sum());
    }
    auto params = ncl::exact_fit(train, factor * n, ncl::derive_seed(r.seed, k));
    auto rep = ncl::generalization_report(train, test, params);
    rows.row(k) << k, rep.irreducible, rep.training_bias, rep.sensitivity, rep.bound, rep.lhs, rep.slack();
    all = all && rep.holds();
  }
  r.write_csv("draws.csv", rows, "draw,irreducible,training_bias,sensitivity,bound,lhs,slack");
  r.summary = {{"draws", draws}, {"min_slack", rows.col(6).minCoeff()}};
  r.check("inequality_holds", all);
}

ncl::PointDataset point_dataset(const json& p, ncl::Rng& rng) {
  if (p.contains("dataset") && !p["dataset"].is_null()) return ncl::PointDataset::from_csv(p["dataset"].get<std::string>());
  int n = p["n"], d = p["d"];
  return {ncl::uniform_mat(rng, n, d, -1, 1), ncl::uniform_mat(rng, n, d, -1, 1)};
}

void write_endpoints(Run& r, const ncl::PointDataset& data, const ncl::PiecewiseConstantControl& c) {
  ncl::Mat end = ncl::flow_batch(data.x, c);
  const Eigen::Index d = data.dim();
  ncl::Mat m(data.size(), 3 * d + 1);
  m << data.x, end, data.y, (end - data.y).rowwise().norm();
  std::string h;
  for (const char* tag : {"x", "phi", "y"})
    for (Eigen::Index k = 0; k < d; ++k) h += std::string(h.empty() ? "" : ",") + tag + std::to_string(k);
  r.write_csv("endpoints.csv", m, h + ",error");
}

void run_node_synthesize(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  auto data = point_dataset(p, rng);
  const Eigen::Index P = p["width"];
  ncl::SynthesisOptions opt;
  opt.seed = r.seed;
  auto ctrl = ncl::synthesize_width(data, P, p["horizon"], opt);
  double err = ncl::max_endpoint_error(data, ctrl);
  const int bound = ncl::switch_bound_width(data.size(), P);
  ncl::Mat ds(data.size(), 2 * data.dim());
  ds << data.x, data.y;
  r.write_csv("dataset.csv", ds, "");
  r.write_json("control.json", ctrl.to_json());
  write_endpoints(r, data, ctrl);
  r.summary = {{"N", data.size()}, {"P", P}, {"switches", ctrl.switches()}, {"switch_bound", bound}, {"max_error", err}};
  r.check("switch_bound", ctrl.switches() <= bound);
  if (P == 1) r.check("switches_le_3N", ctrl.switches() <= 3 * data.size());
  r.check("endpoint_error_lt_1e-6", err < 1e-6);
}

void run_node_train(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  auto data = point_dataset(p, rng);
  const double alpha = p["alpha"];
  ncl::SynthesisOptions so;
  so.seed = r.seed;
  auto synth = ncl::synthesize_p1(data, p["horizon"], so);
  ncl::ErmOptions eo;
  eo.iterations = p["iterations"];
  auto res = ncl::train_erm(data, synth, alpha, eo);
  double K = ncl::apriori_bound(data, synth, alpha);
  r.write_json("control_synthesized.json", synth.to_json());
  r.write_json("control_trained.json", res.control.to_json());
  ncl::Mat h(res.history.size() + 1, 2);
  h.row(0) << 0, res.initial_objective;
  for (std::size_t k = 0; k < res.history.size(); ++k) h.row(k + 1) << static_cast<double>(k + 1), res.history[k];
  r.write_csv("history.csv", h, "step,objective");
  bool monotone = true;
  for (Eigen::Index k = 1; k < h.rows(); ++k) monotone = monotone && h(k, 1) <= h(k - 1, 1);
  r.summary = {{"J_initial", res.initial_objective}, {"J_trained", res.objective}, {"bv2", res.bv2},
               {"risk", res.risk},                  {"bound_K", K},                {"accepted_steps", res.accepted}};
  r.check("descent", res.objective <= res.initial_objective);
  r.check("history_monotone", monotone);
  r.check("apriori_bound", res.bv2 <= K);
}

void run_node_autonomous(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  auto data = point_dataset(p, rng);
  auto tube = ncl::build_autonomous_field(data, p["horizon"], r.seed);
  double tube_err = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    tube_err = std::max(tube_err, (ncl::flow_autonomous(tube, data.x.row(i).transpose()) - data.y.row(i).transpose()).norm());
  ncl::ShallowFitOptions fo;
  fo.samples = p["samples"];
  const int fits = p["fits"];
  std::vector<double> medians;
  std::vector<std::array<double, 5>> rows;
  for (const auto& wj : p["widths"]) {
    const Eigen::Index P = wj.get<Eigen::Index>();
    std::vector<double> errs;
    for (int s = 0; s < fits; ++s) {
      auto fit = ncl::fit_autonomous_shallow(tube, P, ncl::derive_seed(r.seed, 1000 * P + s), fo);
      errs.push_back(fit.sup_error);
      rows.push_back({static_cast<double>(P), static_cast<double>(s), fit.sup_error, fit.train_rmse,
                      static_cast<double>(fit.field.kappa)});
    }
    medians.push_back(median(errs));
  }
  ncl::Mat m(rows.size(), 5);
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (int c = 0; c < 5; ++c) m(k, c) = rows[k][c];
  r.write_csv("sweep.csv", m, "width,fit,sup_error,train_rmse,kappa");
  bool mono = true;
  for (std::size_t k = 1; k < medians.size(); ++k) mono = mono && medians[k] <= medians[k - 1];
  r.summary = {{"tube_radius", tube.radius}, {"tube_error", tube_err}, {"median_sup_error", medians},
               {"lipschitz", tube.lipschitz}};
  r.check("tube_endpoints_lt_1e-6", tube_err < 1e-6);
  r.check("median_error_nonincreasing", mono);
}

void run_node_transport(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  const int n = p["n"], fresh = p["fresh"], d = p["d"];
  const double shift = p["shift"];
  auto batch = [&](int m, double s) {
    ncl::Mat x = ncl::gaussian_mat(rng, m, d);
    x.col(0).array() += s;
    return ncl::EmpiricalMeasure(x);
  };
  auto src = batch(n, 0), tgt = batch(n, shift), fs_ = batch(fresh, 0), ft = batch(fresh, shift);
  auto res = ncl::transport_empirical(src, tgt, fs_, ft, p["width"], p["horizon"], ncl::transport_synthesis_options(r.seed));
  r.write_json("control.json", res.control.to_json());
  r.write_csv("pushforward.csv", res.pushforward, "");
  r.summary = {{"w1_heldout", res.w1_heldout}, {"w1_raw", res.w1_raw}, {"train_error", res.train_error},
               {"switches", res.control.switches()}};
  r.check("matched_pairs_lt_1e-6", res.train_error < 1e-6);
  r.check("w1_finite", std::isfinite(res.w1_heldout));
}

void run_attention(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  ncl::Mat Z = p["tokens"].is_null() ? ncl::gaussian_mat(rng, p["n"], p["d"]) : to_mat(p["tokens"]);
  const Eigen::Index d = Z.cols();
  ncl::AttentionParams ap;
  if (!p["A"].is_null()) {
    ap.A = to_mat(p["A"]);
  } else if (p["random_A"].get<bool>()) {
    ncl::Mat B = ncl::gaussian_mat(rng, d, d);
    ap.A = B * B.transpose() + 0.5 * ncl::Mat::Identity(d, d);
    ap.A = 0.5 * (ap.A + ap.A.transpose()).eval();
  } else {
    ap.A = ncl::Mat::Identity(d, d);
  }
  ap.alpha = p["alpha"];
  ap.tau = p["tau"];
  ap.validate();
  const double tol = p["tol"];
  const int max_layers = p["max_layers"];
  ncl::Mat dirs = ncl::gaussian_mat(rng, 100, d);
  dirs.rowwise().normalize();

  std::vector<ncl::TokenSequence> traj;
  bool norm_ok = true, hull_ok = true;
  auto audit = [&](const ncl::Mat& a, const ncl::Mat& b) {
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      norm_ok = norm_ok && ncl::a_norm(b.row(i).transpose(), ap.A) >= ncl::a_norm(a.row(i).transpose(), ap.A) - 1e-12;
    ncl::Mat pa = a * dirs.transpose(), pb = b * dirs.transpose();
    for (Eigen::Index u = 0; u < dirs.rows(); ++u) hull_ok = hull_ok && pb.col(u).maxCoeff() <= pa.col(u).maxCoeff() + 1e-12;
  };
  if (ap.tau == 0.0) {
    auto rep = ncl::run_to_equilibrium(Z, ap, {tol, max_layers, true});
    traj = rep.trajectory;
    for (std::size_t k = 1; k < traj.size(); ++k) audit(traj[k - 1], traj[k]);
    json cls = json::array();
    bool resolved = true;
    for (auto c : rep.classes) {
      cls.push_back(ncl::to_string(c));
      resolved = resolved && c != ncl::TokenClass::Unresolved;
    }
    r.summary = {{"leaders", rep.leaders},   {"k0", rep.leader_stabilization_layer}, {"layers", rep.layers},
                 {"residual", rep.residual}, {"classes", cls},                        {"final_tokens", from_mat(rep.final_tokens)}};
    r.check("converged", rep.converged);
    const bool enumerable = rep.leaders.size() <= 6 && d <= 3;
    if (enumerable) r.check("non_leaders_on_face_projections", resolved);
  } else {
    traj.push_back(Z);
    double resid = 0.0;
    bool stochastic = true;
    for (int k = 0; k < max_layers; ++k) {
      ncl::Mat W = ncl::softmax_weights(traj.back(), ap);
      stochastic = stochastic && (W.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12;
      ncl::Mat next = ncl::step_softmax(traj.back(), ap);
      resid = (next - traj.back()).rowwise().norm().maxCoeff();
      traj.push_back(next);
      if (resid < tol) break;
    }
    r.summary = {{"layers", traj.size() - 1}, {"residual", resid}, {"final_tokens", from_mat(traj.back())}};
    r.check("row_stochastic", stochastic);
    r.check("finite", traj.back().allFinite());
  }
  std::ofstream os(r.file("trajectory.csv"));
  ncl::write_trajectory_csv(os, traj);
  if (ap.tau == 0.0) {
    r.check("a_norm_monotone", norm_ok);
    r.check("hull_contraction", hull_ok);
  }
  r.write_json("report.json", r.summary);
}

ncl::ScoreField diffusion_field(const json& p, ncl::Rng& rng) {
  if (!p["data"].is_null()) return ncl::ScoreField(to_mat(p["data"]));
  return ncl::ScoreField(ncl::uniform_mat(rng, p["n_data"], p["d"], -1, 1));
}

ncl::ReverseRunConfig reverse_config(const json& p, std::uint64_t seed) {
  ncl::ReverseRunConfig cfg;
  cfg.T = p["T"];
  cfg.nu.constant = p["nu"];
  cfg.steps = p["steps"];
  cfg.geometric = p["geometric"];
  cfg.seed = seed;
  return cfg;
}

void run_diffusion_sample(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  auto f = diffusion_field(p, rng);
  auto cfg = reverse_config(p, r.seed);
  cfg.t_min = p["t_min"];
  cfg.validate();
  const Eigen::Index n = p["samples"];
  ncl::Mat init = ncl::initial_cloud(f, cfg, n);
  ncl::Mat X = ncl::reverse_sample_from(f, cfg, init);
  ncl::Rng ref_rng(ncl::derive_seed(r.seed, 7));
  ncl::Mat ref = ncl::exact_samples(f, cfg.t_min, n, ref_rng);
  double w1 = ncl::w1_empirical(ncl::EmpiricalMeasure(X), ncl::EmpiricalMeasure(ref));
  ncl::Mat grid = ncl::box_grid(f.dim(), f.dim() >= 3 ? 9 : 31, -3, 3);
  auto margin = ncl::li_yau_margin(f, cfg.t_min, grid);
  r.write_csv("initial.csv", init, "");
  r.write_csv("cloud.csv", X, "");
  r.summary = {{"w1_exact", w1}, {"mean_nn_dist", ncl::mean_nearest_data_distance(X, f)}, {"li_yau_margin", margin.margin}};
  r.write_json("report.json", r.summary);
  r.check("finite", X.allFinite());
  r.check("li_yau_margin", margin.margin >= -1e-8);
}

void run_diffusion_sweep(Run& r) {
  const auto& p = r.params;
  ncl::Rng rng(r.seed);
  auto f = diffusion_field(p, rng);
  std::vector<double> tmins;
  for (const auto& t : p["t_mins"]) tmins.push_back(t.get<double>());
  std::sort(tmins.begin(), tmins.end());
  const int seeds = p["seeds"];
  std::vector<std::vector<double>> nn(tmins.size());
  std::vector<ncl::SweepRow> first;
  for (int s = 0; s < seeds; ++s) {
    auto rows = ncl::stopping_sweep(f, reverse_config(p, ncl::derive_seed(r.seed, s)), tmins, p["samples"]);
    if (s == 0) first = rows;
    for (std::size_t k = 0; k < rows.size(); ++k) nn[k].push_back(rows[k].mean_nn_dist);
  }
  std::ofstream os(r.file("sweep.csv"));
  ncl::write_sweep_csv(os, first);
  json med = json::array();
  std::vector<double> m;
  for (auto& v : nn) {
    m.push_back(median(v));
    med.push_back(m.back());
  }
  r.summary = {{"t_mins", tmins}, {"median_mean_nn_dist", med}, {"seeds", seeds}};
  r.check("one_row_per_t_min", first.size() == tmins.size());
  if (seeds >= 3) {
    bool mono = true;
    for (std::size_t k = 1; k < m.size(); ++k) mono = mono && m[k] >= m[k - 1];
    r.check("median_nn_dist_nondecreasing", mono);
  }
}

const std::map<std::string, void (*)(Run&)>& runners() {
  static const std::map<std::string, void (*)(Run&)> m = {
      {"metrics-w1", run_metrics_w1},
      {"shallow-lp", run_shallow_lp},
      {"shallow-generalization", run_shallow_generalization},
      {"node-synthesize", run_node_synthesize},
      {"node-train", run_node_train},
      {"node-autonomous", run_node_autonomous},
      {"node-transport", run_node_transport},
      {"attention-run", run_attention},
      {"diffusion-sample", run_diffusion_sample},
      {"diffusion-sweep", run_diffusion_sweep},
  };
  return m;
}

json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ncl::Error(ncl::ErrorCode::IoError, "cannot read config " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ncl::Error(ncl::ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
}

fs::path output_dir(const std::optional<std::string>& cli, const json& cfg, const std::string& sub) {
  if (cli) return *cli;
  if (cfg.contains("out")) return cfg["out"].get<std::string>();
  const char* env = std::getenv("NCL_OUT");
  return fs::path(env && *env ? env : "ncl_out") / sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural control and transport experiments"};
  std::string sub, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("subcommand", sub, "experiment name or 'validate'")->required();
  app.add_option("--config", config, "JSON config file")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out, "output directory (default $NCL_OUT/<subcommand>)");
  app.footer("experiments: metrics-w1 shallow-lp shallow-generalization node-synthesize node-train\n"
             "             node-autonomous node-transport attention-run diffusion-sample diffusion-sweep");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  json cfg;
  try {
    cfg = load_config(config);
  } catch (const ncl::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  if (sub == "validate") {
    for (const auto& d : diagnose(cfg, std::nullopt, false)) std::cout << d << "\n";
    return diagnose(cfg, std::nullopt, false).empty() ? 0 : 2;
  }
  if (!runners().count(sub)) {
    std::cerr << "UsageError: unknown subcommand '" << sub << "'\n";
    return 2;
  }
  auto diag = diagnose(cfg, sub, seed.has_value());
  if (!diag.empty()) {
    for (const auto& d : diag) std::cerr << "ConfigError: " << d << "\n";
    return 2;
  }

  Run run;
  run.seed = seed ? *seed : cfg["seed"].get<std::uint64_t>();
  run.params = resolve(cfg, sub);
  for (const char* key : {"dataset", "a_csv", "b_csv"})
    if (run.params.contains(key) && run.params[key].is_string() && fs::path(run.params[key].get<std::string>()).is_relative())
      run.params[key] = (fs::path(config).parent_path() / run.params[key].get<std::string>()).string();
  run.dir = output_dir(out, cfg, sub);
  std::error_code ec;
  fs::create_directories(run.dir, ec);
  if (ec) {
    std::cerr << "ConfigError: cannot create output directory " << run.dir << ": " << ec.message() << "\n";
    return 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::string failure;
  try {
    runners().at(sub)(run);
  } catch (const ncl::Error& e) {
    if (e.code() == ncl::ErrorCode::ConfigError || e.code() == ncl::ErrorCode::IoError) {
      std::cerr << e.what() << "\n";
      return 2;
    }
    failure = e.what();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  bool pass = failure.empty();
  json flags = json::object();
  for (const auto& [name, ok] : run.assertions) {
    flags[name] = ok;
    pass = pass && ok;
  }
  json echo = cfg;
  echo["subcommand"] = sub;
  echo["seed"] = run.seed;
  json manifest = {{"subcommand", sub},     {"config", echo},      {"parameters", run.params},
                   {"artifacts", run.artifacts}, {"duration_s", seconds}, {"assertions", flags},
                   {"summary", run.summary}, {"pass", pass}};
  if (!failure.empty()) manifest["error"] = failure;
  std::ofstream(run.dir / "manifest.json") << manifest.dump(2) << "\n";

  std::cout << sub << ": " << (pass ? "PASS" : "FAIL") << " (" << run.dir.string() << "/manifest.json)\n";
  for (const auto& [name, ok] : run.assertions) std::cout << "  " << (ok ? "ok   " : "FAIL ") << name << "\n";
  if (!failure.empty()) std::cout << "  error: " << failure << "\n";
  return pass ? 0 : 1;
}
