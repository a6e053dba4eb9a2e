// robustcp command line tool: divergence transforms (gfun), threshold
// calibration (calibrate), worst-coverage audits (audit), and synthetic
// coverage studies (simulate).
//
// Exit codes: 0 ok, 2 usage, 3 malformed input, 4 numerical degeneracy,
// 5 all trials of a method failed.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "robustcp/conformal.hpp"
#include "robustcp/dataset.hpp"
#include "robustcp/divergence.hpp"
#include "robustcp/errors.hpp"
#include "robustcp/io.hpp"
#include "robustcp/scores.hpp"
#include "robustcp/shift.hpp"
#include "robustcp/simulate.hpp"
#include "robustcp/worst_coverage.hpp"

namespace {

using nlohmann::ordered_json;
using namespace robustcp;

const CLI::Validator OpenUnitInterval(
    [](std::string& s) -> std::string {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size() || !(v > 0.0) || !(v < 1.0)) {
        return std::string("value must lie in (0, 1)");
      }
      return {};
    },
    "FLOAT in (0,1)");

DivergenceSpec make_divergence(const std::string& name) {
  if (name == "chi2") return DivergenceSpec::chi_square();
  if (name == "kl") return DivergenceSpec::kullback_leibler();
  throw CLI::ValidationError("--f", "unknown divergence '" + name + "'");
}

RegionFamily parse_family(const std::string& name) {
  if (name == "slab") return RegionFamily::Slab;
  if (name == "halfspace") return RegionFamily::Halfspace;
  if (name == "ball") return RegionFamily::Ball;
  throw CLI::ValidationError("--family", "unknown family '" + name + "'");
}

std::vector<double> parse_vector(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t pos = 0;
    out.push_back(std::stod(field, &pos));
    if (pos != field.size()) throw std::invalid_argument("cannot parse vector entry '" + field + "'");
  }
  if (out.empty()) throw std::invalid_argument("empty vector");
  return out;
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_text_file(out_path, content);
  }
}

// json value that survives non-finite doubles (nlohmann serializes them as
// null already; this keeps the intent explicit)
ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

// ---------------------------------------------------------------- gfun ----

struct GfunArgs {
  std::string f = "chi2";
  double rho = 0.0;
  std::optional<double> beta;
  std::optional<double> tau;
  bool grid = false;
  std::string out;
};

int cmd_gfun(const GfunArgs& args) {
  const DivergenceSpec div = make_divergence(args.f);
  std::string body;
  const auto row = [&](double b) {
    body += format_double(b);
    body += ',';
    body += format_double(worst_case_mass(div, args.rho, b));
    body += ',';
    body += format_double(worst_case_mass_inverse(div, args.rho, b));
    body += '\n';
  };
  if (args.grid) {
    for (int i = 0; i <= 100; ++i) row(static_cast<double>(i) / 100.0);
  } else if (args.beta) {
    row(*args.beta);
  } else {
    row(*args.tau);
  }
  emit(args.out, body);
  return 0;
}

// ----------------------------------------------------------- calibrate ----

struct CalibrateArgs {
  std::string scores_path;
  std::string features_path;
  std::string f = "chi2";
  double alpha = 0.05;
  std::optional<double> rho;
  std::string estimate;  // sample | regress | classify
  bool corrected = false;
  double delta = 1.0 / 3.0;
  double level_v = 0.05;
  std::size_t k = 100;
  double split = 0.5;
  std::string family = "slab";
  std::optional<std::uint64_t> seed;
  std::string out;
};

ordered_json calibration_json(const CalibrationResult& cal) {
  ordered_json j;
  j["threshold"] = num(cal.threshold);
  j["rho"] = num(cal.rho);
  j["alpha"] = cal.alpha;
  j["effective_level"] = num(cal.effective_level);
  j["corrected"] = cal.corrected;
  j["divergence"] = cal.divergence;
  j["n"] = cal.n;
  j["saturated"] = std::isinf(cal.threshold);
  return j;
}

int cmd_calibrate(const CalibrateArgs& args) {
  const DivergenceSpec div = make_divergence(args.f);
  const std::vector<double> raw_scores = read_scores_csv(args.scores_path);
  const EmpiricalScores scores(raw_scores);

  ordered_json doc;
  doc["schema"] = 1;
  doc["command"] = "calibrate";

  if (args.rho) {
    CalibrationResult cal;
    if (*args.rho == 0.0 && !args.corrected) {
      // plain split conformal, the (1 + 1/n)(1 - alpha) order statistic
      cal.threshold = split_conformal_threshold(scores, args.alpha);
      cal.rho = 0.0;
      cal.alpha = args.alpha;
      cal.effective_level =
          (1.0 + 1.0 / static_cast<double>(scores.size())) * (1.0 - args.alpha);
      cal.corrected = false;
      cal.divergence = div.name();
      cal.n = scores.size();
    } else {
      cal = robust_threshold(div, scores, RadiusLevel{*args.rho, args.alpha}, args.corrected);
    }
    doc["calibration"] = calibration_json(cal);
  } else {
    const FeatureMatrix fm = read_features_csv(args.features_path);
    const TabularDataset data(fm.values, fm.dim, raw_scores);

    ShiftEstimate est;
    if (args.estimate == "sample") {
      SamplingConfig cfg;
      cfg.k = args.k;
      cfg.level_v = args.level_v;
      cfg.delta = args.delta;
      cfg.alpha = args.alpha;
      cfg.seed = *args.seed;
      cfg.family = parse_family(args.family);
      est = estimate_shift_sampling(data, div, cfg);
    } else {
      DirectionFitConfig cfg;
      cfg.split_fraction = args.split;
      cfg.delta = args.delta;
      cfg.alpha = args.alpha;
      cfg.seed = *args.seed;
      est = args.estimate == "regress" ? estimate_shift_regression(data, div, cfg)
                                       : estimate_shift_classification(data, div, cfg);
    }
    const CalibrationResult cal =
        robust_threshold(div, scores, RadiusLevel{est.rho_hat, args.alpha}, args.corrected);
    doc["calibration"] = calibration_json(cal);

    ordered_json ej;
    ej["strategy"] = args.estimate;
    ej["q_hat"] = num(est.q_hat);
    ej["rho_hat"] = num(est.rho_hat);
    ej["rho_saturated"] = est.rho_saturated;
    ej["rho_infeasible"] = est.rho_infeasible;
    if (!est.direction.empty()) ej["direction"] = est.direction;
    if (!est.per_direction_quantiles.empty()) {
      ej["per_direction_quantiles"] = est.per_direction_quantiles;
    }
    doc["estimate"] = ej;
  }
  emit(args.out, doc.dump(2) + "\n");
  return 0;
}

// --------------------------------------------------------------- audit ----

struct AuditArgs {
  std::string features_path;
  std::string scores_path;
  double q = 0.0;
  double delta = 1.0 / 3.0;
  std::string family = "slab";
  std::string direction_inline;
  std::string directions_path;
  std::size_t sample = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_audit(const AuditArgs& args) {
  const FeatureMatrix fm = read_features_csv(args.features_path);
  TabularDataset data(fm.values, fm.dim, read_scores_csv(args.scores_path));

  std::vector<std::vector<double>> directions;
  if (!args.direction_inline.empty()) {
    directions.push_back(parse_vector(args.direction_inline));
  } else if (!args.directions_path.empty()) {
    const FeatureMatrix dm = read_features_csv(args.directions_path);
    if (dm.dim != data.dim()) {
      throw io_error(args.directions_path, 1, "direction dimension does not match the features");
    }
    for (std::size_t i = 0; i < dm.rows; ++i) {
      directions.emplace_back(dm.values.begin() + static_cast<std::ptrdiff_t>(i * dm.dim),
                              dm.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dm.dim));
    }
  } else {
    directions = sample_unit_directions(data.dim(), args.sample, *args.seed);
  }

  std::string body = "direction_id,coverage,mass,region_lo,region_hi\n";
  for (std::size_t i = 0; i < directions.size(); ++i) {
    RegionQuery query;
    query.family = parse_family(args.family);
    query.direction = directions[i];
    query.delta = args.delta;
    const WorstCoverageResult r = worst_coverage(data, query, args.q);
    body += std::to_string(i);
    body += ',';
    body += format_double(r.coverage);
    body += ',';
    body += format_double(r.mass);
    body += ',';
    body += format_double(r.region_lo);
    body += ',';
    body += format_double(r.region_hi);
    body += '\n';
  }
  emit(args.out, body);
  return 0;
}

// ------------------------------------------------------------ simulate ----

struct SimulateArgs {
  std::string experiment;  // hetero | tilt
  double t = 0.0;
  double shift = 0.0;
  std::string a_grid = "0";
  std::size_t trials = 20;
  std::string methods = "sc";
  std::size_t n_val = 2000;
  std::size_t n_test = 2000;
  std::size_t dim = 10;
  double alpha = 0.05;
  double delta = 1.0 / 3.0;
  double level_v = 0.05;
  std::size_t k = 500;
  double split = 0.5;
  double rho = 0.01;
  std::string noise = "exp";
  bool corrected = false;
  std::optional<std::uint64_t> seed;
  std::string out = "report";
  std::string format;  // unused; both files are always written
};

NoiseScale parse_noise(const std::string& name) {
  if (name == "exp") return NoiseScale::exponential();
  if (name == "softplus") return NoiseScale::softplus();
  if (name == "ramp") return NoiseScale::ramp_plus_one();
  if (name == "one") return NoiseScale::constant_one();
  throw CLI::ValidationError("--noise", "unknown noise scale '" + name + "'");
}

MethodSpec parse_method(const std::string& token, const SimulateArgs& args) {
  MethodSpec m;
  m.label = token;
  m.corrected = args.corrected;
  m.sampling.k = args.k;
  m.sampling.level_v = args.level_v;
  m.sampling.delta = args.delta;
  m.fit.split_fraction = args.split;
  m.fit.delta = args.delta;
  if (token == "sc") {
    m.kind = MethodKind::SplitConformal;
    return m;
  }
  const auto dash = token.rfind('-');
  const std::string div = dash == std::string::npos ? "" : token.substr(0, dash);
  const std::string tail = dash == std::string::npos ? "" : token.substr(dash + 1);
  if ((div != "chi2" && div != "kl") ||
      (tail != "s" && tail != "r" && tail != "c" && tail != "fixed")) {
    throw CLI::ValidationError(
        "--methods", "unknown method '" + token +
                         "' (valid: sc, chi2-s, chi2-r, chi2-c, chi2-fixed, kl-s, kl-r, kl-c, "
                         "kl-fixed)");
  }
  m.divergence = make_divergence(div);
  if (tail == "s") {
    m.kind = MethodKind::SampledRadius;
  } else if (tail == "r") {
    m.kind = MethodKind::RegressionRadius;
  } else if (tail == "c") {
    m.kind = MethodKind::ClassifierRadius;
  } else {
    m.kind = MethodKind::FixedRadius;
    m.rho = args.rho;
  }
  return m;
}

ordered_json report_json(const CoverageReport& r) {
  ordered_json j;
  j["method"] = r.method;
  j["alpha"] = r.alpha;
  j["rho_used"] = num(r.rho_used);
  j["mean_coverage"] = num(r.mean_coverage);
  ordered_json deciles = ordered_json::array();
  for (const double d : r.coverage_deciles) deciles.push_back(num(d));
  j["coverage_deciles"] = deciles;
  j["mean_set_size"] = num(r.mean_set_size);
  j["trials"] = r.trials;
  j["failed_trials"] = r.failed_trials;
  if (!std::isnan(r.tilt_a)) j["tilt_a"] = r.tilt_a;
  if (!std::isnan(r.realized_divergence)) j["realized_divergence"] = r.realized_divergence;
  if (!std::isnan(r.resampled_divergence)) j["resampled_divergence"] = r.resampled_divergence;
  return j;
}

void report_csv_rows(const CoverageReport& r, std::string& body) {
  const auto opt = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  for (std::size_t t = 0; t < r.trials; ++t) {
    body += r.method;
    body += ',';
    body += std::to_string(t);
    body += ',';
    body += format_double(r.trial_coverage[t]);
    body += ',';
    body += format_double(r.trial_set_size[t]);
    body += ',';
    body += format_double(r.trial_rho[t]);
    body += ',';
    body += opt(r.tilt_a);
    body += '\n';
  }
  body += r.method;
  body += ",mean,";
  body += format_double(r.mean_coverage);
  body += ',';
  body += format_double(r.mean_set_size);
  body += ',';
  body += format_double(r.rho_used);
  body += ',';
  body += opt(r.tilt_a);
  body += '\n';
}

int cmd_simulate(const SimulateArgs& args) {
  ExperimentSpec spec;
  spec.kind = args.experiment == "hetero" ? ExperimentKind::Hetero : ExperimentKind::Tilt;
  spec.model = HeteroModel(args.dim);
  spec.model.h = parse_noise(args.noise);
  spec.model.misspecification_t = args.t;
  spec.n_val = args.n_val;
  spec.n_test = args.n_test;
  spec.trials = args.trials;
  spec.alpha = args.alpha;
  if (spec.kind == ExperimentKind::Hetero && args.shift != 0.0) {
    spec.shift_mean.assign(args.dim, 0.0);
    spec.shift_mean[0] = args.shift;
  }

  std::stringstream ms(args.methods);
  std::string token;
  while (std::getline(ms, token, ',')) {
    if (!token.empty()) spec.methods.push_back(parse_method(token, args));
  }
  if (spec.methods.empty()) throw CLI::ValidationError("--methods", "no methods given");

  const std::vector<double> a_values = parse_vector(args.a_grid);

  std::vector<CoverageReport> reports;
  if (spec.kind == ExperimentKind::Tilt) {
    for (std::size_t ai = 0; ai < a_values.size(); ++ai) {
      spec.tilt_a = a_values[ai];
      spec.seed = derive_seed(*args.seed, 100 + ai);
      auto batch = run_coverage_experiment(spec);
      reports.insert(reports.end(), batch.begin(), batch.end());
    }
  } else {
    spec.seed = *args.seed;
    reports = run_coverage_experiment(spec);
  }

  ordered_json doc;
  doc["schema"] = 1;
  doc["command"] = "simulate";
  doc["experiment"] = args.experiment;
  doc["alpha"] = args.alpha;
  doc["trials"] = args.trials;
  doc["seed"] = *args.seed;
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  doc["reports"] = arr;
  write_text_file(args.out + ".json", doc.dump(2) + "\n");

  std::string csv = "method,trial,coverage,set_size,rho,tilt_a\n";
  for (const auto& r : reports) report_csv_rows(r, csv);
  write_text_file(args.out + ".csv", csv);

  bool any_all_failed = false;
  for (const auto& r : reports) {
    std::cout << r.method << ": coverage " << format_double(r.mean_coverage) << " size "
              << format_double(r.mean_set_size) << " rho " << format_double(r.rho_used)
              << " trials " << r.trials << "/" << (r.trials + r.failed_trials);
    if (!std::isnan(r.tilt_a)) std::cout << " a " << format_double(r.tilt_a);
    std::cout << "\n";
    if (r.trials == 0) any_all_failed = true;
  }
  return any_all_failed ? 5 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributionally robust conformal calibration toolkit"};
  app.require_subcommand(1);

  GfunArgs gfun;
  auto* g = app.add_subcommand("gfun", "worst-case mass transform and its inverse");
  g->add_option("--f", gfun.f, "divergence")->check(CLI::IsMember({"chi2", "kl"}));
  g->add_option("--rho", gfun.rho, "divergence radius")->required()->check(CLI::NonNegativeNumber);
  auto* gb = g->add_option("--beta", gfun.beta, "evaluate at this mass");
  auto* gt = g->add_option("--tau", gfun.tau, "evaluate at this target mass");
  auto* gg = g->add_flag("--grid", gfun.grid, "evaluate on the 0..1 grid, step 0.01");
  gb->excludes(gt)->excludes(gg);
  gt->excludes(gg);
  g->add_option("--out", gfun.out, "output file (default stdout)");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "calibrate a prediction-set threshold");
  c->add_option("--scores", cal.scores_path, "scores CSV")->required();
  c->add_option("--features", cal.features_path, "features CSV (estimation only)");
  c->add_option("--f", cal.f, "divergence")->check(CLI::IsMember({"chi2", "kl"}));
  c->add_option("--alpha", cal.alpha, "miscoverage level")->required()->check(OpenUnitInterval);
  auto* cr = c->add_option("--rho", cal.rho, "explicit radius")->check(CLI::NonNegativeNumber);
  auto* ce = c->add_option("--estimate", cal.estimate, "radius estimation strategy")
                 ->check(CLI::IsMember({"sample", "regress", "classify"}));
  cr->excludes(ce);
  ce->excludes(cr);
  c->add_flag("--corrected", cal.corrected, "finite-sample corrected level");
  c->add_option("--delta", cal.delta, "region mass floor")->check(OpenUnitInterval);
  c->add_option("--level-v", cal.level_v, "direction tolerance")->check(OpenUnitInterval);
  c->add_option("--k", cal.k, "sampled direction count")->check(CLI::PositiveNumber);
  c->add_option("--split", cal.split, "direction-fit split fraction")->check(OpenUnitInterval);
  c->add_option("--family", cal.family, "region family")
      ->check(CLI::IsMember({"slab", "halfspace", "ball"}));
  c->add_option("--seed", cal.seed, "rng seed (required with --estimate)");
  c->add_option("--out", cal.out, "output file (default stdout)");

  AuditArgs audit;
  auto* a = app.add_subcommand("audit", "worst conditional coverage per direction");
  a->add_option("--features", audit.features_path, "features CSV")->required();
  a->add_option("--scores", audit.scores_path, "scores CSV")->required();
  a->add_option("--q", audit.q, "score threshold")->required();
  a->add_option("--delta", audit.delta, "region mass floor")->check(OpenUnitInterval);
  a->add_option("--family", audit.family, "region family")
      ->check(CLI::IsMember({"slab", "halfspace", "ball"}));
  auto* ad = a->add_option("--direction", audit.direction_inline, "inline direction a,b,c");
  auto* af = a->add_option("--directions", audit.directions_path, "directions CSV");
  auto* as = a->add_option("--sample", audit.sample, "sample this many directions")
                 ->check(CLI::PositiveNumber);
  ad->excludes(af)->excludes(as);
  af->excludes(as);
  a->add_option("--seed", audit.seed, "rng seed (required with --sample)");
  a->add_option("--out", audit.out, "output file (default stdout)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Monte Carlo coverage studies");
  s->add_option("--experiment", sim.experiment, "study kind")
      ->required()
      ->check(CLI::IsMember({"hetero", "tilt"}));
  s->add_option("--t", sim.t, "score misspecification in [0, 1]");
  s->add_option("--shift", sim.shift, "test-population mean shift along e1 (hetero)");
  s->add_option("--a-grid", sim.a_grid, "comma-separated tilt strengths (tilt)");
  s->add_option("--trials", sim.trials, "Monte Carlo trials")->check(CLI::PositiveNumber);
  s->add_option("--methods", sim.methods, "comma-separated method tokens");
  s->add_option("--n-val", sim.n_val, "calibration sample size")->check(CLI::PositiveNumber);
  s->add_option("--n-test", sim.n_test, "test sample size")->check(CLI::PositiveNumber);
  s->add_option("--d", sim.dim, "feature dimension")->check(CLI::PositiveNumber);
  s->add_option("--alpha", sim.alpha, "miscoverage level")->check(OpenUnitInterval);
  s->add_option("--delta", sim.delta, "region mass floor")->check(OpenUnitInterval);
  s->add_option("--level-v", sim.level_v, "direction tolerance")->check(OpenUnitInterval);
  s->add_option("--k", sim.k, "sampled direction count")->check(CLI::PositiveNumber);
  s->add_option("--split", sim.split, "direction-fit split fraction")->check(OpenUnitInterval);
  s->add_option("--rho", sim.rho, "radius for *-fixed methods")->check(CLI::NonNegativeNumber);
  s->add_option("--noise", sim.noise, "noise scale")
      ->check(CLI::IsMember({"exp", "softplus", "ramp", "one"}));
  s->add_flag("--corrected", sim.corrected, "finite-sample corrected levels");
  s->add_option("--seed", sim.seed, "rng seed (required)");
  s->add_option("--out", sim.out, "output file prefix (default 'report')");
  s->add_option("--format", sim.format, "unused; JSON and CSV are both written")
      ->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (g->parsed()) {
      if (!gfun.beta && !gfun.tau && !gfun.grid) {
        std::cerr << "gfun: one of --beta, --tau, --grid is required\n";
        return 2;
      }
      return cmd_gfun(gfun);
    }
    if (c->parsed()) {
      if (!cal.rho && cal.estimate.empty()) {
        std::cerr << "calibrate: one of --rho, --estimate is required\n";
        return 2;
      }
      if (!cal.estimate.empty()) {
        if (cal.features_path.empty()) {
          std::cerr << "calibrate: --estimate requires --features\n";
          return 2;
        }
        if (!cal.seed) {
          std::cerr << "calibrate: --estimate requires --seed\n";
          return 2;
        }
      }
      return cmd_calibrate(cal);
    }
    if (a->parsed()) {
      const int sources = (!audit.direction_inline.empty() ? 1 : 0) +
                          (!audit.directions_path.empty() ? 1 : 0) + (audit.sample > 0 ? 1 : 0);
      if (sources != 1) {
        std::cerr << "audit: exactly one of --direction, --directions, --sample is required\n";
        return 2;
      }
      if (audit.sample > 0 && !audit.seed) {
        std::cerr << "audit: --sample requires --seed\n";
        return 2;
      }
      return cmd_audit(audit);
    }
    if (s->parsed()) {
      if (!sim.seed) {
        std::cerr << "simulate: --seed is required\n";
        return 2;
      }
      return cmd_simulate(sim);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const degenerate_direction_error& e) {
    std::cerr << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 2;
}
