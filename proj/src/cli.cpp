#include "tmr/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <map>

#include "tmr/baselines.hpp"
#include "tmr/csv.hpp"

namespace tmr::cli {

namespace fs = std::filesystem;

namespace {

const std::string kResidualHeader = "iter,eta_p1,eta_p2,eta_d,eta_v,eta_g,eta\n";

void require_dir(const fs::path& dir, const char* what) {
  if (dir.empty())
    throw std::invalid_argument(std::string(what) + " required");
}

void prepare_output(const fs::path& dir) {
  require_dir(dir, "--out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ValidationError("cannot create output directory " + dir.string());
}

SolverParams tune_base(const RunConfig& c) {
  SolverParams p = c.params;
  p.rho1 = p.rho2 = 0.5;
  p.beta = 1.0;
  return p;
}

RecoverOptions recover_options(const RunConfig& c) {
  RecoverOptions o;
  o.period = c.period;
  return o;
}

void run_generate(const RunConfig& c) {
  prepare_output(c.output_dir);
  SynthConfig cfg = c.synth;
  cfg.seed = c.seed;
  if (c.period)
    cfg.profile_period = *c.period;
  save_instance(synthesize_instance(cfg), c.output_dir);
}

void run_repair(const RunConfig& c) {
  require_dir(c.instance_dir, "--instance");
  TomographyInstance inst = load_instance(c.instance_dir);
  inst.link_loads = repair_anomalies(inst.link_loads, c.threshold_factor);
  if (c.in_place) {
    csv::write_file(c.instance_dir / "linkloads.csv", csv::matrix_text(inst.link_loads));
    return;
  }
  prepare_output(c.output_dir);
  if (fs::equivalent(c.instance_dir, c.output_dir))
    throw std::invalid_argument("repair writes into the instance directory only with --in-place");
  save_instance(inst, c.output_dir);
}

void run_tune(const RunConfig& c) {
  require_dir(c.instance_dir, "--instance");
  const TomographyInstance inst = load_instance(c.instance_dir);
  prepare_output(c.output_dir);
  CvPlan plan = c.cv;
  plan.seed = c.seed;
  if (c.candidates < 1)
    throw std::invalid_argument("--candidates must be at least 1");
  plan.candidates = log_uniform_candidates(c.candidates, c.seed);
  const CvResult res = tune(inst, plan, tune_base(c), recover_options(c));

  csv::write_file(c.output_dir / "cv_scores.csv", "rho1,rho2,beta,n_cv\n" + cv_scores_csv(res));
  const Candidate& best = res.best_candidate();
  csv::write_file(c.output_dir / "best_params.csv",
                  "rho1,rho2,beta,n_cv\n" + csv::format(best.rho1) + "," +
                      csv::format(best.rho2) + "," + csv::format(best.beta) + "," +
                      csv::format(res.per_candidate[res.best].n_cv) + "\n");
}

int run_recover(const RunConfig& c) {
  require_dir(c.instance_dir, "--instance");
  const TomographyInstance inst = load_instance(c.instance_dir);
  prepare_output(c.output_dir);

  TrafficTensor estimate;
  std::string timings = "interval,iterations,converged,seconds\n";
  std::string warnings = "interval,kind,detail\n";
  int n_warnings = 0;

  if (c.method == Method::slrr) {
    const RecoveryResult res = recover_sequence(inst, c.params, recover_options(c));
    for (int k = 0; k < inst.T; ++k) {
      const IntervalReport& rep = res.report.intervals[k];
      csv::write_file(c.output_dir / ("residuals_" + std::to_string(k + 1) + ".csv"),
                      kResidualHeader + residual_trace_csv(rep.trace));
      timings += std::to_string(k + 1) + "," + std::to_string(rep.iterations) + "," +
                 (rep.converged ? "1" : "0") + "," + csv::format(rep.seconds) + "\n";
      if (!rep.converged) {
        warnings += std::to_string(k + 1) + ",not_converged,eta=" + csv::format(rep.final.eta) +
                    " after " + std::to_string(rep.iterations) + " iterations\n";
        ++n_warnings;
      }
    }
    estimate = res.estimate;
  } else {
    // The baselines do not use the zero-OD mask.
    const RoutingOperator op(inst.routing);
    for (int k = 0; k < inst.T; ++k) {
      const auto start = std::chrono::steady_clock::now();
      const Vector loads = inst.link_loads.col(k);
      Matrix x = gravity_estimate(loads, op);
      int iterations = 1;
      bool converged = true;
      if (c.method == Method::tomogravity) {
        TomoGravityResult tg = tomo_gravity(loads, op, x);
        for (int link : tg.infeasible_links) {
          warnings += std::to_string(k + 1) + ",infeasible_link,link=" +
                      std::to_string(link + 1) + "\n";
          ++n_warnings;
        }
        if (!tg.converged) {
          warnings += std::to_string(k + 1) + ",not_converged,mismatch=" +
                      csv::format(tg.mismatch) + "\n";
          ++n_warnings;
        }
        x = std::move(tg.traffic);
        iterations = tg.sweeps;
        converged = tg.converged;
      }
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      timings += std::to_string(k + 1) + "," + std::to_string(iterations) + "," +
                 (converged ? "1" : "0") + "," + csv::format(secs) + "\n";
      estimate.slices.push_back(std::move(x));
    }
  }

  csv::write_file(c.output_dir / "estimate.csv", csv::matrix_text(estimate.as_od_matrix()));
  csv::write_file(c.output_dir / "timings.csv", timings);
  csv::write_file(c.output_dir / "warnings.csv", warnings);
  return n_warnings;
}

void run_eval(const RunConfig& c) {
  require_dir(c.instance_dir, "--instance");
  require_dir(c.output_dir, "--out");
  const TomographyInstance inst = load_instance(c.instance_dir);
  if (!inst.truth)
    throw ValidationError("truth required: " + (c.instance_dir / "truth.csv").string() +
                          " not found");
  const TrafficTensor estimate = TrafficTensor::from_od_matrix(
      csv::read_nonneg_matrix(c.output_dir / "estimate.csv", inst.N(), inst.T), inst.S);

  std::string text = "interval,nmae\nglobal," + csv::format(nmae(estimate, *inst.truth, inst.mask)) + "\n";
  const auto parts = per_interval_nmae(estimate, *inst.truth, inst.mask);
  for (int k = 0; k < inst.T; ++k)
    text += std::to_string(k + 1) + "," + (parts[k] ? csv::format(*parts[k]) : "NA") + "\n";
  csv::write_file(c.output_dir / "nmae.csv", text);
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

} // namespace

int run(const RunConfig& c) {
  c.params.validate();
  switch (c.command) {
  case Command::generate: run_generate(c); return 0;
  case Command::repair: run_repair(c); return 0;
  case Command::tune: run_tune(c); return 0;
  case Command::recover: return run_recover(c);
  case Command::eval: run_eval(c); return 0;
  }
  return 0;
}

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app("Traffic matrix recovery from link loads", "tmrecover");
  app.require_subcommand(1, 1);

  auto instance = [&](CLI::App* s) {
    s->add_option("--instance", c.instance_dir, "Instance directory")->required();
  };
  auto out_dir = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--out", c.output_dir, "Output directory");
    if (required)
      o->required();
  };
  auto solver = [&](CLI::App* s) {
    s->add_option("--tau", c.params.tau, "Multiplier step length");
    s->add_option("--epsilon", c.params.epsilon, "KKT residual tolerance");
    s->add_option("--max-iter", c.params.max_iter, "Iteration cap per interval");
    s->add_option("--period", c.period, "Intervals per period for the periodic prior");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic instance");
  out_dir(gen, true);
  gen->add_option("--S", c.synth.nodes, "Nodes");
  gen->add_option("--T", c.synth.intervals, "Intervals");
  gen->add_option("--rank", c.synth.rank, "Rank of each traffic slice");
  gen->add_option("--zero-fraction", c.synth.zero_fraction, "Fraction of OD pairs masked to zero");
  gen->add_option("--noise", c.synth.noise_level, "Relative link-load noise");
  gen->add_option("--avg-degree", c.synth.avg_degree, "Average node degree");
  gen->add_option("--period", c.period, "Intervals per traffic cycle");
  gen->add_option("--seed", c.seed, "Random seed");

  auto* rep = app.add_subcommand("repair", "Interpolate over anomalous intervals");
  instance(rep);
  out_dir(rep, false);
  rep->add_option("--threshold-factor", c.threshold_factor, "Multiple of the median column norm");
  rep->add_flag("--in-place", c.in_place, "Rewrite linkloads.csv in the instance directory");

  auto* tun = app.add_subcommand("tune", "Cross-validate log-uniform candidates");
  instance(tun);
  out_dir(tun, true);
  solver(tun);
  std::map<std::string, CvKind> kinds{{"kfold", CvKind::kfold}, {"monte-carlo", CvKind::monte_carlo}};
  tun->add_option("--cv-kind", c.cv.kind, "kfold or monte-carlo")
      ->transform(CLI::CheckedTransformer(kinds));
  tun->add_option("--k", c.cv.folds, "Fold count");
  tun->add_option("--test-ratio", c.cv.test_ratio, "Monte-Carlo test fraction");
  tun->add_option("--repeats", c.cv.repeats, "Monte-Carlo repeats");
  tun->add_option("--candidates", c.candidates, "Candidate count");
  tun->add_option("--seed", c.seed, "Random seed");

  auto* rec = app.add_subcommand("recover", "Estimate the traffic tensor");
  instance(rec);
  out_dir(rec, true);
  solver(rec);
  std::map<std::string, Method> methods{
      {"slrr", Method::slrr}, {"gravity", Method::gravity}, {"tomogravity", Method::tomogravity}};
  rec->add_option("--method", c.method, "slrr, gravity or tomogravity")
      ->transform(CLI::CheckedTransformer(methods));
  rec->add_option("--rho1", c.params.rho1, "Continuity weight");
  rec->add_option("--rho2", c.params.rho2, "Periodicity weight");
  rec->add_option("--beta", c.params.beta, "Penalty parameter");

  auto* ev = app.add_subcommand("eval", "NMAE of <out>/estimate.csv against the truth");
  instance(ev);
  out_dir(ev, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  const std::map<CLI::App*, Command> commands{{gen, Command::generate}, {rep, Command::repair},
                                              {tun, Command::tune},     {rec, Command::recover},
                                              {ev, Command::eval}};
  c.command = commands.at(app.get_subcommands().front());

  try {
    const int warnings = run(c);
    if (warnings > 0)
      err << "warning: " << warnings << " warning(s) written to "
          << (c.output_dir / "warnings.csv").string() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    err << "error: validation: " << one_line(e.what()) << "\n";
  } catch (const NumericError& e) {
    err << "error: numeric: " << one_line(e.what()) << "\n";
  } catch (const MetricError& e) {
    err << "error: metric: " << one_line(e.what()) << "\n";
  } catch (const std::invalid_argument& e) {
    err << "error: argument: " << one_line(e.what()) << "\n";
  } catch (const std::out_of_range& e) {
    err << "error: argument: " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
  }
  return 1;
}

} // namespace tmr::cli
