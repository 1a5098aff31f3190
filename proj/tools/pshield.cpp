// Command-line front end: certify, train, verify, rcop-bruteforce, env export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <pshield.hpp>

namespace fs = std::filesystem;
using namespace pshield;

namespace {

struct ModelSource {
  std::string env;
  std::string model;

  void add_to(CLI::App* app) {
    auto* e = app->add_option("--env", env, "built-in environment name");
    auto* m = app->add_option("--model", model, "model document (JSON)");
    e->excludes(m);
  }

  Mdp load() const {
    if (!env.empty()) return build_named(env).mdp;
    require(!model.empty(), ErrorCode::Validation, "one of --env or --model is required");
    return load_model(model);
  }

  std::optional<EnvParams> params() const {
    if (env.empty()) return std::nullopt;
    return default_params(env);
  }
};

void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

// "3..7" or "5"
std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const auto v = std::stoull(text);
      return {v, v};
    }
    const auto lo = std::stoull(text.substr(0, dots));
    const auto hi = std::stoull(text.substr(dots + 2));
    require(lo <= hi, ErrorCode::Validation, "empty seed range " + text);
    return {lo, hi};
  } catch (const std::logic_error&) {
    fail(ErrorCode::Validation, "bad seed range " + text);
  }
}

LearningRateSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return LearningRateSchedule::Constant;
  if (s == "inverse_visit") return LearningRateSchedule::InverseVisit;
  fail(ErrorCode::Validation, "unknown learning-rate schedule " + s);
}

void apply_config_file(const std::string& path, LearnerConfig& cfg) {
  json j;
  try {
    j = json::parse(read_text_file(path));
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    if (j.contains("lr_schedule")) cfg.schedule = parse_schedule(j.at("lr_schedule").get<std::string>());
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.epsilon_start = j.value("epsilon_start", cfg.epsilon_start);
    cfg.epsilon_end = j.value("epsilon_end", cfg.epsilon_end);
    cfg.epsilon_decay_fraction = j.value("epsilon_decay_fraction", cfg.epsilon_decay_fraction);
    cfg.total_timesteps = j.value("total_timesteps", cfg.total_timesteps);
    cfg.episode_length = j.value("episode_length", cfg.episode_length);
    cfg.slack_levels = j.value("K", cfg.slack_levels);
    cfg.snapshots = j.value("snapshots", cfg.snapshots);
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed config: ") + e.what());
  }
}

json config_to_json(const LearnerConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"lr_schedule", cfg.schedule == LearningRateSchedule::Constant ? "constant" : "inverse_visit"},
          {"gamma", cfg.gamma},
          {"epsilon_start", cfg.epsilon_start},
          {"epsilon_end", cfg.epsilon_end},
          {"epsilon_decay_fraction", cfg.epsilon_decay_fraction},
          {"total_timesteps", cfg.total_timesteps},
          {"episode_length", cfg.episode_length},
          {"seed", cfg.seed},
          {"K", cfg.slack_levels},
          {"snapshots", cfg.snapshots}};
}

json snapshot_to_json(const SnapshotReport& s) {
  return {{"step", s.step},
          {"epsilon", s.epsilon},
          {"greedy", report_to_json(s.greedy)},
          {"behaviour", report_to_json(s.behaviour)}};
}

json policy_to_json(const MemorylessPolicy& pi) { return {{"kind", "memoryless"}, {"policy", pi}}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probabilistic shielding toolkit"};
  app.require_subcommand(1);

  // certify
  auto* certify = app.add_subcommand("certify", "compute an inductive upper bound on the minimal unsafe-reach probability");
  ModelSource certify_src;
  certify_src.add_to(certify);
  double certify_eps = 1e-6;
  std::string certify_out = "cert.json";
  certify->add_option("--epsilon", certify_eps, "bracket width")->check(CLI::PositiveNumber);
  certify->add_option("--out", certify_out, "certificate path");

  // train
  auto* train = app.add_subcommand("train", "tabular Q-learning, optionally through the shield");
  ModelSource train_src;
  train_src.add_to(train);
  bool shielded = false;
  std::optional<double> train_p;
  std::string cert_path, seeds, out_dir = "run", config_path, schedule;
  std::uint64_t seed = 0;
  double train_eps = 1e-6;
  std::optional<std::size_t> steps, episode_length, slack;
  std::optional<double> gamma, lr;
  train->add_flag("--shielded", shielded, "train through the shield");
  train->add_option("--p", train_p, "safety threshold (defaults to the environment bound)");
  train->add_option("--cert", cert_path, "precomputed certificate (otherwise computed)");
  train->add_option("--epsilon", train_eps, "certificate bracket width when computed");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--seeds", seeds, "seed range a..b, one run per seed");
  train->add_option("--out-dir", out_dir, "output directory");
  train->add_option("--config", config_path, "learner config (JSON)");
  train->add_option("--steps", steps, "total environment steps");
  train->add_option("--episode-length", episode_length, "episode truncation length");
  train->add_option("--gamma", gamma, "discount factor");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--lr-schedule", schedule, "constant | inverse_visit");
  train->add_option("--K", slack, "number of uniform-slack profiles");

  // verify
  auto* verify = app.add_subcommand("verify", "exact safety verification of a stored shield policy");
  ModelSource verify_src;
  verify_src.add_to(verify);
  std::string verify_cert, verify_policy, verify_out;
  double verify_p = 0.0;
  std::size_t verify_k = 4;
  verify->add_option("--cert", verify_cert, "certificate")->required();
  verify->add_option("--policy", verify_policy, "policy.json from train --shielded")->required();
  verify->add_option("--p", verify_p, "safety threshold")->required();
  verify->add_option("--K", verify_k, "number of uniform-slack profiles");
  verify->add_option("--out", verify_out, "report path");

  // rcop-bruteforce
  auto* rcop = app.add_subcommand("rcop-bruteforce", "grid search over randomized stationary policies of a tiny model");
  std::string rcop_model, rcop_out;
  double rcop_p = 0.0, rcop_gamma = 0.99;
  RcopOptions rcop_opts;
  rcop->add_option("--model", rcop_model, "model document")->required();
  rcop->add_option("--p", rcop_p, "safety threshold")->required();
  rcop->add_option("--gamma", rcop_gamma, "discount factor");
  rcop->add_option("--grid", rcop_opts.grid, "grid resolution per two-action state");
  rcop->add_option("--seed", rcop_opts.seed, "seed for Dirichlet samples");
  rcop->add_option("--out", rcop_out, "solution path");

  // env export
  auto* env = app.add_subcommand("env", "built-in environments");
  env->require_subcommand(1);
  auto* env_export = env->add_subcommand("export", "dump a built-in environment as a model document");
  std::string export_name, export_out;
  env_export->add_option("--name", export_name, "environment name")->required();
  env_export->add_option("--out", export_out, "model path")->required();
  auto* env_list = env->add_subcommand("list", "list built-in environments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorCode::Validation);
  }

  try {
    if (*certify) {
      const Mdp m = certify_src.load();
      const SafetyCertificate cert = interval_iteration(m, certify_eps);
      write_json(certify_out, certificate_to_json(cert));
      std::cout << "beta(s_init) = " << cert.beta[m.initial] << " after " << cert.iterations
                << " iterations\n";
      return 0;
    }

    if (*train) {
      const Mdp m = train_src.load();
      const auto params = train_src.params();
      LearnerConfig cfg;
      if (params) {
        cfg.total_timesteps = params->total_timesteps;
        cfg.episode_length = params->episode_length;
      }
      if (!config_path.empty()) apply_config_file(config_path, cfg);
      if (steps) cfg.total_timesteps = *steps;
      if (episode_length) cfg.episode_length = *episode_length;
      if (gamma) cfg.gamma = *gamma;
      if (lr) cfg.learning_rate = *lr;
      if (!schedule.empty()) cfg.schedule = parse_schedule(schedule);
      if (slack) cfg.slack_levels = *slack;
      cfg.validate();

      std::shared_ptr<const ShieldModel> model;
      if (shielded) {
        require(train_p.has_value() || params.has_value(), ErrorCode::Validation,
                "--p is required for shielded training on a model file");
        const double p = train_p ? *train_p : params->safety_bound;
        const SafetyCertificate cert =
            cert_path.empty() ? interval_iteration(m, train_eps) : load_certificate(cert_path);
        model = make_shield(m, cert, p, ProfileFamily{cfg.slack_levels});
        fs::create_directories(out_dir);
        write_json(fs::path(out_dir) / "cert.json", certificate_to_json(cert));
      }

      const auto [lo, hi] = seeds.empty() ? std::pair{seed, seed} : parse_seed_range(seeds);
      bool all_pass = true;
      for (std::uint64_t s = lo; s <= hi; ++s) {
        cfg.seed = s;
        const fs::path dir = seeds.empty() ? fs::path(out_dir) : fs::path(out_dir) / ("seed_" + std::to_string(s));
        fs::create_directories(dir);
        write_json(dir / "config.json", config_to_json(cfg));
        json summary;
        if (shielded) {
          const ShieldedRun run = train_shielded(model, cfg);
          write_text_file((dir / "curves.csv").string(), run.curve.to_csv());
          write_json(dir / "policy.json", shield_policy_to_json(run.policy));
          fs::create_directories(dir / "snapshots");
          for (std::size_t k = 0; k < run.snapshots.size(); ++k) {
            const auto& snap = run.snapshots[k];
            all_pass = all_pass && snap.greedy.pass && snap.behaviour.pass;
            write_json(dir / "snapshots" / ("report_" + std::to_string(k + 1) + ".json"),
                       snapshot_to_json(snap));
          }
          const SafetyReport final_report = verify_shield_policy_exact(*model, run.policy);
          all_pass = all_pass && final_report.pass;
          write_json(dir / "report.json", report_to_json(final_report));
          summary = {{"episodes", run.curve.episodes.size()},
                     {"violation_rate", run.curve.violation_rate()},
                     {"final_100_mean_return", run.curve.mean_return_last(100)},
                     {"final_policy_reach", final_report.probability},
                     {"snapshots", run.snapshots.size()}};
        } else {
          const UnshieldedRun run = train_unshielded(m, cfg);
          write_text_file((dir / "curves.csv").string(), run.curve.to_csv());
          write_json(dir / "policy.json", policy_to_json(run.policy));
          const MarkovChain chain = induce_chain(m, run.policy);
          summary = {{"episodes", run.curve.episodes.size()},
                     {"violation_rate", run.curve.violation_rate()},
                     {"final_100_mean_return", run.curve.mean_return_last(100)},
                     {"final_policy_reach", exact_reach(chain, unsafe_mask(chain))[m.initial]}};
        }
        write_json(dir / "summary.json", summary);
        std::cout << "seed " << s << ": " << summary.dump() << "\n";
      }
      if (!all_pass) {
        std::cerr << "a snapshot policy failed exact verification\n";
        return static_cast<int>(ErrorCode::Certification);
      }
      return 0;
    }

    if (*verify) {
      const Mdp m = verify_src.load();
      const auto model = make_shield(m, load_certificate(verify_cert), verify_p, ProfileFamily{verify_k});
      const ShieldPolicy pi = shield_policy_from_json(json::parse(read_text_file(verify_policy)), *model);
      const SafetyReport rep = verify_shield_policy_exact(*model, pi);
      const json j = report_to_json(rep);
      if (!verify_out.empty()) write_json(verify_out, j);
      std::cout << j.dump(2) << "\n";
      return rep.pass ? 0 : static_cast<int>(ErrorCode::Certification);
    }

    if (*rcop) {
      const Mdp m = load_model(rcop_model);
      const RcopSolution sol = brute_force_rcop(m, rcop_p, rcop_gamma, rcop_opts);
      const json j = rcop_to_json(sol);
      if (!rcop_out.empty()) write_json(rcop_out, j);
      std::cout << j.dump(2) << "\n";
      require(sol.found, ErrorCode::Infeasible, "no grid policy meets the threshold");
      return 0;
    }

    if (*env_export) {
      write_text_file(export_out, serialize_model(build_named(export_name).mdp) + "\n");
      return 0;
    }
    if (*env_list) {
      for (const auto& name : builtin_env_names()) {
        const EnvParams p = default_params(name);
        std::cout << name << "  states=" << p.state_space_size << " actions=" << p.action_space_size
                  << " bound=" << p.safety_bound << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Validation);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Internal);
  }
  return static_cast<int>(ErrorCode::Internal);
}
