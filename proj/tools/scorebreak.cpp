// scorebreak: command-line front end for data generation, training, attacks
// and experiment runs. Run `scorebreak <command> --help` for flags.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "scorebreak/bench.hpp"

namespace fs = std::filesystem;
using namespace scorebreak;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig c;
    c.sync();
    return c;
  }
  return load_experiment_config(path);
}

// Budgets are given on the 0..1 intensity scale ("8/255" or "0.0314").
double parse_budget(const std::string& s) {
  double v = 0.0;
  if (const auto slash = s.find('/'); slash != std::string::npos) {
    v = std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  } else {
    v = std::stod(s);
  }
  return v * (kImageRange.hi - kImageRange.lo);
}

std::vector<Sample> samples_for(const ExperimentConfig& cfg, const std::string& manifest, const std::string& split) {
  if (!manifest.empty()) return load_split(manifest, split);
  return generate_split(cfg.data, cfg.seeds.data, split);
}

int num_classes_for(const ExperimentConfig& cfg, const std::string& manifest) {
  return manifest.empty() ? cfg.data.num_classes : load_manifest(manifest).num_classes;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed tensor buffers in the heap; the default trimming makes training syscall-bound.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Score-driven adversarial perturbations for segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string manifest;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic image/mask corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--config", config_path, "Experiment config (its data section is used)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generation seed (default: the config's data seed)")
      ->each([&](const std::string&) { gen_seed_set = true; });

  // train-score
  auto* ts = app.add_subcommand("train-score", "Train the joint conditional/unconditional score network");
  std::string ts_out;
  int ts_steps = -1;
  ts->add_option("--config", config_path, "Experiment config");
  ts->add_option("--data", manifest, "Corpus manifest (default: generate from the config)");
  ts->add_option("--out", ts_out, "Checkpoint path")->required();
  ts->add_option("--steps", ts_steps, "Override the training budget");

  // train-victim
  auto* tv = app.add_subcommand("train-victim", "Train a toy victim segmenter");
  std::string tv_out;
  std::string tv_arch = "unet";
  std::uint64_t tv_seed = 1;
  tv->add_option("--config", config_path, "Experiment config");
  tv->add_option("--data", manifest, "Corpus manifest (default: generate from the config)");
  tv->add_option("--arch", tv_arch, "Architecture")->check(CLI::IsMember(victim_architectures()));
  tv->add_option("--seed", tv_seed, "Initialization and sampling seed");
  tv->add_option("--out", tv_out, "Checkpoint path")->required();

  // attack
  auto* at = app.add_subcommand("attack", "Attack the eval split and score the result on a victim");
  std::string at_method = "score";
  std::string at_eps = "8/255";
  std::string at_mu = "2/255";
  int at_mmax = 30;
  double at_omega = 90.0;
  std::string at_tmap = "head";
  std::uint64_t at_seed = 0;
  std::string at_ckpt;
  std::string at_victim;
  std::string at_out;
  std::string at_split = "eval";
  at->add_option("--config", config_path, "Experiment config (data section and budgets)");
  at->add_option("--data", manifest, "Corpus manifest (default: generate from the config)");
  at->add_option("--method", at_method, "Attack method")
      ->check(CLI::IsMember(std::vector<std::string>{"score", "score-query", "fgsm", "pgd", "random-query",
                                                     "noise-control", "score-no-noise", "score-no-clip", "clean"}));
  at->add_option("--epsilon", at_eps, "L-inf budget on the 0..1 scale, e.g. 8/255");
  at->add_option("--mu", at_mu, "Step size on the 0..1 scale, e.g. 2/255");
  at->add_option("--m-max", at_mmax, "Attack steps (query budget for score-query)");
  at->add_option("--omega", at_omega, "Guidance weight");
  at->add_option("--t-map", at_tmap, "Step-to-timestep map: head | linear | fixed:<t>");
  at->add_option("--seed", at_seed, "Attack seed");
  at->add_option("--checkpoint", at_ckpt, "Score network checkpoint (score methods)");
  at->add_option("--victim", at_victim, "Victim checkpoint")->required();
  at->add_option("--split", at_split, "Split to attack");
  at->add_option("--out", at_out, "Output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a victim on clean or stored adversarial images");
  std::string ev_victim;
  std::string ev_adv;
  std::string ev_out;
  std::string ev_split = "eval";
  ev->add_option("--config", config_path, "Experiment config");
  ev->add_option("--data", manifest, "Corpus manifest (default: generate from the config)");
  ev->add_option("--victim", ev_victim, "Victim checkpoint")->required();
  ev->add_option("--adv", ev_adv, "Directory of adversarial {id}.img files (default: clean images)");
  ev->add_option("--split", ev_split, "Split to evaluate");
  ev->add_option("--out", ev_out, "Per-image metric CSV (a .json summary is written alongside)")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a full experiment from a config");
  std::string run_out;
  run->add_option("--config", config_path, "Experiment config")->required();
  run->add_option("--out", run_out, "Override the output directory");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Ablation sweep over omega or m_max");
  std::string sw_param = "omega";
  std::vector<double> sw_values;
  std::string sw_out;
  sw->add_option("--config", config_path, "Experiment config")->required();
  sw->add_option("--param", sw_param, "Swept parameter")->check(CLI::IsMember({"omega", "m_max"}));
  sw->add_option("--values", sw_values, "Values, comma separated")->required()->delimiter(',');
  sw->add_option("--out", sw_out, "Override the output directory");

  // report
  auto* rp = app.add_subcommand("report", "Print victim x method tables from a run directory");
  std::string rp_run;
  std::vector<std::string> rp_metrics{"mae", "cc", "miou"};
  rp->add_option("--run", rp_run, "Run output directory")->required();
  rp->add_option("--metric", rp_metrics, "Metrics to tabulate")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig cfg = config_or_default(config_path);
      const auto seed = gen_seed_set ? gen_seed : cfg.seeds.data;
      const DatasetManifest m = generate(cfg.data, seed, gen_out);
      std::cout << "wrote " << m.entries.size() << " samples to " << gen_out << " (seed " << seed << ")\n";
      for (const auto& split : split_names()) std::cout << "  " << split << ": " << m.ids(split).size() << '\n';
      return 0;
    }

    if (ts->parsed()) {
      ExperimentConfig cfg = config_or_default(config_path);
      if (ts_steps >= 0) cfg.training.max_steps = ts_steps;
      const int k = num_classes_for(cfg, manifest);
      const auto data = training_pairs(samples_for(cfg, manifest, "score-train"), k);
      ScoreNet net(cfg.training, cfg.schedule);
      std::mt19937_64 rng(cfg.seeds.score);
      train_score_net(net, data, rng, [&](long step, const StepStats&) {
        if (step % 100 == 0) log_line("step " + std::to_string(step) + " loss(ema) " +
                                      std::to_string(net.loss_stats().ema));
        if (cfg.training.checkpoint_every > 0 && step % cfg.training.checkpoint_every == 0) {
          save_checkpoint(net.checkpoint(), ts_out);
        }
      });
      save_checkpoint(net.checkpoint(), ts_out);
      std::cout << "saved score network (" << net.parameter_count() << " parameters, " << net.step()
                << " steps) to " << ts_out << '\n';
      return 0;
    }

    if (tv->parsed()) {
      const ExperimentConfig cfg = config_or_default(config_path);
      const int k = num_classes_for(cfg, manifest);
      const VictimSpec spec{tv_arch, "victim-train", tv_seed};
      const auto split = samples_for(cfg, manifest, "victim-train");
      require_disjoint(split, samples_for(cfg, manifest, "score-train"));
      auto [train, val] = victim_holdout(split);
      const Segmenter v = train_victim(spec, train, val, cfg.victim_training, k);
      save_checkpoint(v.checkpoint(), tv_out);
      std::cout << "victim " << victim_id(spec) << ": clean mIoU train " << v.gate().train_miou << ", val "
                << v.gate().val_miou << '\n';
      if (!v.gate().passed) {
        std::cerr << "warning: victim did not reach the clean-mIoU gate " << v.gate().threshold
                  << "; experiments will refuse it\n";
        return 3;
      }
      return 0;
    }

    if (at->parsed()) {
      ExperimentConfig cfg = config_or_default(config_path);
      cfg.attack.epsilon = parse_budget(at_eps);
      cfg.attack.mu = parse_budget(at_mu);
      cfg.attack.omega = at_omega;
      cfg.attack.t_map = TimestepMap::parse(at_tmap);
      if (at_method == "score-query") {
        cfg.query_budget = at_mmax;
      } else {
        cfg.attack.m_max = at_mmax;
      }
      const int k = num_classes_for(cfg, manifest);
      const Segmenter victim = Segmenter::from_checkpoint(load_checkpoint(at_victim));
      victim.require_gate();
      std::shared_ptr<const ScoreNet> net;
      std::optional<NetScoreOracle> oracle;
      if (method_needs_score_net(at_method)) {
        if (at_ckpt.empty()) throw Error("--checkpoint is required for " + at_method);
        net = std::make_shared<const ScoreNet>(ScoreNet::from_checkpoint(load_checkpoint(at_ckpt)));
        oracle.emplace(net);
        cfg.attack.validate(net->schedule().steps());
      }
      const auto samples = samples_for(cfg, manifest, at_split);
      const fs::path out = at_out;
      fs::create_directories(out / "adv");
      const std::string vid = victim_id(victim.spec());
      AttackContext ctx{&cfg, oracle ? &*oracle : nullptr, net ? &net->schedule() : nullptr, &victim, &victim, k};
      std::vector<ResultRow> rows;
      double max_dev = 0.0;
      for (const Sample& s : samples) {
        auto rng = attack_rng(at_seed, s.id, vid, at_method);
        const Image x_adv = apply_method(at_method, s, ctx, rng);
        max_dev = std::max(max_dev, max_abs_diff(x_adv, s.image));
        write_sample(out / "adv", {s.id, x_adv, s.labels});
        for (const auto& [metric, value] : evaluate_prediction(victim.predict(x_adv), s.labels, k)) {
          rows.push_back({s.id, vid, at_method, metric, value});
        }
      }
      std::ofstream(out / "results.csv") << long_csv(rows);
      const Aggregate agg = aggregate_rows(rows);
      std::ofstream(out / "summary.json") << nlohmann::json{{"method", at_method},
                                                            {"attack", cfg.attack},
                                                            {"seed", at_seed},
                                                            {"images", samples.size()},
                                                            {"max_abs_perturbation", max_dev},
                                                            {"summary", pivot(agg)}}
                                                 .dump(2)
                                          << '\n';
      std::cout << summary_table(pivot(agg), "mae") << summary_table(pivot(agg), "miou");
      return 0;
    }

    if (ev->parsed()) {
      const ExperimentConfig cfg = config_or_default(config_path);
      const int k = num_classes_for(cfg, manifest);
      const Segmenter victim = Segmenter::from_checkpoint(load_checkpoint(ev_victim));
      MetricReport report;
      for (Sample s : samples_for(cfg, manifest, ev_split)) {
        if (!ev_adv.empty()) {
          Image adv = load_image(fs::path(ev_adv) / (s.id + ".img"), s.id);
          if (!adv.same_shape(s.image)) throw Error("adversarial image shape differs for sample '" + s.id + "'");
          s.image = std::move(adv);
        }
        bool degenerate = false;
        auto values = evaluate_prediction(victim.predict(s.image), s.labels, k, &degenerate);
        report.add(s.id, std::move(values), degenerate);
      }
      std::ofstream csv(ev_out);
      report.write_csv(csv);
      fs::path summary = ev_out;
      summary.replace_extension(".json");
      std::ofstream(summary) << report.summary().dump(2) << '\n';
      for (const auto& [metric, mean] : report.means()) std::cout << metric << ' ' << mean << '\n';
      return 0;
    }

    if (run->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (!run_out.empty()) cfg.output_dir = run_out;
      RunOptions opts;
      opts.log = log_line;
      const RunRecord rec = run_experiment(cfg, opts);
      std::cout << "config " << rec.config_hash << ", " << rec.rows.size() << " rows, " << rec.wall_clock_seconds
                << " s\n";
      std::cout << summary_table(pivot(rec.aggregate), "mae") << '\n' << summary_table(pivot(rec.aggregate), "miou");
      for (const auto& e : rec.errors) std::cerr << "error: " << e << '\n';
      return rec.errors.empty() ? 0 : 1;
    }

    if (sw->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (!sw_out.empty()) cfg.output_dir = sw_out;
      RunOptions opts;
      opts.log = log_line;
      const SweepResult res = sweep(cfg, parse_sweep_parameter(sw_param), sw_values, opts);
      int failures = 0;
      for (std::size_t i = 0; i < res.runs.size(); ++i) {
        std::cout << sw_param << " = " << sw_values[i] << '\n' << summary_table(pivot(res.runs[i].aggregate), "mae");
        failures += static_cast<int>(res.runs[i].errors.size());
      }
      return failures == 0 ? 0 : 1;
    }

    if (rp->parsed()) {
      const fs::path path = fs::path(rp_run) / "summary.json";
      std::ifstream in(path);
      if (!in) throw Error("no summary.json in " + rp_run);
      const auto j = nlohmann::json::parse(in);
      std::cout << "run " << j.value("name", "") << "  config " << j.value("config_hash", "") << '\n';
      for (const auto& m : rp_metrics) std::cout << '\n' << m << '\n' << summary_table(j.at("summary"), m);
      if (j.contains("errors") && !j["errors"].empty()) std::cout << "\nerrors: " << j["errors"].dump() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
