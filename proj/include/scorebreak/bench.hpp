#ifndef SCOREBREAK_BENCH_HPP
#define SCOREBREAK_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/attack.hpp"
#include "scorebreak/checkpoint.hpp"
#include "scorebreak/data.hpp"
#include "scorebreak/metrics.hpp"
#include "scorebreak/scorenet.hpp"
#include "scorebreak/victim.hpp"

namespace scorebreak {

// Attack methods understood by the harness.
inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"clean",       "score",         "score-query",  "fgsm",
                                              "pgd",         "random-query",  "noise-control", "score-no-noise",
                                              "score-no-clip"};
  return names;
}

inline bool method_needs_gradients(const std::string& m) { return m == "fgsm" || m == "pgd"; }
inline bool method_needs_queries(const std::string& m) { return m == "score-query" || m == "random-query"; }
inline bool method_needs_score_net(const std::string& m) { return m.rfind("score", 0) == 0; }

struct Seeds {
  std::uint64_t data = 0;
  std::uint64_t score = 0;
  std::uint64_t attack = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Seeds seeds;
  SyntheticSpec data;
  /// When set, the corpus is read from this manifest instead of generated.
  std::string manifest;
  ScheduleSpec schedule;
  TrainingConfig training;
  std::vector<VictimSpec> victims{{"unet", "victim-train", 1}, {"dilated", "victim-train", 2}};
  VictimTrainingConfig victim_training;
  AttackConfig attack;
  std::vector<std::string> methods{"clean", "score", "noise-control"};
  int query_budget = 100;
  int pgd_steps = 10;
  int random_query_budget = 100;
  std::vector<std::string> metrics;  // empty: every applicable metric
  /// Evaluate white-box perturbations crafted on one victim against the others.
  bool transfer = false;
  int max_eval_images = 0;  // 0: the whole eval split
  std::string output_dir = "runs/experiment";

  /// Derives the score-net shape fields and seed from the data, schedule and seeds.
  void sync() {
    training.T = schedule.steps;
    training.seed = seeds.score;
    training.image_channels = data.channels;
    training.image_height = data.height;
    training.image_width = data.width;
    training.condition_channels = condition_channels(data.num_classes);
  }

  void validate() const {
    data.validate();
    training.validate();
    if (victims.empty()) throw Error("experiment: at least one victim is required");
    for (const auto& v : victims) v.validate();
    if (methods.empty()) throw Error("experiment: at least one method is required");
    for (const auto& m : methods) {
      const auto& n = method_names();
      if (std::find(n.begin(), n.end(), m) == n.end()) throw Error("experiment: unknown method '" + m + "'");
    }
    if (query_budget < 1 || pgd_steps < 1 || random_query_budget < 1) {
      throw Error("experiment: query_budget, pgd_steps and random_query_budget must be >= 1");
    }
    attack.validate(schedule.steps);
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"seeds", {{"data", c.seeds.data}, {"score", c.seeds.score}, {"attack", c.seeds.attack}}},
                     {"data", c.data},
                     {"manifest", c.manifest},
                     {"schedule", c.schedule},
                     {"training", c.training},
                     {"victims", c.victims},
                     {"victim_training", c.victim_training},
                     {"attack", c.attack},
                     {"methods", c.methods},
                     {"query_budget", c.query_budget},
                     {"pgd_steps", c.pgd_steps},
                     {"random_query_budget", c.random_query_budget},
                     {"metrics", c.metrics},
                     {"transfer", c.transfer},
                     {"max_eval_images", c.max_eval_images},
                     {"output_dir", c.output_dir}};
}

/// Seeds must be given explicitly; everything else has defaults.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (!j.contains("seeds")) throw Error("experiment: config must state its seeds explicitly");
  const auto& s = j.at("seeds");
  c.seeds = {s.at("data").get<std::uint64_t>(), s.at("score").get<std::uint64_t>(),
             s.at("attack").get<std::uint64_t>()};
  c.name = j.value("name", c.name);
  if (j.contains("data")) c.data = j.at("data").get<SyntheticSpec>();
  c.manifest = j.value("manifest", c.manifest);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleSpec>();
  if (j.contains("training")) c.training = j.at("training").get<TrainingConfig>();
  if (j.contains("victims")) c.victims = j.at("victims").get<std::vector<VictimSpec>>();
  if (j.contains("victim_training")) c.victim_training = j.at("victim_training").get<VictimTrainingConfig>();
  if (j.contains("attack")) c.attack = j.at("attack").get<AttackConfig>();
  c.methods = j.value("methods", c.methods);
  c.query_budget = j.value("query_budget", c.query_budget);
  c.pgd_steps = j.value("pgd_steps", c.pgd_steps);
  c.random_query_budget = j.value("random_query_budget", c.random_query_budget);
  c.metrics = j.value("metrics", c.metrics);
  c.transfer = j.value("transfer", c.transfer);
  c.max_eval_images = j.value("max_eval_images", c.max_eval_images);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.sync();
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in, nullptr, true, true).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed config " + path.string() + ": " + e.what());
  }
}

inline std::uint64_t fnv1a_string(const std::string& s) {
  return detail::fnv1a(detail::kFnvOffset, s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Hash of everything that affects the numbers (the output location does not).
inline std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("output_dir");
  return hex64(fnv1a_string(j.dump()));
}

inline std::string victim_id(const VictimSpec& v) { return v.architecture + "-s" + std::to_string(v.seed); }

/// Checkpoint cache directory: $SCOREBREAK_CACHE, else `fallback`.
inline std::filesystem::path cache_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("SCOREBREAK_CACHE"); env != nullptr && *env != '\0') return env;
  return fallback;
}

/// Corpus for an experiment: generated in memory or read from a manifest.
struct Corpus {
  std::vector<Sample> score_train;
  std::vector<Sample> victim_train;
  std::vector<Sample> eval;
  int num_classes = 2;
};

inline Corpus load_corpus(const ExperimentConfig& cfg) {
  Corpus c;
  if (!cfg.manifest.empty()) {
    const DatasetManifest m = load_manifest(cfg.manifest);
    if (m.height != cfg.data.height || m.width != cfg.data.width || m.channels != cfg.data.channels ||
        m.num_classes != cfg.data.num_classes) {
      throw Error("manifest " + cfg.manifest + " does not match the config's data shape and class count");
    }
    c.score_train = load_split(cfg.manifest, "score-train");
    c.victim_train = load_split(cfg.manifest, "victim-train");
    c.eval = load_split(cfg.manifest, "eval");
    c.num_classes = m.num_classes;
  } else {
    c.score_train = generate_split(cfg.data, cfg.seeds.data, "score-train");
    c.victim_train = generate_split(cfg.data, cfg.seeds.data, "victim-train");
    c.eval = generate_split(cfg.data, cfg.seeds.data, "eval");
    c.num_classes = cfg.data.num_classes;
  }
  if (cfg.max_eval_images > 0 && static_cast<int>(c.eval.size()) > cfg.max_eval_images) {
    c.eval.resize(static_cast<std::size_t>(cfg.max_eval_images));
  }
  require_disjoint(c.victim_train, c.score_train);
  return c;
}

/// Victim training uses the first 7/8 of its split; the rest gates it.
inline std::pair<std::vector<Sample>, std::vector<Sample>> victim_holdout(const std::vector<Sample>& split) {
  if (split.size() < 2) throw Error("victim split needs at least two samples");
  const std::size_t val = std::max<std::size_t>(1, split.size() / 8);
  std::vector<Sample> train(split.begin(), split.end() - static_cast<std::ptrdiff_t>(val));
  std::vector<Sample> hold(split.end() - static_cast<std::ptrdiff_t>(val), split.end());
  return {std::move(train), std::move(hold)};
}

namespace detail {

inline std::string data_key(const ExperimentConfig& cfg) {
  return cfg.manifest.empty() ? nlohmann::json{{"spec", cfg.data}, {"seed", cfg.seeds.data}}.dump()
                              : nlohmann::json{{"manifest", cfg.manifest}}.dump();
}

}  // namespace detail

using Logger = std::function<void(const std::string&)>;

/// Trains the score network or loads it from the cache.
inline std::shared_ptr<const ScoreNet> obtain_score_net(const ExperimentConfig& cfg, const Corpus& corpus,
                                                        const std::filesystem::path& cache, const Logger& log) {
  const std::string key = hex64(fnv1a_string(
      nlohmann::json{{"data", detail::data_key(cfg)}, {"schedule", cfg.schedule}, {"training", cfg.training}}.dump()));
  const auto path = cache / ("score-" + key + ".ckpt");
  if (std::filesystem::exists(path)) {
    if (log) log("score net: cached " + path.string());
    return std::make_shared<const ScoreNet>(ScoreNet::from_checkpoint(load_checkpoint(path)));
  }
  auto net = std::make_shared<ScoreNet>(cfg.training, cfg.schedule);
  std::mt19937_64 rng(cfg.seeds.score);
  const auto pairs = training_pairs(corpus.score_train, corpus.num_classes);
  train_score_net(*net, pairs, rng, [&](long step, const StepStats&) {
    if (log && (step % 250 == 0 || step == cfg.training.max_steps)) {
      std::ostringstream os;
      os << "score net: step " << step << " loss(ema) " << net->loss_stats().ema;
      log(os.str());
    }
  });
  save_checkpoint(net->checkpoint(), path);
  return net;
}

/// Trains a victim or loads it from the cache.
inline std::shared_ptr<const Segmenter> obtain_victim(const ExperimentConfig& cfg, const VictimSpec& spec,
                                                      const Corpus& corpus, const std::filesystem::path& cache,
                                                      const Logger& log) {
  const std::string key = hex64(fnv1a_string(
      nlohmann::json{{"data", detail::data_key(cfg)}, {"spec", spec}, {"training", cfg.victim_training}}.dump()));
  const auto path = cache / ("victim-" + victim_id(spec) + "-" + key + ".ckpt");
  if (std::filesystem::exists(path)) {
    if (log) log("victim " + victim_id(spec) + ": cached " + path.string());
    return std::make_shared<const Segmenter>(Segmenter::from_checkpoint(load_checkpoint(path)));
  }
  const auto& split = spec.split == "eval" ? corpus.eval : corpus.victim_train;
  auto [train, val] = victim_holdout(split);
  auto v = std::make_shared<Segmenter>(train_victim(spec, train, val, cfg.victim_training, corpus.num_classes));
  if (log) {
    std::ostringstream os;
    os << "victim " << victim_id(spec) << ": clean mIoU train " << v->gate().train_miou << " val "
       << v->gate().val_miou << (v->gate().passed ? " (gate passed)" : " (GATE FAILED)");
    log(os.str());
  }
  save_checkpoint(v->checkpoint(), path);
  return v;
}

/// Everything an attack method may draw on for one image.
struct AttackContext {
  const ExperimentConfig* cfg = nullptr;
  const ScoreOracle* oracle = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const QueryTarget* query_victim = nullptr;
  const GradientProvider* gradient_victim = nullptr;
  int num_classes = 2;
};

/// Deterministic per-(image, victim, method) random stream.
inline std::mt19937_64 attack_rng(std::uint64_t seed, const std::string& image_id, const std::string& victim,
                                  const std::string& method) {
  const std::uint64_t h = fnv1a_string(image_id + "|" + victim + "|" + method);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

/// Produces the adversarial image of `method` for one sample.
inline Image apply_method(const std::string& method, const Sample& s, const AttackContext& ctx, std::mt19937_64& rng) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const AttackConfig& base = cfg.attack;
  if (method == "clean") return s.image;
  if (method == "noise-control") return gaussian_noise_control(s.image, base.epsilon, base.mu, base.m_max, rng, base.range);
  if (method == "fgsm" || method == "pgd") {
    if (ctx.gradient_victim == nullptr) throw Error(method + ": needs a differentiable victim");
    return method == "fgsm" ? fgsm(*ctx.gradient_victim, s.image, s.labels, base.epsilon, base.range)
                            : pgd(*ctx.gradient_victim, s.image, s.labels, base.epsilon, base.mu, cfg.pgd_steps,
                                  base.range);
  }
  if (method == "random-query") {
    if (ctx.query_victim == nullptr) throw Error("random-query: needs a victim");
    return random_query_attack(*ctx.query_victim, s.image, s.labels, base.epsilon, cfg.random_query_budget, rng,
                               base.range)
        .x_adv;
  }
  if (ctx.oracle == nullptr || ctx.schedule == nullptr) throw Error(method + ": needs a score network");
  AttackConfig ac = base;
  const QueryTarget* victim = nullptr;
  if (method == "score-query") {
    ac.query_enabled = true;
    ac.m_max = cfg.query_budget;
    victim = ctx.query_victim;
  } else if (method == "score-no-noise") {
    ac.noising = false;
  } else if (method == "score-no-clip") {
    ac.clip_pseudo = false;
  } else if (method != "score") {
    throw Error("unknown method '" + method + "'");
  }
  const ConditionMap y = condition_from_labels(s.labels, ctx.num_classes);
  return run_attack(*ctx.oracle, s.image, y, ac, *ctx.schedule, victim).x_adv;
}

/// One long-format result row.
struct ResultRow {
  std::string image_id;
  std::string victim;
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct AggregateCell {
  double mean = 0.0;
  int count = 0;
};

/// (victim, method, metric) -> mean over images.
using Aggregate = std::map<std::tuple<std::string, std::string, std::string>, AggregateCell>;

struct RunRecord {
  std::string config_hash;
  Seeds seeds;
  std::vector<ResultRow> rows;
  Aggregate aggregate;
  double wall_clock_seconds = 0.0;
  std::map<std::string, std::string> artifacts;
  std::map<std::string, nlohmann::json> victims;  // gate reports
  std::vector<std::string> errors;

  [[nodiscard]] std::optional<double> mean(const std::string& victim, const std::string& method,
                                           const std::string& metric) const {
    const auto it = aggregate.find({victim, method, metric});
    if (it == aggregate.end()) return std::nullopt;
    return it->second.mean;
  }
};

inline Aggregate aggregate_rows(const std::vector<ResultRow>& rows) {
  Aggregate agg;
  std::map<std::tuple<std::string, std::string, std::string>, double> sums;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.victim, r.method, r.metric);
    sums[key] += r.value;
    ++agg[key].count;
  }
  for (auto& [key, cell] : agg) cell.mean = sums[key] / cell.count;
  return agg;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace detail

inline std::string long_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "image_id,victim,method,metric,value\n";
  for (const auto& r : rows) {
    os << r.image_id << ',' << r.victim << ',' << r.method << ',' << r.metric << ',' << detail::fmt(r.value) << '\n';
  }
  return os.str();
}

inline std::string aggregate_csv(const Aggregate& agg) {
  std::ostringstream os;
  os << "victim,method,metric,mean,images\n";
  for (const auto& [key, cell] : agg) {
    const auto& [victim, method, metric] = key;
    os << victim << ',' << method << ',' << metric << ',' << detail::fmt(cell.mean) << ',' << cell.count << '\n';
  }
  return os.str();
}

/// Pivoted summary: victim -> method -> metric -> mean.
inline nlohmann::json pivot(const Aggregate& agg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, cell] : agg) {
    const auto& [victim, method, metric] = key;
    j[victim][method][metric] = cell.mean;
  }
  return j;
}

/// Grouped bar chart of one metric: one group per method, one bar per victim.
inline std::string bar_chart_svg(const Aggregate& agg, const std::string& metric, const std::string& title) {
  std::vector<std::string> victims;
  std::vector<std::string> methods;
  double vmax = 0.0;
  for (const auto& [key, cell] : agg) {
    const auto& [victim, method, m] = key;
    if (m != metric) continue;
    if (std::find(victims.begin(), victims.end(), victim) == victims.end()) victims.push_back(victim);
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
    vmax = std::max(vmax, cell.mean);
  }
  if (vmax <= 0.0) vmax = 1.0;
  const int bar = 18;
  const int gap = 24;
  const int left = 50;
  const int plot_h = 220;
  const int group = static_cast<int>(victims.size()) * bar + gap;
  const int width = left + static_cast<int>(methods.size()) * group + 160;
  const int height = plot_h + 110;
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << title << " (" << metric << ")</text>\n";
  const int base = plot_h + 30;
  os << "<line x1=\"" << left << "\" y1=\"" << base << "\" x2=\"" << width - 150 << "\" y2=\"" << base
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"4\" y=\"34\">" << detail::fmt(vmax).substr(0, 6) << "</text>\n";
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const int gx = left + static_cast<int>(mi) * group;
    for (std::size_t vi = 0; vi < victims.size(); ++vi) {
      const auto it = agg.find({victims[vi], methods[mi], metric});
      if (it == agg.end()) continue;
      const int h = static_cast<int>(plot_h * std::max(0.0, it->second.mean) / vmax);
      os << "<rect x=\"" << gx + static_cast<int>(vi) * bar << "\" y=\"" << base - h << "\" width=\"" << bar - 2
         << "\" height=\"" << h << "\" fill=\"" << colors[vi % 6] << "\"/>\n";
    }
    os << "<text x=\"" << gx << "\" y=\"" << base + 14 << "\" transform=\"rotate(30 " << gx << ',' << base + 14
       << ")\">" << methods[mi] << "</text>\n";
  }
  for (std::size_t vi = 0; vi < victims.size(); ++vi) {
    const int y = 30 + static_cast<int>(vi) * 16;
    os << "<rect x=\"" << width - 140 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << colors[vi % 6]
       << "\"/><text x=\"" << width - 126 << "\" y=\"" << y + 9 << "\">" << victims[vi] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

struct RunOptions {
  Logger log;
  /// Write CSV/JSON/SVG artifacts to cfg.output_dir.
  bool persist = true;
  /// Checkpoint cache; defaults to cache_dir(output_dir / "cache").
  std::optional<std::filesystem::path> cache;
};

/// Runs {data, score net, victims, attacks, metrics} and persists the results.
/// Stage failures are recorded in RunRecord::errors; whatever was computed
/// before the failure is kept and written out.
inline RunRecord run_experiment(ExperimentConfig cfg, const RunOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.sync();
  cfg.validate();
  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.seeds = cfg.seeds;
  const std::filesystem::path out = cfg.output_dir;
  const auto cache = opts.cache ? *opts.cache : cache_dir(out / "cache");
  std::filesystem::create_directories(cache);
  const Logger& log = opts.log;

  auto finish = [&]() {
    rec.aggregate = aggregate_rows(rec.rows);
    rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!opts.persist) return;
    std::filesystem::create_directories(out);
    detail::write_text(out / "results.csv", long_csv(rec.rows));
    detail::write_text(out / "aggregate.csv", aggregate_csv(rec.aggregate));
    rec.artifacts["results"] = (out / "results.csv").string();
    rec.artifacts["aggregate"] = (out / "aggregate.csv").string();
    for (const std::string metric : {kMae, kMiou}) {
      const bool any = std::any_of(rec.aggregate.begin(), rec.aggregate.end(),
                                   [&](const auto& kv) { return std::get<2>(kv.first) == metric; });
      if (!any) continue;
      const auto path = out / ("plot-" + metric + ".svg");
      detail::write_text(path, bar_chart_svg(rec.aggregate, metric, cfg.name));
      rec.artifacts["plot-" + metric] = path.string();
    }
    nlohmann::json summary = {{"name", cfg.name},
                              {"config_hash", rec.config_hash},
                              {"seeds", {{"data", cfg.seeds.data}, {"score", cfg.seeds.score}, {"attack", cfg.seeds.attack}}},
                              {"config", cfg},
                              {"victims", rec.victims},
                              {"summary", pivot(rec.aggregate)},
                              {"wall_clock_seconds", rec.wall_clock_seconds},
                              {"artifacts", rec.artifacts},
                              {"errors", rec.errors}};
    detail::write_text(out / "summary.json", summary.dump(2) + "\n");
  };

  Corpus corpus;
  std::shared_ptr<const ScoreNet> net;
  std::vector<std::shared_ptr<const Segmenter>> victims;
  try {
    corpus = load_corpus(cfg);
    if (log) log("data: " + std::to_string(corpus.score_train.size()) + " score-train, " +
                 std::to_string(corpus.victim_train.size()) + " victim-train, " + std::to_string(corpus.eval.size()) +
                 " eval");
    const bool need_net = std::any_of(cfg.methods.begin(), cfg.methods.end(), method_needs_score_net);
    if (need_net) net = obtain_score_net(cfg, corpus, cache, log);
    for (const auto& spec : cfg.victims) {
      auto v = obtain_victim(cfg, spec, corpus, cache, log);
      rec.victims[victim_id(spec)] = {{"val_miou", v->gate().val_miou},
                                      {"train_miou", v->gate().train_miou},
                                      {"passed", v->gate().passed}};
      v->require_gate();
      victims.push_back(std::move(v));
    }
  } catch (const std::exception& e) {
    rec.errors.emplace_back(std::string("setup: ") + e.what());
    finish();
    return rec;
  }

  std::optional<NetScoreOracle> oracle;
  if (net) oracle.emplace(net);
  const std::set<std::string> keep(cfg.metrics.begin(), cfg.metrics.end());
  auto record = [&](const Sample& s, const std::string& victim, const std::string& method, const Image& probs) {
    for (const auto& [metric, value] : evaluate_prediction(probs, s.labels, corpus.num_classes)) {
      if (!keep.empty() && keep.count(metric) == 0) continue;
      rec.rows.push_back({s.id, victim, method, metric, value});
    }
  };

  for (const std::string& method : cfg.methods) {
    try {
      const bool victim_specific = method_needs_gradients(method) || method_needs_queries(method);
      for (const Sample& s : corpus.eval) {
        if (!victim_specific) {
          // One adversarial image, evaluated on every victim.
          AttackContext ctx{&cfg, oracle ? &*oracle : nullptr, net ? &net->schedule() : nullptr, nullptr, nullptr,
                            corpus.num_classes};
          auto rng = attack_rng(cfg.seeds.attack, s.id, "*", method);
          const Image x_adv = apply_method(method, s, ctx, rng);
          for (std::size_t v = 0; v < victims.size(); ++v) {
            record(s, victim_id(cfg.victims[v]), method, victims[v]->predict(x_adv));
          }
          continue;
        }
        for (std::size_t v = 0; v < victims.size(); ++v) {
          const std::string vid = victim_id(cfg.victims[v]);
          AttackContext ctx{&cfg,          oracle ? &*oracle : nullptr, net ? &net->schedule() : nullptr,
                            victims[v].get(), victims[v].get(),            corpus.num_classes};
          auto rng = attack_rng(cfg.seeds.attack, s.id, vid, method);
          const Image x_adv = apply_method(method, s, ctx, rng);
          record(s, vid, method, victims[v]->predict(x_adv));
          if (cfg.transfer && method_needs_gradients(method)) {
            for (std::size_t u = 0; u < victims.size(); ++u) {
              if (u == v) continue;
              record(s, victim_id(cfg.victims[u]), method + "<-" + vid, victims[u]->predict(x_adv));
            }
          }
        }
      }
      if (log) log("method " + method + ": done");
    } catch (const std::exception& e) {
      rec.errors.emplace_back("method " + method + ": " + e.what());
    }
  }
  finish();
  return rec;
}

/// Swept parameter of an ablation sweep.
enum class SweepParameter { Omega, MMax };

inline SweepParameter parse_sweep_parameter(const std::string& s) {
  if (s == "omega") return SweepParameter::Omega;
  if (s == "m_max") return SweepParameter::MMax;
  throw Error("sweep: parameter must be omega or m_max, got '" + s + "'");
}

inline std::string to_string(SweepParameter p) { return p == SweepParameter::Omega ? "omega" : "m_max"; }

struct SweepResult {
  SweepParameter parameter = SweepParameter::Omega;
  std::vector<double> values;
  std::vector<RunRecord> runs;
};

/// Line chart of a metric against the swept value, one line per (victim, method).
inline std::string line_chart_svg(const SweepResult& sweep, const std::string& metric) {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double ymax = 0.0;
  for (std::size_t i = 0; i < sweep.runs.size(); ++i) {
    for (const auto& [key, cell] : sweep.runs[i].aggregate) {
      const auto& [victim, method, m] = key;
      if (m != metric || method == "clean") continue;
      series[victim + "/" + method].emplace_back(sweep.values[i], cell.mean);
      ymax = std::max(ymax, cell.mean);
    }
  }
  if (ymax <= 0.0) ymax = 1.0;
  const double xmin = *std::min_element(sweep.values.begin(), sweep.values.end());
  double xmax = *std::max_element(sweep.values.begin(), sweep.values.end());
  if (xmax == xmin) xmax = xmin + 1.0;
  const int left = 50;
  const int top = 30;
  const int w = 360;
  const int h = 220;
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + w + 200 << "\" height=\"" << top + h + 40
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << metric << " vs " << to_string(sweep.parameter)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << top + h + 16 << "\">" << detail::fmt(xmin) << "</text>\n";
  os << "<text x=\"" << left + w - 20 << "\" y=\"" << top + h + 16 << "\">" << detail::fmt(xmax) << "</text>\n";
  os << "<text x=\"4\" y=\"" << top + 8 << "\">" << detail::fmt(ymax).substr(0, 6) << "</text>\n";
  int idx = 0;
  for (const auto& [name, pts] : series) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[idx % 6] << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) {
      os << left + static_cast<int>(w * (x - xmin) / (xmax - xmin)) << ','
         << top + h - static_cast<int>(h * y / ymax) << ' ';
    }
    os << "\"/>\n<text x=\"" << left + w + 10 << "\" y=\"" << top + 10 + idx * 14 << "\" fill=\"" << colors[idx % 6]
       << "\">" << name << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

/// One run per value with shared seeds; writes a merged table and line plots
/// under cfg.output_dir. Trained networks are shared through the cache.
inline SweepResult sweep(const ExperimentConfig& cfg, SweepParameter parameter, const std::vector<double>& values,
                         const RunOptions& opts = {}) {
  if (values.empty()) throw Error("sweep: no values given");
  SweepResult res;
  res.parameter = parameter;
  res.values = values;
  const std::filesystem::path root = cfg.output_dir;
  RunOptions run_opts = opts;
  if (!run_opts.cache) run_opts.cache = cache_dir(root / "cache");
  for (double v : values) {
    ExperimentConfig c = cfg;
    if (parameter == SweepParameter::Omega) {
      c.attack.omega = v;
    } else {
      if (v < 1.0 || v != static_cast<double>(static_cast<int>(v))) throw Error("sweep: m_max values must be integers >= 1");
      c.attack.m_max = static_cast<int>(v);
    }
    c.output_dir = (root / (to_string(parameter) + "=" + detail::fmt(v))).string();
    res.runs.push_back(run_experiment(c, run_opts));
    if (opts.log) opts.log(to_string(parameter) + "=" + detail::fmt(v) + ": done");
  }
  if (opts.persist) {
    std::filesystem::create_directories(root);
    std::ostringstream os;
    os << to_string(parameter) << ",victim,method,metric,mean,images\n";
    std::set<std::string> metrics;
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (const auto& [key, cell] : res.runs[i].aggregate) {
        const auto& [victim, method, metric] = key;
        metrics.insert(metric);
        os << detail::fmt(values[i]) << ',' << victim << ',' << method << ',' << metric << ','
           << detail::fmt(cell.mean) << ',' << cell.count << '\n';
      }
    }
    detail::write_text(root / "sweep.csv", os.str());
    for (const auto& m : metrics) detail::write_text(root / ("sweep-" + m + ".svg"), line_chart_svg(res, m));
  }
  return res;
}

/// Markdown table of a pivoted summary for one metric (victims x methods).
inline std::string summary_table(const nlohmann::json& pivoted, const std::string& metric) {
  std::vector<std::string> methods;
  for (const auto& [victim, per_method] : pivoted.items()) {
    for (const auto& [method, metrics] : per_method.items()) {
      if (metrics.contains(metric) && std::find(methods.begin(), methods.end(), method) == methods.end()) {
        methods.push_back(method);
      }
    }
  }
  std::ostringstream os;
  os << "| victim |";
  for (const auto& m : methods) os << ' ' << m << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& [victim, per_method] : pivoted.items()) {
    os << "| " << victim << " |";
    for (const auto& m : methods) {
      os << ' ';
      if (per_method.contains(m) && per_method[m].contains(metric)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", per_method[m][metric].get<double>());
        os << buf;
      }
      os << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace scorebreak

#endif  // SCOREBREAK_BENCH_HPP
