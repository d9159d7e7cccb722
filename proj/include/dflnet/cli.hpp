#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dflnet/checkpoint.hpp"
#include "dflnet/config.hpp"
#include "dflnet/gradcheck.hpp"
#include "dflnet/report.hpp"
#include "dflnet/train.hpp"

namespace dflnet {

namespace detail {

struct Overrides {
  std::string config;
  std::string dataset;
  std::string dfl;
  std::string loss;
  std::string attack;
  std::optional<double> eps;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::string output;
};

inline void add_run_options(CLI::App& sub, Overrides& o) {
  sub.add_option("--config", o.config, "run configuration file (key = value lines)");
  sub.add_option("--dataset", o.dataset, "mnist | cifar10 | blobs");
  sub.add_option("--dfl", o.dfl, "on | off");
  sub.add_option("--loss", o.loss, "ce | pcl | pcl-literal | pcl-separating");
  sub.add_option("--attack", o.attack, "none | fgsm | bim | mim | pgd | cw");
  sub.add_option("--eps", o.eps, "L-inf budget");
  sub.add_option("--steps", o.steps, "attack iterations");
  sub.add_option("--seed", o.seed, "run seed (falls back to DFLNET_SEED)");
  sub.add_option("--out", o.output, "output directory");
}

enum class AttackRole { poison, eval };

// Config file, then command-line overrides, then the environment seed fallback.
inline RunConfig resolve_config(const Overrides& o, AttackRole role) {
  ParsedConfig parsed;
  if (!o.config.empty()) parsed = load_config(o.config);
  RunConfig& c = parsed.config;
  if (!o.dataset.empty()) apply_setting(c, "dataset", o.dataset);
  if (!o.dfl.empty()) apply_setting(c, "dfl", o.dfl);
  if (!o.loss.empty()) apply_setting(c, "loss", o.loss);
  if (!o.attack.empty()) apply_setting(c, role == AttackRole::poison ? "poison_attack" : "eval_attacks", o.attack);
  if (o.eps) c.epsilon = *o.eps;
  if (o.steps) apply_setting(c, role == AttackRole::poison ? "poison_steps" : "eval_steps", std::to_string(*o.steps));
  if (o.seed) {
    c.seed = *o.seed;
  } else if (!parsed.keys.count("seed")) {
    if (auto s = env_seed()) c.seed = *s;
  }
  if (!o.output.empty()) c.output_dir = o.output;
  c.resolve();
  c.validate();
  return c;
}

inline std::size_t dataset_classes(const RunConfig& c) { return c.dataset == "blobs" ? c.blobs_classes : 10; }

inline BackboneSpec planned_backbone(const RunConfig& c, const Dataset<float>& ds) {
  BackboneSpec s = c.backbone;
  s.input_shape = ds.image_shape();
  return s;
}

inline int cmd_train(const Overrides& o, std::ostream& err) {
  RunConfig cfg = resolve_config(o, AttackRole::poison);
  if (cfg.output_dir.empty()) throw ConfigError("train needs an output directory (output_dir or --out)");
  auto res = train<float>(cfg, &err);
  save_checkpoint(cfg.output_dir / "final.dflt", res.model, res.bank_ptr());
  err << "wrote " << (cfg.output_dir / "metrics.csv").string() << "\n";
  return 0;
}

struct LoadedRun {
  RunConfig cfg;
  DataSplits<float> data;
  std::optional<LoadedCheckpoint<float>> ckpt;
  std::optional<Model<float>> fresh;

  const Model<float>& model() const { return ckpt ? ckpt->model : *fresh; }
  const CentroidBank<float>* bank() const { return ckpt && ckpt->bank ? &*ckpt->bank : nullptr; }
};

inline LoadedRun load_run(const Overrides& o, const std::string& checkpoint, bool need_checkpoint) {
  LoadedRun r{resolve_config(o, AttackRole::eval), {}, std::nullopt, std::nullopt};
  if (need_checkpoint && checkpoint.empty()) throw ConfigError("--checkpoint is required");
  r.data = load_splits<float>(r.cfg);
  const BackboneSpec spec = planned_backbone(r.cfg, r.data.test);
  if (!checkpoint.empty()) {
    r.ckpt.emplace(load_checkpoint<float>(checkpoint, spec, r.cfg.dfl, r.data.test.num_classes));
  } else {
    r.fresh.emplace(spec, r.cfg.dfl, r.data.test.num_classes, r.cfg.seed);
  }
  return r;
}

inline int cmd_evaluate(const Overrides& o, const std::string& checkpoint, std::ostream& err) {
  const LoadedRun run = load_run(o, checkpoint, true);
  if (run.cfg.output_dir.empty()) throw ConfigError("evaluate needs an output directory (output_dir or --out)");
  EvalOptions opt;
  PclConfig objective = run.cfg.objective();
  if (run.bank() == nullptr) objective = ce_objective();
  opt.objective = objective;
  opt.attack_pcl = run.cfg.attack_pcl;
  MetricsRow row = evaluate(run.model(), run.data.test, std::span<const AttackSpec>(run.cfg.eval_attacks), run.bank(), opt);
  row.split = "test";
  write_metrics_csv(run.cfg.output_dir / "metrics.csv", {row});
  std::string table = "attack,epsilon,accuracy\nclean,0," + detail::fmt_metric(row.acc_clean) + "\n";
  for (const auto& a : row.attacks) {
    table += a.spec.label() + "," + detail::fmt_metric(a.spec.epsilon) + "," + detail::fmt_metric(a.accuracy) + "\n";
  }
  write_text(run.cfg.output_dir / "eval.csv", table);
  err << "clean " << detail::fmt_metric(row.acc_clean);
  for (const auto& a : row.attacks) err << ", " << a.spec.label() << " " << detail::fmt_metric(a.accuracy);
  err << "\n";
  return 0;
}

// Attacks the first `count` test images and stores x_clean, x_adv, labels and
// predictions in <out>/attack.dflt, with per-example distortion in attack.csv.
inline int cmd_attack(const Overrides& o, const std::string& checkpoint, std::size_t count, std::ostream& err) {
  const LoadedRun run = load_run(o, checkpoint, false);
  if (run.cfg.output_dir.empty()) throw ConfigError("attack needs an output directory (output_dir or --out)");
  if (run.cfg.eval_attacks.size() != 1) throw ConfigError("attack needs exactly one attack family (--attack)");
  const std::size_t n = std::min(count, run.data.test.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const Batch<float> batch = gather(run.data.test, std::span<const std::size_t>(idx));
  const Target<float> target =
      detail::attack_target(run.model(), run.bank(), run.cfg.objective(), run.cfg.attack_pcl);
  const AdvBatch<float> adv = generate(target, batch.x, batch.y, run.cfg.eval_attacks.front());
  auto ints = [](const std::vector<int>& v) {
    Tensor<float> t(Shape{v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
    return t;
  };
  write_tensors(run.cfg.output_dir / "attack.dflt", {to_record("x_clean", adv.x_clean), to_record("x_adv", adv.x_adv),
                                                     to_record("labels", ints(adv.labels)),
                                                     to_record("predictions", ints(adv.predictions))});
  std::string csv = "index,label,prediction,success,linf,l2\n";
  for (std::size_t i = 0; i < n; ++i) {
    csv += std::to_string(i) + "," + std::to_string(adv.labels[i]) + "," + std::to_string(adv.predictions[i]) + "," +
           (adv.success[i] ? "1" : "0") + "," + detail::fmt_metric(adv.linf[i]) + "," + detail::fmt_metric(adv.l2[i]) +
           "\n";
  }
  write_text(run.cfg.output_dir / "attack.csv", csv);
  std::size_t flipped = 0;
  for (auto s : adv.success) flipped += s;
  err << run.cfg.eval_attacks.front().label() << ": " << flipped << "/" << n << " misclassified\n";
  return 0;
}

inline int cmd_gradcheck(std::size_t seeds, std::ostream& out) {
  const auto s = run_gradcheck(seeds);
  out << "gradcheck: " << s.seeds << " seeds, " << s.checks << " entries, max rel err " << s.max_rel_err << " ("
      << s.worst << ")\n";
  return s.max_rel_err < 1e-4 ? 0 : 2;
}

inline int cmd_report(const std::vector<std::string>& inputs, const std::string& mode, const std::string& select,
                      const std::string& formats, const std::string& out_dir, std::ostream& err) {
  ReportSpec spec;
  for (const auto& in : inputs) {
    const auto eq = in.find('=');
    if (eq == std::string::npos) throw ConfigError("--input expects label=path, got '" + in + "'");
    spec.runs.push_back({in.substr(0, eq), in.substr(eq + 1)});
  }
  spec.mode = parse_table_mode(mode);
  if (select == "final") spec.selection = RowSelection::final_epoch;
  else if (select == "best") spec.selection = RowSelection::best_robust;
  else throw ConfigError("--select expects final or best");
  spec.csv = spec.svg = false;
  for (const auto& f : split_list(formats)) {
    if (f == "csv") spec.csv = true;
    else if (f == "svg") spec.svg = true;
    else throw ConfigError("unknown report format '" + f + "'");
  }
  spec.output_dir = out_dir;
  if (spec.csv) err << "wrote " << render_tables(spec).string() << "\n";
  if (spec.svg)
    for (const auto& p : render_curves(spec)) err << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace detail

// Exit codes: 0 success, 1 input or configuration error, 2 runtime error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"dflnet: adversarial training with defensive feature layers and polarized contrastive loss", "dflnet"};
  app.require_subcommand(1, 1);

  detail::Overrides train_o, eval_o, attack_o;
  std::string eval_ckpt, attack_ckpt;
  std::size_t attack_count = 100;
  std::size_t seeds = 100;
  std::vector<std::string> inputs;
  std::string mode = "no-defense", select = "final", formats = "csv,svg", report_out = "report", report_config;

  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics and checkpoints");
  detail::add_run_options(*train_cmd, train_o);
  auto* eval_cmd = app.add_subcommand("evaluate", "clean and robust accuracy of a checkpoint on the test split");
  detail::add_run_options(*eval_cmd, eval_o);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "DFLT checkpoint");
  auto* attack_cmd = app.add_subcommand("attack", "write adversarial examples for the first test images");
  detail::add_run_options(*attack_cmd, attack_o);
  attack_cmd->add_option("--checkpoint", attack_ckpt, "DFLT checkpoint (default: freshly initialized model)");
  attack_cmd->add_option("--count", attack_count, "number of test images");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op and loss term");
  grad_cmd->add_option("--seeds", seeds, "random seeds");
  grad_cmd->add_option("--config", report_config, "ignored; accepted for a uniform surface");
  auto* report_cmd = app.add_subcommand("report", "tables and curves from metrics CSVs");
  report_cmd->add_option("--input", inputs, "label=metrics.csv (repeatable)")->required();
  report_cmd->add_option("--mode", mode, "no-defense | adversarial | ablation");
  report_cmd->add_option("--select", select, "final | best");
  report_cmd->add_option("--format", formats, "csv,svg");
  report_cmd->add_option("--out", report_out, "output directory");
  report_cmd->add_option("--config", report_config, "ignored; accepted for a uniform surface");

  std::vector<const char*> argv{"dflnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train_cmd) return detail::cmd_train(train_o, err);
    if (*eval_cmd) return detail::cmd_evaluate(eval_o, eval_ckpt, err);
    if (*attack_cmd) return detail::cmd_attack(attack_o, attack_ckpt, attack_count, err);
    if (*grad_cmd) return detail::cmd_gradcheck(seeds, out);
    if (*report_cmd) return detail::cmd_report(inputs, mode, select, formats, report_out, err);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dflnet
