#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dflnet/attacks.hpp"
#include "dflnet/checkpoint.hpp"
#include "dflnet/config.hpp"
#include "dflnet/data.hpp"
#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"

namespace dflnet {

// v <- momentum * v + g; p <- p - lr * v. An empty gradient counts as zero.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, T lr, T momentum, std::span<T> velocity) {
  if (params.size() != velocity.size() || (!grads.empty() && grads.size() != params.size())) {
    throw DimensionError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grads.empty() ? T(0) : grads[i]);
    params[i] -= lr * velocity[i];
  }
}

template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      sgd_step<T>(params_[i].data(), params_[i].grad(), static_cast<T>(lr), static_cast<T>(momentum_), velocity_[i]);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

struct AttackAccuracy {
  AttackSpec spec;
  double accuracy = 0.0;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_intra = 0.0;
  double loss_inter = 0.0;
  double acc_clean = 0.0;
  std::optional<double> acc_fgsm;
  std::optional<double> acc_pgd;
  std::optional<double> acc_cw;
  double wall_ms = 0.0;
  // Every evaluated attack, including families without a CSV column.
  std::vector<AttackAccuracy> attacks;

  void record(const AttackSpec& spec, double acc) {
    attacks.push_back({spec, acc});
    auto fill = [acc](std::optional<double>& slot) {
      if (!slot) slot = acc;
    };
    if (spec.family == AttackFamily::fgsm) fill(acc_fgsm);
    if (spec.family == AttackFamily::pgd) fill(acc_pgd);
    if (spec.family == AttackFamily::cw) fill(acc_cw);
  }

  // Robust accuracy used to pick the best checkpoint.
  std::optional<double> selection_accuracy() const {
    if (acc_pgd) return acc_pgd;
    if (acc_fgsm) return acc_fgsm;
    if (acc_cw) return acc_cw;
    return std::nullopt;
  }
};

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"epoch",      "split",    "loss_total", "loss_ce",
                                             "loss_intra", "loss_inter", "acc_clean", "acc_fgsm",
                                             "acc_pgd",    "acc_cw",   "wall_ms"};
  return cols;
}

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt_metric(const std::optional<double>& v) { return v ? fmt_metric(*v) : std::string(); }

}  // namespace detail

inline std::string format_metrics_row(const MetricsRow& r) {
  using detail::fmt_metric;
  return std::to_string(r.epoch) + "," + r.split + "," + fmt_metric(r.loss_total) + "," + fmt_metric(r.loss_ce) +
         "," + fmt_metric(r.loss_intra) + "," + fmt_metric(r.loss_inter) + "," + fmt_metric(r.acc_clean) + "," +
         fmt_metric(r.acc_fgsm) + "," + fmt_metric(r.acc_pgd) + "," + fmt_metric(r.acc_cw) + "," +
         fmt_metric(r.wall_ms);
}

inline std::string format_metrics(const std::vector<MetricsRow>& rows) {
  std::string out;
  for (const auto& c : metrics_columns()) out += (out.empty() ? "" : ",") + c;
  out += "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  write_text(path, format_metrics(rows));
}

// Plain comma-separated table; no quoting (the harness never emits commas in fields).
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError(source + ": missing column '" + name + "'");
  }
};

inline CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable t{source, {}, {}};
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      const auto comma = l.find(',', start);
      out.push_back(l.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw FormatError(source + ": empty CSV");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), path.string());
}

inline std::vector<MetricsRow> metrics_from_table(const CsvTable& t) {
  std::map<std::string, std::size_t> col;
  for (const auto& c : metrics_columns()) col[c] = t.column(c);
  auto num = [&t](const std::string& v, const std::string& c) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw FormatError(t.source + ": column '" + c + "' holds non-numeric value '" + v + "'");
    }
  };
  auto opt = [&num](const std::string& v, const std::string& c) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return num(v, c);
  };
  std::vector<MetricsRow> rows;
  for (const auto& f : t.rows) {
    MetricsRow r;
    r.epoch = static_cast<std::size_t>(num(f[col["epoch"]], "epoch"));
    r.split = f[col["split"]];
    r.loss_total = num(f[col["loss_total"]], "loss_total");
    r.loss_ce = num(f[col["loss_ce"]], "loss_ce");
    r.loss_intra = num(f[col["loss_intra"]], "loss_intra");
    r.loss_inter = num(f[col["loss_inter"]], "loss_inter");
    r.acc_clean = num(f[col["acc_clean"]], "acc_clean");
    r.acc_fgsm = opt(f[col["acc_fgsm"]], "acc_fgsm");
    r.acc_pgd = opt(f[col["acc_pgd"]], "acc_pgd");
    r.acc_cw = opt(f[col["acc_cw"]], "acc_cw");
    r.wall_ms = num(f[col["wall_ms"]], "wall_ms");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  return metrics_from_table(read_csv(path));
}

// Loss weights for plain cross-entropy.
inline PclConfig ce_objective() {
  PclConfig c;
  c.weight_intra = 0.0;
  c.weight_inter = 0.0;
  return c;
}

struct EvalOptions {
  std::size_t batch_size = 250;
  PclConfig objective = ce_objective();
  bool attack_pcl = false;
  // Clean-row inputs are poisoned with this policy (apply_at eval/both).
  const PoisonPolicy* poison = nullptr;
};

namespace detail {

template <typename T>
Target<T> attack_target(const Model<T>& model, const CentroidBank<T>* bank, const PclConfig& objective,
                        bool attack_pcl) {
  if (attack_pcl && bank != nullptr) return pcl_target(model, *bank, objective);
  return ce_target(model);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> y) {
  const auto pred = argmax_rows(logits);
  std::size_t c = 0;
  for (std::size_t i = 0; i < y.size(); ++i) c += pred[i] == y[i];
  return c;
}

}  // namespace detail

// Clean accuracy and loss parts over the dataset plus one robust accuracy per
// attack. Attacks are regenerated white-box against `model`.
template <typename T>
MetricsRow evaluate(const Model<T>& model, const Dataset<T>& ds, std::span<const AttackSpec> attacks,
                    const CentroidBank<T>* bank = nullptr, const EvalOptions& opt = {}) {
  if (ds.image_shape() != model.spec().input_shape) {
    throw DimensionError("evaluate: dataset images " + shape_str(ds.image_shape()) + " do not match model input " +
                         shape_str(model.spec().input_shape));
  }
  if (ds.num_classes != model.num_classes()) throw DimensionError("evaluate: class count mismatch");
  if (ds.size() == 0) throw InputError("evaluate: empty dataset");
  for (const auto& a : attacks) a.validate();

  std::vector<std::vector<std::size_t>> order;
  for (std::size_t i = 0; i < ds.size(); i += opt.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(ds.size(), i + opt.batch_size); ++j) idx.push_back(j);
    order.push_back(std::move(idx));
  }

  const Target<T> target = detail::attack_target(model, bank, opt.objective, opt.attack_pcl);
  MetricsRow row;
  std::size_t correct = 0;
  double ce = 0, intra = 0, inter = 0;
  std::vector<std::size_t> robust(attacks.size(), 0);
  for (std::size_t b = 0; b < order.size(); ++b) {
    Batch<T> batch = gather(ds, std::span<const std::size_t>(order[b]));
    if (opt.poison != nullptr) {
      PoisonPolicy p = *opt.poison;
      p.attack.seed = detail::mix_seed(p.attack.seed, b);
      batch = poison(batch, target, p);
    }
    const double w = static_cast<double>(batch.y.size());
    {
      NoGradGuard guard;
      const auto fwd = model.forward(batch.x);
      const auto terms = pcl_loss(fwd.features, fwd.logits, batch.y, bank, opt.objective);
      ce += w * static_cast<double>(terms.ce.item());
      intra += w * static_cast<double>(terms.intra.item());
      inter += w * static_cast<double>(terms.inter.item());
      correct += detail::count_correct(fwd.logits, batch.y);
    }
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackSpec spec = attacks[a];
      spec.seed = detail::mix_seed(spec.seed, b);
      const auto adv = generate(target, batch.x, batch.y, spec);
      for (std::size_t i = 0; i < batch.y.size(); ++i) robust[a] += adv.predictions[i] == batch.y[i];
    }
  }
  const double n = static_cast<double>(ds.size());
  row.loss_ce = ce / n;
  row.loss_intra = intra / n;
  row.loss_inter = inter / n;
  row.loss_total = opt.objective.weight_ce * row.loss_ce + opt.objective.weight_intra * row.loss_intra +
                   opt.objective.weight_inter * row.loss_inter;
  row.acc_clean = 100.0 * static_cast<double>(correct) / n;
  for (std::size_t a = 0; a < attacks.size(); ++a) row.record(attacks[a], 100.0 * static_cast<double>(robust[a]) / n);
  return row;
}

template <typename T>
struct DataSplits {
  Dataset<T> train;
  Dataset<T> val;
  Dataset<T> test;
};

// Training subset, seeded validation carve-out, and test subset.
template <typename T>
DataSplits<T> load_splits(const RunConfig& cfg) {
  Dataset<T> train_full, test_full;
  if (cfg.dataset == "mnist") {
    train_full = load_mnist<T>(cfg.data_dir, Split::train);
    test_full = load_mnist<T>(cfg.data_dir, Split::test);
  } else if (cfg.dataset == "cifar10") {
    train_full = load_cifar10<T>(cfg.data_dir, Split::train);
    test_full = load_cifar10<T>(cfg.data_dir, Split::test);
  } else if (cfg.dataset == "blobs") {
    const std::size_t ntrain = cfg.train_size ? cfg.train_size : 1000;
    const std::size_t ntest = cfg.test_size ? cfg.test_size : 500;
    train_full = synthetic_blobs<T>(cfg.blobs_classes, ntrain, cfg.blobs_image, cfg.subset_seed, cfg.blobs_noise);
    test_full = synthetic_blobs<T>(cfg.blobs_classes, ntest, cfg.blobs_image, cfg.subset_seed + 1, cfg.blobs_noise);
    test_full.split = Split::test;
  } else {
    throw ConfigError("unknown dataset '" + cfg.dataset + "'");
  }
  auto take = [](const Dataset<T>& ds, std::size_t n, std::uint64_t seed, const char* what) {
    if (n > ds.size()) {
      throw ConfigError(std::string(what) + " = " + std::to_string(n) + " exceeds the " +
                        std::to_string(ds.size()) + " available examples");
    }
    return sample(ds, n, seed);
  };
  DataSplits<T> out;
  Dataset<T> train = take(train_full, cfg.train_size, cfg.subset_seed, "train_size");
  out.test = take(test_full, cfg.test_size, cfg.subset_seed + 1, "test_size");

  const auto perm = permutation(train.size(), detail::mix_seed(cfg.subset_seed, 0x76616c));
  const auto nval = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(train.size())));
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nval));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(nval), perm.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  out.val = subset(train, std::span<const std::size_t>(val_idx));
  out.train = subset(train, std::span<const std::size_t>(train_idx));
  if (out.train.size() == 0) throw ConfigError("training split is empty");
  return out;
}

template <typename T>
struct TrainResult {
  Model<T> model;
  std::optional<CentroidBank<T>> bank;
  std::vector<MetricsRow> rows;
  std::size_t best_epoch = 0;

  const CentroidBank<T>* bank_ptr() const { return bank ? &*bank : nullptr; }
};

inline double epoch_lr(const RunConfig& cfg, std::size_t epoch) {
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.lr;
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>((epoch - 1) / cfg.lr_step_epochs));
}

// Poisoning budget for an epoch: ramps linearly over the warm-up epochs.
inline AttackSpec epoch_attack(const RunConfig& cfg, std::size_t epoch) {
  AttackSpec a = cfg.poison.attack;
  if (cfg.poison_warmup_epochs > 0 && epoch <= cfg.poison_warmup_epochs) {
    const double f = static_cast<double>(epoch) / static_cast<double>(cfg.poison_warmup_epochs);
    const double step = a.step_size();
    a.epsilon *= f;
    a.step = step * f;
  }
  return a;
}

// Runs the configured experiment. Writes metrics.csv, config.txt and
// checkpoints under cfg.output_dir when it is set.
template <typename T>
TrainResult<T> train(RunConfig cfg, const DataSplits<T>& data, std::ostream* log = nullptr) {
  cfg.resolve();
  cfg.validate();
  const PclConfig objective = cfg.objective();
  const bool regularized = objective.weight_intra != 0.0 || objective.weight_inter != 0.0;
  const bool poison_train = cfg.poison.apply_at != ApplyAt::eval && cfg.poison.attack.family != AttackFamily::none;
  const bool poison_eval = cfg.poison.apply_at != ApplyAt::train && cfg.poison.attack.family != AttackFamily::none;

  BackboneSpec spec = cfg.backbone;
  spec.input_shape = data.train.image_shape();
  TrainResult<T> res{Model<T>(spec, cfg.dfl, data.train.num_classes, cfg.seed), std::nullopt, {}, 0};
  Model<T>& model = res.model;
  std::vector<Tensor<T>> params;
  for (const auto& p : model.parameters()) params.push_back(p.value);
  if (regularized) {
    if (objective.tie_centroids) {
      res.bank.emplace(model.head_weight());
    } else {
      res.bank.emplace(model.num_classes(), model.feature_dim(), detail::mix_seed(cfg.seed, 0x62616e6b));
      params.push_back(res.bank->weights());
    }
  }
  const CentroidBank<T>* bank = res.bank_ptr();
  Sgd<T> opt(params, cfg.momentum);

  const bool write = !cfg.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.txt", format_config(cfg));
  }

  // Precomputed poisoning: one adversarial copy of the training set against the initial model.
  std::optional<Dataset<T>> fixed_poison;
  if (poison_train && cfg.poison.precomputed) {
    const Target<T> target = detail::attack_target(model, bank, objective, cfg.attack_pcl);
    Dataset<T> pd = data.train;
    pd.images = data.train.images.detach();
    const std::size_t per = data.train.image_numel();
    for (std::size_t i = 0, b = 0; i < pd.size(); i += cfg.batch_size, ++b) {
      std::vector<std::size_t> idx;
      for (std::size_t j = i; j < std::min(pd.size(), i + cfg.batch_size); ++j) idx.push_back(j);
      PoisonPolicy p = cfg.poison;
      p.attack.seed = detail::mix_seed(cfg.seed, 1000000 + b);
      const auto pb = poison(gather(data.train, std::span<const std::size_t>(idx)), target, p);
      std::copy(pb.x.data().begin(), pb.x.data().end(), pd.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    fixed_poison = std::move(pd);
  }

  EvalOptions eopt;
  eopt.objective = objective;
  eopt.attack_pcl = cfg.attack_pcl;
  PoisonPolicy eval_policy = cfg.poison;
  if (poison_eval) eopt.poison = &eval_policy;

  std::optional<double> best;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = epoch_lr(cfg, epoch);
    PoisonPolicy policy = cfg.poison;
    policy.attack = epoch_attack(cfg, epoch);
    const Dataset<T>& source = fixed_poison ? *fixed_poison : data.train;
    const auto plan = batch_indices(source.size(), cfg.batch_size, detail::mix_seed(cfg.seed, epoch));

    double ce = 0, intra = 0, inter = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      Batch<T> batch = gather(source, std::span<const std::size_t>(plan[b]));
      if (poison_train && !fixed_poison) {
        policy.attack.seed = detail::mix_seed(detail::mix_seed(cfg.seed, epoch), b);
        batch = poison(batch, detail::attack_target(model, bank, objective, cfg.attack_pcl), policy);
      }
      const auto fwd = model.forward_train(batch.x);
      const auto terms = pcl_loss(fwd.features, fwd.logits, batch.y, bank, objective);
      const double total = static_cast<double>(terms.total.item());
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                           ": total=" + detail::fmt_metric(total) +
                           " ce=" + detail::fmt_metric(static_cast<double>(terms.ce.item())) +
                           " intra=" + detail::fmt_metric(static_cast<double>(terms.intra.item())) +
                           " inter=" + detail::fmt_metric(static_cast<double>(terms.inter.item())));
      }
      opt.zero_grad();
      backward(terms.total);
      opt.step(lr);
      opt.zero_grad();

      const double w = static_cast<double>(batch.y.size());
      ce += w * static_cast<double>(terms.ce.item());
      intra += w * static_cast<double>(terms.intra.item());
      inter += w * static_cast<double>(terms.inter.item());
      correct += detail::count_correct(fwd.logits, batch.y);
    }
    const double n = static_cast<double>(source.size());
    MetricsRow tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.loss_ce = ce / n;
    tr.loss_intra = intra / n;
    tr.loss_inter = inter / n;
    tr.loss_total = objective.weight_ce * tr.loss_ce + objective.weight_intra * tr.loss_intra +
                    objective.weight_inter * tr.loss_inter;
    tr.acc_clean = 100.0 * static_cast<double>(correct) / n;

    std::optional<MetricsRow> val;
    if (data.val.size() > 0) {
      const bool attack_now = epoch % cfg.val_every == 0 || epoch == cfg.epochs;
      const std::span<const AttackSpec> atk =
          attack_now ? std::span<const AttackSpec>(cfg.val_attacks) : std::span<const AttackSpec>();
      val = evaluate(model, data.val, atk, bank, eopt);
      val->epoch = epoch;
      val->split = "val";
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.wall_clock) tr.wall_ms = ms;
    res.rows.push_back(tr);
    if (val) res.rows.push_back(*val);

    if (log) {
      *log << "epoch " << epoch << "/" << cfg.epochs << " loss " << detail::fmt_metric(tr.loss_total) << " train_acc "
           << detail::fmt_metric(tr.acc_clean);
      if (val) {
        *log << " val_acc " << detail::fmt_metric(val->acc_clean);
        for (const auto& a : val->attacks) *log << " " << a.spec.label() << " " << detail::fmt_metric(a.accuracy);
      }
      *log << " (" << static_cast<long long>(ms) << " ms)\n";
    }

    if (write && cfg.checkpoints) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03zu.dflt", epoch);
      save_checkpoint(cfg.output_dir / "checkpoints" / name, model, bank);
    }
    const std::optional<double> score = val ? val->selection_accuracy() : std::nullopt;
    if (score && (!best || *score > *best)) {
      best = score;
      res.best_epoch = epoch;
      if (write && cfg.checkpoints) save_checkpoint(cfg.output_dir / "checkpoints" / "best.dflt", model, bank);
    }
    if (write) write_metrics_csv(cfg.output_dir / "metrics.csv", res.rows);
  }

  if (data.test.size() > 0) {
    MetricsRow test = evaluate(model, data.test, std::span<const AttackSpec>(cfg.eval_attacks), bank, eopt);
    test.epoch = cfg.epochs;
    test.split = "test";
    if (log) {
      *log << "test acc " << detail::fmt_metric(test.acc_clean);
      for (const auto& a : test.attacks) *log << " " << a.spec.label() << " " << detail::fmt_metric(a.accuracy);
      *log << "\n";
    }
    res.rows.push_back(test);
  }
  if (write) write_metrics_csv(cfg.output_dir / "metrics.csv", res.rows);
  return res;
}

template <typename T>
TrainResult<T> train(const RunConfig& cfg, std::ostream* log = nullptr) {
  return train<T>(cfg, load_splits<T>(cfg), log);
}

}  // namespace dflnet
