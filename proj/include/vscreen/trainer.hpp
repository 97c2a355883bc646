#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "vscreen/adam.hpp"
#include "vscreen/csv.hpp"
#include "vscreen/errors.hpp"
#include "vscreen/evalkit.hpp"
#include "vscreen/manifest.hpp"
#include "vscreen/ops.hpp"
#include "vscreen/pipeline.hpp"
#include "vscreen/rng.hpp"
#include "vscreen/vesselnet.hpp"

namespace vscreen {

struct TrainConfig {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  double keep_rate = 0.5;
  double lambda_l2 = 1e-3;
  std::size_t max_epochs = 1000;
  std::size_t patience = 20;
  double train_acc_stop = 0.995;
  std::size_t folds = 5;
  std::uint64_t seed = 20;
  std::array<std::uint32_t, 3> dims{21, 21, 350};
  std::uint32_t fc_hidden = 256;
  double improvement_tol = 1e-6;
  std::size_t balance_target = 0;  // 0: match the larger class

  void validate() const {
    if (patience >= max_epochs) throw ConfigError("TrainConfig: patience must be < max_epochs");
    if (!(train_acc_stop > 0.0) || train_acc_stop > 1.0)
      throw ConfigError("TrainConfig: train_acc_stop outside (0,1]");
    if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2 (batch norm)");
    if (folds < 2) throw ConfigError("TrainConfig: folds must be >= 2");
  }

  VesselNetConfig net_config() const {
    VesselNetConfig c;
    c.input_dims = dims;
    c.fc_hidden = fc_hidden;
    c.keep_rate = keep_rate;
    c.lambda_l2 = lambda_l2;
    return c;
  }
};

enum class StopReason : std::uint8_t { patience, train_acc, max_epochs };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::patience: return "patience";
    case StopReason::train_acc: return "train_acc";
    default: return "max_epochs";
  }
}

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_subjects, val_subjects, test_subjects;
};

struct TrainLog {
  struct Epoch {
    double train_loss = 0.0, train_acc = 0.0, val_loss = 0.0, val_acc = 0.0;
  };
  std::vector<Epoch> epochs;
  StopReason stop_reason = StopReason::max_epochs;
  std::size_t best_epoch = 0;  // 1-based
};

// Deterministic subject-level splits: shuffled subjects are cut into `folds`
// test blocks; the remainder of each fold splits 75/25 into train/val so the
// overall ratio is 60/20/20. Every subject tests exactly once.
inline std::vector<FoldSplit> split_folds(std::vector<std::string> subject_ids,
                                          std::size_t folds, std::uint64_t seed) {
  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
  if (folds < 2) throw ConfigError("split_folds: folds must be >= 2");
  if (subject_ids.size() < 2 * folds)
    throw DataError("split_folds: need at least " + std::to_string(2 * folds) +
                    " subjects for " + std::to_string(folds) + " folds, got " +
                    std::to_string(subject_ids.size()));
  Rng shuffler = Rng(seed).stream("folds");
  shuffler.shuffle(subject_ids);

  const std::size_t n = subject_ids.size();
  std::vector<FoldSplit> out(folds);
  std::size_t start = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    out[f].fold_index = f;
    out[f].test_subjects.assign(subject_ids.begin() + static_cast<long>(start),
                                subject_ids.begin() + static_cast<long>(start + size));
    std::vector<std::string> rest;
    rest.reserve(n - size);
    rest.insert(rest.end(), subject_ids.begin(), subject_ids.begin() + static_cast<long>(start));
    rest.insert(rest.end(), subject_ids.begin() + static_cast<long>(start + size),
                subject_ids.end());
    const std::size_t train_n =
        static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(rest.size())));
    out[f].train_subjects.assign(rest.begin(), rest.begin() + static_cast<long>(train_n));
    out[f].val_subjects.assign(rest.begin() + static_cast<long>(train_n), rest.end());
    start += size;
  }
  return out;
}

struct EarlyStopDecision {
  bool stop = false;
  StopReason reason = StopReason::max_epochs;
};

// Callbacks in spec order: patience on the running validation-loss minimum
// (improvements must beat it by improvement_tol), then the train-accuracy
// ceiling, then the epoch cap.
inline EarlyStopDecision early_stop_check(const TrainLog& log, const TrainConfig& cfg) {
  if (log.epochs.empty()) throw DataError("early_stop_check: empty training log");
  double running_min = log.epochs[0].val_loss;
  std::size_t since_improve = 0;
  for (std::size_t i = 1; i < log.epochs.size(); ++i) {
    if (log.epochs[i].val_loss < running_min - cfg.improvement_tol) {
      running_min = log.epochs[i].val_loss;
      since_improve = 0;
    } else {
      ++since_improve;
    }
  }
  if (since_improve >= cfg.patience) return {true, StopReason::patience};
  if (log.epochs.back().train_acc >= cfg.train_acc_stop) return {true, StopReason::train_acc};
  if (log.epochs.size() >= cfg.max_epochs) return {true, StopReason::max_epochs};
  return {false, StopReason::max_epochs};
}

namespace detail {

inline Tensor<float> assemble_batch(const std::vector<const PreprocessedVolume*>& vols,
                                    std::size_t from, std::size_t count) {
  const auto& v0 = *vols[from];
  Tensor<float> t({count, 1, v0.width, v0.height, v0.length});
  const std::size_t stride = static_cast<std::size_t>(v0.width) * v0.height * v0.length;
  for (std::size_t i = 0; i < count; ++i) {
    const PreprocessedVolume& v = *vols[from + i];
    float* dst = t.data() + i * stride;
    for (std::uint32_t f = 0; f < v.length; ++f)
      for (std::uint32_t y = 0; y < v.height; ++y)
        for (std::uint32_t x = 0; x < v.width; ++x)
          dst[(static_cast<std::size_t>(x) * v.height + y) * v.length + f] =
              v.values[(static_cast<std::size_t>(f) * v.height + y) * v.width + x];
  }
  return t;
}

struct EvalPass {
  double mean_ce = 0.0;
  double accuracy = 0.0;
  std::vector<double> p_abnormal;
};

// Inference over a list: batches of up to batch_size, incomplete tail kept.
inline EvalPass evaluate_set(VesselNetParams<float>& params,
                             const std::vector<const PreprocessedVolume*>& vols,
                             std::size_t batch_size) {
  EvalPass r;
  if (vols.empty()) return r;
  double ce_sum = 0.0;
  std::size_t correct = 0;
  Rng dummy(0);
  for (std::size_t from = 0; from < vols.size(); from += batch_size) {
    const std::size_t count = std::min(batch_size, vols.size() - from);
    Tape<float> tape;
    auto fwd = forward(tape, params, assemble_batch(vols, from, count), false, dummy, false);
    const auto probs = softmax_rows(tape.value(fwd.logits));
    for (std::size_t i = 0; i < count; ++i) {
      const int label = vols[from + i]->label == VesselLabel::abnormal ? 1 : 0;
      const double p1 = probs[i * 2 + 1];
      r.p_abnormal.push_back(p1);
      const double p_true = label == 1 ? p1 : probs[i * 2];
      ce_sum += -std::log(std::max(p_true, 1e-300));
      const int pred = p1 >= 0.5 ? 1 : 0;
      if (pred == label) ++correct;
    }
  }
  r.mean_ce = ce_sum / static_cast<double>(vols.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(vols.size());
  return r;
}

}  // namespace detail

struct FoldOutcome {
  VesselNetParams<float> best_params;
  TrainLog log;
  std::vector<Prediction> test_predictions;
};

// Trains one fold: preprocesses per partition, balance-augments the training
// partition only, runs Adam over shuffled full batches (incomplete tail
// dropped; batch norm needs N >= 2), tracks the best validation epoch, and
// applies the early-stopping callbacks. Test predictions come from the
// best-epoch parameters.
inline FoldOutcome train_fold(const FoldSplit& fold, const Manifest& manifest,
                              const TrainConfig& cfg) {
  cfg.validate();

  auto in_set = [](const std::vector<std::string>& set, const std::string& id) {
    return std::find(set.begin(), set.end(), id) != set.end();
  };

  std::vector<PreprocessedVolume> train_set, val_set, test_set;
  for (const auto& e : manifest.entries) {
    std::vector<PreprocessedVolume>* dst = nullptr;
    if (in_set(fold.train_subjects, e.subject_id))
      dst = &train_set;
    else if (in_set(fold.val_subjects, e.subject_id))
      dst = &val_set;
    else if (in_set(fold.test_subjects, e.subject_id))
      dst = &test_set;
    else
      continue;
    const RawVesselVolume raw = load_raw_volume(manifest, e);
    if (raw.width != cfg.dims[0] || raw.height != cfg.dims[1])
      throw ShapeError("train_fold: volume " + e.vessel_id + " cross-section " +
                       std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                       " does not match configured " + std::to_string(cfg.dims[0]) + "x" +
                       std::to_string(cfg.dims[1]));
    dst->push_back(preprocess(raw, cfg.dims[2]));
  }
  if (train_set.empty() || val_set.empty() || test_set.empty())
    throw DataError("train_fold: fold " + std::to_string(fold.fold_index) +
                    " has an empty partition");

  auto by_vessel_id = [](const PreprocessedVolume& a, const PreprocessedVolume& b) {
    return a.vessel_id < b.vessel_id;
  };
  std::sort(train_set.begin(), train_set.end(), by_vessel_id);
  std::sort(val_set.begin(), val_set.end(), by_vessel_id);
  std::sort(test_set.begin(), test_set.end(), by_vessel_id);

  Rng root(cfg.seed);
  const std::uint64_t fold_id = fold.fold_index;
  train_set = augment_balance(train_set, root.stream("augment", fold_id), cfg.balance_target);
  if (train_set.size() < cfg.batch_size)
    throw DataError("train_fold: training partition (" + std::to_string(train_set.size()) +
                    " samples after balancing) smaller than one batch of " +
                    std::to_string(cfg.batch_size));

  VesselNetParams<float> params =
      build<float>(cfg.net_config(), root.stream("init", fold_id).seed());
  AdamState<float> opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.eps;

  std::vector<const PreprocessedVolume*> val_ptr, test_ptr;
  for (const auto& v : val_set) val_ptr.push_back(&v);
  for (const auto& v : test_set) test_ptr.push_back(&v);

  FoldOutcome out;
  out.best_params = params;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = root.stream("order", fold_id, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    const std::size_t n_batches = train_set.size() / cfg.batch_size;

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<const PreprocessedVolume*> batch_ptrs(cfg.batch_size);
      std::vector<int> labels(cfg.batch_size);
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const auto& v = train_set[order[b * cfg.batch_size + i]];
        batch_ptrs[i] = &v;
        labels[i] = v.label == VesselLabel::abnormal ? 1 : 0;
      }
      Rng drop_rng = root.stream("dropout", fold_id, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(b));
      Tape<float> tape;
      auto fwd = forward(tape, params, detail::assemble_batch(batch_ptrs, 0, cfg.batch_size),
                         true, drop_rng, true);
      const auto probs = softmax_rows(tape.value(fwd.logits));
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const int pred = probs[i * 2 + 1] >= probs[i * 2] ? 1 : 0;
        if (pred == labels[i]) ++correct;
      }
      auto ce = softmax_cross_entropy(tape, fwd.logits, labels);
      auto pen = l2_penalty(tape, fwd.leaves.decayed_weights(), cfg.lambda_l2);
      auto loss = add(tape, ce, pen);
      loss_sum += static_cast<double>(tape.value(loss).values[0]);
      tape.backward(loss, {}, true);

      const auto tensors = params.param_tensors();
      const auto leaf_vars = fwd.leaves.in_param_order();
      std::vector<const std::vector<float>*> grads;
      grads.reserve(leaf_vars.size());
      for (auto v : leaf_vars) grads.push_back(&tape.grad(v));
      adam_step(tensors, grads, opt);
    }

    TrainLog::Epoch ep;
    ep.train_loss = loss_sum / static_cast<double>(n_batches);
    ep.train_acc =
        static_cast<double>(correct) / static_cast<double>(n_batches * cfg.batch_size);
    // Validation loss is the data cross-entropy alone. Folding the L2 term
    // in would let the slow decay of the weight norm count as "improvement"
    // every epoch, which starves the patience callback.
    auto val = detail::evaluate_set(params, val_ptr, cfg.batch_size);
    ep.val_loss = val.mean_ce;
    ep.val_acc = val.accuracy;
    out.log.epochs.push_back(ep);

    if (ep.val_loss < best_val) {  // strict argmin, first occurrence wins
      best_val = ep.val_loss;
      out.log.best_epoch = epoch;
      out.best_params = params;
    }

    const auto decision = early_stop_check(out.log, cfg);
    if (decision.stop) {
      out.log.stop_reason = decision.reason;
      break;
    }
  }

  auto test_eval = detail::evaluate_set(out.best_params, test_ptr, cfg.batch_size);
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    Prediction p;
    p.vessel_id = test_set[i].vessel_id;
    p.subject_id = test_set[i].subject_id;
    p.true_label = test_set[i].label == VesselLabel::abnormal ? 1 : 0;
    p.p_abnormal = test_eval.p_abnormal[i];
    out.test_predictions.push_back(std::move(p));
  }
  return out;
}

inline void write_trainlog_csv(const std::filesystem::path& path, const TrainLog& log) {
  CsvTable t;
  t.header = {"epoch", "train_loss", "train_acc", "val_loss", "val_acc"};
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    const auto& e = log.epochs[i];
    t.rows.push_back({std::to_string(i + 1), fmt_g17(e.train_loss), fmt_g17(e.train_acc),
                      fmt_g17(e.val_loss), fmt_g17(e.val_acc)});
  }
  write_csv(path, t);
}

inline void write_predictions_csv(const std::filesystem::path& path,
                                  const std::vector<Prediction>& preds) {
  CsvTable t;
  t.header = {"vessel_id", "subject_id", "true_label", "p_abnormal"};
  for (const auto& p : preds)
    t.rows.push_back({p.vessel_id, p.subject_id,
                      p.true_label == 1 ? "abnormal" : "normal", fmt_g17(p.p_abnormal)});
  write_csv(path, t);
}

inline std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"vessel_id", "subject_id", "true_label", "p_abnormal"})
    throw FormatError(path.string() + ": unexpected predictions header");
  std::vector<Prediction> out;
  for (const auto& row : t.rows) {
    Prediction p;
    p.vessel_id = row[0];
    p.subject_id = row[1];
    p.true_label = label_from_string(row[2]) == VesselLabel::abnormal ? 1 : 0;
    p.p_abnormal = std::stod(row[3]);
    out.push_back(std::move(p));
  }
  return out;
}

struct CvResult {
  std::vector<FoldSplit> splits;
  std::vector<TrainLog> logs;
  std::vector<std::vector<Prediction>> fold_predictions;
  std::vector<double> fold_auc;  // NaN where a fold's test set is single-class
  double mean_auc = 0.0;
  double sd_auc = 0.0;
};

// Full cross-validation: one model per fold, checkpoints / training logs /
// test predictions written under out_dir. jobs > 1 trains folds in parallel
// (outputs are identical either way; every fold derives its own streams).
inline CvResult run_cv(const Manifest& manifest, const TrainConfig& cfg,
                       const std::filesystem::path& out_dir, std::size_t jobs = 1,
                       const std::function<void(std::size_t, const TrainLog&)>& on_fold_done =
                           {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  CvResult r;
  r.splits = split_folds(manifest.subject_ids(), cfg.folds, cfg.seed);
  r.logs.resize(cfg.folds);
  r.fold_predictions.resize(cfg.folds);

  std::vector<FoldOutcome> outcomes(cfg.folds);
  auto run_one = [&](std::size_t f) {
    outcomes[f] = train_fold(r.splits[f], manifest, cfg);
    if (on_fold_done) on_fold_done(f, outcomes[f].log);
  };
  if (jobs <= 1) {
    for (std::size_t f = 0; f < cfg.folds; ++f) run_one(f);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t f = 0; f < cfg.folds; ++f) {
      pool.emplace_back(run_one, f);
      if (pool.size() == jobs || f + 1 == cfg.folds) {
        for (auto& th : pool) th.join();
        pool.clear();
      }
    }
  }

  double auc_sum = 0.0, auc_sq = 0.0;
  std::size_t auc_n = 0;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    const std::string tag = std::to_string(f);
    save_checkpoint(outcomes[f].best_params, out_dir / ("checkpoint_fold" + tag + ".vnck"));
    write_trainlog_csv(out_dir / ("trainlog_fold" + tag + ".csv"), outcomes[f].log);
    write_predictions_csv(out_dir / ("predictions_fold" + tag + ".csv"),
                          outcomes[f].test_predictions);
    r.logs[f] = outcomes[f].log;
    r.fold_predictions[f] = outcomes[f].test_predictions;
    double auc = std::numeric_limits<double>::quiet_NaN();
    try {
      auc = roc_auc(outcomes[f].test_predictions).auc;
      auc_sum += auc;
      auc_sq += auc * auc;
      ++auc_n;
    } catch (const DataError&) {
      // single-class test fold: AUC undefined, leave NaN
    }
    r.fold_auc.push_back(auc);
  }
  if (auc_n > 0) {
    r.mean_auc = auc_sum / static_cast<double>(auc_n);
    const double var = auc_sq / static_cast<double>(auc_n) - r.mean_auc * r.mean_auc;
    r.sd_auc = std::sqrt(std::max(0.0, var));
  }
  return r;
}

}  // namespace vscreen
