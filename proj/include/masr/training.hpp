#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/eval.hpp"
#include "masr/model.hpp"
#include "masr/rng.hpp"
#include "masr/tensor.hpp"

namespace masr {

struct Hyperparams {
  double learning_rate = 1e-3;
  double lambda_theta = 0.0;
  std::size_t epochs = 50;
  // Quartets per minibatch; the negatives of one positive share its batch.
  std::size_t batch_size = 256;
  std::size_t negatives = 4;
  double epsilon = 0.5;
  double lambda_delta = 1.0;
  std::size_t apr_epochs = 50;
  // Perturb every tensor; when false only embeddings and metric vectors.
  bool perturb_all = true;
  std::uint64_t seed = 0;
  std::size_t eval_negatives = 100;
};

// -log(sigmoid(x)), stable for large |x|.
inline double neg_log_sigmoid(double x) {
  return x > 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Full-data BPR objective: sum of -log sigmoid(o_neg - o_pos) plus
/// lambda * squared norm of every embedding table and metric vector.
inline double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                       const ParamSet& params, double lambda_theta) {
  if (pos_scores.size() != neg_scores.size()) {
    throw Error("shape", "bpr_loss: " + std::to_string(pos_scores.size()) + " positive vs " +
                             std::to_string(neg_scores.size()) + " negative scores");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    loss += neg_log_sigmoid(neg_scores[i] - pos_scores[i]);
  }
  if (lambda_theta != 0.0) {
    double sq = 0.0;
    for (const auto& t : params) {
      if (t.role != TensorRole::embedding && t.role != TensorRole::metric) continue;
      for (double v : t.values) sq += v * v;
    }
    loss += lambda_theta * sq;
  }
  return loss;
}

// ---------------------------------------------------------------------------

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(const ParamSet& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

/// One bias-corrected Adam step. Padding rows are never written.
inline void adam_update(ParamSet& params, const ParamSet& grads, AdamState& st, double lr) {
  require_same_layout(params, grads, "adam_update gradients");
  require_same_layout(params, st.m, "adam_update state");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].trainable();
    auto g = grads[i].trainable();
    auto m = st.m[i].trainable();
    auto v = st.v[i].trainable();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------

/// One positive (user, playlist, song) with its sampled negatives and the
/// padded member list the MASS family attends over.
struct TrainingInstance {
  UserIndex user = 0;
  PlaylistIndex playlist = 0;
  SongId positive = kPaddingSong;
  std::vector<SongId> negatives;
  std::vector<SongId> members;
  std::size_t real_count = 0;
};

struct LossParts {
  double data = 0.0;
  double reg = 0.0;
  double total() const noexcept { return data + reg; }
};

namespace detail {

// Rows touched by a batch, per entity family.
struct TouchedRows {
  std::vector<std::uint32_t> users, playlists, songs;

  static void add(std::vector<std::uint32_t>& v, std::uint32_t x) { v.push_back(x); }
  static void finish(std::vector<std::uint32_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  const std::vector<std::uint32_t>& of(Entity e) const {
    static const std::vector<std::uint32_t> none;
    switch (e) {
      case Entity::user: return users;
      case Entity::playlist: return playlists;
      case Entity::song: return songs;
      case Entity::none: break;
    }
    return none;
  }
};

}  // namespace detail

/// Minibatch objective at `params`:
///   data_scale * sum -log sigmoid(o_neg - o_pos)
///   + lambda * (squared norm of embedding rows the batch reads + metric vectors).
/// Bias tables and query-layer weights are unregularized. When `grad` is
/// non-null the exact gradient is accumulated into it.
inline LossParts batch_objective(const Model& model, const ParamSet& params,
                                 std::span<const TrainingInstance> batch, double lambda_theta,
                                 double data_scale, ParamSet* grad) {
  LossParts out;
  std::vector<double> neg_scores;
  for (const auto& inst : batch) {
    ScoreContext ctx{inst.user, inst.playlist, inst.members, inst.real_count, inst.positive};
    const double o_pos = model.score(params, ctx);
    neg_scores.resize(inst.negatives.size());
    double pos_upstream = 0.0;
    for (std::size_t n = 0; n < inst.negatives.size(); ++n) {
      ctx.candidate = inst.negatives[n];
      neg_scores[n] = model.score(params, ctx);
      const double diff = neg_scores[n] - o_pos;
      out.data += data_scale * neg_log_sigmoid(diff);
      pos_upstream += data_scale * sigmoid(-diff);
    }
    if (grad == nullptr) continue;
    ctx.candidate = inst.positive;
    model.accumulate_gradient(params, ctx, pos_upstream, *grad);
    for (std::size_t n = 0; n < inst.negatives.size(); ++n) {
      ctx.candidate = inst.negatives[n];
      const double diff = neg_scores[n] - o_pos;
      model.accumulate_gradient(params, ctx, -data_scale * sigmoid(-diff), *grad);
    }
  }

  if (lambda_theta == 0.0) return out;

  detail::TouchedRows rows;
  for (const auto& inst : batch) {
    rows.users.push_back(inst.user);
    rows.playlists.push_back(inst.playlist);
    rows.songs.push_back(inst.positive);
    rows.songs.insert(rows.songs.end(), inst.negatives.begin(), inst.negatives.end());
    for (std::size_t t = 0; t < inst.real_count; ++t) rows.songs.push_back(inst.members[t]);
  }
  detail::TouchedRows::finish(rows.users);
  detail::TouchedRows::finish(rows.playlists);
  detail::TouchedRows::finish(rows.songs);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i];
    if (t.role == TensorRole::metric) {
      for (std::size_t k = 0; k < t.size(); ++k) {
        out.reg += lambda_theta * t.values[k] * t.values[k];
        if (grad) (*grad)[i].values[k] += 2.0 * lambda_theta * t.values[k];
      }
    } else if (t.role == TensorRole::embedding) {
      for (std::uint32_t r : rows.of(t.entity)) {
        if (t.padded && r == 0) continue;
        const auto row = t.row(r);
        for (std::size_t c = 0; c < t.cols; ++c) {
          out.reg += lambda_theta * row[c] * row[c];
          if (grad) (*grad)[i].row(r)[c] += 2.0 * lambda_theta * row[c];
        }
      }
    }
  }
  return out;
}

/// Population standard deviation of a tensor's trainable entries.
inline double tensor_stddev(const Tensor& t) {
  const auto v = t.trainable();
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

inline bool is_perturbed(const Tensor& t, bool perturb_all) {
  return perturb_all || t.role == TensorRole::embedding || t.role == TensorRole::metric;
}

/// Fast-gradient adversarial perturbation with a per-tensor budget:
///   delta_T = epsilon * std(T) * g_T / ||g_T||,
/// where g is the gradient of the unregularized batch loss evaluated at
/// params_hat + current_delta. Tensors with zero gradient or zero spread get
/// delta = 0.
inline ParamSet adversarial_delta(const Model& model, const ParamSet& params_hat,
                                  const ParamSet& current_delta,
                                  std::span<const TrainingInstance> batch, double epsilon,
                                  bool perturb_all = true) {
  require_same_layout(params_hat, current_delta, "adversarial_delta");
  ParamSet perturbed = params_hat;
  axpy(perturbed, 1.0, current_delta);
  ParamSet grad = params_hat.zeros_like();
  batch_objective(model, perturbed, batch, 0.0, 1.0, &grad);

  ParamSet delta = params_hat.zeros_like();
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!is_perturbed(params_hat[i], perturb_all)) continue;
    const auto g = grad[i].trainable();
    double norm = 0.0;
    for (double x : g) norm += x * x;
    norm = std::sqrt(norm);
    const double budget = epsilon * tensor_stddev(params_hat[i]);
    if (norm == 0.0 || budget == 0.0) continue;
    auto out = delta[i].trainable();
    for (std::size_t k = 0; k < g.size(); ++k) out[k] = budget * g[k] / norm;
  }
  return delta;
}

inline ParamSet adversarial_delta(const Model& model, const ParamSet& params_hat,
                                  std::span<const TrainingInstance> batch, double epsilon,
                                  bool perturb_all = true) {
  return adversarial_delta(model, params_hat, params_hat.zeros_like(), batch, epsilon,
                           perturb_all);
}

// ---------------------------------------------------------------------------

enum class Objective { bpr, apr };

/// Runs training epochs over a split's train lists. Every epoch visits each
/// (playlist, member) positive once in a shuffled order fixed by
/// (seed, epoch), draws fresh negatives, and applies one Adam step per batch.
///
/// MASS-family training removes the positive from its member list, so
/// playlists with a single train song contribute no MASS instances.
class EpochRunner {
 public:
  EpochRunner(Model& model, const SplitDataset& split, const Hyperparams& hyper,
              Objective objective = Objective::bpr, double data_scale = 1.0)
      : model_(model),
        split_(split),
        hyper_(hyper),
        objective_(objective),
        data_scale_(data_scale),
        adam_(model.params()),
        grad_(model.params().zeros_like()),
        delta_(model.params().zeros_like()) {
    if (hyper_.negatives == 0) throw Error("config", "negatives_per_positive must be >= 1");
    if (hyper_.batch_size == 0) throw Error("config", "batch_size must be >= 1");
    const bool mass = model_.spec().kind == ModelKind::mass;
    if (mass && model_.spec().max_members < split_.max_train_len) {
      throw Error("shape", "model member length " + std::to_string(model_.spec().max_members) +
                               " is shorter than the longest train list " +
                               std::to_string(split_.max_train_len));
    }
    full_sets_.reserve(split_.playlists.size());
    for (PlaylistIndex p = 0; p < split_.playlists.size(); ++p) {
      full_sets_.push_back(split_.full_set(p));
      const auto& train = split_.playlists[p].train;
      if (mass && train.size() < 2) continue;
      for (std::uint32_t k = 0; k < train.size(); ++k) positions_.emplace_back(p, k);
    }
  }

  std::size_t num_instances() const noexcept { return positions_.size(); }
  const ParamSet& delta() const noexcept { return delta_; }

  /// Returns the summed training objective over the epoch.
  double run_epoch(std::size_t epoch) {
    Rng rng = make_stream(hyper_.seed, StreamTag::train_epoch, epoch);
    std::vector<std::pair<PlaylistIndex, std::uint32_t>> order = positions_;
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t per_batch = std::max<std::size_t>(1, hyper_.batch_size / hyper_.negatives);
    double epoch_loss = 0.0;
    std::vector<TrainingInstance> batch;
    for (std::size_t start = 0, b = 0; start < order.size(); start += per_batch, ++b) {
      const std::size_t end = std::min(order.size(), start + per_batch);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(make_instance(order[i], rng));
      epoch_loss += step(batch, epoch, b);
    }
    return epoch_loss;
  }

  /// Gradient descent on one explicit batch; returns its objective.
  double step(std::span<const TrainingInstance> batch, std::size_t epoch = 0,
              std::size_t batch_index = 0) {
    ParamSet& params = model_.params();
    grad_.fill_zero();
    double loss = 0.0;
    if (objective_ == Objective::bpr) {
      loss = batch_objective(model_, params, batch, hyper_.lambda_theta, data_scale_, &grad_)
                 .total();
    } else {
      if (hyper_.epsilon != 0.0) {
        delta_ = adversarial_delta(model_, params, delta_, batch, hyper_.epsilon,
                                   hyper_.perturb_all);
      }
      loss = batch_objective(model_, params, batch, hyper_.lambda_theta, data_scale_, &grad_)
                 .total();
      ParamSet perturbed = params;
      axpy(perturbed, 1.0, delta_);
      ParamSet adv_grad = params.zeros_like();
      loss += hyper_.lambda_delta *
              batch_objective(model_, perturbed, batch, 0.0, data_scale_, &adv_grad).total();
      axpy(grad_, hyper_.lambda_delta, adv_grad);
    }
    if (!std::isfinite(loss)) {
      std::string culprit = params.first_non_finite();
      if (culprit.empty()) culprit = grad_.first_non_finite();
      if (culprit.empty()) culprit = "<loss>";
      throw Error("non_finite", "non-finite training loss in epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) + " (tensor '" +
                                    culprit + "')");
    }
    adam_update(params, grad_, adam_, hyper_.learning_rate);
    if (auto bad = params.first_non_finite(); !bad.empty()) {
      throw Error("non_finite", "tensor '" + bad + "' became non-finite in epoch " +
                                    std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index));
    }
    return loss;
  }

 private:
  TrainingInstance make_instance(std::pair<PlaylistIndex, std::uint32_t> pos, Rng& rng) const {
    const auto& pl = split_.playlists[pos.first];
    TrainingInstance inst;
    inst.user = pl.user;
    inst.playlist = pos.first;
    inst.positive = pl.train[pos.second];
    inst.negatives =
        sample_negatives(full_sets_[pos.first], split_.num_songs, hyper_.negatives, rng);
    if (model_.spec().kind == ModelKind::mass) {
      inst.members.assign(model_.spec().max_members, kPaddingSong);
      std::size_t r = 0;
      for (std::uint32_t k = 0; k < pl.train.size(); ++k) {
        if (k != pos.second) inst.members[r++] = pl.train[k];
      }
      inst.real_count = r;
    }
    return inst;
  }

  Model& model_;
  const SplitDataset& split_;
  Hyperparams hyper_;
  Objective objective_;
  double data_scale_;
  AdamState adam_;
  ParamSet grad_;
  ParamSet delta_;
  std::vector<std::vector<SongId>> full_sets_;
  std::vector<std::pair<PlaylistIndex, std::uint32_t>> positions_;
};

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_hit10 = 0.0;
  double dev_ndcg10 = 0.0;
  double seconds = 0.0;  // training pass only, dev evaluation excluded
};

struct TrainResult {
  Model best;
  Model last;
  std::size_t best_epoch = 0;
  double best_dev_hit10 = 0.0;
  double best_dev_ndcg10 = 0.0;
  std::vector<EpochRecord> log;
};

struct TrainOptions {
  // Multiplies the data term of the objective (the APR zero-noise reduction
  // compares against BPR with scale 1 + lambda_delta).
  double data_scale = 1.0;
  std::size_t eval_threads = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Dev hit@10 and NDCG@10 with the standard 100-negative protocol.
template <Scorer S>
std::pair<double, double> dev_metrics(const S& model, const SplitDataset& split,
                                      const Hyperparams& hyper, std::size_t threads = 0) {
  const std::size_t ten[] = {10};
  const auto r = evaluate(model, split, ten, hyper.seed, EvalTarget::dev, hyper.eval_negatives,
                          threads);
  return {r.metrics[0].hit, r.metrics[0].ndcg};
}

/// Mean BPR loss of each dev song against `negatives` fixed sampled songs.
inline double dev_loss(const Model& model, const SplitDataset& split, std::uint64_t seed,
                       std::size_t negatives = 4) {
  double total = 0.0;
  std::size_t count = 0;
  for (PlaylistIndex p = 0; p < split.playlists.size(); ++p) {
    const auto& pl = split.playlists[p];
    if (pl.dev == kPaddingSong) continue;
    Rng rng = make_stream(seed, StreamTag::dev_loss, p);
    const auto negs = sample_negatives(split.full_set(p), split.num_songs, negatives, rng);
    const auto members = pad_members(pl.train, split.max_train_len);
    ScoreContext ctx{pl.user, p, members.ids, members.real_count, pl.dev};
    const double o_pos = model.score(ctx);
    for (SongId s : negs) {
      ctx.candidate = s;
      total += neg_log_sigmoid(model.score(ctx) - o_pos);
      ++count;
    }
  }
  if (count == 0) throw Error("config", "empty dev set");
  return total / static_cast<double>(count);
}

namespace detail {

// Shared epoch loop with dev-based best-checkpoint selection. The best model
// is chosen among epochs 1..E (the starting model when E = 0); ties keep the
// earlier epoch.
inline TrainResult run_with_selection(Model model, const SplitDataset& split,
                                      const Hyperparams& hyper, std::size_t epochs,
                                      Objective objective, const TrainOptions& opt) {
  TrainResult result{model, model, 0, 0.0, 0.0, {}};
  {
    const auto [hit, ndcg] = dev_metrics(model, split, hyper, opt.eval_threads);
    result.best_dev_hit10 = hit;
    result.best_dev_ndcg10 = ndcg;
  }
  EpochRunner runner(model, split, hyper, objective, opt.data_scale);
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = runner.run_epoch(e);
    const auto t1 = std::chrono::steady_clock::now();
    const auto [hit, ndcg] = dev_metrics(model, split, hyper, opt.eval_threads);
    EpochRecord rec{e, loss, hit, ndcg, std::chrono::duration<double>(t1 - t0).count()};
    result.log.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
    if (e == 1 || hit > result.best_dev_hit10) {
      result.best = model;
      result.best_epoch = e;
      result.best_dev_hit10 = hit;
      result.best_dev_ndcg10 = ndcg;
    }
  }
  result.last = std::move(model);
  return result;
}

}  // namespace detail

/// BPR training from `model`, keeping the best dev-hit@10 checkpoint.
inline TrainResult train_bpr(Model model, const SplitDataset& split, const Hyperparams& hyper,
                             const TrainOptions& opt = {}) {
  return detail::run_with_selection(std::move(model), split, hyper, hyper.epochs, Objective::bpr,
                                    opt);
}

/// Adversarial fine-tuning from a BPR checkpoint. Each batch first moves
/// delta by the fast gradient method with parameters fixed, then takes an
/// Adam step on L(theta) + lambda_delta * L(theta + delta) with delta fixed.
/// Perturbations live only inside the runner; returned models are clean.
inline TrainResult apr_train(const Model& pretrained, const SplitDataset& split,
                             const Hyperparams& hyper, const TrainOptions& opt = {}) {
  return detail::run_with_selection(pretrained, split, hyper, hyper.apr_epochs, Objective::apr,
                                    opt);
}

}  // namespace masr
