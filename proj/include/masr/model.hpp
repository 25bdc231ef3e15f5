#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/metric.hpp"
#include "masr/rng.hpp"
#include "masr/tensor.hpp"

namespace masr {

enum class ModelKind { mdr, mass };

// Which entities feed a model: `us` user+song, `ps` playlist+song, `ups` all three.
enum class Variant { us, ps, ups };

enum class AttentionKind { mem_metric, mem_dot, nonmem_metric, nonmem_dot };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::mdr ? "mdr" : "mass"; }

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::us: return "us";
    case Variant::ps: return "ps";
    case Variant::ups: return "ups";
  }
  return "?";
}

inline std::string_view to_string(AttentionKind a) {
  switch (a) {
    case AttentionKind::mem_metric: return "mem_metric";
    case AttentionKind::mem_dot: return "mem_dot";
    case AttentionKind::nonmem_metric: return "nonmem_metric";
    case AttentionKind::nonmem_dot: return "nonmem_dot";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mdr") return ModelKind::mdr;
  if (s == "mass") return ModelKind::mass;
  throw ConfigError("model", "unknown model kind '" + std::string(s) + "'");
}

inline Variant parse_variant(std::string_view s, std::string_view key = "variant") {
  if (s == "us") return Variant::us;
  if (s == "ps") return Variant::ps;
  if (s == "ups") return Variant::ups;
  throw ConfigError(std::string(key), "unknown variant '" + std::string(s) + "'");
}

inline AttentionKind parse_attention(std::string_view s) {
  if (s == "mem_metric") return AttentionKind::mem_metric;
  if (s == "mem_dot") return AttentionKind::mem_dot;
  if (s == "nonmem_metric") return AttentionKind::nonmem_metric;
  if (s == "nonmem_dot") return AttentionKind::nonmem_dot;
  throw ConfigError("attention", "unknown attention kind '" + std::string(s) + "'");
}

inline bool uses_memory(AttentionKind a) {
  return a == AttentionKind::mem_metric || a == AttentionKind::mem_dot;
}
inline bool uses_metric(AttentionKind a) {
  return a == AttentionKind::mem_metric || a == AttentionKind::nonmem_metric;
}
inline bool uses_user(Variant v) { return v != Variant::ps; }
inline bool uses_playlist(Variant v) { return v != Variant::us; }

struct ModelSpec {
  ModelKind kind = ModelKind::mdr;
  Variant variant = Variant::ups;
  AttentionKind attention = AttentionKind::mem_metric;
  bool use_bias = true;
  std::size_t dim = 16;
  std::size_t num_users = 0;
  std::size_t num_playlists = 0;
  std::size_t num_songs = 0;    // real songs; tables carry one extra padding row
  std::size_t max_members = 0;  // padded member-list length l (MASS)

  bool operator==(const ModelSpec&) const = default;
};

struct ScoreContext {
  UserIndex user = 0;
  PlaylistIndex playlist = 0;
  std::span<const SongId> members;  // padded member list
  std::size_t real_count = 0;
  SongId candidate = kPaddingSong;
};

// ---------------------------------------------------------------------------
// Building blocks shared by the MASS forward pass and the public helpers.

namespace detail {

// z = W^T x + b, q = max(z, 0). W is (x.size() x d), row-major.
inline void affine_relu(std::span<const double> x, const Tensor& w, std::span<const double> b,
                        std::span<double> z, std::span<double> q) {
  const std::size_t d = w.cols;
  if (w.rows != x.size() || b.size() != d || z.size() != d || q.size() != d) {
    throw Error("shape", "query layer expects input " + std::to_string(w.rows) + " and output " +
                             std::to_string(d) + ", got input " + std::to_string(x.size()) +
                             " and bias " + std::to_string(b.size()));
  }
  std::copy(b.begin(), b.end(), z.begin());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double* wr = w.values.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) z[j] += xi * wr[j];
  }
  for (std::size_t j = 0; j < d; ++j) q[j] = z[j] > 0.0 ? z[j] : 0.0;
}

// Backprop through affine_relu. Accumulates into gw, gb and gx.
inline void affine_relu_backward(std::span<const double> x, const Tensor& w,
                                 std::span<const double> z, std::span<const double> gq,
                                 std::span<double> gw, std::span<double> gb,
                                 std::span<double> gx) {
  const std::size_t d = w.cols;
  for (std::size_t j = 0; j < d; ++j) {
    const double gz = z[j] > 0.0 ? gq[j] : 0.0;
    if (gz == 0.0) continue;
    gb[j] += gz;
    for (std::size_t i = 0; i < x.size(); ++i) {
      gw[i * d + j] += x[i] * gz;
      gx[i] += w.values[i * d + j] * gz;
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

inline std::vector<double> concat(std::initializer_list<std::span<const double>> parts) {
  std::vector<double> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Personalized query ReLU(W^T [parts...] + b); W has one row per input entry.
inline std::vector<double> build_query(std::span<const double> input, const Tensor& w,
                                       std::span<const double> b) {
  std::vector<double> z(w.cols), q(w.cols);
  detail::affine_relu(input, w, b, z, q);
  return q;
}

/// Distance from q to every slot of a padded member list, padded slots
/// included (they read the all-zero padding row and are masked later).
inline std::vector<double> member_distances(std::span<const double> q, const Tensor& table,
                                            std::span<const SongId> members,
                                            std::span<const double> metric) {
  std::vector<double> out(members.size());
  for (std::size_t t = 0; t < members.size(); ++t) {
    if (members[t] >= table.rows) throw Error("index", "member song out of range");
    out[t] = mahalanobis_sq(metric, q, table.row(members[t]));
  }
  return out;
}

/// exp(-d_t) / sum exp(-d_t') over the first `real_count` slots; zero beyond.
inline std::vector<double> masked_softmin(std::span<const double> dist, std::size_t real_count) {
  if (real_count == 0) throw Error("shape", "attention over zero real members");
  if (real_count > dist.size()) throw Error("shape", "real member count exceeds list length");
  std::vector<double> a(dist.size(), 0.0);
  const double lo = *std::min_element(dist.begin(), dist.begin() + real_count);
  double total = 0.0;
  for (std::size_t t = 0; t < real_count; ++t) {
    a[t] = std::exp(-(dist[t] - lo));
    total += a[t];
  }
  for (std::size_t t = 0; t < real_count; ++t) a[t] /= total;
  return a;
}

inline std::vector<double> masked_softmax(std::span<const double> logits,
                                          std::size_t real_count) {
  std::vector<double> neg(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) neg[t] = -logits[t];
  return masked_softmin(neg, real_count);
}

/// Softmin over member distances: the metric attention weights.
inline std::vector<double> attention_weights(std::span<const double> query, const Tensor& table,
                                             std::span<const SongId> members,
                                             std::span<const double> metric,
                                             std::size_t real_count) {
  return masked_softmin(member_distances(query, table, members, metric), real_count);
}

/// MASR blend of two distance-form scores.
inline double masr_score(double o_mdr, double o_mass, double alpha = 0.5) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error("config", "alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return alpha * o_mdr + (1.0 - alpha) * o_mass;
}

// ---------------------------------------------------------------------------

// Intermediate values of one MASS forward pass, kept for backprop.
struct MassTrace {
  std::vector<double> x, z, q;     // main query input, preactivation, output
  std::vector<double> xa, za, qa;  // attention-memory query (memory variants only)
  std::vector<double> dist;        // member distances under B3, all slots
  std::vector<double> att;         // attention distances (metric) or logits (dot), all slots
  std::vector<double> alpha;
  double score = 0.0;
};

/// Parameters plus architecture of one MDR or MASS variant. Scores are
/// distances: lower means more relevant.
class Model {
 public:
  /// Zero-valued tensors in canonical order for `spec`.
  static ParamSet make_layout(const ModelSpec& spec) {
    if (spec.dim == 0) throw Error("config", "embedding size must be positive");
    const std::size_t d = spec.dim;
    const std::size_t song_rows = spec.num_songs + 1;
    ParamSet p;
    auto emb = [&](const char* name, Entity e, std::size_t rows, bool padded) {
      p.add(Tensor(name, TensorRole::embedding, e, rows, d, padded));
    };
    auto metric = [&](const char* name) {
      p.add(Tensor(name, TensorRole::metric, Entity::none, 1, d, false));
    };
    auto affine = [&](const char* name, std::size_t rows) {
      p.add(Tensor(name, TensorRole::affine, Entity::none, rows, d, false));
    };
    const bool user = uses_user(spec.variant);
    const bool playlist = uses_playlist(spec.variant);
    const std::size_t in_rows = d * ((user ? 1 : 0) + (playlist ? 1 : 0) + 1);

    if (spec.kind == ModelKind::mdr) {
      if (user) emb("U", Entity::user, spec.num_users, false);
      if (playlist) emb("P", Entity::playlist, spec.num_playlists, false);
      emb("S", Entity::song, song_rows, true);
      if (user) metric("B1");
      if (playlist) metric("B2");
      if (spec.use_bias) p.add(Tensor("theta", TensorRole::bias, Entity::song, song_rows, 1, true));
      return p;
    }

    if (user) emb("U", Entity::user, spec.num_users, false);
    if (playlist) emb("P", Entity::playlist, spec.num_playlists, false);
    emb("S", Entity::song, song_rows, true);
    affine("W1", in_rows);
    affine("b1", 1);
    metric("B3");
    if (uses_memory(spec.attention)) {
      if (user) emb("U_a", Entity::user, spec.num_users, false);
      if (playlist) emb("P_a", Entity::playlist, spec.num_playlists, false);
      emb("S_a", Entity::song, song_rows, true);
      affine("W2", in_rows);
      affine("b2", 1);
    }
    if (uses_metric(spec.attention)) metric("B4");
    if (spec.use_bias) {
      p.add(Tensor("song_bias", TensorRole::bias, Entity::song, song_rows, 1, true));
    }
    return p;
  }

  /// Fresh parameters: embeddings ~ N(0, 0.01), metric vectors all ones,
  /// biases zero, query weights Glorot-uniform.
  static Model create(const ModelSpec& spec, std::uint64_t seed) {
    ParamSet p = make_layout(spec);
    Rng rng = make_stream(seed, StreamTag::init);
    std::normal_distribution<double> normal(0.0, 0.01);
    for (auto& t : p) {
      switch (t.role) {
        case TensorRole::embedding:
          for (double& v : t.trainable()) v = normal(rng);
          break;
        case TensorRole::metric:
          std::fill(t.values.begin(), t.values.end(), 1.0);
          break;
        case TensorRole::bias:
          break;
        case TensorRole::affine:
          if (t.rows > 1) {
            const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
            std::uniform_real_distribution<double> uni(-limit, limit);
            for (double& v : t.values) v = uni(rng);
          }
          break;
      }
    }
    return Model(spec, std::move(p));
  }

  Model(ModelSpec spec, ParamSet params) : spec_(spec), params_(std::move(params)) {
    ParamSet expected = make_layout(spec_);
    require_same_layout(expected, params_, "model parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].role = expected[i].role;
      params_[i].entity = expected[i].entity;
    }
    resolve_slots();
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  double score(const ScoreContext& ctx) const { return score(params_, ctx); }

  double score(const ParamSet& p, const ScoreContext& ctx) const {
    check_context(ctx);
    if (spec_.kind == ModelKind::mdr) return mdr_forward(p, ctx);
    MassTrace trace;
    mass_forward(p, ctx, trace);
    return trace.score;
  }

  /// Attention weights over the padded member slots (MASS family only).
  std::vector<double> attention(const ScoreContext& ctx) const {
    if (spec_.kind != ModelKind::mass) throw Error("config", "MDR has no attention");
    check_context(ctx);
    MassTrace trace;
    mass_forward(params_, ctx, trace);
    return trace.alpha;
  }

  /// Forward pass plus backprop of `upstream * d score / d params` into
  /// `grad`, which must share this model's layout. Returns the score.
  double accumulate_gradient(const ParamSet& p, const ScoreContext& ctx, double upstream,
                             ParamSet& grad) const {
    check_context(ctx);
    if (spec_.kind == ModelKind::mdr) return mdr_backward(p, ctx, upstream, grad);
    MassTrace trace;
    mass_forward(p, ctx, trace);
    mass_backward(p, ctx, trace, upstream, grad);
    return trace.score;
  }

 private:
  struct Slots {
    int U = -1, P = -1, S = -1, B1 = -1, B2 = -1, bias = -1;
    int W1 = -1, b1 = -1, B3 = -1;
    int Ua = -1, Pa = -1, Sa = -1, W2 = -1, b2 = -1, B4 = -1;
  };

  void resolve_slots() {
    auto at = [&](const char* n) { return params_.index_of(n); };
    s_.U = at("U");
    s_.P = at("P");
    s_.S = at("S");
    s_.B1 = at("B1");
    s_.B2 = at("B2");
    s_.bias = spec_.kind == ModelKind::mdr ? at("theta") : at("song_bias");
    s_.W1 = at("W1");
    s_.b1 = at("b1");
    s_.B3 = at("B3");
    s_.Ua = at("U_a");
    s_.Pa = at("P_a");
    s_.Sa = at("S_a");
    s_.W2 = at("W2");
    s_.b2 = at("b2");
    s_.B4 = at("B4");
  }

  void check_context(const ScoreContext& ctx) const {
    if (ctx.candidate == kPaddingSong || ctx.candidate > spec_.num_songs) {
      throw Error("index", "candidate song " + std::to_string(ctx.candidate) + " out of range");
    }
    if (uses_user(spec_.variant) && ctx.user >= spec_.num_users) {
      throw Error("index", "user " + std::to_string(ctx.user) + " out of range");
    }
    if (uses_playlist(spec_.variant) && ctx.playlist >= spec_.num_playlists) {
      throw Error("index", "playlist " + std::to_string(ctx.playlist) + " out of range");
    }
    if (spec_.kind == ModelKind::mass) {
      if (ctx.real_count == 0 || ctx.real_count > ctx.members.size()) {
        throw Error("shape", "member list needs 1.." + std::to_string(ctx.members.size()) +
                                 " real songs, got " + std::to_string(ctx.real_count));
      }
      for (SongId m : ctx.members) {
        if (m > spec_.num_songs) throw Error("index", "member song out of range");
      }
    }
  }

  // ----- MDR -----

  double mdr_forward(const ParamSet& p, const ScoreContext& ctx) const {
    const auto s = p[s_.S].row(ctx.candidate);
    double o = 0.0;
    if (s_.U >= 0) o += mahalanobis_sq(p[s_.B1].values, p[s_.U].row(ctx.user), s);
    if (s_.P >= 0) o += mahalanobis_sq(p[s_.B2].values, p[s_.P].row(ctx.playlist), s);
    if (s_.bias >= 0) o += p[s_.bias].values[ctx.candidate];
    return o;
  }

  double mdr_backward(const ParamSet& p, const ScoreContext& ctx, double g, ParamSet& grad) const {
    const auto s = p[s_.S].row(ctx.candidate);
    auto gs = grad[s_.S].row(ctx.candidate);
    if (s_.U >= 0) {
      accumulate_mahalanobis_sq_grad(p[s_.B1].values, p[s_.U].row(ctx.user), s, g,
                                     grad[s_.B1].values, grad[s_.U].row(ctx.user), gs);
    }
    if (s_.P >= 0) {
      accumulate_mahalanobis_sq_grad(p[s_.B2].values, p[s_.P].row(ctx.playlist), s, g,
                                     grad[s_.B2].values, grad[s_.P].row(ctx.playlist), gs);
    }
    if (s_.bias >= 0) grad[s_.bias].values[ctx.candidate] += g;
    return mdr_forward(p, ctx);
  }

  // ----- MASS -----

  // Query input [u; p; s] from the given tables (slot -1 = absent).
  void gather_input(const ParamSet& p, int user_slot, int playlist_slot, int song_slot,
                    const ScoreContext& ctx, std::vector<double>& x) const {
    x.clear();
    if (user_slot >= 0) {
      auto r = p[user_slot].row(ctx.user);
      x.insert(x.end(), r.begin(), r.end());
    }
    if (playlist_slot >= 0) {
      auto r = p[playlist_slot].row(ctx.playlist);
      x.insert(x.end(), r.begin(), r.end());
    }
    auto r = p[song_slot].row(ctx.candidate);
    x.insert(x.end(), r.begin(), r.end());
  }

  void scatter_input(ParamSet& grad, int user_slot, int playlist_slot, int song_slot,
                     const ScoreContext& ctx, std::span<const double> gx) const {
    const std::size_t d = spec_.dim;
    std::size_t off = 0;
    auto add = [&](std::span<double> row) {
      for (std::size_t c = 0; c < d; ++c) row[c] += gx[off + c];
      off += d;
    };
    if (user_slot >= 0) add(grad[user_slot].row(ctx.user));
    if (playlist_slot >= 0) add(grad[playlist_slot].row(ctx.playlist));
    add(grad[song_slot].row(ctx.candidate));
  }

  void mass_forward(const ParamSet& p, const ScoreContext& ctx, MassTrace& tr) const {
    const std::size_t d = spec_.dim;
    const std::size_t slots = ctx.members.size();
    const bool memory = uses_memory(spec_.attention);
    const bool metric = uses_metric(spec_.attention);

    gather_input(p, s_.U, s_.P, s_.S, ctx, tr.x);
    tr.z.resize(d);
    tr.q.resize(d);
    detail::affine_relu(tr.x, p[s_.W1], p[s_.b1].values, tr.z, tr.q);

    const Tensor& songs = p[s_.S];
    const auto b3 = std::span<const double>(p[s_.B3].values);
    tr.dist.resize(slots);
    for (std::size_t t = 0; t < slots; ++t) {
      tr.dist[t] = mahalanobis_sq(b3, tr.q, songs.row(ctx.members[t]));
    }

    std::span<const double> query = tr.q;
    const Tensor* keys = &songs;
    if (memory) {
      gather_input(p, s_.Ua, s_.Pa, s_.Sa, ctx, tr.xa);
      tr.za.resize(d);
      tr.qa.resize(d);
      detail::affine_relu(tr.xa, p[s_.W2], p[s_.b2].values, tr.za, tr.qa);
      query = tr.qa;
      keys = &p[s_.Sa];
    }

    tr.att.resize(slots);
    for (std::size_t t = 0; t < slots; ++t) {
      const auto key = keys->row(ctx.members[t]);
      tr.att[t] = metric ? mahalanobis_sq(p[s_.B4].values, query, key) : detail::dot(query, key);
    }
    tr.alpha = metric ? masked_softmin(tr.att, ctx.real_count)
                      : masked_softmax(tr.att, ctx.real_count);

    double o = 0.0;
    for (std::size_t t = 0; t < ctx.real_count; ++t) o += tr.alpha[t] * tr.dist[t];
    if (s_.bias >= 0) o += p[s_.bias].values[ctx.candidate];
    tr.score = o;
  }

  void mass_backward(const ParamSet& p, const ScoreContext& ctx, const MassTrace& tr, double g,
                     ParamSet& grad) const {
    const std::size_t d = spec_.dim;
    const std::size_t real = ctx.real_count;
    const bool memory = uses_memory(spec_.attention);
    const bool metric = uses_metric(spec_.attention);

    if (s_.bias >= 0) grad[s_.bias].values[ctx.candidate] += g;

    double mean_dist = 0.0;
    for (std::size_t t = 0; t < real; ++t) mean_dist += tr.alpha[t] * tr.dist[t];

    std::vector<double> gq(d, 0.0);
    const auto b3 = std::span<const double>(p[s_.B3].values);
    for (std::size_t t = 0; t < real; ++t) {
      const SongId m = ctx.members[t];
      accumulate_mahalanobis_sq_grad(b3, tr.q, p[s_.S].row(m), g * tr.alpha[t],
                                     grad[s_.B3].values, gq, grad[s_.S].row(m));
    }

    // Softmin/softmax coupling: d score / d att_t.
    std::vector<double> gqa(d, 0.0);
    std::span<double> g_query = memory ? std::span<double>(gqa) : std::span<double>(gq);
    std::span<const double> query =
        memory ? std::span<const double>(tr.qa) : std::span<const double>(tr.q);
    const int key_slot = memory ? s_.Sa : s_.S;
    for (std::size_t t = 0; t < real; ++t) {
      const double coupling = tr.alpha[t] * (tr.dist[t] - mean_dist) * g;
      const SongId m = ctx.members[t];
      const auto key = p[key_slot].row(m);
      if (metric) {
        accumulate_mahalanobis_sq_grad(p[s_.B4].values, query, key, -coupling,
                                       grad[s_.B4].values, g_query, grad[key_slot].row(m));
      } else {
        auto gkey = grad[key_slot].row(m);
        for (std::size_t c = 0; c < d; ++c) {
          g_query[c] += coupling * key[c];
          gkey[c] += coupling * query[c];
        }
      }
    }

    if (memory) {
      std::vector<double> gxa(tr.xa.size(), 0.0);
      detail::affine_relu_backward(tr.xa, p[s_.W2], tr.za, gqa, grad[s_.W2].values,
                                   grad[s_.b2].values, gxa);
      scatter_input(grad, s_.Ua, s_.Pa, s_.Sa, ctx, gxa);
    }

    std::vector<double> gx(tr.x.size(), 0.0);
    detail::affine_relu_backward(tr.x, p[s_.W1], tr.z, gq, grad[s_.W1].values,
                                 grad[s_.b1].values, gx);
    scatter_input(grad, s_.U, s_.P, s_.S, ctx, gx);

    // Padded member slots read row 0; it never receives gradient.
    for (int slot : {s_.S, s_.Sa}) {
      if (slot < 0) continue;
      auto r = grad[slot].row(0);
      std::fill(r.begin(), r.end(), 0.0);
    }
  }

  ModelSpec spec_;
  ParamSet params_;
  Slots s_;
};

/// Frozen MDR + MASS pair blended as alpha * o_mdr + (1 - alpha) * o_mass.
class FusionModel {
 public:
  FusionModel(Model mdr, Model mass, double alpha = 0.5)
      : mdr_(std::move(mdr)), mass_(std::move(mass)), alpha_(alpha) {
    if (mdr_.spec().kind != ModelKind::mdr || mass_.spec().kind != ModelKind::mass) {
      throw Error("config", "fusion needs an MDR and a MASS model");
    }
    if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) {
      throw Error("config", "alpha must lie in [0, 1], got " + std::to_string(alpha_));
    }
  }

  double score(const ScoreContext& ctx) const {
    return masr_score(mdr_.score(ctx), mass_.score(ctx), alpha_);
  }

  double alpha() const noexcept { return alpha_; }
  const Model& mdr() const noexcept { return mdr_; }
  const Model& mass() const noexcept { return mass_; }

 private:
  Model mdr_;
  Model mass_;
  double alpha_;
};

}  // namespace masr
