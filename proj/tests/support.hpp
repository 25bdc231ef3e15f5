#pragma once

// Fixtures shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "masr/masr.hpp"

namespace masr::testing {

/// Random dense parameters (padding rows stay zero) so that every gradient
/// path is exercised away from the symmetric initial point.
inline Model random_model(const ModelSpec& spec, std::uint64_t seed) {
  Model m = Model::create(spec, seed);
  std::mt19937_64 rng(seed * 7919 + 17);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> metric(0.5, 1.5);
  for (auto& t : m.params()) {
    for (double& v : t.trainable()) {
      v = t.role == TensorRole::metric ? metric(rng) : 0.5 * n01(rng);
    }
  }
  return m;
}

/// Small catalog spec for gradient and attention checks.
inline ModelSpec small_spec(ModelKind kind, Variant variant = Variant::ups,
                            AttentionKind att = AttentionKind::mem_metric, bool bias = true,
                            std::size_t d = 4, std::size_t l = 3) {
  ModelSpec s;
  s.kind = kind;
  s.variant = variant;
  s.attention = att;
  s.use_bias = bias;
  s.dim = d;
  s.num_users = 3;
  s.num_playlists = 5;
  s.num_songs = 12;
  s.max_members = l;
  return s;
}

/// Random quartet batch over `spec`'s catalog: members padded to l with a
/// random real count in 1..l.
inline std::vector<TrainingInstance> random_batch(const ModelSpec& spec, std::size_t size,
                                                  std::size_t negatives, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  for (std::size_t i = 0; i < size; ++i) {
    TrainingInstance inst;
    inst.user = std::uniform_int_distribution<UserIndex>(0, spec.num_users - 1)(rng);
    inst.playlist = std::uniform_int_distribution<PlaylistIndex>(0, spec.num_playlists - 1)(rng);
    std::vector<SongId> songs(spec.num_songs);
    std::iota(songs.begin(), songs.end(), SongId{1});
    std::shuffle(songs.begin(), songs.end(), rng);
    inst.positive = songs[0];
    inst.negatives.assign(songs.begin() + 1, songs.begin() + 1 + negatives);
    const std::size_t l = std::max<std::size_t>(spec.max_members, 1);
    inst.real_count = std::uniform_int_distribution<std::size_t>(1, l)(rng);
    inst.members.assign(l, kPaddingSong);
    for (std::size_t t = 0; t < inst.real_count; ++t) inst.members[t] = songs[1 + negatives + t];
    out.push_back(std::move(inst));
  }
  return out;
}

struct GradCheck {
  std::string worst_tensor;
  double worst_rel_error = 0.0;
};

/// Central finite differences of the batch objective against the analytic
/// gradient, tensor by tensor. Relative error is the norm of the difference
/// over the larger of the two gradient norms.
inline GradCheck check_gradient(const Model& model, std::span<const TrainingInstance> batch,
                                double lambda, double step = 1e-5) {
  ParamSet params = model.params();
  ParamSet grad = params.zeros_like();
  batch_objective(model, params, batch, lambda, 1.0, &grad);
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].trainable();
    const auto g = grad[i].trainable();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double saved = vals[k];
      vals[k] = saved + step;
      const double up = batch_objective(model, params, batch, lambda, 1.0, nullptr).total();
      vals[k] = saved - step;
      const double down = batch_objective(model, params, batch, lambda, 1.0, nullptr).total();
      vals[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      diff2 += (fd - g[k]) * (fd - g[k]);
      a2 += g[k] * g[k];
      n2 += fd * fd;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    const double rel = std::sqrt(diff2) / denom;
    if (out.worst_tensor.empty() || rel > out.worst_rel_error) {
      out.worst_rel_error = rel;
      out.worst_tensor = params[i].name;
    }
  }
  return out;
}

// ----- corpora ------------------------------------------------------------

/// Two playlists sharing s1, s2; p2 also holds s3; songs 4..23 are
/// distractors in neither playlist. Train lists are the whole playlists.
inline SplitDataset toy_overlap_split() {
  SplitDataset s;
  s.num_users = 2;
  s.num_playlists = 2;
  s.num_songs = 23;
  s.playlists = {PlaylistSplit{0, {1, 2}, kPaddingSong, kPaddingSong},
                 PlaylistSplit{1, {1, 2, 3}, kPaddingSong, kPaddingSong}};
  s.recompute_max_len();
  return s;
}

struct PlantedOptions {
  std::size_t num_songs = 200;       // split evenly across the clusters
  std::size_t num_clusters = 2;
  std::size_t num_playlists = 60;
  std::size_t playlists_per_user = 2;
  std::size_t playlist_size = 10;    // 8 train + dev + test
  double zipf_exponent = 1.5;        // in-cluster song popularity
};

/// Planted-cluster corpus: each user sticks to one cluster, each playlist
/// draws distinct songs from its cluster with Zipf popularity over a random
/// in-cluster ranking. Dev and test are the first two songs drawn.
inline SplitDataset planted_cluster_split(std::uint64_t seed, const PlantedOptions& o = {}) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t per_cluster = o.num_songs / o.num_clusters;
  std::vector<std::vector<SongId>> ranking(o.num_clusters);
  for (std::size_t c = 0; c < o.num_clusters; ++c) {
    for (std::size_t k = 0; k < per_cluster; ++k) {
      ranking[c].push_back(static_cast<SongId>(c * per_cluster + k + 1));
    }
    std::shuffle(ranking[c].begin(), ranking[c].end(), rng);
  }
  std::vector<double> weights(per_cluster);
  for (std::size_t r = 0; r < per_cluster; ++r) {
    weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), o.zipf_exponent);
  }

  SplitDataset s;
  s.num_playlists = o.num_playlists;
  s.num_users = (o.num_playlists + o.playlists_per_user - 1) / o.playlists_per_user;
  s.num_songs = o.num_songs;
  for (std::size_t p = 0; p < o.num_playlists; ++p) {
    const UserIndex user = static_cast<UserIndex>(p / o.playlists_per_user);
    const std::size_t cluster = user % o.num_clusters;
    std::vector<double> w = weights;
    std::vector<SongId> drawn;
    while (drawn.size() < o.playlist_size) {
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t r = pick(rng);
      drawn.push_back(ranking[cluster][r]);
      w[r] = 0.0;
    }
    PlaylistSplit pl;
    pl.user = user;
    pl.test = drawn[0];
    pl.dev = drawn[1];
    pl.train.assign(drawn.begin() + 2, drawn.end());
    s.playlists.push_back(std::move(pl));
  }
  s.recompute_max_len();
  s.validate();
  return s;
}

/// Writes a split as user/playlist/song TSV rows (train, then dev, then test
/// for each playlist), ids prefixed by kind.
inline void write_tsv(const std::filesystem::path& path, const SplitDataset& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (PlaylistIndex p = 0; p < s.playlists.size(); ++p) {
    const auto& pl = s.playlists[p];
    auto row = [&](SongId song) {
      out << 'u' << pl.user << "\tp" << p << "\ts" << song << '\n';
    };
    for (SongId song : pl.train) row(song);
    if (pl.dev) row(pl.dev);
    if (pl.test) row(pl.test);
  }
}

/// Corpus for the timing check: one playlist of length `omega` (so the
/// padded member length is fixed), every other playlist `length` songs drawn
/// uniformly, four playlists per user. Doubling `num_playlists` doubles the
/// training instances without changing per-instance work.
inline SplitDataset scaling_split(std::size_t length, std::size_t omega, std::uint64_t seed,
                                  std::size_t num_playlists = 400, std::size_t num_songs = 2000) {
  std::mt19937_64 rng(seed);
  SplitDataset s;
  s.num_users = num_playlists / 4;
  s.num_playlists = num_playlists;
  s.num_songs = num_songs;
  std::vector<SongId> all(num_songs);
  std::iota(all.begin(), all.end(), SongId{1});
  for (std::size_t p = 0; p < num_playlists; ++p) {
    const std::size_t n = (p == 0 ? omega : length) + 2;
    std::shuffle(all.begin(), all.end(), rng);
    PlaylistSplit pl;
    pl.user = static_cast<UserIndex>(p % s.num_users);
    pl.test = all[0];
    pl.dev = all[1];
    pl.train.assign(all.begin() + 2, all.begin() + static_cast<std::ptrdiff_t>(n));
    s.playlists.push_back(std::move(pl));
  }
  s.recompute_max_len();
  return s;
}

inline ModelSpec spec_for_split(ModelKind kind, const SplitDataset& s, std::size_t d = 16,
                                Variant v = Variant::ups,
                                AttentionKind att = AttentionKind::mem_metric, bool bias = true) {
  ModelSpec spec;
  spec.kind = kind;
  spec.variant = v;
  spec.attention = att;
  spec.use_bias = bias;
  spec.dim = d;
  spec.num_users = s.num_users;
  spec.num_playlists = s.num_playlists;
  spec.num_songs = s.num_songs;
  spec.max_members = s.max_train_len;
  return spec;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("masr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace masr::testing
