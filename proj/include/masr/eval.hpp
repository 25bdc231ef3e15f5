#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/model.hpp"
#include "masr/rng.hpp"

namespace masr {

template <class S>
concept Scorer = requires(const S& s, const ScoreContext& ctx) {
  { s.score(ctx) } -> std::convertible_to<double>;
};

struct RankResult {
  PlaylistIndex playlist = 0;
  std::size_t rank = 0;  // 1-based among 1 + |negatives| candidates
  std::uint64_t candidate_hash = 0;
};

// FNV-1a over the candidate list in order.
inline std::uint64_t hash_candidates(SongId first, std::span<const SongId> rest) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](SongId s) {
    for (int i = 0; i < 4; ++i) {
      h ^= (s >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  };
  mix(first);
  for (SongId s : rest) mix(s);
  return h;
}

/// Position of `test_song` when all candidates are sorted by ascending
/// score, ties broken by ascending song index.
template <Scorer S>
RankResult rank_candidates(const S& model, ScoreContext ctx, SongId test_song,
                           std::span<const SongId> negatives) {
  std::vector<SongId> all(negatives.begin(), negatives.end());
  all.push_back(test_song);
  std::sort(all.begin(), all.end());
  if (auto dup = std::adjacent_find(all.begin(), all.end()); dup != all.end()) {
    throw Error("sampling", "duplicate candidate song " + std::to_string(*dup));
  }

  ctx.candidate = test_song;
  const double test_score = model.score(ctx);
  std::size_t ahead = 0;
  for (SongId s : negatives) {
    ctx.candidate = s;
    const double sc = model.score(ctx);
    if (sc < test_score || (sc == test_score && s < test_song)) ++ahead;
  }
  return {ctx.playlist, ahead + 1, hash_candidates(test_song, negatives)};
}

inline int hit_at_n(std::size_t rank, std::size_t n) { return rank >= 1 && rank <= n ? 1 : 0; }

inline double ndcg_at_n(std::size_t rank, std::size_t n) {
  if (rank < 1 || rank > n) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

enum class EvalTarget { dev, test };

struct MetricsAtN {
  std::size_t n = 0;
  double hit = 0.0;
  double ndcg = 0.0;
};

struct EvalResult {
  std::vector<MetricsAtN> metrics;
  std::vector<RankResult> ranks;
  std::size_t num_playlists = 0;

  const MetricsAtN& at(std::size_t n) const {
    for (const auto& m : metrics) {
      if (m.n == n) return m;
    }
    throw Error("config", "no metrics recorded for N=" + std::to_string(n));
  }
};

/// Worker count from METRIC_REC_THREADS, else the hardware concurrency.
inline std::size_t default_eval_threads() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("METRIC_REC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
  }
  return hw;
}

/// Evaluation negatives of playlist p: fixed by (seed, target, p), so every
/// model sees the same candidate list.
inline std::vector<SongId> evaluation_negatives(const SplitDataset& split, PlaylistIndex p,
                                                EvalTarget target, std::uint64_t seed,
                                                std::size_t count) {
  const auto tag = target == EvalTarget::test ? StreamTag::eval_test : StreamTag::eval_dev;
  Rng rng = make_stream(seed, tag, p);
  const auto exclude = split.full_set(p);
  return sample_negatives(exclude, split.num_songs, count, rng);
}

/// Leave-one-out ranking of each playlist's held-out song against sampled
/// negatives, with the full train list as context. Means over playlists.
template <Scorer S>
EvalResult evaluate(const S& model, const SplitDataset& split, std::span<const std::size_t> ns,
                    std::uint64_t seed, EvalTarget target = EvalTarget::test,
                    std::size_t num_negatives = 100, std::size_t threads = 0) {
  std::vector<PlaylistIndex> eligible;
  for (PlaylistIndex p = 0; p < split.playlists.size(); ++p) {
    const auto& pl = split.playlists[p];
    const SongId held = target == EvalTarget::test ? pl.test : pl.dev;
    if (held != kPaddingSong && !pl.train.empty()) eligible.push_back(p);
  }
  if (eligible.empty()) {
    throw Error("config", target == EvalTarget::test ? "empty test set" : "empty dev set");
  }
  for (std::size_t n : ns) {
    if (n < 1) throw Error("config", "N must be >= 1");
  }

  std::vector<RankResult> ranks(eligible.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const PlaylistIndex p = eligible[i];
      const auto& pl = split.playlists[p];
      const SongId held = target == EvalTarget::test ? pl.test : pl.dev;
      const auto negatives = evaluation_negatives(split, p, target, seed, num_negatives);
      const auto members = pad_members(pl.train, split.max_train_len);
      ScoreContext ctx{pl.user, p, members.ids, members.real_count, held};
      ranks[i] = rank_candidates(model, ctx, held, negatives);
    }
  };

  if (threads == 0) threads = default_eval_threads();
  threads = std::min(threads, eligible.size());
  if (threads <= 1) {
    work(0, eligible.size());
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    const std::size_t chunk = (eligible.size() + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
      const std::size_t b = std::min(eligible.size(), w * chunk);
      const std::size_t e = std::min(eligible.size(), b + chunk);
      pool.emplace_back([&, w, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalResult out;
  out.num_playlists = ranks.size();
  for (std::size_t n : ns) {
    MetricsAtN m{n, 0.0, 0.0};
    for (const auto& r : ranks) {
      m.hit += hit_at_n(r.rank, n);
      m.ndcg += ndcg_at_n(r.rank, n);
    }
    m.hit /= static_cast<double>(ranks.size());
    m.ndcg /= static_cast<double>(ranks.size());
    out.metrics.push_back(m);
  }
  out.ranks = std::move(ranks);
  return out;
}

}  // namespace masr
