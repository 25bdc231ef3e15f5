#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/model.hpp"

namespace masr {

inline constexpr double kPmiFloor = -20.0;

/// Song co-occurrence statistics over training lists. Each unordered pair is
/// counted once per playlist that holds both songs; marginals count
/// playlist memberships. Both probabilities use the number of playlists as
/// denominator, so P(k,t) <= min(P(k), P(t)).
class CooccurrenceCounts {
 public:
  CooccurrenceCounts() = default;

  static CooccurrenceCounts from_train(const SplitDataset& split) {
    CooccurrenceCounts c;
    for (const auto& pl : split.playlists) c.add_playlist(pl.train);
    return c;
  }

  void add_playlist(std::span<const SongId> songs) {
    std::vector<SongId> s(songs.begin(), songs.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    s.erase(std::remove(s.begin(), s.end(), kPaddingSong), s.end());
    ++playlists_;
    for (std::size_t i = 0; i < s.size(); ++i) {
      ++single_[s[i]];
      for (std::size_t j = i + 1; j < s.size(); ++j) ++pair_[key(s[i], s[j])];
    }
  }

  std::uint64_t count(SongId k) const {
    auto it = single_.find(k);
    return it == single_.end() ? 0 : it->second;
  }
  std::uint64_t count(SongId k, SongId t) const {
    if (k == t) return count(k);
    auto it = pair_.find(key(k, t));
    return it == pair_.end() ? 0 : it->second;
  }
  std::uint64_t num_playlists() const noexcept { return playlists_; }

 private:
  static std::uint64_t key(SongId a, SongId b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  std::unordered_map<std::uint64_t, std::uint64_t> pair_;
  std::unordered_map<SongId, std::uint64_t> single_;
  std::uint64_t playlists_ = 0;
};

/// log(P(k,t) / (P(k) P(t))). Zero co-count is an error; callers filter.
inline double pmi(SongId k, SongId t, const CooccurrenceCounts& counts) {
  const auto ckt = counts.count(k, t);
  if (ckt == 0) {
    throw Error("config", "songs " + std::to_string(k) + " and " + std::to_string(t) +
                              " never co-occur");
  }
  const double n = static_cast<double>(counts.num_playlists());
  const double pkt = static_cast<double>(ckt) / n;
  const double pk = static_cast<double>(counts.count(k)) / n;
  const double pt = static_cast<double>(counts.count(t)) / n;
  return std::log(pkt / (pk * pt));
}

/// Softmax of raw PMI values.
inline std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw Error("shape", "softmax of an empty list");
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

/// Softmax over PMI(member, target) for each member; members that never
/// co-occur with the target get `floor` instead.
inline std::vector<double> pmi_attention_scores(std::span<const SongId> members, SongId target,
                                                const CooccurrenceCounts& counts,
                                                double floor = kPmiFloor) {
  if (members.empty()) throw Error("shape", "empty member list");
  std::vector<double> values;
  values.reserve(members.size());
  for (SongId m : members) {
    values.push_back(counts.count(m, target) == 0 ? floor : pmi(m, target, counts));
  }
  return softmax(values);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("shape", "pearson: lists differ in length");
  if (x.size() < 2) throw Error("shape", "pearson needs at least 2 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct AttentionPair {
  PlaylistIndex playlist = 0;
  SongId member = kPaddingSong;
  double pmi_att = 0.0;
  double model_att = 0.0;
};

struct AttentionReport {
  std::vector<AttentionPair> pairs;
  double rho = 0.0;
  std::size_t num_playlists = 0;
};

/// Pairs each real member's PMI attentive score (against the playlist's test
/// song) with the model's attention weight for the same context, then
/// correlates the two over all pairs.
inline AttentionReport attention_correlation(const Model& model, const SplitDataset& split,
                                             const CooccurrenceCounts& counts,
                                             double floor = kPmiFloor) {
  if (model.spec().kind != ModelKind::mass) {
    throw Error("config", "attention report needs a MASS-family checkpoint");
  }
  AttentionReport rep;
  for (PlaylistIndex p = 0; p < split.playlists.size(); ++p) {
    const auto& pl = split.playlists[p];
    if (pl.test == kPaddingSong || pl.train.empty()) continue;
    const auto members = pad_members(pl.train, split.max_train_len);
    ScoreContext ctx{pl.user, p, members.ids, members.real_count, pl.test};
    const auto model_att = model.attention(ctx);
    const auto pmi_att = pmi_attention_scores(pl.train, pl.test, counts, floor);
    for (std::size_t t = 0; t < pl.train.size(); ++t) {
      rep.pairs.push_back({p, pl.train[t], pmi_att[t], model_att[t]});
    }
    ++rep.num_playlists;
  }
  if (rep.pairs.size() < 2) throw Error("shape", "fewer than 2 attention pairs");
  std::vector<double> x, y;
  x.reserve(rep.pairs.size());
  y.reserve(rep.pairs.size());
  for (const auto& a : rep.pairs) {
    x.push_back(a.pmi_att);
    y.push_back(a.model_att);
  }
  rep.rho = pearson(x, y);
  return rep;
}

/// Writes the scatter data; song columns hold external ids when a catalog is
/// given.
inline void write_attention_csv(std::ostream& out, const AttentionReport& rep,
                                const Catalog* catalog = nullptr) {
  out << "playlist,member,pmi_att,model_att\n";
  out.precision(17);
  for (const auto& a : rep.pairs) {
    if (catalog) {
      out << catalog->playlist_id(a.playlist) << ',' << catalog->song_id(a.member);
    } else {
      out << a.playlist << ',' << a.member;
    }
    out << ',' << a.pmi_att << ',' << a.model_att << '\n';
  }
}

struct RuntimeSummary {
  std::size_t epochs = 0;
  double mean_seconds = 0.0;
};

inline RuntimeSummary runtime_report(std::span<const double> epoch_seconds) {
  if (epoch_seconds.empty()) throw Error("config", "empty training log");
  double sum = 0.0;
  for (double s : epoch_seconds) sum += s;
  return {epoch_seconds.size(), sum / static_cast<double>(epoch_seconds.size())};
}

/// Mean epoch time at the larger corpus over the mean at the smaller one.
inline double runtime_ratio(std::span<const double> small_log, std::span<const double> large_log) {
  const auto a = runtime_report(small_log);
  const auto b = runtime_report(large_log);
  if (a.mean_seconds <= 0.0) throw Error("config", "non-positive baseline epoch time");
  return b.mean_seconds / a.mean_seconds;
}

}  // namespace masr
