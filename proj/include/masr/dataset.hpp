#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "masr/error.hpp"
#include "masr/rng.hpp"

namespace masr {

using UserIndex = std::uint32_t;
using PlaylistIndex = std::uint32_t;
// Song indices are 1-based; 0 is the padding slot.
using SongId = std::uint32_t;
inline constexpr SongId kPaddingSong = 0;

struct InteractionRecord {
  std::string user;
  std::string playlist;
  std::string song;

  bool operator==(const InteractionRecord&) const = default;
};

/// Parses `user<TAB>playlist<TAB>song` lines, dropping repeated
/// (playlist, song) pairs after their first occurrence.
inline std::vector<InteractionRecord> parse_interactions(std::istream& in,
                                                         std::string_view source = "<input>") {
  std::vector<InteractionRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw Error("format", std::string(source) + ":" + std::to_string(line_no) +
                                ": expected 3 tab-separated fields, got " +
                                std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) {
        throw Error("format",
                    std::string(source) + ":" + std::to_string(line_no) + ": empty field");
      }
    }
    std::string key = fields[1];
    key.push_back('\x1f');
    key += fields[2];
    if (!seen.insert(std::move(key)).second) continue;
    records.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  if (records.empty()) {
    throw Error("format", std::string(source) + ": no interactions");
  }
  return records;
}

inline std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  return parse_interactions(in, path.string());
}

/// Drops users owning more than `max_playlists_per_user` playlists and
/// playlists holding more than `max_songs_per_playlist` songs. A cap of 0
/// disables that filter.
inline std::vector<InteractionRecord> apply_size_caps(const std::vector<InteractionRecord>& records,
                                                      std::size_t max_playlists_per_user,
                                                      std::size_t max_songs_per_playlist) {
  std::unordered_map<std::string, std::unordered_set<std::string>> playlists_of_user;
  std::unordered_map<std::string, std::size_t> songs_in_playlist;
  for (const auto& r : records) {
    playlists_of_user[r.user].insert(r.playlist);
    ++songs_in_playlist[r.playlist];
  }
  std::vector<InteractionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (max_playlists_per_user != 0 && playlists_of_user[r.user].size() > max_playlists_per_user) {
      continue;
    }
    if (max_songs_per_playlist != 0 && songs_in_playlist[r.playlist] > max_songs_per_playlist) {
      continue;
    }
    out.push_back(r);
  }
  return out;
}

/// Single-pass playlist filter: keeps playlists with at least `k` distinct
/// songs. Users and songs are not filtered.
inline std::vector<InteractionRecord> k_core_filter(const std::vector<InteractionRecord>& records,
                                                    std::size_t k) {
  if (k < 1) throw Error("config", "k must be >= 1");
  std::unordered_map<std::string, std::unordered_set<std::string>> songs;
  for (const auto& r : records) songs[r.playlist].insert(r.song);
  std::vector<InteractionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (songs[r.playlist].size() >= k) out.push_back(r);
  }
  return out;
}

// Bidirectional external-id <-> dense-index maps. Indices follow first
// appearance, so identical record lists give identical catalogs.
class Catalog {
 public:
  static Catalog build(const std::vector<InteractionRecord>& records) {
    Catalog c;
    for (const auto& r : records) {
      const UserIndex u = c.intern(c.users_, c.user_index_, r.user);
      const auto before = c.playlists_.size();
      const PlaylistIndex p = c.intern(c.playlists_, c.playlist_index_, r.playlist);
      if (c.playlists_.size() != before) {
        c.owner_.push_back(u);
      } else if (c.owner_[p] != u) {
        throw Error("format", "playlist '" + r.playlist + "' has more than one owner ('" +
                                  c.users_[c.owner_[p]] + "', '" + r.user + "')");
      }
      c.intern(c.songs_, c.song_index_, r.song);
    }
    return c;
  }

  // Rebuilds a catalog from stored id lists, in index order.
  static Catalog from_lists(std::vector<std::string> users, std::vector<std::string> playlists,
                            std::vector<std::string> songs, std::vector<UserIndex> owners) {
    if (owners.size() != playlists.size()) {
      throw Error("format", "catalog: owner list length differs from playlist list");
    }
    Catalog c;
    for (auto& u : users) c.intern(c.users_, c.user_index_, u);
    for (auto& p : playlists) c.intern(c.playlists_, c.playlist_index_, p);
    for (auto& s : songs) c.intern(c.songs_, c.song_index_, s);
    if (c.users_.size() != users.size() || c.playlists_.size() != playlists.size() ||
        c.songs_.size() != songs.size()) {
      throw Error("format", "catalog: duplicate ids");
    }
    for (auto o : owners) {
      if (o >= c.users_.size()) throw Error("format", "catalog: owner index out of range");
    }
    c.owner_ = std::move(owners);
    return c;
  }

  std::size_t num_users() const noexcept { return users_.size(); }
  std::size_t num_playlists() const noexcept { return playlists_.size(); }
  // Real songs; song indices run 1..num_songs().
  std::size_t num_songs() const noexcept { return songs_.size(); }

  const std::string& user_id(UserIndex u) const { return users_.at(u); }
  const std::string& playlist_id(PlaylistIndex p) const { return playlists_.at(p); }
  const std::string& song_id(SongId s) const {
    if (s == kPaddingSong) throw Error("shape", "song index 0 is the padding slot");
    return songs_.at(s - 1);
  }
  UserIndex owner(PlaylistIndex p) const { return owner_.at(p); }

  std::optional<UserIndex> find_user(std::string_view id) const {
    return lookup(user_index_, id);
  }
  std::optional<PlaylistIndex> find_playlist(std::string_view id) const {
    return lookup(playlist_index_, id);
  }
  std::optional<SongId> find_song(std::string_view id) const {
    auto i = lookup(song_index_, id);
    if (!i) return std::nullopt;
    return *i + 1;
  }

  const std::vector<std::string>& users() const noexcept { return users_; }
  const std::vector<std::string>& playlists() const noexcept { return playlists_; }
  const std::vector<std::string>& songs() const noexcept { return songs_; }
  const std::vector<UserIndex>& owners() const noexcept { return owner_; }

 private:
  using Index = std::unordered_map<std::string, std::uint32_t>;

  static std::uint32_t intern(std::vector<std::string>& ids, Index& index, const std::string& id) {
    auto [it, inserted] = index.try_emplace(id, static_cast<std::uint32_t>(ids.size()));
    if (inserted) ids.push_back(id);
    return it->second;
  }

  static std::optional<std::uint32_t> lookup(const Index& index, std::string_view id) {
    auto it = index.find(std::string(id));
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> users_, playlists_, songs_;
  std::vector<UserIndex> owner_;
  Index user_index_, playlist_index_, song_index_;
};

struct PlaylistSplit {
  UserIndex user = 0;
  std::vector<SongId> train;
  // kPaddingSong when the playlist has no held-out song of that kind.
  SongId dev = kPaddingSong;
  SongId test = kPaddingSong;
};

// Train/dev/test partition in dense indices.
struct SplitDataset {
  std::size_t num_users = 0;
  std::size_t num_playlists = 0;
  std::size_t num_songs = 0;
  std::vector<PlaylistSplit> playlists;
  // Longest train list; MASS member lists are padded to this length.
  std::size_t max_train_len = 0;

  // Sorted train + dev + test songs of playlist p.
  std::vector<SongId> full_set(PlaylistIndex p) const {
    const auto& pl = playlists.at(p);
    std::vector<SongId> s = pl.train;
    if (pl.dev != kPaddingSong) s.push_back(pl.dev);
    if (pl.test != kPaddingSong) s.push_back(pl.test);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  }

  std::size_t num_train_instances() const noexcept {
    std::size_t n = 0;
    for (const auto& p : playlists) n += p.train.size();
    return n;
  }

  void recompute_max_len() noexcept {
    max_train_len = 0;
    for (const auto& p : playlists) max_train_len = std::max(max_train_len, p.train.size());
  }

  // Throws on any broken partition invariant.
  void validate() const {
    if (playlists.size() != num_playlists) throw Error("format", "split: playlist count mismatch");
    std::size_t longest = 0;
    for (std::size_t p = 0; p < playlists.size(); ++p) {
      const auto& pl = playlists[p];
      const std::string where = "split: playlist " + std::to_string(p);
      if (pl.user >= num_users) throw Error("format", where + ": user out of range");
      if (pl.train.empty()) throw Error("format", where + ": empty train list");
      std::vector<SongId> sorted = pl.train;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw Error("format", where + ": duplicate train song");
      }
      for (SongId s : sorted) {
        if (s == kPaddingSong || s > num_songs) throw Error("format", where + ": song out of range");
      }
      for (SongId held : {pl.dev, pl.test}) {
        if (held == kPaddingSong) continue;
        if (held > num_songs) throw Error("format", where + ": held-out song out of range");
        if (std::binary_search(sorted.begin(), sorted.end(), held)) {
          throw Error("format", where + ": held-out song also in train");
        }
      }
      if (pl.dev != kPaddingSong && pl.dev == pl.test) {
        throw Error("format", where + ": dev and test songs coincide");
      }
      longest = std::max(longest, pl.train.size());
    }
    if (longest != max_train_len) throw Error("format", "split: max_train_len is stale");
  }
};

struct PreparedData {
  Catalog catalog;
  SplitDataset split;
};

/// Holds out two distinct songs per playlist, drawn uniformly without
/// replacement: the first is the test song, the second the dev song. The rest
/// keep their file order as the train list.
inline PreparedData leave_one_out_split(const std::vector<InteractionRecord>& records,
                                        std::uint64_t seed) {
  PreparedData out{Catalog::build(records), {}};
  const Catalog& cat = out.catalog;
  SplitDataset& split = out.split;
  split.num_users = cat.num_users();
  split.num_playlists = cat.num_playlists();
  split.num_songs = cat.num_songs();

  std::vector<std::vector<SongId>> songs(cat.num_playlists());
  for (const auto& r : records) {
    songs[*cat.find_playlist(r.playlist)].push_back(*cat.find_song(r.song));
  }

  Rng rng = make_stream(seed, StreamTag::split);
  split.playlists.resize(cat.num_playlists());
  for (PlaylistIndex p = 0; p < cat.num_playlists(); ++p) {
    auto& list = songs[p];
    if (list.size() < 3) {
      throw Error("format", "playlist '" + cat.playlist_id(p) + "' has " +
                                std::to_string(list.size()) +
                                " songs; leave-one-out needs at least 3");
    }
    std::uniform_int_distribution<std::size_t> first(0, list.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, list.size() - 2);
    const std::size_t test_pos = first(rng);
    std::size_t dev_pos = second(rng);
    if (dev_pos >= test_pos) ++dev_pos;

    auto& pl = split.playlists[p];
    pl.user = cat.owner(p);
    pl.test = list[test_pos];
    pl.dev = list[dev_pos];
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i != test_pos && i != dev_pos) pl.train.push_back(list[i]);
    }
  }
  split.recompute_max_len();
  return out;
}

/// Draws `count` distinct songs uniformly from 1..num_songs minus `exclude`
/// (sorted, distinct). Never returns the padding index.
inline std::vector<SongId> sample_negatives(std::span<const SongId> exclude, std::size_t num_songs,
                                            std::size_t count, Rng& rng) {
  std::size_t excluded = 0;
  for (SongId s : exclude) {
    if (s != kPaddingSong && s <= num_songs) ++excluded;
  }
  const std::size_t pool = num_songs - excluded;
  if (pool < count) {
    throw Error("sampling", "negative pool has " + std::to_string(pool) + " songs, need " +
                                std::to_string(count));
  }
  std::vector<SongId> out;
  out.reserve(count);
  if (count == 0) return out;

  auto is_excluded = [&](SongId s) {
    return std::binary_search(exclude.begin(), exclude.end(), s);
  };

  if (2 * count >= pool) {
    std::vector<SongId> candidates;
    candidates.reserve(pool);
    for (SongId s = 1; s <= num_songs; ++s) {
      if (!is_excluded(s)) candidates.push_back(s);
    }
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
      std::swap(candidates[i], candidates[pick(rng)]);
      out.push_back(candidates[i]);
    }
    return out;
  }

  std::uniform_int_distribution<SongId> pick(1, static_cast<SongId>(num_songs));
  while (out.size() < count) {
    const SongId s = pick(rng);
    if (is_excluded(s)) continue;
    if (std::find(out.begin(), out.end(), s) != out.end()) continue;
    out.push_back(s);
  }
  return out;
}

struct PaddedMembers {
  std::vector<SongId> ids;  // length l, zeros after the real members
  std::size_t real_count = 0;
};

inline PaddedMembers pad_members(std::span<const SongId> members, std::size_t l) {
  if (members.size() > l) {
    throw Error("shape", "member list has " + std::to_string(members.size()) +
                             " songs, exceeds padded length " + std::to_string(l));
  }
  PaddedMembers out{std::vector<SongId>(l, kPaddingSong), members.size()};
  std::copy(members.begin(), members.end(), out.ids.begin());
  return out;
}

}  // namespace masr
