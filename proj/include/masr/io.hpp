#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/model.hpp"
#include "masr/tensor.hpp"
#include "masr/training.hpp"

namespace masr {

using Json = nlohmann::json;

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("format", path.string() + ": " + e.what());
  }
}

// Compact, sorted keys, trailing newline. Byte-stable for equal content.
inline void write_json(const std::filesystem::path& path, const Json& j, int indent = -1) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw Error("io", "write failed for " + path.string());
}

template <class T>
T json_get(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error("format", where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error("format", where + ": field '" + key + "': " + e.what());
  }
}

// ----- prepared data ------------------------------------------------------

inline constexpr const char* kCatalogFile = "catalog.json";
inline constexpr const char* kSplitFile = "split.json";

struct PrepareMeta {
  std::uint64_t seed = 0;
  std::size_t k = 5;
  std::size_t max_playlists_per_user = 100;
  std::size_t max_songs_per_playlist = 63;
};

inline Json catalog_to_json(const Catalog& cat, const PrepareMeta& meta) {
  Json playlists = Json::array();
  for (PlaylistIndex p = 0; p < cat.num_playlists(); ++p) {
    playlists.push_back({{"id", cat.playlist_id(p)}, {"user", cat.user_id(cat.owner(p))}});
  }
  return {{"users", cat.users()},
          {"playlists", std::move(playlists)},
          {"songs", cat.songs()},
          {"counts",
           {{"users", cat.num_users()},
            {"playlists", cat.num_playlists()},
            {"songs", cat.num_songs()}}},
          {"seed", meta.seed},
          {"k", meta.k},
          {"max_playlists_per_user", meta.max_playlists_per_user},
          {"max_songs_per_playlist", meta.max_songs_per_playlist}};
}

inline Catalog catalog_from_json(const Json& j) {
  const std::string where = "catalog";
  auto users = json_get<std::vector<std::string>>(j, "users", where);
  auto songs = json_get<std::vector<std::string>>(j, "songs", where);
  std::unordered_map<std::string, UserIndex> user_index;
  for (UserIndex u = 0; u < users.size(); ++u) user_index.emplace(users[u], u);
  std::vector<std::string> playlists;
  std::vector<UserIndex> owners;
  for (const auto& p : json_get<Json>(j, "playlists", where)) {
    playlists.push_back(json_get<std::string>(p, "id", where + " playlist"));
    const auto owner = json_get<std::string>(p, "user", where + " playlist");
    auto it = user_index.find(owner);
    if (it == user_index.end()) throw Error("format", where + ": unknown owner '" + owner + "'");
    owners.push_back(it->second);
  }
  return Catalog::from_lists(std::move(users), std::move(playlists), std::move(songs),
                             std::move(owners));
}

// {playlist_id: {train: [song ids], dev: song id, test: song id}}
inline Json split_to_json(const Catalog& cat, const SplitDataset& split) {
  Json j = Json::object();
  for (PlaylistIndex p = 0; p < split.playlists.size(); ++p) {
    const auto& pl = split.playlists[p];
    Json train = Json::array();
    for (SongId s : pl.train) train.push_back(cat.song_id(s));
    j[cat.playlist_id(p)] = {
        {"train", std::move(train)}, {"dev", cat.song_id(pl.dev)}, {"test", cat.song_id(pl.test)}};
  }
  return j;
}

inline SplitDataset split_from_json(const Json& j, const Catalog& cat) {
  if (!j.is_object()) throw Error("format", "split manifest must be an object");
  if (j.size() != cat.num_playlists()) {
    throw Error("format", "split manifest lists " + std::to_string(j.size()) +
                              " playlists, catalog has " + std::to_string(cat.num_playlists()));
  }
  auto song = [&](const std::string& id, const std::string& where) {
    auto s = cat.find_song(id);
    if (!s) throw Error("format", where + ": unknown song '" + id + "'");
    return *s;
  };
  SplitDataset split;
  split.num_users = cat.num_users();
  split.num_playlists = cat.num_playlists();
  split.num_songs = cat.num_songs();
  split.playlists.resize(cat.num_playlists());
  for (PlaylistIndex p = 0; p < cat.num_playlists(); ++p) {
    const std::string& id = cat.playlist_id(p);
    const std::string where = "split playlist '" + id + "'";
    if (!j.contains(id)) throw Error("format", where + " missing");
    const Json& e = j.at(id);
    auto& pl = split.playlists[p];
    pl.user = cat.owner(p);
    for (const auto& s : json_get<std::vector<std::string>>(e, "train", where)) {
      pl.train.push_back(song(s, where));
    }
    pl.dev = song(json_get<std::string>(e, "dev", where), where);
    pl.test = song(json_get<std::string>(e, "test", where), where);
  }
  split.recompute_max_len();
  split.validate();
  return split;
}

inline void write_prepared(const std::filesystem::path& dir, const PreparedData& data,
                           const PrepareMeta& meta) {
  write_json(dir / kCatalogFile, catalog_to_json(data.catalog, meta));
  write_json(dir / kSplitFile, split_to_json(data.catalog, data.split));
}

inline PreparedData read_prepared(const std::filesystem::path& dir) {
  PreparedData d{catalog_from_json(read_json(dir / kCatalogFile)), {}};
  d.split = split_from_json(read_json(dir / kSplitFile), d.catalog);
  return d;
}

// ----- checkpoints --------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "masr-checkpoint";
inline constexpr const char* kFusionFormat = "masr-fusion";

inline Json spec_to_json(const ModelSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"variant", to_string(s.variant)},
          {"attention", to_string(s.attention)},
          {"use_bias", s.use_bias},
          {"dim", s.dim},
          {"num_users", s.num_users},
          {"num_playlists", s.num_playlists},
          {"num_songs", s.num_songs},
          {"max_members", s.max_members}};
}

inline ModelSpec spec_from_json(const Json& j) {
  const std::string w = "checkpoint model";
  ModelSpec s;
  s.kind = parse_model_kind(json_get<std::string>(j, "kind", w));
  s.variant = parse_variant(json_get<std::string>(j, "variant", w));
  s.attention = parse_attention(json_get<std::string>(j, "attention", w));
  s.use_bias = json_get<bool>(j, "use_bias", w);
  s.dim = json_get<std::size_t>(j, "dim", w);
  s.num_users = json_get<std::size_t>(j, "num_users", w);
  s.num_playlists = json_get<std::size_t>(j, "num_playlists", w);
  s.num_songs = json_get<std::size_t>(j, "num_songs", w);
  s.max_members = json_get<std::size_t>(j, "max_members", w);
  return s;
}

inline Json hyper_to_json(const Hyperparams& h) {
  return {{"learning_rate", h.learning_rate},
          {"lambda_theta", h.lambda_theta},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"negatives_per_positive", h.negatives},
          {"epsilon", h.epsilon},
          {"lambda_delta", h.lambda_delta},
          {"apr_epochs", h.apr_epochs},
          {"apr_perturb", h.perturb_all ? "all" : "embeddings"},
          {"seed", h.seed},
          {"eval_negatives", h.eval_negatives}};
}

inline Hyperparams hyper_from_json(const Json& j) {
  const std::string w = "checkpoint hyperparams";
  Hyperparams h;
  h.learning_rate = json_get<double>(j, "learning_rate", w);
  h.lambda_theta = json_get<double>(j, "lambda_theta", w);
  h.epochs = json_get<std::size_t>(j, "epochs", w);
  h.batch_size = json_get<std::size_t>(j, "batch_size", w);
  h.negatives = json_get<std::size_t>(j, "negatives_per_positive", w);
  h.epsilon = json_get<double>(j, "epsilon", w);
  h.lambda_delta = json_get<double>(j, "lambda_delta", w);
  h.apr_epochs = json_get<std::size_t>(j, "apr_epochs", w);
  h.perturb_all = json_get<std::string>(j, "apr_perturb", w) == "all";
  h.seed = json_get<std::uint64_t>(j, "seed", w);
  h.eval_negatives = json_get<std::size_t>(j, "eval_negatives", w);
  return h;
}

struct Checkpoint {
  Model model;
  Hyperparams hyper;
  Json meta = Json::object();  // free-form: split dir, best epoch, dev metrics
};

inline Json checkpoint_to_json(const Checkpoint& c) {
  Json params = Json::object();
  for (const auto& t : c.model.params()) {
    params[t.name] = {{"shape", {t.rows, t.cols}}, {"values", t.values}};
  }
  return {{"format", kCheckpointFormat},
          {"version", 1},
          {"model", spec_to_json(c.model.spec())},
          {"hyperparams", hyper_to_json(c.hyper)},
          {"seed", c.hyper.seed},
          {"params", std::move(params)},
          {"meta", c.meta}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  const std::string w = "checkpoint";
  if (json_get<std::string>(j, "format", w) != kCheckpointFormat) {
    throw Error("format", "not a model checkpoint (format '" +
                              json_get<std::string>(j, "format", w) + "')");
  }
  const ModelSpec spec = spec_from_json(json_get<Json>(j, "model", w));
  ParamSet params = Model::make_layout(spec);
  const Json& pj = json_get<Json>(j, "params", w);
  if (pj.size() != params.size()) {
    throw Error("format", "checkpoint holds " + std::to_string(pj.size()) + " tensors, model needs " +
                              std::to_string(params.size()));
  }
  for (auto& t : params) {
    const std::string tw = "checkpoint tensor '" + t.name + "'";
    if (!pj.contains(t.name)) throw Error("format", tw + " missing");
    const Json& e = pj.at(t.name);
    const auto shape = json_get<std::vector<std::size_t>>(e, "shape", tw);
    if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols) {
      throw Error("format", tw + " has the wrong shape");
    }
    auto values = json_get<std::vector<double>>(e, "values", tw);
    if (values.size() != t.size()) throw Error("format", tw + " has the wrong value count");
    t.values = std::move(values);
  }
  Checkpoint c{Model(spec, std::move(params)), hyper_from_json(json_get<Json>(j, "hyperparams", w)),
               j.contains("meta") ? j.at("meta") : Json::object()};
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_json(path, checkpoint_to_json(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json(path));
}

struct FusionManifest {
  double alpha = 0.5;
  std::string mdr;   // checkpoint paths as written
  std::string mass;
};

inline Json fusion_to_json(const FusionManifest& f) {
  return {{"format", kFusionFormat}, {"alpha", f.alpha}, {"mdr", f.mdr}, {"mass", f.mass}};
}

inline FusionManifest fusion_from_json(const Json& j) {
  const std::string w = "fusion manifest";
  if (json_get<std::string>(j, "format", w) != kFusionFormat) {
    throw Error("format", "not a fusion manifest");
  }
  return {json_get<double>(j, "alpha", w), json_get<std::string>(j, "mdr", w),
          json_get<std::string>(j, "mass", w)};
}

}  // namespace masr
