#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "masr/analysis.hpp"
#include "masr/config.hpp"
#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/eval.hpp"
#include "masr/io.hpp"
#include "masr/model.hpp"
#include "masr/training.hpp"

namespace masr {

namespace fs = std::filesystem;

// ----- prepare ------------------------------------------------------------

struct PrepareOptions {
  fs::path input;
  fs::path out;
  PrepareMeta meta;
};

inline Json cmd_prepare(const PrepareOptions& opt) {
  auto records = load_interactions(opt.input);
  records = apply_size_caps(records, opt.meta.max_playlists_per_user,
                            opt.meta.max_songs_per_playlist);
  records = k_core_filter(records, opt.meta.k);
  if (records.empty()) throw Error("config", "no playlists survive filtering");
  const PreparedData data = leave_one_out_split(records, opt.meta.seed);
  write_prepared(opt.out, data, opt.meta);
  return {{"users", data.catalog.num_users()},
          {"playlists", data.catalog.num_playlists()},
          {"songs", data.catalog.num_songs()},
          {"max_train_len", data.split.max_train_len},
          {"out", opt.out.string()}};
}

// ----- loading models ------------------------------------------------------

/// A single checkpoint or a frozen MDR+MASS fusion, scored uniformly.
struct LoadedModel {
  std::optional<Checkpoint> single;
  std::optional<FusionModel> fusion;
  std::uint64_t seed = 0;
  Json meta = Json::object();

  double score(const ScoreContext& ctx) const {
    return fusion ? fusion->score(ctx) : single->model.score(ctx);
  }

  std::string model_name() const {
    return fusion ? "masr" : std::string(to_string(single->model.spec().kind));
  }

  Json describe() const {
    Json j;
    j["model"] = model_name();
    if (fusion) {
      j["variant"] = std::string(to_string(fusion->mdr().spec().variant)) + "+" +
                     std::string(to_string(fusion->mass().spec().variant));
      j["attention"] = to_string(fusion->mass().spec().attention);
      j["alpha"] = fusion->alpha();
    } else {
      j["variant"] = to_string(single->model.spec().variant);
      if (single->model.spec().kind == ModelKind::mass) {
        j["attention"] = to_string(single->model.spec().attention);
      }
    }
    return j;
  }

  // The MASS component attention is read from.
  const Model& mass_model() const {
    if (fusion) return fusion->mass();
    if (single->model.spec().kind != ModelKind::mass) {
      throw Error("config", "attention report needs a MASS-family checkpoint");
    }
    return single->model;
  }
};

inline fs::path resolve_relative(const fs::path& p, const fs::path& base_dir) {
  if (p.is_absolute() || fs::exists(p)) return p;
  const fs::path alt = base_dir / p;
  return fs::exists(alt) ? alt : p;
}

inline LoadedModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw Error("io", "checkpoint not found: " + path.string());
  const Json j = read_json(path);
  LoadedModel out;
  if (j.is_object() && j.value("format", "") == kFusionFormat) {
    const FusionManifest f = fusion_from_json(j);
    const fs::path base = path.parent_path();
    Checkpoint mdr = load_checkpoint(resolve_relative(f.mdr, base));
    Checkpoint mass = load_checkpoint(resolve_relative(f.mass, base));
    out.seed = mdr.hyper.seed;
    out.meta = mdr.meta;
    out.fusion.emplace(std::move(mdr.model), std::move(mass.model), f.alpha);
  } else {
    out.single = checkpoint_from_json(j);
    out.seed = out.single->hyper.seed;
    out.meta = out.single->meta;
  }
  return out;
}

inline void check_compatible(const ModelSpec& s, const SplitDataset& split, const std::string& what) {
  if (s.num_users != split.num_users || s.num_playlists != split.num_playlists ||
      s.num_songs != split.num_songs) {
    throw Error("shape", what + " was trained on a different catalog");
  }
}

inline void check_compatible(const LoadedModel& m, const SplitDataset& split) {
  if (m.fusion) {
    check_compatible(m.fusion->mdr().spec(), split, "MDR checkpoint");
    check_compatible(m.fusion->mass().spec(), split, "MASS checkpoint");
  } else {
    check_compatible(m.single->model.spec(), split, "checkpoint");
  }
}

// ----- train --------------------------------------------------------------

inline ModelSpec spec_for(const RunConfig& cfg, ModelKind kind, const SplitDataset& split) {
  ModelSpec s;
  s.kind = kind;
  s.variant = kind == ModelKind::mdr ? cfg.mdr_variant : cfg.mass_variant;
  s.attention = cfg.attention;
  s.use_bias = cfg.use_bias;
  s.dim = cfg.dim;
  s.num_users = split.num_users;
  s.num_playlists = split.num_playlists;
  s.num_songs = split.num_songs;
  s.max_members = split.max_train_len;
  return s;
}

inline void write_training_log(const fs::path& path, const std::vector<EpochRecord>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  for (const auto& r : log) {
    out << Json{{"epoch", r.epoch},
                {"train_loss", r.train_loss},
                {"dev_hit10", r.dev_hit10},
                {"dev_ndcg10", r.dev_ndcg10},
                {"seconds", r.seconds}}
               .dump()
        << '\n';
  }
}

inline Json result_meta(const RunConfig& cfg, const TrainResult& r, const char* objective) {
  return {{"split", cfg.split},
          {"objective", objective},
          {"best_epoch", r.best_epoch},
          {"best_dev_hit10", r.best_dev_hit10},
          {"best_dev_ndcg10", r.best_dev_ndcg10}};
}

/// Trains per `cfg` and writes model.json plus train_log.jsonl under
/// cfg.out. With `apr`, Step 1 either loads cfg.pretrained or trains BPR
/// (saved as bpr.json), then adversarial training produces model.json.
/// model = masr writes the fusion manifest masr.json instead.
inline Json cmd_train(const RunConfig& cfg, bool apr, const TrainOptions& topt = {}) {
  validate_for_training(cfg);
  const fs::path out = cfg.out;
  const PreparedData data = read_prepared(cfg.split);
  const SplitDataset& split = data.split;

  if (cfg.model == PipelineModel::masr) {
    for (const auto* p : {&cfg.mdr_checkpoint, &cfg.mass_checkpoint}) {
      if (!fs::exists(*p)) throw Error("io", "checkpoint not found: " + *p);
    }
    Checkpoint mdr = load_checkpoint(cfg.mdr_checkpoint);
    Checkpoint mass = load_checkpoint(cfg.mass_checkpoint);
    check_compatible(mdr.model.spec(), split, "MDR checkpoint");
    check_compatible(mass.model.spec(), split, "MASS checkpoint");
    FusionModel probe(std::move(mdr.model), std::move(mass.model), cfg.alpha);
    const FusionManifest f{cfg.alpha, fs::absolute(cfg.mdr_checkpoint).lexically_normal().string(),
                           fs::absolute(cfg.mass_checkpoint).lexically_normal().string()};
    write_json(out / "masr.json", fusion_to_json(f));
    return {{"checkpoint", (out / "masr.json").string()}, {"model", "masr"}};
  }

  const ModelKind kind = cfg.model == PipelineModel::mdr ? ModelKind::mdr : ModelKind::mass;
  const ModelSpec spec = spec_for(cfg, kind, split);

  Model start = Model::create(spec, cfg.hyper.seed);
  if (apr) {
    if (!cfg.pretrained.empty()) {
      if (!fs::exists(cfg.pretrained)) {
        throw Error("io", "pretrained checkpoint not found: " + cfg.pretrained);
      }
      Checkpoint pre = load_checkpoint(cfg.pretrained);
      if (!(pre.model.spec() == spec)) {
        throw Error("config", "pretrained checkpoint does not match the configured model");
      }
      start = std::move(pre.model);
    } else {
      TrainResult bpr = train_bpr(std::move(start), split, cfg.hyper, topt);
      save_checkpoint(out / "bpr.json", {bpr.best, cfg.hyper, result_meta(cfg, bpr, "bpr")});
      write_training_log(out / "bpr_log.jsonl", bpr.log);
      start = std::move(bpr.best);
    }
    TrainResult res = apr_train(start, split, cfg.hyper, topt);
    save_checkpoint(out / "model.json", {res.best, cfg.hyper, result_meta(cfg, res, "apr")});
    write_training_log(out / "train_log.jsonl", res.log);
    return {{"checkpoint", (out / "model.json").string()},
            {"best_epoch", res.best_epoch},
            {"best_dev_hit10", res.best_dev_hit10}};
  }

  TrainResult res = train_bpr(std::move(start), split, cfg.hyper, topt);
  save_checkpoint(out / "model.json", {res.best, cfg.hyper, result_meta(cfg, res, "bpr")});
  write_training_log(out / "train_log.jsonl", res.log);
  return {{"checkpoint", (out / "model.json").string()},
          {"best_epoch", res.best_epoch},
          {"best_dev_hit10", res.best_dev_hit10}};
}

// ----- evaluate -----------------------------------------------------------

struct EvaluateOptions {
  fs::path checkpoint;
  fs::path split;
  fs::path out;
  std::vector<std::size_t> ns = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::optional<std::uint64_t> seed;  // defaults to the checkpoint's seed
  std::size_t num_negatives = 100;
  std::size_t threads = 0;
};

inline Json metrics_json(const LoadedModel& m, const EvalResult& r, std::uint64_t seed) {
  Json j = m.describe();
  Json per_n = Json::object();
  for (const auto& x : r.metrics) per_n[std::to_string(x.n)] = {{"hit", x.hit}, {"ndcg", x.ndcg}};
  j["N"] = std::move(per_n);
  j["num_playlists"] = r.num_playlists;
  j["seed"] = seed;
  return j;
}

/// Test-set hit@N / NDCG@N written to <out>/metrics.json.
inline Json cmd_evaluate(const EvaluateOptions& opt) {
  const LoadedModel m = load_model(opt.checkpoint);
  const PreparedData data = read_prepared(opt.split);
  check_compatible(m, data.split);
  const std::uint64_t seed = opt.seed.value_or(m.seed);
  const EvalResult r = evaluate(m, data.split, opt.ns, seed, EvalTarget::test, opt.num_negatives,
                                opt.threads);
  Json j = metrics_json(m, r, seed);
  write_json(opt.out / "metrics.json", j);
  return j;
}

// ----- recommend ----------------------------------------------------------

struct RecommendOptions {
  fs::path checkpoint;
  std::optional<fs::path> split;  // defaults to the split recorded at training
  std::string playlist;
  std::size_t top = 10;
  std::optional<fs::path> out;
};

/// Top-N songs for one playlist, excluding its train members, ascending by
/// score (ties by song index).
inline Json cmd_recommend(const RecommendOptions& opt) {
  if (opt.top == 0) throw Error("config", "--top must be >= 1");
  const LoadedModel m = load_model(opt.checkpoint);
  fs::path split_dir;
  if (opt.split) {
    split_dir = *opt.split;
  } else if (m.meta.contains("split")) {
    split_dir = m.meta.at("split").get<std::string>();
  } else {
    throw Error("config", "no --split given and the checkpoint records none");
  }
  const PreparedData data = read_prepared(split_dir);
  check_compatible(m, data.split);
  const auto p = data.catalog.find_playlist(opt.playlist);
  if (!p) throw Error("index", "unknown playlist '" + opt.playlist + "'");
  const auto& pl = data.split.playlists[*p];

  std::vector<SongId> members_sorted = pl.train;
  std::sort(members_sorted.begin(), members_sorted.end());
  const auto members = pad_members(pl.train, data.split.max_train_len);
  ScoreContext ctx{pl.user, *p, members.ids, members.real_count, kPaddingSong};

  std::vector<std::pair<double, SongId>> scored;
  for (SongId s = 1; s <= data.split.num_songs; ++s) {
    if (std::binary_search(members_sorted.begin(), members_sorted.end(), s)) continue;
    ctx.candidate = s;
    scored.emplace_back(m.score(ctx), s);
  }
  const std::size_t n = std::min(opt.top, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end());

  Json recs = Json::array();
  for (std::size_t i = 0; i < n; ++i) {
    recs.push_back({{"rank", i + 1},
                    {"song", data.catalog.song_id(scored[i].second)},
                    {"score", scored[i].first}});
  }
  Json j = {{"playlist", opt.playlist}, {"recommendations", std::move(recs)}};
  if (opt.out) write_json(*opt.out / "recommendations.json", j);
  return j;
}

// ----- attention report ---------------------------------------------------

struct AttentionReportOptions {
  fs::path checkpoint;
  fs::path split;
  fs::path out;
  double pmi_floor = kPmiFloor;
};

/// pmi_att.csv and attention_summary.json under --out.
inline Json cmd_attention_report(const AttentionReportOptions& opt) {
  const LoadedModel m = load_model(opt.checkpoint);
  const PreparedData data = read_prepared(opt.split);
  check_compatible(m, data.split);
  const auto counts = CooccurrenceCounts::from_train(data.split);
  const AttentionReport rep = attention_correlation(m.mass_model(), data.split, counts,
                                                    opt.pmi_floor);
  fs::create_directories(opt.out);
  {
    std::ofstream csv(opt.out / "pmi_att.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw Error("io", "cannot write " + (opt.out / "pmi_att.csv").string());
    write_attention_csv(csv, rep, &data.catalog);
  }
  Json j = {{"rho", rep.rho},
            {"num_pairs", rep.pairs.size()},
            {"num_playlists", rep.num_playlists},
            {"pmi_floor", opt.pmi_floor}};
  write_json(opt.out / "attention_summary.json", j);
  return j;
}

}  // namespace masr
