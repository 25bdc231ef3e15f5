// Command-line front end: prepare, train, evaluate, recommend,
// attention-report. Success prints a JSON summary on stdout; failure prints
// one JSON line on stderr and exits nonzero.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "masr/masr.hpp"

namespace {

// "1..10", "10" or "1,5,10".
std::vector<std::size_t> parse_n_list(const std::string& s) {
  std::vector<std::size_t> out;
  auto num = [&](const std::string& t) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != t.size() || v == 0) throw masr::ConfigError("n", "--n: bad value '" + s + "'");
    return v;
  };
  if (auto dots = s.find(".."); dots != std::string::npos) {
    const auto lo = num(s.substr(0, dots));
    const auto hi = num(s.substr(dots + 2));
    if (hi < lo) throw masr::ConfigError("n", "--n: empty range '" + s + "'");
    for (auto n = lo; n <= hi; ++n) out.push_back(n);
    return out;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    out.push_back(num(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void print_error(const std::string& kind, const std::string& message,
                 const std::string& key = {}) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-learning playlist continuation models (MDR, MASS, MASR)"};
  app.require_subcommand(1);

  masr::PrepareOptions prep;
  std::string prep_input, prep_out;
  auto* c_prepare = app.add_subcommand("prepare", "Filter interactions and write catalog + split");
  c_prepare->add_option("--input", prep_input, "user<TAB>playlist<TAB>song file")->required();
  c_prepare->add_option("--out", prep_out, "Output directory")->required();
  c_prepare->add_option("--k", prep.meta.k, "Minimum songs per playlist")->capture_default_str();
  c_prepare->add_option("--seed", prep.meta.seed, "Split seed")->capture_default_str();
  c_prepare->add_option("--max-playlists-per-user", prep.meta.max_playlists_per_user,
                        "Drop users above this many playlists (0 disables)")
      ->capture_default_str();
  c_prepare->add_option("--max-songs-per-playlist", prep.meta.max_songs_per_playlist,
                        "Drop playlists above this many songs (0 disables)")
      ->capture_default_str();

  std::string train_config, train_split, train_out, train_model;
  std::optional<std::uint64_t> train_seed;
  std::vector<std::string> train_sets;
  bool train_apr = false;
  auto* c_train = app.add_subcommand("train", "Train a model from a key=value config");
  c_train->add_option("--config", train_config, "Config file")->required();
  c_train->add_flag("--apr", train_apr, "BPR pretraining (or 'pretrained') then APR");
  c_train->add_option("--split", train_split, "Overrides config key 'split'");
  c_train->add_option("--out", train_out, "Overrides config key 'out'");
  c_train->add_option("--model", train_model, "Overrides config key 'model'");
  c_train->add_option("--seed", train_seed, "Overrides config key 'seed'");
  c_train->add_option("--set", train_sets, "Extra key=value override (repeatable)");

  masr::EvaluateOptions ev;
  std::string ev_ckpt, ev_split, ev_out = ".", ev_n = "1..10";
  std::optional<std::uint64_t> ev_seed;
  auto* c_eval = app.add_subcommand("evaluate", "Leave-one-out test metrics");
  c_eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint or fusion manifest")->required();
  c_eval->add_option("--split", ev_split, "Prepared data directory")->required();
  c_eval->add_option("--n", ev_n, "Cutoffs: 1..10, 10 or 1,5,10")->capture_default_str();
  c_eval->add_option("--seed", ev_seed, "Negative-sampling seed (default: checkpoint seed)");
  c_eval->add_option("--out", ev_out, "Directory for metrics.json")->capture_default_str();
  c_eval->add_option("--negatives", ev.num_negatives, "Sampled negatives per playlist")
      ->capture_default_str();

  masr::RecommendOptions rec;
  std::string rec_ckpt, rec_split, rec_out;
  auto* c_rec = app.add_subcommand("recommend", "Top-N songs for one playlist");
  c_rec->add_option("--checkpoint", rec_ckpt, "Model checkpoint or fusion manifest")->required();
  c_rec->add_option("--playlist", rec.playlist, "External playlist id")->required();
  c_rec->add_option("--top", rec.top, "List length")->capture_default_str();
  c_rec->add_option("--split", rec_split, "Prepared data directory (default: from checkpoint)");
  c_rec->add_option("--out", rec_out, "Also write recommendations.json here");

  masr::AttentionReportOptions att;
  std::string att_ckpt, att_split, att_out = ".";
  auto* c_att = app.add_subcommand("attention-report", "PMI vs model attention correlation");
  c_att->add_option("--checkpoint", att_ckpt, "MASS checkpoint or fusion manifest")->required();
  c_att->add_option("--split", att_split, "Prepared data directory")->required();
  c_att->add_option("--out", att_out, "Output directory")->capture_default_str();
  c_att->add_option("--pmi-floor", att.pmi_floor, "PMI for never co-occurring pairs")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    nlohmann::json result;
    if (*c_prepare) {
      prep.input = prep_input;
      prep.out = prep_out;
      result = masr::cmd_prepare(prep);
    } else if (*c_train) {
      masr::RunConfig cfg = masr::load_config(train_config);
      std::vector<std::pair<std::string, std::string>> overrides;
      if (!train_split.empty()) overrides.emplace_back("split", train_split);
      if (!train_out.empty()) overrides.emplace_back("out", train_out);
      if (!train_model.empty()) overrides.emplace_back("model", train_model);
      if (train_seed) overrides.emplace_back("seed", std::to_string(*train_seed));
      for (const auto& s : train_sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw masr::Error("config", "--set expects key=value");
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      cfg = masr::config_from_pairs(overrides, cfg);
      result = masr::cmd_train(cfg, train_apr);
    } else if (*c_eval) {
      ev.checkpoint = ev_ckpt;
      ev.split = ev_split;
      ev.out = ev_out;
      ev.ns = parse_n_list(ev_n);
      ev.seed = ev_seed;
      result = masr::cmd_evaluate(ev);
    } else if (*c_rec) {
      rec.checkpoint = rec_ckpt;
      if (!rec_split.empty()) rec.split = rec_split;
      if (!rec_out.empty()) rec.out = rec_out;
      result = masr::cmd_recommend(rec);
    } else if (*c_att) {
      att.checkpoint = att_ckpt;
      att.split = att_split;
      att.out = att_out;
      result = masr::cmd_attention_report(att);
    }
    std::cout << result.dump() << std::endl;
    return 0;
  } catch (const masr::ConfigError& e) {
    print_error(e.kind(), e.what(), e.key());
  } catch (const masr::Error& e) {
    print_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return 1;
}
