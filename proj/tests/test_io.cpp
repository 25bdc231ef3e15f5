#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace masr;
using namespace masr::testing;

namespace {

RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return config_from_pairs(parse_key_values(in, "cfg"));
}

std::string config_error_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndDefaults) {
  const auto cfg = parse_config(
      "# comment\nmodel = mass\nmass_variant=us\nattention = nonmem_dot\n\n"
      "d = 32\nlearning_rate = 0.0001\nlambda_theta = 1e-3 # trailing\nepochs = 7\n"
      "epsilon = 1.0\nalpha = 0.25\nsplit = data/x\nseed = 99\napr_perturb = embeddings\n"
      "use_bias = false\n");
  EXPECT_EQ(cfg.model, PipelineModel::mass);
  EXPECT_EQ(cfg.mass_variant, Variant::us);
  EXPECT_EQ(cfg.mdr_variant, Variant::ups);
  EXPECT_EQ(cfg.attention, AttentionKind::nonmem_dot);
  EXPECT_EQ(cfg.dim, 32u);
  EXPECT_EQ(cfg.hyper.learning_rate, 1e-4);
  EXPECT_EQ(cfg.hyper.lambda_theta, 1e-3);
  EXPECT_EQ(cfg.hyper.epochs, 7u);
  EXPECT_EQ(cfg.hyper.epsilon, 1.0);
  EXPECT_EQ(cfg.hyper.batch_size, 256u);
  EXPECT_EQ(cfg.hyper.negatives, 4u);
  EXPECT_EQ(cfg.alpha, 0.25);
  EXPECT_EQ(cfg.split, "data/x");
  EXPECT_EQ(cfg.hyper.seed, 99u);
  EXPECT_FALSE(cfg.hyper.perturb_all);
  EXPECT_FALSE(cfg.use_bias);
}

TEST(Config, RejectionsNameTheKey) {
  EXPECT_EQ(config_error_key("colour = red\n"), "colour");
  EXPECT_EQ(config_error_key("learning_rate = 0.01\n"), "learning_rate");
  EXPECT_EQ(config_error_key("lambda_theta = 0.5\n"), "lambda_theta");
  EXPECT_EQ(config_error_key("d = 10\n"), "d");
  EXPECT_EQ(config_error_key("epochs = 51\n"), "epochs");
  EXPECT_EQ(config_error_key("epsilon = 0.7\n"), "epsilon");
  EXPECT_EQ(config_error_key("alpha = 1.5\n"), "alpha");
  EXPECT_EQ(config_error_key("seed = -3\n"), "seed");
  EXPECT_EQ(config_error_key("model = lstm\n"), "model");
  EXPECT_EQ(config_error_key("attention = self\n"), "attention");
  EXPECT_EQ(config_error_key("mdr_variant = uu\n"), "mdr_variant");
  EXPECT_EQ(config_error_key("d = 16\nd = 32\n"), "d");
  EXPECT_EQ(config_error_key("batch_size = 0\n"), "batch_size");
  EXPECT_THROW(parse_config("just words\n"), Error);
}

TEST(Config, TrainingRequirements) {
  EXPECT_THROW(validate_for_training(parse_config("d = 8\n")), ConfigError);
  try {
    validate_for_training(parse_config("split = s\nmodel = masr\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "mdr_checkpoint");
  }
  EXPECT_NO_THROW(validate_for_training(parse_config("split = s\n")));
}

TEST(Checkpoint, RoundTripIsExact) {
  for (auto kind : {ModelKind::mdr, ModelKind::mass}) {
    const Model m = random_model(small_spec(kind, Variant::ups, AttentionKind::mem_dot), 4);
    Hyperparams h;
    h.seed = 12345678901234ULL;
    h.lambda_theta = 1e-4;
    h.perturb_all = false;
    const Checkpoint c{m, h, Json{{"split", "somewhere"}}};
    const Json j = checkpoint_to_json(c);
    const Checkpoint back = checkpoint_from_json(Json::parse(j.dump()));
    EXPECT_EQ(back.model.spec(), m.spec());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      EXPECT_EQ(back.model.params()[i].values, m.params()[i].values);
    }
    EXPECT_EQ(back.hyper.seed, h.seed);
    EXPECT_EQ(back.hyper.lambda_theta, h.lambda_theta);
    EXPECT_FALSE(back.hyper.perturb_all);
    EXPECT_EQ(back.meta.at("split"), "somewhere");
    EXPECT_EQ(checkpoint_to_json(back).dump(), j.dump());
  }
}

TEST(Checkpoint, LayoutFields) {
  const Model m = Model::create(small_spec(ModelKind::mdr), 1);
  const Json j = checkpoint_to_json({m, Hyperparams{}, Json::object()});
  EXPECT_EQ(j.at("params").at("S").at("shape"), Json::array({13, 4}));
  EXPECT_EQ(j.at("params").at("theta").at("shape"), Json::array({13, 1}));
  EXPECT_EQ(j.at("model").at("kind"), "mdr");
  EXPECT_EQ(j.at("seed"), 0);
  EXPECT_TRUE(j.at("hyperparams").contains("lambda_delta"));
}

TEST(Checkpoint, CorruptInputRejected) {
  const Model m = Model::create(small_spec(ModelKind::mdr), 1);
  Json j = checkpoint_to_json({m, Hyperparams{}, Json::object()});
  Json wrong_shape = j;
  wrong_shape["params"]["S"]["shape"] = Json::array({12, 4});
  EXPECT_THROW(checkpoint_from_json(wrong_shape), Error);
  Json missing = j;
  missing["params"].erase("B1");
  EXPECT_THROW(checkpoint_from_json(missing), Error);
  Json fmt = j;
  fmt["format"] = "other";
  EXPECT_THROW(checkpoint_from_json(fmt), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.json"), Error);
}

TEST(Prepared, CatalogAndSplitRoundTrip) {
  std::istringstream in("u1\tp1\ta\nu1\tp1\tb\nu1\tp1\tc\nu1\tp1\td\nu2\tp2\tb\nu2\tp2\te\nu2\tp2\tf\n");
  const auto recs = parse_interactions(in, "mem");
  const PreparedData d = leave_one_out_split(recs, 5);
  const auto dir = scratch_dir("prepared_roundtrip");
  write_prepared(dir, d, PrepareMeta{5, 3, 100, 63});
  const PreparedData back = read_prepared(dir);
  EXPECT_EQ(back.catalog.songs(), d.catalog.songs());
  EXPECT_EQ(back.catalog.owners(), d.catalog.owners());
  for (PlaylistIndex p = 0; p < 2; ++p) {
    EXPECT_EQ(back.split.playlists[p].train, d.split.playlists[p].train);
    EXPECT_EQ(back.split.playlists[p].dev, d.split.playlists[p].dev);
    EXPECT_EQ(back.split.playlists[p].test, d.split.playlists[p].test);
  }
  EXPECT_EQ(back.split.max_train_len, d.split.max_train_len);
  const Json split = read_json(dir / kSplitFile);
  EXPECT_TRUE(split.at("p1").at("train").is_array());
  EXPECT_TRUE(split.at("p2").at("dev").is_string());
}

TEST(Fusion, ManifestRoundTrip) {
  const FusionManifest f{0.3, "/a/mdr.json", "/a/mass.json"};
  const FusionManifest back = fusion_from_json(fusion_to_json(f));
  EXPECT_EQ(back.alpha, 0.3);
  EXPECT_EQ(back.mdr, f.mdr);
  EXPECT_EQ(back.mass, f.mass);
  EXPECT_EQ(fusion_to_json(f).at("format"), "masr-fusion");
}
