#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cast/backbone.hpp"
#include "cast/trainer.hpp"
#include "support.hpp"

using namespace cast;
using cast::testing::random_matrix;

namespace {

const Fusion kAllFusions[] = {Fusion::SA, Fusion::SACA, Fusion::CA, Fusion::CA_TV};

std::vector<BatchItem> mixed_batch() {
  return {{Modality::Speech, 0, false}, {Modality::Text, 1, false}, {Modality::Speech, 1, true},
          {Modality::Text, 0, false}};
}

cast::testing::GradCheckResult grad_check(Fusion fusion, std::uint64_t seed) {
  CastModel model(cast::testing::tiny_config(fusion), seed);
  cast::testing::randomize_params(model, seed + 1);
  model.params().set_trainable([](const std::string& n) { return !is_encoder_param(n); });
  const Corpus corpus = cast::testing::tiny_corpus(seed + 2);
  const auto batch = mixed_batch();
  std::vector<Matrix> grads = model.params().zeros_like();
  batch_loss_and_grads(model, corpus, batch, seed + 3, &grads);
  return cast::testing::finite_difference_check(
      model, [&] { return batch_loss_and_grads(model, corpus, batch, seed + 3, nullptr); }, grads);
}

}  // namespace

class FusionTest : public ::testing::TestWithParam<Fusion> {};

TEST_P(FusionTest, GradientsMatchFiniteDifferences) {
  const auto r = grad_check(GetParam(), 11);
  EXPECT_GT(r.checked, 500u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST_P(FusionTest, OutputIgnoresConditionsAtInitialization) {
  ModelConfig cfg;
  cfg.block.fusion = GetParam();
  const CastModel model(cfg, 5);
  Rng rng(6);
  const MelGrid x = random_matrix(24, cfg.n_mels, rng);
  const Matrix cond_a = random_matrix(24, cfg.block.d_model, rng);
  const Matrix cond_b = random_matrix(24, cfg.block.d_model, rng);
  const TimbreSeq ta{random_matrix(3, cfg.block.d_timbre, rng), Modality::Speech};
  const TimbreSeq tb{random_matrix(5, cfg.block.d_timbre, rng), Modality::Text};
  const FlowStep tau(0.37);

  const MelGrid base = model.backbone_forward(x, cond_a, &ta, tau, false);
  EXPECT_EQ(model.backbone_forward(x, cond_b, &tb, tau, false), base);
  EXPECT_EQ(model.backbone_forward(x, cond_b, &ta, tau, false), base);
  EXPECT_EQ(model.backbone_forward(x, cond_a, nullptr, tau, true), base);
  EXPECT_EQ(model.backbone_forward(x, cond_a, &ta, tau, false, {.ablate_branches = true}), base);
}

TEST_P(FusionTest, ForwardMatchesGraph) {
  CastModel model(cast::testing::tiny_config(GetParam()), 3);
  cast::testing::randomize_params(model, 4);
  Rng rng(5);
  const MelGrid x = random_matrix(4, 6, rng);
  const CharSeq chars = tokenize("ab c");
  const MelGrid prompt = random_matrix(4, 6, rng);
  const Matrix cond = model.cond_seq(chars, 4);
  const TimbreSeq t = model.speech_encode(prompt);
  const MelGrid plain = model.backbone_forward(x, cond, &t, FlowStep(0.5), false);

  ag::Tape tape(false);
  const ag::Var v = model.velocity_graph(tape, tape.constant(x), model.cond_graph(tape, chars, 4),
                                         model.speech_timbre_graph(tape, prompt), FlowStep(0.5), false);
  EXPECT_EQ(v.value(), plain);
  EXPECT_TRUE(plain.all_finite());
}

INSTANTIATE_TEST_SUITE_P(AllVariants, FusionTest, ::testing::ValuesIn(kAllFusions),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Backbone, TaskTagAddsTwoTimbreVectors) {
  ModelConfig cfg;
  const CastModel ca(cfg, 1);
  cfg.block.fusion = Fusion::CA_TV;
  const CastModel tv(cfg, 1);
  EXPECT_EQ(tv.params().element_count(),
            ca.params().element_count() + 2 * static_cast<std::size_t>(cfg.block.d_timbre));
  EXPECT_EQ(tv.params().size(), ca.params().size() + 2);
}

TEST(Backbone, CrossAttentionIsPermutationInvariantInTimbre) {
  CastModel model(cast::testing::tiny_config(Fusion::CA), 8);
  cast::testing::randomize_params(model, 9);
  Rng rng(10);
  const MelGrid x = random_matrix(5, 6, rng);
  const Matrix cond = random_matrix(5, 8, rng);
  const Matrix frames = random_matrix(4, 4, rng);
  Matrix permuted(4, 4);
  const int order[] = {2, 0, 3, 1};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) permuted(r, c) = frames(order[r], c);
  const TimbreSeq a{frames, Modality::Speech}, b{permuted, Modality::Speech};
  const MelGrid va = model.backbone_forward(x, cond, &a, FlowStep(0.6), false);
  const MelGrid vb = model.backbone_forward(x, cond, &b, FlowStep(0.6), false);
  EXPECT_LT(max_abs_diff(va, vb), 1e-12);
  EXPECT_GT(max_abs_diff(va, model.backbone_forward(x, cond, nullptr, FlowStep(0.6), true)), 1e-6);
}

// With every cross-attention gate at zero, SACA routes speech timbre
// exactly like SA.
TEST(Backbone, SacaWithClosedCrossAttentionEqualsSa) {
  CastModel sa(cast::testing::tiny_config(Fusion::SA), 12);
  cast::testing::randomize_params(sa, 13);
  CastModel saca(cast::testing::tiny_config(Fusion::SACA), 12);
  cast::testing::randomize_params(saca, 14);
  for (Param& p : saca.params()) {
    if (sa.params().contains(p.name))
      p.value = sa.params().at(p.name).value;
    else if (p.name.find("xattn_mod") != std::string::npos)
      p.value.fill(0.0);
  }
  Rng rng(15);
  const MelGrid x = random_matrix(5, 6, rng);
  const Matrix cond = random_matrix(5, 8, rng);
  const TimbreSeq t{random_matrix(3, 4, rng), Modality::Speech};
  const MelGrid a = sa.backbone_forward(x, cond, &t, FlowStep(0.4), false);
  const MelGrid b = saca.backbone_forward(x, cond, &t, FlowStep(0.4), false);
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(Backbone, EmbedAndPadFillsWithFiller) {
  const CastModel model(ModelConfig{}, 1);
  const CharSeq chars = tokenize("ab");
  const Matrix e = model.embed_and_pad(chars, 5);
  const Matrix& table = model.params().at("char_embed.table").value;
  ASSERT_EQ(e.rows(), 5);
  for (int c = 0; c < e.cols(); ++c) {
    EXPECT_EQ(e(0, c), table(vocab::id_of('a'), c));
    EXPECT_EQ(e(1, c), table(vocab::id_of('b'), c));
    for (int r = 2; r < 5; ++r) EXPECT_EQ(e(r, c), table(vocab::kFiller, c));
  }
  EXPECT_THROW(model.embed_and_pad(chars, 1), std::invalid_argument);
  EXPECT_THROW(model.embed_and_pad(chars, 0), std::invalid_argument);
}

TEST(Backbone, StepFeaturesAreSinThenCos) {
  const Matrix f = step_features(FlowStep(0.25), 8);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(f(0, i) * f(0, i) + f(0, i + 4) * f(0, i + 4), 1.0, 1e-12);
  EXPECT_NE(step_features(FlowStep(0.25), 8), step_features(FlowStep(0.26), 8));
}

TEST(Backbone, FreshModelsAreSeedDeterministic) {
  const CastModel a(ModelConfig{}, 77), b(ModelConfig{}, 77), c(ModelConfig{}, 78);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    if (a.params()[i].frozen) {
      EXPECT_EQ(a.params()[i].value, c.params()[i].value);
    } else {
      differs |= a.params()[i].value != c.params()[i].value;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Backbone, ParamsAreFloatRepresentable) {
  const CastModel m(ModelConfig{}, 3);
  for (const Param& p : m.params())
    for (double v : p.value.values()) EXPECT_EQ(static_cast<double>(static_cast<float>(v)), v) << p.name;
}

TEST(Backbone, ConfigValidationListsEveryViolation) {
  ModelConfig cfg;
  cfg.block.d_model = 30;
  cfg.block.n_heads = 4;
  cfg.n_mels = 0;
  cfg.conv_kernel = 4;
  try {
    cfg.validate();
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d_model"), std::string::npos) << msg;
    EXPECT_NE(msg.find("n_mels"), std::string::npos) << msg;
    EXPECT_NE(msg.find("conv_kernel"), std::string::npos) << msg;
  }
}

TEST(Backbone, AdoptingParamsChecksLayout) {
  const CastModel ca(ModelConfig{}, 1);
  ModelConfig sa_cfg;
  sa_cfg.block.fusion = Fusion::SA;
  EXPECT_THROW(CastModel(sa_cfg, ca.params()), std::invalid_argument);
  EXPECT_NO_THROW(CastModel(ModelConfig{}, ca.params()));
}

TEST(Backbone, ParseFusion) {
  EXPECT_EQ(parse_fusion("ca_tv"), Fusion::CA_TV);
  EXPECT_EQ(parse_fusion("SACA"), Fusion::SACA);
  EXPECT_THROW(parse_fusion("xa"), std::invalid_argument);
}
