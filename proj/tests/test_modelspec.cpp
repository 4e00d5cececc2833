#include <gtest/gtest.h>

#include "segcls/modelspec.hpp"

using namespace segcls;
using namespace segcls::model;

namespace {

std::uint64_t total(const std::string& name, const std::string& reduce = "none") {
  return count_params(apply_reduction(catalog(name), Reduction::parse(reduce))).total;
}

ModelSpec single(Shape in, std::vector<LayerSpec> layers) {
  ModelSpec m;
  m.name = "t";
  m.input_shape = std::move(in);
  m.layers = std::move(layers);
  return m;
}

}  // namespace

TEST(Shapes, GlobalAvgPoolDropsSpatialAxes) {
  const auto t = infer_shapes(single({256, 7, 4}, {GlobalAvgPool{}, Output{10, Activation::kSigmoid}}));
  EXPECT_EQ(t.outputs[0], (Shape{256}));
}

TEST(Shapes, FlattenOfFinalAlexNetMap) {
  const auto t = infer_shapes(single({256, 5, 7}, {Flatten{}, Output{10, Activation::kSigmoid}}));
  EXPECT_EQ(t.outputs[0], (Shape{8960}));
}

TEST(Shapes, FirstAlexNetConvolution) {
  const auto t = infer_shapes(
      single({1, 64, 98}, {Conv2D{64, 11, 7, 2, 1, 0, 0}, GlobalAvgPool{}, Output{2, Activation::kSigmoid}}));
  EXPECT_EQ(t.outputs[0], (Shape{64, 27, 92}));
}

TEST(Shapes, AlexNetTraceEndsAt256x5x7) {
  const auto spec = catalog("alexnet-bn");
  const auto t = infer_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<Flatten>(spec.layers[i])) {
      EXPECT_EQ(i == 0 ? spec.input_shape : t.outputs[i - 1], (Shape{256, 5, 7}));
      EXPECT_EQ(t.outputs[i], (Shape{8960}));
    }
  }
}

TEST(Shapes, ResNetPoolsA7By4Map) {
  const auto spec = catalog("resnet50");
  const auto t = infer_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<GlobalAvgPool>(spec.layers[i])) {
      const auto& before = t.outputs[i - 1];
      EXPECT_EQ(before[0], 2048u);
      EXPECT_EQ(before[1] * before[2], 28u);
    }
  }
}

TEST(Shapes, NonPositiveDimensionNamesTheLayer) {
  const auto spec = single({1, 4, 4}, {Conv2D{2, 3, 3}, Conv2D{2, 3, 3}, Conv2D{2, 3, 3}, GlobalAvgPool{},
                                       Output{2, Activation::kSigmoid}});
  try {
    infer_shapes(spec);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1:"), std::string::npos) << e.what();
  }
}

TEST(Shapes, OutputMustBeLast) {
  EXPECT_THROW(infer_shapes(single({8}, {Output{2, Activation::kSigmoid}, FullyConnected{3}})), ShapeError);
  EXPECT_THROW(infer_shapes(single({8}, {FullyConnected{3}})), ShapeError);
}

TEST(Shapes, FullyConnectedNeedsFlatInput) {
  EXPECT_THROW(infer_shapes(single({1, 4, 4}, {FullyConnected{3}, Output{2, Activation::kSigmoid}})), ShapeError);
}

TEST(Counts, FullyConnected8960To3982) {
  const auto r = count_params(single({8960}, {FullyConnected{3982}, Output{1, Activation::kSigmoid}}));
  EXPECT_EQ(r.layers[0].total(), 35'682'702u);
  EXPECT_EQ(r.layers[0].total(), 8960u * 3982u + 3982u);
}

TEST(Counts, GlobalAvgPoolHasNoParameters) {
  const auto r = count_params(single({256, 7, 4}, {GlobalAvgPool{}, Output{1, Activation::kSigmoid}}));
  EXPECT_EQ(r.layers[0].total(), 0u);
}

TEST(Counts, FirstLstmLayer) {
  const auto r = count_params(single({98, 64}, {LSTM{2048, 1}, Output{1, Activation::kSigmoid}}));
  EXPECT_EQ(r.layers[0].total(), 17'309'696u);
  EXPECT_EQ(r.layers[0].total(), 4u * (64u * 2048u + 2048u * 2048u + 2048u));
}

TEST(Counts, ConvolutionAndBatchNorm) {
  const auto r = count_params(single({3, 10, 10}, {Conv2D{8, 3, 3}, BatchNorm{}, GlobalAvgPool{},
                                                   Output{2, Activation::kSoftmax}}));
  EXPECT_EQ(r.layers[0].total(), 8u * 3u * 9u + 8u);
  EXPECT_EQ(r.layers[1].total(), 16u);
  EXPECT_EQ(r.total, 8u * 27u + 8u + 16u + 8u * 2u + 2u);
}

TEST(Counts, BatchNormCountsTwoPerChannelOnVectors) {
  const auto r = count_params(single({50}, {BatchNorm{}, Output{2, Activation::kSigmoid}}));
  EXPECT_EQ(r.layers[0].bn_affine, 100u);
}

TEST(Catalog, AlexNetBnExactTotal) { EXPECT_EQ(total("alexnet-bn"), 56'111'673u); }

TEST(Catalog, AlexNetDiffersOnlyByBatchNormAffine) {
  const auto with = count_params(catalog("alexnet-bn"));
  const auto without = count_params(catalog("alexnet"));
  EXPECT_EQ(with.total - without.total, with.bn_affine);
  EXPECT_EQ(without.bn_affine, 0u);
  EXPECT_EQ(without.total, 56'093'441u);
}

TEST(Catalog, ResNet50WithinHalfPercent) {
  const double t = static_cast<double>(total("resnet50"));
  EXPECT_NEAR(t, 24.58e6, 0.005 * 24.58e6);
}

TEST(Catalog, RecurrentModels) {
  EXPECT_NEAR(static_cast<double>(total("lstm")), 85.54e6, 0.001 * 85.54e6);
  EXPECT_NEAR(static_cast<double>(total("bgru-att")), 107.85e6, 0.001 * 107.85e6);
}

TEST(Catalog, MlpCarriesDiscrepancyNote) {
  EXPECT_EQ(total("mlp"), 8'808'527u);
  const auto note = catalog_note("mlp");
  EXPECT_NE(note.find("9.48M"), std::string::npos);
  EXPECT_NE(note.find("8.94M"), std::string::npos);
  EXPECT_TRUE(catalog_note("alexnet-bn").empty());
}

TEST(Catalog, UnknownNameListsValidNames) {
  try {
    catalog("vgg");
    FAIL();
  } catch (const UsageError& e) {
    for (const auto& n : catalog_names()) EXPECT_NE(std::string(e.what()).find(n), std::string::npos) << n;
  }
}

TEST(Catalog, EveryEntryIsShapeValid) {
  for (const auto& n : catalog_names()) EXPECT_NO_THROW(infer_shapes(catalog(n))) << n;
}

TEST(Reductions, TableValues) {
  const std::vector<std::pair<std::string, std::string>> table = {
      {"bneck-final-64", "54.30M"}, {"bneck-final-256", "55.17M"}, {"bneck-final-1024", "58.63M"},
      {"bneck-mid-64", "40.77M"},   {"bneck-mid-256", "42.29M"},   {"bneck-mid-1024", "48.41M"},
      {"fc-64", "3.07M"},           {"fc-256", "4.95M"},           {"fc-1024", "13.22M"},
      {"global-avg-pool", "2.59M"}};
  for (const auto& [strategy, expected] : table) {
    EXPECT_EQ(format_millions(total("alexnet-bn", strategy)), expected) << strategy;
  }
  EXPECT_EQ(total("alexnet-bn", "global-avg-pool"), 2'589'135u);
}

TEST(Reductions, GlobalAvgPoolReplacesFcBlock) {
  const auto spec = apply_reduction(catalog("alexnet-bn"), Reduction::parse("global-avg-pool"));
  const auto r = count_params(spec);
  // 527 * 256 + 527 for the classifier: everything else is convolutional.
  EXPECT_EQ(r.layers.back().total(), 256u * 527u + 527u);
  for (const auto& l : spec.layers) EXPECT_FALSE(std::holds_alternative<FullyConnected>(l));
}

TEST(Reductions, BottleneckFinalArithmetic) {
  // Inserted FC(k)+BN between the last hidden layer and the classifier.
  const std::uint64_t base = total("alexnet-bn");
  const std::uint64_t k = 64;
  const std::uint64_t expect = base - (3982 * 527 + 527) + (3982 * k + k) + 2 * k + (k * 527 + 527);
  EXPECT_EQ(total("alexnet-bn", "bneck-final-64"), expect);
}

TEST(Reductions, NameRoundTrip) {
  for (const auto& r : standard_reductions()) EXPECT_EQ(Reduction::parse(r.name()).name(), r.name());
  EXPECT_EQ(standard_reductions().size(), 11u);
}

TEST(Reductions, BadStrategyRejected) {
  EXPECT_THROW(Reduction::parse("fc-"), UsageError);
  EXPECT_THROW(Reduction::parse("prune-50"), UsageError);
  EXPECT_THROW(Reduction::parse("fc-0"), UsageError);
}

TEST(Reductions, BaseWithoutFcBlockRejected) {
  EXPECT_THROW(apply_reduction(catalog("resnet50"), Reduction::parse("fc-64")), UsageError);
  EXPECT_NO_THROW(apply_reduction(catalog("resnet50"), Reduction::parse("none")));
}

TEST(Formatting, RoundHalfUp) {
  EXPECT_EQ(format_millions(56'111'673), "56.11M");
  EXPECT_EQ(format_millions(1'005'000), "1.01M");
  EXPECT_EQ(format_millions(1'004'999), "1.00M");
  EXPECT_EQ(format_millions(40'765'237), "40.77M");
  EXPECT_DOUBLE_EQ(millions_rounded(2'589'135), 2.59);
}

TEST(Json, ModelRoundTrip) {
  for (const auto& n : catalog_names()) {
    const auto spec = catalog(n);
    const auto back = model_from_json(nlohmann::json::parse(to_json(spec).dump()));
    EXPECT_EQ(back.name, spec.name);
    EXPECT_EQ(back.input_shape, spec.input_shape);
    EXPECT_EQ(back.layers, spec.layers) << n;
  }
}

TEST(Json, MalformedSpecRejected) {
  EXPECT_THROW(model_from_json(nlohmann::json::parse(R"({"name":"x"})")), UsageError);
  EXPECT_THROW(model_from_json(nlohmann::json::parse(
                   R"({"name":"x","input_shape":[4],"layers":[{"type":"warp"}]})")),
               UsageError);
}

TEST(Json, ReportCarriesTotals) {
  const auto j = to_json(count_params(catalog("alexnet-bn")));
  EXPECT_EQ(j["total"].get<std::uint64_t>(), 56'111'673u);
  EXPECT_EQ(j["total_millions"], "56.11M");
  EXPECT_FALSE(j.contains("note"));
}

TEST(Reductions, TotalsFollowPublishedOrderAndGrowWithWidth) {
  const auto base = model::catalog("alexnet-bn");
  std::uint64_t prev = 0;
  for (const char* name : {"global-avg-pool", "fc-64", "fc-256", "fc-1024", "bneck-mid-64", "bneck-mid-256",
                           "bneck-mid-1024", "bneck-final-64", "bneck-final-256", "none", "bneck-final-1024"}) {
    const auto t = model::count_params(model::apply_reduction(base, model::Reduction::parse(name))).total;
    EXPECT_GT(t, prev) << name;
    prev = t;
  }
}
