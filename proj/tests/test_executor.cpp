#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "binsed/executor.hpp"
#include "binsed/oracle.hpp"
#include "binsed/quantizer.hpp"
#include "helpers.hpp"

using namespace binsed;

namespace {

const Model& ref_model() {
  static const Model m = gen_random_model(21);
  return m;
}

}  // namespace

TEST(Executor, ReferenceShapes) {
  const auto& m = ref_model();
  const auto r = run_monolithic(m, test::noise_input(1, m));
  EXPECT_EQ(r.final_map.height, 16);
  EXPECT_EQ(r.final_map.width, 100);
  EXPECT_EQ(r.final_map.channels, 28);
  EXPECT_EQ(r.pool.count, 1600);
  EXPECT_EQ(r.scores().size(), 28u);
  EXPECT_LT(r.predicted, 28u);
}

TEST(Executor, MatchesIntegerOracle) {
  const auto& m = ref_model();
  for (std::uint64_t seed : {2, 3}) {
    const auto in = test::noise_input(seed, m);
    const auto got = run_monolithic(m, in);
    const auto ref = oracle::naive_integer_inference(m, in);
    EXPECT_EQ(got.pool.sums, ref.sums);
    for (std::size_t i = 0; i < ref.final_map.data.size(); ++i) ASSERT_EQ(got.final_map.data[i], ref.final_map.data[i]);
  }
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto sm = test::small_model(seed);
    Rng rng(seed);
    const auto in = test::random_input(rng, sm);
    ASSERT_EQ(run_monolithic(sm, in).pool.sums, oracle::naive_integer_inference(sm, in).sums) << "seed " << seed;
  }
}

TEST(Executor, PortablePopcountAndThreadsAgree) {
  const auto& m = ref_model();
  const auto in = test::noise_input(4, m);
  const auto base = run_monolithic(m, in);
  EXPECT_EQ(run_monolithic(m, in, {1, Popcount::portable}), base);
  EXPECT_EQ(run_monolithic(m, in, {4, Popcount::native}), base);
}

// Every binarized activation forced to +1: the classifier sees all ones, so
// each class sum is count * (bias + sum of that class's weights).
TEST(Executor, ClosedFormAllOnes) {
  auto m = ref_model();
  for (std::size_t i = 0; i + 1 < m.layers.size(); ++i) {
    auto& f = *m.layers[i].fold;
    std::fill(f.polarity.begin(), f.polarity.end(), 1);
    std::fill(f.threshold.begin(), f.threshold.end(), std::numeric_limits<std::int32_t>::min());
    if (m.spec.layers[i].kind == LayerKind::binary_conv) {
      auto& w = std::get<PackedBinaryWeights>(m.layers[i].weights);
      const auto s = unpack_weights(w);
      Filters<std::int8_t> ones(s.out_channels, s.kernel_y, s.kernel_x, s.in_channels);
      std::fill(ones.data.begin(), ones.data.end(), std::int8_t{1});
      w = pack_weights(ones);
    }
  }
  const auto& last = m.layers.back().fixed();
  const auto r = run_monolithic(m, test::noise_input(5, m));
  for (int k = 0; k < 28; ++k) {
    std::int64_t sw = 0;
    for (int c = 0; c < 128; ++c) sw += last.weights(k, 0, 0, c);
    EXPECT_EQ(r.pool.sums[static_cast<std::size_t>(k)], 1600 * (last.bias[static_cast<std::size_t>(k)] + sw));
  }
}

TEST(Executor, WrongInputShapeNamesLayer) {
  const auto& m = ref_model();
  try {
    (void)run_monolithic(m, FixedTensor(64, 399, 1, m.input_qformat(), 16));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
  EXPECT_THROW((void)run_monolithic(m, FixedTensor(64, 400, 1, m.input_qformat() + 1, 16)), ShapeError);
}

TEST(TilePlan, ReferenceHalo) {
  const auto spec = reference_network();
  EXPECT_EQ(receptive_halo(spec), 20);
  EXPECT_EQ(total_stride_x(spec), 4);
  const auto p = make_tile_plan(spec, 4);
  EXPECT_EQ(p.halo, 20);
  EXPECT_EQ(p.extension, 10);
  EXPECT_EQ(p.tiles.size(), 4u);
  EXPECT_EQ(p.tiles[1].output_begin, 25);
  EXPECT_EQ(p.tiles[1].input_begin, 90);
  EXPECT_EQ(p.tiles[1].input_end, 210);
  EXPECT_THROW((void)make_tile_plan(spec, 4, 18), PlanError);
  EXPECT_NO_THROW((void)make_tile_plan(spec, 4, 19));  // same extension as 20
  EXPECT_THROW((void)make_tile_plan(spec, 0), PlanError);
  EXPECT_THROW((void)make_tile_plan(spec, 101), PlanError);
}

TEST(TilePlan, OutputsPartitionTheMap) {
  const auto spec = reference_network();
  for (int n = 1; n <= 100; n += (n < 10 ? 1 : 9)) {
    const auto p = make_tile_plan(spec, n);
    int next = 0;
    for (const auto& t : p.tiles) {
      ASSERT_EQ(t.output_begin, next);
      ASSERT_GT(t.output_end, t.output_begin);
      next = t.output_end;
    }
    ASSERT_EQ(next, 100);
  }
}

TEST(Tiling, ReferenceModelMatchesMonolithic) {
  const auto& m = ref_model();
  const auto in = test::noise_input(6, m);
  const auto base = run_monolithic(m, in);
  for (int n : {1, 2, 3, 4, 7}) {
    const auto plan = make_tile_plan(m.spec, n);
    EXPECT_EQ(run_tiled(m, in, plan), base) << n << " tiles";
  }
  const auto plan = make_tile_plan(m.spec, 4);
  const std::vector<int> order{2, 0, 3, 1};
  EXPECT_EQ(run_tiled(m, in, plan, {}, order), base);
  EXPECT_EQ(run_tiled(m, in, plan, {2, Popcount::portable}), base);
}

TEST(Tiling, SmallModelsAnyOrder) {
  Rng rng(61);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto m = test::small_model(seed);
    const auto in = test::random_input(rng, m);
    const auto base = run_monolithic(m, in);
    const int n = rng.range(1, 16);
    const auto plan = make_tile_plan(m.spec, n);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    ASSERT_EQ(run_tiled(m, in, plan, {}, order), base) << "seed " << seed << " tiles " << n;
  }
}

TEST(Tiling, BadOrdersAndPlansRejected) {
  const auto m = test::small_model(1);
  Rng rng(62);
  const auto in = test::random_input(rng, m);
  const auto plan = make_tile_plan(m.spec, 3);
  EXPECT_THROW((void)run_tiled(m, in, plan, {}, std::vector<int>{0, 0, 1}), PlanError);
  EXPECT_THROW((void)run_tiled(m, in, plan, {}, std::vector<int>{0, 1}), PlanError);
  auto gap = plan;
  gap.tiles.pop_back();
  EXPECT_THROW((void)run_tiled(m, in, gap), PlanError);
  auto overlap = plan;
  overlap.tiles.push_back(plan.tiles[0]);
  EXPECT_THROW((void)run_tiled(m, in, overlap), PlanError);
}

TEST(Macs, ReferenceCounts) {
  const auto r = count_macs(reference_network());
  ASSERT_EQ(r.layers.size(), 7u);
  const std::array<std::uint64_t, 7> same{7372800, 117964800, 471859200, 235929600, 235929600, 26214400, 5734400};
  const std::array<std::uint64_t, 7> valid{7106688, 109486080, 404619264, 185942016, 154091520, 17121280, 3745280};
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(r.layers[i].same, same[i]) << r.layers[i].name;
    EXPECT_EQ(r.layers[i].valid, valid[i]) << r.layers[i].name;
  }
  EXPECT_EQ(r.total_same, 1101004800u);
  EXPECT_EQ(r.total_valid, 882112128u);
  ASSERT_TRUE(r.published_total_m);
  EXPECT_FALSE(count_macs(test::small_network()).published_total_m);
}

TEST(Macs, LayerFormula) {
  // 1x1 conv on 2x3x4 -> 5 channels: 6 positions * 20.
  NetworkSpec n;
  n.input_height = 2;
  n.input_width = 3;
  n.classes = 5;
  n.layers = {{LayerKind::fixed_conv, 1, 1, 1, 4, 1}, {LayerKind::final_conv, 1, 1, 4, 5, 1}};
  const auto r = count_macs(n);
  EXPECT_EQ(r.layers[0].same, 24u);
  EXPECT_EQ(r.layers[1].same, 120u);
  EXPECT_EQ(r.layers[1].valid, 120u);
}

TEST(Footprint, ReferenceBinaryVariant) {
  const auto f = footprint(reference_network());
  EXPECT_EQ(f.weights, 58176u);
  EXPECT_EQ(f.thresholds, 2432u);
  EXPECT_EQ(f.polarity, 76u);
  EXPECT_EQ(f.biases, 240u);
  EXPECT_EQ(f.weight_storage, 60924u);
  EXPECT_EQ(f.input, 51200u);
  EXPECT_TRUE(f.fits_l2);
  EXPECT_FALSE(f.tile_fits_l1);
}

TEST(Footprint, Fixed16VariantExceedsBudget) {
  const auto f = footprint(reference_network(), {}, nullptr, WeightVariant::fixed16);
  EXPECT_EQ(f.weights, 814656u);
  EXPECT_GT(f.weight_storage, 512 * kKiB);
  EXPECT_FALSE(f.fits_l2);
}

TEST(Footprint, TilingShrinksActivations) {
  const auto spec = reference_network();
  const auto mono = footprint(spec);
  const auto plan = make_tile_plan(spec, 8);
  const auto tiled = footprint(spec, {}, &plan);
  EXPECT_LT(tiled.activation_peak, mono.activation_peak);
  EXPECT_GE(tiled.activation_peak, tiled.input);
  EXPECT_EQ(tiled.tiles, 8);
  EXPECT_EQ(tiled.weight_storage, mono.weight_storage);
}
