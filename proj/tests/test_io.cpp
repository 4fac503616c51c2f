#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fixtures.hpp"
#include "real/config.hpp"
#include "real/io.hpp"

using namespace real;

namespace {

LabeledSet tiny_set() {
  LabeledSet s;
  s.num_classes = 3;
  s.x = Matrix{{0.5, -1.25}, {3.0, 0.0}, {-0.125, 8.0}};
  s.y = {0, 2, 1};
  return s;
}

template <typename F>
void expect_kind(ErrorKind kind, F&& f, std::uint64_t where = std::numeric_limits<std::uint64_t>::max()) {
  try {
    f();
    FAIL() << "expected " << kind_name(kind);
  } catch (const LocatedError& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    if (where != std::numeric_limits<std::uint64_t>::max()) {
      EXPECT_EQ(e.where(), where) << e.what();
    }
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    EXPECT_EQ(where, std::numeric_limits<std::uint64_t>::max()) << "expected a located error";
  }
}

void put_f32(Bytes& b, std::size_t at, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(u >> (8 * i));
}

}  // namespace

TEST(Dataset, RoundTripIsBitExact) {
  const LabeledSet s = tiny_set();
  const Bytes b = encode_dataset(s);
  EXPECT_EQ(b.size(), 18u + 4u * 6u + 4u * 3u);
  const LabeledSet back = decode_dataset(b);
  EXPECT_EQ(back.x, s.x);
  EXPECT_EQ(back.y, s.y);
  EXPECT_EQ(encode_dataset(back), b);
}

TEST(Dataset, TruncationReportsEndOffset) {
  Bytes b = encode_dataset(tiny_set());
  b.resize(b.size() - 5);
  expect_kind(ErrorKind::truncated, [&] { decode_dataset(b); }, b.size());
}

TEST(Dataset, BadMagic) {
  Bytes b = encode_dataset(tiny_set());
  b[0] = 'X';
  expect_kind(ErrorKind::bad_magic, [&] { decode_dataset(b); }, 0);
}

TEST(Dataset, LabelOutOfRangeOffset) {
  Bytes b = encode_dataset(tiny_set());
  const std::size_t at = 18 + 4 * 6 + 4;  // second label
  b[at] = 7;
  expect_kind(ErrorKind::label_range, [&] { decode_dataset(b); }, at);
}

TEST(Dataset, NonFiniteOffset) {
  Bytes b = encode_dataset(tiny_set());
  const std::size_t at = 18 + 4 * 3;
  put_f32(b, at, std::numeric_limits<float>::quiet_NaN());
  expect_kind(ErrorKind::non_finite, [&] { decode_dataset(b); }, at);
}

TEST(Dataset, TrailingBytes) {
  Bytes b = encode_dataset(tiny_set());
  b.push_back(0);
  expect_kind(ErrorKind::trailing_data, [&] { decode_dataset(b); });
}

TEST(Dataset, CsvMatchesBinary) {
  const LabeledSet s = make_synthetic(fixture::small_config().synthetic).train;
  const LabeledSet from_bin = decode_dataset(encode_dataset(s));
  const LabeledSet from_csv = parse_csv_dataset(to_csv(s), s.num_classes);
  EXPECT_EQ(from_csv.x, from_bin.x);
  EXPECT_EQ(from_csv.y, from_bin.y);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const PipelineConfig cfg = fixture::small_config();
  const Dataset d = make_synthetic(cfg.synthetic);
  const PhasePlan plan = make_phase_plan(10, 5, cfg.seeds.plan);
  const CilRunReport r = run_cil(d, plan, cfg);
  ModelBundle m;
  m.backbone = r.base.backbone;
  m.buffer = r.buffer;
  m.classifier = r.classifier;
  m.plan = plan;
  const Bytes b = encode_checkpoint(m);
  const ModelBundle back = decode_checkpoint(b);
  EXPECT_EQ(back.backbone->weights(), m.backbone->weights());
  EXPECT_TRUE(back.backbone->frozen());
  EXPECT_EQ(back.buffer->weight(), m.buffer->weight());
  EXPECT_EQ(back.classifier->weight, m.classifier->weight);
  EXPECT_EQ(back.classifier->memory, m.classifier->memory);
  EXPECT_EQ(back.classifier->gamma, m.classifier->gamma);
  EXPECT_EQ(back.classifier->phase_index, m.classifier->phase_index);
  EXPECT_EQ(back.plan->groups, plan.groups);
  EXPECT_EQ(back.plan->class_order, plan.class_order);
  EXPECT_EQ(encode_checkpoint(back), b);
}

TEST(Checkpoint, FlippedByteFailsCrc) {
  ModelBundle m;
  m.backbone = Mlp({3, 4}, RngSeed{1});
  Bytes b = encode_checkpoint(m);
  b[b.size() / 2] ^= 0x40;
  expect_kind(ErrorKind::corruption, [&] { decode_checkpoint(b); }, b.size() - 4);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const PipelineConfig cfg = fixture::small_config();
  const Dataset d = make_synthetic(cfg.synthetic);
  const PhasePlan plan = make_phase_plan(10, 5, cfg.seeds.plan);
  const BufferLayer buf = make_buffer(cfg);
  const Mlp bb({8, 32, 16}, RngSeed{3});
  auto features = [&](const LabeledSet& s) { return buffer_project(buf, forward(bb, s.x)); };
  PhaseDataStore store(d.train, plan);
  auto step = [&](AnalyticClassifier c, std::size_t k) {
    const LabeledSet& part = store.read(k, k, "phase_update");
    c = expand_classes(std::move(c), plan.groups[k].size());
    return phase_update(std::move(c), features(part), plan_one_hot(part, plan, plan.classes_through(k)));
  };
  const LabeledSet& base = store.read(0, 0, "ainit");
  AnalyticClassifier straight = ainit(features(base), plan_one_hot(base, plan, plan.base().size()), cfg.gamma);
  AnalyticClassifier resumed = straight;
  for (std::size_t k = 1; k <= 3; ++k) straight = step(std::move(straight), k);
  resumed = step(std::move(resumed), 1);
  ModelBundle m;
  m.classifier = resumed;
  resumed = *decode_checkpoint(encode_checkpoint(m)).classifier;
  for (std::size_t k = 2; k <= 3; ++k) resumed = step(std::move(resumed), k);
  EXPECT_LE(max_abs_diff(resumed.weight, straight.weight), 1e-12);
  EXPECT_LE(max_abs_diff(resumed.memory, straight.memory), 1e-12);
}

TEST(Config, UnknownKeyReportsLine) {
  expect_kind(ErrorKind::config, [] { parse_config("analytic.gamma = 0.1\n\nfoo.bar = 3\n"); }, 3);
}

TEST(Config, BadValue) {
  expect_kind(ErrorKind::config, [] { parse_config("analytic.d_b = many\n"); }, 1);
}

TEST(Config, SharedSgdThenStageOverride) {
  const PipelineConfig c = parse_config("red.lr = 0.2\nsgd.lr = 0.03\n# comment\nsgd.batch = 8 # trailing\n");
  EXPECT_EQ(c.sl.lr, 0.03);
  EXPECT_EQ(c.sscl.lr, 0.03);
  EXPECT_EQ(c.red.sgd.lr, 0.2);
  EXPECT_EQ(c.red.sgd.batch_size, 8u);
}

TEST(Config, RenderParseRoundTrip) {
  PipelineConfig c = fixture::small_config();
  c.red.lambda = 0.3;
  c.gamma = 0.125;
  c.arm = PipelineArm::sscl_teacher;
  apply_master_seed(c, 99);
  const PipelineConfig back = parse_config(render_config(c));
  EXPECT_EQ(render_config(back), render_config(c));
  EXPECT_EQ(back.seeds.augment.value, c.seeds.augment.value);
}

TEST(Config, InvalidValuesRejected) {
  expect_kind(ErrorKind::config, [] { parse_config("analytic.gamma = 0\n"); });
  expect_kind(ErrorKind::parameter, [] { parse_config("red.lambda = 1.5\n"); });
}
