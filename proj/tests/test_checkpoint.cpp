#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "windformer/checkpoint.hpp"
#include "windformer/module.hpp"

using namespace windformer;

namespace {

template <typename T>
class Affine : public Module<T> {
 public:
  explicit Affine(std::size_t n) : bn(n) {
    weight = this->register_parameter("weight", {n, n}, Init::normal());
    bias = this->register_parameter("bias", {n}, Init::zeros());
    this->register_batchnorm("bn", bn);
  }
  Tensor<T> weight, bias;
  ops::BatchNormState<T> bn;
};

template <typename T>
class Pair : public Module<T> {
 public:
  Pair() : first(3), second(3) {
    this->register_module("first", first);
    this->register_module("second", second);
    gain = this->register_parameter("gain", {3}, Init::ones());
  }
  Affine<T> first, second;
  Tensor<T> gain;
};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::path(::testing::TempDir()) / name;
}

}  // namespace

TEST(Module, HierarchicalNamesAndInit) {
  Pair<float> m;
  m.initialize(7);
  std::vector<std::string> names;
  for (const auto& p : m.parameters()) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"gain", "first.weight", "first.bias", "second.weight",
                                             "second.bias"}));
  EXPECT_EQ(m.parameter_count(), 3u + 2 * (9 + 3));
  for (float v : m.gain.data()) EXPECT_EQ(v, 1.0f);
  for (float v : m.first.bias.data()) EXPECT_EQ(v, 0.0f);
  for (float v : m.first.weight.data()) EXPECT_LE(std::abs(v), 0.04f);
  // Different names draw from different streams.
  EXPECT_NE(std::vector<float>(m.first.weight.data().begin(), m.first.weight.data().end()),
            std::vector<float>(m.second.weight.data().begin(), m.second.weight.data().end()));
}

TEST(Module, SameNameSameValuesAcrossInstances) {
  Pair<float> a;
  Affine<float> b(3);
  a.initialize(3);
  b.initialize(3);
  // b's "weight" is a's "first.weight" only if the full name matches; it doesn't.
  EXPECT_NE(std::vector<float>(a.first.weight.data().begin(), a.first.weight.data().end()),
            std::vector<float>(b.weight.data().begin(), b.weight.data().end()));
  Pair<float> c;
  c.initialize(3);
  EXPECT_TRUE(std::equal(a.second.weight.data().begin(), a.second.weight.data().end(),
                         c.second.weight.data().begin()));
}

TEST(Module, ModePropagatesToChildren) {
  Pair<float> m;
  m.eval();
  EXPECT_EQ(m.first.mode(), ops::NormMode::eval);
  m.train();
  EXPECT_EQ(m.second.mode(), ops::NormMode::train);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  Pair<float> m;
  m.initialize(11);
  m.first.bn.running_mean = {0.5f, -1.25f, 3.0f};
  m.first.bn.batches_seen = 42;
  const auto path = temp_file("roundtrip.wfckpt");
  write_archive(path, capture_module(m, {{"note", "x"}}));

  Pair<float> restored;
  restored.initialize(99);
  const Archive archive = read_archive(path);
  restore_module(restored, archive);
  EXPECT_EQ(archive.metadata.at("note"), "x");

  const auto a = encode_archive(capture_module(m, {{"note", "x"}}));
  const auto b = encode_archive(capture_module(restored, {{"note", "x"}}));
  EXPECT_EQ(a, b);
  EXPECT_EQ(restored.first.bn.batches_seen, 42);
  // decode then encode reproduces the file bytes
  EXPECT_EQ(encode_archive(archive), a);
}

TEST(Checkpoint, HeaderLayout) {
  Affine<double> m(2);
  m.initialize(1);
  const auto bytes = encode_archive(capture_module(m));
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::memcmp(bytes.data(), "WFCKPT01", 8), 0);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  const auto manifest = nlohmann::json::parse(std::string(bytes.begin() + 16, bytes.begin() + 16 + len));
  const auto& first = manifest.at("tensors").at(0);
  EXPECT_EQ(first.at("name"), "weight");
  EXPECT_EQ(first.at("dtype"), "f64");
  EXPECT_EQ(first.at("shape"), nlohmann::json::array({2, 2}));
  // payload: 4 weights + 2 biases + 2 + 2 stats (f64) + 1 counter (i64)
  EXPECT_EQ(bytes.size(), 16 + len + 8 * (4 + 2 + 2 + 2 + 1));
  // first weight is stored little-endian right after the manifest
  double w0;
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[16 + len + i]) << (8 * i);
  std::memcpy(&w0, &bits, 8);
  EXPECT_EQ(w0, m.weight.at(0));
}

TEST(Checkpoint, RejectsMismatchedModels) {
  Affine<float> small(2), big(3);
  small.initialize(0);
  const auto archive = capture_module(small);
  EXPECT_THROW(restore_module(big, archive), CheckpointError);

  Pair<float> pair;
  EXPECT_THROW(restore_module(pair, archive), CheckpointError);

  auto extra = capture_module(small);
  extra.entries.push_back({"stray", "parameter", DType::f32, {1}, {0, 0, 0, 0}});
  EXPECT_THROW(restore_module(small, extra), CheckpointError);
}

TEST(Checkpoint, CorruptFilesAreRefused) {
  std::vector<std::uint8_t> junk = {'N', 'O', 'P', 'E', 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(decode_archive(junk), CheckpointError);
  Affine<float> m(2);
  auto bytes = encode_archive(capture_module(m));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_archive(bytes), CheckpointError);
  EXPECT_THROW(read_archive(temp_file("does-not-exist.wfckpt")), CheckpointError);
}

TEST(Checkpoint, PrecisionConversionOnRestore) {
  Affine<float> f(2);
  f.initialize(5);
  Affine<double> d(2);
  restore_module(d, capture_module(f));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.weight.at(i), static_cast<double>(f.weight.at(i)));
}
