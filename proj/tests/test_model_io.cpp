#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"
#include "tabl/errors.hpp"
#include "tabl/model_io.hpp"

using namespace tabl;
using namespace tabl::testing;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "tabl_model_io_test";
  std::filesystem::create_directories(dir);
  return dir;
}

void perturb_trainable(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (ParamRef& p : parameters(m))
    if (p.trainable && p.role == ParamRole::dense)
      for (double& v : p.values) v += rng.uniform(-0.1, 0.1);
}

void expect_bit_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_EQ(a[i].values()[j], b[i].values()[j]);
}

std::vector<Matrix> inputs() {
  Rng rng(3);
  std::vector<Matrix> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(random_matrix(40, 10, rng));
  return xs;
}

}  // namespace

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ModelIo, PlainRoundTripBitExact) {
  for (const char* name : {"joint_all", "cnn"}) {
    const Model m = build(lookup_topology(name), 5);
    const Model r = deserialize_model(serialize_model(m));
    EXPECT_EQ(r.topology, m.topology);
    EXPECT_FALSE(r.adapted());
    expect_bit_equal(predict(m, inputs()), predict(r, inputs()));
    EXPECT_EQ(serialize_model(r), serialize_model(m));
  }
}

TEST(ModelIo, AdaptedRoundTripThroughFiles) {
  const auto dir = temp_dir();
  for (bool train_lambda : {false, true}) {
    Model a = augment(build(lookup_topology("base_stock1"), 5), 3, Strategy::is1, 6, train_lambda);
    perturb_trainable(a, 7);
    save_model(a, dir / "a.tablmodel");
    const Model r = load_model(dir / "a.tablmodel");
    EXPECT_TRUE(r.adapted());
    EXPECT_EQ(r.rank, 3u);
    EXPECT_EQ(r.strategy, Strategy::is1);
    EXPECT_EQ(r.train_lambda, train_lambda);
    EXPECT_EQ(r.base_hash, a.base_hash);
    expect_bit_equal(predict(a, inputs()), predict(r, inputs()));
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "a.tablmodel.tmp"));
}

TEST(ModelIo, AuxSidecar) {
  const auto dir = temp_dir();
  const Model base = build(lookup_topology("joint_all"), 5);
  Model a = augment(base, 1, Strategy::is2, 6);
  perturb_trainable(a, 8);
  save_model(base, dir / "base.tablmodel");
  save_aux(a, dir / "a.tablaux");
  const Model attached = load_aux(load_model(dir / "base.tablmodel"), dir / "a.tablaux");
  expect_bit_equal(predict(a, inputs()), predict(attached, inputs()));

  const auto aux_size = std::filesystem::file_size(dir / "a.tablaux");
  const auto model_size = std::filesystem::file_size(dir / "base.tablmodel");
  EXPECT_LT(aux_size * 10, model_size);

  const Model other = build(lookup_topology("joint_all"), 6);
  EXPECT_THROW(attach_aux(other, serialize_aux(a)), IntegrityError);
  EXPECT_THROW(attach_aux(a, serialize_aux(a)), StateError);
  EXPECT_THROW(serialize_aux(base), StateError);
}

TEST(ModelIo, CorruptContainers) {
  const Model m = build(lookup_topology("joint_all"), 5);
  std::string bytes = serialize_model(m);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), ParseError);
  EXPECT_THROW(deserialize_model("NOTAMODEL"), ParseError);

  std::string flipped = bytes;
  flipped[200] ^= 1;  // inside the first tensor
  EXPECT_THROW(deserialize_model(flipped), Error);

  std::string version = bytes;
  version[8] = 9;
  EXPECT_THROW(deserialize_model(version), IntegrityError);

  EXPECT_THROW(deserialize_model(bytes + "x"), ParseError);
  EXPECT_THROW(load_model(temp_dir() / "missing.tablmodel"), IoError);
}
