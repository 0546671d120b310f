#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/datasets.hpp"
#include "deffiller/error.hpp"
#include "deffiller/image_io.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using namespace deffiller;

namespace {

void expect_valid(const MaskImagePair& pair) {
  EXPECT_TRUE(((pair.mask == 0) | (pair.mask == 1)).all().item<bool>());
  EXPECT_GE(pair.image.min().item<float>(), -1.0f);
  EXPECT_LE(pair.image.max().item<float>(), 1.0f);
  EXPECT_EQ(pair.image.size(1), pair.mask.size(0));
  EXPECT_EQ(pair.image.size(2), pair.mask.size(1));
}

}  // namespace

TEST(SynthPair, RepeatIsBitIdentical) {
  const auto a = synth_pair(0, "inclusion", 64);
  const auto b = synth_pair(0, "inclusion", 64);
  EXPECT_TRUE(torch::equal(a.image, b.image));
  EXPECT_TRUE(torch::equal(a.mask, b.mask));
}

TEST(SynthPair, SeedChangesMask) {
  EXPECT_FALSE(torch::equal(synth_pair(0, "inclusion", 64).mask, synth_pair(1, "inclusion", 64).mask));
}

TEST(SynthPair, AreaStaysInBand) {
  for (const auto& category : default_categories()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto pair = synth_pair(seed, category, 64);
      const double area = pair.mask.mean().item<double>();
      EXPECT_GE(area, kSynthMinArea) << category << " seed " << seed;
      EXPECT_LE(area, kSynthMaxArea) << category << " seed " << seed;
      expect_valid(pair);
    }
  }
}

TEST(SynthPair, UnknownCategoryThrows) { EXPECT_THROW(synth_pair(0, "rust", 64), Error); }

TEST(Split, NineToOneIsStratified) {
  const auto set = synth_dataset(300, 0, 16);
  ASSERT_EQ(set.size(), 900u);
  const auto [train, test] = split(set, {9, 1, 0});
  EXPECT_EQ(train.size(), 810u);
  EXPECT_EQ(test.size(), 90u);
  for (const auto& category : default_categories()) {
    EXPECT_EQ(train.count(category), 270u);
    EXPECT_EQ(test.count(category), 30u);
  }
}

TEST(Split, OneToFiveGivesScarceTrain) {
  const auto set = synth_dataset(300, 0, 16);
  const auto [train, test] = split(set, {1, 5, 0});
  EXPECT_EQ(train.size(), 150u);
  EXPECT_EQ(test.size(), 750u);
}

TEST(Split, SameSpecSamePartition) {
  const auto set = synth_dataset(10, 3, 16);
  const auto [a_train, a_test] = split(set, {9, 1, 7});
  const auto [b_train, b_test] = split(set, {9, 1, 7});
  ASSERT_EQ(a_train.size(), b_train.size());
  for (std::size_t i = 0; i < a_train.size(); ++i) EXPECT_EQ(a_train[i].id, b_train[i].id);
  for (std::size_t i = 0; i < a_test.size(); ++i) EXPECT_EQ(a_test[i].id, b_test[i].id);
}

TEST(Split, PartitionsAreDisjointAndComplete) {
  const auto set = synth_dataset(10, 3, 16);
  const auto [train, test] = split(set, {9, 1, 1});
  std::set<std::string> ids;
  for (const auto& p : train) ids.insert(p.id);
  for (const auto& p : test) EXPECT_TRUE(ids.insert(p.id).second) << p.id;
  EXPECT_EQ(ids.size(), set.size());
}

TEST(LoadPairs, SinglePair) {
  fixture::TempDir dir("load1");
  const auto pair = synth_pair(0, "patches", 64);
  image_io::write_image(dir.path() / "patches" / "images" / "a.png", pair.image);
  image_io::write_mask(dir.path() / "patches" / "masks" / "a.png", pair.mask);
  const auto set = load_pairs(dir.path(), 64);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set[0].category, "patches");
  EXPECT_TRUE(torch::equal(set[0].mask, pair.mask));
  expect_valid(set[0]);
}

TEST(LoadPairs, MissingMaskNamesStem) {
  fixture::TempDir dir("load2");
  image_io::write_image(dir.path() / "scratches" / "images" / "lonely.png", synth_pair(0, "scratches", 32).image);
  try {
    load_pairs(dir.path(), 32);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos) << e.what();
  }
}

TEST(LoadPairs, SaveLoadRoundTripKeepsMasks) {
  fixture::TempDir dir("roundtrip");
  const auto set = synth_dataset(3, 5, 32);
  save_pairs(set, dir.path());
  const auto loaded = load_pairs(dir.path(), 32);
  ASSERT_EQ(loaded.size(), set.size());
  const auto records = read_manifest(dir.path() / "manifest.jsonl");
  EXPECT_EQ(records.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_TRUE(torch::equal(loaded[i].mask, set[i].mask));
    // 8-bit quantisation of [-1, 1] images.
    EXPECT_LE((loaded[i].image - set[i].image).abs().max().item<float>(), 1.0f / 255.0f + 1e-6f);
    expect_valid(loaded[i]);
  }
}

TEST(PairSet, ConcatRejectsResolutionMismatch) {
  EXPECT_THROW(synth_dataset(1, 0, 16).concat(synth_dataset(1, 0, 32)), Error);
}
