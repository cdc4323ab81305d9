#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "gtb/dataset.hpp"
#include "gtb/error.hpp"

using namespace gtb;

namespace {

std::vector<SampleRecord> random_records(std::mt19937_64& rng, std::size_t n, std::size_t patients) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.image_id = "img" + std::to_string(i) + ".pgm";
    r.patient_id = "p" + std::to_string(rng() % patients);
    r.labels[rng() % kNumClasses] = 1;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(LabelSpace, FourteenClassesInOrder) {
  const auto& ls = label_space();
  ASSERT_EQ(ls.size(), 14u);
  EXPECT_EQ(ls[0], "Atelectasis");
  EXPECT_EQ(ls[4], "Effusion");
  EXPECT_EQ(ls[11], "Pleural Thickening");
  EXPECT_EQ(ls[13], "Pneumothorax");
  EXPECT_EQ(class_index("Hernia"), 7u);
  EXPECT_FALSE(class_index("Tumor").has_value());
}

TEST(Metadata, ParsesFindings) {
  const auto recs = parse_metadata("image_id,patient_id,findings\nimg1.pgm,p1,Atelectasis|Effusion\r\nimg2.pgm,p2,\n");
  ASSERT_EQ(recs.size(), 2u);
  LabelVector expected{};
  expected[0] = expected[4] = 1;
  EXPECT_EQ(recs[0].labels, expected);
  EXPECT_EQ(recs[1].labels, LabelVector{});
  EXPECT_EQ(recs[1].patient_id, "p2");
}

TEST(Metadata, Errors) {
  try {
    parse_metadata("image_id,patient_id,findings\nimg3.pgm,p3,Tumor\n");
    FAIL();
  } catch (const VocabularyError& e) {
    EXPECT_NE(std::string(e.what()).find("Tumor"), std::string::npos);
  }
  try {
    parse_metadata("image_id,patient_id,findings\na.pgm,p1,\nbroken-row\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_metadata("image_id,patient_id,findings\na.pgm,p1,\na.pgm,p2,\n"), ParseError);
  EXPECT_THROW(parse_metadata("id,patient,labels\n"), ParseError);
}

TEST(Metadata, FormatRoundTrip) {
  std::mt19937_64 rng(5);
  const auto recs = random_records(rng, 30, 9);
  EXPECT_EQ(parse_metadata(format_metadata(recs)), recs);
}

TEST(SplitByPatient, RoundingRule) {
  std::vector<SampleRecord> recs;
  for (int p = 0; p < 10; ++p)
    for (int k = 0; k < 3; ++k) recs.push_back({"i" + std::to_string(p * 3 + k), "p" + std::to_string(p), {}, Split::Train});
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const auto out = split_by_patient(recs, {0.8, 0.1, 0.1}, seed);
    std::map<Split, std::set<std::string>> patients;
    for (const auto& r : out) patients[r.split].insert(r.patient_id);
    EXPECT_EQ(patients[Split::Train].size(), 8u);
    EXPECT_EQ(patients[Split::Val].size(), 1u);
    EXPECT_EQ(patients[Split::Test].size(), 1u);
  }
}

TEST(SplitByPatient, NoLeakageAndDeterminism) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const auto recs = random_records(rng, 40 + rng() % 60, 5 + rng() % 20);
    const auto a = split_by_patient(recs, {0.7, 0.1, 0.2}, trial);
    EXPECT_EQ(a, split_by_patient(recs, {0.7, 0.1, 0.2}, trial));
    std::map<std::string, Split> seen;
    for (const auto& r : a) {
      const auto [it, fresh] = seen.emplace(r.patient_id, r.split);
      EXPECT_TRUE(fresh || it->second == r.split) << r.patient_id;
    }
  }
}

TEST(SplitByPatient, SinglePatientKeepsRecordsTogether) {
  std::vector<SampleRecord> recs{{"a", "p1", {}, Split::Test}, {"b", "p1", {}, Split::Test}};
  const auto out = split_by_patient(recs, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(out[0].split, out[1].split);
  // Three non-empty splits cannot be filled by one patient.
  EXPECT_THROW(split_by_patient(recs, {0.7, 0.1, 0.2}, 3), ConfigError);
  EXPECT_THROW(split_by_patient(recs, {0.7, 0.1, 0.1}, 3), ConfigError);
}

TEST(Batches, SizesAndCoverage) {
  std::mt19937_64 rng(1);
  const auto recs = random_records(rng, 100, 30);
  const auto batches = make_batches(recs, 32, 4, 0);
  std::vector<std::size_t> sizes;
  std::multiset<std::string> ids;
  for (const auto& b : batches) {
    sizes.push_back(b.size());
    ids.insert(b.begin(), b.end());
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{32, 32, 32, 4}));
  std::multiset<std::string> expected;
  for (const auto& r : recs) expected.insert(r.image_id);
  EXPECT_EQ(ids, expected);
  EXPECT_EQ(make_batches(recs, 32, 4, 0), batches);
  EXPECT_NE(make_batches(recs, 32, 4, 1), batches);
  EXPECT_TRUE(make_batches({}, 8, 0, 0).empty());
  EXPECT_THROW(make_batches(recs, 0, 0, 0), ContractError);
}

TEST(Shard, RoundRobin) {
  const std::vector<int> four{0, 1, 2, 3};
  EXPECT_EQ(shard(std::span<const int>(four), 0, 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(shard(std::span<const int>(four), 1, 2), (std::vector<int>{1, 3}));
  EXPECT_EQ(shard(std::span<const int>(four), 0, 1), four);
  const std::vector<int> five{0, 1, 2, 3, 4};
  EXPECT_EQ(shard(std::span<const int>(five), 0, 2).size(), 3u);
  EXPECT_EQ(shard(std::span<const int>(five), 1, 2).size(), 2u);
  EXPECT_THROW(shard(std::span<const int>(five), 2, 2), ContractError);
}

TEST(Shard, DisjointCoverProperty) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> items(rng() % 40);
    std::iota(items.begin(), items.end(), 0);
    for (std::size_t K = 1; K <= 8; ++K) {
      std::vector<int> all;
      std::size_t smallest = items.size(), largest = 0;
      for (std::size_t w = 0; w < K; ++w) {
        const auto part = shard(std::span<const int>(items), w, K);
        smallest = std::min(smallest, part.size());
        largest = std::max(largest, part.size());
        all.insert(all.end(), part.begin(), part.end());
      }
      std::sort(all.begin(), all.end());
      EXPECT_EQ(all, items);
      EXPECT_LE(largest - smallest, 1u);
    }
  }
}

TEST(ExampleSetTest, AssembleBatchLayout) {
  ExampleSet set(2);
  SampleRecord a{"a", "p", {}, Split::Train}, b{"b", "p", {}, Split::Train};
  b.labels[13] = 1;
  set.add(a, StandardizedImage{2, 2, {1, 2, 3, 4}, 0, 1});
  set.add(b, StandardizedImage{2, 2, {5, 6, 7, 8}, 0, 1});
  const std::vector<std::string> ids{"b", "a"};
  const Batch batch = assemble_batch(set, ids);
  EXPECT_EQ(batch.images.shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(batch.images[0], 5.0);
  EXPECT_EQ(batch.labels[13], 1.0);
  EXPECT_EQ(batch.labels[14 + 13], 0.0);
  EXPECT_THROW(set.add(a, StandardizedImage{3, 3, std::vector<double>(9), 0, 1}), DimensionError);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  SyntheticOptions o;
  o.samples = 20;
  const auto a = make_synthetic_corpus(o);
  const auto b = make_synthetic_corpus(o);
  ASSERT_EQ(a.records.size(), 20u);
  EXPECT_EQ(a.records, b.records);
  std::set<std::string> patients;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
    EXPECT_EQ(a.images[i].width, 64u);
    patients.insert(a.records[i].patient_id);
    for (auto l : a.records[i].labels) positives += l;
  }
  EXPECT_EQ(patients.size(), 10u);
  EXPECT_GT(positives, 0u);
}
