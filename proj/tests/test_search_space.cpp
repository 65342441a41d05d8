#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "autotune/architecture.hpp"
#include "autotune/errors.hpp"
#include "autotune/search_space.hpp"
#include "autotune/space_io.hpp"

using namespace autotune;

namespace {

SearchSpace fc_space() { return SearchSpace(fc_stack_params()); }

bool has_defect(const std::vector<Defect>& defects, const std::string& param,
                const std::string& message) {
  for (const auto& d : defects)
    if (d.param == param && d.message == message) return true;
  return false;
}

// Hand-rolled enumeration of the FC stack: fc_layers = k activates k pairs
// of (neurons, dropout).
std::uint64_t fc_count_by_loops() {
  std::uint64_t total = 0;
  for (int k = 1; k <= 3; ++k) {
    std::uint64_t combos = 1;
    for (int layer = 0; layer < k; ++layer) {
      std::uint64_t pair = 0;
      for (int n = 0; n < 5; ++n)
        for (int d = 0; d < 11; ++d) ++pair;
      combos *= pair;
    }
    total += combos;
  }
  return total;
}

}  // namespace

TEST(SearchSpaceValidate, DuplicateName) {
  SearchSpace s({{"neurons_1", OrdinalGrid{{64, 128}}, {}}, {"neurons_1", OrdinalGrid{{64}}, {}}});
  EXPECT_TRUE(has_defect(s.validate(), "neurons_1", "duplicate name"));
}

TEST(SearchSpaceValidate, DanglingCondition) {
  SearchSpace s({{"a", IntegerRange{1, 3}, Condition{"missing", {std::int64_t{1}}}}});
  EXPECT_TRUE(has_defect(s.validate(), "a", "dangling condition"));
}

TEST(SearchSpaceValidate, ConditionOnLaterParameter) {
  SearchSpace s({{"a", IntegerRange{1, 3}, Condition{"b", {std::int64_t{1}}}},
                 {"b", IntegerRange{1, 3}, {}}});
  EXPECT_FALSE(s.validate().empty());
}

TEST(SearchSpaceValidate, DomainDefects) {
  SearchSpace s({{"empty", Categorical{}, {}},
                 {"dup", Categorical{{"x", "x"}}, {}},
                 {"grid", OrdinalGrid{{1, 3, 2}}, {}},
                 {"range", IntegerRange{5, 1}, {}}});
  const auto d = s.validate();
  EXPECT_TRUE(has_defect(d, "empty", "empty domain"));
  EXPECT_TRUE(has_defect(d, "dup", "duplicate value"));
  EXPECT_TRUE(has_defect(d, "grid", "grid not strictly increasing"));
  EXPECT_TRUE(has_defect(d, "range", "lo > hi"));
}

TEST(SearchSpaceValidate, BundledTable1IsClean) {
  const SearchSpace s = load_space(std::string(AUTOTUNE_TEST_DATA_DIR) + "/spaces/table1.json");
  EXPECT_TRUE(s.validate().empty());
  const auto* fs = s.find("conv_filter_size");
  ASSERT_NE(fs, nullptr);
  EXPECT_EQ(std::get<OrdinalGrid>(fs->domain).values, (std::vector<double>{1, 2, 3, 5}));
  EXPECT_EQ(std::get<OrdinalGrid>(s.find("conv_filters")->domain).values,
            (std::vector<double>{64, 128, 256, 512}));
  EXPECT_EQ(std::get<OrdinalGrid>(s.find("pool_size")->domain).values, (std::vector<double>{2, 3}));
  EXPECT_EQ(std::get<OrdinalGrid>(s.find("neurons_1")->domain).values,
            (std::vector<double>{64, 128, 256, 512, 1024}));
  EXPECT_EQ(std::get<OrdinalGrid>(s.find("dropout_3")->domain).values.size(), 11u);
}

TEST(SearchSpaceSample, SingletonCategorical) {
  SearchSpace s({{"a", Categorical{{"only"}}, {}}});
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(std::get<std::string>(s.sample_uniform(rng).at("a")), "only");
}

TEST(SearchSpaceSample, DropoutGridFrequencies) {
  SearchSpace s({{"dropout", OrdinalGrid{tail_values::kDropout}, {}}});
  std::mt19937_64 rng(2024);
  std::map<double, int> counts;
  const int draws = 110000;
  for (int i = 0; i < draws; ++i) ++counts[std::get<double>(s.sample_uniform(rng).at("dropout"))];
  ASSERT_EQ(counts.size(), 11u);
  const double p = 1.0 / 11.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [value, count] : counts) EXPECT_NEAR(count, draws * p, 3 * sigma) << value;
}

TEST(SearchSpaceSample, ConditionalActivation) {
  const SearchSpace s = fc_space();
  std::mt19937_64 rng(3);
  int seen_one = 0;
  for (int i = 0; i < 300; ++i) {
    const Configuration c = s.sample_uniform(rng);
    const auto k = std::get<std::int64_t>(c.at("fc_layers"));
    EXPECT_EQ(c.size(), 1u + 2u * static_cast<std::size_t>(k));
    if (k == 1) {
      ++seen_one;
      EXPECT_TRUE(c.contains("neurons_1"));
      EXPECT_FALSE(c.contains("neurons_2"));
      EXPECT_FALSE(c.contains("neurons_3"));
    }
    EXPECT_TRUE(s.contains(c));
  }
  EXPECT_GT(seen_one, 0);
}

TEST(SearchSpaceSample, DeterministicAndCoversDomains) {
  const SearchSpace s = load_space(std::string(AUTOTUNE_TEST_DATA_DIR) + "/spaces/table1.json");
  std::mt19937_64 a(11), b(11);
  std::map<std::string, std::set<std::string>> seen;
  for (int i = 0; i < 2000; ++i) {
    const Configuration ca = s.sample_uniform(a);
    ASSERT_EQ(ca, s.sample_uniform(b));
    for (const auto& [k, v] : ca) seen[k].insert(to_string(v));
  }
  for (const auto& p : s.params()) {
    if (p.active_if) continue;
    EXPECT_EQ(seen[p.name].size(), *domain_size(p.domain)) << p.name;
  }
}

TEST(SearchSpaceEncode, OneHotAndMinMax) {
  SearchSpace s({{"filters", Categorical{{"64", "128", "256", "512"}}, {}},
                 {"size", OrdinalGrid{{1, 2, 3, 5}}, {}}});
  const EncodedPoint e = s.encode({{"filters", std::string("256")}, {"size", 3.0}});
  EXPECT_EQ(e, (EncodedPoint{0, 0, 1, 0, 0.5}));
}

TEST(SearchSpaceEncode, UnknownParameterIsNamed) {
  const SearchSpace s = fc_space();
  try {
    s.encode({{"fc_layers", std::int64_t{1}}, {"neurons_1", 64.0}, {"dropout_1", 0.0}, {"bogus", 1.0}});
    FAIL() << "expected SpaceError";
  } catch (const SpaceError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
}

TEST(SearchSpaceEncode, ConditionalBlocksCarryActivityBit) {
  const SearchSpace s = fc_space();
  EXPECT_EQ(s.encoded_dim(), 1u + 3u * 4u);
  const EncodedPoint e = s.encode({{"fc_layers", std::int64_t{1}}, {"neurons_1", 64.0}, {"dropout_1", 0.0}});
  for (double v : e) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  // Layers 2 and 3 inactive: activity bits and values zero.
  for (std::size_t i = 5; i < e.size(); ++i) EXPECT_EQ(e[i], 0.0);
}

TEST(SearchSpaceEncode, FcStackRoundTripIsExhaustive) {
  const SearchSpace s = fc_space();
  const auto all = s.enumerate(1'000'000);
  ASSERT_EQ(all.size(), fc_count_by_loops());
  for (const auto& c : all) ASSERT_EQ(s.decode(s.encode(c)), c);
}

TEST(SearchSpaceDecode, TieGoesToLowerIndex) {
  SearchSpace s({{"f", Categorical{{"64", "128", "256", "512"}}, {}}});
  const std::vector<double> p{0.4, 0.4, 0.1, 0.1};
  EXPECT_EQ(std::get<std::string>(s.decode(p).at("f")), "64");
}

TEST(SearchSpaceDecode, NearestGridValue) {
  SearchSpace s({{"g", OrdinalGrid{{1, 2, 3, 5}}, {}}});
  const std::vector<double> p{0.49};
  EXPECT_EQ(std::get<double>(s.decode(p).at("g")), 3.0);
}

TEST(SearchSpaceDecode, WrongLengthRejected) {
  SearchSpace s({{"g", OrdinalGrid{{1, 2, 3, 5}}, {}}});
  const std::vector<double> p{0.1, 0.2};
  EXPECT_THROW(s.decode(p), SpaceError);
}

TEST(SearchSpaceDecode, RandomPointsSnapIntoSpace) {
  const SearchSpace s = load_space(std::string(AUTOTUNE_TEST_DATA_DIR) + "/spaces/table1.json");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> p(s.encoded_dim());
    for (auto& v : p) v = u(rng);
    EXPECT_TRUE(s.contains(s.decode(p)));
  }
}

TEST(SearchSpaceCardinality, ProductRule) {
  SearchSpace s({{"a", Categorical{{"w", "x", "y", "z"}}, {}}, {"b", OrdinalGrid{{1, 2, 3}}, {}}});
  EXPECT_EQ(s.cardinality(), 12u);
}

TEST(SearchSpaceCardinality, FcStackMatchesEnumeration) {
  const SearchSpace s = fc_space();
  EXPECT_EQ(s.cardinality(), fc_count_by_loops());
  EXPECT_EQ(*s.cardinality(), 169455u);
}

TEST(SearchSpaceCardinality, ContinuousIsUnbounded) {
  SearchSpace s({{"a", OrdinalGrid{{1, 2}}, {}}, {"x", ContinuousRange{0, 1}, {}}});
  EXPECT_FALSE(s.cardinality().has_value());
}

TEST(SearchSpaceEncode, InjectiveOnSmallSpaces) {
  const SearchSpace mq = load_space(std::string(AUTOTUNE_TEST_DATA_DIR) + "/spaces/mixed_quadratic.json");
  SearchSpace cond({{"k", IntegerRange{1, 3}, {}},
                    {"a", OrdinalGrid{{1, 2, 4}}, Condition{"k", {std::int64_t{2}, std::int64_t{3}}}},
                    {"b", Categorical{{"p", "q"}}, Condition{"k", {std::int64_t{3}}}},
                    {"c", IntegerRange{0, 2}, {}}});
  for (const SearchSpace* s : std::vector<const SearchSpace*>{&mq, &cond}) {
    const auto all = s->enumerate(10000);
    ASSERT_EQ(all.size(), *s->cardinality());
    std::set<EncodedPoint> points;
    for (const auto& c : all) points.insert(s->encode(c));
    EXPECT_EQ(points.size(), all.size());
  }
  EXPECT_EQ(*mq.cardinality(), 500u);
  EXPECT_EQ(*cond.cardinality(), 3u * (1 + 3 + 3 * 2));
}

TEST(SpaceIo, JsonRoundTripKeepsHash) {
  const SearchSpace s = load_space(std::string(AUTOTUNE_TEST_DATA_DIR) + "/spaces/table1.json");
  const SearchSpace back = space_from_json(space_to_json(s));
  EXPECT_EQ(back.hash(), s.hash());
  EXPECT_EQ(back.cardinality(), s.cardinality());
}

TEST(SpaceIo, ConfigJsonIsTypedBySpace) {
  const SearchSpace s = fc_space();
  const Configuration c{{"fc_layers", std::int64_t{2}}, {"neurons_1", 64.0}, {"dropout_1", 0.0},
                        {"neurons_2", 1024.0}, {"dropout_2", 1.0}};
  EXPECT_EQ(config_from_json(config_to_json(c), s), c);
}
