#include "support.hpp"

#include "deepchoice/dataio.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace deepchoice;
using namespace testing_support;

namespace {

AttributeSchema twoByThree() {
    return AttributeSchema({{"color", {"red", "blue"}, 0, false}, {"size", {"s", "m", "l"}, 0, false}});
}

AttributeSchema letters() {
    return AttributeSchema::fromJson(nlohmann::json::parse(R"({"attributes":[
        {"name":"first","levels":["A","B"]},
        {"name":"second","levels":["C","D"],"reference":"C"}]})"));
}

struct Files {
    std::filesystem::path dir, profiles, covariates;
};

Files writeLetters(const std::string& tag, const std::string& profileRows, const std::string& covRows) {
    Files f;
    f.dir = scratchDir(tag);
    f.profiles = f.dir / "profiles.csv";
    f.covariates = f.dir / "covariates.csv";
    writeText(f.profiles, "respondent_id,task_id,alternative,chosen,first,second\n" + profileRows);
    writeText(f.covariates, "respondent_id,age\n" + covRows);
    return f;
}

const std::string kTwoRespondents =
    "r1,1,1,1,B,D\n"
    "r1,1,2,0,A,C\n"
    "r1,2,1,0,A,D\n"
    "r1,2,2,1,B,C\n"
    "r2,1,1,0,A,C\n"
    "r2,1,2,1,B,D\n";

}  // namespace

TEST(Schema, EncodesMixedLevels) {
    const auto s = twoByThree();
    EXPECT_EQ(s.width(), 3u);
    const Vector v = s.encode({AttributeValue::categorical(1), AttributeValue::categorical(2)});
    EXPECT_EQ(v, (Vector(3) << 1, 0, 1).finished());
}

TEST(Schema, AllReferenceIsZero) {
    const auto s = twoByThree();
    EXPECT_TRUE(s.encode({AttributeValue::categorical(0), AttributeValue::categorical(0)}).isZero(0.0));
}

TEST(Schema, ContinuousPassThrough) {
    std::vector<AttributeSpec> attrs;
    for (int b = 1; b <= 6; ++b) attrs.push_back({"rate" + std::to_string(b), {}, 0, true});
    attrs.push_back({"revenue", {}, 0, true});
    const AttributeSchema s(attrs);
    ProfileSelection sel;
    for (double r : {10.0, 15.0, 25.0, 28.0, 33.0, 35.0, 0.0}) sel.push_back(AttributeValue::numeric(r));
    EXPECT_EQ(s.encode(sel), (Vector(7) << 10, 15, 25, 28, 33, 35, 0).finished());
}

TEST(Schema, DummyDifferenceForThreeLevels) {
    const AttributeSchema s({{"size", {"s", "m", "l"}, 0, false}});
    const Vector d = s.encode({AttributeValue::categorical(2)}) - s.encode({AttributeValue::categorical(1)});
    EXPECT_EQ(d, (Vector(2) << -1, 1).finished());
}

TEST(Schema, DecodeInvertsEncode) {
    const auto s = twoByThree();
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
            ProfileSelection sel{AttributeValue::categorical(a), AttributeValue::categorical(b)};
            EXPECT_EQ(s.decode(s.encode(sel)), sel);
        }
}

TEST(Schema, NonzeroReferenceLevel) {
    const AttributeSchema s({{"size", {"s", "m", "l"}, 1, false}});
    EXPECT_EQ(s.columnNames(), (std::vector<std::string>{"size:s", "size:l"}));
    EXPECT_TRUE(s.encode({AttributeValue::categorical(1)}).isZero(0.0));
    EXPECT_EQ(s.decode(s.encode({AttributeValue::categorical(2)}))[0].level, 2u);
}

TEST(Schema, RejectsBadDefinitions) {
    EXPECT_THROW(AttributeSchema({{"x", {"only"}, 0, false}}), SchemaError);
    EXPECT_THROW(AttributeSchema({{"x", {"a", "a"}, 0, false}}), SchemaError);
    EXPECT_THROW(AttributeSchema({{"x", {"a", "b"}, 0, false}, {"x", {"a", "b"}, 0, false}}), SchemaError);
    EXPECT_THROW(AttributeSchema::fromJson(nlohmann::json::parse(R"({"attributes":[{"name":"x","levels":["a","b"],"reference":"z"}]})")),
                 SchemaError);
}

TEST(Schema, ResolvesColumnKeys) {
    const auto s = twoByThree();
    EXPECT_EQ(s.columnIndex("size:l"), 2u);
    EXPECT_EQ(s.columnIndex("blue"), 0u);
    EXPECT_EQ(s.columnIndex("1"), 1u);
    EXPECT_THROW(s.columnIndex("size:xl"), SchemaError);
}

TEST(Schema, JsonRoundTrip) {
    const auto s = letters();
    const auto back = AttributeSchema::fromJson(s.toJson());
    EXPECT_EQ(back.columnNames(), s.columnNames());
}

TEST(Loader, DifferencesProfiles) {
    const auto f = writeLetters("load_basic", kTwoRespondents, "r1,30\nr2,50\n");
    const auto ds = loadDataset(f.profiles, f.covariates, letters());
    ASSERT_EQ(ds.respondents(), 2u);
    ASSERT_EQ(ds.rows(), 3u);
    EXPECT_EQ(Vector(ds.deltaX.row(0).transpose()), (Vector(2) << 1, 1).finished());
    EXPECT_EQ(ds.y[0], 1.0);
    EXPECT_EQ(Vector(ds.deltaX.row(1).transpose()), (Vector(2) << -1, 1).finished());
    EXPECT_EQ(ds.y[1], 0.0);
    EXPECT_EQ(ds.taskCount(0), 2u);
    EXPECT_EQ(ds.respondentOf[2], 1u);
}

TEST(Loader, IdenticalProfilesGiveZeroRow) {
    const auto f = writeLetters("load_ident",
                                kTwoRespondents + "r2,2,1,1,B,C\nr2,2,2,0,B,C\n", "r1,30\nr2,50\n");
    const auto ds = loadDataset(f.profiles, f.covariates, letters());
    EXPECT_TRUE(ds.deltaX.row(3).isZero(0.0));
}

TEST(Loader, AlternativeOrderIsIrrelevant) {
    const auto f = writeLetters("load_order",
                                "r1,1,2,0,A,C\nr1,1,1,1,B,D\nr1,2,2,1,B,C\nr1,2,1,0,A,D\nr2,1,2,1,B,D\nr2,1,1,0,A,C\n",
                                "r1,30\nr2,50\n");
    const auto ds = loadDataset(f.profiles, f.covariates, letters());
    EXPECT_EQ(Vector(ds.deltaX.row(0).transpose()), (Vector(2) << 1, 1).finished());
    EXPECT_EQ(ds.y[0], 1.0);
}

TEST(Loader, SwappingAlternativesFlipsRows) {
    const auto f = writeLetters("load_swap_a", kTwoRespondents, "r1,30\nr2,50\n");
    const auto g = writeLetters("load_swap_b",
                                "r1,1,2,1,B,D\nr1,1,1,0,A,C\nr1,2,2,0,A,D\nr1,2,1,1,B,C\nr2,1,2,0,A,C\nr2,1,1,1,B,D\n",
                                "r1,30\nr2,50\n");
    const auto a = loadDataset(f.profiles, f.covariates, letters());
    const auto b = loadDataset(g.profiles, g.covariates, letters());
    EXPECT_TRUE((a.deltaX + b.deltaX).isZero(0.0));
    EXPECT_TRUE((a.y + b.y).isOnes(0.0));
}

TEST(Loader, MissingCovariateRowNamesRespondent) {
    const auto f = writeLetters("load_missing_cov", kTwoRespondents, "r1,30\n");
    try {
        loadDataset(f.profiles, f.covariates, letters());
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("'r2'"), std::string::npos);
    }
}

TEST(Loader, MissingFileNamesPath) {
    const auto f = writeLetters("load_missing_file", kTwoRespondents, "r1,30\nr2,50\n");
    std::filesystem::remove(f.covariates);
    try {
        loadDataset(f.profiles, f.covariates, letters());
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find(f.covariates.string()), std::string::npos);
    }
}

TEST(Loader, RejectsThreeAlternatives) {
    const auto f = writeLetters("load_three", kTwoRespondents + "r2,1,2,0,A,D\n", "r1,30\nr2,50\n");
    try {
        loadDataset(f.profiles, f.covariates, letters());
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("task '1'"), std::string::npos);
    }
}

TEST(Loader, RejectsDoubleChoice) {
    const auto f = writeLetters("load_double", "r1,1,1,1,B,D\nr1,1,2,1,A,C\n", "r1,30\n");
    EXPECT_THROW(loadDataset(f.profiles, f.covariates, letters()), LoadError);
}

TEST(Loader, UnknownLevelIsSchemaError) {
    const auto f = writeLetters("load_level", "r1,1,1,1,B,Q\nr1,1,2,0,A,C\n", "r1,30\n");
    EXPECT_THROW(loadDataset(f.profiles, f.covariates, letters()), SchemaError);
}

TEST(Loader, WriteThenReadRoundTrips) {
    const auto f = writeLetters("load_roundtrip", kTwoRespondents, "r1,30\nr2,50\n");
    const auto ds = loadDataset(f.profiles, f.covariates, letters());
    writeLongFormat(ds, f.dir / "again.csv", f.dir / "again_cov.csv");
    const auto back = loadDataset(f.dir / "again.csv", f.dir / "again_cov.csv", letters());
    EXPECT_EQ(back.deltaX, ds.deltaX);
    EXPECT_EQ(back.y, ds.y);
    EXPECT_TRUE(back.zRaw.isApprox(ds.zRaw));
}

TEST(Loader, PreDifferencedInput) {
    const auto dir = scratchDir("load_diff");
    writeText(dir / "rows.csv", "respondent_id,task_id,y,first:B,second:D\nr1,1,1,1,1\nr1,2,0,-1,1\nr2,1,0,-1,-1\n");
    writeText(dir / "cov.csv", "respondent_id,age\nr1,30\nr2,50\n");
    const auto ds = loadDifferencedDataset(dir / "rows.csv", dir / "cov.csv", letters());
    EXPECT_FALSE(ds.hasProfiles());
    EXPECT_EQ(ds.rows(), 3u);
    EXPECT_EQ(Vector(ds.deltaX.row(2).transpose()), (Vector(2) << -1, -1).finished());
}

TEST(Standardize, ZeroMeanUnitSdAndIdempotent) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(3.0, 2.0);
    Matrix z(200, 3);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < 3; ++j) z(i, j) = n(rng);
    standardizeColumns(z, {"a", "b", "c"});
    for (Eigen::Index j = 0; j < 3; ++j) {
        EXPECT_NEAR(z.col(j).mean(), 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt((z.col(j).array() - z.col(j).mean()).square().sum() / 199.0), 1.0, 1e-12);
    }
    Matrix again = z;
    standardizeColumns(again, {"a", "b", "c"});
    EXPECT_TRUE(again.isApprox(z, 1e-12));
}

TEST(Standardize, DropsConstantColumnWithWarning) {
    std::vector<std::string> warnings;
    auto old = setWarningHandler([&](const std::string& w) { warnings.push_back(w); });
    Matrix z(4, 2);
    z << 1, 7, 2, 7, 3, 7, 4, 7;
    const auto s = standardizeColumns(z, {"x", "flat"});
    setWarningHandler(old);
    EXPECT_EQ(z.cols(), 1);
    EXPECT_EQ(s.dropped, std::vector<std::string>{"flat"});
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("flat"), std::string::npos);
}

TEST(Dataset, DesignVarianceOfUniformBinary) {
    const auto schema = binarySchema(1);
    std::mt19937_64 rng(11);
    std::bernoulli_distribution coin(0.5);
    const std::size_t n = 10000;
    ChoiceData d;
    d.respondentIds = {"a", "b"};
    d.taskCounts = {n / 2, n / 2};
    d.profileA.resize(n, 1);
    d.profileB.resize(n, 1);
    d.y.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        d.profileA(static_cast<Eigen::Index>(r), 0) = coin(rng);
        d.profileB(static_cast<Eigen::Index>(r), 0) = coin(rng);
        d.y[static_cast<Eigen::Index>(r)] = coin(rng);
    }
    d.covariates = (Matrix(2, 1) << 0, 1).finished();
    const auto ds = buildDataset(schema, std::move(d));
    EXPECT_NEAR(ds.designVar[0], 0.25, 0.01);
}

TEST(Dataset, SubsetKeepsRowsTogether) {
    const auto schema = binarySchema(1);
    RowMatrix dx(5, 1);
    dx << 1, -1, 1, 0, -1;
    const auto ds = fromDifferences(schema, dx, (Vector(5) << 1, 0, 1, 0, 1).finished(), {2, 1, 2});
    const auto sub = ds.subsetRespondents({2, 0});
    EXPECT_EQ(sub.rows(), 4u);
    EXPECT_EQ(sub.respondentIds, (std::vector<std::string>{"r3", "r1"}));
    EXPECT_EQ(sub.deltaX(0, 0), 0.0);
    EXPECT_EQ(sub.deltaX(2, 0), 1.0);
    EXPECT_EQ(sub.z(1, 0), ds.z(0, 0));
}

TEST(Randomization, IdenticalColumnIsFlagged) {
    const auto schema = binarySchema(1);
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.5);
    const std::size_t m = 60;
    RowMatrix dx(m, 1);
    Matrix cov(m, 1);
    Vector y(m);
    for (std::size_t i = 0; i < m; ++i) {
        dx(static_cast<Eigen::Index>(i), 0) = coin(rng) ? 1.0 : -1.0;
        cov(static_cast<Eigen::Index>(i), 0) = dx(static_cast<Eigen::Index>(i), 0);
        y[static_cast<Eigen::Index>(i)] = coin(rng);
    }
    const auto ds = fromDifferences(schema, dx, y, std::vector<std::size_t>(m, 1), cov);
    const auto rc = randomizationCheck(ds);
    EXPECT_NEAR(rc.absCorrelation(0, 0), 1.0, 1e-12);
    ASSERT_EQ(rc.flagged.size(), 1u);
}

TEST(Randomization, ZeroVarianceColumnIsNotFlagged) {
    const auto schema = binarySchema(2);
    RowMatrix dx(4, 2);
    dx << 1, 1, -1, 0, 1, -1, -1, 0;
    auto ds = fromDifferences(schema, dx, (Vector(4) << 1, 0, 1, 0).finished(), {1, 1, 1, 1});
    ds.deltaX.col(1).setZero();
    const auto rc = randomizationCheck(ds);
    EXPECT_EQ(rc.absCorrelation(1, 0), 0.0);
    for (const auto& f : rc.flagged) EXPECT_NE(f.first, 1u);
}

// Null law: independent +-1 differences against respondent-level normal
// covariates at N = 10,000 rows. Each |corr| is ~N(0, 1e-4) under the null, so
// the 0.05 threshold sits far in the tail.
TEST(Randomization, NullCorrelationsStaySmall) {
    const auto schema = binarySchema(3);
    std::mt19937_64 rng(2024);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> n01;
    const std::size_t m = 1000, t = 10;
    std::size_t pairs = 0, exceed = 0;
    for (int rep = 0; rep < 40; ++rep) {
        RowMatrix dx(m * t, 3);
        Vector y(m * t);
        Matrix cov(m, 2);
        for (Eigen::Index r = 0; r < dx.rows(); ++r) {
            for (Eigen::Index k = 0; k < 3; ++k) dx(r, k) = coin(rng) ? 1.0 : -1.0;
            y[r] = coin(rng);
        }
        for (Eigen::Index i = 0; i < cov.rows(); ++i) cov(i, 0) = n01(rng), cov(i, 1) = coin(rng);
        const auto ds = fromDifferences(schema, dx, y, std::vector<std::size_t>(m, t), cov);
        const auto rc = randomizationCheck(ds);
        pairs += static_cast<std::size_t>(rc.absCorrelation.size());
        exceed += rc.flagged.size();
    }
    EXPECT_LE(static_cast<double>(exceed) / static_cast<double>(pairs), 0.01);
}
