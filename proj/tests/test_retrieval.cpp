#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support/oracles.hpp"
#include "voxloc/error.hpp"
#include "voxloc/retrieval.hpp"
#include "voxloc/seeds.hpp"

using namespace voxloc;
using eval::DescriptorDB;
using eval::EvalSplit;
using eval::Record;
using Eigen::VectorXd;

namespace {

VectorXd vec1(double x) {
    VectorXd v(1);
    v << x;
    return v;
}

VectorXd random_vec(Rng& rng, Eigen::Index dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = g(rng);
    return v;
}

} // namespace

TEST_CASE("knn: exact duplicate ranks first with distance zero") {
    Rng rng = make_rng(1);
    DescriptorDB db;
    VectorXd q = random_vec(rng, 8);
    db.records.push_back({"clone", q, 0, 0, "t0"});
    for (int i = 0; i < 20; ++i)
        db.records.push_back({"r" + std::to_string(i), random_vec(rng, 8), 0, 0, "t0"});
    auto nn = eval::knn(q, db, 3);
    REQUIRE(nn.size() == 3);
    CHECK(nn[0].cloud_id == "clone");
    CHECK(nn[0].distance == 0.0);
}

TEST_CASE("knn: ties broken by cloud id") {
    DescriptorDB db;
    db.records.push_back({"b", vec1(3.0), 0, 0, "t0"});
    db.records.push_back({"a", vec1(1.0), 0, 0, "t0"});
    db.records.push_back({"c", vec1(7.0), 0, 0, "t0"});
    auto nn = eval::knn(vec1(2.0), db, 2);
    REQUIRE(nn.size() == 2);
    // distances: a -> 1, b -> 1, c -> 5; tie between a and b broken by id
    CHECK(nn[0].cloud_id == "a");
    CHECK(nn[1].cloud_id == "b");
    CHECK(nn[0].distance == doctest::Approx(1.0));
}

TEST_CASE("knn: n larger than the database returns everything") {
    Rng rng = make_rng(2);
    DescriptorDB db;
    for (int i = 0; i < 5; ++i)
        db.records.push_back({"r" + std::to_string(i), random_vec(rng, 4), 0, 0, "t0"});
    CHECK(eval::knn(random_vec(rng, 4), db, 50).size() == 5);
    DescriptorDB empty;
    CHECK_THROWS_AS(eval::knn(random_vec(rng, 4), empty, 1), Error);
}

TEST_CASE("knn matches a brute-force full sort on a random database") {
    Rng rng = make_rng(3);
    DescriptorDB db;
    for (int i = 0; i < 500; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "r%04d", i);
        db.records.push_back({id, random_vec(rng, 64), 0, 0, "t0"});
    }
    for (int trial = 0; trial < 5; ++trial) {
        VectorXd q = random_vec(rng, 64);
        auto nn = eval::knn(q, db, 10);

        std::vector<std::pair<double, std::string>> all;
        for (const auto& r : db.records)
            all.emplace_back((r.descriptor - q).norm(), r.cloud_id);
        std::sort(all.begin(), all.end());
        REQUIRE(nn.size() == 10);
        for (int i = 0; i < 10; ++i) {
            CHECK(nn[static_cast<std::size_t>(i)].cloud_id == all[static_cast<std::size_t>(i)].second);
            CHECK(nn[static_cast<std::size_t>(i)].distance ==
                  doctest::Approx(all[static_cast<std::size_t>(i)].first).epsilon(1e-12));
        }
    }
}

TEST_CASE("recall: co-located clones give 100 at rank 1") {
    Rng rng = make_rng(4);
    EvalSplit split;
    for (int i = 0; i < 10; ++i) {
        VectorXd d = random_vec(rng, 8);
        const double e = 1000.0 * i;
        split.queries.records.push_back({"q" + std::to_string(i), d, e, 0, "t0"});
        split.database.records.push_back({"d" + std::to_string(i), d, e + 1.0, 0, "t1"});
    }
    CHECK(eval::recall_at_n(split, 1) == 100.0);
}

TEST_CASE("recall: matches beyond rank n do not count") {
    EvalSplit split;
    split.queries.records.push_back({"q", vec1(0.0), 0, 0, "t0"});
    // true match (within 25 m) is the farthest descriptor
    split.database.records.push_back({"far_true", vec1(10.0), 5, 0, "t1"});
    split.database.records.push_back({"near_false1", vec1(0.1), 500, 0, "t1"});
    split.database.records.push_back({"near_false2", vec1(0.2), 600, 0, "t1"});
    CHECK(eval::recall_at_n(split, 1) == 0.0);
    CHECK(eval::recall_at_n(split, 2) == 0.0);
    CHECK(eval::recall_at_n(split, 3) == 100.0);
}

TEST_CASE("recall is non-decreasing in n and matches the brute-force oracle") {
    Rng rng = make_rng(5);
    // synthetic 20-query / 80-database fixture with planted geometry
    EvalSplit split;
    std::vector<oracles::FlatRecord> oq, od;
    std::uniform_real_distribution<double> pos(0.0, 2000.0);
    for (int i = 0; i < 20; ++i) {
        Record r{"q" + std::to_string(i), random_vec(rng, 16), pos(rng), pos(rng), "t0"};
        split.queries.records.push_back(r);
        oq.push_back({r.descriptor, r.easting, r.northing});
    }
    for (int i = 0; i < 80; ++i) {
        Record r{"d" + std::to_string(i), random_vec(rng, 16), pos(rng), pos(rng), "t1"};
        // plant a near-duplicate co-located record for half the queries
        if (i < 10) {
            r.descriptor = split.queries.records[static_cast<std::size_t>(i)].descriptor +
                           0.01 * random_vec(rng, 16);
            r.easting = split.queries.records[static_cast<std::size_t>(i)].easting + 3.0;
            r.northing = split.queries.records[static_cast<std::size_t>(i)].northing;
        }
        split.database.records.push_back(r);
        od.push_back({r.descriptor, r.easting, r.northing});
    }

    double prev = 0.0;
    for (int n : {1, 2, 5, 10, 20, 40, 80}) {
        const double got = eval::recall_at_n(split, n);
        const double expected = oracles::brute_force_recall(oq, od, n, 25.0);
        CHECK(got == doctest::Approx(expected).epsilon(1e-12));
        CHECK(got >= prev);
        prev = got;
    }
}

TEST_CASE("one percent rounding: round half up with floor one") {
    CHECK(eval::one_percent_n(50) == 1);
    CHECK(eval::one_percent_n(100) == 1);
    CHECK(eval::one_percent_n(149) == 1);
    CHECK(eval::one_percent_n(150) == 2);
    CHECK(eval::one_percent_n(250) == 3); // round(2.5) = 3 under round-half-up
    CHECK(eval::one_percent_n(1000) == 10);
    CHECK(eval::one_percent_n(3) == 1);
}

TEST_CASE("AR@1% can reach 100 when AR@1 does not") {
    Rng rng = make_rng(6);
    // 300-record database: true match planted at descriptor rank 2,
    // a decoy at rank 1
    EvalSplit split;
    for (int i = 0; i < 5; ++i) {
        VectorXd q = random_vec(rng, 8);
        split.queries.records.push_back({"q" + std::to_string(i), q, 10000.0 * i, 0, "t0"});
        VectorXd decoy = q + 0.001 * random_vec(rng, 8);
        VectorXd truth = q + 0.01 * random_vec(rng, 8);
        split.database.records.push_back(
            {"decoy" + std::to_string(i), decoy, 10000.0 * i + 900.0, 0, "t1"});
        split.database.records.push_back(
            {"true" + std::to_string(i), truth, 10000.0 * i + 2.0, 0, "t1"});
    }
    for (int i = 0; i < 290; ++i) {
        VectorXd far_away = random_vec(rng, 8).array() + 100.0;
        split.database.records.push_back(
            {"filler" + std::to_string(i), far_away, -99999, -99999, "t1"});
    }

    CHECK(eval::recall_at_n(split, 1) == 0.0);
    // |db| = 300 -> n = 3 covers the planted match
    CHECK(eval::one_percent_n(split.database.records.size()) == 3);
    CHECK(eval::average_recall_at_1pct(split) == 100.0);
}

TEST_CASE("build_eval_split partitions by traversal") {
    Rng rng = make_rng(7);
    DescriptorDB db;
    for (int t = 0; t < 3; ++t)
        for (int i = 0; i < 10; ++i)
            db.records.push_back({"t" + std::to_string(t) + "_" + std::to_string(i),
                                  random_vec(rng, 4), 0, 0, "t" + std::to_string(t)});
    EvalSplit split = eval::build_eval_split(db, "t1");
    CHECK(split.queries.records.size() == 10);
    CHECK(split.database.records.size() == 20);
    for (const auto& r : split.queries.records) CHECK(r.traversal_id == "t1");
    for (const auto& r : split.database.records) CHECK(r.traversal_id != "t1");

    try {
        eval::build_eval_split(db, "t9");
        FAIL("expected UnknownTraversal");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unknown_traversal);
    }

    DescriptorDB single;
    for (int i = 0; i < 5; ++i)
        single.records.push_back({"r" + std::to_string(i), random_vec(rng, 4), 0, 0, "t0"});
    try {
        eval::build_eval_split(single, "t0");
        FAIL("expected SingleTraversal");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::single_traversal);
    }
}

TEST_CASE("rotating evaluation pools every traversal's queries") {
    Rng rng = make_rng(8);
    DescriptorDB db;
    // 10 locations x 3 traversals of co-located near-duplicates
    for (int t = 0; t < 3; ++t)
        for (int i = 0; i < 10; ++i) {
            VectorXd base = VectorXd::Zero(4);
            base(0) = 10.0 * i;
            db.records.push_back({"t" + std::to_string(t) + "_l" + std::to_string(i),
                                  base + 0.01 * random_vec(rng, 4), 100.0 * i, 0.0,
                                  "t" + std::to_string(t)});
        }
    auto report = eval::evaluate_rotating(db, {1, 5});
    CHECK(report.n_queries == 30); // 3 rotations x 10 queries
    CHECK(report.n_db == 20);
    REQUIRE(report.recall_at.size() == 2);
    CHECK(report.recall_at[0].second == 100.0);
    CHECK(report.ar_at_1pct == 100.0);
    CHECK(report.per_traversal_ar1.size() == 3);
}

TEST_CASE("descriptor db json-lines round trip") {
    Rng rng = make_rng(9);
    DescriptorDB db;
    for (int i = 0; i < 7; ++i)
        db.records.push_back({"id" + std::to_string(i), random_vec(rng, 6),
                              620000.125 + i, 5735000.5 - i, "t" + std::to_string(i % 2)});
    const auto path = std::filesystem::temp_directory_path() / "voxloc_test_db.jsonl";
    eval::save_db(db, path);
    DescriptorDB back = eval::load_db(path);
    REQUIRE(back.records.size() == db.records.size());
    for (std::size_t i = 0; i < db.records.size(); ++i) {
        CHECK(back.records[i].cloud_id == db.records[i].cloud_id);
        CHECK(back.records[i].traversal_id == db.records[i].traversal_id);
        CHECK(back.records[i].easting == db.records[i].easting);
        CHECK((back.records[i].descriptor - db.records[i].descriptor).norm() == 0.0);
    }

    std::ofstream os(path, std::ios::app);
    os << "{not json\n";
    os.close();
    CHECK_THROWS_AS(eval::load_db(path), Error);
    std::filesystem::remove(path);
}

TEST_CASE("duplicate ids are rejected") {
    DescriptorDB db;
    db.records.push_back({"same", vec1(0.0), 0, 0, "t0"});
    db.records.push_back({"same", vec1(1.0), 0, 0, "t1"});
    CHECK_THROWS_AS(db.validate(), Error);
}
