#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "oracles.hpp"
#include "pheno/embedding.hpp"
#include "pheno/error.hpp"
#include "pheno/rng.hpp"

using namespace pheno;

namespace {

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("embedding table load: minimal file") {
    const std::string path = temp_file("emb_min.tsv");
    {
        std::ofstream out(path, std::ios::trunc);
        out << "PheCode:1\t1.0\t2.0\t3.0\n";
        out << "CUI:C1\t-1.0\t0.5\t0.25\n";
    }
    EmbeddingTable table = load_embedding_table(path);
    CHECK(table.size() == 2);
    CHECK(table.dimension() == 3);
    CHECK(table.vector_for("PheCode:1").at(1) == 2.0);
}

TEST_CASE("embedding table load: error paths") {
    const std::string path = temp_file("emb_bad.tsv");
    {
        std::ofstream out(path, std::ios::trunc);
        out << "A\t1.0\t2.0\n";
        out << "B\t1.0\tnope\n";
    }
    try {
        load_embedding_table(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }

    {
        std::ofstream out(path, std::ios::trunc);
        out << "A\t1.0\t2.0\n";
        out << "B\t1.0\n"; // ragged
    }
    CHECK_THROWS_AS(load_embedding_table(path), DataError);

    {
        std::ofstream out(path, std::ios::trunc);
        out << "A\t0.0\t0.0\n"; // zero vector
    }
    try {
        load_embedding_table(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("A") != std::string::npos);
    }
}

TEST_CASE("embedding table load: duplicate rows keep the last") {
    const std::string path = temp_file("emb_dup.tsv");
    {
        std::ofstream out(path, std::ios::trunc);
        out << "A\t1.0\t0.0\n";
        out << "A\t0.0\t2.0\n";
    }
    EmbeddingLoadStats stats;
    EmbeddingTable table = load_embedding_table(path, &stats);
    CHECK(table.size() == 1);
    CHECK(stats.duplicates == 1);
    CHECK(table.vector_for("A").at(1) == 2.0);
}

TEST_CASE("embedding table 500-row round trip") {
    Rng rng(21);
    EmbeddingTable table;
    char name[32];
    for (int i = 0; i < 500; ++i) {
        std::snprintf(name, sizeof(name), "SYN:c%04d", i);
        Tensor v({8});
        for (int j = 0; j < 8; ++j) v.at(j) = rng.normal();
        table.insert(name, v);
    }
    const std::string path = temp_file("emb_round.tsv");
    save_embedding_table(table, path);
    EmbeddingTable loaded = load_embedding_table(path);
    REQUIRE(loaded.size() == table.size());
    for (const auto& [id, v] : table.entries()) {
        const Tensor& w = loaded.vector_for(id);
        for (int64_t j = 0; j < v.size(); ++j) CHECK(v.at(j) == w.at(j)); // exact round trip
    }
}

TEST_CASE("cosine similarity analytic cases") {
    Tensor a = Tensor::vec({1.0, 2.0, 2.0});
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));

    CHECK(cosine_similarity(Tensor::vec({1, 0}), Tensor::vec({0, 1})) == 0.0);

    Tensor b = Tensor::vec({2.0, 0.0, 0.0});
    CHECK(cosine_similarity(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    CHECK_THROWS_AS(cosine_similarity(Tensor::vec({0, 0}), Tensor::vec({1, 0})), NumericError);
}

TEST_CASE("cosine similarity symmetry and scale invariance") {
    Rng rng(22);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor a({5}), b({5});
        for (int j = 0; j < 5; ++j) {
            a.at(j) = rng.normal();
            b.at(j) = rng.normal();
        }
        const double lambda = rng.uniform(0.1, 10.0);
        CHECK(std::fabs(cosine_similarity(a, b) - cosine_similarity(b, a)) < 1e-12);
        CHECK(std::fabs(cosine_similarity(a * lambda, b) - cosine_similarity(a, b)) < 1e-12);
    }
}

namespace {

EmbeddingTable make_table(const std::map<std::string, std::vector<double>>& vecs) {
    EmbeddingTable t;
    for (const auto& [id, v] : vecs) t.insert(id, Tensor::vec(v));
    return t;
}

} // namespace

TEST_CASE("select_features: under capacity keeps everything") {
    EmbeddingTable table = make_table({{"X:anchor", {1, 0}}, {"A", {0.9, 0.1}}, {"B", {0, 1}}, {"C", {0.5, 0.5}}});
    AggregatedConcepts agg{{"A", 2}, {"B", 1}, {"C", 4}};
    AggregatedConcepts out = select_features(agg, table, "X:anchor", 5);
    CHECK(out.size() == 3);
    // ordered by descending similarity to the anchor
    CHECK(out[0].concept_id == "A");
    CHECK(out[1].concept_id == "C");
    CHECK(out[2].concept_id == "B");
    CHECK(out[0].count == 2);
}

TEST_CASE("select_features: anchor forced in over a similarity tie") {
    // five concepts collinear with the anchor tie at similarity 1 and sort
    // lexicographically before it; the anchor must displace the last one
    EmbeddingTable table = make_table({{"Z:anchor", {2, 0}},
                                       {"A1", {1, 0}},
                                       {"A2", {3, 0}},
                                       {"A3", {0.5, 0}},
                                       {"A4", {1, 0}},
                                       {"A5", {4, 0}}});
    AggregatedConcepts agg{{"A1", 1}, {"A2", 2}, {"A3", 3}, {"A4", 4}, {"A5", 5}, {"Z:anchor", 7}};
    AggregatedConcepts out = select_features(agg, table, "Z:anchor", 3);
    REQUIRE(out.size() == 3);
    CHECK(out[0].concept_id == "A1");
    CHECK(out[1].concept_id == "A2");
    CHECK(out[2].concept_id == "Z:anchor");
    CHECK(out[2].count == 7); // count preserved through forcing
}

TEST_CASE("select_features: anchor absent from record is not injected") {
    EmbeddingTable table = make_table({{"X:anchor", {1, 0}}, {"A", {0.9, 0.1}}, {"B", {0, 1}}});
    AggregatedConcepts agg{{"A", 2}, {"B", 1}};
    AggregatedConcepts out = select_features(agg, table, "X:anchor", 1);
    REQUIRE(out.size() == 1);
    CHECK(out[0].concept_id == "A");
}

TEST_CASE("select_features matches the exhaustive oracle") {
    Rng rng(23);
    for (int rep = 0; rep < 50; ++rep) {
        EmbeddingTable table;
        std::map<std::string, double> sims;
        Tensor anchor_vec({4});
        for (int j = 0; j < 4; ++j) anchor_vec.at(j) = rng.normal();
        table.insert("X:anchor", anchor_vec);
        AggregatedConcepts agg;
        char name[16];
        for (int i = 0; i < 40; ++i) {
            std::snprintf(name, sizeof(name), "C%02d", i);
            Tensor v({4});
            for (int j = 0; j < 4; ++j) v.at(j) = rng.normal();
            table.insert(name, v);
            agg.push_back({name, static_cast<int64_t>(1 + rng.uniform_int(9))});
            sims[name] = cosine_similarity(v, anchor_vec);
        }
        if (rng.bernoulli(0.5)) agg.push_back({"X:anchor", 3});
        sims["X:anchor"] = 1.0;

        AggregatedConcepts got = select_features(agg, table, "X:anchor", 10);
        std::vector<std::pair<std::string, int64_t>> input;
        for (const auto& cc : agg) input.emplace_back(cc.concept_id, cc.count);
        auto expected = oracle::select_sorted(input, sims, "X:anchor", 10);
        REQUIRE(got.size() == expected.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].concept_id == expected[i].first);
            CHECK(got[i].count == expected[i].second);
        }
    }
}

TEST_CASE("select_features invariants: subset, anchor retention, determinism") {
    Rng rng(24);
    EmbeddingTable table;
    Tensor anchor_vec = Tensor::vec({1, 1, 0});
    table.insert("X:anchor", anchor_vec);
    AggregatedConcepts agg{{"X:anchor", 2}};
    char name[16];
    for (int i = 0; i < 30; ++i) {
        std::snprintf(name, sizeof(name), "C%02d", i);
        Tensor v({3});
        for (int j = 0; j < 3; ++j) v.at(j) = rng.normal();
        table.insert(name, v);
        agg.push_back({name, static_cast<int64_t>(1 + rng.uniform_int(5))});
    }
    AggregatedConcepts out1 = select_features(agg, table, "X:anchor", 8);
    AggregatedConcepts out2 = select_features(agg, table, "X:anchor", 8);
    CHECK(out1 == out2);
    CHECK(out1.size() == 8);
    bool anchor_found = false;
    for (const auto& cc : out1) {
        auto it = std::find_if(agg.begin(), agg.end(),
                               [&cc](const ConceptCount& in) { return in.concept_id == cc.concept_id; });
        REQUIRE(it != agg.end());
        CHECK(it->count == cc.count);
        if (cc.concept_id == "X:anchor") anchor_found = true;
    }
    CHECK(anchor_found);

    CHECK_THROWS_AS(select_features(agg, table, "X:missing", 8), ConfigError);
}
