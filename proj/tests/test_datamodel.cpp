#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pheno/cohort.hpp"
#include "pheno/error.hpp"
#include "pheno/synthetic.hpp"

using namespace pheno;

namespace {

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

EmbeddingTable tiny_table() {
    EmbeddingTable t;
    t.insert("X:anchor", Tensor::vec({1, 0}));
    t.insert("A", Tensor::vec({0, 1}));
    t.insert("B", Tensor::vec({1, 1}));
    return t;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
}

Cohort gold_cohort(int n_pos, int n_neg) {
    Cohort c;
    c.anchor = "X:anchor";
    for (int i = 0; i < n_pos + n_neg; ++i) {
        PatientRecord p;
        p.patient_id = "P" + std::to_string(i);
        p.windows.push_back({1, {{"X:anchor", 1}}});
        p.label = {LabelSource::gold, i < n_pos ? 1.0 : 0.0};
        c.patients.push_back(std::move(p));
    }
    return c;
}

} // namespace

TEST_CASE("load_cohort: minimal record") {
    const std::string path = temp_file("cohort_min.jsonl");
    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",2]]}],"label":{"source":"gold","value":1}})"});
    Cohort c = load_cohort(path, tiny_table(), "X:anchor");
    REQUIRE(c.patients.size() == 1);
    CHECK(c.patients[0].windows[0].events[0].count == 2);
    CHECK(c.patients[0].is_gold());
}

TEST_CASE("load_cohort: duplicate concept in one window is a parse error with line number") {
    const std::string path = temp_file("cohort_dup.jsonl");
    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",1]]}],"label":{"source":"silver","value":0.5}})",
                       R"({"patient_id":"p2","windows":[{"t":1,"events":[["A",1],["A",2]]}],"label":{"source":"silver","value":0.5}})"});
    try {
        load_cohort(path, tiny_table(), "X:anchor");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("duplicate concept") != std::string::npos);
    }
}

TEST_CASE("load_cohort: malformed JSON, bad labels, bad windows") {
    const std::string path = temp_file("cohort_bad.jsonl");
    write_lines(path, {"{not json"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:anchor"), DataError);

    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",1]]}],"label":{"source":"gold","value":0.5}})"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:anchor"), DataError); // gold must be 0/1

    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":2,"events":[]},{"t":1,"events":[]}],"label":{"source":"gold","value":1}})"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:anchor"), DataError); // indices must increase

    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",0]]}],"label":{"source":"gold","value":1}})"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:anchor"), DataError); // counts >= 1

    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[]}],"label":{"source":"silver","value":1.5}})"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:anchor"), DataError); // silver in [0,1]
}

TEST_CASE("load_cohort: anchor missing from table is a configuration error") {
    const std::string path = temp_file("cohort_anchor.jsonl");
    write_lines(path, {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",1]]}],"label":{"source":"gold","value":1}})"});
    CHECK_THROWS_AS(load_cohort(path, tiny_table(), "X:not-there"), ConfigError);
}

TEST_CASE("load_cohort: unknown concepts are dropped with per-concept counts") {
    const std::string path = temp_file("cohort_drop.jsonl");
    write_lines(path,
                {R"({"patient_id":"p1","windows":[{"t":1,"events":[["A",1],["UNKNOWN:1",4],["UNKNOWN:2",1]]},{"t":2,"events":[["UNKNOWN:1",2]]}],"label":{"source":"gold","value":1}})"});
    CohortLoadStats stats;
    Cohort c = load_cohort(path, tiny_table(), "X:anchor", &stats);
    CHECK(c.patients[0].windows[0].events.size() == 1);
    CHECK(stats.total_dropped == 3);
    CHECK(stats.dropped_events.at("UNKNOWN:1") == 2);
    CHECK(stats.dropped_events.at("UNKNOWN:2") == 1);
}

TEST_CASE("cohort save/load round trip on a synthetic file") {
    SyntheticSpec spec;
    spec.n_gold = 40;
    spec.n_silver = 60;
    spec.seed = 99;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    const std::string p1 = temp_file("cohort_rt1.jsonl");
    const std::string p2 = temp_file("cohort_rt2.jsonl");
    save_cohort(synth.cohort, p1);
    Cohort loaded = load_cohort(p1, synth.table, synth.cohort.anchor);
    save_cohort(loaded, p2);
    CHECK(slurp(p1) == slurp(p2)); // byte-for-byte stable through one cycle
    REQUIRE(loaded.patients.size() == synth.cohort.patients.size());
    CHECK(loaded.patients[7].patient_id == synth.cohort.patients[7].patient_id);
    CHECK(loaded.patients[7].label.value == synth.cohort.patients[7].label.value);
}

TEST_CASE("split_cohort: 10 gold patients, 5 per class") {
    Cohort c = gold_cohort(5, 5);
    CohortSplit split = split_cohort(c, {0.8, 0.2}, 2, 31);
    CHECK(split.gold_train.size() == 8);
    REQUIRE(split.test_folds.size() == 2);
    CHECK(split.test_folds[0].size() == 1);
    CHECK(split.test_folds[1].size() == 1);
    // the two test patients carry one label each
    std::set<double> labels;
    labels.insert(c.patients[split.test_folds[0][0]].label.value);
    labels.insert(c.patients[split.test_folds[1][0]].label.value);
    CHECK(labels == std::set<double>{0.0, 1.0});

    CohortSplit again = split_cohort(c, {0.8, 0.2}, 2, 31);
    CHECK(again.gold_train == split.gold_train);
    CHECK(again.test_folds == split.test_folds);
}

TEST_CASE("split_cohort: 531 gold reproduces the 425/106/53/53 structure") {
    SyntheticSpec spec;
    spec.n_gold = 531;
    spec.n_silver = 200;
    spec.prevalence = 0.3;
    spec.seed = 4;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 17);
    CHECK(split.gold_train.size() == 425);
    CHECK(split.test_folds[0].size() + split.test_folds[1].size() == 106);
    CHECK(split.test_folds[0].size() == 53);
    CHECK(split.test_folds[1].size() == 53);
    CHECK(split.silver.size() == 200);
}

TEST_CASE("split_cohort: partition property") {
    SyntheticSpec spec;
    spec.n_gold = 97;
    spec.n_silver = 55;
    spec.seed = 6;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 23);
    std::set<size_t> seen;
    for (size_t i : split.gold_train) CHECK(seen.insert(i).second);
    for (const auto& fold : split.test_folds)
        for (size_t i : fold) CHECK(seen.insert(i).second);
    for (size_t i : split.silver) CHECK(seen.insert(i).second);
    CHECK(seen.size() == synth.cohort.patients.size());
    for (size_t i : split.silver) CHECK_FALSE(synth.cohort.patients[i].is_gold());
    for (size_t i : split.gold_train) CHECK(synth.cohort.patients[i].is_gold());
}

TEST_CASE("split_cohort: error contracts") {
    Cohort empty;
    empty.anchor = "X:anchor";
    CHECK_THROWS_AS(split_cohort(empty, {0.8, 0.2}, 2, 1), DataError);

    Cohort c = gold_cohort(2, 2);
    // test total of 1 cannot populate 2 folds
    CHECK_THROWS_AS(split_cohort(c, {0.8, 0.2}, 2, 1), DataError);

    Cohort big = gold_cohort(5, 5);
    CHECK_THROWS_AS(split_cohort(big, {0.5, 0.2}, 2, 1), ConfigError); // fractions must sum to 1
}

TEST_CASE("init_silver_by_count thresholds") {
    Cohort c;
    c.anchor = "X:anchor";
    auto add = [&c](const std::string& id, int64_t anchor_n, LabelSource src) {
        PatientRecord p;
        p.patient_id = id;
        TimeWindow w;
        w.index = 1;
        if (anchor_n > 0) w.events.push_back({"X:anchor", anchor_n});
        w.events.push_back({"A", 1});
        p.windows.push_back(std::move(w));
        p.label = {src, src == LabelSource::gold ? 1.0 : 0.5};
        c.patients.push_back(std::move(p));
    };
    add("s0", 0, LabelSource::silver);
    add("s1", 3, LabelSource::silver);
    add("s2", 2, LabelSource::silver);
    add("g0", 0, LabelSource::gold);

    init_silver_by_count(c, 3);
    CHECK(c.patients[0].label.value == 0.0);
    CHECK(c.patients[1].label.value == 1.0); // boundary inclusive
    CHECK(c.patients[2].label.value == 0.0);
    CHECK(c.patients[3].label.value == 1.0); // gold untouched

    CHECK_THROWS_AS(init_silver_by_count(c, 0), ConfigError);
}

TEST_CASE("init_silver_by_count matches a recount oracle on synthetic patients") {
    SyntheticSpec spec;
    spec.n_gold = 5;
    spec.n_silver = 50;
    spec.seed = 12;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    const uint64_t gold_before = gold_label_checksum(synth.cohort);
    init_silver_by_count(synth.cohort, 4);
    CHECK(gold_label_checksum(synth.cohort) == gold_before);
    for (const auto& p : synth.cohort.patients) {
        if (p.is_gold()) continue;
        const int64_t total =
            oracle::recount(p.windows, synth.cohort.anchor, 1, static_cast<int>(p.windows.size()));
        CHECK(p.label.value == (total >= 4 ? 1.0 : 0.0));
    }
}

TEST_CASE("synthetic generator: noiseless silver equals truth, prevalence 1") {
    SyntheticSpec spec;
    spec.n_gold = 30;
    spec.n_silver = 120;
    spec.silver_noise = 0.0;
    spec.seed = 13;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    for (const auto& p : synth.cohort.patients) {
        const auto& gt = synth.truth.at(p.patient_id);
        if (p.is_gold())
            CHECK(p.label.value == gt.truth);
        else
            CHECK(p.label.value == gt.truth); // noiseless limit
    }

    spec.prevalence = 1.0;
    SyntheticCohort all_pos = generate_synthetic_cohort(spec);
    for (const auto& [id, gt] : all_pos.truth) CHECK(gt.truth == 1);
}

TEST_CASE("synthetic generator: zero signal gives a null anchor-count score") {
    SyntheticSpec spec;
    spec.n_gold = 200;
    spec.n_silver = 1800;
    spec.signal_strength = 0.0;
    spec.seed = 14;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : synth.cohort.patients) {
        scores.push_back(static_cast<double>(anchor_count(p, synth.cohort.anchor)));
        labels.push_back(synth.truth.at(p.patient_id).truth);
    }
    const double a = oracle::auc(scores, labels);
    CHECK(std::fabs(a - 0.5) < 0.05);
}

TEST_CASE("synthetic generator: purity and planted count signal") {
    SyntheticSpec spec;
    spec.n_gold = 100;
    spec.n_silver = 900;
    spec.seed = 15;
    SyntheticCohort a = generate_synthetic_cohort(spec);
    SyntheticCohort b = generate_synthetic_cohort(spec);
    const std::string p1 = temp_file("synth_a.jsonl");
    const std::string p2 = temp_file("synth_b.jsonl");
    save_cohort(a.cohort, p1);
    save_cohort(b.cohort, p2);
    CHECK(slurp(p1) == slurp(p2)); // byte-identical given equal specs

    double pos_mean = 0.0, neg_mean = 0.0, n_pos = 0.0, n_neg = 0.0;
    for (const auto& p : a.cohort.patients) {
        const double count = static_cast<double>(anchor_count(p, a.cohort.anchor));
        if (a.truth.at(p.patient_id).truth) {
            pos_mean += count;
            n_pos += 1.0;
        } else {
            neg_mean += count;
            n_neg += 1.0;
        }
    }
    CHECK(pos_mean / n_pos > neg_mean / n_neg);
}

TEST_CASE("synthetic generator: informative concepts sit closer to the anchor") {
    SyntheticSpec spec;
    spec.n_gold = 10;
    spec.n_silver = 10;
    spec.seed = 16;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    const Tensor& anchor_vec = synth.table.vector_for(kSyntheticAnchor);
    double min_info = 1.0;
    double max_background = -1.0;
    double background_mean = 0.0;
    int n_background = 0;
    for (const auto& [id, v] : synth.table.entries()) {
        const double s = cosine_similarity(v, anchor_vec);
        if (id.rfind("SYN:d", 0) == 0) min_info = std::min(min_info, s);
        if (id.rfind("SYN:b", 0) == 0) {
            max_background = std::max(max_background, s);
            background_mean += s;
            ++n_background;
        }
    }
    background_mean /= n_background;
    CHECK(min_info > background_mean);
    CHECK(min_info > 0.7);

    // truth sidecar round trip
    const std::string path = temp_file("truth_rt.jsonl");
    save_truth_sidecar(synth, path);
    auto loaded = load_truth_sidecar(path);
    CHECK(loaded.size() == synth.truth.size());
    for (const auto& [id, gt] : synth.truth) {
        CHECK(loaded.at(id).truth == gt.truth);
        CHECK(loaded.at(id).severity_group == gt.severity_group);
    }
}

TEST_CASE("synthetic generator: survival fields planted for everyone") {
    SyntheticSpec spec;
    spec.n_gold = 20;
    spec.n_silver = 80;
    spec.seed = 17;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    for (const auto& p : synth.cohort.patients) {
        REQUIRE(p.survival.has_value());
        CHECK(p.survival->time > 0.0);
        CHECK((p.survival->event == 0 || p.survival->event == 1));
    }
}
