#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "pheno/error.hpp"
#include "pheno/synthetic.hpp"
#include "pheno/train.hpp"

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

SyntheticCohort quick_cohort(uint64_t seed, int n_gold = 60, int n_silver = 200) {
    SyntheticSpec spec;
    spec.n_gold = n_gold;
    spec.n_silver = n_silver;
    spec.vocab_size = 60;
    spec.d_input = 8;
    spec.seed = seed;
    return generate_synthetic_cohort(spec);
}

ModelConfig quick_model() {
    ModelConfig mc;
    mc.d_input = 8;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 1;
    mc.k_star = 10;
    mc.dropout_rate = 0.1;
    mc.seed = 5;
    return mc;
}

TrainConfig quick_train(uint64_t seed = 3) {
    TrainConfig tc;
    tc.outer_rounds = 2;
    tc.epochs_per_round = 2;
    tc.batch_size = 16;
    tc.seed = seed;
    return tc;
}

} // namespace

TEST_CASE("bce_loss analytic values and soft targets") {
    CHECK(bce_loss(0.5, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(0.5, 0.37) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(1.0, 1.0) < 1e-10); // only the clamp away from zero
    const double direct = -(0.3 * std::log(0.8) + 0.7 * std::log(0.2));
    CHECK(bce_loss(0.8, 0.3) == doctest::Approx(direct).epsilon(1e-15));
    CHECK(direct == doctest::Approx(1.1935).epsilon(1e-4));
    CHECK_THROWS_AS(bce_loss(0.5, -0.1), NumericError);
    CHECK_THROWS_AS(bce_loss(0.5, 1.1), NumericError);
    // clamp keeps the loss finite at the boundary
    CHECK(std::isfinite(bce_loss(0.0, 1.0)));
    CHECK(std::isfinite(bce_loss(1.0, 0.0)));
}

TEST_CASE("adam_step: zero gradients leave parameters unchanged") {
    ModelConfig mc = quick_model();
    ModelParams params = init_params(mc);
    ModelParams before = params;
    AdamState state = adam_init(params);
    std::vector<Tensor> zeros;
    for (const auto& ref : named_params(params)) zeros.emplace_back(ref.tensor->shape());
    adam_step(params, zeros, state, {});
    auto ra = named_params(params);
    auto rb = named_params(before);
    for (size_t i = 0; i < ra.size(); ++i)
        for (int64_t j = 0; j < ra[i].tensor->size(); ++j) CHECK(ra[i].tensor->at(j) == rb[i].tensor->at(j));
}

TEST_CASE("adam_step: first step moves against the gradient sign at learning-rate scale") {
    ModelConfig mc = quick_model();
    ModelParams params = init_params(mc);
    ModelParams before = params;
    AdamState state = adam_init(params);
    Rng rng(91);
    std::vector<Tensor> grads;
    for (const auto& ref : named_params(params)) {
        Tensor g(ref.tensor->shape());
        for (int64_t j = 0; j < g.size(); ++j) g.at(j) = rng.normal();
        grads.push_back(std::move(g));
    }
    AdamConfig ac;
    ac.learning_rate = 1e-3;
    adam_step(params, grads, state, ac);
    auto ra = named_params(params);
    auto rb = named_params(before);
    for (size_t i = 0; i < ra.size(); ++i) {
        for (int64_t j = 0; j < ra[i].tensor->size(); ++j) {
            const double g = grads[i].at(j);
            if (std::fabs(g) < 1e-6) continue;
            const double step = ra[i].tensor->at(j) - rb[i].tensor->at(j);
            CHECK(step == doctest::Approx(-ac.learning_rate * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
        }
    }
}

TEST_CASE("adam_step: descends a 2-D convex quadratic") {
    // single 2-entry "parameter" tensor, loss = |w - target|^2
    ModelParams params;
    params.proj_w = Tensor({1, 2});
    params.proj_b = Tensor({0 + 1});
    params.freq_w1 = Tensor({1, 1});
    params.freq_b1 = Tensor({1});
    params.freq_w2 = Tensor({1, 1});
    params.freq_b2 = Tensor({1});
    params.head_w = Tensor({1, 1});
    params.head_b = Tensor({1});
    const double tx = 3.0, ty = -2.0;
    params.proj_w(0, 0) = 1.0;
    params.proj_w(0, 1) = 1.0;
    AdamState state = adam_init(params);
    AdamConfig ac;
    ac.learning_rate = 0.1;
    auto loss_at = [&]() {
        const double dx = params.proj_w(0, 0) - tx;
        const double dy = params.proj_w(0, 1) - ty;
        return dx * dx + dy * dy;
    };
    const double start = loss_at();
    for (int step = 0; step < 100; ++step) {
        std::vector<Tensor> grads;
        for (const auto& ref : named_params(params)) grads.emplace_back(ref.tensor->shape());
        grads[0](0, 0) = 2.0 * (params.proj_w(0, 0) - tx);
        grads[0](0, 1) = 2.0 * (params.proj_w(0, 1) - ty);
        adam_step(params, grads, state, ac);
    }
    CHECK(loss_at() < 1e-3 * start);
}

TEST_CASE("fit_logistic_1d: separation, symmetry, degenerate scores") {
    // perfectly separable
    std::vector<double> s1{1, 2, 3, 10, 11, 12};
    std::vector<double> y1{0, 0, 0, 1, 1, 1};
    SilverCalibration sep = fit_logistic_1d(s1, y1);
    CHECK(sep.separated);

    // symmetric noisy scores around the class means
    Rng rng(92);
    std::vector<double> scores, labels;
    for (int i = 0; i < 2000; ++i) {
        const double y = i % 2 ? 1.0 : 0.0;
        scores.push_back(y + rng.uniform(-1.0, 1.0));
        labels.push_back(y);
    }
    SilverCalibration fit = fit_logistic_1d(scores, labels);
    CHECK_FALSE(fit.separated);
    CHECK(sigmoid(fit.intercept + fit.slope * 0.5) == doctest::Approx(0.5).epsilon(0.05));
    CHECK(fit.intercept == doctest::Approx(-fit.slope * 0.5).epsilon(0.1));

    // constant scores collapse to the prevalence
    std::vector<double> flat(100, 2.0);
    std::vector<double> y3(100, 0.0);
    for (int i = 0; i < 30; ++i) y3[static_cast<size_t>(i)] = 1.0;
    SilverCalibration deg = fit_logistic_1d(flat, y3);
    CHECK(deg.slope == 0.0);
    CHECK(sigmoid(deg.intercept) == doctest::Approx(0.3).epsilon(1e-9));

    std::vector<double> single(10, 1.0);
    std::vector<double> ones(10, 1.0);
    CHECK_THROWS_AS(fit_logistic_1d(single, ones), NumericError);
}

TEST_CASE("calibrate_silver rewrites silver labels only") {
    SyntheticCohort synth = quick_cohort(93);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
    const uint64_t gold_before = gold_label_checksum(synth.cohort);
    std::vector<double> scores = count_baseline(synth.cohort);
    SilverCalibration fit = calibrate_silver(synth.cohort, split.gold_train, scores);
    CHECK(gold_label_checksum(synth.cohort) == gold_before);
    for (size_t i = 0; i < synth.cohort.patients.size(); ++i) {
        const auto& p = synth.cohort.patients[i];
        if (p.is_gold()) continue;
        CHECK(p.label.value == sigmoid(fit.intercept + fit.slope * scores[i]));
        CHECK(p.label.value >= 0.0);
        CHECK(p.label.value <= 1.0);
    }
}

TEST_CASE("count_baseline scores and tie preservation") {
    Cohort c;
    c.anchor = "X:a";
    auto add = [&c](const std::string& id, int64_t n) {
        PatientRecord p;
        p.patient_id = id;
        TimeWindow w;
        w.index = 1;
        w.events.push_back({"B", 1});
        if (n > 0) w.events.push_back({"X:a", n});
        p.windows.push_back(std::move(w));
        p.label = {LabelSource::silver, 0.5};
        c.patients.push_back(std::move(p));
    };
    add("p0", 0);
    add("p1", 4);
    add("p2", 4);
    add("p3", 9);
    std::vector<double> scores = count_baseline(c);
    CHECK(scores[0] == 0.0); // patient without the anchor
    CHECK(scores[1] == scores[2]);
    CHECK(scores[3] > scores[1]);
    for (size_t i = 0; i < c.patients.size(); ++i)
        CHECK(scores[i] == static_cast<double>(oracle::recount(c.patients[i].windows, "X:a", 1, 1)));
}

TEST_CASE("train_loop: refinement disabled keeps calibrated labels") {
    SyntheticCohort synth = quick_cohort(94);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
    ModelConfig mc = quick_model();
    TrainConfig tc = quick_train();
    tc.outer_rounds = 1;
    tc.refinement_enabled = false;
    TrainResult result = train_loop(synth.cohort, synth.table, split, mc, tc);
    for (size_t i = 0; i < split.silver.size(); ++i)
        CHECK(synth.cohort.patients[split.silver[i]].label.value == result.calibrated_initial[i]);
    CHECK(result.trail.size() == 2);
    for (const auto& em : result.trail) CHECK_FALSE(em.refined);
}

TEST_CASE("train_loop: gold labels immutable, refinement in range, best AUC audited") {
    SyntheticCohort synth = quick_cohort(95);
    const uint64_t gold_before = gold_label_checksum(synth.cohort);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
    ModelConfig mc = quick_model();
    TrainConfig tc = quick_train();
    TrainResult result = train_loop(synth.cohort, synth.table, split, mc, tc);
    CHECK(gold_label_checksum(synth.cohort) == gold_before);
    for (size_t idx : split.silver) {
        CHECK(synth.cohort.patients[idx].label.value >= 0.0);
        CHECK(synth.cohort.patients[idx].label.value <= 1.0);
    }
    double max_auc = -1.0;
    for (const auto& em : result.trail) max_auc = std::max(max_auc, em.val_auc);
    CHECK(result.best_val_auc == max_auc);
    CHECK(result.trail.size() == 4);
    CHECK(result.trail[1].refined); // last epoch of round 1
    CHECK(result.trail[3].refined);
    CHECK(result.oversample_r == 4); // round(200 silver / 48 gold-train)
}

TEST_CASE("train_loop: bit-determinism given one seed") {
    auto run = [](const std::string& tag) {
        SyntheticCohort synth = quick_cohort(96);
        CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
        ModelConfig mc = quick_model();
        mc.dropout_rate = 0.1; // exercises mask streams
        TrainConfig tc = quick_train(11);
        TrainResult result = train_loop(synth.cohort, synth.table, split, mc, tc);
        const std::string ckpt = temp_file("det_" + tag + ".json");
        const std::string trail = temp_file("trail_" + tag + ".jsonl");
        const std::string cohort_out = temp_file("cohort_" + tag + ".jsonl");
        save_checkpoint(result.best, ckpt);
        write_metrics_trail(result.trail, trail);
        save_cohort(synth.cohort, cohort_out);
        return std::tuple<std::string, std::string, std::string>(slurp(ckpt), slurp(trail), slurp(cohort_out));
    };
    auto [c1, t1, s1] = run("a");
    auto [c2, t2, s2] = run("b");
    CHECK(c1 == c2);
    CHECK(t1 == t2);
    CHECK(s1 == s2);
}

TEST_CASE("train_loop: single-class validation fold fails before training") {
    SyntheticCohort synth = quick_cohort(97);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
    // overwrite fold 0 with patients of one class
    std::vector<size_t> positives;
    for (size_t i = 0; i < synth.cohort.patients.size(); ++i)
        if (synth.cohort.patients[i].is_gold() && synth.cohort.patients[i].label.value == 1.0)
            positives.push_back(i);
    REQUIRE(positives.size() >= 2);
    split.test_folds[0] = {positives[0], positives[1]};
    ModelConfig mc = quick_model();
    TrainConfig tc = quick_train();
    CHECK_THROWS_AS(train_loop(synth.cohort, synth.table, split, mc, tc), ConfigError);
}

TEST_CASE("cross_validate: mean is the arithmetic mean of per-fold metrics") {
    SyntheticCohort synth = quick_cohort(98, 80, 120);
    CohortSplit split = split_cohort(synth.cohort, {0.8, 0.2}, 2, 7);
    ModelConfig mc = quick_model();
    TrainConfig tc = quick_train();
    tc.outer_rounds = 1;
    tc.epochs_per_round = 1;
    CvReport report = cross_validate(synth.cohort, synth.table, split, mc, tc);
    REQUIRE(report.per_fold.size() == 2);
    CHECK(report.auc == doctest::Approx((report.per_fold[0].auc + report.per_fold[1].auc) / 2.0).epsilon(1e-15));
    CHECK(report.ppv == doctest::Approx((report.per_fold[0].ppv + report.per_fold[1].ppv) / 2.0).epsilon(1e-15));
}

TEST_CASE("metrics trail file format") {
    std::vector<EpochMetrics> trail{{1, 1, 0.5, 0.75, false}, {1, 2, 0.25, 0.8, true}};
    const std::string path = temp_file("trail_fmt.jsonl");
    write_metrics_trail(trail, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == R"({"round":1,"epoch":1,"train_loss":0.5,"val_auc":0.75,"refined":false})");
    std::getline(in, line);
    CHECK(line == R"({"round":1,"epoch":2,"train_loss":0.25,"val_auc":0.8,"refined":true})");
}
