#include "pheno/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "pheno/cluster.hpp"
#include "pheno/error.hpp"
#include "pheno/metrics.hpp"
#include "pheno/survival.hpp"

namespace pheno {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr uint64_t kStageModel = 10;
constexpr uint64_t kStageTrain = 11;
constexpr uint64_t kStageSplit = 12;
constexpr uint64_t kStageCluster = 13;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void ensure_out_dir(const RunConfig& config) {
    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + config.out_dir + ": " + ec.message());
}

std::string out_path(const RunConfig& config, const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
}

struct LoadedData {
    EmbeddingTable table;
    Cohort cohort;
    CohortSplit split;
};

void warn_dropped(const CohortLoadStats& stats) {
    if (stats.total_dropped == 0) return;
    std::fprintf(stderr, "warning: dropped %zu events over %zu concepts with no embedding vector\n",
                 stats.total_dropped, stats.dropped_events.size());
    for (const auto& [id, n] : stats.dropped_events)
        std::fprintf(stderr, "warning:   %s: %zu\n", id.c_str(), n);
}

Cohort load_cohort_checked(const std::string& path, const EmbeddingTable& table, const ConceptId& anchor) {
    CohortLoadStats stats;
    Cohort cohort = load_cohort(path, table, anchor, &stats);
    warn_dropped(stats);
    return cohort;
}

LoadedData load_for_training(const RunConfig& config) {
    if (config.cohort_path.empty() || config.embedding_path.empty())
        throw ConfigError("cohort and embedding paths are required");
    LoadedData data;
    data.table = load_embedding_table(config.embedding_path);
    data.cohort = load_cohort_checked(config.cohort_path, data.table, config.anchor);
    SplitFractions fractions{config.train_fraction, 1.0 - config.train_fraction};
    data.split = split_cohort(data.cohort, fractions, config.folds, stage_seed(config.seed, kStageSplit));
    return data;
}

// every stage asserts gold labels unchanged between load and save
struct GoldGuard {
    const Cohort& cohort;
    uint64_t checksum;
    explicit GoldGuard(const Cohort& c) : cohort(c), checksum(gold_label_checksum(c)) {}
    void verify() const {
        if (gold_label_checksum(cohort) != checksum)
            throw NumericError("gold labels mutated by a pipeline stage");
    }
};

ModelConfig resolve_model_config(const RunConfig& config, const EmbeddingTable& table) {
    ModelConfig mc = config.model;
    mc.d_input = table.dimension();
    mc.seed = stage_seed(config.seed, kStageModel);
    mc.validate();
    return mc;
}

TrainConfig resolve_train_config(const RunConfig& config) {
    TrainConfig tc = config.train;
    tc.seed = stage_seed(config.seed, kStageTrain);
    tc.validate();
    return tc;
}

json metrics_report(const std::vector<CvFold>& per_fold, double mean_auc, double mean_ppv) {
    json j;
    j["auc"] = mean_auc;
    j["ppv_at_0.85"] = mean_ppv;
    json folds = json::array();
    for (const auto& f : per_fold) {
        json fj;
        fj["auc"] = f.auc;
        fj["ppv_at_0.85"] = f.ppv;
        fj["n"] = f.n;
        folds.push_back(std::move(fj));
    }
    j["per_fold"] = std::move(folds);
    return j;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
}

} // namespace

uint64_t stage_seed(uint64_t root_seed, uint64_t stage_id) { return Rng(root_seed).fork(stage_id).next_u64(); }

void RunConfig::validate_common() const {
    if (out_dir.empty()) throw ConfigError("output directory must be set");
    if (anchor.empty()) throw ConfigError("anchor concept must be set");
    if (train_fraction <= 0.0 || train_fraction >= 1.0) throw ConfigError("train fraction must be in (0,1)");
    if (folds < 1) throw ConfigError("fold count must be >= 1");
}

void write_run_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write run config: " + path);
    out << "out_dir=" << c.out_dir << '\n';
    out << "cohort_path=" << c.cohort_path << '\n';
    out << "embedding_path=" << c.embedding_path << '\n';
    out << "checkpoint_path=" << c.checkpoint_path << '\n';
    out << "embeddings_csv=" << c.embeddings_csv << '\n';
    out << "clusters_csv=" << c.clusters_csv << '\n';
    out << "anchor=" << c.anchor << '\n';
    out << "seed=" << c.seed << '\n';
    out << "synth.n_gold=" << c.synth.n_gold << '\n';
    out << "synth.n_silver=" << c.synth.n_silver << '\n';
    out << "synth.prevalence=" << format_double(c.synth.prevalence) << '\n';
    out << "synth.vocab_size=" << c.synth.vocab_size << '\n';
    out << "synth.d_input=" << c.synth.d_input << '\n';
    out << "synth.silver_noise=" << format_double(c.synth.silver_noise) << '\n';
    out << "synth.signal_strength=" << format_double(c.synth.signal_strength) << '\n';
    out << "model.d_input=" << c.model.d_input << '\n';
    out << "model.d_model=" << c.model.d_model << '\n';
    out << "model.n_heads=" << c.model.n_heads << '\n';
    out << "model.n_layers=" << c.model.n_layers << '\n';
    out << "model.d_ff=" << c.model.d_ff << '\n';
    out << "model.dropout_rate=" << format_double(c.model.dropout_rate) << '\n';
    out << "model.layer_norm_eps=" << format_double(c.model.layer_norm_eps) << '\n';
    out << "model.k_star=" << c.model.k_star << '\n';
    out << "model.values_from_projection=" << (c.model.values_from_projection ? 1 : 0) << '\n';
    out << "model.values_all_layers=" << (c.model.values_all_layers ? 1 : 0) << '\n';
    out << "model.freq_log_transform=" << (c.model.freq_log_transform ? 1 : 0) << '\n';
    out << "model.seed=" << stage_seed(c.seed, kStageModel) << '\n';
    out << "train.outer_rounds=" << c.train.outer_rounds << '\n';
    out << "train.epochs_per_round=" << c.train.epochs_per_round << '\n';
    out << "train.batch_size=" << c.train.batch_size << '\n';
    out << "train.learning_rate=" << format_double(c.train.adam.learning_rate) << '\n';
    out << "train.adam_beta1=" << format_double(c.train.adam.beta1) << '\n';
    out << "train.adam_beta2=" << format_double(c.train.adam.beta2) << '\n';
    out << "train.adam_eps=" << format_double(c.train.adam.eps) << '\n';
    out << "train.oversample_r=" << c.train.oversample_r << '\n';
    out << "train.refinement_enabled=" << (c.train.refinement_enabled ? 1 : 0) << '\n';
    out << "train.calibrate=" << (c.train.calibrate ? 1 : 0) << '\n';
    out << "train.validation_fold=" << c.train.validation_fold << '\n';
    out << "train.seed=" << stage_seed(c.seed, kStageTrain) << '\n';
    out << "split.seed=" << stage_seed(c.seed, kStageSplit) << '\n';
    out << "train_fraction=" << format_double(c.train_fraction) << '\n';
    out << "folds=" << c.folds << '\n';
    out << "silver_threshold=" << c.silver_threshold << '\n';
    out << "eval_target=" << c.eval_target << '\n';
    out << "target_sens=" << format_double(c.target_sens) << '\n';
    out << "cluster_k=" << c.cluster_k << '\n';
    out << "cluster_min_size=" << c.cluster_min_size << '\n';
    out << "cluster.seed=" << stage_seed(c.seed, kStageCluster) << '\n';
    out << "min_prob=" << format_double(c.min_prob) << '\n';
    out << "var_threshold=" << format_double(c.var_threshold) << '\n';
}

void cmd_synth(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    SyntheticSpec spec = config.synth;
    spec.seed = config.seed;
    SyntheticCohort synth = generate_synthetic_cohort(spec);
    save_cohort(synth.cohort, out_path(config, "cohort.jsonl"));
    save_embedding_table(synth.table, out_path(config, "embeddings.tsv"));
    save_truth_sidecar(synth, out_path(config, "truth.jsonl"));
    write_run_config(config, out_path(config, "synth_config.txt"));
}

void cmd_init_silver(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    EmbeddingTable table = load_embedding_table(config.embedding_path);
    Cohort cohort = load_cohort_checked(config.cohort_path, table, config.anchor);
    GoldGuard guard(cohort);
    init_silver_by_count(cohort, config.silver_threshold);
    guard.verify();
    save_cohort(cohort, out_path(config, "cohort_silver.jsonl"));
    write_run_config(config, out_path(config, "init_silver_config.txt"));
}

void cmd_calibrate(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    LoadedData data = load_for_training(config);
    GoldGuard guard(data.cohort);
    SilverCalibration fit = calibrate_silver(data.cohort, data.split.gold_train, count_baseline(data.cohort));
    guard.verify();
    save_cohort(data.cohort, out_path(config, "cohort_calibrated.jsonl"));
    json j;
    j["intercept"] = fit.intercept;
    j["slope"] = fit.slope;
    j["separated"] = fit.separated;
    j["iterations"] = fit.iterations;
    write_json(j, out_path(config, "calibration.json"));
    write_run_config(config, out_path(config, "calibrate_config.txt"));
}

void cmd_train(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    LoadedData data = load_for_training(config);
    ModelConfig mc = resolve_model_config(config, data.table);
    TrainConfig tc = resolve_train_config(config);

    GoldGuard guard(data.cohort);
    TrainResult result = train_loop(data.cohort, data.table, data.split, mc, tc);
    guard.verify();

    save_checkpoint(result.best, out_path(config, "checkpoint.json"));
    write_metrics_trail(result.trail, out_path(config, "metrics.jsonl"));
    save_cohort(data.cohort, out_path(config, "cohort_refined.jsonl"));

    json summary;
    summary["best_val_auc"] = result.best_val_auc;
    summary["oversample_r"] = result.oversample_r;
    summary["calibration"] = {{"intercept", result.calibration.intercept},
                              {"slope", result.calibration.slope},
                              {"separated", result.calibration.separated},
                              {"iterations", result.calibration.iterations}};
    summary["epochs"] = result.trail.size();
    write_json(summary, out_path(config, "train_summary.json"));
    write_run_config(config, out_path(config, "train_config.txt"));
}

void cmd_eval(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    LoadedData data = load_for_training(config);

    if (config.eval_target == "cv") {
        ModelConfig mc = resolve_model_config(config, data.table);
        TrainConfig tc = resolve_train_config(config);
        CvReport report = cross_validate(data.cohort, data.table, data.split, mc, tc, config.target_sens);
        write_json(metrics_report(report.per_fold, report.auc, report.ppv), out_path(config, "eval_cv.json"));
        write_run_config(config, out_path(config, "eval_config.txt"));
        return;
    }

    if (config.checkpoint_path.empty()) throw ConfigError("eval requires a checkpoint path");
    if (!fs::exists(config.checkpoint_path))
        throw ConfigError("checkpoint not found at expected path: " + config.checkpoint_path);
    Checkpoint ckpt = load_checkpoint(config.checkpoint_path);

    std::vector<size_t> indices;
    if (config.eval_target == "train") {
        indices = data.split.gold_train;
    } else if (config.eval_target.rfind("fold", 0) == 0) {
        const int f = std::stoi(config.eval_target.substr(4));
        if (f < 0 || static_cast<size_t>(f) >= data.split.test_folds.size())
            throw ConfigError("eval fold out of range: " + config.eval_target);
        indices = data.split.test_folds[static_cast<size_t>(f)];
    } else {
        throw ConfigError("unknown eval target: " + config.eval_target);
    }

    Predictions preds = predict(data.cohort, indices, data.table, ckpt.params, ckpt.config);
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (size_t idx : indices) labels.push_back(data.cohort.patients[idx].label.value == 1.0 ? 1 : 0);
    CvFold fold;
    fold.auc = auc(preds.probabilities, labels);
    fold.ppv = ppv_at_sensitivity(preds.probabilities, labels, config.target_sens);
    fold.n = indices.size();
    write_json(metrics_report({fold}, fold.auc, fold.ppv), out_path(config, "eval_" + config.eval_target + ".json"));
    write_run_config(config, out_path(config, "eval_config.txt"));
}

void cmd_embed(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    if (config.checkpoint_path.empty()) throw ConfigError("embed requires a checkpoint path");
    if (!fs::exists(config.checkpoint_path))
        throw ConfigError("checkpoint not found at expected path: " + config.checkpoint_path);
    Checkpoint ckpt = load_checkpoint(config.checkpoint_path);
    EmbeddingTable table = load_embedding_table(config.embedding_path);
    Cohort cohort = load_cohort_checked(config.cohort_path, table, config.anchor);

    std::vector<size_t> all(cohort.patients.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    Predictions preds = predict(cohort, all, table, ckpt.params, ckpt.config);

    std::ofstream out(out_path(config, "embeddings.csv"), std::ios::trunc);
    if (!out) throw DataError("cannot write embeddings.csv");
    out << "patient_id,probability";
    for (int j = 0; j < ckpt.config.d_model; ++j) out << ",e" << j;
    out << '\n';
    for (size_t i = 0; i < all.size(); ++i) {
        out << cohort.patients[i].patient_id << ',' << format_double(preds.probabilities[i]);
        const Tensor& e = preds.embeddings[i];
        for (int64_t j = 0; j < e.size(); ++j) out << ',' << format_double(e.at(j));
        out << '\n';
    }
    write_run_config(config, out_path(config, "embed_config.txt"));
}

namespace {

struct EmbeddingRow {
    std::string patient_id;
    double probability = 0.0;
    std::vector<double> values;
};

std::vector<EmbeddingRow> load_embeddings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embeddings csv: " + path);
    std::vector<EmbeddingRow> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue; // header
        EmbeddingRow row;
        size_t start = 0;
        int field = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            std::string tok = line.substr(start, comma == std::string::npos ? comma : comma - start);
            if (field == 0) {
                row.patient_id = tok;
            } else {
                char* end = nullptr;
                double v = std::strtod(tok.c_str(), &end);
                if (end == tok.c_str()) throw DataError("embeddings csv line " + std::to_string(line_no) + ": bad number");
                if (field == 1)
                    row.probability = v;
                else
                    row.values.push_back(v);
            }
            ++field;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (row.values.empty()) throw DataError("embeddings csv line " + std::to_string(line_no) + ": no embedding values");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

void cmd_cluster(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    const std::string src = config.embeddings_csv.empty() ? out_path(config, "embeddings.csv") : config.embeddings_csv;
    std::vector<EmbeddingRow> rows = load_embeddings_csv(src);
    std::vector<EmbeddingRow> kept;
    for (auto& r : rows)
        if (r.probability >= config.min_prob) kept.push_back(std::move(r));
    if (kept.size() < 2) throw DataError("cluster: fewer than 2 patients pass min_prob");

    const int n = static_cast<int>(kept.size());
    const int d = static_cast<int>(kept[0].values.size());
    Tensor x({n, d});
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(kept[static_cast<size_t>(i)].values.size()) != d)
            throw DataError("cluster: ragged embedding rows");
        for (int j = 0; j < d; ++j) x(i, j) = kept[static_cast<size_t>(i)].values[static_cast<size_t>(j)];
    }

    PcaResult pca = pca_reduce(x, config.var_threshold);
    std::optional<int> min_size;
    if (config.cluster_min_size > 0) min_size = config.cluster_min_size;
    ClusterModel model = kmeans(pca.projected, config.cluster_k, stage_seed(config.seed, kStageCluster), min_size);

    std::ofstream cl(out_path(config, "clusters.csv"), std::ios::trunc);
    if (!cl) throw DataError("cannot write clusters.csv");
    cl << "patient_id,cluster\n";
    for (int i = 0; i < n; ++i)
        cl << kept[static_cast<size_t>(i)].patient_id << ',' << model.assignments[static_cast<size_t>(i)] << '\n';

    std::ofstream co(out_path(config, "coords.csv"), std::ios::trunc);
    if (!co) throw DataError("cannot write coords.csv");
    co << "patient_id,pc1,pc2\n";
    for (int i = 0; i < n; ++i)
        co << kept[static_cast<size_t>(i)].patient_id << ',' << format_double(pca.coords2d(i, 0)) << ','
           << format_double(pca.coords2d(i, 1)) << '\n';
    write_run_config(config, out_path(config, "cluster_config.txt"));
}

void cmd_survival(const RunConfig& config) {
    config.validate_common();
    ensure_out_dir(config);
    const std::string src = config.clusters_csv.empty() ? out_path(config, "clusters.csv") : config.clusters_csv;
    std::ifstream in(src);
    if (!in) throw DataError("cannot open clusters csv: " + src);

    EmbeddingTable table = load_embedding_table(config.embedding_path);
    Cohort cohort = load_cohort_checked(config.cohort_path, table, config.anchor);
    std::map<std::string, const PatientRecord*> by_id;
    for (const auto& p : cohort.patients) by_id[p.patient_id] = &p;

    std::map<int, std::vector<SurvivalRecord>> groups;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos) throw DataError("clusters csv line " + std::to_string(line_no) + ": bad row");
        const std::string pid = line.substr(0, comma);
        const int cluster = std::stoi(line.substr(comma + 1));
        auto it = by_id.find(pid);
        if (it == by_id.end()) throw DataError("clusters csv: unknown patient " + pid);
        if (!it->second->survival)
            throw DataError("patient " + pid + " has no survival record; survival analysis unavailable");
        groups[cluster].push_back({it->second->survival->time, it->second->survival->event, cluster});
    }
    if (groups.size() < 2) throw ConfigError("survival analysis needs at least 2 cluster groups");

    std::ofstream curves(out_path(config, "survival_curves.csv"), std::ios::trunc);
    if (!curves) throw DataError("cannot write survival_curves.csv");
    curves << "group,time,survival\n";
    for (const auto& [g, records] : groups) {
        curves << g << ",0," << format_double(1.0) << '\n';
        for (const auto& pt : kaplan_meier(records))
            curves << g << ',' << format_double(pt.time) << ',' << format_double(pt.survival) << '\n';
    }

    json report;
    if (groups.size() == 2) {
        auto it = groups.begin();
        const auto& a = it->second;
        const int ga = it->first;
        ++it;
        const auto& b = it->second;
        const int gb = it->first;
        LogrankResult lr = logrank_test(a, b);
        std::vector<SurvivalRecord> pooled;
        for (auto r : a) {
            r.group = 0;
            pooled.push_back(r);
        }
        for (auto r : b) {
            r.group = 1;
            pooled.push_back(r);
        }
        CoxResult cox = cox_hr_binary(pooled);
        report["groups"] = {ga, gb};
        report["logrank_chi2"] = lr.chi2;
        report["p"] = lr.p;
        report["hr"] = cox.hazard_ratio; // group gb vs ga
        report["ci_low"] = cox.ci_low;
        report["ci_high"] = cox.ci_high;
        report["cox_p"] = cox.p;
        report["monotone"] = cox.monotone;
    } else {
        report["note"] = "more than 2 groups: pairwise tests not emitted";
    }
    write_json(report, out_path(config, "survival_report.json"));
    write_run_config(config, out_path(config, "survival_config.txt"));
}

} // namespace pheno
