#pragma once

#include <cstdint>
#include <string>

#include "pheno/cohort.hpp"
#include "pheno/model.hpp"
#include "pheno/synthetic.hpp"
#include "pheno/train.hpp"

namespace pheno {

// Fully resolved settings for one pipeline stage. Every stage validates its
// inputs before running and echoes the resolved config into the output
// directory, which is sufficient to reproduce the run. All stage randomness
// derives from `seed`.
struct RunConfig {
    std::string out_dir = "run";
    std::string cohort_path;
    std::string embedding_path;
    std::string checkpoint_path;
    std::string embeddings_csv;
    std::string clusters_csv;
    ConceptId anchor = kSyntheticAnchor;
    uint64_t seed = 1;

    SyntheticSpec synth;

    ModelConfig model;
    TrainConfig train;

    double train_fraction = 0.8;
    int folds = 2;

    int64_t silver_threshold = 3;

    // eval
    std::string eval_target = "fold1"; // fold0 | fold1 | train | cv
    double target_sens = 0.85;

    // cluster
    int cluster_k = 2;
    int cluster_min_size = 0; // 0 disables the size constraint
    double min_prob = 0.5;
    double var_threshold = 0.99;

    void validate_common() const;
};

// Seed for stage `stage_id`, derived from the root seed.
uint64_t stage_seed(uint64_t root_seed, uint64_t stage_id);

// Writes every resolved field as key=value lines.
void write_run_config(const RunConfig& config, const std::string& path);

// synth: cohort.jsonl + embeddings.tsv + truth.jsonl
void cmd_synth(const RunConfig& config);
// init-silver: count-threshold silver labels -> cohort_silver.jsonl
void cmd_init_silver(const RunConfig& config);
// calibrate: logistic calibration of count scores on gold-train ->
// cohort_calibrated.jsonl + calibration.json
void cmd_calibrate(const RunConfig& config);
// train: checkpoint.json + metrics.jsonl + cohort_refined.jsonl + summary
void cmd_train(const RunConfig& config);
// eval: eval_<target>.json with {auc, ppv_at_0.85, per_fold}
void cmd_eval(const RunConfig& config);
// embed: embeddings.csv with patient_id, probability, embedding
void cmd_embed(const RunConfig& config);
// cluster: clusters.csv + coords.csv over PCA-reduced embeddings
void cmd_cluster(const RunConfig& config);
// survival: survival_curves.csv + survival_report.json from cluster groups
void cmd_survival(const RunConfig& config);

} // namespace pheno
