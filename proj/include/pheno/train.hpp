#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pheno/cohort.hpp"
#include "pheno/model.hpp"

namespace pheno {

// -[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1-1e-12]; y may be
// a soft target in [0,1].
double bce_loss(double p, double y);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m; // first moments, named_params order
    std::vector<Tensor> v; // second moments
    int64_t step = 0;
};
AdamState adam_init(const ModelParams& params);
// Standard bias-corrected Adam update; `grads` aligned with named_params.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& config);

struct SilverCalibration {
    double intercept = 0.0;
    double slope = 0.0;
    bool separated = false; // scores perfectly separate the gold classes
    int iterations = 0;
};

// Newton-Raphson fit of p(y=1) = sigmoid(a + b*score); labels must contain
// both classes. Degenerate (constant) scores fit the intercept only.
// Perfect separation is flagged and the capped coefficients kept;
// non-convergence raises NumericError with iterate diagnostics.
SilverCalibration fit_logistic_1d(const std::vector<double>& scores, const std::vector<double>& labels);

// Fits on the gold subset (indices into cohort/scores) and rewrites every
// silver label with the calibrated probability of its score.
SilverCalibration calibrate_silver(Cohort& cohort, const std::vector<size_t>& gold_fit,
                                   const std::vector<double>& scores_all);

// Total anchor count per patient, aligned with cohort.patients.
std::vector<double> count_baseline(const Cohort& cohort);
std::vector<double> count_baseline(const Cohort& cohort, const ConceptId& anchor);

struct TrainConfig {
    int outer_rounds = 3;      // refinement rounds R
    int epochs_per_round = 10; // E
    int batch_size = 32;
    AdamConfig adam;
    int oversample_r = 0; // 0 -> max(1, round(n_silver / n_gold))
    uint64_t seed = 1;
    bool refinement_enabled = true;
    bool calibrate = true; // calibrate silver labels from count scores before round 1
    int validation_fold = 0;

    void validate() const;
};

struct EpochMetrics {
    int round = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
    bool refined = false;
};

struct TrainResult {
    Checkpoint best; // globally best validation AUC
    double best_val_auc = 0.0;
    std::vector<EpochMetrics> trail;
    SilverCalibration calibration;              // identity when calibrate=false
    std::vector<double> calibrated_initial;     // silver labels entering round 1, split.silver order
    int oversample_r = 1;
};

// Weakly supervised loop: R rounds of E epochs of minibatch soft-label BCE
// over oversampled gold (per-epoch truncation) plus silver patients. After
// each epoch the gold validation fold's AUC is computed; each round ends by
// restoring the round-best checkpoint and, when enabled, replacing every
// silver label with its eval-mode predicted probability. Gold labels are
// never touched (checksum-asserted). Deterministic given seed.
TrainResult train_loop(Cohort& cohort, const EmbeddingTable& table, const CohortSplit& split,
                       const ModelConfig& mconfig, const TrainConfig& tconfig);

// Eval-mode probabilities and pooled embeddings for the given patients.
struct Predictions {
    std::vector<double> probabilities;
    std::vector<Tensor> embeddings;
};
Predictions predict(const Cohort& cohort, const std::vector<size_t>& indices, const EmbeddingTable& table,
                    const ModelParams& params, const ModelConfig& config);

struct CvFold {
    double auc = 0.0;
    double ppv = 0.0;
    size_t n = 0;
};
struct CvReport {
    double auc = 0.0; // arithmetic mean over folds
    double ppv = 0.0;
    std::vector<CvFold> per_fold;
};

// Two-fold protocol: the checkpoint selected on fold f is evaluated on the
// other fold; per_fold[g] holds the metrics measured on fold g. Reports the
// arithmetic mean. Training runs on a copy of the cohort per fold.
CvReport cross_validate(const Cohort& cohort, const EmbeddingTable& table, const CohortSplit& split,
                        const ModelConfig& mconfig, const TrainConfig& tconfig, double target_sens = 0.85);

// Line-delimited {"round", "epoch", "train_loss", "val_auc", "refined"}.
void write_metrics_trail(const std::vector<EpochMetrics>& trail, const std::string& path);

} // namespace pheno
