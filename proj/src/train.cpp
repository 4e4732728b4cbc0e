#include "pheno/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pheno/error.hpp"
#include "pheno/metrics.hpp"
#include "pheno/preprocess.hpp"

namespace pheno {

double bce_loss(double p, double y) {
    if (y < 0.0 || y > 1.0) throw NumericError("bce_loss target outside [0,1]");
    constexpr double kEps = 1e-12;
    const double pc = std::min(std::max(p, kEps), 1.0 - kEps);
    return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

AdamState adam_init(const ModelParams& params) {
    AdamState state;
    for (const auto& ref : named_params(params)) {
        state.m.emplace_back(ref.tensor->shape());
        state.v.emplace_back(ref.tensor->shape());
    }
    return state;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& config) {
    auto refs = named_params(params);
    if (grads.size() != refs.size()) throw NumericError("adam_step gradient count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < refs.size(); ++i) {
        Tensor& t = *refs[i].tensor;
        const Tensor& g = grads[i];
        if (!t.same_shape(g)) throw NumericError("adam_step gradient shape mismatch for " + refs[i].name);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (int64_t j = 0; j < t.size(); ++j) {
            m.at(j) = config.beta1 * m.at(j) + (1.0 - config.beta1) * g.at(j);
            v.at(j) = config.beta2 * v.at(j) + (1.0 - config.beta2) * g.at(j) * g.at(j);
            const double mhat = m.at(j) / bc1;
            const double vhat = v.at(j) / bc2;
            t.at(j) -= config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

SilverCalibration fit_logistic_1d(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw NumericError("logistic fit needs matching nonempty scores and labels");
    double pos = 0.0;
    for (double y : labels) pos += y;
    if (pos == 0.0 || pos == static_cast<double>(labels.size()))
        throw NumericError("logistic fit: gold subset is single-class");

    // degenerate constant scores: intercept-only fit
    const double smin = *std::min_element(scores.begin(), scores.end());
    const double smax = *std::max_element(scores.begin(), scores.end());
    SilverCalibration fit;
    if (smin == smax) {
        const double prevalence = pos / static_cast<double>(labels.size());
        fit.intercept = std::log(prevalence / (1.0 - prevalence)) - 0.0 * smin;
        fit.slope = 0.0;
        return fit;
    }

    double mean = 0.0, var = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    for (double s : scores) var += (s - mean) * (s - mean);
    const double sd = std::sqrt(var / static_cast<double>(scores.size()));

    double a = 0.0, b = 0.0;
    for (int iter = 1; iter <= 100; ++iter) {
        double g0 = 0.0, g1 = 0.0;
        double h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (size_t i = 0; i < scores.size(); ++i) {
            const double s = scores[i];
            const double p = sigmoid(a + b * s);
            const double r = labels[i] - p;
            const double w = p * (1.0 - p);
            g0 += r;
            g1 += r * s;
            h00 += w;
            h01 += w * s;
            h11 += w * s * s;
        }
        fit.iterations = iter;
        if (std::max(std::fabs(g0), std::fabs(g1)) < 1e-10) {
            fit.intercept = a;
            fit.slope = b;
            return fit;
        }
        h00 += 1e-12;
        h11 += 1e-12;
        const double det = h00 * h11 - h01 * h01;
        if (det <= 0.0) throw NumericError("logistic fit: singular Hessian at iteration " + std::to_string(iter));
        a += (h11 * g0 - h01 * g1) / det;
        b += (h00 * g1 - h01 * g0) / det;
        if (std::fabs(b) * sd > 30.0) {
            // coefficients running away: scores separate the classes
            fit.separated = true;
            fit.intercept = a;
            fit.slope = b;
            return fit;
        }
    }
    throw NumericError("logistic fit did not converge after 100 iterations (a=" + std::to_string(a) +
                       ", b=" + std::to_string(b) + ")");
}

SilverCalibration calibrate_silver(Cohort& cohort, const std::vector<size_t>& gold_fit,
                                   const std::vector<double>& scores_all) {
    if (scores_all.size() != cohort.patients.size())
        throw NumericError("calibrate_silver: score vector does not match cohort");
    std::vector<double> fit_scores, fit_labels;
    fit_scores.reserve(gold_fit.size());
    for (size_t idx : gold_fit) {
        const auto& p = cohort.patients[idx];
        if (!p.is_gold()) throw NumericError("calibrate_silver: fit index is not a gold patient");
        fit_scores.push_back(scores_all[idx]);
        fit_labels.push_back(p.label.value);
    }
    SilverCalibration fit = fit_logistic_1d(fit_scores, fit_labels);
    for (size_t i = 0; i < cohort.patients.size(); ++i) {
        auto& p = cohort.patients[i];
        if (p.is_gold()) continue;
        p.label.value = sigmoid(fit.intercept + fit.slope * scores_all[i]);
    }
    return fit;
}

std::vector<double> count_baseline(const Cohort& cohort) { return count_baseline(cohort, cohort.anchor); }

std::vector<double> count_baseline(const Cohort& cohort, const ConceptId& anchor) {
    std::vector<double> scores;
    scores.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) scores.push_back(static_cast<double>(anchor_count(p, anchor)));
    return scores;
}

void TrainConfig::validate() const {
    if (outer_rounds < 1 || epochs_per_round < 1 || batch_size < 1)
        throw ConfigError("rounds, epochs and batch size must be >= 1");
    if (adam.learning_rate <= 0.0 || adam.eps <= 0.0) throw ConfigError("Adam rates must be positive");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0)
        throw ConfigError("Adam betas must be in [0,1)");
    if (oversample_r < 0) throw ConfigError("oversample factor must be nonnegative");
    if (validation_fold < 0) throw ConfigError("validation fold must be nonnegative");
}

namespace {

ModelParams snapshot(const ModelParams& params) { return params; }

std::vector<Tensor> collect_grads(const Tape& tape, const ParamNodes& nodes) {
    std::vector<Tensor> grads;
    for (Tape::NodeId id : param_node_list(nodes)) grads.push_back(tape.grad(id));
    return grads;
}

} // namespace

Predictions predict(const Cohort& cohort, const std::vector<size_t>& indices, const EmbeddingTable& table,
                    const ModelParams& params, const ModelConfig& config) {
    Predictions preds;
    preds.probabilities.reserve(indices.size());
    preds.embeddings.reserve(indices.size());
    Rng unused(0);
    for (size_t idx : indices) {
        ModelInput input = build_input(cohort.patients[idx], table, cohort.anchor, config.k_star, InputMode::eval,
                                       unused);
        ForwardResult r = forward(input, params, config, /*training=*/false, nullptr);
        preds.probabilities.push_back(r.probability);
        preds.embeddings.push_back(std::move(r.embedding));
    }
    return preds;
}

TrainResult train_loop(Cohort& cohort, const EmbeddingTable& table, const CohortSplit& split,
                       const ModelConfig& mconfig, const TrainConfig& tconfig) {
    mconfig.validate();
    tconfig.validate();
    if (static_cast<size_t>(tconfig.validation_fold) >= split.test_folds.size())
        throw ConfigError("validation fold " + std::to_string(tconfig.validation_fold) + " out of range");
    const auto& val_fold = split.test_folds[static_cast<size_t>(tconfig.validation_fold)];
    if (val_fold.empty()) throw ConfigError("validation fold is empty");

    std::vector<int> val_labels;
    val_labels.reserve(val_fold.size());
    for (size_t idx : val_fold) val_labels.push_back(cohort.patients[idx].label.value == 1.0 ? 1 : 0);
    if (std::all_of(val_labels.begin(), val_labels.end(), [&](int y) { return y == val_labels[0]; }))
        throw ConfigError("validation AUC undefined: fold has a single class");

    const uint64_t gold_checksum = gold_label_checksum(cohort);

    TrainResult result;
    if (tconfig.calibrate) {
        result.calibration = calibrate_silver(cohort, split.gold_train, count_baseline(cohort));
    }
    result.calibrated_initial.reserve(split.silver.size());
    for (size_t idx : split.silver) result.calibrated_initial.push_back(cohort.patients[idx].label.value);

    const int r = tconfig.oversample_r > 0
                      ? tconfig.oversample_r
                      : default_oversample_factor(split.gold_train.size(), split.silver.size());
    result.oversample_r = r;
    std::vector<TrainInstance> instances = oversample_gold(split.gold_train, split.silver, r);

    ModelParams params = init_params(mconfig);
    AdamState adam = adam_init(params);

    Rng root(tconfig.seed);
    Rng shuffle_rng = root.fork(1);
    Rng noop(0);

    // eval-mode inputs are deterministic; build once
    std::vector<ModelInput> val_inputs;
    val_inputs.reserve(val_fold.size());
    for (size_t idx : val_fold)
        val_inputs.push_back(build_input(cohort.patients[idx], table, cohort.anchor, mconfig.k_star,
                                         InputMode::eval, noop));
    std::vector<ModelInput> silver_inputs;
    silver_inputs.reserve(split.silver.size());
    for (size_t idx : split.silver)
        silver_inputs.push_back(build_input(cohort.patients[idx], table, cohort.anchor, mconfig.k_star,
                                            InputMode::eval, noop));

    auto validation_auc = [&](const ModelParams& p) {
        std::vector<double> scores;
        scores.reserve(val_inputs.size());
        for (const auto& input : val_inputs)
            scores.push_back(forward(input, p, mconfig, false, nullptr).probability);
        return auc(scores, val_labels);
    };

    result.best_val_auc = -1.0;
    ModelParams best_params = params;

    std::vector<size_t> order(instances.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int round = 0; round < tconfig.outer_rounds; ++round) {
        double round_best_auc = -1.0;
        ModelParams round_best_params = params;
        for (int epoch = 0; epoch < tconfig.epochs_per_round; ++epoch) {
            const uint64_t epoch_key =
                static_cast<uint64_t>(round) * 1000003ULL + static_cast<uint64_t>(epoch);
            Rng dropout_rng = root.fork(2).fork(epoch_key);
            Rng truncation_base = root.fork(3).fork(epoch_key);
            shuffle_rng.shuffle(order);

            double loss_sum = 0.0;
            size_t seen = 0;
            size_t cursor = 0;
            while (cursor < order.size()) {
                const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(tconfig.batch_size));
                Tape tape;
                ParamNodes nodes = stage_params(tape, params);
                std::vector<Tape::NodeId> losses;
                losses.reserve(batch_end - cursor);
                for (size_t bi = cursor; bi < batch_end; ++bi) {
                    const TrainInstance& inst = instances[order[bi]];
                    const PatientRecord& rec = cohort.patients[inst.patient_index];
                    ModelInput input;
                    if (inst.gold) {
                        Rng trunc_rng = truncation_base.fork(inst.patient_index * 64ULL +
                                                             static_cast<uint64_t>(inst.replica));
                        input = build_input(rec, table, cohort.anchor, mconfig.k_star, InputMode::train_gold,
                                            trunc_rng);
                    } else {
                        input = build_input(rec, table, cohort.anchor, mconfig.k_star, InputMode::eval, noop);
                    }
                    ForwardNodes fwd = forward_on_tape(tape, nodes, input, mconfig, /*training=*/true,
                                                       &dropout_rng);
                    losses.push_back(tape.bce_loss(fwd.prob, rec.label.value));
                }
                Tape::NodeId loss = tape.mean_scalars(losses);
                tape.backward(loss);
                loss_sum += tape.value(loss).at(0) * static_cast<double>(batch_end - cursor);
                seen += batch_end - cursor;
                std::vector<Tensor> grads = collect_grads(tape, nodes);
                adam_step(params, grads, adam, tconfig.adam);
                cursor = batch_end;
            }

            EpochMetrics em;
            em.round = round + 1;
            em.epoch = epoch + 1;
            em.train_loss = loss_sum / static_cast<double>(seen);
            em.val_auc = validation_auc(params);
            result.trail.push_back(em);

            if (em.val_auc > round_best_auc) {
                round_best_auc = em.val_auc;
                round_best_params = snapshot(params);
            }
            if (em.val_auc > result.best_val_auc) {
                result.best_val_auc = em.val_auc;
                best_params = snapshot(params);
            }
        }

        // restore the round's best checkpoint before refining
        params = round_best_params;
        if (tconfig.refinement_enabled) {
            for (size_t si = 0; si < split.silver.size(); ++si) {
                const double p = forward(silver_inputs[si], params, mconfig, false, nullptr).probability;
                cohort.patients[split.silver[si]].label.value = p;
            }
            if (!result.trail.empty()) result.trail.back().refined = true;
        }
        if (gold_label_checksum(cohort) != gold_checksum)
            throw NumericError("gold labels mutated during training round " + std::to_string(round + 1));
    }

    result.best.config = mconfig;
    result.best.params = std::move(best_params);
    return result;
}

CvReport cross_validate(const Cohort& cohort, const EmbeddingTable& table, const CohortSplit& split,
                        const ModelConfig& mconfig, const TrainConfig& tconfig, double target_sens) {
    if (split.test_folds.size() < 2) throw ConfigError("cross-validation needs at least two folds");
    const size_t folds = split.test_folds.size();
    CvReport report;
    report.per_fold.resize(folds);
    for (size_t select_fold = 0; select_fold < folds; ++select_fold) {
        Cohort working = cohort;
        TrainConfig tc = tconfig;
        tc.validation_fold = static_cast<int>(select_fold);
        TrainResult trained = train_loop(working, table, split, mconfig, tc);

        const size_t eval_fold = (select_fold + 1) % folds;
        const auto& fold = split.test_folds[eval_fold];
        Predictions preds = predict(working, fold, table, trained.best.params, trained.best.config);
        std::vector<int> labels;
        labels.reserve(fold.size());
        for (size_t idx : fold) labels.push_back(working.patients[idx].label.value == 1.0 ? 1 : 0);
        CvFold fm;
        fm.auc = auc(preds.probabilities, labels);
        fm.ppv = ppv_at_sensitivity(preds.probabilities, labels, target_sens);
        fm.n = fold.size();
        report.per_fold[eval_fold] = fm;
    }
    for (const auto& fm : report.per_fold) {
        report.auc += fm.auc;
        report.ppv += fm.ppv;
    }
    report.auc /= static_cast<double>(folds);
    report.ppv /= static_cast<double>(folds);
    return report;
}

void write_metrics_trail(const std::vector<EpochMetrics>& trail, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write metrics trail: " + path);
    for (const auto& em : trail) {
        nlohmann::ordered_json j;
        j["round"] = em.round;
        j["epoch"] = em.epoch;
        j["train_loss"] = em.train_loss;
        j["val_auc"] = em.val_auc;
        j["refined"] = em.refined;
        out << j.dump() << '\n';
    }
}

} // namespace pheno
