// pheno: weakly supervised phenotyping pipeline.
// Subcommands: synth, init-silver, calibrate, train, eval, embed, cluster,
// survival. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
// failure.

#include <cstdio>
#include <exception>
#include <functional>

#include <CLI11.hpp>

#include "pheno/error.hpp"
#include "pheno/pipeline.hpp"

namespace {

void add_common(CLI::App* cmd, pheno::RunConfig& config, bool seed_required) {
    cmd->add_option("--out", config.out_dir, "output directory");
    auto* seed = cmd->add_option("--seed", config.seed, "root seed; all stage randomness derives from it");
    if (seed_required) seed->required();
}

void add_data(CLI::App* cmd, pheno::RunConfig& config) {
    cmd->add_option("--cohort", config.cohort_path, "cohort JSONL file")->required();
    cmd->add_option("--embeddings", config.embedding_path, "embedding table TSV file")->required();
    cmd->add_option("--anchor", config.anchor, "anchor concept id");
    cmd->add_option("--train-fraction", config.train_fraction, "gold train fraction");
    cmd->add_option("--folds", config.folds, "test fold count");
}

void add_model(CLI::App* cmd, pheno::RunConfig& config) {
    cmd->add_option("--d-model", config.model.d_model, "hidden dimension");
    cmd->add_option("--heads", config.model.n_heads, "attention heads");
    cmd->add_option("--layers", config.model.n_layers, "encoder layers");
    cmd->add_option("--d-ff", config.model.d_ff, "feedforward dimension (0 = 4*d_model)");
    cmd->add_option("--dropout", config.model.dropout_rate, "dropout rate");
    cmd->add_option("--k-star", config.model.k_star, "max selected concepts per patient");
    cmd->add_flag("--values-from-projection,!--values-from-input", config.model.values_from_projection,
                  "layer-1 attention values from projected embeddings (default) or the layer input");
    cmd->add_flag("--values-all-layers", config.model.values_all_layers,
                  "attention values from projected embeddings in every layer");
    cmd->add_flag("--freq-log", config.model.freq_log_transform, "encode log(1+count) instead of raw counts");
}

void add_train(CLI::App* cmd, pheno::RunConfig& config) {
    cmd->add_option("--rounds", config.train.outer_rounds, "refinement rounds");
    cmd->add_option("--epochs", config.train.epochs_per_round, "epochs per round");
    cmd->add_option("--batch", config.train.batch_size, "minibatch size");
    cmd->add_option("--lr", config.train.adam.learning_rate, "Adam learning rate");
    cmd->add_option("--oversample", config.train.oversample_r, "gold oversample factor (0 = auto)");
    cmd->add_flag("--refinement,!--no-refinement", config.train.refinement_enabled,
                  "iterative silver label refinement (default on)");
    cmd->add_flag("--calibrate,!--no-calibrate", config.train.calibrate,
                  "calibrate silver labels from count scores before round 1 (default on)");
    cmd->add_option("--val-fold", config.train.validation_fold, "validation fold index");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised transformer phenotyping pipeline"};
    app.require_subcommand(1);
    // usage: pheno --config run.cfg <subcommand> [flags]; file keys live in
    // [subcommand] sections and are overridden by explicit flags
    app.set_config("--config", "", "key=value config file with [subcommand] sections");

    pheno::RunConfig config;

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with planted ground truth");
    add_common(synth, config, /*seed_required=*/true);
    synth->add_option("--n-gold", config.synth.n_gold, "gold cohort size");
    synth->add_option("--n-silver", config.synth.n_silver, "silver cohort size");
    synth->add_option("--prevalence", config.synth.prevalence, "phenotype prevalence");
    synth->add_option("--vocab", config.synth.vocab_size, "concept vocabulary size");
    synth->add_option("--d-input", config.synth.d_input, "embedding dimension");
    synth->add_option("--silver-noise", config.synth.silver_noise, "silver label flip probability");
    synth->add_option("--signal", config.synth.signal_strength, "count elevation among positives");

    auto* init_silver = app.add_subcommand("init-silver", "set silver labels by anchor count threshold");
    add_common(init_silver, config, false);
    add_data(init_silver, config);
    init_silver->add_option("--threshold", config.silver_threshold, "anchor count threshold");

    auto* calibrate = app.add_subcommand("calibrate", "logistic calibration of count scores on gold-train");
    add_common(calibrate, config, false);
    add_data(calibrate, config);

    auto* train = app.add_subcommand("train", "train with iterative silver refinement");
    add_common(train, config, /*seed_required=*/true);
    add_data(train, config);
    add_model(train, config);
    add_train(train, config);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (AUC, PPV at fixed sensitivity)");
    add_common(eval, config, false);
    add_data(eval, config);
    add_model(eval, config);
    add_train(eval, config);
    eval->add_option("--checkpoint", config.checkpoint_path, "checkpoint file");
    eval->add_option("--target", config.eval_target, "fold0 | fold1 | train | cv");
    eval->add_option("--sensitivity", config.target_sens, "PPV sensitivity target");

    auto* embed = app.add_subcommand("embed", "export patient probabilities and embeddings");
    add_common(embed, config, false);
    add_data(embed, config);
    embed->add_option("--checkpoint", config.checkpoint_path, "checkpoint file")->required();

    auto* cluster = app.add_subcommand("cluster", "PCA + k-means subphenotyping of embeddings");
    add_common(cluster, config, false);
    cluster->add_option("--embeddings-csv", config.embeddings_csv, "embeddings csv (default <out>/embeddings.csv)");
    cluster->add_option("--k", config.cluster_k, "cluster count");
    cluster->add_option("--min-size", config.cluster_min_size, "minimum cluster size (0 = unconstrained)");
    cluster->add_option("--min-prob", config.min_prob, "keep patients with probability >= this");
    cluster->add_option("--var-threshold", config.var_threshold, "PCA explained variance threshold");

    auto* survival = app.add_subcommand("survival", "Kaplan-Meier, log-rank and Cox HR across clusters");
    add_common(survival, config, false);
    add_data(survival, config);
    survival->add_option("--clusters-csv", config.clusters_csv, "clusters csv (default <out>/clusters.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and friends exit 0; every other usage problem is a config error
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (synth->parsed()) pheno::cmd_synth(config);
        if (init_silver->parsed()) pheno::cmd_init_silver(config);
        if (calibrate->parsed()) pheno::cmd_calibrate(config);
        if (train->parsed()) pheno::cmd_train(config);
        if (eval->parsed()) pheno::cmd_eval(config);
        if (embed->parsed()) pheno::cmd_embed(config);
        if (cluster->parsed()) pheno::cmd_cluster(config);
        if (survival->parsed()) pheno::cmd_survival(config);
    } catch (const pheno::ConfigError& e) {
        std::fprintf(stderr, "config error in stage %s: %s\n", stage.c_str(), e.what());
        return 2;
    } catch (const pheno::DataError& e) {
        std::fprintf(stderr, "data error in stage %s: %s\n", stage.c_str(), e.what());
        return 3;
    } catch (const pheno::NumericError& e) {
        std::fprintf(stderr, "numeric error in stage %s: %s\n", stage.c_str(), e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error in stage %s: %s\n", stage.c_str(), e.what());
        return 1;
    }
    return 0;
}
