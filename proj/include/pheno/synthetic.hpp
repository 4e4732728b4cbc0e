#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pheno/cohort.hpp"
#include "pheno/embedding.hpp"

namespace pheno {

// Desk-scale cohort generator with planted ground truth. Generation is a
// pure function of the spec: equal specs produce byte-identical files.
struct SyntheticSpec {
    int n_gold = 200;
    int n_silver = 2000;
    double prevalence = 0.3;
    int vocab_size = 200;
    int d_input = 16;
    double silver_noise = 0.3;
    double signal_strength = 2.0; // scales count elevation among positives
    uint64_t seed = 1;

    void validate() const;
};

struct GroundTruth {
    int truth = 0;          // latent phenotype
    int severity_group = 0; // 0 slow / 1 fast, meaningful for positives
};

struct SyntheticCohort {
    Cohort cohort;
    EmbeddingTable table;
    std::map<std::string, GroundTruth> truth; // keyed by patient id
};

inline const ConceptId kSyntheticAnchor = "SYN:anchor";

// Plants: a latent phenotype at `prevalence`; elevated counts of
// disease-informative concepts among positives (scaled by signal_strength);
// informative-concept embeddings with higher anchor cosine similarity than
// background concepts; a two-group severity structure among positives with
// distinct concept profiles and exponential survival at hazard ratio 3
// (fast vs slow); silver labels = truth flipped with prob silver_noise;
// gold labels = truth.
SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

// Line-delimited {"patient_id": ..., "truth": 0|1, "severity_group": 0|1}
// in cohort order.
void save_truth_sidecar(const SyntheticCohort& synth, const std::string& path);
std::map<std::string, GroundTruth> load_truth_sidecar(const std::string& path);

} // namespace pheno
