#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pheno/embedding.hpp"

namespace pheno {

enum class LabelSource { gold, silver };

// Gold labels are binary and immutable after load; silver labels are
// probabilities in [0,1] and are rewritten by calibration and refinement.
struct Label {
    LabelSource source = LabelSource::silver;
    double value = 0.0;
};

// Follow-up duration and event indicator (1 = event, 0 = censored).
struct SurvivalInfo {
    double time = 0.0;
    int event = 0;
};

struct TimeWindow {
    int64_t index = 0;
    std::vector<ConceptCount> events; // concept ids unique within the window
};

struct PatientRecord {
    std::string patient_id;
    std::vector<TimeWindow> windows; // indices strictly increasing, size >= 1
    Label label;
    std::optional<SurvivalInfo> survival;

    bool is_gold() const { return label.source == LabelSource::gold; }
};

struct Cohort {
    std::vector<PatientRecord> patients;
    ConceptId anchor;
};

struct CohortLoadStats {
    // events dropped because their concept has no embedding vector
    std::map<ConceptId, size_t> dropped_events;
    size_t total_dropped = 0;
};

// Line-delimited JSON, one patient object per line:
//   {"patient_id": ..., "windows": [{"t": int, "events": [[concept, count], ...]}, ...],
//    "label": {"source": "gold"|"silver", "value": number},
//    "survival": {"time": number, "event": 0|1}}        (survival optional)
// Events whose concept is missing from the table are dropped and counted in
// `stats`. Malformed records raise DataError with the line number; a missing
// anchor raises ConfigError.
Cohort load_cohort(const std::string& path, const EmbeddingTable& table, const ConceptId& anchor,
                   CohortLoadStats* stats = nullptr);
void save_cohort(const Cohort& cohort, const std::string& path);

struct SplitFractions {
    double train = 0.8;
    double test = 0.2;
};

// Indices into Cohort::patients. Gold patients land in exactly one of
// {train, one test fold}; every silver patient trains.
struct CohortSplit {
    std::vector<size_t> gold_train;
    std::vector<std::vector<size_t>> test_folds;
    std::vector<size_t> silver;
};

// Stratified on gold label value with largest-remainder allocation, so the
// train/test totals are round(fraction * n_gold) exactly; the test portion
// is dealt round-robin per stratum into `folds` folds. Deterministic given
// seed. Raises DataError when a stratum cannot reach the train set or a
// fold would be empty.
CohortSplit split_cohort(const Cohort& cohort, SplitFractions fractions, int folds, uint64_t seed);

// Total anchor occurrences across all windows.
int64_t anchor_count(const PatientRecord& patient, const ConceptId& anchor);

// Sets each silver label to 1 if the patient's total anchor count reaches
// `threshold`, else 0. Gold labels untouched.
void init_silver_by_count(Cohort& cohort, int64_t threshold);

// FNV-1a over (patient_id, label bits) of gold patients; pipeline stages
// assert this is unchanged.
uint64_t gold_label_checksum(const Cohort& cohort);

} // namespace pheno
