#include "pheno/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "pheno/error.hpp"
#include "pheno/rng.hpp"

namespace pheno {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void record_error(size_t line, const std::string& what) {
    throw DataError("cohort line " + std::to_string(line) + ": " + what);
}

json label_to_json(const Label& label) {
    json j;
    j["source"] = label.source == LabelSource::gold ? "gold" : "silver";
    j["value"] = label.value;
    return j;
}

PatientRecord parse_patient(const json& j, size_t line) {
    PatientRecord p;
    if (!j.contains("patient_id") || !j["patient_id"].is_string()) record_error(line, "missing patient_id");
    p.patient_id = j["patient_id"].get<std::string>();
    if (p.patient_id.empty()) record_error(line, "empty patient_id");

    if (!j.contains("windows") || !j["windows"].is_array() || j["windows"].empty())
        record_error(line, "patient " + p.patient_id + " needs at least one window");
    int64_t prev_index = -1;
    bool first = true;
    for (const auto& jw : j["windows"]) {
        TimeWindow w;
        if (!jw.contains("t") || !jw["t"].is_number_integer()) record_error(line, "window missing integer index t");
        w.index = jw["t"].get<int64_t>();
        if (w.index < 0) record_error(line, "negative window index");
        if (!first && w.index <= prev_index) record_error(line, "window indices not strictly increasing");
        prev_index = w.index;
        first = false;
        if (!jw.contains("events") || !jw["events"].is_array()) record_error(line, "window missing events array");
        std::set<ConceptId> seen;
        for (const auto& je : jw["events"]) {
            if (!je.is_array() || je.size() != 2 || !je[0].is_string() || !je[1].is_number_integer())
                record_error(line, "event must be [concept, count]");
            ConceptCount cc;
            cc.concept_id = je[0].get<std::string>();
            cc.count = je[1].get<int64_t>();
            if (cc.concept_id.empty()) record_error(line, "empty concept id");
            if (cc.count < 1) record_error(line, "event count must be >= 1 for " + cc.concept_id);
            if (!seen.insert(cc.concept_id).second)
                record_error(line, "duplicate concept " + cc.concept_id + " in one window");
            w.events.push_back(std::move(cc));
        }
        p.windows.push_back(std::move(w));
    }

    if (!j.contains("label") || !j["label"].is_object()) record_error(line, "missing label");
    const auto& jl = j["label"];
    if (!jl.contains("source") || !jl.contains("value")) record_error(line, "label needs source and value");
    std::string source = jl["source"].get<std::string>();
    if (source == "gold")
        p.label.source = LabelSource::gold;
    else if (source == "silver")
        p.label.source = LabelSource::silver;
    else
        record_error(line, "label source must be gold or silver");
    if (!jl["value"].is_number()) record_error(line, "label value must be numeric");
    p.label.value = jl["value"].get<double>();
    if (p.label.source == LabelSource::gold) {
        if (p.label.value != 0.0 && p.label.value != 1.0) record_error(line, "gold label value must be 0 or 1");
    } else if (p.label.value < 0.0 || p.label.value > 1.0) {
        record_error(line, "silver label value must be in [0,1]");
    }

    if (j.contains("survival") && !j["survival"].is_null()) {
        const auto& js = j["survival"];
        if (!js.contains("time") || !js.contains("event")) record_error(line, "survival needs time and event");
        SurvivalInfo s;
        s.time = js["time"].get<double>();
        s.event = js["event"].get<int>();
        if (!(s.time > 0.0)) record_error(line, "survival time must be positive");
        if (s.event != 0 && s.event != 1) record_error(line, "survival event must be 0 or 1");
        p.survival = s;
    }
    return p;
}

} // namespace

Cohort load_cohort(const std::string& path, const EmbeddingTable& table, const ConceptId& anchor,
                   CohortLoadStats* stats) {
    if (!table.contains(anchor)) throw ConfigError("anchor concept missing from embedding table: " + anchor);
    std::ifstream in(path);
    if (!in) throw DataError("cannot open cohort file: " + path);

    Cohort cohort;
    cohort.anchor = anchor;
    CohortLoadStats local;
    std::set<std::string> ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            record_error(line_no, std::string("invalid JSON: ") + e.what());
        }
        PatientRecord p = parse_patient(j, line_no);
        if (!ids.insert(p.patient_id).second) record_error(line_no, "duplicate patient id " + p.patient_id);
        // drop events whose concept has no pre-trained vector
        for (auto& w : p.windows) {
            std::vector<ConceptCount> kept;
            kept.reserve(w.events.size());
            for (auto& e : w.events) {
                if (table.contains(e.concept_id)) {
                    kept.push_back(std::move(e));
                } else {
                    ++local.dropped_events[e.concept_id];
                    ++local.total_dropped;
                }
            }
            w.events = std::move(kept);
        }
        cohort.patients.push_back(std::move(p));
    }
    if (stats) *stats = local;
    return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write cohort file: " + path);
    for (const auto& p : cohort.patients) {
        json j;
        j["patient_id"] = p.patient_id;
        json windows = json::array();
        for (const auto& w : p.windows) {
            json jw;
            jw["t"] = w.index;
            json events = json::array();
            for (const auto& e : w.events) events.push_back(json::array({e.concept_id, e.count}));
            jw["events"] = std::move(events);
            windows.push_back(std::move(jw));
        }
        j["windows"] = std::move(windows);
        j["label"] = label_to_json(p.label);
        if (p.survival) {
            json js;
            js["time"] = p.survival->time;
            js["event"] = p.survival->event;
            j["survival"] = std::move(js);
        }
        out << j.dump() << '\n';
    }
}

CohortSplit split_cohort(const Cohort& cohort, SplitFractions fractions, int folds, uint64_t seed) {
    if (std::fabs(fractions.train + fractions.test - 1.0) > 1e-9 || fractions.train <= 0.0 || fractions.test <= 0.0)
        throw ConfigError("split fractions must be positive and sum to 1");
    if (folds < 1) throw ConfigError("split needs at least one fold");

    CohortSplit split;
    split.test_folds.assign(static_cast<size_t>(folds), {});

    // strata of gold patient indices keyed by label value (0 then 1)
    std::vector<std::vector<size_t>> strata(2);
    for (size_t i = 0; i < cohort.patients.size(); ++i) {
        const auto& p = cohort.patients[i];
        if (p.is_gold())
            strata[p.label.value == 1.0 ? 1 : 0].push_back(i);
        else
            split.silver.push_back(i);
    }
    const size_t n_gold = strata[0].size() + strata[1].size();
    if (n_gold == 0) throw DataError("split requires a nonempty gold subcohort");

    const auto test_total = static_cast<size_t>(std::llround(fractions.test * static_cast<double>(n_gold)));

    // largest-remainder allocation of test slots across strata
    std::array<size_t, 2> test_count{0, 0};
    std::array<double, 2> remainder{0.0, 0.0};
    size_t assigned = 0;
    for (int s = 0; s < 2; ++s) {
        double exact = fractions.test * static_cast<double>(strata[static_cast<size_t>(s)].size());
        test_count[static_cast<size_t>(s)] = static_cast<size_t>(std::floor(exact));
        remainder[static_cast<size_t>(s)] = exact - std::floor(exact);
        assigned += test_count[static_cast<size_t>(s)];
    }
    while (assigned < test_total) {
        int pick = remainder[0] >= remainder[1] ? 0 : 1;
        if (test_count[static_cast<size_t>(pick)] >= strata[static_cast<size_t>(pick)].size()) pick = 1 - pick;
        ++test_count[static_cast<size_t>(pick)];
        remainder[static_cast<size_t>(pick)] = -1.0;
        ++assigned;
    }
    while (assigned > test_total) {
        int pick = remainder[0] < remainder[1] ? 0 : 1;
        if (test_count[static_cast<size_t>(pick)] == 0) pick = 1 - pick;
        --test_count[static_cast<size_t>(pick)];
        --assigned;
    }

    Rng rng(seed);
    size_t fold_cursor = 0;
    for (int s = 0; s < 2; ++s) {
        auto& stratum = strata[static_cast<size_t>(s)];
        if (stratum.empty()) continue;
        Rng stream = rng.fork(static_cast<uint64_t>(s));
        stream.shuffle(stratum);
        const size_t t = test_count[static_cast<size_t>(s)];
        if (t >= stratum.size())
            throw DataError("stratum with label " + std::to_string(s) + " too small to keep a train member");
        for (size_t i = 0; i < t; ++i) {
            split.test_folds[fold_cursor % static_cast<size_t>(folds)].push_back(stratum[i]);
            ++fold_cursor;
        }
        for (size_t i = t; i < stratum.size(); ++i) split.gold_train.push_back(stratum[i]);
    }
    for (const auto& fold : split.test_folds)
        if (fold.empty()) throw DataError("test portion too small to populate every fold");
    return split;
}

int64_t anchor_count(const PatientRecord& patient, const ConceptId& anchor) {
    int64_t total = 0;
    for (const auto& w : patient.windows)
        for (const auto& e : w.events)
            if (e.concept_id == anchor) total += e.count;
    return total;
}

void init_silver_by_count(Cohort& cohort, int64_t threshold) {
    if (threshold < 1) throw ConfigError("silver count threshold must be >= 1");
    for (auto& p : cohort.patients) {
        if (p.is_gold()) continue;
        p.label.value = anchor_count(p, cohort.anchor) >= threshold ? 1.0 : 0.0;
    }
}

uint64_t gold_label_checksum(const Cohort& cohort) {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& p : cohort.patients) {
        if (!p.is_gold()) continue;
        mix(p.patient_id.data(), p.patient_id.size());
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(p.label.value));
        std::memcpy(&bits, &p.label.value, sizeof(bits));
        mix(&bits, sizeof(bits));
    }
    return h;
}

} // namespace pheno
