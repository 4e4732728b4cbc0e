#include "pheno/synthetic.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pheno/error.hpp"
#include "pheno/rng.hpp"

namespace pheno {

namespace {

// survival model constants: exponential event rates, uniform censoring
constexpr double kRateSlow = 0.10;
constexpr double kRateFast = 0.30; // hazard ratio 3 vs slow
constexpr double kRateNegative = 0.05;
constexpr double kCensorLo = 8.0;
constexpr double kCensorHi = 25.0;

// per-window base rates
constexpr double kAnchorRate = 0.8;
constexpr double kInformativeRate = 0.25;
// severity-profile concepts are rare outside their own group so the two
// planted subgroups carry genuinely distinct concept profiles
constexpr double kSeverityRate = 0.015;
constexpr double kBackgroundLoad = 5.0; // expected background events per window
// fraction of signal_strength applied to the anchor itself; keeps the raw
// count baseline informative but beatable
constexpr double kAnchorSignalShare = 0.35;

int poisson(Rng& rng, double lambda) {
    // Knuth's product method; rates here are all small
    double l = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > l);
    return k - 1;
}

Tensor random_unit(Rng& rng, int d) {
    Tensor v({d});
    double norm2 = 0.0;
    while (norm2 == 0.0) {
        for (int i = 0; i < d; ++i) v.at(i) = rng.normal();
        norm2 = v.dot(v);
    }
    v *= 1.0 / std::sqrt(norm2);
    return v;
}

Tensor blend_unit(Rng& rng, const Tensor& base, double base_w, const Tensor& axis, double axis_w, double noise_w) {
    Tensor v = base * base_w;
    if (axis_w != 0.0) v += axis * axis_w;
    Tensor g = random_unit(rng, static_cast<int>(base.size()));
    v += g * noise_w;
    v *= 1.0 / v.norm();
    return v;
}

} // namespace

void SyntheticSpec::validate() const {
    if (n_gold < 1 || n_silver < 0) throw ConfigError("synthetic counts must be positive");
    if (prevalence < 0.0 || prevalence > 1.0) throw ConfigError("prevalence must be in [0,1]");
    if (silver_noise < 0.0 || silver_noise > 1.0) throw ConfigError("silver_noise must be in [0,1]");
    if (signal_strength < 0.0) throw ConfigError("signal_strength must be nonnegative");
    if (vocab_size < 12) throw ConfigError("vocab_size must be at least 12");
    if (d_input < 4) throw ConfigError("d_input must be at least 4");
}

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    Rng emb_rng = root.fork(1);
    Rng patient_rng_base = root.fork(2);

    const int n_info = std::max(6, spec.vocab_size / 20);
    const int n_sev = std::max(3, spec.vocab_size / 20); // per severity group
    const int n_background = spec.vocab_size - 1 - n_info - 2 * n_sev;
    if (n_background < 1) throw ConfigError("vocab_size too small for concept classes");

    SyntheticCohort out;
    out.cohort.anchor = kSyntheticAnchor;

    // concept vocabulary and embeddings
    Tensor anchor_dir = random_unit(emb_rng, spec.d_input);
    Tensor sev_axis_a = random_unit(emb_rng, spec.d_input);
    Tensor sev_axis_b = random_unit(emb_rng, spec.d_input);
    out.table.insert(kSyntheticAnchor, anchor_dir);

    std::vector<ConceptId> informative, severity_a, severity_b, background;
    char buf[32];
    for (int i = 0; i < n_info; ++i) {
        std::snprintf(buf, sizeof(buf), "SYN:d%03d", i);
        informative.emplace_back(buf);
        out.table.insert(informative.back(), blend_unit(emb_rng, anchor_dir, 1.0, anchor_dir, 0.0, 0.6));
    }
    // severity profiles keep anchor similarity on par with the informative
    // set so feature selection retains them
    for (int i = 0; i < n_sev; ++i) {
        std::snprintf(buf, sizeof(buf), "SYN:sa%03d", i);
        severity_a.emplace_back(buf);
        out.table.insert(severity_a.back(), blend_unit(emb_rng, anchor_dir, 1.0, sev_axis_a, 0.8, 0.2));
        std::snprintf(buf, sizeof(buf), "SYN:sb%03d", i);
        severity_b.emplace_back(buf);
        out.table.insert(severity_b.back(), blend_unit(emb_rng, anchor_dir, 1.0, sev_axis_b, 0.8, 0.2));
    }
    for (int i = 0; i < n_background; ++i) {
        std::snprintf(buf, sizeof(buf), "SYN:b%04d", i);
        background.emplace_back(buf);
        out.table.insert(background.back(), random_unit(emb_rng, spec.d_input));
    }
    const double background_rate = kBackgroundLoad / static_cast<double>(n_background);

    const int n_total = spec.n_gold + spec.n_silver;
    for (int i = 0; i < n_total; ++i) {
        Rng rng = patient_rng_base.fork(static_cast<uint64_t>(i));
        const bool gold = i < spec.n_gold;
        PatientRecord p;
        std::snprintf(buf, sizeof(buf), gold ? "SYN-G%05d" : "SYN-S%05d", gold ? i : i - spec.n_gold);
        p.patient_id = buf;

        GroundTruth gt;
        gt.truth = rng.bernoulli(spec.prevalence) ? 1 : 0;
        gt.severity_group = rng.bernoulli(0.5) ? 1 : 0;

        const double pos_boost = gt.truth ? 1.0 + spec.signal_strength : 1.0;
        const double anchor_boost = gt.truth ? 1.0 + kAnchorSignalShare * spec.signal_strength : 1.0;
        const double sev_boost_a =
            (gt.truth && gt.severity_group == 0) ? 1.0 + 30.0 * spec.signal_strength : 1.0;
        const double sev_boost_b =
            (gt.truth && gt.severity_group == 1) ? 1.0 + 30.0 * spec.signal_strength : 1.0;

        const int n_windows = 3 + static_cast<int>(rng.uniform_int(6)); // 3..8
        int64_t total_anchor = 0;
        for (int t = 1; t <= n_windows; ++t) {
            TimeWindow w;
            w.index = t;
            auto add_event = [&w](const ConceptId& id, int count) {
                if (count > 0) w.events.push_back({id, count});
            };
            int ac = poisson(rng, kAnchorRate * anchor_boost);
            total_anchor += ac;
            add_event(kSyntheticAnchor, ac);
            for (const auto& c : informative) add_event(c, poisson(rng, kInformativeRate * pos_boost));
            for (const auto& c : severity_a) add_event(c, poisson(rng, kSeverityRate * sev_boost_a));
            for (const auto& c : severity_b) add_event(c, poisson(rng, kSeverityRate * sev_boost_b));
            for (const auto& c : background) add_event(c, poisson(rng, background_rate));
            p.windows.push_back(std::move(w));
        }
        // the high-risk cohort is defined by presence of the anchor code
        if (total_anchor == 0) {
            auto& w = p.windows[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(n_windows)))];
            w.events.insert(w.events.begin(), {kSyntheticAnchor, 1});
        }

        if (gold) {
            p.label.source = LabelSource::gold;
            p.label.value = gt.truth;
        } else {
            p.label.source = LabelSource::silver;
            bool flip = rng.bernoulli(spec.silver_noise);
            p.label.value = flip ? 1 - gt.truth : gt.truth;
        }

        double rate = gt.truth ? (gt.severity_group == 1 ? kRateFast : kRateSlow) : kRateNegative;
        double event_time = rng.exponential(rate);
        double censor_time = rng.uniform(kCensorLo, kCensorHi);
        SurvivalInfo s;
        s.time = std::min(event_time, censor_time);
        s.event = event_time <= censor_time ? 1 : 0;
        p.survival = s;

        out.truth[p.patient_id] = gt;
        out.cohort.patients.push_back(std::move(p));
    }
    return out;
}

void save_truth_sidecar(const SyntheticCohort& synth, const std::string& path) {
    std::ofstream outf(path, std::ios::trunc);
    if (!outf) throw DataError("cannot write truth sidecar: " + path);
    for (const auto& p : synth.cohort.patients) {
        const auto& gt = synth.truth.at(p.patient_id);
        nlohmann::ordered_json j;
        j["patient_id"] = p.patient_id;
        j["truth"] = gt.truth;
        j["severity_group"] = gt.severity_group;
        outf << j.dump() << '\n';
    }
}

std::map<std::string, GroundTruth> load_truth_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open truth sidecar: " + path);
    std::map<std::string, GroundTruth> truth;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("truth sidecar line " + std::to_string(line_no) + ": " + e.what());
        }
        GroundTruth gt;
        gt.truth = j.at("truth").get<int>();
        gt.severity_group = j.at("severity_group").get<int>();
        truth[j.at("patient_id").get<std::string>()] = gt;
    }
    return truth;
}

} // namespace pheno
