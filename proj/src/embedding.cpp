#include "pheno/embedding.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pheno/error.hpp"

namespace pheno {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace

const Tensor& EmbeddingTable::vector_for(const ConceptId& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw DataError("concept not in embedding table: " + id);
    return it->second;
}

void EmbeddingTable::insert(const ConceptId& id, Tensor v) {
    if (id.empty()) throw DataError("empty concept id in embedding table");
    if (dimension_ == 0) dimension_ = static_cast<int>(v.size());
    if (v.size() != dimension_)
        throw DataError("embedding dimension mismatch for " + id + ": expected " + std::to_string(dimension_) +
                        ", got " + std::to_string(v.size()));
    if (v.norm() == 0.0) throw DataError("zero-norm embedding vector for concept " + id);
    entries_[id] = std::move(v);
}

EmbeddingTable load_embedding_table(const std::string& path, EmbeddingLoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding table: " + path);
    EmbeddingTable table;
    EmbeddingLoadStats local;
    std::string line;
    size_t row = 0;
    int dim = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 2) throw DataError("embedding row " + std::to_string(row) + ": too few fields");
        if (dim == 0)
            dim = static_cast<int>(fields.size()) - 1;
        else if (static_cast<int>(fields.size()) - 1 != dim)
            throw DataError("embedding row " + std::to_string(row) + ": ragged row, expected " + std::to_string(dim) +
                            " values, got " + std::to_string(fields.size() - 1));
        std::vector<double> v(static_cast<size_t>(dim));
        for (int j = 0; j < dim; ++j) {
            const std::string& f = fields[static_cast<size_t>(j) + 1];
            char* end = nullptr;
            v[static_cast<size_t>(j)] = std::strtod(f.c_str(), &end);
            if (end == f.c_str() || *end != '\0')
                throw DataError("embedding row " + std::to_string(row) + ": non-numeric field '" + f + "'");
        }
        if (table.contains(fields[0])) ++local.duplicates;
        table.insert(fields[0], Tensor::vec(std::move(v)));
        ++local.rows;
    }
    if (stats) *stats = local;
    return table;
}

void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write embedding table: " + path);
    for (const auto& [id, v] : table.entries()) {
        out << id;
        for (int64_t i = 0; i < v.size(); ++i) out << '\t' << format_double(v.at(i));
        out << '\n';
    }
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine similarity undefined for zero vector");
    return a.dot(b) / (na * nb);
}

AggregatedConcepts select_features(const AggregatedConcepts& agg, const EmbeddingTable& table,
                                   const ConceptId& anchor, int k_star) {
    if (k_star < 1) throw ConfigError("select_features requires k_star >= 1");
    if (!table.contains(anchor)) throw ConfigError("anchor concept not in embedding table: " + anchor);
    const Tensor& anchor_vec = table.vector_for(anchor);

    struct Scored {
        ConceptCount cc;
        double sim;
    };
    std::vector<Scored> scored;
    scored.reserve(agg.size());
    for (const auto& cc : agg)
        scored.push_back({cc, cosine_similarity(table.vector_for(cc.concept_id), anchor_vec)});

    auto ranked_before = [](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.cc.concept_id < b.cc.concept_id;
    };
    std::sort(scored.begin(), scored.end(), ranked_before);

    size_t keep = std::min<size_t>(scored.size(), static_cast<size_t>(k_star));
    bool anchor_in_agg = std::any_of(agg.begin(), agg.end(),
                                     [&](const ConceptCount& cc) { return cc.concept_id == anchor; });
    bool anchor_selected = std::any_of(scored.begin(), scored.begin() + static_cast<long>(keep),
                                       [&](const Scored& s) { return s.cc.concept_id == anchor; });
    if (anchor_in_agg && !anchor_selected) {
        // force the anchor in by replacing the lowest-ranked retained concept
        auto anchor_it = std::find_if(scored.begin(), scored.end(),
                                      [&](const Scored& s) { return s.cc.concept_id == anchor; });
        Scored a = *anchor_it;
        scored.erase(anchor_it);
        scored[keep - 1] = a;
        std::sort(scored.begin(), scored.begin() + static_cast<long>(keep), ranked_before);
    }

    AggregatedConcepts out;
    out.reserve(keep);
    for (size_t i = 0; i < keep; ++i) out.push_back(scored[i].cc);
    return out;
}

} // namespace pheno
