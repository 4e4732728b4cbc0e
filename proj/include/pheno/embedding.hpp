#pragma once

#include <map>
#include <string>
#include <vector>

#include "pheno/tensor.hpp"

namespace pheno {

// Concept identifiers carry an ontology prefix, e.g. "PheCode:415.2" or
// "CUI:C0581126".
using ConceptId = std::string;

// Unique concepts with their cumulative occurrence counts over a patient's
// selected time range.
struct ConceptCount {
    ConceptId concept_id;
    int64_t count = 0;
    bool operator==(const ConceptCount&) const = default;
};
using AggregatedConcepts = std::vector<ConceptCount>;

// Pre-trained concept embedding table: ConceptId -> vector of fixed
// dimension. All vectors share the dimension and none are zero-norm.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(int dimension) : dimension_(dimension) {}

    int dimension() const { return dimension_; }
    size_t size() const { return entries_.size(); }
    bool contains(const ConceptId& id) const { return entries_.count(id) > 0; }
    // Throws DataError when the concept is absent.
    const Tensor& vector_for(const ConceptId& id) const;
    // Validates dimension and nonzero norm; duplicate ids overwrite.
    void insert(const ConceptId& id, Tensor v);
    const std::map<ConceptId, Tensor>& entries() const { return entries_; }

private:
    int dimension_ = 0;
    std::map<ConceptId, Tensor> entries_;
};

struct EmbeddingLoadStats {
    size_t rows = 0;
    size_t duplicates = 0;
};

// Tab-separated file, one row per concept: id \t v1 \t ... \t v_d.
// Ragged rows and non-numeric fields raise DataError with the row index;
// duplicate ids keep the last row (counted in stats); zero vectors raise
// DataError naming the concept.
EmbeddingTable load_embedding_table(const std::string& path, EmbeddingLoadStats* stats = nullptr);
void save_embedding_table(const EmbeddingTable& table, const std::string& path);

// (a . b) / (|a| |b|); throws NumericError on a zero vector.
double cosine_similarity(const Tensor& a, const Tensor& b);

// Ranks concepts by cosine similarity to the anchor's vector (descending,
// ties broken by lexicographic id) and keeps the top k_star. The anchor,
// when present in `agg`, is always part of the result: if ranked out it
// replaces the lowest-ranked retained concept. Concepts absent from the
// table must be filtered out before calling. Counts pass through unchanged.
AggregatedConcepts select_features(const AggregatedConcepts& agg, const EmbeddingTable& table,
                                   const ConceptId& anchor, int k_star);

} // namespace pheno
