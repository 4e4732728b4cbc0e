#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pheno/preprocess.hpp"
#include "pheno/rng.hpp"
#include "pheno/tape.hpp"
#include "pheno/tensor.hpp"

namespace pheno {

struct ModelConfig {
    int d_input = 16;
    int d_model = 16; // divisible by n_heads and by 2
    int n_heads = 2;
    int n_layers = 1;
    int d_ff = 0; // 0 -> 4 * d_model
    double dropout_rate = 0.1;
    double layer_norm_eps = 1e-5;
    int k_star = 16;
    // First attention layer takes values from the projected embeddings
    // instead of the layer input; `values_all_layers` extends that to every
    // layer. Both false gives a standard encoder block.
    bool values_from_projection = true;
    bool values_all_layers = false;
    bool freq_log_transform = false; // encode log(1+n) instead of raw counts
    uint64_t seed = 1;

    int head_dim() const { return d_model / n_heads; }
    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    void validate() const;
};

struct LayerParams {
    Tensor attn_wq, attn_wk, attn_wv, attn_wout; // each [d_model x d_model]
    Tensor norm1_gain, norm1_bias;               // [d_model]
    Tensor ffn_w1, ffn_b1;                       // [d_ff x d_model], [d_ff]
    Tensor ffn_w2, ffn_b2;                       // [d_model x d_ff], [d_model]
    Tensor norm2_gain, norm2_bias;               // [d_model]
};

struct ModelParams {
    Tensor proj_w, proj_b;                       // [d_model x d_input], [d_model]
    Tensor freq_w1, freq_b1, freq_w2, freq_b2;   // [d_model/2 x 1], [d_model/2], [d_model x d_model/2], [d_model]
    std::vector<LayerParams> layers;
    Tensor head_w, head_b;                       // [1 x d_model], [1]
};

enum class ParamKind { weight, bias, norm_gain };

// Stable enumeration used by init, Adam state, checkpoints and grad checks.
// Names: proj.weight, proj.bias, freq.w1, freq.b1, freq.w2, freq.b2,
// layer<i>.attn.{wq,wk,wv,wout}, layer<i>.norm1.{gain,bias},
// layer<i>.ffn.{w1,b1,w2,b2}, layer<i>.norm2.{gain,bias},
// head.weight, head.bias.
struct ParamRef {
    std::string name;
    Tensor* tensor;
    ParamKind kind;
};
std::vector<ParamRef> named_params(ModelParams& params);
std::vector<ParamRef> named_params(const ModelParams& params); // const-cast view for read-only walks

// Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases,
// unit norm gains; deterministic given config.seed.
ModelParams init_params(const ModelConfig& config);

// ---- plain (non-tape) building blocks ----

// W_proj * e + b_proj
Tensor project_embedding(const Tensor& e, const ModelParams& params);
// freq.w2 * silu(n * freq.w1 + freq.b1) + freq.b2; n is the raw cumulative
// count (or log(1+n) under freq_log_transform)
Tensor freq_encode(int64_t n, const ModelParams& params, const ModelConfig& config);

struct AssembledTokens {
    Tensor z;      // [K x d_model] token inputs
    Tensor e_proj; // [K x d_model] projected embeddings (value source)
};
// Row k = project_embedding(e_k) + freq_encode(n_k)
AssembledTokens assemble_tokens(const ModelInput& input, const ModelParams& params, const ModelConfig& config);

// ---- tape forward ----

struct ParamNodes {
    Tape::NodeId proj_w, proj_b;
    Tape::NodeId freq_w1, freq_b1, freq_w2, freq_b2;
    struct Layer {
        Tape::NodeId attn_wq, attn_wk, attn_wv, attn_wout;
        Tape::NodeId norm1_gain, norm1_bias;
        Tape::NodeId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Tape::NodeId norm2_gain, norm2_bias;
    };
    std::vector<Layer> layers;
    Tape::NodeId head_w, head_b;
};
// Inserts every parameter as a leaf; ids align with named_params order.
ParamNodes stage_params(Tape& tape, const ModelParams& params);
std::vector<Tape::NodeId> param_node_list(const ParamNodes& nodes);

struct ForwardNodes {
    Tape::NodeId prob;   // [1x1] sigmoid output
    Tape::NodeId pooled; // [1 x d_model] mean-pooled patient embedding
};
// Full differentiable forward pass: token assembly, n_layers attention/FFN
// blocks, mean pooling, sigmoid head. `dropout_rng` may be null when
// training is false or dropout_rate is 0.
ForwardNodes forward_on_tape(Tape& tape, const ParamNodes& nodes, const ModelInput& input,
                             const ModelConfig& config, bool training, Rng* dropout_rng);

// ---- spec-level conveniences (run a local tape) ----

struct ForwardResult {
    double probability = 0.0;
    Tensor embedding; // [d_model]
};
ForwardResult forward(const ModelInput& input, const ModelParams& params, const ModelConfig& config,
                      bool training = false, Rng* dropout_rng = nullptr);

// One attention block applied to `layer_input` with `e_proj` as the layer-1
// value source; exposed for block-level tests.
Tensor attention_block(const Tensor& layer_input, const Tensor& e_proj, const ModelParams& params, int layer,
                       const ModelConfig& config, bool training = false, Rng* dropout_rng = nullptr);
Tensor ffn_block(const Tensor& x, const ModelParams& params, int layer, const ModelConfig& config,
                 bool training = false, Rng* dropout_rng = nullptr);

// ---- checkpoints ----

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};
// Self-describing JSON: {"format": "pheno-checkpoint-v1", "config": {...},
// "params": [{"name", "shape", "data"}, ...]} with exact double round-trip.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace pheno
