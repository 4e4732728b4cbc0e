#include "pheno/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pheno/error.hpp"

namespace pheno {

using json = nlohmann::ordered_json;

void ModelConfig::validate() const {
    if (d_input < 1 || d_model < 1 || n_heads < 1 || n_layers < 1 || k_star < 1)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    if (d_model % 2 != 0) throw ConfigError("d_model must be even for the frequency encoder");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0,1)");
    if (layer_norm_eps <= 0.0) throw ConfigError("layer_norm_eps must be positive");
    if (d_ff < 0) throw ConfigError("d_ff must be nonnegative");
}

std::vector<ParamRef> named_params(ModelParams& p) {
    std::vector<ParamRef> refs;
    auto add = [&refs](const std::string& name, Tensor& t, ParamKind kind) { refs.push_back({name, &t, kind}); };
    add("proj.weight", p.proj_w, ParamKind::weight);
    add("proj.bias", p.proj_b, ParamKind::bias);
    add("freq.w1", p.freq_w1, ParamKind::weight);
    add("freq.b1", p.freq_b1, ParamKind::bias);
    add("freq.w2", p.freq_w2, ParamKind::weight);
    add("freq.b2", p.freq_b2, ParamKind::bias);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string prefix = "layer" + std::to_string(i) + ".";
        add(prefix + "attn.wq", l.attn_wq, ParamKind::weight);
        add(prefix + "attn.wk", l.attn_wk, ParamKind::weight);
        add(prefix + "attn.wv", l.attn_wv, ParamKind::weight);
        add(prefix + "attn.wout", l.attn_wout, ParamKind::weight);
        add(prefix + "norm1.gain", l.norm1_gain, ParamKind::norm_gain);
        add(prefix + "norm1.bias", l.norm1_bias, ParamKind::bias);
        add(prefix + "ffn.w1", l.ffn_w1, ParamKind::weight);
        add(prefix + "ffn.b1", l.ffn_b1, ParamKind::bias);
        add(prefix + "ffn.w2", l.ffn_w2, ParamKind::weight);
        add(prefix + "ffn.b2", l.ffn_b2, ParamKind::bias);
        add(prefix + "norm2.gain", l.norm2_gain, ParamKind::norm_gain);
        add(prefix + "norm2.bias", l.norm2_bias, ParamKind::bias);
    }
    add("head.weight", p.head_w, ParamKind::weight);
    add("head.bias", p.head_b, ParamKind::bias);
    return refs;
}

std::vector<ParamRef> named_params(const ModelParams& p) { return named_params(const_cast<ModelParams&>(p)); }

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    const int d = config.d_model;
    const int dh = d / 2;
    const int dff = config.ff_dim();

    ModelParams p;
    p.proj_w = Tensor({d, config.d_input});
    p.proj_b = Tensor({d});
    p.freq_w1 = Tensor({dh, 1});
    p.freq_b1 = Tensor({dh});
    p.freq_w2 = Tensor({d, dh});
    p.freq_b2 = Tensor({d});
    p.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : p.layers) {
        l.attn_wq = Tensor({d, d});
        l.attn_wk = Tensor({d, d});
        l.attn_wv = Tensor({d, d});
        l.attn_wout = Tensor({d, d});
        l.norm1_gain = Tensor({d});
        l.norm1_bias = Tensor({d});
        l.ffn_w1 = Tensor({dff, d});
        l.ffn_b1 = Tensor({dff});
        l.ffn_w2 = Tensor({d, dff});
        l.ffn_b2 = Tensor({d});
        l.norm2_gain = Tensor({d});
        l.norm2_bias = Tensor({d});
    }
    p.head_w = Tensor({1, d});
    p.head_b = Tensor({1});

    Rng rng(config.seed);
    for (auto& ref : named_params(p)) {
        Tensor& t = *ref.tensor;
        switch (ref.kind) {
            case ParamKind::weight: {
                const int fan_out = t.shape()[0];
                const int fan_in = t.rank() == 2 ? t.shape()[1] : 1;
                const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-limit, limit);
                break;
            }
            case ParamKind::bias:
                break; // zeros
            case ParamKind::norm_gain:
                for (int64_t i = 0; i < t.size(); ++i) t.at(i) = 1.0;
                break;
        }
    }
    return p;
}

Tensor project_embedding(const Tensor& e, const ModelParams& params) {
    if (e.size() != params.proj_w.cols())
        throw NumericError("projection input dimension " + e.shape_str() + " does not match weight " +
                           params.proj_w.shape_str());
    const int d = params.proj_w.rows();
    Tensor out({d});
    for (int i = 0; i < d; ++i) {
        double s = params.proj_b.at(i);
        for (int j = 0; j < params.proj_w.cols(); ++j) s += params.proj_w(i, j) * e.at(j);
        out.at(i) = s;
    }
    return out;
}

namespace {

double freq_input(int64_t n, const ModelConfig& config) {
    if (n < 1) throw NumericError("frequency encoding requires count >= 1");
    double x = static_cast<double>(n);
    return config.freq_log_transform ? std::log1p(x) : x;
}

} // namespace

Tensor freq_encode(int64_t n, const ModelParams& params, const ModelConfig& config) {
    const double x = freq_input(n, config);
    const int dh = params.freq_w1.rows();
    Tensor hidden({dh});
    for (int i = 0; i < dh; ++i) hidden.at(i) = silu(x * params.freq_w1(i, 0) + params.freq_b1.at(i));
    const int d = params.freq_w2.rows();
    Tensor out({d});
    for (int i = 0; i < d; ++i) {
        double s = params.freq_b2.at(i);
        for (int j = 0; j < dh; ++j) s += params.freq_w2(i, j) * hidden.at(j);
        out.at(i) = s;
    }
    return out;
}

AssembledTokens assemble_tokens(const ModelInput& input, const ModelParams& params, const ModelConfig& config) {
    const int k = static_cast<int>(input.tokens.size());
    if (k < 1) throw DataError("empty model input for patient " + input.patient_id);
    const int d = params.proj_w.rows();
    AssembledTokens out{Tensor({k, d}), Tensor({k, d})};
    for (int t = 0; t < k; ++t) {
        Tensor proj = project_embedding(*input.tokens[static_cast<size_t>(t)].embedding, params);
        Tensor freq = freq_encode(input.tokens[static_cast<size_t>(t)].count, params, config);
        for (int j = 0; j < d; ++j) {
            out.e_proj(t, j) = proj.at(j);
            out.z(t, j) = proj.at(j) + freq.at(j);
        }
    }
    return out;
}

ParamNodes stage_params(Tape& tape, const ModelParams& params) {
    ParamNodes n;
    n.proj_w = tape.leaf(params.proj_w);
    n.proj_b = tape.leaf(params.proj_b);
    n.freq_w1 = tape.leaf(params.freq_w1);
    n.freq_b1 = tape.leaf(params.freq_b1);
    n.freq_w2 = tape.leaf(params.freq_w2);
    n.freq_b2 = tape.leaf(params.freq_b2);
    for (const auto& l : params.layers) {
        ParamNodes::Layer ln;
        ln.attn_wq = tape.leaf(l.attn_wq);
        ln.attn_wk = tape.leaf(l.attn_wk);
        ln.attn_wv = tape.leaf(l.attn_wv);
        ln.attn_wout = tape.leaf(l.attn_wout);
        ln.norm1_gain = tape.leaf(l.norm1_gain);
        ln.norm1_bias = tape.leaf(l.norm1_bias);
        ln.ffn_w1 = tape.leaf(l.ffn_w1);
        ln.ffn_b1 = tape.leaf(l.ffn_b1);
        ln.ffn_w2 = tape.leaf(l.ffn_w2);
        ln.ffn_b2 = tape.leaf(l.ffn_b2);
        ln.norm2_gain = tape.leaf(l.norm2_gain);
        ln.norm2_bias = tape.leaf(l.norm2_bias);
        n.layers.push_back(ln);
    }
    n.head_w = tape.leaf(params.head_w);
    n.head_b = tape.leaf(params.head_b);
    return n;
}

std::vector<Tape::NodeId> param_node_list(const ParamNodes& n) {
    std::vector<Tape::NodeId> ids{n.proj_w, n.proj_b, n.freq_w1, n.freq_b1, n.freq_w2, n.freq_b2};
    for (const auto& l : n.layers) {
        ids.insert(ids.end(), {l.attn_wq, l.attn_wk, l.attn_wv, l.attn_wout, l.norm1_gain, l.norm1_bias,
                               l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2, l.norm2_gain, l.norm2_bias});
    }
    ids.push_back(n.head_w);
    ids.push_back(n.head_b);
    return ids;
}

namespace {

Tensor dropout_mask(const std::vector<int>& shape, double rate, Rng& rng) {
    Tensor mask(shape);
    const double keep = 1.0 - rate;
    for (int64_t i = 0; i < mask.size(); ++i) mask.at(i) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mask;
}

Tape::NodeId maybe_dropout(Tape& tape, Tape::NodeId x, const ModelConfig& config, bool training, Rng* rng) {
    if (!training || config.dropout_rate <= 0.0) return x;
    if (!rng) throw ConfigError("training-mode forward with dropout needs an rng");
    return tape.mul_const(x, dropout_mask(tape.value(x).shape(), config.dropout_rate, *rng));
}

Tape::NodeId attention_on_tape(Tape& tape, Tape::NodeId x, Tape::NodeId e_proj, const ParamNodes::Layer& l,
                               int layer, const ModelConfig& config, bool training, Rng* rng) {
    const bool v_from_proj = config.values_all_layers || (config.values_from_projection && layer == 0);
    Tape::NodeId v_src = v_from_proj ? e_proj : x;
    Tape::NodeId q = tape.matmul_nt(x, l.attn_wq);
    Tape::NodeId k = tape.matmul_nt(x, l.attn_wk);
    Tape::NodeId v = tape.matmul_nt(v_src, l.attn_wv);

    const int dh = config.head_dim();
    std::vector<Tape::NodeId> heads;
    heads.reserve(static_cast<size_t>(config.n_heads));
    for (int h = 0; h < config.n_heads; ++h) {
        Tape::NodeId qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::NodeId kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::NodeId vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::NodeId scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tape::NodeId weights = tape.softmax_rows(scores);
        heads.push_back(tape.matmul(weights, vh));
    }
    Tape::NodeId attn = tape.matmul_nt(tape.concat_cols(heads), l.attn_wout);
    attn = maybe_dropout(tape, attn, config, training, rng);
    return tape.layer_norm_rows(tape.add(x, attn), l.norm1_gain, l.norm1_bias, config.layer_norm_eps);
}

Tape::NodeId ffn_on_tape(Tape& tape, Tape::NodeId x, const ParamNodes::Layer& l, const ModelConfig& config,
                         bool training, Rng* rng) {
    Tape::NodeId hidden = tape.silu(tape.add_rowvec(tape.matmul_nt(x, l.ffn_w1), l.ffn_b1));
    Tape::NodeId out = tape.add_rowvec(tape.matmul_nt(hidden, l.ffn_w2), l.ffn_b2);
    out = maybe_dropout(tape, out, config, training, rng);
    return tape.layer_norm_rows(tape.add(x, out), l.norm2_gain, l.norm2_bias, config.layer_norm_eps);
}

} // namespace

ForwardNodes forward_on_tape(Tape& tape, const ParamNodes& nodes, const ModelInput& input,
                             const ModelConfig& config, bool training, Rng* dropout_rng) {
    const int k = static_cast<int>(input.tokens.size());
    if (k < 1) throw DataError("empty model input for patient " + input.patient_id);
    if (k > config.k_star) throw NumericError("input has more tokens than k_star");

    Tensor e({k, config.d_input});
    Tensor counts({k, 1});
    for (int t = 0; t < k; ++t) {
        const auto& tok = input.tokens[static_cast<size_t>(t)];
        if (tok.embedding->size() != config.d_input)
            throw NumericError("token embedding dimension mismatch for " + tok.concept_id);
        for (int j = 0; j < config.d_input; ++j) e(t, j) = tok.embedding->at(j);
        counts(t, 0) = freq_input(tok.count, config);
    }

    Tape::NodeId e_leaf = tape.leaf(std::move(e));
    Tape::NodeId n_leaf = tape.leaf(std::move(counts));

    Tape::NodeId e_proj = tape.add_rowvec(tape.matmul_nt(e_leaf, nodes.proj_w), nodes.proj_b);
    Tape::NodeId hidden = tape.silu(tape.add_rowvec(tape.matmul_nt(n_leaf, nodes.freq_w1), nodes.freq_b1));
    Tape::NodeId freq = tape.add_rowvec(tape.matmul_nt(hidden, nodes.freq_w2), nodes.freq_b2);
    Tape::NodeId z = tape.add(e_proj, freq);

    for (int layer = 0; layer < config.n_layers; ++layer) {
        const auto& l = nodes.layers[static_cast<size_t>(layer)];
        z = attention_on_tape(tape, z, e_proj, l, layer, config, training, dropout_rng);
        z = ffn_on_tape(tape, z, l, config, training, dropout_rng);
    }

    ForwardNodes out;
    out.pooled = tape.mean_rows(z);
    out.prob = tape.sigmoid(tape.add_rowvec(tape.matmul_nt(out.pooled, nodes.head_w), nodes.head_b));
    return out;
}

ForwardResult forward(const ModelInput& input, const ModelParams& params, const ModelConfig& config,
                      bool training, Rng* dropout_rng) {
    Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    ForwardNodes fwd = forward_on_tape(tape, nodes, input, config, training, dropout_rng);
    ForwardResult r;
    r.probability = tape.value(fwd.prob).at(0);
    const Tensor& pooled = tape.value(fwd.pooled);
    r.embedding = Tensor({static_cast<int>(pooled.size())});
    for (int64_t i = 0; i < pooled.size(); ++i) r.embedding.at(i) = pooled.at(i);
    return r;
}

Tensor attention_block(const Tensor& layer_input, const Tensor& e_proj, const ModelParams& params, int layer,
                       const ModelConfig& config, bool training, Rng* dropout_rng) {
    Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    Tape::NodeId x = tape.leaf(layer_input);
    Tape::NodeId ep = tape.leaf(e_proj);
    Tape::NodeId out = attention_on_tape(tape, x, ep, nodes.layers.at(static_cast<size_t>(layer)), layer, config,
                                         training, dropout_rng);
    return tape.value(out);
}

Tensor ffn_block(const Tensor& x, const ModelParams& params, int layer, const ModelConfig& config, bool training,
                 Rng* dropout_rng) {
    Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    Tape::NodeId in = tape.leaf(x);
    Tape::NodeId out = ffn_on_tape(tape, in, nodes.layers.at(static_cast<size_t>(layer)), config, training,
                                   dropout_rng);
    return tape.value(out);
}

namespace {

json config_to_json(const ModelConfig& c) {
    json j;
    j["d_input"] = c.d_input;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_layers"] = c.n_layers;
    j["d_ff"] = c.d_ff;
    j["dropout_rate"] = c.dropout_rate;
    j["layer_norm_eps"] = c.layer_norm_eps;
    j["k_star"] = c.k_star;
    j["values_from_projection"] = c.values_from_projection;
    j["values_all_layers"] = c.values_all_layers;
    j["freq_log_transform"] = c.freq_log_transform;
    j["seed"] = c.seed;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_input = j.at("d_input").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.k_star = j.at("k_star").get<int>();
    c.values_from_projection = j.at("values_from_projection").get<bool>();
    c.values_all_layers = j.at("values_all_layers").get<bool>();
    c.freq_log_transform = j.at("freq_log_transform").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json j;
    j["format"] = "pheno-checkpoint-v1";
    j["config"] = config_to_json(ckpt.config);
    json params = json::array();
    for (const auto& ref : named_params(ckpt.params)) {
        json pj;
        pj["name"] = ref.name;
        pj["shape"] = ref.tensor->shape();
        pj["data"] = ref.tensor->data();
        params.push_back(std::move(pj));
    }
    j["params"] = std::move(params);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError("checkpoint parse failure in " + path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "pheno-checkpoint-v1")
        throw DataError("unrecognized checkpoint format in " + path);
    Checkpoint ckpt;
    ckpt.config = config_from_json(j.at("config"));
    ckpt.params = init_params(ckpt.config);
    auto refs = named_params(ckpt.params);
    const auto& params = j.at("params");
    if (params.size() != refs.size()) throw DataError("checkpoint parameter count mismatch in " + path);
    for (size_t i = 0; i < refs.size(); ++i) {
        const auto& pj = params[i];
        if (pj.at("name").get<std::string>() != refs[i].name)
            throw DataError("checkpoint parameter order mismatch at " + refs[i].name);
        auto shape = pj.at("shape").get<std::vector<int>>();
        auto data = pj.at("data").get<std::vector<double>>();
        *refs[i].tensor = Tensor(std::move(shape), std::move(data));
    }
    return ckpt;
}

} // namespace pheno
