#include "meshdex/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "meshdex/error.hpp"
#include "meshdex/kernels.hpp"
#include "meshdex/losses.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/tape.hpp"

namespace meshdex {

void ModelConfig::validate() const
{
    if (d_model == 0 || n_layers == 0 || d_ff == 0 || n_heads == 0 || max_sequence_length == 0) {
        throw UsageError("model sizes must all be positive");
    }
    if (d_model % n_heads != 0) {
        throw UsageError(fmt::format("d_model {} is not divisible by n_heads {}", d_model, n_heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw UsageError(fmt::format("dropout must lie in [0, 1), got {}", dropout));
    }
    if (vocab_size <= kReservedTokens || label_count == 0) {
        throw UsageError("model needs a vocabulary and at least one index label");
    }
}

namespace {

constexpr const char* kLayerTensors[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                                         "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b"};

std::pair<std::size_t, std::size_t> layer_shape(const std::string& leaf, const ModelConfig& c)
{
    const std::size_t d = c.d_model;
    if (leaf == "w1") {
        return {d, c.d_ff};
    }
    if (leaf == "b1") {
        return {1, c.d_ff};
    }
    if (leaf == "w2") {
        return {c.d_ff, d};
    }
    if (leaf[0] == 'w') {
        return {d, d};
    }
    return {1, d};
}

}  // namespace

ModelParams::ModelParams(const ModelConfig& config) : config_(config)
{
    const std::size_t d = config.d_model;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
        index_.emplace(name, names_.size());
        names_.push_back(std::move(name));
        tensors_.emplace_back(rows, cols);
    };
    add("tok_emb", config.vocab_size, d);
    add("idx_emb", config.label_count, d);
    for (const char* stream : {"doc", "idx"}) {
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            for (const char* leaf : kLayerTensors) {
                const auto [r, c] = layer_shape(leaf, config);
                add(fmt::format("{}.{}.{}", stream, l, leaf), r, c);
            }
        }
    }
    add("proj.u", 1, d);
    add("proj.v", 1, d);
    add("proj.bias", config.label_count, 1);
    add("mlm.mix_w", 2 * d, d);
    add("mlm.mix_b", 1, d);
    add("mlm.out_w", d, config.vocab_size);
    add("mlm.out_b", 1, config.vocab_size);
}

std::size_t ModelParams::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& t : tensors_) {
        n += t.size();
    }
    return n;
}

Matrix& ModelParams::at(std::string_view name)
{
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw DataError(fmt::format("model has no tensor '{}'", name));
    }
    return tensors_[it->second];
}

const Matrix& ModelParams::at(std::string_view name) const
{
    return const_cast<ModelParams*>(this)->at(name);
}

void ModelParams::set_zero()
{
    for (auto& t : tensors_) {
        t.fill(0.0);
    }
}

bool ModelParams::all_finite() const
{
    for (const auto& t : tensors_) {
        for (const double x : t.values()) {
            if (!std::isfinite(x)) {
                return false;
            }
        }
    }
    return true;
}

ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed,
                              const TokenEmbeddings* word_vectors)
{
    config.validate();
    ModelParams params(config);
    Rng rng(derive_seed(seed, 0x1417));
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const std::string& name = params.names()[i];
        Matrix& t = params.tensor(i);
        const std::string leaf = name.substr(name.rfind('.') + 1);
        if (leaf == "ln1_g" || leaf == "ln2_g") {
            t.fill(1.0);
            continue;
        }
        const bool bias = leaf.starts_with('b') || leaf == "mix_b" || leaf == "out_b" || name == "proj.bias" ||
                          leaf == "ln1_b" || leaf == "ln2_b";
        if (bias) {
            continue;
        }
        // Embedding tables are treated as 1 x d projections per row.
        const bool table = name == "tok_emb" || name == "idx_emb";
        const double fan = table ? 1.0 + static_cast<double>(t.cols())
                                 : static_cast<double>(t.rows() + t.cols());
        const double limit = std::sqrt(6.0 / fan);
        for (auto& x : t.values()) {
            x = rng.uniform(-limit, limit);
        }
    }
    if (word_vectors) {
        if (word_vectors->dimension() != config.d_model) {
            throw UsageError(fmt::format("word vectors have dimension {}, model expects d_model {}",
                                         word_vectors->dimension(), config.d_model));
        }
        Matrix& tok = params.at("tok_emb");
        const std::size_t n = std::min(tok.rows(), word_vectors->vectors.rows());
        for (std::size_t r = 0; r < n; ++r) {
            if (word_vectors->present[r]) {
                std::copy(word_vectors->vectors.row(r).begin(), word_vectors->vectors.row(r).end(),
                          tok.row(r).begin());
            }
        }
    }
    return params;
}

std::vector<NamedTensor> params_to_tensors(const ModelParams& params)
{
    const ModelConfig& c = params.config();
    std::vector<NamedTensor> out;
    out.push_back({"meta.config",
                   {8},
                   ElementType::float64,
                   {static_cast<double>(c.d_model), static_cast<double>(c.n_layers),
                    static_cast<double>(c.d_ff), static_cast<double>(c.n_heads),
                    static_cast<double>(c.max_sequence_length), c.dropout,
                    static_cast<double>(c.vocab_size), static_cast<double>(c.label_count)}});
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        out.push_back(tensor_from_matrix(params.names()[i], params.tensor(i)));
    }
    return out;
}

ModelParams params_from_tensors(const std::vector<NamedTensor>& tensors)
{
    const auto& meta = find_tensor(tensors, "meta.config").values;
    if (meta.size() != 8) {
        throw DataError("checkpoint has a malformed meta.config tensor");
    }
    ModelConfig c;
    c.d_model = static_cast<std::size_t>(meta[0]);
    c.n_layers = static_cast<std::size_t>(meta[1]);
    c.d_ff = static_cast<std::size_t>(meta[2]);
    c.n_heads = static_cast<std::size_t>(meta[3]);
    c.max_sequence_length = static_cast<std::size_t>(meta[4]);
    c.dropout = meta[5];
    c.vocab_size = static_cast<std::size_t>(meta[6]);
    c.label_count = static_cast<std::size_t>(meta[7]);
    c.validate();
    ModelParams params(c);
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const Matrix loaded = matrix_from_tensor(find_tensor(tensors, params.names()[i]));
        if (!loaded.same_shape(params.tensor(i))) {
            throw DataError(fmt::format("checkpoint tensor '{}' has the wrong shape", params.names()[i]));
        }
        params.tensor(i) = loaded;
    }
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params)
{
    write_archive(path, params_to_tensors(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path)
{
    return params_from_tensors(read_archive(path));
}

Matrix positional_encoding(std::size_t length, std::size_t d_model)
{
    Matrix pe(length, d_model);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; 2 * i < d_model; ++i) {
            const double angle = static_cast<double>(pos) /
                                 std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
            pe(pos, 2 * i) = std::sin(angle);
            if (2 * i + 1 < d_model) {
                pe(pos, 2 * i + 1) = std::cos(angle);
            }
        }
    }
    return pe;
}

// --- Forward graph -------------------------------------------------------------

namespace {

using Var = Tape::Var;

struct LayerRefs {
    ParamRef wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
};

struct Refs {
    ParamRef tok_emb, idx_emb;
    std::vector<LayerRefs> doc, idx;
    ParamRef proj_u, proj_v, proj_bias;
    ParamRef mix_w, mix_b, out_w, out_b;
};

Refs resolve(const ModelParams& p, ModelParams* g)
{
    auto ref = [&](const std::string& name) {
        return ParamRef{&p.at(name), g ? &g->at(name) : nullptr};
    };
    Refs r;
    r.tok_emb = ref("tok_emb");
    r.idx_emb = ref("idx_emb");
    for (const char* stream : {"doc", "idx"}) {
        auto& layers = std::string_view(stream) == "doc" ? r.doc : r.idx;
        for (std::size_t l = 0; l < p.config().n_layers; ++l) {
            const std::string prefix = fmt::format("{}.{}.", stream, l);
            layers.push_back(LayerRefs{
                ref(prefix + "wq"), ref(prefix + "bq"), ref(prefix + "wk"), ref(prefix + "bk"),
                ref(prefix + "wv"), ref(prefix + "bv"), ref(prefix + "wo"), ref(prefix + "bo"),
                ref(prefix + "ln1_g"), ref(prefix + "ln1_b"), ref(prefix + "w1"), ref(prefix + "b1"),
                ref(prefix + "w2"), ref(prefix + "b2"), ref(prefix + "ln2_g"), ref(prefix + "ln2_b")});
        }
    }
    r.proj_u = ref("proj.u");
    r.proj_v = ref("proj.v");
    r.proj_bias = ref("proj.bias");
    r.mix_w = ref("mlm.mix_w");
    r.mix_b = ref("mlm.mix_b");
    r.out_w = ref("mlm.out_w");
    r.out_b = ref("mlm.out_b");
    return r;
}

class Dropout {
public:
    explicit Dropout(DropoutSpec spec) : rate_(spec.rate), rng_(derive_seed(spec.seed, 0xD0)) {}

    Var apply(Tape& t, Var x)
    {
        if (rate_ <= 0.0) {
            return x;
        }
        const Matrix& v = t.value(x);
        Matrix mask(v.rows(), v.cols());
        const double keep = 1.0 - rate_;
        for (auto& m : mask.values()) {
            m = rng_.uniform01() < keep ? 1.0 / keep : 0.0;
        }
        return t.mul_const(x, std::move(mask));
    }

private:
    double rate_;
    Rng rng_;
};

Var linear(Tape& t, Var x, const ParamRef& w, const ParamRef& b)
{
    return t.add_row(t.matmul(x, t.param(w)), t.param(b));
}

// Post-norm transformer block: LN(x + MHA(x)), then LN(h + FFN(h)).
Var encoder_layer(Tape& t, const LayerRefs& L, Var x, std::size_t heads, Dropout& drop)
{
    const std::size_t d = t.value(x).cols();
    const std::size_t dh = d / heads;
    const Var q = linear(t, x, L.wq, L.bq);
    const Var k = linear(t, x, L.wk, L.bk);
    const Var v = linear(t, x, L.wv, L.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = t.slice_cols(q, h * dh, dh);
        const Var kh = t.slice_cols(k, h * dh, dh);
        const Var vh = t.slice_cols(v, h * dh, dh);
        const Var att = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
        outs.push_back(t.matmul(att, vh));
    }
    const Var merged = heads == 1 ? outs[0] : t.concat_cols(outs);
    const Var attn_out = drop.apply(t, linear(t, merged, L.wo, L.bo));
    const Var h1 = t.layer_norm(t.add(x, attn_out), t.param(L.ln1_g), t.param(L.ln1_b));
    const Var ff = drop.apply(t, linear(t, t.relu(linear(t, h1, L.w1, L.b1)), L.w2, L.b2));
    return t.layer_norm(t.add(h1, ff), t.param(L.ln2_g), t.param(L.ln2_b));
}

struct Encoded {
    Var doc;
    Var index;
};

Encoded encode(Tape& t, const Refs& r, const ModelConfig& cfg, std::span<const TokenId> tokens,
               std::span<const std::size_t> rows, Dropout& drop)
{
    std::vector<std::size_t> tok(tokens.begin(), tokens.end());
    // Embeddings are scaled by sqrt(d_model) so the sinusoid does not drown them.
    const Var emb = t.scale(t.gather_rows(r.tok_emb, tok), std::sqrt(static_cast<double>(cfg.d_model)));
    Var x = t.add(emb, t.constant(positional_encoding(tok.size(), cfg.d_model)));
    x = drop.apply(t, x);
    Var m = drop.apply(t, t.gather_rows(r.idx_emb, rows));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        x = encoder_layer(t, r.doc[l], x, cfg.n_heads, drop);
        m = encoder_layer(t, r.idx[l], m, cfg.n_heads, drop);
    }
    return {x, m};
}

// Scaled dot-product attention of queries over keys, values = keys.
Var attend(Tape& t, Var queries, Var keys, std::size_t d_model)
{
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    const Var w = t.softmax_rows(t.scale(t.matmul_nt(queries, keys), scale));
    return t.matmul(w, keys);
}

Var index_logits(Tape& t, const Refs& r, const Encoded& enc, std::span<const std::size_t> rows,
                 std::size_t d_model)
{
    const Var context = attend(t, enc.index, enc.doc, d_model);
    const Var from_context = t.matmul_nt(context, t.param(r.proj_u));
    const Var from_index = t.matmul_nt(enc.index, t.param(r.proj_v));
    return t.add(t.add(from_context, from_index), t.gather_rows(r.proj_bias, rows));
}

// Word-side context (softmax over the index axis), concatenated with the
// word encodings, mixed, then projected to the vocabulary.
Var mlm_logits(Tape& t, const Refs& r, Var doc, Var index, std::size_t d_model)
{
    const Var context = attend(t, doc, index, d_model);
    const std::array<Var, 2> parts{doc, context};
    const Var hidden = t.tanh(linear(t, t.concat_cols(parts), r.mix_w, r.mix_b));
    return linear(t, hidden, r.out_w, r.out_b);
}

void check_inputs(std::span<const TokenId> tokens, std::span<const std::size_t> rows, const ModelConfig& cfg)
{
    if (tokens.empty() || rows.empty()) {
        throw UsageError("forward pass needs at least one token and one candidate");
    }
    if (tokens.size() > cfg.max_sequence_length) {
        throw UsageError(fmt::format("sequence length {} exceeds max_sequence_length {}", tokens.size(),
                                     cfg.max_sequence_length));
    }
    for (const TokenId tok : tokens) {
        if (tok >= cfg.vocab_size) {
            throw UsageError(fmt::format("token id {} outside vocabulary of size {}", tok, cfg.vocab_size));
        }
    }
    for (const std::size_t row : rows) {
        if (row >= cfg.label_count) {
            throw UsageError(fmt::format("candidate row {} outside label table of size {}", row, cfg.label_count));
        }
    }
}

// Candidates are processed in ascending row order so every reduction over the
// index axis runs in one fixed order; results are mapped back afterwards.
struct Canonical {
    std::vector<std::size_t> rows;   // sorted
    std::vector<std::size_t> order;  // rows[k] == original[order[k]]
};

Canonical canonicalize(std::span<const std::size_t> rows)
{
    Canonical c;
    c.order.resize(rows.size());
    std::iota(c.order.begin(), c.order.end(), 0);
    std::sort(c.order.begin(), c.order.end(), [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
    c.rows.reserve(rows.size());
    for (const std::size_t k : c.order) {
        c.rows.push_back(rows[k]);
    }
    for (std::size_t k = 1; k < c.rows.size(); ++k) {
        if (c.rows[k] == c.rows[k - 1]) {
            throw UsageError(fmt::format("duplicate candidate row {}", c.rows[k]));
        }
    }
    return c;
}

}  // namespace

EncodedPair encode_streams(std::span<const TokenId> tokens, std::span<const std::size_t> candidate_rows,
                           const ModelParams& params)
{
    const ModelConfig& cfg = params.config();
    check_inputs(tokens, candidate_rows, cfg);
    const Canonical canon = canonicalize(candidate_rows);
    Tape t;
    const Refs r = resolve(params, nullptr);
    Dropout drop({});
    const Encoded enc = encode(t, r, cfg, tokens, canon.rows, drop);
    EncodedPair out{t.value(enc.doc), Matrix(candidate_rows.size(), cfg.d_model)};
    const Matrix& m = t.value(enc.index);
    for (std::size_t k = 0; k < canon.order.size(); ++k) {
        std::copy(m.row(k).begin(), m.row(k).end(), out.index.row(canon.order[k]).begin());
    }
    return out;
}

Matrix cross_attention_weights(const Matrix& index_enc, const Matrix& doc_enc)
{
    Tape t;
    const Var m = t.constant(index_enc);
    const Var d = t.constant(doc_enc);
    const double scale = 1.0 / std::sqrt(static_cast<double>(doc_enc.cols()));
    return t.value(t.softmax_rows(t.scale(t.matmul_nt(m, d), scale)));
}

Matrix cross_attention(const Matrix& index_enc, const Matrix& doc_enc)
{
    Tape t;
    const Var m = t.constant(index_enc);
    const Var d = t.constant(doc_enc);
    return t.value(attend(t, m, d, doc_enc.cols()));
}

std::vector<double> project_scores(const Matrix& context, const Matrix& index_enc,
                                   std::span<const std::size_t> candidate_rows, const ModelParams& params)
{
    if (context.rows() != index_enc.rows() || context.rows() != candidate_rows.size()) {
        throw UsageError("project_scores: context, index encodings and candidates differ in length");
    }
    const auto u = params.at("proj.u").row(0);
    const auto v = params.at("proj.v").row(0);
    const Matrix& bias = params.at("proj.bias");
    std::vector<double> out(context.rows());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double z = kernels::dot(context.row(j), u) + kernels::dot(index_enc.row(j), v) +
                         bias(candidate_rows[j], 0);
        out[j] = logistic(z);
    }
    return out;
}

std::vector<double> forward_index(const TokenSequence& doc, std::span<const std::size_t> candidate_rows,
                                  const ModelParams& params)
{
    const ModelConfig& cfg = params.config();
    check_inputs(doc.tokens, candidate_rows, cfg);
    const Canonical canon = canonicalize(candidate_rows);
    Tape t;
    const Refs r = resolve(params, nullptr);
    Dropout drop({});
    const Encoded enc = encode(t, r, cfg, doc.tokens, canon.rows, drop);
    const Matrix& z = t.value(index_logits(t, r, enc, canon.rows, cfg.d_model));
    std::vector<double> out(candidate_rows.size());
    for (std::size_t k = 0; k < canon.order.size(); ++k) {
        out[canon.order[k]] = logistic(z[k]);
    }
    return out;
}

MlmOutput forward_mlm(const TokenSequence& masked, std::span<const std::size_t> candidate_rows,
                      const ModelParams& params)
{
    const ModelConfig& cfg = params.config();
    check_inputs(masked.tokens, candidate_rows, cfg);
    if (std::find(masked.tokens.begin(), masked.tokens.end(), kMaskId) == masked.tokens.end()) {
        throw UsageError(fmt::format("document '{}' has no MASK position", masked.doc_id));
    }
    const Canonical canon = canonicalize(candidate_rows);
    Tape t;
    const Refs r = resolve(params, nullptr);
    Dropout drop({});
    const Encoded enc = encode(t, r, cfg, masked.tokens, canon.rows, drop);
    MlmOutput out;
    out.logits = t.value(mlm_logits(t, r, enc.doc, enc.index, cfg.d_model));
    // word_attention is |D| x |M|: softmax over the index axis, columns in
    // caller order.
    const Matrix wa = cross_attention_weights(t.value(enc.doc), t.value(enc.index));
    out.word_attention = Matrix(wa.rows(), wa.cols());
    for (std::size_t i = 0; i < wa.rows(); ++i) {
        for (std::size_t k = 0; k < canon.order.size(); ++k) {
            out.word_attention(i, canon.order[k]) = wa(i, k);
        }
    }
    return out;
}

double index_loss(const TokenSequence& doc, std::span<const std::size_t> candidate_rows,
                  std::span<const double> labels, const ModelParams& params, ModelParams* grads,
                  DropoutSpec dropout)
{
    const ModelConfig& cfg = params.config();
    check_inputs(doc.tokens, candidate_rows, cfg);
    if (labels.size() != candidate_rows.size()) {
        throw UsageError("index_loss: one label per candidate required");
    }
    const Canonical canon = canonicalize(candidate_rows);
    Tape t;
    const Refs r = resolve(params, grads);
    Dropout drop(dropout);
    const Encoded enc = encode(t, r, cfg, doc.tokens, canon.rows, drop);
    const Var z = index_logits(t, r, enc, canon.rows, cfg.d_model);
    const Matrix& zv = t.value(z);
    const std::size_t n = canon.rows.size();
    std::vector<double> scores(n);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) {
        scores[k] = logistic(zv[k]);
        y[k] = labels[canon.order[k]];
    }
    const double loss = bce_loss(scores, y);
    if (grads) {
        Matrix seed(n, 1);
        for (std::size_t k = 0; k < n; ++k) {
            seed[k] = (scores[k] - y[k]) / static_cast<double>(n);
        }
        t.backward(z, seed);
    }
    return loss;
}

double mlm_loss(const TokenSequence& masked, std::span<const MaskTarget> targets,
                std::span<const std::size_t> candidate_rows, const ModelParams& params, ModelParams* grads,
                DropoutSpec dropout)
{
    const ModelConfig& cfg = params.config();
    check_inputs(masked.tokens, candidate_rows, cfg);
    if (targets.empty()) {
        throw UsageError("mlm_loss needs at least one target");
    }
    const Canonical canon = canonicalize(candidate_rows);
    Tape t;
    const Refs r = resolve(params, grads);
    Dropout drop(dropout);
    const Encoded enc = encode(t, r, cfg, masked.tokens, canon.rows, drop);
    std::vector<std::size_t> positions;
    positions.reserve(targets.size());
    for (const auto& tg : targets) {
        if (tg.position >= masked.size() || tg.original >= cfg.vocab_size) {
            throw UsageError("mlm target out of range");
        }
        positions.push_back(tg.position);
    }
    // Only the target rows are projected to the vocabulary.
    const Var context = attend(t, enc.doc, enc.index, cfg.d_model);
    const std::array<Var, 2> parts{t.select_rows(enc.doc, positions), t.select_rows(context, positions)};
    const Var hidden = t.tanh(linear(t, t.concat_cols(parts), r.mix_w, r.mix_b));
    const Var logits = linear(t, hidden, r.out_w, r.out_b);
    const Matrix& lv = t.value(logits);
    const double n = static_cast<double>(targets.size());
    double loss = 0.0;
    Matrix seed(lv.rows(), lv.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto row = lv.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (const double x : row) {
            sum += std::exp(x - mx);
        }
        const double log_z = mx + std::log(sum);
        loss += log_z - row[targets[i].original];
        for (std::size_t c = 0; c < row.size(); ++c) {
            seed(i, c) = std::exp(row[c] - log_z) / n;
        }
        seed(i, targets[i].original) -= 1.0 / n;
    }
    if (grads) {
        t.backward(logits, seed);
    }
    return loss / n;
}

}  // namespace meshdex
