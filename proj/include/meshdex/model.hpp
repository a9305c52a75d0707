#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "meshdex/archive.hpp"
#include "meshdex/matrix.hpp"
#include "meshdex/textprep.hpp"

namespace meshdex {

struct TokenEmbeddings;

struct ModelConfig {
    std::size_t d_model = 256;
    std::size_t n_layers = 4;
    std::size_t d_ff = 256;
    std::size_t n_heads = 4;
    std::size_t max_sequence_length = kDefaultMaxSequenceLength;
    double dropout = 0.1;
    std::size_t vocab_size = 0;
    std::size_t label_count = 0;  // ontology nodes, majors and supplementary

    /// Throws UsageError on non-positive sizes or d_model % n_heads != 0.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named tensor store. Names and their order are fixed by the config:
///   tok_emb [V x d], idx_emb [L x d]
///   {doc,idx}.<layer>.{wq,bq,wk,bk,wv,bv,wo,bo,ln1_g,ln1_b,w1,b1,w2,b2,ln2_g,ln2_b}
///   proj.u [1 x d], proj.v [1 x d], proj.bias [L x 1]
///   mlm.mix_w [2d x d], mlm.mix_b, mlm.out_w [d x V], mlm.out_b
class ModelParams {
public:
    ModelParams() = default;
    /// All tensors zero.
    explicit ModelParams(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t tensor_count() const noexcept { return tensors_.size(); }
    std::size_t parameter_count() const;

    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;
    Matrix& tensor(std::size_t i) { return tensors_[i]; }
    const Matrix& tensor(std::size_t i) const { return tensors_[i]; }

    ModelParams zeros_like() const { return ModelParams(config_); }
    void set_zero();
    bool all_finite() const;

    friend bool operator==(const ModelParams& a, const ModelParams& b)
    {
        return a.config_ == b.config_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    std::vector<Matrix> tensors_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Glorot-uniform matrices, zero biases, unit layer-norm gains. Token rows
/// with a word vector start from it.
ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed,
                              const TokenEmbeddings* word_vectors = nullptr);

std::vector<NamedTensor> params_to_tensors(const ModelParams& params);
ModelParams params_from_tensors(const std::vector<NamedTensor>& tensors);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Sinusoidal encoding: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(...).
Matrix positional_encoding(std::size_t length, std::size_t d_model);

struct EncodedPair {
    Matrix doc;    // |D| x d_model
    Matrix index;  // |M| x d_model
};

/// Candidate rows are ontology positions. Both streams run the same number of
/// self-attention layers with separate weights; only the document stream gets
/// positions. Rows of `index` follow the order of `candidate_rows`.
EncodedPair encode_streams(std::span<const TokenId> tokens, std::span<const std::size_t> candidate_rows,
                           const ModelParams& params);

/// Softmax over the word axis of index_enc * doc_enc^T / sqrt(d).
Matrix cross_attention_weights(const Matrix& index_enc, const Matrix& doc_enc);
/// Index-specific context vectors: weights * doc_enc.
Matrix cross_attention(const Matrix& index_enc, const Matrix& doc_enc);

/// score_j = sigmoid(u . context_j + v . index_j + bias[row_j]).
std::vector<double> project_scores(const Matrix& context, const Matrix& index_enc,
                                   std::span<const std::size_t> candidate_rows,
                                   const ModelParams& params);

/// Full scoring stack for one document. Deterministic; dropout is off.
std::vector<double> forward_index(const TokenSequence& doc, std::span<const std::size_t> candidate_rows,
                                  const ModelParams& params);

struct MlmOutput {
    Matrix logits;          // |D| x |V|
    Matrix word_attention;  // |D| x |M|, softmax over the index axis
};

/// Throws UsageError when the sequence holds no MASK token.
MlmOutput forward_mlm(const TokenSequence& masked, std::span<const std::size_t> candidate_rows,
                      const ModelParams& params);

struct MaskTarget {
    std::size_t position = 0;
    TokenId original = 0;

    friend bool operator==(const MaskTarget&, const MaskTarget&) = default;
};

struct DropoutSpec {
    double rate = 0.0;
    std::uint64_t seed = 0;
};

/// Mean BCE over candidates. When `grads` is non-null the gradient of the
/// loss is added into it.
double index_loss(const TokenSequence& doc, std::span<const std::size_t> candidate_rows,
                  std::span<const double> labels, const ModelParams& params, ModelParams* grads,
                  DropoutSpec dropout = {});

/// Mean cross-entropy over the target positions.
double mlm_loss(const TokenSequence& masked, std::span<const MaskTarget> targets,
                std::span<const std::size_t> candidate_rows, const ModelParams& params,
                ModelParams* grads, DropoutSpec dropout = {});

}  // namespace meshdex
