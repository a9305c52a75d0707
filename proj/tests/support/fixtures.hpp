#pragma once

#include <vector>

#include "meshdex/model.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/textprep.hpp"

namespace meshdex::testing {

// d_model = 8 model used for gradient and invariance checks.
inline ModelConfig tiny_config(std::size_t layers = 2)
{
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = layers;
    c.d_ff = 12;
    c.n_heads = 2;
    c.max_sequence_length = 16;
    c.dropout = 0.0;
    c.vocab_size = 14;
    c.label_count = 7;
    return c;
}

// Initialized params with every bias and layer-norm vector jittered so no
// gradient is structurally zero.
inline ModelParams tiny_params(std::uint64_t seed = 5, std::size_t layers = 2)
{
    ModelParams p = initialize_params(tiny_config(layers), seed);
    Rng rng(seed + 100);
    for (std::size_t i = 0; i < p.tensor_count(); ++i) {
        Matrix& m = p.tensor(i);
        if (m.rows() == 1 || m.cols() == 1) {
            for (auto& x : m.values()) {
                x += rng.uniform(-0.2, 0.2);
            }
        }
    }
    return p;
}

inline TokenSequence tiny_doc()
{
    return {"tiny", {5, 9, 3, 12, 7, 5, 11}};
}

inline std::vector<std::size_t> tiny_rows() { return {4, 0, 6, 2}; }
inline std::vector<double> tiny_labels() { return {1, 0, 1, 0}; }

}  // namespace meshdex::testing
