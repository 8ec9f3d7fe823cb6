#pragma once

#include "mtr/autodiff.hpp"
#include "mtr/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mtr::nn {

using ad::Graph;
using ad::Mat;
using ad::Tensor;
using ad::Var;

enum class Init { Xavier, Zero, One, Normal02 };

// Named parameter registry. Iteration order is name-sorted, and each
// tensor is initialized from a stream derived from its own name, so
// construction order never affects results.
class ParamStore {
public:
    Tensor& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                Init init = Init::Xavier);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    void init_all(std::uint64_t seed);
    void init_matching(std::uint64_t seed, const std::string& prefix);
    void zero_grad();
    double grad_norm() const;
    long total_size() const;

    std::vector<std::pair<std::string, Tensor*>> items();
    std::vector<std::pair<std::string, const Tensor*>> items() const;

private:
    struct Entry {
        std::unique_ptr<Tensor> tensor;
        Init init;
    };
    std::map<std::string, Entry> entries_;
    static void init_tensor(Tensor& t, Init init, std::uint64_t seed);
};

struct Linear {
    Tensor* W = nullptr;
    Tensor* b = nullptr;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int in, int out);
    // x: column vector
    Var operator()(Graph& g, Var x) const;
    // X: one column per token
    Var cols(Graph& g, Var X) const;
};

struct GRUCell {
    Tensor* W = nullptr;  // 3h x in
    Tensor* U = nullptr;  // 3h x h
    Tensor* b = nullptr;  // 3h x 1
    int hidden = 0;

    GRUCell() = default;
    GRUCell(ParamStore& ps, const std::string& prefix, int in, int hidden);
    Var step(Graph& g, Var x, Var h) const;
    Var zero_state(Graph& g) const;
};

struct Embedding {
    Tensor* table = nullptr;  // dim x count
    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& name, int dim, int count);
    Var operator()(Graph& g, int index) const;
    int count() const { return static_cast<int>(table->value.cols()); }
};

struct LayerNorm {
    Tensor* gain = nullptr;
    Tensor* bias = nullptr;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
    Var cols(Graph& g, Var X) const;
};

// Post-norm Transformer encoder layer with GELU feed-forward.
struct TransformerLayer {
    Linear wq, wk, wv, wo, ff1, ff2;
    LayerNorm ln1, ln2;
    int heads = 1;
    int d_model = 0;

    TransformerLayer() = default;
    TransformerLayer(ParamStore& ps, const std::string& prefix, int d_model, int d_ff,
                     int heads);
    Var apply(Graph& g, Var X, bool training, double dropout_p, Rng& rng) const;
};

Var sample_gaussian(Graph& g, Var mean, Var log_var, Rng& rng);

struct AdamState {
    std::map<std::string, std::pair<Mat, Mat>> moments;
    long step = 0;
};

// Adam with global-norm gradient clipping.
void adam_step(ParamStore& ps, AdamState& state, double lr, double clip_norm = 5.0,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace mtr::nn
