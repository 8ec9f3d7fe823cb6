#pragma once

#include "mtr/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace mtr::ad {

using Mat = Eigen::MatrixXd;

// A persistent differentiable tensor (model parameter). Graphs reference
// the value in place and accumulate into `grad`.
struct Tensor {
    Mat value;
    Mat grad;

    Tensor() = default;
    Tensor(Eigen::Index rows, Eigen::Index cols)
        : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Build a scalar expression with the ops below, then
// call backward(); parameter gradients land in Tensor::grad.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var param(Tensor& t);
    Var embed(Tensor& table, int col);  // column `col` of a parameter table
    Var input(Mat v);                   // constant, no gradient

    const Mat& val(Var v) const;
    double scalar(Var v) const;

    // arithmetic
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var affine(Var a, double scale, double shift);
    Var add_n(std::span<const Var> xs);
    Var add_broadcast_col(Var m, Var col);

    // shape
    Var concat_rows(std::span<const Var> xs);
    Var slice_rows(Var a, int row0, int nrows);
    Var stack_cols(std::span<const Var> xs);
    Var col(Var a, int j);
    Var flatten(Var a);
    Var transpose(Var a);

    // nonlinearities
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    Var gelu(Var a);
    Var exp(Var a);

    // structured layers
    Var conv1d(Var x, Var w, Var b, int kernel);     // x: Cin x L, w: Cout x (Cin*k)
    Var maxpool1d(Var x, int kernel, int stride);    // per-row pooling
    Var layer_norm_cols(Var x, Var gain, Var bias);  // normalize each column
    Var dropout(Var x, double p, Rng& rng);

    // attention pieces; sums over token columns use extended-precision
    // accumulation so results do not depend on token order
    Var softmax_rows(Var scores);
    Var mix_cols(Var values, Var weights);  // out(:,i) = sum_j w(i,j) * v(:,j)

    // scalar reductions / losses
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var ce_logits(Var logits, int target);          // -log softmax(logits)[target]
    Var bce_logits(Var logits, const Mat& targets); // mean binary cross entropy
    Var mse(Var pred, const Mat& target);           // mean squared error
    Var kl_std_normal(Var mean, Var log_var);       // mean over dims

    void backward(Var root);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        const Mat* ext = nullptr;  // external value (parameter leaves)
        Mat grad;
        Tensor* leaf = nullptr;
        int leaf_col = -1;  // for embedding leaves
        bool needs_grad = false;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes_;

    int push(Mat val, bool needs_grad, std::function<void(Graph&)> back);
    const Mat& node_val(int id) const;
    Mat& grad_of(int id);
    void acc(int id, const Mat& g);
    bool wants(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    friend struct GraphTestAccess;
};

}  // namespace mtr::ad
