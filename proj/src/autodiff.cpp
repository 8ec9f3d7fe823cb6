#include "mtr/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace mtr::ad {

#if defined(__SIZEOF_FLOAT128__)
using accum_t = __float128;
#else
using accum_t = long double;
#endif

int Graph::push(Mat val, bool needs_grad, std::function<void(Graph&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Mat& Graph::node_val(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext ? *n.ext : n.val;
}

const Mat& Graph::val(Var v) const { return node_val(v.id); }

double Graph::scalar(Var v) const {
    const Mat& m = val(v);
    if (m.size() != 1) throw std::logic_error("scalar() on non-scalar node");
    return m(0, 0);
}

Mat& Graph::grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) {
        const Mat& v = node_val(id);
        n.grad = Mat::Zero(v.rows(), v.cols());
    }
    return n.grad;
}

void Graph::acc(int id, const Mat& g) {
    if (wants(id)) grad_of(id) += g;
}

Var Graph::param(Tensor& t) {
    Node n;
    n.ext = &t.value;
    n.leaf = &t;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::embed(Tensor& table, int col) {
    if (col < 0 || col >= table.value.cols())
        throw std::out_of_range("embed: column out of range");
    Node n;
    n.val = table.value.col(col);
    n.leaf = &table;
    n.leaf_col = col;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Mat v) {
    return {push(std::move(v), false, nullptr)};
}

Var Graph::matmul(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.rows()) throw std::logic_error("matmul: shape mismatch");
    Mat out = A * B;
    bool ng = wants(a.id) || wants(b.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        if (g.wants(a.id)) g.grad_of(a.id).noalias() += G * g.node_val(b.id).transpose();
        if (g.wants(b.id)) g.grad_of(b.id).noalias() += g.node_val(a.id).transpose() * G;
    };
    return {id};
}

Var Graph::add(Var a, Var b) {
    Mat out = val(a) + val(b);
    bool ng = wants(a.id) || wants(b.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        g.acc(a.id, G);
        g.acc(b.id, G);
    };
    return {id};
}

Var Graph::sub(Var a, Var b) {
    Mat out = val(a) - val(b);
    bool ng = wants(a.id) || wants(b.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        g.acc(a.id, G);
        if (g.wants(b.id)) g.grad_of(b.id) -= G;
    };
    return {id};
}

Var Graph::cmul(Var a, Var b) {
    Mat out = val(a).cwiseProduct(val(b));
    bool ng = wants(a.id) || wants(b.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [a, b, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        if (g.wants(a.id)) g.grad_of(a.id) += G.cwiseProduct(g.node_val(b.id));
        if (g.wants(b.id)) g.grad_of(b.id) += G.cwiseProduct(g.node_val(a.id));
    };
    return {id};
}

Var Graph::affine(Var a, double scale, double shift) {
    Mat out = (val(a).array() * scale + shift).matrix();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, scale, id](Graph& g) {
        if (g.wants(a.id)) g.grad_of(a.id) += scale * g.grad_of(id);
    };
    return {id};
}

Var Graph::add_n(std::span<const Var> xs) {
    if (xs.empty()) throw std::logic_error("add_n: empty");
    Mat out = val(xs[0]);
    for (size_t i = 1; i < xs.size(); ++i) out += val(xs[i]);
    bool ng = false;
    for (Var v : xs) ng = ng || wants(v.id);
    std::vector<Var> parents(xs.begin(), xs.end());
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [parents, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        for (Var v : parents) g.acc(v.id, G);
    };
    return {id};
}

Var Graph::add_broadcast_col(Var m, Var colv) {
    const Mat& M = val(m);
    const Mat& C = val(colv);
    if (C.cols() != 1 || C.rows() != M.rows())
        throw std::logic_error("add_broadcast_col: shape mismatch");
    Mat out = M.colwise() + C.col(0);
    bool ng = wants(m.id) || wants(colv.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [m, colv, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        g.acc(m.id, G);
        if (g.wants(colv.id)) g.grad_of(colv.id) += G.rowwise().sum();
    };
    return {id};
}

Var Graph::concat_rows(std::span<const Var> xs) {
    if (xs.empty()) throw std::logic_error("concat_rows: empty");
    Eigen::Index cols = val(xs[0]).cols();
    Eigen::Index rows = 0;
    for (Var v : xs) {
        if (val(v).cols() != cols) throw std::logic_error("concat_rows: column mismatch");
        rows += val(v).rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (Var v : xs) {
        out.middleRows(r, val(v).rows()) = val(v);
        r += val(v).rows();
    }
    bool ng = false;
    for (Var v : xs) ng = ng || wants(v.id);
    std::vector<Var> parents(xs.begin(), xs.end());
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [parents, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        Eigen::Index r = 0;
        for (Var v : parents) {
            Eigen::Index n = g.node_val(v.id).rows();
            if (g.wants(v.id)) g.grad_of(v.id) += G.middleRows(r, n);
            r += n;
        }
    };
    return {id};
}

Var Graph::slice_rows(Var a, int row0, int nrows) {
    const Mat& A = val(a);
    if (row0 < 0 || row0 + nrows > A.rows()) throw std::logic_error("slice_rows: out of range");
    Mat out = A.middleRows(row0, nrows);
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, row0, nrows, id](Graph& g) {
        if (g.wants(a.id))
            g.grad_of(a.id).middleRows(row0, nrows) += g.grad_of(id);
    };
    return {id};
}

Var Graph::stack_cols(std::span<const Var> xs) {
    if (xs.empty()) throw std::logic_error("stack_cols: empty");
    Eigen::Index rows = val(xs[0]).rows();
    Mat out(rows, static_cast<Eigen::Index>(xs.size()));
    for (size_t j = 0; j < xs.size(); ++j) {
        const Mat& C = val(xs[j]);
        if (C.cols() != 1 || C.rows() != rows)
            throw std::logic_error("stack_cols: inputs must be equal-length columns");
        out.col(static_cast<Eigen::Index>(j)) = C;
    }
    bool ng = false;
    for (Var v : xs) ng = ng || wants(v.id);
    std::vector<Var> parents(xs.begin(), xs.end());
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [parents, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        for (size_t j = 0; j < parents.size(); ++j)
            g.acc(parents[j].id, G.col(static_cast<Eigen::Index>(j)));
    };
    return {id};
}

Var Graph::col(Var a, int j) {
    const Mat& A = val(a);
    if (j < 0 || j >= A.cols()) throw std::logic_error("col: out of range");
    Mat out = A.col(j);
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, j, id](Graph& g) {
        if (g.wants(a.id)) g.grad_of(a.id).col(j) += g.grad_of(id);
    };
    return {id};
}

Var Graph::transpose(Var a) {
    Mat out = val(a).transpose();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (g.wants(a.id)) g.grad_of(a.id) += g.grad_of(id).transpose();
    };
    return {id};
}

Var Graph::flatten(Var a) {
    const Mat& A = val(a);
    Mat out = Eigen::Map<const Eigen::VectorXd>(A.data(), A.size());
    int id = push(std::move(out), wants(a.id), nullptr);
    Eigen::Index rows = A.rows(), cols = A.cols();
    nodes_.back().back = [a, rows, cols, id](Graph& g) {
        if (!g.wants(a.id)) return;
        const Mat& G = g.grad_of(id);
        g.grad_of(a.id) += Eigen::Map<const Mat>(G.data(), rows, cols);
    };
    return {id};
}

Var Graph::sigmoid(Var a) {
    Mat out = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (!g.wants(a.id)) return;
        const Mat& y = g.node_val(id);
        g.grad_of(a.id) +=
            g.grad_of(id).cwiseProduct((y.array() * (1.0 - y.array())).matrix());
    };
    return {id};
}

Var Graph::tanh(Var a) {
    Mat out = val(a).array().tanh().matrix();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (!g.wants(a.id)) return;
        const Mat& y = g.node_val(id);
        g.grad_of(a.id) += g.grad_of(id).cwiseProduct((1.0 - y.array().square()).matrix());
    };
    return {id};
}

Var Graph::relu(Var a) {
    Mat out = val(a).cwiseMax(0.0);
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (!g.wants(a.id)) return;
        const Mat& x = g.node_val(a.id);
        g.grad_of(a.id) +=
            g.grad_of(id).cwiseProduct((x.array() > 0.0).cast<double>().matrix());
    };
    return {id};
}

Var Graph::gelu(Var a) {
    Mat out = val(a).unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); });
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (!g.wants(a.id)) return;
        Mat d = g.node_val(a.id).unaryExpr([](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
            double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            return cdf + x * pdf;
        });
        g.grad_of(a.id) += g.grad_of(id).cwiseProduct(d);
    };
    return {id};
}

Var Graph::exp(Var a) {
    Mat out = val(a).array().exp().matrix();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (g.wants(a.id))
            g.grad_of(a.id) += g.grad_of(id).cwiseProduct(g.node_val(id));
    };
    return {id};
}

Var Graph::conv1d(Var x, Var w, Var b, int kernel) {
    const Mat& X = val(x);
    const Mat& W = val(w);
    const Mat& B = val(b);
    Eigen::Index cin = X.rows(), len = X.cols();
    Eigen::Index cout = W.rows();
    if (W.cols() != cin * kernel || B.rows() != cout || B.cols() != 1)
        throw std::logic_error("conv1d: shape mismatch");
    Eigen::Index lout = len - kernel + 1;
    if (lout < 1) throw std::logic_error("conv1d: input shorter than kernel");
    Mat out(cout, lout);
    Eigen::VectorXd patch(cin * kernel);
    for (Eigen::Index j = 0; j < lout; ++j) {
        for (int q = 0; q < kernel; ++q) patch.segment(q * cin, cin) = X.col(j + q);
        out.col(j) = W * patch + B.col(0);
    }
    bool ng = wants(x.id) || wants(w.id) || wants(b.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [x, w, b, kernel, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        const Mat& X2 = g.node_val(x.id);
        const Mat& W2 = g.node_val(w.id);
        Eigen::Index cin = X2.rows();
        Eigen::VectorXd patch(cin * kernel);
        for (Eigen::Index j = 0; j < G.cols(); ++j) {
            if (g.wants(w.id)) {
                for (int q = 0; q < kernel; ++q) patch.segment(q * cin, cin) = X2.col(j + q);
                g.grad_of(w.id).noalias() += G.col(j) * patch.transpose();
            }
            if (g.wants(x.id)) {
                Eigen::VectorXd gpatch = W2.transpose() * G.col(j);
                for (int q = 0; q < kernel; ++q)
                    g.grad_of(x.id).col(j + q) += gpatch.segment(q * cin, cin);
            }
        }
        if (g.wants(b.id)) g.grad_of(b.id) += G.rowwise().sum();
    };
    return {id};
}

Var Graph::maxpool1d(Var x, int kernel, int stride) {
    const Mat& X = val(x);
    Eigen::Index rows = X.rows(), len = X.cols();
    if (len < kernel) throw std::logic_error("maxpool1d: input shorter than kernel");
    Eigen::Index lout = (len - kernel) / stride + 1;
    Mat out(rows, lout);
    std::vector<int> idx(static_cast<size_t>(rows * lout));
    for (Eigen::Index j = 0; j < lout; ++j) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            Eigen::Index best = j * stride;
            double bv = X(r, best);
            for (int q = 1; q < kernel; ++q) {
                if (X(r, j * stride + q) > bv) {
                    bv = X(r, j * stride + q);
                    best = j * stride + q;
                }
            }
            out(r, j) = bv;
            idx[static_cast<size_t>(j * rows + r)] = static_cast<int>(best);
        }
    }
    int id = push(std::move(out), wants(x.id), nullptr);
    nodes_.back().back = [x, idx = std::move(idx), id](Graph& g) {
        if (!g.wants(x.id)) return;
        const Mat& G = g.grad_of(id);
        Mat& GX = g.grad_of(x.id);
        for (Eigen::Index j = 0; j < G.cols(); ++j)
            for (Eigen::Index r = 0; r < G.rows(); ++r)
                GX(r, idx[static_cast<size_t>(j * G.rows() + r)]) += G(r, j);
    };
    return {id};
}

Var Graph::layer_norm_cols(Var x, Var gain, Var bias) {
    const Mat& X = val(x);
    const Mat& Gn = val(gain);
    const Mat& Bs = val(bias);
    if (Gn.rows() != X.rows() || Bs.rows() != X.rows())
        throw std::logic_error("layer_norm_cols: shape mismatch");
    constexpr double eps = 1e-5;
    Eigen::Index d = X.rows(), m = X.cols();
    Mat yhat(d, m);
    Eigen::VectorXd inv_std(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double mu = X.col(j).mean();
        double var = (X.col(j).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        yhat.col(j) = (X.col(j).array() - mu).matrix() * is;
        inv_std[j] = is;
    }
    Mat out = (yhat.array().colwise() * Gn.col(0).array()).matrix().colwise() + Bs.col(0);
    bool ng = wants(x.id) || wants(gain.id) || wants(bias.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [x, gain, bias, yhat = std::move(yhat),
                          inv_std = std::move(inv_std), id](Graph& g) {
        const Mat& G = g.grad_of(id);
        const Mat& Gn2 = g.node_val(gain.id);
        Eigen::Index d = G.rows();
        if (g.wants(gain.id))
            g.grad_of(gain.id) += (G.array() * yhat.array()).rowwise().sum().matrix();
        if (g.wants(bias.id)) g.grad_of(bias.id) += G.rowwise().sum();
        if (g.wants(x.id)) {
            Mat& GX = g.grad_of(x.id);
            for (Eigen::Index j = 0; j < G.cols(); ++j) {
                Eigen::VectorXd gy = G.col(j).cwiseProduct(Gn2.col(0));
                double mean_gy = gy.mean();
                double mean_gyy = gy.cwiseProduct(yhat.col(j)).mean();
                GX.col(j) += inv_std[j] *
                             (gy.array() - mean_gy - yhat.col(j).array() * mean_gyy)
                                 .matrix();
                (void)d;
            }
        }
    };
    return {id};
}

Var Graph::dropout(Var x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    const Mat& X = val(x);
    Mat mask(X.rows(), X.cols());
    double keep = 1.0 - p;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            mask(i, j) = rng.uniform() < p ? 0.0 : 1.0 / keep;
    Mat out = X.cwiseProduct(mask);
    int id = push(std::move(out), wants(x.id), nullptr);
    nodes_.back().back = [x, mask = std::move(mask), id](Graph& g) {
        if (g.wants(x.id)) g.grad_of(x.id) += g.grad_of(id).cwiseProduct(mask);
    };
    return {id};
}

Var Graph::softmax_rows(Var scores) {
    const Mat& S = val(scores);
    Eigen::Index m = S.rows(), n = S.cols();
    Mat out(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        double mx = S.row(i).maxCoeff();
        accum_t denom = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            double e = std::exp(S(i, j) - mx);
            out(i, j) = e;
            denom += static_cast<accum_t>(e);
        }
        double d = static_cast<double>(denom);
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) /= d;
    }
    int id = push(std::move(out), wants(scores.id), nullptr);
    nodes_.back().back = [scores, id](Graph& g) {
        if (!g.wants(scores.id)) return;
        const Mat& P = g.node_val(id);
        const Mat& G = g.grad_of(id);
        Mat& GS = g.grad_of(scores.id);
        for (Eigen::Index i = 0; i < P.rows(); ++i) {
            double dot = G.row(i).dot(P.row(i));
            GS.row(i) += (P.row(i).array() * (G.row(i).array() - dot)).matrix();
        }
    };
    return {id};
}

Var Graph::mix_cols(Var values, Var weights) {
    const Mat& V = val(values);
    const Mat& W = val(weights);
    if (W.cols() != V.cols()) throw std::logic_error("mix_cols: shape mismatch");
    Eigen::Index d = V.rows(), m = W.rows(), n = W.cols();
    Mat out(d, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index r = 0; r < d; ++r) {
            accum_t s = 0;
            for (Eigen::Index j = 0; j < n; ++j)
                s += static_cast<accum_t>(W(i, j) * V(r, j));
            out(r, i) = static_cast<double>(s);
        }
    }
    bool ng = wants(values.id) || wants(weights.id);
    int id = push(std::move(out), ng, nullptr);
    nodes_.back().back = [values, weights, id](Graph& g) {
        const Mat& G = g.grad_of(id);
        const Mat& V2 = g.node_val(values.id);
        const Mat& W2 = g.node_val(weights.id);
        if (g.wants(values.id)) g.grad_of(values.id).noalias() += G * W2;
        if (g.wants(weights.id)) g.grad_of(weights.id).noalias() += G.transpose() * V2;
    };
    return {id};
}

Var Graph::sum_all(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, id](Graph& g) {
        if (!g.wants(a.id)) return;
        double s = g.grad_of(id)(0, 0);
        g.grad_of(a.id).array() += s;
    };
    return {id};
}

Var Graph::mean_all(Var a) {
    double n = static_cast<double>(val(a).size());
    Mat out(1, 1);
    out(0, 0) = val(a).sum() / n;
    int id = push(std::move(out), wants(a.id), nullptr);
    nodes_.back().back = [a, n, id](Graph& g) {
        if (!g.wants(a.id)) return;
        double s = g.grad_of(id)(0, 0) / n;
        g.grad_of(a.id).array() += s;
    };
    return {id};
}

Var Graph::ce_logits(Var logits, int target) {
    const Mat& L = val(logits);
    if (L.cols() != 1) throw std::logic_error("ce_logits: logits must be a column");
    if (target < 0 || target >= L.rows()) throw std::logic_error("ce_logits: bad target");
    double mx = L.maxCoeff();
    double lse = mx + std::log((L.array() - mx).exp().sum());
    Mat out(1, 1);
    out(0, 0) = lse - L(target, 0);
    int id = push(std::move(out), wants(logits.id), nullptr);
    nodes_.back().back = [logits, target, id](Graph& g) {
        if (!g.wants(logits.id)) return;
        const Mat& L2 = g.node_val(logits.id);
        double s = g.grad_of(id)(0, 0);
        double mx = L2.maxCoeff();
        Eigen::ArrayXd e = (L2.array() - mx).exp();
        Eigen::VectorXd p = (e / e.sum()).matrix();
        p(target) -= 1.0;
        g.grad_of(logits.id) += s * p;
    };
    return {id};
}

Var Graph::bce_logits(Var logits, const Mat& targets) {
    const Mat& L = val(logits);
    if (L.rows() != targets.rows() || L.cols() != targets.cols())
        throw std::logic_error("bce_logits: shape mismatch");
    double n = static_cast<double>(L.size());
    // stable: max(l,0) - l*y + log(1 + exp(-|l|))
    double loss = ((L.array().max(0.0)) - L.array() * targets.array() +
                   (1.0 + (-L.array().abs()).exp()).log())
                      .sum() /
                  n;
    Mat out(1, 1);
    out(0, 0) = loss;
    int id = push(std::move(out), wants(logits.id), nullptr);
    Mat tgt = targets;
    nodes_.back().back = [logits, tgt = std::move(tgt), n, id](Graph& g) {
        if (!g.wants(logits.id)) return;
        const Mat& L2 = g.node_val(logits.id);
        double s = g.grad_of(id)(0, 0) / n;
        Mat sig = (1.0 / (1.0 + (-L2.array()).exp())).matrix();
        g.grad_of(logits.id) += s * (sig - tgt);
    };
    return {id};
}

Var Graph::mse(Var pred, const Mat& target) {
    const Mat& P = val(pred);
    if (P.rows() != target.rows() || P.cols() != target.cols())
        throw std::logic_error("mse: shape mismatch");
    double n = static_cast<double>(P.size());
    Mat out(1, 1);
    out(0, 0) = (P - target).squaredNorm() / n;
    int id = push(std::move(out), wants(pred.id), nullptr);
    Mat tgt = target;
    nodes_.back().back = [pred, tgt = std::move(tgt), n, id](Graph& g) {
        if (!g.wants(pred.id)) return;
        double s = g.grad_of(id)(0, 0);
        g.grad_of(pred.id) += (2.0 * s / n) * (g.node_val(pred.id) - tgt);
    };
    return {id};
}

Var Graph::kl_std_normal(Var mean, Var log_var) {
    const Mat& M = val(mean);
    const Mat& L = val(log_var);
    if (M.rows() != L.rows() || M.cols() != 1 || L.cols() != 1)
        throw std::logic_error("kl_std_normal: expects matching columns");
    double n = static_cast<double>(M.size());
    Mat out(1, 1);
    out(0, 0) = 0.5 * (M.array().square() + L.array().exp() - 1.0 - L.array()).sum() / n;
    int id = push(std::move(out), wants(mean.id) || wants(log_var.id), nullptr);
    nodes_.back().back = [mean, log_var, n, id](Graph& g) {
        double s = g.grad_of(id)(0, 0) / n;
        if (g.wants(mean.id)) g.grad_of(mean.id) += s * g.node_val(mean.id);
        if (g.wants(log_var.id))
            g.grad_of(log_var.id) +=
                (0.5 * s) * (g.node_val(log_var.id).array().exp() - 1.0).matrix();
    };
    return {id};
}

void Graph::backward(Var root) {
    if (!root.valid()) throw std::logic_error("backward: invalid root");
    const Mat& rv = val(root);
    if (rv.size() != 1) throw std::logic_error("backward: root must be scalar");
    grad_of(root.id)(0, 0) += 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.back) n.back(*this);
        if (n.leaf) {
            if (n.leaf_col >= 0)
                n.leaf->grad.col(n.leaf_col) += n.grad;
            else
                n.leaf->grad += n.grad;
        }
    }
}

}  // namespace mtr::ad
