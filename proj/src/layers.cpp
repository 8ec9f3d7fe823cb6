#include "mtr/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mtr::nn {

Tensor& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                        Init init) {
    auto it = entries_.find(name);
    if (it != entries_.end()) throw std::logic_error("parameter registered twice: " + name);
    Entry e;
    e.tensor = std::make_unique<Tensor>(rows, cols);
    e.init = init;
    Tensor& ref = *e.tensor;
    entries_.emplace(name, std::move(e));
    return ref;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no such parameter: " + name);
    return *it->second.tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no such parameter: " + name);
    return *it->second.tensor;
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) > 0; }

void ParamStore::init_tensor(Tensor& t, Init init, std::uint64_t seed) {
    Rng rng(seed);
    switch (init) {
        case Init::Zero:
            t.value.setZero();
            break;
        case Init::One:
            t.value.setOnes();
            break;
        case Init::Normal02:
            for (Eigen::Index j = 0; j < t.value.cols(); ++j)
                for (Eigen::Index i = 0; i < t.value.rows(); ++i)
                    t.value(i, j) = 0.02 * rng.normal();
            break;
        case Init::Xavier: {
            double a = std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
            for (Eigen::Index j = 0; j < t.value.cols(); ++j)
                for (Eigen::Index i = 0; i < t.value.rows(); ++i)
                    t.value(i, j) = a * (2.0 * rng.uniform() - 1.0);
            break;
        }
    }
    t.grad.setZero();
}

void ParamStore::init_all(std::uint64_t seed) {
    for (auto& [name, e] : entries_)
        init_tensor(*e.tensor, e.init, Rng::mix(seed, name));
}

void ParamStore::init_matching(std::uint64_t seed, const std::string& prefix) {
    for (auto& [name, e] : entries_)
        if (name.rfind(prefix, 0) == 0)
            init_tensor(*e.tensor, e.init, Rng::mix(seed, name));
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.tensor->zero_grad();
}

double ParamStore::grad_norm() const {
    double s = 0.0;
    for (const auto& [name, e] : entries_) s += e.tensor->grad.squaredNorm();
    return std::sqrt(s);
}

long ParamStore::total_size() const {
    long n = 0;
    for (const auto& [name, e] : entries_) n += static_cast<long>(e.tensor->size());
    return n;
}

std::vector<std::pair<std::string, Tensor*>> ParamStore::items() {
    std::vector<std::pair<std::string, Tensor*>> v;
    v.reserve(entries_.size());
    for (auto& [name, e] : entries_) v.emplace_back(name, e.tensor.get());
    return v;
}

std::vector<std::pair<std::string, const Tensor*>> ParamStore::items() const {
    std::vector<std::pair<std::string, const Tensor*>> v;
    v.reserve(entries_.size());
    for (const auto& [name, e] : entries_) v.emplace_back(name, e.tensor.get());
    return v;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out) {
    W = &ps.add(prefix + ".W", out, in, Init::Xavier);
    b = &ps.add(prefix + ".b", out, 1, Init::Zero);
}

Var Linear::operator()(Graph& g, Var x) const {
    return g.add(g.matmul(g.param(*W), x), g.param(*b));
}

Var Linear::cols(Graph& g, Var X) const {
    return g.add_broadcast_col(g.matmul(g.param(*W), X), g.param(*b));
}

GRUCell::GRUCell(ParamStore& ps, const std::string& prefix, int in, int hidden_dim)
    : hidden(hidden_dim) {
    W = &ps.add(prefix + ".W", 3 * hidden, in, Init::Xavier);
    U = &ps.add(prefix + ".U", 3 * hidden, hidden, Init::Xavier);
    b = &ps.add(prefix + ".b", 3 * hidden, 1, Init::Zero);
}

Var GRUCell::step(Graph& g, Var x, Var h) const {
    Var wx = g.matmul(g.param(*W), x);
    Var uh = g.matmul(g.param(*U), h);
    Var bias = g.param(*b);
    Var r = g.sigmoid(g.add(g.add(g.slice_rows(wx, 0, hidden), g.slice_rows(uh, 0, hidden)),
                            g.slice_rows(bias, 0, hidden)));
    Var z = g.sigmoid(
        g.add(g.add(g.slice_rows(wx, hidden, hidden), g.slice_rows(uh, hidden, hidden)),
              g.slice_rows(bias, hidden, hidden)));
    Var n = g.tanh(g.add(
        g.add(g.slice_rows(wx, 2 * hidden, hidden),
              g.cmul(r, g.slice_rows(uh, 2 * hidden, hidden))),
        g.slice_rows(bias, 2 * hidden, hidden)));
    // h' = (1 - z) * n + z * h
    return g.add(g.sub(n, g.cmul(z, n)), g.cmul(z, h));
}

Var GRUCell::zero_state(Graph& g) const { return g.input(Mat::Zero(hidden, 1)); }

Embedding::Embedding(ParamStore& ps, const std::string& name, int dim, int count) {
    table = &ps.add(name, dim, count, Init::Normal02);
}

Var Embedding::operator()(Graph& g, int index) const { return g.embed(*table, index); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim) {
    gain = &ps.add(prefix + ".gain", dim, 1, Init::One);
    bias = &ps.add(prefix + ".bias", dim, 1, Init::Zero);
}

Var LayerNorm::cols(Graph& g, Var X) const {
    return g.layer_norm_cols(X, g.param(*gain), g.param(*bias));
}

TransformerLayer::TransformerLayer(ParamStore& ps, const std::string& prefix, int dm,
                                   int d_ff, int nheads)
    : wq(ps, prefix + ".wq", dm, dm),
      wk(ps, prefix + ".wk", dm, dm),
      wv(ps, prefix + ".wv", dm, dm),
      wo(ps, prefix + ".wo", dm, dm),
      ff1(ps, prefix + ".ff1", dm, d_ff),
      ff2(ps, prefix + ".ff2", d_ff, dm),
      ln1(ps, prefix + ".ln1", dm),
      ln2(ps, prefix + ".ln2", dm),
      heads(nheads),
      d_model(dm) {
    if (dm % nheads != 0) throw std::logic_error("d_model must be divisible by heads");
}

Var TransformerLayer::apply(Graph& g, Var X, bool training, double dropout_p,
                            Rng& rng) const {
    int dh = d_model / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var Q = wq.cols(g, X);
    Var K = wk.cols(g, X);
    Var V = wv.cols(g, X);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = g.slice_rows(Q, h * dh, dh);
        Var kh = g.slice_rows(K, h * dh, dh);
        Var vh = g.slice_rows(V, h * dh, dh);
        Var scores = g.affine(g.matmul(g.transpose(qh), kh), scale, 0.0);
        Var probs = g.softmax_rows(scores);
        head_outs.push_back(g.mix_cols(vh, probs));
    }
    Var attn = wo.cols(g, g.concat_rows(head_outs));
    if (training) attn = g.dropout(attn, dropout_p, rng);
    Var x1 = ln1.cols(g, g.add(X, attn));
    Var ff = ff2.cols(g, g.gelu(ff1.cols(g, x1)));
    if (training) ff = g.dropout(ff, dropout_p, rng);
    return ln2.cols(g, g.add(x1, ff));
}

Var sample_gaussian(Graph& g, Var mean, Var log_var, Rng& rng) {
    const Mat& m = g.val(mean);
    Mat eps(m.rows(), 1);
    for (Eigen::Index i = 0; i < m.rows(); ++i) eps(i, 0) = rng.normal();
    return g.add(mean, g.cmul(g.exp(g.affine(log_var, 0.5, 0.0)), g.input(std::move(eps))));
}

void adam_step(ParamStore& ps, AdamState& state, double lr, double clip_norm,
               double beta1, double beta2, double eps) {
    double gn = ps.grad_norm();
    double scale = 1.0;
    if (clip_norm > 0.0 && gn > clip_norm) scale = clip_norm / gn;
    ++state.step;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, t] : ps.items()) {
        auto& [m, v] = state.moments[name];
        if (m.size() == 0) {
            m = Mat::Zero(t->value.rows(), t->value.cols());
            v = Mat::Zero(t->value.rows(), t->value.cols());
        }
        Mat grad = t->grad * scale;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        t->value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    }
}

}  // namespace mtr::nn
