#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dtomo/common.hpp"

namespace dtomo {

// Flat block of optimizable 64-bit parameters. Everything the optimizer
// touches (volume net weights, warp net weights, per-tilt shift/angle
// scalars) lives in one of these.
struct ParamBlock {
    std::vector<double> values;
    std::vector<int> shape;
    std::string tag;

    ParamBlock() = default;
    ParamBlock(std::vector<double> v, std::vector<int> s, std::string t)
        : values(std::move(v)), shape(std::move(s)), tag(std::move(t)) {
        if (static_cast<std::size_t>(shape_product()) != values.size())
            throw ShapeError("ParamBlock " + tag + ": shape does not match value count");
    }

    static ParamBlock zeros(std::vector<int> s, std::string t) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return ParamBlock(std::vector<double>(n, 0.0), std::move(s), std::move(t));
    }
    static ParamBlock scalar(double v, std::string t) { return ParamBlock({v}, {1}, std::move(t)); }

    long shape_product() const {
        long p = 1;
        for (int d : shape) p *= d;
        return p;
    }
    std::size_t size() const { return values.size(); }
};

// Reverse-mode tape over scalars. Supports the closed set of primitives the
// rendering loss is built from: affine combinations, products, sin/cos,
// relu/softplus. Nodes are stored in construction order, which is already a
// topological order, so the backward pass is a single reverse sweep.
class Tape {
  public:
    struct Var {
        int i = -1;
    };

    Var leaf(double v) { return push(v, Op::Leaf, -1, -1, 0.0, 0.0); }
    Var constant(double v) { return push(v, Op::Leaf, -1, -1, 0.0, 0.0); }

    Var add(Var a, Var b) { return push(val(a) + val(b), Op::Binary, a.i, b.i, 1.0, 1.0); }
    Var sub(Var a, Var b) { return push(val(a) - val(b), Op::Binary, a.i, b.i, 1.0, -1.0); }
    Var mul(Var a, Var b) { return push(val(a) * val(b), Op::Binary, a.i, b.i, val(b), val(a)); }
    Var div(Var a, Var b) {
        double vb = val(b);
        return push(val(a) / vb, Op::Binary, a.i, b.i, 1.0 / vb, -val(a) / (vb * vb));
    }
    Var neg(Var a) { return push(-val(a), Op::Binary, a.i, -1, -1.0, 0.0); }
    Var scale(Var a, double s) { return push(val(a) * s, Op::Binary, a.i, -1, s, 0.0); }
    Var add_const(Var a, double c) { return push(val(a) + c, Op::Binary, a.i, -1, 1.0, 0.0); }

    Var sin(Var a) { return push(std::sin(val(a)), Op::Binary, a.i, -1, std::cos(val(a)), 0.0); }
    Var cos(Var a) { return push(std::cos(val(a)), Op::Binary, a.i, -1, -std::sin(val(a)), 0.0); }
    Var relu(Var a) {
        double v = val(a);
        return push(v > 0.0 ? v : 0.0, Op::Binary, a.i, -1, v > 0.0 ? 1.0 : 0.0, 0.0);
    }
    Var softplus(Var a) {
        double v = val(a);
        double out = v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v)));
        double sig = 1.0 / (1.0 + std::exp(-v));
        return push(out, Op::Binary, a.i, -1, sig, 0.0);
    }

    double val(Var v) const { return nodes_[v.i].value; }
    double grad(Var v) const { return nodes_[v.i].grad; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    void backward(Var loss) {
        if (!std::isfinite(val(loss)))
            throw NumericsError("backward: non-finite loss value " + std::to_string(val(loss)));
        for (auto& n : nodes_) n.grad = 0.0;
        nodes_[loss.i].grad = 1.0;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            const Node& n = nodes_[i];
            if (n.op == Op::Leaf || n.grad == 0.0) continue;
            if (n.a >= 0) nodes_[n.a].grad += n.grad * n.pa;
            if (n.b >= 0) nodes_[n.b].grad += n.grad * n.pb;
        }
    }

  private:
    enum class Op : std::uint8_t { Leaf, Binary };
    struct Node {
        double value;
        double grad;
        double pa, pb;  // local partials w.r.t. inputs a, b
        int a, b;
        Op op;
    };

    Var push(double v, Op op, int a, int b, double pa, double pb) {
        nodes_.push_back(Node{v, 0.0, pa, pb, a, b, op});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

// Expression-style wrapper so closures read like arithmetic.
struct TVar {
    Tape* tape = nullptr;
    Tape::Var v;

    double value() const { return tape->val(v); }
    double grad() const { return tape->grad(v); }
};

inline TVar operator+(TVar a, TVar b) { return {a.tape, a.tape->add(a.v, b.v)}; }
inline TVar operator-(TVar a, TVar b) { return {a.tape, a.tape->sub(a.v, b.v)}; }
inline TVar operator*(TVar a, TVar b) { return {a.tape, a.tape->mul(a.v, b.v)}; }
inline TVar operator/(TVar a, TVar b) { return {a.tape, a.tape->div(a.v, b.v)}; }
inline TVar operator-(TVar a) { return {a.tape, a.tape->neg(a.v)}; }
inline TVar operator+(TVar a, double c) { return {a.tape, a.tape->add_const(a.v, c)}; }
inline TVar operator+(double c, TVar a) { return a + c; }
inline TVar operator-(TVar a, double c) { return a + (-c); }
inline TVar operator*(TVar a, double s) { return {a.tape, a.tape->scale(a.v, s)}; }
inline TVar operator*(double s, TVar a) { return a * s; }
inline TVar sin(TVar a) { return {a.tape, a.tape->sin(a.v)}; }
inline TVar cos(TVar a) { return {a.tape, a.tape->cos(a.v)}; }
inline TVar relu(TVar a) { return {a.tape, a.tape->relu(a.v)}; }
inline TVar softplus(TVar a) { return {a.tape, a.tape->softplus(a.v)}; }

// A differentiable scalar function of a set of parameter blocks. The closure
// sees one TVar per parameter element, in block order.
using LossClosure = std::function<TVar(Tape&, const std::vector<std::vector<TVar>>&)>;

struct ForwardBackwardResult {
    double loss = 0.0;
    std::vector<std::vector<double>> grads;  // one array per block
};

inline ForwardBackwardResult forward_backward(const LossClosure& closure,
                                              const std::vector<const ParamBlock*>& params) {
    Tape tape;
    std::vector<std::vector<TVar>> leafs(params.size());
    for (std::size_t b = 0; b < params.size(); ++b) {
        leafs[b].reserve(params[b]->size());
        for (double v : params[b]->values) leafs[b].push_back({&tape, tape.leaf(v)});
    }
    TVar loss = closure(tape, leafs);
    tape.backward(loss.v);

    ForwardBackwardResult r;
    r.loss = loss.value();
    r.grads.resize(params.size());
    for (std::size_t b = 0; b < params.size(); ++b) {
        r.grads[b].reserve(params[b]->size());
        for (const TVar& t : leafs[b]) r.grads[b].push_back(t.grad());
    }
    return r;
}

// Central-difference oracle used by the gradient test suites. Independent of
// the backward sweep: only evaluates the closure's forward value.
inline std::vector<std::vector<double>> finite_difference_grad(
    const LossClosure& closure, const std::vector<const ParamBlock*>& params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw ConfigError("finite_difference_grad: eps must be in [1e-7, 1e-3]");

    std::vector<ParamBlock> work;
    work.reserve(params.size());
    for (const ParamBlock* p : params) work.push_back(*p);

    auto eval = [&]() {
        Tape tape;
        std::vector<std::vector<TVar>> leafs(work.size());
        for (std::size_t b = 0; b < work.size(); ++b) {
            leafs[b].reserve(work[b].size());
            for (double v : work[b].values) leafs[b].push_back({&tape, tape.leaf(v)});
        }
        return closure(tape, leafs).value();
    };

    std::vector<std::vector<double>> grads(work.size());
    for (std::size_t b = 0; b < work.size(); ++b) {
        grads[b].resize(work[b].size());
        for (std::size_t i = 0; i < work[b].size(); ++i) {
            double orig = work[b].values[i];
            work[b].values[i] = orig + eps;
            double fp = eval();
            work[b].values[i] = orig - eps;
            double fm = eval();
            work[b].values[i] = orig;
            grads[b][i] = (fp - fm) / (2.0 * eps);
        }
    }
    return grads;
}

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
    long t = 0;
    AdamHyper hyper;

    static AdamState make(const ParamBlock& owner, AdamHyper h = {}) {
        AdamState s;
        s.m.assign(owner.size(), 0.0);
        s.v.assign(owner.size(), 0.0);
        s.hyper = h;
        return s;
    }
};

// Standard Adam recurrence with bias correction, applied in place.
inline void adam_step(ParamBlock& param, std::span<const double> grad, AdamState& state) {
    if (grad.size() != param.size() || state.m.size() != param.size())
        throw ShapeError("adam_step: gradient/state shape mismatch for " + param.tag);
    state.t += 1;
    const AdamHyper& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        param.values[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

}  // namespace dtomo
