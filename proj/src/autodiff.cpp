#include "scen/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scen/kernels.hpp"

namespace scen {

namespace {

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

float sigmoid_scalar(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError(op, a.shape_str(), b.shape_str());
}

}  // namespace

// ---------------------------------------------------------------- leaves

Var Graph::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::frozen(const Tensor& value) {
    Node n;
    n.op = "frozen";
    n.borrowed = &value;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::parameter(ParamId id, const Tensor& value) {
    Node n;
    n.op = "parameter";
    n.borrowed = &value;
    n.param = id;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check(Var v) const {
    if (v.id >= nodes_.size()) throw Error("graph: var " + std::to_string(v.id) + " out of range");
}

const Tensor& Graph::val(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

const Tensor& Graph::value(Var v) const {
    check(v);
    return val(v.id);
}

bool Graph::requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].needs_grad;
}

std::string_view Graph::op_name(Var v) const {
    check(v);
    return nodes_[v.id].op;
}

Tensor& Graph::grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        const Tensor& v = val(id);
        n.grad = Tensor(v.rows, v.cols);
    }
    return n.grad;
}

Var Graph::push(const char* op, Tensor out, std::vector<std::uint32_t> inputs, BackwardFn fn) {
    Node n;
    n.op = op;
    n.owned = std::move(out);
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::uint32_t i) { return nodes_[i].needs_grad; });
    if (n.needs_grad) n.backward = std::move(fn);
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

// ---------------------------------------------------------------- linear algebra

Var Graph::matmul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (A.cols != B.rows) throw ShapeError("matmul", A.shape_str(), B.shape_str());
    Tensor out(A.rows, B.cols);
    kernels::gemm_nn(A, B, out);
    return push("matmul", std::move(out), {a.id, b.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const std::uint32_t ia = n.inputs[0], ib = n.inputs[1];
        if (g.wants(ia)) kernels::gemm_nt_acc(n.grad, g.val(ib), g.grad(ia));
        if (g.wants(ib)) kernels::gemm_tn_acc(g.val(ia), n.grad, g.grad(ib));
    });
}

Var Graph::add(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push("add", std::move(out), {a.id, b.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        for (std::uint32_t in : n.inputs) {
            if (!g.wants(in)) continue;
            Tensor& gi = g.grad(in);
            for (std::size_t i = 0; i < gi.size(); ++i) gi.data[i] += n.grad.data[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same("sub", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
    return push("sub", std::move(out), {a.id, b.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        if (g.wants(n.inputs[0])) {
            Tensor& ga = g.grad(n.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (g.wants(n.inputs[1])) {
            Tensor& gb = g.grad(n.inputs[1]);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] -= n.grad.data[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same("mul", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
    return push("mul", std::move(out), {a.id, b.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const std::uint32_t ia = n.inputs[0], ib = n.inputs[1];
        if (g.wants(ia)) {
            Tensor& ga = g.grad(ia);
            const Tensor& B = g.val(ib);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i] * B.data[i];
        }
        if (g.wants(ib)) {
            Tensor& gb = g.grad(ib);
            const Tensor& A = g.val(ia);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += n.grad.data[i] * A.data[i];
        }
    });
}

Var Graph::add_row(Var a, Var bias) {
    check(a);
    check(bias);
    const Tensor& A = val(a.id);
    const Tensor& b = val(bias.id);
    if (b.rows != 1 || b.cols != A.cols) throw ShapeError("add_row", A.shape_str(), b.shape_str());
    Tensor out = A;
    for (std::size_t r = 0; r < out.rows; ++r) {
        float* o = out.data.data() + r * out.cols;
        for (std::size_t c = 0; c < out.cols; ++c) o[c] += b.data[c];
    }
    return push("add_row", std::move(out), {a.id, bias.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        if (g.wants(n.inputs[0])) {
            Tensor& ga = g.grad(n.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (g.wants(n.inputs[1])) {
            Tensor& gb = g.grad(n.inputs[1]);
            for (std::size_t r = 0; r < n.grad.rows; ++r) {
                for (std::size_t c = 0; c < n.grad.cols; ++c) gb.data[c] += n.grad(r, c);
            }
        }
    });
}

Var Graph::scale(Var a, float s) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x *= s;
    return push("scale", std::move(out), {a.id}, [s](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += s * n.grad.data[i];
    });
}

Var Graph::add_scalar(Var a, float s) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x += s;
    return push("add_scalar", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
    });
}

Var Graph::clamp(Var a, float lo, float hi) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x = std::clamp(x, lo, hi);
    return push("clamp", std::move(out), {a.id}, [lo, hi](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const Tensor& x = g.val(n.inputs[0]);
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (x.data[i] >= lo && x.data[i] <= hi) ga.data[i] += n.grad.data[i];
        }
    });
}

// ---------------------------------------------------------------- pointwise

Var Graph::exp(Var a) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x = std::exp(x);
    return push("exp", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i] * n.owned.data[i];
    });
}

Var Graph::sigmoid(Var a) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x = sigmoid_scalar(x);
    return push("sigmoid", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const float y = n.owned.data[i];
            ga.data[i] += n.grad.data[i] * y * (1.0f - y);
        }
    });
}

Var Graph::relu(Var a) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) x = x > 0.0f ? x : 0.0f;
    return push("relu", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const Tensor& x = g.val(n.inputs[0]);
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (x.data[i] > 0.0f) ga.data[i] += n.grad.data[i];
        }
    });
}

Var Graph::gelu(Var a) {
    check(a);
    Tensor out = val(a.id);
    for (float& x : out.data) {
        const float t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        x = 0.5f * x * (1.0f + t);
    }
    return push("gelu", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const Tensor& X = g.val(n.inputs[0]);
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const float x = X.data[i];
            const float t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * x * x);
            ga.data[i] += n.grad.data[i] * (0.5f * (1.0f + t) + 0.5f * x * dt);
        }
    });
}

Var Graph::activation(Var a, Nonlinearity kind) {
    return kind == Nonlinearity::relu ? relu(a) : gelu(a);
}

// ---------------------------------------------------------------- row-wise

Var Graph::softmax_rows(Var a) {
    check(a);
    Tensor out = val(a.id);
    for (std::size_t r = 0; r < out.rows; ++r) kernels::softmax_inplace(out.row(r));
    return push("softmax_rows", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const Tensor& y = n.owned;
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t r = 0; r < y.rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols; ++c) dot += static_cast<double>(y(r, c)) * n.grad(r, c);
            for (std::size_t c = 0; c < y.cols; ++c) {
                ga(r, c) += y(r, c) * (n.grad(r, c) - static_cast<float>(dot));
            }
        }
    });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, float eps) {
    check(x);
    check(gain);
    check(bias);
    const Tensor& X = val(x.id);
    const Tensor& G = val(gain.id);
    const Tensor& B = val(bias.id);
    if (G.rows != 1 || G.cols != X.cols) throw ShapeError("layer_norm", X.shape_str(), G.shape_str());
    if (!G.same_shape(B)) throw ShapeError("layer_norm", G.shape_str(), B.shape_str());

    Tensor out(X.rows, X.cols);
    // saved: per row [inv_std], then normalised values xhat
    std::vector<float> saved(X.rows + X.size());
    for (std::size_t r = 0; r < X.rows; ++r) {
        auto row = X.row(r);
        double mean = 0.0;
        for (float v : row) mean += v;
        mean /= static_cast<double>(X.cols);
        double var = 0.0;
        for (float v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(X.cols);
        const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
        saved[r] = inv_std;
        for (std::size_t c = 0; c < X.cols; ++c) {
            const float xhat = static_cast<float>(row[c] - mean) * inv_std;
            saved[X.rows + r * X.cols + c] = xhat;
            out(r, c) = xhat * G.data[c] + B.data[c];
        }
    }
    const Var v = push("layer_norm", std::move(out), {x.id, gain.id, bias.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        const std::size_t rows = n.grad.rows, cols = n.grad.cols;
        const float* xhat = n.saved.data() + rows;
        const Tensor& G = g.val(n.inputs[1]);
        if (g.wants(n.inputs[0])) {
            Tensor& gx = g.grad(n.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = static_cast<double>(n.grad(r, c)) * G.data[c];
                    m1 += d;
                    m2 += d * xhat[r * cols + c];
                }
                m1 /= static_cast<double>(cols);
                m2 /= static_cast<double>(cols);
                const float inv_std = n.saved[r];
                for (std::size_t c = 0; c < cols; ++c) {
                    const float d = n.grad(r, c) * G.data[c];
                    gx(r, c) += inv_std * (d - static_cast<float>(m1) - xhat[r * cols + c] * static_cast<float>(m2));
                }
            }
        }
        if (g.wants(n.inputs[1])) {
            Tensor& gg = g.grad(n.inputs[1]);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) gg.data[c] += n.grad(r, c) * xhat[r * cols + c];
            }
        }
        if (g.wants(n.inputs[2])) {
            Tensor& gb = g.grad(n.inputs[2]);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) gb.data[c] += n.grad(r, c);
            }
        }
    });
    nodes_[v.id].saved = std::move(saved);
    return v;
}

Var Graph::embedding(Var table, std::span<const int> ids) {
    check(table);
    const Tensor& T = val(table.id);
    Tensor out(ids.size(), T.cols);
    std::vector<std::size_t> index(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows) {
            throw ShapeError("embedding", T.shape_str(), "id " + std::to_string(ids[i]));
        }
        index[i] = static_cast<std::size_t>(ids[i]);
        auto src = T.row(index[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    const Var v = push("embedding", std::move(out), {table.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& gt = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < n.index.size(); ++i) {
            auto dst = gt.row(n.index[i]);
            auto src = n.grad.row(i);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
    });
    nodes_[v.id].index = std::move(index);
    return v;
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets) {
    check(logits);
    const Tensor& L = val(logits.id);
    if (targets.size() != L.rows) {
        throw ShapeError("cross_entropy", L.shape_str(), "targets[" + std::to_string(targets.size()) + "]");
    }
    Tensor probs = L;
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> index;
    for (std::size_t r = 0; r < L.rows; ++r) {
        const int t = targets[r];
        if (t < 0) continue;
        if (static_cast<std::size_t>(t) >= L.cols) {
            throw ShapeError("cross_entropy", L.shape_str(), "target " + std::to_string(t));
        }
        auto row = L.row(r);
        const float mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (float v : row) z += std::exp(static_cast<double>(v) - mx);
        total += std::log(z) + mx - row[static_cast<std::size_t>(t)];
        kernels::softmax_inplace(probs.row(r));
        index.push_back(r);
        ++count;
    }
    const double loss = count > 0 ? total / static_cast<double>(count) : 0.0;
    const std::size_t vocab = L.cols;
    const Var v = push("cross_entropy", Tensor::scalar(static_cast<float>(loss)), {logits.id},
                       [](Graph& g, std::uint32_t self) {
                           const Node& n = g.nodes_[self];
                           if (n.index.empty()) return;
                           const std::size_t cols = g.val(n.inputs[0]).cols;
                           const float upstream = n.grad.data[0] / static_cast<float>(n.index.size() / 2);
                           Tensor& gl = g.grad(n.inputs[0]);
                           const std::size_t half = n.index.size() / 2;
                           for (std::size_t i = 0; i < half; ++i) {
                               const std::size_t r = n.index[i];
                               const std::size_t t = n.index[half + i];
                               for (std::size_t c = 0; c < cols; ++c) {
                                   gl(r, c) += upstream * n.saved[i * cols + c];
                               }
                               gl(r, t) -= upstream;
                           }
                       });
    // saved: softmax rows of counted positions; index: [rows..., targets...]
    Node& n = nodes_[v.id];
    n.saved.resize(count * vocab);
    for (std::size_t i = 0; i < count; ++i) {
        auto src = probs.row(index[i]);
        std::copy(src.begin(), src.end(), n.saved.begin() + static_cast<std::ptrdiff_t>(i * vocab));
    }
    for (std::size_t i = 0; i < count; ++i) index.push_back(static_cast<std::size_t>(targets[index[i]]));
    n.index = std::move(index);
    return v;
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    std::size_t rows = 0;
    const std::size_t cols = value(parts[0]).cols;
    std::vector<std::uint32_t> ids;
    for (Var p : parts) {
        const Tensor& t = value(p);
        if (t.cols != cols) throw ShapeError("concat_rows", value(parts[0]).shape_str(), t.shape_str());
        rows += t.rows;
        ids.push_back(p.id);
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& t = val(p.id);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += t.size();
    }
    return push("concat_rows", std::move(out), std::move(ids), [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        std::size_t off = 0;
        for (std::uint32_t in : n.inputs) {
            const std::size_t sz = g.val(in).size();
            if (g.wants(in)) {
                Tensor& gi = g.grad(in);
                for (std::size_t i = 0; i < sz; ++i) gi.data[i] += n.grad.data[off + i];
            }
            off += sz;
        }
    });
}

Var Graph::select_rows(Var a, std::span<const std::size_t> rows) {
    check(a);
    const Tensor& A = val(a.id);
    Tensor out(rows.size(), A.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= A.rows) throw ShapeError("select_rows", A.shape_str(), "row " + std::to_string(rows[i]));
        auto src = A.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    const Var v = push("select_rows", std::move(out), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (std::size_t i = 0; i < n.index.size(); ++i) {
            auto dst = ga.row(n.index[i]);
            auto src = n.grad.row(i);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
    });
    nodes_[v.id].index.assign(rows.begin(), rows.end());
    return v;
}

Var Graph::mean(Var a) {
    check(a);
    const Tensor& A = val(a.id);
    if (A.empty()) throw ShapeError("mean", A.shape_str(), "non-empty");
    double s = 0.0;
    for (float x : A.data) s += x;
    const float n_inv = 1.0f / static_cast<float>(A.size());
    return push("mean", Tensor::scalar(static_cast<float>(s / static_cast<double>(A.size()))), {a.id},
                [n_inv](Graph& g, std::uint32_t self) {
                    const Node& n = g.nodes_[self];
                    Tensor& ga = g.grad(n.inputs[0]);
                    const float d = n.grad.data[0] * n_inv;
                    for (float& x : ga.data) x += d;
                });
}

Var Graph::sum(Var a) {
    check(a);
    const Tensor& A = val(a.id);
    double s = 0.0;
    for (float x : A.data) s += x;
    return push("sum", Tensor::scalar(static_cast<float>(s)), {a.id}, [](Graph& g, std::uint32_t self) {
        const Node& n = g.nodes_[self];
        Tensor& ga = g.grad(n.inputs[0]);
        for (float& x : ga.data) x += n.grad.data[0];
    });
}

// ---------------------------------------------------------------- attention

Var Graph::causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::span<const std::size_t> segment_lengths) {
    check(q);
    check(k);
    check(v);
    const Tensor& Q = val(q.id);
    const Tensor& K = val(k.id);
    const Tensor& V = val(v.id);
    require_same("causal_attention", Q, K);
    require_same("causal_attention", Q, V);
    if (n_heads == 0 || Q.cols % n_heads != 0) {
        throw ShapeError("causal_attention", Q.shape_str(), "heads " + std::to_string(n_heads));
    }
    const std::size_t total = std::accumulate(segment_lengths.begin(), segment_lengths.end(), std::size_t{0});
    if (total != Q.rows) {
        throw ShapeError("causal_attention", Q.shape_str(), "segments sum " + std::to_string(total));
    }
    const std::size_t dh = Q.cols / n_heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

    // Probabilities are stored per (segment, head) as dense LxL blocks.
    std::size_t saved_size = 0;
    for (std::size_t len : segment_lengths) saved_size += n_heads * len * len;
    std::vector<float> probs(saved_size, 0.0f);

    Tensor out(Q.rows, Q.cols);
    std::size_t row0 = 0, p0 = 0;
    std::vector<float> scores;
    for (std::size_t len : segment_lengths) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t c0 = h * dh;
            float* P = probs.data() + p0;
            for (std::size_t i = 0; i < len; ++i) {
                const float* qi = Q.data.data() + (row0 + i) * Q.cols + c0;
                scores.assign(i + 1, 0.0f);
                for (std::size_t j = 0; j <= i; ++j) {
                    const float* kj = K.data.data() + (row0 + j) * K.cols + c0;
                    float s = 0.0f;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    scores[j] = s * inv_sqrt;
                }
                kernels::softmax_inplace(scores);
                float* oi = out.data.data() + (row0 + i) * out.cols + c0;
                for (std::size_t j = 0; j <= i; ++j) {
                    P[i * len + j] = scores[j];
                    const float* vj = V.data.data() + (row0 + j) * V.cols + c0;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += scores[j] * vj[c];
                }
            }
            p0 += len * len;
        }
        row0 += len;
    }

    const Var res = push(
        "causal_attention", std::move(out), {q.id, k.id, v.id}, [n_heads, inv_sqrt](Graph& g, std::uint32_t self) {
            const Node& n = g.nodes_[self];
            const Tensor& Q = g.val(n.inputs[0]);
            const Tensor& K = g.val(n.inputs[1]);
            const Tensor& V = g.val(n.inputs[2]);
            const bool wq = g.wants(n.inputs[0]), wk = g.wants(n.inputs[1]), wv = g.wants(n.inputs[2]);
            Tensor* gq = wq ? &g.grad(n.inputs[0]) : nullptr;
            Tensor* gk = wk ? &g.grad(n.inputs[1]) : nullptr;
            Tensor* gv = wv ? &g.grad(n.inputs[2]) : nullptr;
            const std::size_t cols = Q.cols, dh = cols / n_heads;
            std::vector<float> dp;
            std::size_t row0 = 0, p0 = 0;
            for (std::size_t len : n.index) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t c0 = h * dh;
                    const float* P = n.saved.data() + p0;
                    for (std::size_t i = 0; i < len; ++i) {
                        const float* go = n.grad.data.data() + (row0 + i) * cols + c0;
                        dp.assign(i + 1, 0.0f);
                        double dot = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const float p = P[i * len + j];
                            const float* vj = V.data.data() + (row0 + j) * cols + c0;
                            float s = 0.0f;
                            for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                            dp[j] = s;
                            dot += static_cast<double>(p) * s;
                            if (gv != nullptr) {
                                float* gvj = gv->data.data() + (row0 + j) * cols + c0;
                                for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * go[c];
                            }
                        }
                        const float* qi = Q.data.data() + (row0 + i) * cols + c0;
                        float* gqi = gq != nullptr ? gq->data.data() + (row0 + i) * cols + c0 : nullptr;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const float ds = P[i * len + j] * (dp[j] - static_cast<float>(dot)) * inv_sqrt;
                            if (gqi != nullptr) {
                                const float* kj = K.data.data() + (row0 + j) * cols + c0;
                                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                            }
                            if (gk != nullptr) {
                                float* gkj = gk->data.data() + (row0 + j) * cols + c0;
                                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                            }
                        }
                    }
                    p0 += len * len;
                }
                row0 += len;
            }
        });
    nodes_[res.id].saved = std::move(probs);
    nodes_[res.id].index.assign(segment_lengths.begin(), segment_lengths.end());
    return res;
}

// ---------------------------------------------------------------- backward

GradMap Graph::backward(Var loss, std::string_view context) {
    check(loss);
    const Tensor& L = val(loss.id);
    if (L.rows != 1 || L.cols != 1) throw ShapeError("backward", L.shape_str(), "[1x1]");
    if (!std::isfinite(L.data[0])) {
        std::string msg = "non-finite loss";
        if (!context.empty()) msg = std::string(context) + ": " + msg;
        throw NonFiniteError(msg);
    }
    for (Node& n : nodes_) n.grad = Tensor();

    GradMap grads;
    if (!nodes_[loss.id].needs_grad) return grads;
    grad(loss.id).data[0] = 1.0f;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
    }
    for (std::uint32_t id = 0; id <= loss.id; ++id) {
        Node& n = nodes_[id];
        if (!n.param) continue;
        const Tensor& v = val(id);
        auto [it, inserted] = grads.try_emplace(*n.param, v.rows, v.cols);
        if (!n.grad.empty()) {
            if (!it->second.same_shape(n.grad)) {
                throw ShapeError("backward", it->second.shape_str(), n.grad.shape_str());
            }
            for (std::size_t i = 0; i < n.grad.size(); ++i) it->second.data[i] += n.grad.data[i];
        }
    }
    return grads;
}

}  // namespace scen
