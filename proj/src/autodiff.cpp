#include "tractorc/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

namespace tractorc::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::atomic<bool> g_corrupt{false};

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(s));
    }
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape r = s;
    r.erase(r.begin() + static_cast<std::ptrdiff_t>(axis));
    return r;
}

void require_2d(const Tensor& a, const char* op) {
    if (a.shape().size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_string(a.shape()));
}

// b may equal a's shape or a's trailing dimensions.
void check_broadcast(const Shape& a, const Shape& b, const char* op) {
    bool ok = b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin());
    if (!ok || (b.empty() && !a.empty() && numel(b) != 1)) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
    }
}

std::vector<double>& grad_of(Tape& tape, std::size_t id) { return tape.grad_buffer(id); }

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd_factor) {
    Tape& tape = a.tape();
    const auto& x = a.value();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    const std::size_t ia = a.id();
    return tape.record(a.shape(), std::move(y), a.requires_grad(), [ia, bwd_factor](Tape& t, const Node& self) {
        const auto& x = t.node(ia).value;
        auto& g = grad_of(t, ia);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bwd_factor(x[i], self.value[i]);
    });
}

}  // namespace

std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::span<const double> Tensor::value() const { return tape_->node(id_).value; }
std::span<const double> Tensor::grad() const {
    if (!requires_grad()) return {};
    return tape_->grad_buffer(id_);
}
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return value()[0];
}

Tensor Tape::constant(Shape shape, std::vector<double> value) { return record(std::move(shape), std::move(value), false, {}); }

Tensor Tape::variable(Shape shape, std::vector<double> value) { return record(std::move(shape), std::move(value), true, {}); }

Tensor Tape::record(Shape shape, std::vector<double> value, bool requires_grad,
                    std::function<void(Tape&, const Node&)> backward) {
    if (numel(shape) != value.size()) {
        throw ShapeError("value of length " + std::to_string(value.size()) + " does not fit shape " + shape_string(shape));
    }
    auto n = std::make_unique<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    Node& root = node(loss.id());
    if (!root.requires_grad) return;
    grad_buffer(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = *nodes_[i];
        // an empty buffer means nothing downstream of the loss reached this node
        if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, n);
    }
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    Node& n = node(id);
    if (n.grad.empty() && n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_broadcast(a.shape(), b.shape(), "add");
    const auto& x = a.value();
    const auto& y = b.value();
    const std::size_t nb = y.size();
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t r = 0; r < out.size(); r += nb)
        for (std::size_t j = 0; j < nb; ++j) out[r + j] += y[j];
    const std::size_t ia = a.id(), ib = b.id();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return a.tape().record(a.shape(), std::move(out), ga || gb, [ia, ib, ga, gb, nb](Tape& t, const Node& self) {
        if (ga) {
            auto& g = grad_of(t, ia);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (gb) {
            auto& g = grad_of(t, ib);
            for (std::size_t r = 0; r < self.grad.size(); r += nb)
                for (std::size_t j = 0; j < nb; ++j) g[j] += self.grad[r + j];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, mul_scalar(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_broadcast(a.shape(), b.shape(), "mul");
    const auto& x = a.value();
    const auto& y = b.value();
    const std::size_t nb = y.size();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % nb];
    const std::size_t ia = a.id(), ib = b.id();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return a.tape().record(a.shape(), std::move(out), ga || gb, [ia, ib, ga, gb, nb](Tape& t, const Node& self) {
        const auto& x = t.node(ia).value;
        const auto& y = t.node(ib).value;
        if (ga) {
            auto& g = grad_of(t, ia);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i % nb];
        }
        if (gb) {
            auto& g = grad_of(t, ib);
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * x[i];
        }
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor log(const Tensor& a) {
    for (double v : a.value()) {
        if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
    }
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log1p(const Tensor& a) {
    return unary(a, [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor huber(const Tensor& a, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
    return unary(
        a,
        [delta](double x) {
            const double ax = std::abs(x);
            return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
        },
        [delta](double x, double) { return std::abs(x) <= delta ? x : (x > 0.0 ? delta : -delta); });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    std::vector<double> out(n * m);
    Map(out.data(), n, m).noalias() = CMap(a.value().data(), n, k) * CMap(b.value().data(), k, m);
    const std::size_t ia = a.id(), ib = b.id();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return a.tape().record({n, m}, std::move(out), ga || gb, [=](Tape& t, const Node& self) {
        CMap g(self.grad.data(), n, m);
        if (ga) Map(grad_of(t, ia).data(), n, k).noalias() += g * CMap(t.node(ib).value.data(), k, m).transpose();
        if (gb) Map(grad_of(t, ib).data(), k, m).noalias() += CMap(t.node(ia).value.data(), n, k).transpose() * g;
    });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t n = a.dim(0), m = a.dim(1);
    std::vector<double> out(n * m);
    Map(out.data(), m, n) = CMap(a.value().data(), n, m).transpose();
    const std::size_t ia = a.id();
    return a.tape().record({m, n}, std::move(out), a.requires_grad(), [=](Tape& t, const Node& self) {
        Map(grad_of(t, ia).data(), n, m) += CMap(self.grad.data(), m, n).transpose();
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    std::vector<double> out(a.value().begin(), a.value().end());
    const std::size_t ia = a.id();
    return a.tape().record(std::move(shape), std::move(out), a.requires_grad(), [ia](Tape& t, const Node& self) {
        auto& g = grad_of(t, ia);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    require_2d(a, "slice_rows");
    if (begin > end || end > a.dim(0)) {
        throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_string(a.shape()));
    }
    const std::size_t c = a.dim(1);
    const auto& x = a.value();
    std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * c), x.begin() + static_cast<std::ptrdiff_t>(end * c));
    const std::size_t ia = a.id();
    return a.tape().record({end - begin, c}, std::move(out), a.requires_grad(), [ia, begin, c](Tape& t, const Node& self) {
        auto& g = grad_of(t, ia);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
}

Tensor concat(const Tensor& a, const Tensor& b) {
    require_2d(a, "concat");
    require_2d(b, "concat");
    if (a.dim(0) != b.dim(0)) throw ShapeError("concat: row counts differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
    std::vector<double> out(n * c);
    const auto& x = a.value();
    const auto& y = b.value();
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * ca), ca, out.begin() + static_cast<std::ptrdiff_t>(r * c));
        std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(r * cb), cb, out.begin() + static_cast<std::ptrdiff_t>(r * c + ca));
    }
    const std::size_t ia = a.id(), ib = b.id();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return a.tape().record({n, c}, std::move(out), ga || gb, [=](Tape& t, const Node& self) {
        for (std::size_t r = 0; r < n; ++r) {
            if (ga) {
                auto& g = grad_of(t, ia);
                for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * c + j];
            }
            if (gb) {
                auto& g = grad_of(t, ib);
                for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * c + ca + j];
            }
        }
    });
}

Tensor gather(const Tensor& a, std::span<const std::size_t> rows) {
    require_2d(a, "gather");
    const std::size_t n = a.dim(0), c = a.dim(1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * c);
    const auto& x = a.value();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= n) throw ShapeError("gather: row index " + std::to_string(idx[r]) + " out of range for " + shape_string(a.shape()));
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c, out.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    const std::size_t ia = a.id();
    const std::size_t rcount = idx.size();
    return a.tape().record({rcount, c}, std::move(out), a.requires_grad(),
                           [ia, c, idx = std::move(idx)](Tape& t, const Node& self) {
                               auto& g = grad_of(t, ia);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                   for (std::size_t j = 0; j < c; ++j) g[idx[r] * c + j] += self.grad[r * c + j];
                               }
                           });
}

// ---- reductions -------------------------------------------------------------

Tensor reduce_max(const Tensor& a, std::size_t axis) {
    const AxisSplit s = split_axis(a.shape(), axis, "reduce_max");
    if (s.len == 0) throw ShapeError("reduce_max over an empty axis");
    const auto& x = a.value();
    std::vector<double> out(s.outer * s.inner);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = (o * s.len) * s.inner + i;
            for (std::size_t l = 1; l < s.len; ++l) {
                const std::size_t at = (o * s.len + l) * s.inner + i;
                if (x[at] > x[best]) best = at;  // strict: ties stay at the lowest index
            }
            out[o * s.inner + i] = x[best];
            arg[o * s.inner + i] = best;
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(drop_axis(a.shape(), axis), std::move(out), a.requires_grad(),
                           [ia, arg = std::move(arg)](Tape& t, const Node& self) {
                               auto& g = grad_of(t, ia);
                               for (std::size_t r = 0; r < arg.size(); ++r) g[arg[r]] += self.grad[r];
                           });
}

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
    const AxisSplit s = split_axis(a.shape(), axis, "reduce_sum");
    const auto& x = a.value();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.len + l) * s.inner + i];
    const std::size_t ia = a.id();
    return a.tape().record(drop_axis(a.shape(), axis), std::move(out), a.requires_grad(), [ia, s](Tape& t, const Node& self) {
        auto& g = grad_of(t, ia);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t l = 0; l < s.len; ++l)
                for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
    });
}

Tensor reduce_mean(const Tensor& a, std::size_t axis) {
    const AxisSplit s = split_axis(a.shape(), axis, "reduce_mean");
    if (s.len == 0) throw ShapeError("reduce_mean over an empty axis");
    return mul_scalar(reduce_sum(a, axis), 1.0 / static_cast<double>(s.len));
}

Tensor sum(const Tensor& a) {
    const auto& x = a.value();
    double total = 0.0;
    for (double v : x) total += v;
    const std::size_t ia = a.id();
    return a.tape().record({}, {total}, a.requires_grad(), [ia](Tape& t, const Node& self) {
        auto& g = grad_of(t, ia);
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean of an empty tensor");
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    const AxisSplit s = split_axis(a.shape(), axis, "softmax");
    const auto& x = a.value();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[(o * s.len + l) * s.inner + i]);
            double z = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) {
                const std::size_t at = (o * s.len + l) * s.inner + i;
                out[at] = std::exp(x[at] - mx);
                z += out[at];
            }
            for (std::size_t l = 0; l < s.len; ++l) out[(o * s.len + l) * s.inner + i] /= z;
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(a.shape(), std::move(out), a.requires_grad(), [ia, s](Tape& t, const Node& self) {
        auto& g = grad_of(t, ia);
        const auto& y = self.value;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                double dot = 0.0;
                for (std::size_t l = 0; l < s.len; ++l) {
                    const std::size_t at = (o * s.len + l) * s.inner + i;
                    dot += self.grad[at] * y[at];
                }
                for (std::size_t l = 0; l < s.len; ++l) {
                    const std::size_t at = (o * s.len + l) * s.inner + i;
                    g[at] += y[at] * (self.grad[at] - dot);
                }
            }
        }
    });
}

Tensor squared_norm(const Tensor& a, std::size_t axis) { return reduce_sum(mul(a, a), axis); }

Tensor pairwise_sq_distance(const Tensor& a, const Tensor& b) {
    require_2d(a, "pairwise_sq_distance");
    require_2d(b, "pairwise_sq_distance");
    if (a.dim(1) != b.dim(1)) throw ShapeError("pairwise_sq_distance: feature widths differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    const auto& x = a.value();
    const auto& y = b.value();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = x[i * d + c] - y[j * d + c];
                acc += diff * diff;
            }
            out[i * m + j] = acc;
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return a.tape().record({n, m}, std::move(out), ga || gb, [=](Tape& t, const Node& self) {
        const auto& x = t.node(ia).value;
        const auto& y = t.node(ib).value;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double go = 2.0 * self.grad[i * m + j];
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = x[i * d + c] - y[j * d + c];
                    if (ga) grad_of(t, ia)[i * d + c] += go * diff;
                    if (gb) grad_of(t, ib)[j * d + c] -= go * diff;
                }
            }
        }
    });
}

Tensor pairwise_distance(const Tensor& a) {
    require_2d(a, "pairwise_distance");
    const std::size_t n = a.dim(0), d = a.dim(1);
    const auto& x = a.value();
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = x[i * d + c] - x[j * d + c];
                acc += diff * diff;
            }
            out[i * n + j] = out[j * n + i] = std::sqrt(acc);
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record({n, n}, std::move(out), a.requires_grad(), [=](Tape& t, const Node& self) {
        const auto& x = t.node(ia).value;
        auto& g = grad_of(t, ia);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double dist = self.value[i * n + j];
                if (i == j || dist == 0.0) continue;
                const double go = self.grad[i * n + j] / dist;
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = go * (x[i * d + c] - x[j * d + c]);
                    g[i * d + c] += diff;
                    g[j * d + c] -= diff;
                }
            }
        }
    });
}

// ---- gradient check ---------------------------------------------------------

GradCheckResult grad_check(const ScalarFn& f, std::span<const GradInput> inputs, double eps, double floor) {
    auto evaluate = [&](const std::vector<GradInput>& in, bool with_grad, std::vector<std::vector<double>>* grads) {
        Tape tape;
        std::vector<Tensor> ts;
        ts.reserve(in.size());
        for (const auto& x : in) ts.push_back(with_grad ? tape.variable(x.shape, x.value) : tape.constant(x.shape, x.value));
        Tensor out = f(tape, ts);
        const double v = out.item();
        if (with_grad) {
            tape.backward(out);
            grads->clear();
            for (const auto& t : ts) grads->emplace_back(t.grad().begin(), t.grad().end());
        }
        return v;
    };

    std::vector<GradInput> work(inputs.begin(), inputs.end());
    std::vector<std::vector<double>> analytic;
    evaluate(work, true, &analytic);
    double scale = 0.0;
    for (const auto& g : analytic) {
        for (double v : g) scale = std::max(scale, std::abs(v));
    }
    const double guard = floor * scale;

    GradCheckResult res;
    for (std::size_t k = 0; k < work.size(); ++k) {
        for (std::size_t i = 0; i < work[k].value.size(); ++i) {
            const double orig = work[k].value[i];
            const double h = eps * std::max(1.0, std::abs(orig));
            work[k].value[i] = orig + h;
            const double fp = evaluate(work, false, nullptr);
            work[k].value[i] = orig - h;
            const double fm = evaluate(work, false, nullptr);
            work[k].value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), guard, std::numeric_limits<double>::min()});
            if (err > res.max_relative_error || (k == 0 && i == 0)) {
                res.max_relative_error = err;
                res.worst_input = k;
                res.worst_index = i;
                res.analytic = a;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

void set_corrupt_gradient(bool on) { g_corrupt = on; }
bool corrupt_gradient() { return g_corrupt; }

}  // namespace tractorc::ad
