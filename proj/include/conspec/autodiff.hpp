#pragma once

// Minimal reverse-mode differentiation over dense float64 tensors.
//
// A Tape records one backward closure per primitive, in execution order.
// Tensors that require gradients are parameters or outputs of primitives
// with at least one such input; gradients are allocated on first use.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace conspec::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Tensor {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;

    std::size_t size() const { return value.size(); }
    std::size_t rank() const { return shape.size(); }
    bool has_grad() const { return !grad.empty(); }

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
    void zero_grad() { grad.clear(); }

    double item() const {
        if (value.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
        return value[0];
    }
};

using Var = std::shared_ptr<Tensor>;

inline Var make_tensor(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel(shape) != value.size()) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(value.size()) + " values");
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->value = std::move(value);
    t->requires_grad = requires_grad;
    return t;
}

inline Var constant(Shape shape, std::vector<double> value) {
    return make_tensor(std::move(shape), std::move(value), false);
}

inline Var constant(double v) { return make_tensor({}, {v}, false); }

inline Var parameter(Shape shape, std::vector<double> value) {
    return make_tensor(std::move(shape), std::move(value), true);
}

inline Var zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

class Tape {
public:
    using Backward = std::function<void()>;

    std::size_t record(std::string_view op, Backward fn) {
        names_.emplace_back(op);
        backward_.push_back(std::move(fn));
        return backward_.size() - 1;
    }

    std::size_t size() const { return backward_.size(); }
    const std::vector<std::string>& ops() const { return names_; }

    // Indices of the recorded operations in the order the last backward pass
    // visited them.
    const std::vector<std::size_t>& last_visit_order() const { return visited_; }

    void backward(const Var& loss) {
        if (loss->size() != 1) {
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
        }
        loss->grad_buffer()[0] += 1.0;
        visited_.clear();
        visited_.reserve(backward_.size());
        for (std::size_t i = backward_.size(); i-- > 0;) {
            visited_.push_back(i);
            backward_[i]();
        }
    }

    void clear() {
        names_.clear();
        backward_.clear();
        visited_.clear();
    }

private:
    std::vector<std::string> names_;
    std::vector<Backward> backward_;
    std::vector<std::size_t> visited_;
};

namespace detail {

inline Var output_like(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

inline void require_rank(std::string_view op, const Tensor& a, std::size_t rank) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape));
    }
}

// Split a shape around an axis into (outer, axis length, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(std::string_view op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out.push_back(shape[i]);
    return out;
}

template <class F, class DF>
Var unary(Tape& tape, std::string_view name, const Var& x, F f, DF df) {
    auto out = output_like(x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->size(); ++i) out->value[i] = f(x->value[i]);
    if (out->requires_grad) {
        tape.record(name, [x, out, df] {
            if (!out->has_grad()) return;
            auto& gx = x->grad_buffer();
            for (std::size_t i = 0; i < x->size(); ++i)
                gx[i] += out->grad[i] * df(x->value[i], out->value[i]);
        });
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Tape& tape, const Var& a, const Var& b) {
    detail::require_same_shape("add", *a, *b);
    auto out = detail::output_like(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (out->requires_grad) {
        tape.record("add", [a, b, out] {
            if (!out->has_grad()) return;
            for (auto* t : {a.get(), b.get()}) {
                if (!t->requires_grad) continue;
                auto& g = t->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline Var sub(Tape& tape, const Var& a, const Var& b) {
    detail::require_same_shape("sub", *a, *b);
    auto out = detail::output_like(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] - b->value[i];
    if (out->requires_grad) {
        tape.record("sub", [a, b, out] {
            if (!out->has_grad()) return;
            if (a->requires_grad) {
                auto& g = a->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i];
            }
            if (b->requires_grad) {
                auto& g = b->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out->grad[i];
            }
        });
    }
    return out;
}

inline Var mul(Tape& tape, const Var& a, const Var& b) {
    detail::require_same_shape("mul", *a, *b);
    auto out = detail::output_like(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    if (out->requires_grad) {
        tape.record("mul", [a, b, out] {
            if (!out->has_grad()) return;
            if (a->requires_grad) {
                auto& g = a->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                auto& g = b->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i] * a->value[i];
            }
        });
    }
    return out;
}

// Elementwise minimum; ties route the gradient to `a`.
inline Var minimum(Tape& tape, const Var& a, const Var& b) {
    detail::require_same_shape("minimum", *a, *b);
    auto out = detail::output_like(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < a->size(); ++i) out->value[i] = std::min(a->value[i], b->value[i]);
    if (out->requires_grad) {
        tape.record("minimum", [a, b, out] {
            if (!out->has_grad()) return;
            for (std::size_t i = 0; i < out->size(); ++i) {
                const bool take_a = a->value[i] <= b->value[i];
                Tensor* t = take_a ? a.get() : b.get();
                if (t->requires_grad) t->grad_buffer()[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline Var scale(Tape& tape, const Var& x, double c) {
    return detail::unary(
        tape, "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Tape& tape, const Var& x, double c) {
    return detail::unary(
        tape, "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Tape& tape, const Var& x) {
    return detail::unary(
        tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Tape& tape, const Var& x) {
    return detail::unary(
        tape, "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Tape& tape, const Var& x) {
    return detail::unary(
        tape, "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var abs(Tape& tape, const Var& x) {
    return detail::unary(
        tape, "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Tape& tape, const Var& x) {
    return detail::unary(
        tape, "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Gradient passes where lo <= x <= hi.
inline Var clamp(Tape& tape, const Var& x, double lo, double hi) {
    return detail::unary(
        tape, "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

// a [n x k] . b [k x m]
inline Var matmul(Tape& tape, const Var& a, const Var& b) {
    detail::require_rank("matmul", *a, 2);
    detail::require_rank("matmul", *b, 2);
    const std::size_t n = a->shape[0], k = a->shape[1], m = b->shape[1];
    if (b->shape[0] != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    }
    auto out = detail::output_like({n, m}, a->requires_grad || b->requires_grad);
    auto& o = out->value;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a->value[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &b->value[p * m];
            double* orow = &o[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    if (out->requires_grad) {
        tape.record("matmul", [a, b, out, n, k, m] {
            if (!out->has_grad()) return;
            const auto& go = out->grad;
            if (a->requires_grad) {
                auto& ga = a->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += go[i * m + j] * b->value[p * m + j];
                        ga[i * k + p] += s;
                    }
            }
            if (b->requires_grad) {
                auto& gb = b->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a->value[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * go[i * m + j];
                    }
            }
        });
    }
    return out;
}

// x [n x in] . w [in x out] + bias [out]
inline Var affine(Tape& tape, const Var& x, const Var& w, const Var& bias) {
    detail::require_rank("affine", *x, 2);
    detail::require_rank("affine", *w, 2);
    detail::require_rank("affine", *bias, 1);
    const std::size_t n = x->shape[0], in = x->shape[1], m = w->shape[1];
    if (w->shape[0] != in || bias->shape[0] != m) {
        throw ShapeError("affine: incompatible shapes x" + shape_str(x->shape) + " w" +
                         shape_str(w->shape) + " b" + shape_str(bias->shape));
    }
    const bool rg = x->requires_grad || w->requires_grad || bias->requires_grad;
    auto out = detail::output_like({n, m}, rg);
    auto& o = out->value;
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = &o[i * m];
        std::copy(bias->value.begin(), bias->value.end(), orow);
        for (std::size_t p = 0; p < in; ++p) {
            const double xv = x->value[i * in + p];
            if (xv == 0.0) continue;
            const double* wrow = &w->value[p * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += xv * wrow[j];
        }
    }
    if (rg) {
        tape.record("affine", [x, w, bias, out, n, in, m] {
            if (!out->has_grad()) return;
            const auto& go = out->grad;
            if (x->requires_grad) {
                auto& gx = x->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < in; ++p) {
                        const double* wrow = &w->value[p * m];
                        const double* grow = &go[i * m];
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += grow[j] * wrow[j];
                        gx[i * in + p] += s;
                    }
            }
            if (w->requires_grad) {
                auto& gw = w->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < in; ++p) {
                        const double xv = x->value[i * in + p];
                        if (xv == 0.0) continue;
                        double* gwrow = &gw[p * m];
                        const double* grow = &go[i * m];
                        for (std::size_t j = 0; j < m; ++j) gwrow[j] += xv * grow[j];
                    }
            }
            if (bias->requires_grad) {
                auto& gb = bias->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) gb[j] += go[i * m + j];
            }
        });
    }
    return out;
}

// Norms are offset by this before dividing; a zero vector scores 0.
inline constexpr double kCosineEps = 1e-8;

// Batched row cosine: a [B x n x d], b [B x m x d] -> [B x n x m].
// Rank-2 inputs are treated as B = 1 and produce [n x m].
inline Var cosine_rows(Tape& tape, const Var& a, const Var& b) {
    const bool batched = a->rank() == 3;
    if (!((a->rank() == 2 && b->rank() == 2) || (a->rank() == 3 && b->rank() == 3))) {
        throw ShapeError("cosine_rows: expected two rank-2 or two rank-3 tensors, got " +
                         shape_str(a->shape) + " and " + shape_str(b->shape));
    }
    const std::size_t B = batched ? a->shape[0] : 1;
    const std::size_t n = a->shape[a->rank() - 2], d = a->shape.back();
    const std::size_t m = b->shape[b->rank() - 2];
    if (b->shape.back() != d || (batched && b->shape[0] != B)) {
        throw ShapeError("cosine_rows: incompatible shapes " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    }
    Shape oshape = batched ? Shape{B, n, m} : Shape{n, m};
    auto out = detail::output_like(oshape, a->requires_grad || b->requires_grad);

    std::vector<double> na(B * n), nb(B * m);
    for (std::size_t r = 0; r < B * n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += a->value[r * d + c] * a->value[r * d + c];
        na[r] = std::sqrt(s);
    }
    for (std::size_t r = 0; r < B * m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += b->value[r * d + c] * b->value[r * d + c];
        nb[r] = std::sqrt(s);
    }
    std::vector<double> dots(B * n * m);
    for (std::size_t bt = 0; bt < B; ++bt)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double* ar = &a->value[(bt * n + i) * d];
                const double* br = &b->value[(bt * m + j) * d];
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += ar[c] * br[c];
                const std::size_t o = (bt * n + i) * m + j;
                dots[o] = s;
                out->value[o] = s / ((na[bt * n + i] + kCosineEps) * (nb[bt * m + j] + kCosineEps));
            }
    if (out->requires_grad) {
        tape.record("cosine_rows", [a, b, out, B, n, m, d, na = std::move(na), nb = std::move(nb),
                                    dots = std::move(dots)] {
            if (!out->has_grad()) return;
            const auto& go = out->grad;
            for (std::size_t bt = 0; bt < B; ++bt)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        const std::size_t o = (bt * n + i) * m + j;
                        const double g = go[o];
                        if (g == 0.0) continue;
                        const std::size_t ra = bt * n + i, rb = bt * m + j;
                        const double da = na[ra] + kCosineEps, db = nb[rb] + kCosineEps;
                        const double inv = 1.0 / (da * db);
                        const double* ar = &a->value[ra * d];
                        const double* br = &b->value[rb * d];
                        if (a->requires_grad) {
                            auto& ga = a->grad_buffer();
                            const double ka = na[ra] > 0.0 ? dots[o] * inv / (da * na[ra]) : 0.0;
                            for (std::size_t c = 0; c < d; ++c)
                                ga[ra * d + c] += g * (br[c] * inv - ka * ar[c]);
                        }
                        if (b->requires_grad) {
                            auto& gb = b->grad_buffer();
                            const double kb = nb[rb] > 0.0 ? dots[o] * inv / (db * nb[rb]) : 0.0;
                            for (std::size_t c = 0; c < d; ++c)
                                gb[rb * d + c] += g * (ar[c] * inv - kb * br[c]);
                        }
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Tape& tape, const Var& x, Shape shape) {
    if (numel(shape) != x->size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
    }
    auto out = detail::output_like(std::move(shape), x->requires_grad);
    out->value = x->value;
    if (out->requires_grad) {
        tape.record("reshape", [x, out] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i];
        });
    }
    return out;
}

// Cosine similarity of two vectors of equal length; scalar result.
inline Var cosine(Tape& tape, const Var& u, const Var& v) {
    detail::require_rank("cosine", *u, 1);
    detail::require_same_shape("cosine", *u, *v);
    const std::size_t d = u->shape[0];
    auto c = cosine_rows(tape, reshape(tape, u, {1, d}), reshape(tape, v, {1, d}));
    return reshape(tape, c, {});
}

// Swap the first two axes: [a x b x rest...] -> [b x a x rest...].
inline Var swap01(Tape& tape, const Var& x) {
    if (x->rank() < 2) throw ShapeError("swap01: rank < 2 for shape " + shape_str(x->shape));
    const std::size_t A = x->shape[0], Bd = x->shape[1];
    const std::size_t inner = x->size() / (A * Bd == 0 ? 1 : A * Bd);
    Shape s = x->shape;
    std::swap(s[0], s[1]);
    auto out = detail::output_like(s, x->requires_grad);
    for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < Bd; ++j)
            std::copy_n(&x->value[(i * Bd + j) * inner], inner, &out->value[(j * A + i) * inner]);
    if (out->requires_grad) {
        tape.record("swap01", [x, out, A, Bd, inner] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t i = 0; i < A; ++i)
                for (std::size_t j = 0; j < Bd; ++j)
                    for (std::size_t c = 0; c < inner; ++c)
                        g[(i * Bd + j) * inner + c] += out->grad[(j * A + i) * inner + c];
        });
    }
    return out;
}

// Select entries along `axis`; indices may repeat.
inline Var index_select(Tape& tape, const Var& x, std::size_t axis, std::vector<std::size_t> idx) {
    const auto sp = detail::split_axis("index_select", x->shape, axis);
    for (auto i : idx) {
        if (i >= sp.len) {
            throw ShapeError("index_select: index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(axis) + " of " + shape_str(x->shape));
        }
    }
    Shape s = x->shape;
    s[axis] = idx.size();
    auto out = detail::output_like(s, x->requires_grad);
    const std::size_t L = idx.size();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < L; ++j)
            std::copy_n(&x->value[(o * sp.len + idx[j]) * sp.inner], sp.inner,
                        &out->value[(o * L + j) * sp.inner]);
    if (out->requires_grad) {
        tape.record("index_select", [x, out, sp, idx = std::move(idx)] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            const std::size_t L = idx.size();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < L; ++j)
                    for (std::size_t c = 0; c < sp.inner; ++c)
                        g[(o * sp.len + idx[j]) * sp.inner + c] += out->grad[(o * L + j) * sp.inner + c];
        });
    }
    return out;
}

// Gather flat (row-major) positions into a vector.
inline Var gather_flat(Tape& tape, const Var& x, std::vector<std::size_t> idx) {
    for (auto i : idx)
        if (i >= x->size())
            throw ShapeError("gather_flat: index " + std::to_string(i) + " out of range for " +
                             shape_str(x->shape));
    auto out = detail::output_like({idx.size()}, x->requires_grad);
    for (std::size_t j = 0; j < idx.size(); ++j) out->value[j] = x->value[idx[j]];
    if (out->requires_grad) {
        tape.record("gather_flat", [x, out, idx = std::move(idx)] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t j = 0; j < idx.size(); ++j) g[idx[j]] += out->grad[j];
        });
    }
    return out;
}

// x [n x C], picks x[r, idx[r]] -> [n]
inline Var pick_last(Tape& tape, const Var& x, std::span<const int> idx) {
    detail::require_rank("pick_last", *x, 2);
    const std::size_t n = x->shape[0], C = x->shape[1];
    if (idx.size() != n) {
        throw ShapeError("pick_last: " + std::to_string(idx.size()) + " indices for shape " +
                         shape_str(x->shape));
    }
    std::vector<std::size_t> flat(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= C)
            throw ShapeError("pick_last: class index " + std::to_string(idx[r]) + " out of range");
        flat[r] = r * C + static_cast<std::size_t>(idx[r]);
    }
    return gather_flat(tape, x, std::move(flat));
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Tape& tape, const Var& x) {
    auto out = detail::output_like({}, x->requires_grad);
    double s = 0.0;
    for (double v : x->value) s += v;
    out->value[0] = s;
    if (out->requires_grad) {
        tape.record("sum", [x, out] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (auto& gi : g) gi += out->grad[0];
        });
    }
    return out;
}

inline Var mean(Tape& tape, const Var& x) {
    if (x->size() == 0) throw ShapeError("mean: empty tensor");
    return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x->size()));
}

inline Var sum_axis(Tape& tape, const Var& x, std::size_t axis) {
    const auto sp = detail::split_axis("sum_axis", x->shape, axis);
    auto out = detail::output_like(detail::drop_axis(x->shape, axis), x->requires_grad);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t c = 0; c < sp.inner; ++c)
                out->value[o * sp.inner + c] += x->value[(o * sp.len + l) * sp.inner + c];
    if (out->requires_grad) {
        tape.record("sum_axis", [x, out, sp] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t l = 0; l < sp.len; ++l)
                    for (std::size_t c = 0; c < sp.inner; ++c)
                        g[(o * sp.len + l) * sp.inner + c] += out->grad[o * sp.inner + c];
        });
    }
    return out;
}

// Maximum along an axis; the gradient goes to the first maximal entry.
inline Var max_axis(Tape& tape, const Var& x, std::size_t axis) {
    const auto sp = detail::split_axis("max_axis", x->shape, axis);
    if (sp.len == 0) throw ShapeError("max_axis: empty axis in " + shape_str(x->shape));
    auto out = detail::output_like(detail::drop_axis(x->shape, axis), x->requires_grad);
    std::vector<std::size_t> arg(sp.outer * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t c = 0; c < sp.inner; ++c) {
            std::size_t best = 0;
            double bv = x->value[o * sp.len * sp.inner + c];
            for (std::size_t l = 1; l < sp.len; ++l) {
                const double v = x->value[(o * sp.len + l) * sp.inner + c];
                if (v > bv) {
                    bv = v;
                    best = l;
                }
            }
            out->value[o * sp.inner + c] = bv;
            arg[o * sp.inner + c] = (o * sp.len + best) * sp.inner + c;
        }
    if (out->requires_grad) {
        tape.record("max_axis", [x, out, arg = std::move(arg)] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += out->grad[j];
        });
    }
    return out;
}

inline Var max_last(Tape& tape, const Var& x) {
    if (x->rank() == 0) throw ShapeError("max_last: scalar input");
    return max_axis(tape, x, x->rank() - 1);
}

inline Var sum_last(Tape& tape, const Var& x) {
    if (x->rank() == 0) throw ShapeError("sum_last: scalar input");
    return sum_axis(tape, x, x->rank() - 1);
}

// ---------------------------------------------------------------------------
// Row-wise (last axis) normalizations

inline Var softmax_last(Tape& tape, const Var& x) {
    if (x->rank() == 0) throw ShapeError("softmax_last: scalar input");
    const std::size_t L = x->shape.back();
    if (L == 0) throw ShapeError("softmax_last: empty last axis");
    const std::size_t rows = x->size() / L;
    auto out = detail::output_like(x->shape, x->requires_grad);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x->value[r * L];
        double* yr = &out->value[r * L];
        const double mx = *std::max_element(xr, xr + L);
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < L; ++j) yr[j] /= z;
    }
    if (out->requires_grad) {
        tape.record("softmax_last", [x, out, rows, L] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = &out->value[r * L];
                const double* gr = &out->grad[r * L];
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < L; ++j) g[r * L + j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

inline Var log_softmax_last(Tape& tape, const Var& x) {
    if (x->rank() == 0) throw ShapeError("log_softmax_last: scalar input");
    const std::size_t L = x->shape.back();
    if (L == 0) throw ShapeError("log_softmax_last: empty last axis");
    const std::size_t rows = x->size() / L;
    auto out = detail::output_like(x->shape, x->requires_grad);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x->value[r * L];
        const double mx = *std::max_element(xr, xr + L);
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) z += std::exp(xr[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < L; ++j) out->value[r * L + j] = xr[j] - lse;
    }
    if (out->requires_grad) {
        tape.record("log_softmax_last", [x, out, rows, L] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = &out->value[r * L];
                const double* gr = &out->grad[r * L];
                double gs = 0.0;
                for (std::size_t j = 0; j < L; ++j) gs += gr[j];
                for (std::size_t j = 0; j < L; ++j) g[r * L + j] += gr[j] - std::exp(yr[j]) * gs;
            }
        });
    }
    return out;
}

// x / sum(|x|) along the last axis; an all-zero row maps to zeros.
inline Var l1_normalize_last(Tape& tape, const Var& x) {
    if (x->rank() == 0) throw ShapeError("l1_normalize_last: scalar input");
    const std::size_t L = x->shape.back();
    const std::size_t rows = L ? x->size() / L : 0;
    auto out = detail::output_like(x->shape, x->requires_grad);
    std::vector<double> norms(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < L; ++j) s += std::abs(x->value[r * L + j]);
        norms[r] = s;
        if (s > 0.0)
            for (std::size_t j = 0; j < L; ++j) out->value[r * L + j] = x->value[r * L + j] / s;
    }
    if (out->requires_grad) {
        tape.record("l1_normalize_last", [x, out, rows, L, norms = std::move(norms)] {
            if (!out->has_grad()) return;
            auto& g = x->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const double s = norms[r];
                if (s <= 0.0) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) dot += out->grad[r * L + j] * x->value[r * L + j];
                for (std::size_t j = 0; j < L; ++j) {
                    const double v = x->value[r * L + j];
                    const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                    g[r * L + j] += out->grad[r * L + j] / s - sgn * dot / (s * s);
                }
            }
        });
    }
    return out;
}

// sum_j p_j ln p_j along the last axis (the negated Shannon entropy), with
// 0 ln 0 = 0. Inputs must be non-negative.
inline Var neg_entropy_last(Tape& tape, const Var& p) {
    if (p->rank() == 0) throw ShapeError("neg_entropy_last: scalar input");
    const std::size_t L = p->shape.back();
    const std::size_t rows = L ? p->size() / L : 0;
    auto out = detail::output_like(detail::drop_axis(p->shape, p->rank() - 1), p->requires_grad);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            const double v = p->value[r * L + j];
            if (v < 0.0) throw std::domain_error("neg_entropy_last: negative probability");
            if (v > 0.0) s += v * std::log(v);
        }
        out->value[r] = s;
    }
    if (out->requires_grad) {
        tape.record("neg_entropy_last", [p, out, rows, L] {
            if (!out->has_grad()) return;
            auto& g = p->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < L; ++j) {
                    const double v = p->value[r * L + j];
                    if (v > 0.0) g[r * L + j] += out->grad[r] * (std::log(v) + 1.0);
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Helpers

inline double grad_norm(std::span<const Var> params) {
    double s = 0.0;
    for (const auto& p : params)
        for (double g : p->grad) s += g * g;
    return std::sqrt(s);
}

// Rescale gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_grad_norm(std::span<const Var> params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double k = max_norm / (norm + 1e-12);
        for (const auto& p : params)
            for (double& g : p->grad) g *= k;
    }
    return norm;
}

inline void zero_grads(std::span<const Var> params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace conspec::ad
