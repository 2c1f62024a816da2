#include "dsdg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dsdg/error.hpp"

namespace dsdg::ops {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
    if (x.value().rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMajor, 0, Eigen::OuterStride<>>;

// Row-major C = alpha * op(A) * op(B) + beta * C, beta in {0, 1}.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    const ConstMap A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    const ConstMap B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    MutMap C(c, m, n, Eigen::OuterStride<>(ldc));
    if (beta == 0.0) C.setZero();
    if (trans_a && trans_b)
        C.noalias() += alpha * (A.transpose() * B.transpose());
    else if (trans_a)
        C.noalias() += alpha * (A.transpose() * B);
    else if (trans_b)
        C.noalias() += alpha * (A * B.transpose());
    else
        C.noalias() += alpha * (A * B);
}

// Elementwise op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(const Var& x, F f, D dfdx) {
    Tensor out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(std::move(out), {x}, [dfdx](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        Tensor& g = in.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
    });
}

// Convolution geometry shared by conv2d and conv_transpose2d. "Image" is the
// side that gets unfolded, "grid" the side indexed by kernel placements.
struct ConvGeom {
    int channels, img_h, img_w;
    int kh, kw, stride, pad;
    int grid_h, grid_w;

    int col_rows() const { return channels * kh * kw; }
    int grid_size() const { return grid_h * grid_w; }
    // Keep an unfolded tile under ~16 MB.
    int tile() const { return std::max(1, std::min(grid_size(), (1 << 21) / std::max(1, col_rows()))); }
};

// cols[r][t] for grid positions [p0, p0 + count).
void im2col(const double* img, const ConvGeom& g, int p0, int count, double* cols) {
    for (int c = 0; c < g.channels; ++c) {
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * count;
                const double* plane = img + static_cast<std::size_t>(c) * g.img_h * g.img_w;
                for (int t = 0; t < count; ++t) {
                    const int p = p0 + t;
                    const int y = (p / g.grid_w) * g.stride - g.pad + i;
                    const int x = (p % g.grid_w) * g.stride - g.pad + j;
                    row[t] = (y >= 0 && y < g.img_h && x >= 0 && x < g.img_w) ? plane[y * g.img_w + x] : 0.0;
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, int p0, int count, double* img) {
    for (int c = 0; c < g.channels; ++c) {
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                const double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * count;
                double* plane = img + static_cast<std::size_t>(c) * g.img_h * g.img_w;
                for (int t = 0; t < count; ++t) {
                    const int p = p0 + t;
                    const int y = (p / g.grid_w) * g.stride - g.pad + i;
                    const int x = (p % g.grid_w) * g.stride - g.pad + j;
                    if (y >= 0 && y < g.img_h && x >= 0 && x < g.img_w) plane[y * g.img_w + x] += row[t];
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeom& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents)
            if (p->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& l = *self.parents[0];
        Node& r = *self.parents[1];
        if (l.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i];
        if (r.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) r.grad[i] -= self.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& l = *self.parents[0];
        Node& r = *self.parents[1];
        if (l.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i] * r.value[i];
        if (r.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) r.grad[i] += self.grad[i] * l.value[i];
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& l = *self.parents[0];
        Node& r = *self.parents[1];
        if (l.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i] / r.value[i];
        if (r.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                r.grad[i] -= self.grad[i] * self.value[i] / r.value[i];
    });
}

Var add_scalar(const Var& x, double c) {
    return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var scale(const Var& x, double c) {
    return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var exp(const Var& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
    return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sum(const Var& x) {
    return make_result(Tensor::scalar(x.value().sum()), {x}, [](Node& self) {
        Node& in = *self.parents[0];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += g;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    return make_result(Tensor::scalar(x.value().sum() / n), {x}, [n](Node& self) {
        Node& in = *self.parents[0];
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += g;
    });
}

namespace {
Var reduce_per_sample(const Var& x, bool average) {
    if (x.value().rank() < 1) throw ShapeError("per-sample reduction on rank-0 tensor");
    const int n = x.shape()[0];
    const std::size_t inner = x.value().size() / static_cast<std::size_t>(std::max(n, 1));
    const double denom = average ? static_cast<double>(inner) : 1.0;
    Tensor out({n, 1});
    for (int s = 0; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += x.value()[s * inner + i];
        out[s] = acc / denom;
    }
    return make_result(std::move(out), {x}, [n, inner, denom](Node& self) {
        Node& in = *self.parents[0];
        for (int s = 0; s < n; ++s) {
            const double g = self.grad[s] / denom;
            for (std::size_t i = 0; i < inner; ++i) in.grad[s * inner + i] += g;
        }
    });
}
}  // namespace

Var sum_per_sample(const Var& x) { return reduce_per_sample(x, false); }
Var mean_per_sample(const Var& x) { return reduce_per_sample(x, true); }

Var channel_mean(const Var& x) {
    require_rank(x, 4, "channel_mean");
    const int n = x.shape()[0], c = x.shape()[1];
    const std::size_t hw = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    Tensor out({n, c});
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += x.value()[nc * hw + i];
        out[nc] = acc / static_cast<double>(hw);
    }
    return make_result(std::move(out), {x}, [hw](Node& self) {
        Node& in = *self.parents[0];
        for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
            const double g = self.grad[nc] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) in.grad[nc * hw + i] += g;
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear weight");
    const int n = x.shape()[0], in_f = x.shape()[1], out_f = weight.shape()[0];
    if (weight.shape()[1] != in_f)
        throw ShapeError("linear: input width " + std::to_string(in_f) + " vs weight " + to_string(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{out_f}) throw ShapeError("linear: bias shape " + to_string(bias.shape()));

    Tensor out({n, out_f});
    if (has_bias)
        for (int s = 0; s < n; ++s)
            std::copy(bias.value().data(), bias.value().data() + out_f, out.data() + static_cast<std::size_t>(s) * out_f);
    gemm(false, true, n, out_f, in_f, 1.0, x.value().data(), in_f, weight.value().data(), in_f, has_bias ? 1.0 : 0.0,
         out.data(), out_f);

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(out), parents, [n, in_f, out_f, has_bias](Node& self) {
        Node& xin = *self.parents[0];
        Node& w = *self.parents[1];
        if (xin.requires_grad)
            gemm(false, false, n, in_f, out_f, 1.0, self.grad.data(), out_f, w.value.data(), in_f, 1.0, xin.grad.data(),
                 in_f);
        if (w.requires_grad)
            gemm(true, false, out_f, in_f, n, 1.0, self.grad.data(), out_f, xin.value.data(), in_f, 1.0, w.grad.data(),
                 in_f);
        if (has_bias && self.parents[2]->requires_grad) {
            Tensor& gb = self.parents[2]->grad;
            for (int s = 0; s < n; ++s)
                for (int o = 0; o < out_f; ++o) gb[o] += self.grad[static_cast<std::size_t>(s) * out_f + o];
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d weight");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int o = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[1] != c)
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));
    const bool has_bias = bias.defined();

    const ConvGeom g{c, h, w, kh, kw, stride, pad, oh, ow};
    const int rows = g.col_rows(), grid = g.grid_size(), tile = g.tile();
    const std::size_t in_sz = static_cast<std::size_t>(c) * h * w, out_sz = static_cast<std::size_t>(o) * grid;

    Tensor out({n, o, oh, ow});
    std::vector<double> cols;
    if (!is_pointwise(g)) cols.resize(static_cast<std::size_t>(rows) * tile);
    for (int s = 0; s < n; ++s) {
        const double* xs = x.value().data() + s * in_sz;
        double* ys = out.data() + s * out_sz;
        if (is_pointwise(g)) {
            gemm(false, false, o, grid, c, 1.0, weight.value().data(), c, xs, grid, 0.0, ys, grid);
        } else {
            for (int p0 = 0; p0 < grid; p0 += tile) {
                const int cnt = std::min(tile, grid - p0);
                im2col(xs, g, p0, cnt, cols.data());
                gemm(false, false, o, cnt, rows, 1.0, weight.value().data(), rows, cols.data(), cnt, 0.0, ys + p0, grid);
            }
        }
        if (has_bias)
            for (int oc = 0; oc < o; ++oc)
                for (int p = 0; p < grid; ++p) ys[static_cast<std::size_t>(oc) * grid + p] += bias.value()[oc];
    }

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(out), parents, [g, n, o, in_sz, out_sz, has_bias](Node& self) {
        Node& xin = *self.parents[0];
        Node& wt = *self.parents[1];
        const int rows = g.col_rows(), grid = g.grid_size(), tile = g.tile();
        const bool pw = is_pointwise(g);
        std::vector<double> cols, dcols;
        if (!pw) {
            cols.resize(static_cast<std::size_t>(rows) * tile);
            dcols.resize(static_cast<std::size_t>(rows) * tile);
        }
        for (int s = 0; s < n; ++s) {
            const double* xs = xin.value.data() + s * in_sz;
            const double* gy = self.grad.data() + s * out_sz;
            if (pw) {
                if (wt.requires_grad)
                    gemm(false, true, o, rows, grid, 1.0, gy, grid, xs, grid, 1.0, wt.grad.data(), rows);
                if (xin.requires_grad)
                    gemm(true, false, rows, grid, o, 1.0, wt.value.data(), rows, gy, grid, 1.0, xin.grad.data() + s * in_sz,
                         grid);
                continue;
            }
            for (int p0 = 0; p0 < grid; p0 += tile) {
                const int cnt = std::min(tile, grid - p0);
                if (wt.requires_grad) {
                    im2col(xs, g, p0, cnt, cols.data());
                    gemm(false, true, o, rows, cnt, 1.0, gy + p0, grid, cols.data(), cnt, 1.0, wt.grad.data(), rows);
                }
                if (xin.requires_grad) {
                    gemm(true, false, rows, cnt, o, 1.0, wt.value.data(), rows, gy + p0, grid, 0.0, dcols.data(), cnt);
                    col2im_add(dcols.data(), g, p0, cnt, xin.grad.data() + s * in_sz);
                }
            }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Tensor& gb = self.parents[2]->grad;
            for (int s = 0; s < n; ++s)
                for (int oc = 0; oc < o; ++oc) {
                    const double* gy = self.grad.data() + s * out_sz + static_cast<std::size_t>(oc) * grid;
                    double acc = 0.0;
                    for (int p = 0; p < grid; ++p) acc += gy[p];
                    gb[oc] += acc;
                }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require_rank(x, 4, "conv_transpose2d");
    require_rank(weight, 4, "conv_transpose2d weight");
    const int n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int co = weight.shape()[1], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[0] != ci)
        throw ShapeError("conv_transpose2d: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
    const int oh = (h - 1) * stride - 2 * pad + kh, ow = (w - 1) * stride - 2 * pad + kw;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
    const bool has_bias = bias.defined();

    // The output is the unfolded "image"; input positions form the grid.
    const ConvGeom g{co, oh, ow, kh, kw, stride, pad, h, w};
    const int rows = g.col_rows(), grid = g.grid_size(), tile = g.tile();
    const std::size_t in_sz = static_cast<std::size_t>(ci) * grid, out_sz = static_cast<std::size_t>(co) * oh * ow;

    Tensor out({n, co, oh, ow});
    std::vector<double> cols(static_cast<std::size_t>(rows) * tile);
    for (int s = 0; s < n; ++s) {
        const double* xs = x.value().data() + s * in_sz;
        double* ys = out.data() + s * out_sz;
        for (int p0 = 0; p0 < grid; p0 += tile) {
            const int cnt = std::min(tile, grid - p0);
            gemm(true, false, rows, cnt, ci, 1.0, weight.value().data(), rows, xs + p0, grid, 0.0, cols.data(), cnt);
            col2im_add(cols.data(), g, p0, cnt, ys);
        }
        if (has_bias)
            for (int oc = 0; oc < co; ++oc)
                for (int p = 0; p < oh * ow; ++p) ys[static_cast<std::size_t>(oc) * oh * ow + p] += bias.value()[oc];
    }

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(out), parents, [g, n, ci, co, in_sz, out_sz, has_bias](Node& self) {
        Node& xin = *self.parents[0];
        Node& wt = *self.parents[1];
        const int rows = g.col_rows(), grid = g.grid_size(), tile = g.tile();
        std::vector<double> cols(static_cast<std::size_t>(rows) * tile);
        for (int s = 0; s < n; ++s) {
            const double* xs = xin.value.data() + s * in_sz;
            const double* gy = self.grad.data() + s * out_sz;
            for (int p0 = 0; p0 < grid; p0 += tile) {
                const int cnt = std::min(tile, grid - p0);
                im2col(gy, g, p0, cnt, cols.data());
                if (xin.requires_grad)
                    gemm(false, false, ci, cnt, rows, 1.0, wt.value.data(), rows, cols.data(), cnt, 1.0,
                         xin.grad.data() + s * in_sz + p0, grid);
                if (wt.requires_grad)
                    gemm(false, true, ci, rows, cnt, 1.0, xs + p0, grid, cols.data(), cnt, 1.0, wt.grad.data(), rows);
            }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Tensor& gb = self.parents[2]->grad;
            const std::size_t plane = out_sz / co;
            for (int s = 0; s < n; ++s)
                for (int oc = 0; oc < co; ++oc) {
                    const double* gy = self.grad.data() + s * out_sz + oc * plane;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) acc += gy[p];
                    gb[oc] += acc;
                }
        }
    });
}

Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require_rank(x, 4, "depthwise_conv2d");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (weight.value().rank() != 4 || weight.shape()[0] != c || weight.shape()[1] != 1)
        throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) + " for input " + to_string(x.shape()));
    const int kh = weight.shape()[2], kw = weight.shape()[3];
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    const bool has_bias = bias.defined();

    Tensor out({n, c, oh, ow});
    const auto& xv = x.value();
    const auto& wv = weight.value();
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    double acc = has_bias ? bias.value()[ch] : 0.0;
                    for (int i = 0; i < kh; ++i) {
                        const int iy = y * stride - pad + i;
                        if (iy < 0 || iy >= h) continue;
                        for (int j = 0; j < kw; ++j) {
                            const int ix = xo * stride - pad + j;
                            if (ix < 0 || ix >= w) continue;
                            acc += wv[(ch * kh + i) * kw + j] * xv.at(s, ch, iy, ix);
                        }
                    }
                    out.at(s, ch, y, xo) = acc;
                }

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(out), parents, [=](Node& self) {
        Node& xin = *self.parents[0];
        Node& wt = *self.parents[1];
        const bool bias_grad = has_bias && self.parents[2]->requires_grad;
        for (int s = 0; s < n; ++s)
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        const double gy = self.grad.at(s, ch, y, xo);
                        if (gy == 0.0) continue;
                        if (bias_grad) self.parents[2]->grad[ch] += gy;
                        for (int i = 0; i < kh; ++i) {
                            const int iy = y * stride - pad + i;
                            if (iy < 0 || iy >= h) continue;
                            for (int j = 0; j < kw; ++j) {
                                const int ix = xo * stride - pad + j;
                                if (ix < 0 || ix >= w) continue;
                                const int wi = (ch * kh + i) * kw + j;
                                if (wt.requires_grad) wt.grad[wi] += gy * xin.value.at(s, ch, iy, ix);
                                if (xin.requires_grad) xin.grad.at(s, ch, iy, ix) += gy * wt.value[wi];
                            }
                        }
                    }
    });
}

Var kernel_sum(const Var& weight) {
    require_rank(weight, 4, "kernel_sum");
    const int o = weight.shape()[0], c = weight.shape()[1];
    const int taps = weight.shape()[2] * weight.shape()[3];
    Tensor out({o, c, 1, 1});
    for (int k = 0; k < o * c; ++k) {
        double acc = 0.0;
        for (int t = 0; t < taps; ++t) acc += weight.value()[static_cast<std::size_t>(k) * taps + t];
        out[k] = acc;
    }
    return make_result(std::move(out), {weight}, [taps](Node& self) {
        Node& in = *self.parents[0];
        for (std::size_t k = 0; k < self.grad.size(); ++k)
            for (int t = 0; t < taps; ++t) in.grad[k * taps + t] += self.grad[k];
    });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
    require_rank(x, 4, "max_pool2d");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int oh = (h + 2 * pad - kernel) / stride + 1, ow = (w + 2 * pad - kernel) / stride + 1;
    Tensor out({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto& xv = x.value();
    std::size_t k = 0;
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo, ++k) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = 0;
                    for (int i = 0; i < kernel; ++i) {
                        const int iy = y * stride - pad + i;
                        if (iy < 0 || iy >= h) continue;
                        for (int j = 0; j < kernel; ++j) {
                            const int ix = xo * stride - pad + j;
                            if (ix < 0 || ix >= w) continue;
                            const std::size_t idx = ((static_cast<std::size_t>(s) * c + ch) * h + iy) * w + ix;
                            if (xv[idx] > best) {
                                best = xv[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out[k] = best;
                    (*argmax)[k] = best_i;
                }
    return make_result(std::move(out), {x}, [argmax](Node& self) {
        Node& in = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[(*argmax)[i]] += self.grad[i];
    });
}

Var resize_nearest(const Var& x, int out_h, int out_w) {
    require_rank(x, 4, "resize_nearest");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (out_h == h && out_w == w) return x;
    auto src = std::make_shared<std::vector<std::size_t>>();
    Tensor out({n, c, out_h, out_w});
    src->reserve(out.size());
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < out_h; ++y)
                for (int xo = 0; xo < out_w; ++xo) {
                    const int sy = static_cast<int>(static_cast<long long>(y) * h / out_h);
                    const int sx = static_cast<int>(static_cast<long long>(xo) * w / out_w);
                    src->push_back(((static_cast<std::size_t>(s) * c + ch) * h + sy) * w + sx);
                }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[(*src)[i]];
    return make_result(std::move(out), {x}, [src](Node& self) {
        Node& in = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[(*src)[i]] += self.grad[i];
    });
}

Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat of nothing");
    Shape shape = xs[0].shape();
    if (shape.size() < 2) throw ShapeError("concat needs rank >= 2");
    const int n = shape[0];
    const std::size_t inner = numel(Shape(shape.begin() + 2, shape.end()));
    int total = 0;
    for (const auto& x : xs) {
        Shape s = x.shape();
        if (s.size() != shape.size() || s[0] != n || numel(Shape(s.begin() + 2, s.end())) != inner)
            throw ShapeError("concat: incompatible " + to_string(s) + " vs " + to_string(shape));
        total += s[1];
    }
    shape[1] = total;
    Tensor out(shape);
    std::vector<int> widths;
    for (int s = 0, off = 0; s < n; ++s) {
        for (const auto& x : xs) {
            const std::size_t chunk = static_cast<std::size_t>(x.shape()[1]) * inner;
            std::copy_n(x.value().data() + s * chunk, chunk, out.data() + off);
            off += static_cast<int>(chunk);
        }
    }
    for (const auto& x : xs) widths.push_back(x.shape()[1]);
    return make_result(std::move(out), xs, [n, inner, widths](Node& self) {
        std::size_t off = 0;
        for (int s = 0; s < n; ++s)
            for (std::size_t k = 0; k < widths.size(); ++k) {
                const std::size_t chunk = static_cast<std::size_t>(widths[k]) * inner;
                Node& p = *self.parents[k];
                if (p.requires_grad)
                    for (std::size_t i = 0; i < chunk; ++i) p.grad[s * chunk + i] += self.grad[off + i];
                off += chunk;
            }
    });
}

Var slice(const Var& x, int begin, int end) {
    Shape shape = x.shape();
    if (shape.size() < 2 || begin < 0 || end > shape[1] || begin >= end)
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + to_string(shape));
    const int n = shape[0], width = shape[1];
    const std::size_t inner = numel(Shape(shape.begin() + 2, shape.end()));
    shape[1] = end - begin;
    Tensor out(shape);
    const std::size_t chunk = static_cast<std::size_t>(end - begin) * inner;
    for (int s = 0; s < n; ++s)
        std::copy_n(x.value().data() + (static_cast<std::size_t>(s) * width + begin) * inner, chunk,
                    out.data() + s * chunk);
    return make_result(std::move(out), {x}, [n, width, begin, inner, chunk](Node& self) {
        Node& in = *self.parents[0];
        for (int s = 0; s < n; ++s) {
            double* dst = in.grad.data() + (static_cast<std::size_t>(s) * width + begin) * inner;
            const double* g = self.grad.data() + s * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& in = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "cross_entropy");
    const int n = logits.shape()[0], k = logits.shape()[1];
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    auto probs = std::make_shared<Tensor>(logits.shape());
    double loss = 0.0;
    for (int s = 0; s < n; ++s) {
        if (labels[s] < 0 || labels[s] >= k)
            throw LabelError("label " + std::to_string(labels[s]) + " outside [0, " + std::to_string(k) + ")");
        const double* row = logits.value().data() + static_cast<std::size_t>(s) * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(s) * k + j] = std::exp(row[j] - mx) / z;
        loss += -(row[labels[s]] - mx - std::log(z));
    }
    return make_result(Tensor::scalar(loss / n), {logits}, [probs, labels, n, k](Node& self) {
        Node& in = *self.parents[0];
        const double g = self.grad[0] / n;
        for (int s = 0; s < n; ++s)
            for (int j = 0; j < k; ++j) {
                const std::size_t i = static_cast<std::size_t>(s) * k + j;
                in.grad[i] += g * ((*probs)[i] - (j == labels[s] ? 1.0 : 0.0));
            }
    });
}

}  // namespace dsdg::ops
