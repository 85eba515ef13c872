#include "deft/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace deft {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Convolution geometry used everywhere: 4x4 kernel, stride 2, padding 1.
// An even input extent H maps to H/2.
constexpr int kK = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;

// The gemms below carry light cache blocking. Blocking only regroups the
// loop nest; every output element still accumulates its contributions in
// ascending-k order, so results are independent of the block sizes.

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    // c[m,n] += a[m,k] * b[k,n]
    constexpr int kBlock = 128;
    for (int p0 = 0; p0 < k; p0 += kBlock) {
        const int p1 = std::min(k, p0 + kBlock);
        for (int i = 0; i < m; ++i) {
            const T* arow = a + static_cast<std::size_t>(i) * k;
            T* crow = c + static_cast<std::size_t>(i) * n;
            for (int p = p0; p < p1; ++p) {
                const T av = arow[p];
                const T* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    // c[m,n] += a[k,m]^T * b[k,n]
    constexpr int kBlock = 16;
    for (int p0 = 0; p0 < k; p0 += kBlock) {
        const int p1 = std::min(k, p0 + kBlock);
        for (int i = 0; i < m; ++i) {
            T* crow = c + static_cast<std::size_t>(i) * n;
            for (int p = p0; p < p1; ++p) {
                const T av = a[static_cast<std::size_t>(p) * m + i];
                const T* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void transpose_into(const T* src, int rows, int cols, T* dst) {
    // dst[cols, rows] = src[rows, cols], 32x32 tiles
    constexpr int kTile = 32;
    for (int r0 = 0; r0 < rows; r0 += kTile)
        for (int c0 = 0; c0 < cols; c0 += kTile) {
            const int r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
            for (int r = r0; r < r1; ++r)
                for (int cc = c0; cc < c1; ++cc)
                    dst[static_cast<std::size_t>(cc) * rows + r] =
                        src[static_cast<std::size_t>(r) * cols + cc];
        }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
    // c[m,n] += a[m,k] * b[n,k]^T; runs as gemm_nn against a transposed copy
    // of b, which keeps the inner loop a plain vectorizable accumulation.
    thread_local std::vector<T> bt;
    bt.resize(static_cast<std::size_t>(k) * n);
    transpose_into(b, n, k, bt.data());
    gemm_nn(a, bt.data(), c, m, k, n);
}

// x [C,H,W] -> col [C*16, OH*OW]
template <typename T>
void im2col(const T* x, int c, int h, int w, T* col) {
    const int oh = h / kStride, ow = w / kStride;
    const int patch = oh * ow;
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = x + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < kK; ++ky) {
            for (int kx = 0; kx < kK; ++kx) {
                T* dst = col + (static_cast<std::size_t>(ch) * kK * kK + ky * kK + kx) * patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * kStride - kPad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * kStride - kPad + kx;
                        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// col [C*16, OH*OW] scatter-added back into x [C,H,W]
template <typename T>
void col2im_add(const T* col, int c, int h, int w, T* x) {
    const int oh = h / kStride, ow = w / kStride;
    const int patch = oh * ow;
    for (int ch = 0; ch < c; ++ch) {
        T* plane = x + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < kK; ++ky) {
            for (int kx = 0; kx < kK; ++kx) {
                const T* src = col + (static_cast<std::size_t>(ch) * kK * kK + ky * kK + kx) * patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * kStride - kPad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * kStride - kPad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
T stable_sigmoid(T l) {
    if (l >= T(0)) {
        const T e = std::exp(-l);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(l);
    return e / (T(1) + e);
}

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::push(Tensor<T> value, bool needs_grad, BackwardFn back) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::ensure_grad(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) {
        n.grad = Tensor<T>(n.value.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) throw std::logic_error("gradient not computed for node");
    return n.grad;
}

template <typename T>
bool Tape<T>::has_grad(Id id) const {
    return nodes_[static_cast<std::size_t>(id)].grad_alloc;
}

template <typename T>
void Tape<T>::accumulate(Id id, const Tensor<T>& g) {
    if (!needs(id)) return;
    Tensor<T>& dst = ensure_grad(id);
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
void Tape<T>::accumulate_scaled(Id id, const Tensor<T>& g, T scale) {
    if (!needs(id)) return;
    Tensor<T>& dst = ensure_grad(id);
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * g.data[i];
}

template <typename T>
typename Tape<T>::Id Tape<T>::constant(Tensor<T> v) {
    return push(std::move(v), false, nullptr);
}

template <typename T>
typename Tape<T>::Id Tape<T>::parameter(Parameter<T>& p) {
    Id id = push(p.value, true, nullptr);
    nodes_.back().param = &p;
    return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
    check_same_shape(val(a), val(b), "add");
    Tensor<T> out = val(a);
    const Tensor<T>& bv = val(b);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
    check_same_shape(val(a), val(b), "sub");
    Tensor<T> out = val(a);
    const Tensor<T>& bv = val(b);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        t.accumulate(a, g);
        t.accumulate_scaled(b, g, T(-1));
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& bv = val(b);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        if (t.needs(a)) {
            Tensor<T>& da = t.ensure_grad(a);
            const Tensor<T>& bv2 = t.val(b);
            for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += g.data[i] * bv2.data[i];
        }
        if (t.needs(b)) {
            Tensor<T>& db = t.ensure_grad(b);
            const Tensor<T>& av2 = t.val(a);
            for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += g.data[i] * av2.data[i];
        }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_scalar(Id a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v += c;
    return push(std::move(out), needs(a), [a](Tape& t, Id self) { t.accumulate(a, t.grad(self)); });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul_scalar(Id a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v *= c;
    return push(std::move(out), needs(a), [a, c](Tape& t, Id self) { t.accumulate_scaled(a, t.grad(self), c); });
}

template <typename T>
typename Tape<T>::Id Tape<T>::abs(Id a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::fabs(v);
    // sign subgradient, 0 at the kink
    return push(std::move(out), needs(a), [a](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x = t.val(a);
        Tensor<T>& da = t.ensure_grad(a);
        for (std::size_t i = 0; i < da.data.size(); ++i) {
            const T s = x.data[i] > T(0) ? T(1) : (x.data[i] < T(0) ? T(-1) : T(0));
            da.data[i] += g.data[i] * s;
        }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::relu(Id a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), needs(a), [a](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x = t.val(a);
        Tensor<T>& da = t.ensure_grad(a);
        for (std::size_t i = 0; i < da.data.size(); ++i)
            if (x.data[i] > T(0)) da.data[i] += g.data[i];
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::reshape(Id a, Shape s) {
    if (shape_numel(s) != val(a).size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(val(a).shape) +
                                    " -> " + shape_str(s));
    Tensor<T> out(std::move(s), val(a).data);
    Shape orig = val(a).shape;
    return push(std::move(out), needs(a), [a, orig](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += g.data[i];
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::col_slice(Id a, int c0, int c1) {
    const Tensor<T>& x = val(a);
    if (x.rank() != 2) throw std::invalid_argument("col_slice expects rank-2 input");
    const int n = x.extent(0), d = x.extent(1);
    if (c0 < 0 || c1 > d || c0 >= c1) throw std::invalid_argument("col_slice: bad column range");
    const int dd = c1 - c0;
    Tensor<T> out({n, dd});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dd; ++j)
            out.data[static_cast<std::size_t>(i) * dd + j] = x.data[static_cast<std::size_t>(i) * d + c0 + j];
    return push(std::move(out), needs(a), [a, c0, n, d, dd](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dd; ++j)
                da.data[static_cast<std::size_t>(i) * d + c0 + j] += g.data[static_cast<std::size_t>(i) * dd + j];
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::col_concat(const std::vector<Id>& parts) {
    if (parts.empty()) throw std::invalid_argument("col_concat: no inputs");
    const int n = val(parts[0]).extent(0);
    int total = 0;
    bool any_grad = false;
    std::vector<int> widths;
    for (Id p : parts) {
        const Tensor<T>& x = val(p);
        if (x.rank() != 2 || x.extent(0) != n) throw std::invalid_argument("col_concat: incompatible parts");
        widths.push_back(x.extent(1));
        total += x.extent(1);
        any_grad = any_grad || needs(p);
    }
    Tensor<T> out({n, total});
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor<T>& x = val(parts[k]);
        const int w = widths[k];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                out.data[static_cast<std::size_t>(i) * total + off + j] = x.data[static_cast<std::size_t>(i) * w + j];
        off += w;
    }
    std::vector<Id> ps = parts;
    return push(std::move(out), any_grad, [ps, widths, n, total](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        int off2 = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
            const int w = widths[k];
            if (t.needs(ps[k])) {
                Tensor<T>& da = t.ensure_grad(ps[k]);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j)
                        da.data[static_cast<std::size_t>(i) * w + j] +=
                            g.data[static_cast<std::size_t>(i) * total + off2 + j];
            }
            off2 += w;
        }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                                    shape_str(bv.shape));
    const int m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor<T> out({m, n});
    gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        if (t.needs(a))
            gemm_nt(g.data.data(), t.val(b).data.data(), t.ensure_grad(a).data.data(), m, n, k);
        if (t.needs(b))
            gemm_tn(t.val(a).data.data(), g.data.data(), t.ensure_grad(b).data.data(), k, m, n);
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_row_bias(Id a, Id bias) {
    const Tensor<T>& x = val(a);
    const Tensor<T>& bv = val(bias);
    if (x.rank() != 2 || bv.rank() != 1 || bv.extent(0) != x.extent(1))
        throw std::invalid_argument("add_row_bias: incompatible shapes");
    const int n = x.extent(0), d = x.extent(1);
    Tensor<T> out = x;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(i) * d + j] += bv.data[j];
    return push(std::move(out), needs(a) || needs(bias), [a, bias, n, d](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        t.accumulate(a, g);
        if (t.needs(bias)) {
            Tensor<T>& db = t.ensure_grad(bias);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) db.data[j] += g.data[static_cast<std::size_t>(i) * d + j];
        }
    });
}

// Batched im2col: per-sample patch matrices written side by side so the
// convolution reduces to one gemm with an inner extent of n*patch.
template <typename T>
void im2col_batch(const T* x, int n, int c, int h, int w, T* col) {
    const int oh = h / kStride, ow = w / kStride;
    const int patch = oh * ow;
    const std::size_t stride = static_cast<std::size_t>(n) * patch;
    std::vector<T> tmp(static_cast<std::size_t>(c) * kK * kK * patch);
    for (int s = 0; s < n; ++s) {
        im2col(x + static_cast<std::size_t>(s) * c * h * w, c, h, w, tmp.data());
        for (int row = 0; row < c * kK * kK; ++row)
            std::copy_n(tmp.data() + static_cast<std::size_t>(row) * patch, patch,
                        col + static_cast<std::size_t>(row) * stride + static_cast<std::size_t>(s) * patch);
    }
}

// Gathers [n, c, patch] into [c, n*patch] (and back), the layout the batched
// gemms want on their non-kernel side.
template <typename T>
void to_channel_major(const T* x, int n, int c, int patch, T* out) {
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            std::copy_n(x + (static_cast<std::size_t>(s) * c + ch) * patch, patch,
                        out + (static_cast<std::size_t>(ch) * n + s) * patch);
}

template <typename T>
void from_channel_major(const T* x, int n, int c, int patch, T* out) {
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            std::copy_n(x + (static_cast<std::size_t>(ch) * n + s) * patch, patch,
                        out + (static_cast<std::size_t>(s) * c + ch) * patch);
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d(Id x, Id w, Id b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    const int n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), wd = xv.extent(3);
    const int f = wv.extent(0);
    if (wv.extent(1) != c || wv.extent(2) != kK || wv.extent(3) != kK || bv.extent(0) != f)
        throw std::invalid_argument("conv2d: weight/bias shape mismatch");
    if (h % 2 != 0 || wd % 2 != 0 || h < 2 || wd < 2)
        throw std::invalid_argument("conv2d: input extent must be even and >= 2");
    const int oh = h / 2, ow = wd / 2, patch = oh * ow, ck = c * kK * kK;
    const std::size_t cols = static_cast<std::size_t>(n) * patch;

    Tensor<T> out({n, f, oh, ow});
    {
        std::vector<T> col(static_cast<std::size_t>(ck) * cols);
        im2col_batch(xv.data.data(), n, c, h, wd, col.data());
        std::vector<T> y(static_cast<std::size_t>(f) * cols);
        gemm_nn(wv.data.data(), col.data(), y.data(), f, ck, static_cast<int>(cols));
        from_channel_major(y.data(), n, f, patch, out.data.data());
        for (int s = 0; s < n; ++s)
            for (int fc = 0; fc < f; ++fc) {
                const T bias = bv.data[fc];
                T* row = out.data.data() + (static_cast<std::size_t>(s) * f + fc) * patch;
                for (int p = 0; p < patch; ++p) row[p] += bias;
            }
    }
    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, n, c, h, wd, f, patch, ck, cols](Tape& t, Id self) {
                    const Tensor<T>& g = t.grad(self);
                    const Tensor<T>& xv2 = t.val(x);
                    const Tensor<T>& wv2 = t.val(w);
                    const bool need_x = t.needs(x), need_w = t.needs(w), need_b = t.needs(b);
                    std::vector<T> gy(static_cast<std::size_t>(f) * cols);
                    to_channel_major(g.data.data(), n, f, patch, gy.data());
                    if (need_w || need_x) {
                        std::vector<T> col(static_cast<std::size_t>(ck) * cols);
                        if (need_w) {
                            im2col_batch(xv2.data.data(), n, c, h, wd, col.data());
                            gemm_nt(gy.data(), col.data(), t.ensure_grad(w).data.data(), f,
                                    static_cast<int>(cols), ck);
                        }
                        if (need_x) {
                            std::fill(col.begin(), col.end(), T(0));
                            gemm_tn(wv2.data.data(), gy.data(), col.data(), ck, f,
                                    static_cast<int>(cols));
                            T* dx = t.ensure_grad(x).data.data();
                            std::vector<T> dcol(static_cast<std::size_t>(ck) * patch);
                            for (int s = 0; s < n; ++s) {
                                for (int row = 0; row < ck; ++row)
                                    std::copy_n(col.data() + static_cast<std::size_t>(row) * cols +
                                                    static_cast<std::size_t>(s) * patch,
                                                patch,
                                                dcol.data() + static_cast<std::size_t>(row) * patch);
                                col2im_add(dcol.data(), c, h, wd,
                                           dx + static_cast<std::size_t>(s) * c * h * wd);
                            }
                        }
                    }
                    if (need_b) {
                        T* db = t.ensure_grad(b).data.data();
                        for (int fc = 0; fc < f; ++fc) {
                            const T* row = gy.data() + static_cast<std::size_t>(fc) * cols;
                            T acc = T(0);
                            for (std::size_t p = 0; p < cols; ++p) acc += row[p];
                            db[fc] += acc;
                        }
                    }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d_transpose(Id x, Id w, Id b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1)
        throw std::invalid_argument("conv2d_transpose: bad ranks");
    const int n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), wd = xv.extent(3);
    const int f = wv.extent(1);
    if (wv.extent(0) != c || wv.extent(2) != kK || wv.extent(3) != kK || bv.extent(0) != f)
        throw std::invalid_argument("conv2d_transpose: weight/bias shape mismatch");
    const int oh = h * 2, ow = wd * 2, patch = h * wd, fk = f * kK * kK;
    const std::size_t cols = static_cast<std::size_t>(n) * patch;

    // adjoint of conv2d: scatter W^T x through col2im onto the upsampled grid
    Tensor<T> out({n, f, oh, ow});
    {
        std::vector<T> xin(static_cast<std::size_t>(c) * cols);
        to_channel_major(xv.data.data(), n, c, patch, xin.data());
        std::vector<T> dcol_all(static_cast<std::size_t>(fk) * cols, T(0));
        gemm_tn(wv.data.data(), xin.data(), dcol_all.data(), fk, c, static_cast<int>(cols));
        std::vector<T> dcol(static_cast<std::size_t>(fk) * patch);
        for (int s = 0; s < n; ++s) {
            for (int row = 0; row < fk; ++row)
                std::copy_n(dcol_all.data() + static_cast<std::size_t>(row) * cols +
                                static_cast<std::size_t>(s) * patch,
                            patch, dcol.data() + static_cast<std::size_t>(row) * patch);
            T* y = out.data.data() + static_cast<std::size_t>(s) * f * oh * ow;
            col2im_add(dcol.data(), f, oh, ow, y);
            for (int fc = 0; fc < f; ++fc) {
                const T bias = bv.data[fc];
                T* plane = y + static_cast<std::size_t>(fc) * oh * ow;
                for (int p = 0; p < oh * ow; ++p) plane[p] += bias;
            }
        }
    }
    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, n, c, f, oh, ow, patch, fk, cols](Tape& t, Id self) {
                    const Tensor<T>& g = t.grad(self);
                    const Tensor<T>& xv2 = t.val(x);
                    const Tensor<T>& wv2 = t.val(w);
                    const bool need_x = t.needs(x), need_w = t.needs(w), need_b = t.needs(b);
                    if (need_x || need_w) {
                        std::vector<T> col(static_cast<std::size_t>(fk) * cols);
                        im2col_batch(g.data.data(), n, f, oh, ow, col.data());
                        if (need_x) {
                            std::vector<T> dxm(static_cast<std::size_t>(c) * cols, T(0));
                            gemm_nn(wv2.data.data(), col.data(), dxm.data(), c, fk,
                                    static_cast<int>(cols));
                            std::vector<T> dxs(static_cast<std::size_t>(n) * c * patch);
                            from_channel_major(dxm.data(), n, c, patch, dxs.data());
                            Tensor<T>& dx = t.ensure_grad(x);
                            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dxs[i];
                        }
                        if (need_w) {
                            std::vector<T> xin(static_cast<std::size_t>(c) * cols);
                            to_channel_major(xv2.data.data(), n, c, patch, xin.data());
                            gemm_nt(xin.data(), col.data(), t.ensure_grad(w).data.data(), c,
                                    static_cast<int>(cols), fk);
                        }
                    }
                    if (need_b) {
                        T* db = t.ensure_grad(b).data.data();
                        for (int s = 0; s < n; ++s)
                            for (int fc = 0; fc < f; ++fc) {
                                const T* plane = g.data.data() +
                                                 (static_cast<std::size_t>(s) * f + fc) * oh * ow;
                                T acc = T(0);
                                for (int p = 0; p < oh * ow; ++p) acc += plane[p];
                                db[fc] += acc;
                            }
                    }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::row_sum(Id a) {
    const Tensor<T>& x = val(a);
    if (x.rank() != 2) throw std::invalid_argument("row_sum expects rank-2 input");
    const int n = x.extent(0), d = x.extent(1);
    Tensor<T> out({n});
    for (int i = 0; i < n; ++i) {
        T acc = T(0);
        for (int j = 0; j < d; ++j) acc += x.data[static_cast<std::size_t>(i) * d + j];
        out.data[i] = acc;
    }
    return push(std::move(out), needs(a), [a, n, d](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) da.data[static_cast<std::size_t>(i) * d + j] += g.data[i];
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum_all(Id a) {
    const Tensor<T>& x = val(a);
    T acc = T(0);
    for (T v : x.data) acc += v;
    return push(Tensor<T>::scalar(acc), needs(a), [a](Tape& t, Id self) {
        t.accumulate_scaled(a, Tensor<T>::full(t.val(a).shape, T(1)), t.grad(self).data[0]);
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mean_all(Id a) {
    const Tensor<T>& x = val(a);
    if (x.size() == 0) throw std::invalid_argument("mean_all on empty tensor");
    T acc = T(0);
    for (T v : x.data) acc += v;
    const T inv = T(1) / static_cast<T>(x.size());
    return push(Tensor<T>::scalar(acc * inv), needs(a), [a, inv](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const T g = t.grad(self).data[0] * inv;
        Tensor<T>& da = t.ensure_grad(a);
        for (auto& v : da.data) v += g;
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum_axis2(Id a) {
    const Tensor<T>& x = val(a);
    if (x.rank() != 3) throw std::invalid_argument("sum_axis2 expects rank-3 input");
    const int m = x.extent(0), k = x.extent(1), d = x.extent(2);
    Tensor<T> out({m, k});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
            const T* src = x.data.data() + (static_cast<std::size_t>(i) * k + j) * d;
            T acc = T(0);
            for (int l = 0; l < d; ++l) acc += src[l];
            out.data[static_cast<std::size_t>(i) * k + j] = acc;
        }
    return push(std::move(out), needs(a), [a, m, k, d](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
                const T gv = g.data[static_cast<std::size_t>(i) * k + j];
                T* dst = da.data.data() + (static_cast<std::size_t>(i) * k + j) * d;
                for (int l = 0; l < d; ++l) dst[l] += gv;
            }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::logsumexp_axis1(Id a) {
    const Tensor<T>& x = val(a);
    if (x.rank() != 3) throw std::invalid_argument("logsumexp_axis1 expects rank-3 input");
    const int m = x.extent(0), k = x.extent(1), d = x.extent(2);
    Tensor<T> out({m, d});
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < d; ++l) {
            T mx = x.data[(static_cast<std::size_t>(i) * k) * d + l];
            for (int j = 1; j < k; ++j)
                mx = std::max(mx, x.data[(static_cast<std::size_t>(i) * k + j) * d + l]);
            T acc = T(0);
            for (int j = 0; j < k; ++j)
                acc += std::exp(x.data[(static_cast<std::size_t>(i) * k + j) * d + l] - mx);
            out.data[static_cast<std::size_t>(i) * d + l] = mx + std::log(acc);
        }
    return push(std::move(out), needs(a), [a, m, k, d](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x2 = t.val(a);
        const Tensor<T>& o = t.val(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j)
                for (int l = 0; l < d; ++l) {
                    const std::size_t xi = (static_cast<std::size_t>(i) * k + j) * d + l;
                    const std::size_t oi = static_cast<std::size_t>(i) * d + l;
                    da.data[xi] += g.data[oi] * std::exp(x2.data[xi] - o.data[oi]);
                }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::logsumexp_last(Id a) {
    const Tensor<T>& x = val(a);
    if (x.rank() != 2) throw std::invalid_argument("logsumexp_last expects rank-2 input");
    const int m = x.extent(0), k = x.extent(1);
    Tensor<T> out({m});
    for (int i = 0; i < m; ++i) {
        const T* row = x.data.data() + static_cast<std::size_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T acc = T(0);
        for (int j = 0; j < k; ++j) acc += std::exp(row[j] - mx);
        out.data[i] = mx + std::log(acc);
    }
    return push(std::move(out), needs(a), [a, m, k](Tape& t, Id self) {
        if (!t.needs(a)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x2 = t.val(a);
        const Tensor<T>& o = t.val(self);
        Tensor<T>& da = t.ensure_grad(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
                const std::size_t xi = static_cast<std::size_t>(i) * k + j;
                da.data[xi] += g.data[i] * std::exp(x2.data[xi] - o.data[i]);
            }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::reparameterize(Id mean, Id logvar, Tensor<T> noise) {
    check_same_shape(val(mean), val(logvar), "reparameterize");
    check_same_shape(val(mean), noise, "reparameterize noise");
    const Tensor<T>& mu = val(mean);
    const Tensor<T>& lv = val(logvar);
    Tensor<T> out(mu.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = mu.data[i] + std::exp(T(0.5) * lv.data[i]) * noise.data[i];
    auto nz = std::make_shared<Tensor<T>>(std::move(noise));
    return push(std::move(out), needs(mean) || needs(logvar), [mean, logvar, nz](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        t.accumulate(mean, g);
        if (t.needs(logvar)) {
            const Tensor<T>& lv2 = t.val(logvar);
            Tensor<T>& dlv = t.ensure_grad(logvar);
            for (std::size_t i = 0; i < dlv.data.size(); ++i)
                dlv.data[i] += g.data[i] * T(0.5) * std::exp(T(0.5) * lv2.data[i]) * nz->data[i];
        }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::kl_unit_gaussian_terms(Id mean, Id logvar) {
    check_same_shape(val(mean), val(logvar), "kl_unit_gaussian_terms");
    const Tensor<T>& mu = val(mean);
    const Tensor<T>& lv = val(logvar);
    Tensor<T> out(mu.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = T(0.5) * (mu.data[i] * mu.data[i] + std::exp(lv.data[i]) - T(1) - lv.data[i]);
    return push(std::move(out), needs(mean) || needs(logvar), [mean, logvar](Tape& t, Id self) {
        const Tensor<T>& g = t.grad(self);
        if (t.needs(mean)) {
            const Tensor<T>& mu2 = t.val(mean);
            Tensor<T>& dm = t.ensure_grad(mean);
            for (std::size_t i = 0; i < dm.data.size(); ++i) dm.data[i] += g.data[i] * mu2.data[i];
        }
        if (t.needs(logvar)) {
            const Tensor<T>& lv2 = t.val(logvar);
            Tensor<T>& dl = t.ensure_grad(logvar);
            for (std::size_t i = 0; i < dl.data.size(); ++i)
                dl.data[i] += g.data[i] * T(0.5) * (std::exp(lv2.data[i]) - T(1));
        }
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::bernoulli_nll(Id logits, Tensor<T> targets) {
    check_same_shape(val(logits), targets, "bernoulli_nll");
    for (T v : targets.data)
        if (!(v >= T(0) && v <= T(1))) throw std::invalid_argument("bernoulli_nll: target outside [0,1]");
    const Tensor<T>& l = val(logits);
    Tensor<T> out(l.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T x = l.data[i];
        const T t = targets.data[i];
        out.data[i] = std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::fabs(x)));
    }
    auto tg = std::make_shared<Tensor<T>>(std::move(targets));
    return push(std::move(out), needs(logits), [logits, tg](Tape& t, Id self) {
        if (!t.needs(logits)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& l2 = t.val(logits);
        Tensor<T>& dl = t.ensure_grad(logits);
        for (std::size_t i = 0; i < dl.data.size(); ++i)
            dl.data[i] += g.data[i] * (stable_sigmoid(l2.data[i]) - tg->data[i]);
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::std_normal_log_density(Id z) {
    const Tensor<T>& x = val(z);
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = T(-0.5) * (static_cast<T>(kLog2Pi) + x.data[i] * x.data[i]);
    return push(std::move(out), needs(z), [z](Tape& t, Id self) {
        if (!t.needs(z)) return;
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x2 = t.val(z);
        Tensor<T>& dz = t.ensure_grad(z);
        for (std::size_t i = 0; i < dz.data.size(); ++i) dz.data[i] -= g.data[i] * x2.data[i];
    });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gaussian_log_density_diag(Id z, Id mean, Id logvar) {
    check_same_shape(val(z), val(mean), "gaussian_log_density_diag");
    check_same_shape(val(z), val(logvar), "gaussian_log_density_diag");
    const Tensor<T>& zv = val(z);
    const Tensor<T>& mu = val(mean);
    const Tensor<T>& lv = val(logvar);
    Tensor<T> out(zv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T diff = zv.data[i] - mu.data[i];
        out.data[i] =
            T(-0.5) * (static_cast<T>(kLog2Pi) + lv.data[i] + diff * diff * std::exp(-lv.data[i]));
    }
    return push(std::move(out), needs(z) || needs(mean) || needs(logvar),
                [z, mean, logvar](Tape& t, Id self) {
                    const Tensor<T>& g = t.grad(self);
                    const Tensor<T>& zv2 = t.val(z);
                    const Tensor<T>& mu2 = t.val(mean);
                    const Tensor<T>& lv2 = t.val(logvar);
                    const bool nz = t.needs(z), nm = t.needs(mean), nl = t.needs(logvar);
                    Tensor<T>* dz = nz ? &t.ensure_grad(z) : nullptr;
                    Tensor<T>* dm = nm ? &t.ensure_grad(mean) : nullptr;
                    Tensor<T>* dl = nl ? &t.ensure_grad(logvar) : nullptr;
                    for (std::size_t i = 0; i < g.data.size(); ++i) {
                        const T diff = zv2.data[i] - mu2.data[i];
                        const T e = std::exp(-lv2.data[i]);
                        const T w = g.data[i];
                        if (nz) dz->data[i] -= w * diff * e;
                        if (nm) dm->data[i] += w * diff * e;
                        if (nl) dl->data[i] += w * T(0.5) * (diff * diff * e - T(1));
                    }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gaussian_log_density_pairs(Id z, Id mean, Id logvar) {
    check_same_shape(val(mean), val(logvar), "gaussian_log_density_pairs");
    const Tensor<T>& zv = val(z);
    const Tensor<T>& mu = val(mean);
    const Tensor<T>& lv = val(logvar);
    if (zv.rank() != 2 || mu.rank() != 2 || zv.extent(1) != mu.extent(1))
        throw std::invalid_argument("gaussian_log_density_pairs: bad shapes");
    const int m = zv.extent(0), km = mu.extent(0), d = zv.extent(1);
    Tensor<T> out({m, km, d});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < km; ++j)
            for (int l = 0; l < d; ++l) {
                const T diff = zv.data[static_cast<std::size_t>(i) * d + l] -
                               mu.data[static_cast<std::size_t>(j) * d + l];
                const T lvj = lv.data[static_cast<std::size_t>(j) * d + l];
                out.data[(static_cast<std::size_t>(i) * km + j) * d + l] =
                    T(-0.5) * (static_cast<T>(kLog2Pi) + lvj + diff * diff * std::exp(-lvj));
            }
    return push(std::move(out), needs(z) || needs(mean) || needs(logvar),
                [z, mean, logvar, m, km, d](Tape& t, Id self) {
                    const Tensor<T>& g = t.grad(self);
                    const Tensor<T>& zv2 = t.val(z);
                    const Tensor<T>& mu2 = t.val(mean);
                    const Tensor<T>& lv2 = t.val(logvar);
                    const bool nz = t.needs(z), nm = t.needs(mean), nl = t.needs(logvar);
                    Tensor<T>* dz = nz ? &t.ensure_grad(z) : nullptr;
                    Tensor<T>* dm = nm ? &t.ensure_grad(mean) : nullptr;
                    Tensor<T>* dl = nl ? &t.ensure_grad(logvar) : nullptr;
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < km; ++j)
                            for (int l = 0; l < d; ++l) {
                                const std::size_t zi = static_cast<std::size_t>(i) * d + l;
                                const std::size_t mj = static_cast<std::size_t>(j) * d + l;
                                const T diff = zv2.data[zi] - mu2.data[mj];
                                const T e = std::exp(-lv2.data[mj]);
                                const T w = g.data[(static_cast<std::size_t>(i) * km + j) * d + l];
                                if (nz) dz->data[zi] -= w * diff * e;
                                if (nm) dm->data[mj] += w * diff * e;
                                if (nl) dl->data[mj] += w * T(0.5) * (diff * diff * e - T(1));
                            }
                });
}

template <typename T>
void Tape<T>::backward(Id loss) {
    if (consumed_) throw std::logic_error("backward: graph already consumed");
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (!std::isfinite(static_cast<double>(ln.value.data[0])))
        throw std::runtime_error("backward: non-finite loss");
    consumed_ = true;
    if (!ln.needs_grad) return;
    ensure_grad(loss).fill(T(1));
    for (Id id = loss; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.grad_alloc || !node.needs_grad) continue;
        if (node.param != nullptr) {
            Tensor<T>& pg = node.param->grad;
            for (std::size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += node.grad.data[i];
        } else if (node.back) {
            node.back(*this, id);
        }
    }
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, T learning_rate, T beta1, T beta2, T epsilon) {
    for (Parameter<T>* p : params) {
        if (!p->grad.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in " + p->name);
    }
    for (Parameter<T>* p : params) {
        p->step_count += 1;
        const T c1 = T(1) - std::pow(beta1, static_cast<T>(p->step_count));
        const T c2 = T(1) - std::pow(beta2, static_cast<T>(p->step_count));
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const T g = p->grad.data[i];
            p->adam_m.data[i] = beta1 * p->adam_m.data[i] + (T(1) - beta1) * g;
            p->adam_v.data[i] = beta2 * p->adam_v.data[i] + (T(1) - beta2) * g * g;
            const T mhat = p->adam_m.data[i] / c1;
            const T vhat = p->adam_v.data[i] / c2;
            p->value.data[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
        }
        p->zero_grad();
    }
}

template <typename T>
void scale_gradients(const std::vector<Parameter<T>*>& params, T factor) {
    for (Parameter<T>* p : params)
        for (auto& g : p->grad.data) g *= factor;
}

template class Tape<float>;
template class Tape<double>;
template void adam_step<float>(const std::vector<Parameter<float>*>&, float, float, float, float);
template void adam_step<double>(const std::vector<Parameter<double>*>&, double, double, double, double);
template void scale_gradients<float>(const std::vector<Parameter<float>*>&, float);
template void scale_gradients<double>(const std::vector<Parameter<double>*>&, double);

}  // namespace deft
