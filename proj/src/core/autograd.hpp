#ifndef JOINTDIFF_AUTOGRAD_HPP
#define JOINTDIFF_AUTOGRAD_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace jointdiff {

namespace detail {

// C[M,N] (+)= A[M,K] * B[K,N], row-major. The j-innermost loop keeps writes
// contiguous and vectorizes.
template <typename T>
void gemm(int M, int K, int N, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(T) * static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i) {
        T* c = C + static_cast<size_t>(i) * N;
        const T* a = A + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            if (av == T(0)) continue;
            const T* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
std::vector<T> transpose(int rows, int cols, const T* a) {
    std::vector<T> out(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
    return out;
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// Define-by-run tape over dense tensors. Nodes are appended in execution
// order, so walking the tape backwards visits each node exactly once in
// reverse topological order; gradients accumulate additively across fan-out.
template <typename T>
class Tape {
public:
    using Var = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor<T> t, bool requires_grad = true) {
        return push(std::move(t), requires_grad, {}, nullptr, "leaf");
    }

    Var constant(Tensor<T> t) { return push(std::move(t), false, {}, nullptr, "const"); }

    const Tensor<T>& val(Var v) const { return nodes_[check(v)].value; }
    const Tensor<T>& grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (!n.requires_grad) throw std::logic_error("grad: node does not require grad");
        return n.grad;
    }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        Tensor<T> out = val(a).clone();
        const Tensor<T>& vb = val(b);
        for (size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [this](Node& n) {
                        accumulate_same(n.parents[0], n.grad, T(1));
                        accumulate_same(n.parents[1], n.grad, T(1));
                    },
                    "add");
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        Tensor<T> out = val(a).clone();
        const Tensor<T>& vb = val(b);
        for (size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [this](Node& n) {
                        accumulate_same(n.parents[0], n.grad, T(1));
                        accumulate_same(n.parents[1], n.grad, T(-1));
                    },
                    "sub");
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        Tensor<T> out = val(a).clone();
        const Tensor<T>& vb = val(b);
        for (size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [this](Node& n) {
                        Var a = n.parents[0], b = n.parents[1];
                        if (needs(a)) {
                            Tensor<T>& ga = grad_buf(a);
                            const Tensor<T>& vb = val(b);
                            for (size_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * vb[i];
                        }
                        if (needs(b)) {
                            Tensor<T>& gb = grad_buf(b);
                            const Tensor<T>& va = val(a);
                            for (size_t i = 0; i < n.grad.numel(); ++i) gb[i] += n.grad[i] * va[i];
                        }
                    },
                    "mul");
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a).clone();
        for (size_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return push(std::move(out), needs(a), {a},
                    [this, c](Node& n) { accumulate_same(n.parents[0], n.grad, c); }, "scale");
    }

    Var silu(Var a) {
        Tensor<T> out = val(a).clone();
        for (size_t i = 0; i < out.numel(); ++i) out[i] *= detail::sigmoid(out[i]);
        return push(std::move(out), needs(a), {a},
                    [this](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        const Tensor<T>& x = val(n.parents[0]);
                        for (size_t i = 0; i < n.grad.numel(); ++i) {
                            const T s = detail::sigmoid(x[i]);
                            g[i] += n.grad[i] * s * (T(1) + x[i] * (T(1) - s));
                        }
                    },
                    "silu");
    }

    // ---- reductions ----

    Var sum(Var a) {
        T acc = T(0);
        const Tensor<T>& va = val(a);
        for (size_t i = 0; i < va.numel(); ++i) acc += va[i];
        return push(Tensor<T>::scalar(acc), needs(a), {a},
                    [this](Node& n) { accumulate_broadcast(n.parents[0], n.grad[0]); }, "sum");
    }

    Var mean(Var a) {
        const size_t count = val(a).numel();
        T acc = T(0);
        const Tensor<T>& va = val(a);
        for (size_t i = 0; i < count; ++i) acc += va[i];
        acc /= static_cast<T>(count);
        return push(Tensor<T>::scalar(acc), needs(a), {a},
                    [this, count](Node& n) {
                        accumulate_broadcast(n.parents[0], n.grad[0] / static_cast<T>(count));
                    },
                    "mean");
    }

    // Global average pool over the spatial dims: [C,H,W] -> [C].
    Var spatial_mean(Var a) {
        const auto& shp = val(a).shape;
        if (shp.size() != 3) throw std::invalid_argument("spatial_mean: expected [C,H,W]");
        const int C = shp[0];
        const size_t hw = static_cast<size_t>(shp[1]) * shp[2];
        Tensor<T> out = Tensor<T>::zeros({C});
        const Tensor<T>& va = val(a);
        for (int c = 0; c < C; ++c) {
            T acc = T(0);
            for (size_t i = 0; i < hw; ++i) acc += va[c * hw + i];
            out[c] = acc / static_cast<T>(hw);
        }
        return push(std::move(out), needs(a), {a},
                    [this, C, hw](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        for (int c = 0; c < C; ++c) {
                            const T gv = n.grad[c] / static_cast<T>(hw);
                            for (size_t i = 0; i < hw; ++i) g[c * hw + i] += gv;
                        }
                    },
                    "spatial_mean");
    }

    // ---- shape ----

    Var reshape(Var a, std::vector<int> shp) {
        if (Tensor<T>::count(shp) != val(a).numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor<T> out = val(a).clone();
        out.shape = std::move(shp);
        return push(std::move(out), needs(a), {a},
                    [this](Node& n) { accumulate_same(n.parents[0], n.grad, T(1)); }, "reshape");
    }

    // [C] -> [C,H,W] (per-channel) or [1] -> any shape.
    Var broadcast(Var a, std::vector<int> shp) {
        const Tensor<T>& va = val(a);
        Tensor<T> out = Tensor<T>::zeros(shp);
        if (va.numel() == 1) {
            for (size_t i = 0; i < out.numel(); ++i) out[i] = va[0];
        } else if (va.shape.size() == 1 && shp.size() == 3 && va.shape[0] == shp[0]) {
            const size_t hw = static_cast<size_t>(shp[1]) * shp[2];
            for (int c = 0; c < shp[0]; ++c)
                for (size_t i = 0; i < hw; ++i) out[c * hw + i] = va[c];
        } else {
            throw std::invalid_argument("broadcast: unsupported expansion " + shape_str(va.shape) +
                                        " -> " + shape_str(shp));
        }
        return push(std::move(out), needs(a), {a},
                    [this](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        if (g.numel() == 1) {
                            T acc = T(0);
                            for (size_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i];
                            g[0] += acc;
                        } else {
                            const size_t hw = n.grad.numel() / g.numel();
                            for (size_t c = 0; c < g.numel(); ++c) {
                                T acc = T(0);
                                for (size_t i = 0; i < hw; ++i) acc += n.grad[c * hw + i];
                                g[c] += acc;
                            }
                        }
                    },
                    "broadcast");
    }

    Var concat_channels(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
        const auto& first = val(parts[0]).shape;
        if (first.size() != 3) throw std::invalid_argument("concat_channels: expected [C,H,W]");
        int total_c = 0;
        bool any_grad = false;
        for (Var v : parts) {
            const auto& s = val(v).shape;
            if (s.size() != 3 || s[1] != first[1] || s[2] != first[2])
                throw std::invalid_argument("concat_channels: spatial shape mismatch");
            total_c += s[0];
            any_grad = any_grad || needs(v);
        }
        Tensor<T> out = Tensor<T>::zeros({total_c, first[1], first[2]});
        size_t off = 0;
        for (Var v : parts) {
            const Tensor<T>& pv = val(v);
            std::memcpy(out.ptr() + off, pv.ptr(), sizeof(T) * pv.numel());
            off += pv.numel();
        }
        return push(std::move(out), any_grad, parts,
                    [this](Node& n) {
                        size_t off = 0;
                        for (Var v : n.parents) {
                            const size_t cnt = val(v).numel();
                            if (needs(v)) {
                                Tensor<T>& g = grad_buf(v);
                                for (size_t i = 0; i < cnt; ++i) g[i] += n.grad[off + i];
                            }
                            off += cnt;
                        }
                    },
                    "concat_channels");
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const auto& sa = val(a).shape;
        const auto& sb = val(b).shape;
        if (sa.size() == 2 && sb.size() == 1) return matvec(a, b);
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
            throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " x " +
                                        shape_str(sb));
        const int M = sa[0], K = sa[1], N = sb[1];
        Tensor<T> out = Tensor<T>::zeros({M, N});
        detail::gemm(M, K, N, val(a).ptr(), val(b).ptr(), out.ptr(), false);
        return push(std::move(out), needs(a) || needs(b), {a, b},
                    [this, M, K, N](Node& n) {
                        Var a = n.parents[0], b = n.parents[1];
                        if (needs(a)) {
                            auto bt = detail::transpose(K, N, val(b).ptr());
                            detail::gemm(M, N, K, n.grad.ptr(), bt.data(), grad_buf(a).ptr(), true);
                        }
                        if (needs(b)) {
                            auto at = detail::transpose(M, K, val(a).ptr());
                            detail::gemm(K, M, N, at.data(), n.grad.ptr(), grad_buf(b).ptr(), true);
                        }
                    },
                    "matmul");
    }

    Var matvec(Var a, Var x) {
        const auto& sa = val(a).shape;
        const auto& sx = val(x).shape;
        if (sa.size() != 2 || sx.size() != 1 || sa[1] != sx[0])
            throw std::invalid_argument("matvec: incompatible shapes");
        const int M = sa[0], K = sa[1];
        Tensor<T> out = Tensor<T>::zeros({M});
        const T* A = val(a).ptr();
        const T* v = val(x).ptr();
        for (int i = 0; i < M; ++i) {
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += A[static_cast<size_t>(i) * K + k] * v[k];
            out[i] = acc;
        }
        return push(std::move(out), needs(a) || needs(x), {a, x},
                    [this, M, K](Node& n) {
                        Var a = n.parents[0], x = n.parents[1];
                        if (needs(a)) {
                            Tensor<T>& ga = grad_buf(a);
                            const T* v = val(x).ptr();
                            for (int i = 0; i < M; ++i)
                                for (int k = 0; k < K; ++k)
                                    ga[static_cast<size_t>(i) * K + k] += n.grad[i] * v[k];
                        }
                        if (needs(x)) {
                            Tensor<T>& gx = grad_buf(x);
                            const T* A = val(a).ptr();
                            for (int i = 0; i < M; ++i)
                                for (int k = 0; k < K; ++k)
                                    gx[k] += A[static_cast<size_t>(i) * K + k] * n.grad[i];
                        }
                    },
                    "matvec");
    }

    // Same-padded stride-1 convolution, x [Cin,H,W], w [Cout,Cin,kh,kw] with
    // odd kernel sides. Lowered to a GEMM over an im2col buffer that the
    // backward pass reuses.
    Var conv2d(Var x, Var w) {
        const auto& sx = val(x).shape;
        const auto& sw = val(w).shape;
        if (sx.size() != 3 || sw.size() != 4 || sw[1] != sx[0])
            throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(sx) + ", " +
                                        shape_str(sw));
        if (sw[2] % 2 == 0 || sw[3] % 2 == 0) throw std::invalid_argument("conv2d: kernel sides must be odd");
        const int Cin = sx[0], H = sx[1], W = sx[2];
        const int Cout = sw[0], kh = sw[2], kw = sw[3];
        const int ph = kh / 2, pw = kw / 2;
        const int ckk = Cin * kh * kw, hw = H * W;

        auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(ckk) * hw, T(0));
        const T* xp = val(x).ptr();
        for (int ci = 0; ci < Cin; ++ci)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx) {
                    T* dst = cols->data() + (static_cast<size_t>(ci) * kh * kw + dy * kw + dx) * hw;
                    const int sy = dy - ph, sxo = dx - pw;
                    for (int y = 0; y < H; ++y) {
                        const int yy = y + sy;
                        if (yy < 0 || yy >= H) continue;
                        const T* src = xp + (static_cast<size_t>(ci) * H + yy) * W;
                        T* drow = dst + static_cast<size_t>(y) * W;
                        const int x0 = std::max(0, -sxo), x1 = std::min(W, W - sxo);
                        for (int xi = x0; xi < x1; ++xi) drow[xi] = src[xi + sxo];
                    }
                }

        Tensor<T> out = Tensor<T>::zeros({Cout, H, W});
        detail::gemm(Cout, ckk, hw, val(w).ptr(), cols->data(), out.ptr(), false);
        return push(std::move(out), needs(x) || needs(w), {x, w},
                    [this, cols, Cin, H, W, Cout, kh, kw, ph, pw, ckk, hw](Node& n) {
                        Var x = n.parents[0], w = n.parents[1];
                        if (needs(w)) {
                            auto colsT = detail::transpose(ckk, hw, cols->data());
                            detail::gemm(Cout, hw, ckk, n.grad.ptr(), colsT.data(), grad_buf(w).ptr(), true);
                        }
                        if (needs(x)) {
                            auto wT = detail::transpose(Cout, ckk, val(w).ptr());
                            std::vector<T> dcols(static_cast<size_t>(ckk) * hw);
                            detail::gemm(ckk, Cout, hw, wT.data(), n.grad.ptr(), dcols.data(), false);
                            Tensor<T>& gx = grad_buf(x);
                            for (int ci = 0; ci < Cin; ++ci)
                                for (int dy = 0; dy < kh; ++dy)
                                    for (int dx = 0; dx < kw; ++dx) {
                                        const T* src = dcols.data() +
                                                       (static_cast<size_t>(ci) * kh * kw + dy * kw + dx) * hw;
                                        const int sy = dy - ph, sxo = dx - pw;
                                        for (int y = 0; y < H; ++y) {
                                            const int yy = y + sy;
                                            if (yy < 0 || yy >= H) continue;
                                            T* drow = gx.ptr() + (static_cast<size_t>(ci) * H + yy) * W;
                                            const T* srow = src + static_cast<size_t>(y) * W;
                                            const int x0 = std::max(0, -sxo), x1 = std::min(W, W - sxo);
                                            for (int xi = x0; xi < x1; ++xi) drow[xi + sxo] += srow[xi];
                                        }
                                    }
                        }
                    },
                    "conv2d");
    }

    // ---- normalization & activations over vectors ----

    Var group_norm(Var x, Var gamma, Var beta, int groups, T eps = T(1e-5)) {
        const auto& sx = val(x).shape;
        if (sx.size() != 3) throw std::invalid_argument("group_norm: expected [C,H,W]");
        const int C = sx[0], H = sx[1], W = sx[2];
        if (groups < 1 || C % groups != 0)
            throw std::invalid_argument("group_norm: group count must divide channels");
        if (val(gamma).shape != std::vector<int>{C} || val(beta).shape != std::vector<int>{C})
            throw std::invalid_argument("group_norm: affine shape mismatch");
        const int cpg = C / groups;
        const size_t gsize = static_cast<size_t>(cpg) * H * W;

        auto xhat = std::make_shared<std::vector<T>>(val(x).numel());
        auto inv_sigma = std::make_shared<std::vector<T>>(groups);
        const T* xp = val(x).ptr();
        for (int g = 0; g < groups; ++g) {
            const T* base = xp + g * gsize;
            T mu = T(0);
            for (size_t i = 0; i < gsize; ++i) mu += base[i];
            mu /= static_cast<T>(gsize);
            T var = T(0);
            for (size_t i = 0; i < gsize; ++i) {
                const T d = base[i] - mu;
                var += d * d;
            }
            var /= static_cast<T>(gsize);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_sigma)[g] = is;
            T* xh = xhat->data() + g * gsize;
            for (size_t i = 0; i < gsize; ++i) xh[i] = (base[i] - mu) * is;
        }
        Tensor<T> out = Tensor<T>::zeros({C, H, W});
        const T* gp = val(gamma).ptr();
        const T* bp = val(beta).ptr();
        const size_t hw = static_cast<size_t>(H) * W;
        for (int c = 0; c < C; ++c)
            for (size_t i = 0; i < hw; ++i) out[c * hw + i] = gp[c] * (*xhat)[c * hw + i] + bp[c];

        return push(std::move(out), needs(x) || needs(gamma) || needs(beta), {x, gamma, beta},
                    [this, xhat, inv_sigma, C, H, W, groups, cpg](Node& n) {
                        Var x = n.parents[0], gamma = n.parents[1], beta = n.parents[2];
                        const size_t hw = static_cast<size_t>(H) * W;
                        const size_t gsize = static_cast<size_t>(cpg) * hw;
                        if (needs(beta)) {
                            Tensor<T>& gb = grad_buf(beta);
                            for (int c = 0; c < C; ++c) {
                                T acc = T(0);
                                for (size_t i = 0; i < hw; ++i) acc += n.grad[c * hw + i];
                                gb[c] += acc;
                            }
                        }
                        if (needs(gamma)) {
                            Tensor<T>& gg = grad_buf(gamma);
                            for (int c = 0; c < C; ++c) {
                                T acc = T(0);
                                for (size_t i = 0; i < hw; ++i)
                                    acc += n.grad[c * hw + i] * (*xhat)[c * hw + i];
                                gg[c] += acc;
                            }
                        }
                        if (needs(x)) {
                            Tensor<T>& gx = grad_buf(x);
                            const T* gp = val(gamma).ptr();
                            for (int g = 0; g < groups; ++g) {
                                // Upstream through the affine scale, then the
                                // standard normalization backward per group.
                                T mean_gh = T(0), mean_ghx = T(0);
                                for (int cc = 0; cc < cpg; ++cc) {
                                    const int c = g * cpg + cc;
                                    for (size_t i = 0; i < hw; ++i) {
                                        const T gh = n.grad[c * hw + i] * gp[c];
                                        mean_gh += gh;
                                        mean_ghx += gh * (*xhat)[c * hw + i];
                                    }
                                }
                                mean_gh /= static_cast<T>(gsize);
                                mean_ghx /= static_cast<T>(gsize);
                                const T is = (*inv_sigma)[g];
                                for (int cc = 0; cc < cpg; ++cc) {
                                    const int c = g * cpg + cc;
                                    for (size_t i = 0; i < hw; ++i) {
                                        const T gh = n.grad[c * hw + i] * gp[c];
                                        gx[c * hw + i] +=
                                            is * (gh - mean_gh - (*xhat)[c * hw + i] * mean_ghx);
                                    }
                                }
                            }
                        }
                    },
                    "group_norm");
    }

    Var softmax(Var a) {
        const auto& sa = val(a).shape;
        if (sa.size() != 1) throw std::invalid_argument("softmax: expected a vector");
        const Tensor<T>& va = val(a);
        T mx = va[0];
        for (size_t i = 1; i < va.numel(); ++i) mx = std::max(mx, va[i]);
        Tensor<T> out = Tensor<T>::zeros(sa);
        T sum = T(0);
        for (size_t i = 0; i < va.numel(); ++i) {
            out[i] = std::exp(va[i] - mx);
            sum += out[i];
        }
        for (size_t i = 0; i < va.numel(); ++i) out[i] /= sum;
        return push(std::move(out), needs(a), {a},
                    [this](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        T dot = T(0);
                        for (size_t i = 0; i < n.grad.numel(); ++i) dot += n.grad[i] * n.value[i];
                        for (size_t i = 0; i < n.grad.numel(); ++i)
                            g[i] += n.value[i] * (n.grad[i] - dot);
                    },
                    "softmax");
    }

    // Stable softmax cross-entropy against a fixed target distribution.
    Var cross_entropy_logits(Var logits, Tensor<T> target) {
        const Tensor<T>& vl = val(logits);
        if (vl.shape != target.shape) throw std::invalid_argument("cross_entropy_logits: shape mismatch");
        T mx = vl[0];
        for (size_t i = 1; i < vl.numel(); ++i) mx = std::max(mx, vl[i]);
        T sum = T(0);
        for (size_t i = 0; i < vl.numel(); ++i) sum += std::exp(vl[i] - mx);
        const T lse = std::log(sum) + mx;
        T ce = T(0);
        for (size_t i = 0; i < vl.numel(); ++i) ce += target[i] * (lse - vl[i]);
        auto probs = std::make_shared<std::vector<T>>(vl.numel());
        for (size_t i = 0; i < vl.numel(); ++i) (*probs)[i] = std::exp(vl[i] - lse);
        auto tgt = std::make_shared<Tensor<T>>(std::move(target));
        return push(Tensor<T>::scalar(ce), needs(logits), {logits},
                    [this, probs, tgt](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        for (size_t i = 0; i < g.numel(); ++i)
                            g[i] += ((*probs)[i] - (*tgt)[i]) * n.grad[0];
                    },
                    "cross_entropy_logits");
    }

    // ---- resampling ----

    Var avg_pool2(Var a) {
        const auto& s = val(a).shape;
        if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0)
            throw std::invalid_argument("avg_pool2: expected [C,H,W] with even H, W");
        const int C = s[0], H = s[1], W = s[2];
        Tensor<T> out = Tensor<T>::zeros({C, H / 2, W / 2});
        const Tensor<T>& va = val(a);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H / 2; ++y)
                for (int x = 0; x < W / 2; ++x) {
                    const size_t b = (static_cast<size_t>(c) * H + 2 * y) * W + 2 * x;
                    out[(static_cast<size_t>(c) * (H / 2) + y) * (W / 2) + x] =
                        (va[b] + va[b + 1] + va[b + W] + va[b + W + 1]) * T(0.25);
                }
        return push(std::move(out), needs(a), {a},
                    [this, C, H, W](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        for (int c = 0; c < C; ++c)
                            for (int y = 0; y < H / 2; ++y)
                                for (int x = 0; x < W / 2; ++x) {
                                    const T gv =
                                        n.grad[(static_cast<size_t>(c) * (H / 2) + y) * (W / 2) + x] * T(0.25);
                                    const size_t b = (static_cast<size_t>(c) * H + 2 * y) * W + 2 * x;
                                    g[b] += gv;
                                    g[b + 1] += gv;
                                    g[b + W] += gv;
                                    g[b + W + 1] += gv;
                                }
                    },
                    "avg_pool2");
    }

    Var upsample_nearest2(Var a) {
        const auto& s = val(a).shape;
        if (s.size() != 3) throw std::invalid_argument("upsample_nearest2: expected [C,H,W]");
        const int C = s[0], H = s[1], W = s[2];
        Tensor<T> out = Tensor<T>::zeros({C, 2 * H, 2 * W});
        const Tensor<T>& va = val(a);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int x = 0; x < 2 * W; ++x)
                    out[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + x] =
                        va[(static_cast<size_t>(c) * H + y / 2) * W + x / 2];
        return push(std::move(out), needs(a), {a},
                    [this, C, H, W](Node& n) {
                        if (!needs(n.parents[0])) return;
                        Tensor<T>& g = grad_buf(n.parents[0]);
                        for (int c = 0; c < C; ++c)
                            for (int y = 0; y < 2 * H; ++y)
                                for (int x = 0; x < 2 * W; ++x)
                                    g[(static_cast<size_t>(c) * H + y / 2) * W + x / 2] +=
                                        n.grad[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + x];
                    },
                    "upsample_nearest2");
    }

    // ---- backward ----

    void backward(Var output) {
        Node& out = nodes_[check(output)];
        if (out.value.numel() != 1) throw std::invalid_argument("backward: output must be scalar");
        if (!out.requires_grad) throw std::invalid_argument("backward: output does not require grad");
        for (Node& n : nodes_)
            if (n.requires_grad) {
                n.grad = Tensor<T>::zeros(n.value.shape);
            }
        out.grad[0] = T(1);
        for (int i = output; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.backward) n.backward(n);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::vector<Var> parents;
        std::function<void(Node&)> backward;
        const char* op = "";
    };

    std::vector<Node> nodes_;

    Var check(Var v) const {
        if (v < 0 || static_cast<size_t>(v) >= nodes_.size()) throw std::logic_error("bad var handle");
        return v;
    }

    bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

    Tensor<T>& grad_buf(Var v) { return nodes_[check(v)].grad; }

    void require_same_shape(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) +
                                        " vs " + shape_str(val(b).shape));
    }

    void accumulate_same(Var v, const Tensor<T>& g, T factor) {
        if (!needs(v)) return;
        Tensor<T>& dst = grad_buf(v);
        for (size_t i = 0; i < g.numel(); ++i) dst[i] += factor * g[i];
    }

    void accumulate_broadcast(Var v, T g) {
        if (!needs(v)) return;
        Tensor<T>& dst = grad_buf(v);
        for (size_t i = 0; i < dst.numel(); ++i) dst[i] += g;
    }

    Var push(Tensor<T> value, bool requires_grad, std::vector<Var> parents,
             std::function<void(Node&)> backward, const char* op) {
        for (Var p : parents) check(p);  // parents precede children, so the graph is acyclic
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.parents = std::move(parents);
        if (requires_grad) n.backward = std::move(backward);
        n.op = op;
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }
};

using VarId = Tape<float>::Var;

// Max relative gradient error of a scalar-valued graph against central finite
// differences, evaluated in 64-bit arithmetic. The builder is run on fresh
// tapes; two forward passes must agree bitwise or the function is rejected as
// non-deterministic.
inline double grad_check(
    const std::function<Tape<double>::Var(Tape<double>&, const std::vector<Tape<double>::Var>&)>& build,
    std::vector<Tensor<double>> params, double fd_step = 1e-5) {
    for (auto& p : params) p = p.clone();  // leaves alias this storage; keep the caller's intact
    auto eval = [&]() {
        Tape<double> tp;
        std::vector<Tape<double>::Var> leaves;
        leaves.reserve(params.size());
        for (auto& p : params) leaves.push_back(tp.leaf(p, true));
        const auto out = build(tp, leaves);
        if (tp.val(out).numel() != 1) throw std::invalid_argument("grad_check: output must be scalar");
        return tp.val(out)[0];
    };

    const double f_a = eval();
    const double f_b = eval();
    if (std::memcmp(&f_a, &f_b, sizeof(double)) != 0)
        throw std::runtime_error("grad_check: function is not deterministic");

    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tp;
        std::vector<Tape<double>::Var> leaves;
        for (auto& p : params) leaves.push_back(tp.leaf(p, true));
        const auto out = build(tp, leaves);
        tp.backward(out);
        for (auto v : leaves) analytic.push_back(tp.grad(v).clone());
    }

    // Central differences cannot resolve below the roundoff of f itself;
    // discrepancies under this floor are indistinguishable from zero.
    const double fd_floor =
        100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f_a)) / fd_step;

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& p = params[pi];
        for (size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            p[i] = saved + fd_step;
            const double f1 = eval();
            p[i] = saved - fd_step;
            const double f2 = eval();
            p[i] = saved;
            const double cd = (f1 - f2) / (2.0 * fd_step);
            const double a = analytic[pi][i];
            if (std::abs(a - cd) <= fd_floor) continue;
            const double rel = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace jointdiff

#endif
