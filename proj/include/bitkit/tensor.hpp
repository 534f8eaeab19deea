#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "bitkit/error.hpp"
#include "bitkit/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bitkit {

// Dense row-major n-d float tensor. Copies share the underlying buffer;
// buffers are treated as immutable once an op has produced them (gradient
// accumulation inside the tape is the only mutation).
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::shared_ptr<std::vector<T>> data;
    int64_t node = -1;      // tape node id, -1 when not on a tape
    uint64_t tape_id = 0;   // which tape the node id belongs to

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape) { return full(std::move(shape), T(0)); }

    static Tensor full(std::vector<int64_t> shape, T value) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(numel_of(t.shape)), value);
        return t;
    }

    static Tensor from(std::vector<int64_t> shape, std::vector<T> values) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor init: shape/product mismatch");
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static Tensor randn(std::vector<int64_t> shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : *t.data) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw DimensionError("negative extent");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    size_t rank() const { return shape.size(); }
    int64_t dim(size_t i) const {
        if (i >= shape.size()) throw DimensionError("dim index out of range");
        return shape[i];
    }
    bool defined() const { return static_cast<bool>(data); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }

    // NCHW convenience accessor.
    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return (*data)[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return (*data)[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T& at2(int64_t i, int64_t j) { return (*data)[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return (*data)[static_cast<size_t>(i * shape[1] + j)]; }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
inline std::string shape_str(const Tensor<T>& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    for (const T& v : *t.data) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(t));
    }
}

// ---------------------------------------------------------------------------
// Tape: per-forward record of operations for reverse-mode differentiation.
// Nodes are appended in execution order, so insertion order is a topological
// order; backward walks it once in reverse.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(const Tensor<T>& self_grad, Tape& tape)>;

    Tape() : id_(next_id()++) {}

    uint64_t id() const { return id_; }
    size_t size() const { return nodes_.size(); }
    bool finished() const { return finished_; }

    // Register a trainable leaf. Assigns the tensor a node on this tape.
    int64_t watch(Tensor<T>& t) {
        require_open();
        t.node = add_node(nullptr);
        t.tape_id = id_;
        return t.node;
    }

    // Record an op output. `parents` are nodes of this tape feeding the op;
    // `backward` receives the accumulated gradient at the new node and must
    // push gradients to the parents via accumulate().
    int64_t record(Tensor<T>& out, BackwardFn backward) {
        require_open();
        out.node = add_node(std::move(backward));
        out.tape_id = id_;
        return out.node;
    }

    bool on_tape(const Tensor<T>& t) const { return t.tape_id == id_ && t.node >= 0; }

    void accumulate(int64_t node, const Tensor<T>& grad) {
        Tensor<T>& slot = grads_[static_cast<size_t>(node)];
        if (!slot.defined()) {
            slot = grad.clone();
            return;
        }
        if (!slot.same_shape(grad)) throw DimensionError("gradient accumulation shape mismatch");
        T* a = slot.ptr();
        const T* b = grad.ptr();
        int64_t n = slot.numel();
        for (int64_t i = 0; i < n; ++i) a[i] += b[i];
    }

    // Reverse sweep from a scalar loss. Each node's backward runs exactly
    // once; gradients for watched leaves stay queryable until reset().
    void backward(const Tensor<T>& loss) {
        if (!on_tape(loss)) throw UsageError("backward: loss is not on this tape");
        if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
        if (finished_) throw UsageError("backward: tape already consumed");
        finished_ = true;
        grads_[static_cast<size_t>(loss.node)] = Tensor<T>::full(loss.shape, T(1));
        for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
            const Tensor<T>& g = grads_[static_cast<size_t>(i)];
            if (!g.defined()) continue;
            if (nodes_[static_cast<size_t>(i)]) nodes_[static_cast<size_t>(i)](g, *this);
            if (i != loss.node) {
                // free intermediate gradients once consumed, keep leaves
                if (nodes_[static_cast<size_t>(i)]) grads_[static_cast<size_t>(i)] = Tensor<T>();
            }
        }
    }

    // Gradient of a watched (or recorded) tensor; empty tensor if none flowed.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (!on_tape(t)) throw UsageError("grad: tensor is not on this tape");
        return grads_[static_cast<size_t>(t.node)];
    }

    void reset() {
        nodes_.clear();
        grads_.clear();
        finished_ = false;
    }

private:
    void require_open() const {
        if (finished_) throw UsageError("tape already consumed by backward; reset() first");
    }

    int64_t add_node(BackwardFn fn) {
        nodes_.push_back(std::move(fn));
        grads_.emplace_back();
        return static_cast<int64_t>(nodes_.size()) - 1;
    }

    static std::atomic<uint64_t>& next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter;
    }

    uint64_t id_;
    std::vector<BackwardFn> nodes_;
    std::vector<Tensor<T>> grads_;
    bool finished_ = false;
};

// ---------------------------------------------------------------------------
// GEMM kernels. Plain loops ordered for auto-vectorization; parallel loops
// partition output elements so results are bitwise identical for any thread
// count.
// ---------------------------------------------------------------------------

namespace detail {

constexpr int64_t kParallelWork = 1 << 15;

// C(MxN) = A(MxK) * B(KxN), optionally accumulating into C.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > kParallelWork)
#endif
    for (int64_t i = 0; i < M; ++i) {
        T* crow = C + i * N;
        if (!accumulate) std::fill(crow, crow + N, T(0));
        const T* arow = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const T a = arow[k];
            const T* brow = B + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C(MxN) = A(MxK) * B(NxK)^T
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > kParallelWork)
#endif
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = A + i * K;
        T* crow = C + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const T* brow = B + j * K;
            T acc = 0;
            for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C(KxN) = A(MxK)^T * B(MxN)
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > kParallelWork)
#endif
    for (int64_t k = 0; k < K; ++k) {
        T* crow = C + k * N;
        if (!accumulate) std::fill(crow, crow + N, T(0));
        for (int64_t i = 0; i < M; ++i) {
            const T a = A[i * K + k];
            const T* brow = B + i * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// Unfold one sample's padded receptive fields into a (C*K*K) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, T* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < K; ++ky) {
            for (int64_t kx = 0; kx < K; ++kx) {
                T* dst = col + ((c * K + ky) * K + kx) * (Ho * Wo);
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back into one sample's gradient image.
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, T* dx) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < K; ++ky) {
            for (int64_t kx = 0; kx < K; ++kx) {
                const T* src = col + ((c * K + ky) * K + kx) * (Ho * Wo);
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = dx + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Every op takes the tape as an optional first argument; pass nullptr
// for inference-only forwards. Inputs that are not on the given tape are
// treated as constants.
// ---------------------------------------------------------------------------

namespace ops {

template <typename T>
inline bool tracked(Tape<T>* tape, const Tensor<T>& t) {
    return tape != nullptr && tape->on_tape(t);
}

// y = x @ w, x: MxK, w: KxN
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: inputs must be rank 2");
    if (a.shape[1] != b.shape[0])
        throw DimensionError("matmul: inner dims differ " + shape_str(a) + " vs " + shape_str(b));
    const int64_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
    Tensor<T> out = Tensor<T>::zeros({M, N});
    detail::gemm_nn(M, N, K, a.ptr(), b.ptr(), out.ptr(), false);
    check_finite(out, "matmul");
    if (tracked(tape, a) || tracked(tape, b)) {
        const bool ta = tracked(tape, a), tb = tracked(tape, b);
        const int64_t na = a.node, nb = b.node;
        Tensor<T> asave = a, bsave = b;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            if (ta) {
                Tensor<T> da = Tensor<T>::zeros({M, K});
                detail::gemm_nt(M, K, N, g.ptr(), bsave.ptr(), da.ptr(), false);
                tp.accumulate(na, da);
            }
            if (tb) {
                Tensor<T> db = Tensor<T>::zeros({K, N});
                detail::gemm_tn(M, N, K, asave.ptr(), g.ptr(), db.ptr(), false);
                tp.accumulate(nb, db);
            }
        });
    }
    return out;
}

// NCHW x OIKK -> NOH'W'; H' = (H + 2*pad - K)/stride + 1
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                 int64_t pad) {
    if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: x and w must be rank 4");
    if (w.shape[2] != w.shape[3]) throw DimensionError("conv2d: kernel must be square");
    if (x.shape[1] != w.shape[1])
        throw DimensionError("conv2d: channel mismatch " + shape_str(x) + " vs " + shape_str(w));
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (pad < 0) throw DimensionError("conv2d: negative padding");
    const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t O = w.shape[0], K = w.shape[2];
    if (K > H + 2 * pad || K > W + 2 * pad)
        throw DimensionError("conv2d: kernel does not fit within padded input");
    const int64_t Ho = (H + 2 * pad - K) / stride + 1;
    const int64_t Wo = (W + 2 * pad - K) / stride + 1;
    const int64_t CKK = C * K * K;

    Tensor<T> out = Tensor<T>::zeros({N, O, Ho, Wo});
    // samples are independent; each thread unfolds into its own buffer
#ifdef _OPENMP
#pragma omp parallel if (N > 1)
#endif
    {
        std::vector<T> col(static_cast<size_t>(CKK * Ho * Wo));
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int64_t n = 0; n < N; ++n) {
            detail::im2col(x.ptr() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, col.data());
            detail::gemm_nn(O, Ho * Wo, CKK, w.ptr(), col.data(), out.ptr() + n * O * Ho * Wo,
                            false);
        }
    }
    check_finite(out, "conv2d");

    if (tracked(tape, x) || tracked(tape, w)) {
        const bool tx = tracked(tape, x), tw = tracked(tape, w);
        const int64_t nx = x.node, nw = w.node;
        Tensor<T> xsave = x, wsave = w;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = tx ? Tensor<T>::zeros(xsave.shape) : Tensor<T>();
            int nthreads = 1;
#ifdef _OPENMP
            nthreads = omp_get_max_threads();
#endif
            // per-thread dW partials, merged in thread order so results are
            // deterministic for a fixed thread count
            std::vector<Tensor<T>> dw_parts;
            if (tw)
                for (int t = 0; t < nthreads; ++t) dw_parts.push_back(Tensor<T>::zeros(wsave.shape));
#ifdef _OPENMP
#pragma omp parallel num_threads(nthreads) if (N > 1)
#endif
            {
                int tid = 0;
#ifdef _OPENMP
                tid = omp_get_thread_num();
#endif
                std::vector<T> colbuf(static_cast<size_t>(CKK * Ho * Wo));
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
                for (int64_t n = 0; n < N; ++n) {
                    const T* gn = g.ptr() + n * O * Ho * Wo;
                    if (tw) {
                        detail::im2col(xsave.ptr() + n * C * H * W, C, H, W, K, stride, pad, Ho,
                                       Wo, colbuf.data());
                        detail::gemm_nt(O, CKK, Ho * Wo, gn, colbuf.data(),
                                        dw_parts[static_cast<size_t>(tid)].ptr(), true);
                    }
                    if (tx) {
                        detail::gemm_tn(O, Ho * Wo, CKK, wsave.ptr(), gn, colbuf.data(), false);
                        detail::col2im(colbuf.data(), C, H, W, K, stride, pad, Ho, Wo,
                                       dx.ptr() + n * C * H * W);
                    }
                }
            }
            if (tw) {
                Tensor<T> dw = std::move(dw_parts[0]);
                for (int t = 1; t < nthreads; ++t) {
                    const T* src = dw_parts[static_cast<size_t>(t)].ptr();
                    T* dst = dw.ptr();
                    for (int64_t i = 0; i < dw.numel(); ++i) dst[i] += src[i];
                }
                tp.accumulate(nw, dw);
            }
            if (tx) tp.accumulate(nx, dx);
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* xp = x.ptr();
    T* op = out.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        Tensor<T> xsave = x;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = Tensor<T>::zeros(xsave.shape);
            const T* gp = g.ptr();
            const T* xq = xsave.ptr();
            T* dp = dx.ptr();
            for (int64_t i = 0; i < xsave.numel(); ++i) dp[i] = xq[i] > T(0) ? gp[i] : T(0);
            tp.accumulate(nx, dx);
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw DimensionError("add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] + bp[i];
    check_finite(out, "add");
    if (tracked(tape, a) || tracked(tape, b)) {
        const bool ta = tracked(tape, a), tb = tracked(tape, b);
        const int64_t na = a.node, nb = b.node;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            if (ta) tp.accumulate(na, g);
            if (tb) tp.accumulate(nb, g);
        });
    }
    return out;
}

// (NxC) + bias(C), broadcast over rows
template <typename T>
Tensor<T> add_rowvec(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& bias) {
    if (a.rank() != 2 || bias.rank() != 1 || a.shape[1] != bias.shape[0])
        throw DimensionError("add_rowvec: need NxC and C");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t N = a.shape[0], C = a.shape[1];
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < C; ++j) out[i * C + j] = a[i * C + j] + bias[j];
    check_finite(out, "add_rowvec");
    if (tracked(tape, a) || tracked(tape, bias)) {
        const bool ta = tracked(tape, a), tb = tracked(tape, bias);
        const int64_t na = a.node, nb = bias.node;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            if (ta) tp.accumulate(na, g);
            if (tb) {
                Tensor<T> db = Tensor<T>::zeros({C});
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < C; ++j) db[j] += g[i * C + j];
                tp.accumulate(nb, db);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw DimensionError("mul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    check_finite(out, "mul");
    if (tracked(tape, a) || tracked(tape, b)) {
        const bool ta = tracked(tape, a), tb = tracked(tape, b);
        const int64_t na = a.node, nb = b.node;
        Tensor<T> asave = a, bsave = b;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            if (ta) {
                Tensor<T> da = Tensor<T>::zeros(asave.shape);
                for (int64_t i = 0; i < da.numel(); ++i) da[i] = g[i] * bsave[i];
                tp.accumulate(na, da);
            }
            if (tb) {
                Tensor<T> db = Tensor<T>::zeros(bsave.shape);
                for (int64_t i = 0; i < db.numel(); ++i) db[i] = g[i] * asave[i];
                tp.accumulate(nb, db);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * c;
    check_finite(out, "scale");
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = Tensor<T>::zeros(g.shape);
            for (int64_t i = 0; i < g.numel(); ++i) dx[i] = g[i] * c;
            tp.accumulate(nx, dx);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    T acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor<T> out = Tensor<T>::from({1}, {acc});
    check_finite(out, "sum");
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        const std::vector<int64_t> xshape = x.shape;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            tp.accumulate(nx, Tensor<T>::full(xshape, g[0]));
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    T acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    const T inv = T(1) / static_cast<T>(x.numel());
    Tensor<T> out = Tensor<T>::from({1}, {acc * inv});
    check_finite(out, "mean");
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        const std::vector<int64_t> xshape = x.shape;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            tp.accumulate(nx, Tensor<T>::full(xshape, g[0] * inv));
        });
    }
    return out;
}

// NCHW -> NxC spatial mean
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool: input must be NCHW");
    const int64_t N = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
    Tensor<T> out = Tensor<T>::zeros({N, C});
    const T inv = T(1) / static_cast<T>(HW);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* src = x.ptr() + (n * C + c) * HW;
            T acc = 0;
            for (int64_t i = 0; i < HW; ++i) acc += src[i];
            out[n * C + c] = acc * inv;
        }
    check_finite(out, "global_avg_pool");
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        const std::vector<int64_t> xshape = x.shape;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = Tensor<T>::zeros(xshape);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const T gv = g[n * C + c] * inv;
                    T* dst = dx.ptr() + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) dst[i] = gv;
                }
            tp.accumulate(nx, dx);
        });
    }
    return out;
}

// Zero-pad H and W by p on each side.
template <typename T>
Tensor<T> pad(Tape<T>* tape, const Tensor<T>& x, int64_t p) {
    if (x.rank() != 4) throw DimensionError("pad: input must be NCHW");
    if (p < 0) throw DimensionError("pad: negative padding");
    const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor<T> out = Tensor<T>::zeros({N, C, H + 2 * p, W + 2 * p});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                std::memcpy(&out.at4(n, c, h + p, p), &x.at4(n, c, h, 0),
                            static_cast<size_t>(W) * sizeof(T));
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = Tensor<T>::zeros({N, C, H, W});
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t h = 0; h < H; ++h)
                        std::memcpy(&dx.at4(n, c, h, 0), &g.at4(n, c, h + p, p),
                                    static_cast<size_t>(W) * sizeof(T));
            tp.accumulate(nx, dx);
        });
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x, int64_t kernel, int64_t stride,
                    int64_t padding) {
    if (x.rank() != 4) throw DimensionError("maxpool2d: input must be NCHW");
    const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t Ho = (H + 2 * padding - kernel) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kernel) / stride + 1;
    if (Ho < 1 || Wo < 1) throw DimensionError("maxpool2d: kernel does not fit");
    Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t best_idx = -1;
                    for (int64_t ky = 0; ky < kernel; ++ky)
                        for (int64_t kx = 0; kx < kernel; ++kx) {
                            const int64_t iy = oy * stride - padding + ky;
                            const int64_t ix = ox * stride - padding + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            const int64_t idx = ((n * C + c) * H + iy) * W + ix;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    // window fully in padding: treat as zero
                    const int64_t oidx = ((n * C + c) * Ho + oy) * Wo + ox;
                    out[oidx] = best_idx >= 0 ? best : T(0);
                    (*argmax)[static_cast<size_t>(oidx)] = best_idx;
                }
    if (tracked(tape, x)) {
        const int64_t nx = x.node;
        const std::vector<int64_t> xshape = x.shape;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dx = Tensor<T>::zeros(xshape);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const int64_t idx = (*argmax)[static_cast<size_t>(i)];
                if (idx >= 0) dx[idx] += g[i];
            }
            tp.accumulate(nx, dx);
        });
    }
    return out;
}

// Mean over rows of -sum(target * log softmax(logits)); max-subtraction for
// stability. Targets must be row-normalized probability vectors.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.rank() != 2 || !logits.same_shape(targets))
        throw DimensionError("softmax_cross_entropy: need matching NxC tensors");
    const int64_t N = logits.shape[0], C = logits.shape[1];
    if (C < 2) throw ValidationError("softmax_cross_entropy: need at least 2 classes");
    for (int64_t i = 0; i < N; ++i) {
        T rowsum = 0;
        for (int64_t j = 0; j < C; ++j) rowsum += targets[i * C + j];
        if (std::abs(static_cast<double>(rowsum) - 1.0) > 1e-6)
            throw ValidationError("softmax_cross_entropy: target row " + std::to_string(i) +
                                  " does not sum to 1");
    }
    Tensor<T> probs = Tensor<T>::zeros(logits.shape);
    T loss = 0;
    for (int64_t i = 0; i < N; ++i) {
        const T* lrow = logits.ptr() + i * C;
        T m = lrow[0];
        for (int64_t j = 1; j < C; ++j) m = std::max(m, lrow[j]);
        T denom = 0;
        for (int64_t j = 0; j < C; ++j) denom += std::exp(lrow[j] - m);
        const T lse = m + std::log(denom);
        for (int64_t j = 0; j < C; ++j) {
            probs[i * C + j] = std::exp(lrow[j] - m) / denom;
            loss += targets[i * C + j] * (lse - lrow[j]);
        }
    }
    Tensor<T> out = Tensor<T>::from({1}, {loss / static_cast<T>(N)});
    check_finite(out, "softmax_cross_entropy");
    if (tracked(tape, logits)) {
        const int64_t nl = logits.node;
        Tensor<T> tsave = targets;
        tape->record(out, [=](const Tensor<T>& g, Tape<T>& tp) {
            Tensor<T> dl = Tensor<T>::zeros(probs.shape);
            const T s = g[0] / static_cast<T>(N);
            for (int64_t i = 0; i < dl.numel(); ++i) dl[i] = s * (probs[i] - tsave[i]);
            tp.accumulate(nl, dl);
        });
    }
    return out;
}

// Inverted dropout; identity (same tensor) when rate == 0.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const T keep_inv = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> mask = Tensor<T>::zeros(x.shape);
    for (int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = rng.bernoulli(1.0 - rate) ? keep_inv : T(0);
    return mul(tape, x, mask);
}

}  // namespace ops
}  // namespace bitkit
