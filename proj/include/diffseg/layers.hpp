#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// A named learnable tensor with its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    void resize(std::vector<int> s) {
        shape = std::move(s);
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        value.assign(n, T(0));
        grad.assign(n, T(0));
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

namespace detail {

template <typename T>
inline Eigen::Map<MatX<T>> as_matrix(std::vector<T>& v, int rows, int cols) {
    return Eigen::Map<MatX<T>>(v.data(), rows, cols);
}
template <typename T>
inline Eigen::Map<const MatX<T>> as_matrix(const std::vector<T>& v, int rows, int cols) {
    return Eigen::Map<const MatX<T>>(v.data(), rows, cols);
}

template <typename T>
inline void fill_kaiming(Param<T>& p, int fan_in, double gain, Rng& rng) {
    const double std = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : p.value) v = static_cast<T>(rng.normal() * std);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv2d: square kernel, zero padding k/2, stride 1 or 2. Forward and
// backward run as im2col + GEMM.
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride = 1)
        : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(ksize / 2) {
        weight_.name = name + ".weight";
        weight_.resize({out_ch, in_ch, ksize, ksize});
        bias_.name = name + ".bias";
        bias_.resize({out_ch});
    }

    void init(Rng& rng) {
        detail::fill_kaiming(weight_, in_ch_ * ksize_ * ksize_, std::sqrt(2.0), rng);
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    void zero_init() {
        std::fill(weight_.value.begin(), weight_.value.end(), T(0));
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    int out_height(int h) const { return (h + 2 * pad_ - ksize_) / stride_ + 1; }
    int out_width(int w) const { return (w + 2 * pad_ - ksize_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.channels != in_ch_) {
            throw ShapeError(weight_.name + ": expected " + std::to_string(in_ch_) + " channels, got " +
                             std::to_string(x.channels));
        }
        input_ = x;
        has_input_ = true;

        const int oh = out_height(x.height);
        const int ow = out_width(x.width);
        const int n = oh * ow;
        const int k = in_ch_ * ksize_ * ksize_;

        cols_.assign(static_cast<std::size_t>(k) * n, T(0));
        im2col(x, oh, ow);

        Tensor<T> out(out_ch_, oh, ow);
        auto w = detail::as_matrix(weight_.value, out_ch_, k);
        auto c = detail::as_matrix(cols_, k, n);
        auto o = detail::as_matrix(out.data, out_ch_, n);
        o.noalias() = w * c;
        for (int oc = 0; oc < out_ch_; ++oc) o.row(oc).array() += bias_.value[static_cast<std::size_t>(oc)];
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (!has_input_) throw StateError(weight_.name + ": backward without forward");
        const int oh = dy.height;
        const int ow = dy.width;
        const int n = oh * ow;
        const int k = in_ch_ * ksize_ * ksize_;

        auto dy_m = detail::as_matrix(dy.data, out_ch_, n);
        auto c = detail::as_matrix(cols_, k, n);
        auto dw = detail::as_matrix(weight_.grad, out_ch_, k);
        dw.noalias() += dy_m * c.transpose();
        // Scalar reduction: SIMD peeling over mapped rows would make the
        // summation order depend on heap alignment.
        for (int oc = 0; oc < out_ch_; ++oc) {
            const T* row = dy.plane(oc);
            T acc = T(0);
            for (int i = 0; i < n; ++i) acc += row[i];
            bias_.grad[static_cast<std::size_t>(oc)] += acc;
        }

        auto w = detail::as_matrix(weight_.value, out_ch_, k);
        MatX<T> dcols = w.transpose() * dy_m;

        Tensor<T> dx(in_ch_, input_.height, input_.width);
        col2im(dcols, dx, oh, ow);
        has_input_ = false;
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    void im2col(const Tensor<T>& x, int oh, int ow) {
        const int n = oh * ow;
        std::size_t r = 0;
        for (int c = 0; c < in_ch_; ++c) {
            for (int ky = 0; ky < ksize_; ++ky) {
                for (int kx = 0; kx < ksize_; ++kx, ++r) {
                    T* row = cols_.data() + r * n;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= x.height) continue;
                        const T* src = x.plane(c) + static_cast<std::size_t>(iy) * x.width;
                        T* dst = row + static_cast<std::size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            if (ix >= 0 && ix < x.width) dst[ox] = src[ix];
                        }
                    }
                }
            }
        }
    }

    void col2im(const MatX<T>& dcols, Tensor<T>& dx, int oh, int ow) const {
        std::size_t r = 0;
        for (int c = 0; c < in_ch_; ++c) {
            for (int ky = 0; ky < ksize_; ++ky) {
                for (int kx = 0; kx < ksize_; ++kx, ++r) {
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= dx.height) continue;
                        T* dst = dx.plane(c) + static_cast<std::size_t>(iy) * dx.width;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            if (ix >= 0 && ix < dx.width) dst[ix] += dcols(static_cast<Eigen::Index>(r), oy * ow + ox);
                        }
                    }
                }
            }
        }
    }

    int in_ch_, out_ch_, ksize_, stride_, pad_;
    Param<T> weight_, bias_;
    Tensor<T> input_;
    std::vector<T> cols_;
    bool has_input_ = false;
};

// ---------------------------------------------------------------------------
// GroupNorm over channel groups, per-channel affine.
// ---------------------------------------------------------------------------

template <typename T>
class GroupNorm {
public:
    GroupNorm(std::string name, int channels, int groups) : channels_(channels), groups_(groups) {
        if (channels % groups != 0) {
            throw InvalidParameterError(name + ": channels " + std::to_string(channels) +
                                        " not divisible by groups " + std::to_string(groups));
        }
        gamma_.name = name + ".gamma";
        gamma_.resize({channels});
        beta_.name = name + ".beta";
        beta_.resize({channels});
        std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    }

    void init(Rng&) {
        std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
        std::fill(beta_.value.begin(), beta_.value.end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.channels != channels_) throw ShapeError(gamma_.name + ": channel mismatch");
        input_ = x;
        has_input_ = true;
        const int cpg = channels_ / groups_;
        const std::size_t group_n = static_cast<std::size_t>(cpg) * x.plane_size();
        mean_.assign(static_cast<std::size_t>(groups_), 0.0);
        inv_std_.assign(static_cast<std::size_t>(groups_), 0.0);

        Tensor<T> out(x.channels, x.height, x.width);
        for (int g = 0; g < groups_; ++g) {
            const T* src = x.plane(g * cpg);
            double mu = 0.0;
            for (std::size_t i = 0; i < group_n; ++i) mu += static_cast<double>(src[i]);
            mu /= static_cast<double>(group_n);
            double var = 0.0;
            for (std::size_t i = 0; i < group_n; ++i) {
                const double d = static_cast<double>(src[i]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(group_n);
            const double is = 1.0 / std::sqrt(var + kEps);
            mean_[static_cast<std::size_t>(g)] = mu;
            inv_std_[static_cast<std::size_t>(g)] = is;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double ga = static_cast<double>(gamma_.value[static_cast<std::size_t>(c)]);
                const double be = static_cast<double>(beta_.value[static_cast<std::size_t>(c)]);
                const T* xp = x.plane(c);
                T* op = out.plane(c);
                for (int i = 0; i < x.plane_size(); ++i) {
                    op[i] = static_cast<T>((static_cast<double>(xp[i]) - mu) * is * ga + be);
                }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (!has_input_) throw StateError(gamma_.name + ": backward without forward");
        const int cpg = channels_ / groups_;
        const std::size_t group_n = static_cast<std::size_t>(cpg) * input_.plane_size();
        Tensor<T> dx(input_.channels, input_.height, input_.width);

        for (int g = 0; g < groups_; ++g) {
            const double mu = mean_[static_cast<std::size_t>(g)];
            const double is = inv_std_[static_cast<std::size_t>(g)];

            // Accumulate per-channel affine grads and the two group sums the
            // input gradient needs: sum(dxhat) and sum(dxhat * xhat).
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double ga = static_cast<double>(gamma_.value[static_cast<std::size_t>(c)]);
                const T* xp = input_.plane(c);
                const T* dyp = dy.plane(c);
                double dg = 0.0, db = 0.0;
                for (int i = 0; i < input_.plane_size(); ++i) {
                    const double xhat = (static_cast<double>(xp[i]) - mu) * is;
                    const double d = static_cast<double>(dyp[i]);
                    dg += d * xhat;
                    db += d;
                    const double dxhat = d * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                gamma_.grad[static_cast<std::size_t>(c)] += static_cast<T>(dg);
                beta_.grad[static_cast<std::size_t>(c)] += static_cast<T>(db);
            }

            const double inv_n = 1.0 / static_cast<double>(group_n);
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double ga = static_cast<double>(gamma_.value[static_cast<std::size_t>(c)]);
                const T* xp = input_.plane(c);
                const T* dyp = dy.plane(c);
                T* dxp = dx.plane(c);
                for (int i = 0; i < input_.plane_size(); ++i) {
                    const double xhat = (static_cast<double>(xp[i]) - mu) * is;
                    const double dxhat = static_cast<double>(dyp[i]) * ga;
                    dxp[i] = static_cast<T>(is * (dxhat - inv_n * (sum_dxhat + xhat * sum_dxhat_xhat)));
                }
            }
        }
        has_input_ = false;
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

private:
    static constexpr double kEps = 1e-5;
    int channels_, groups_;
    Param<T> gamma_, beta_;
    Tensor<T> input_;
    std::vector<double> mean_, inv_std_;
    bool has_input_ = false;
};

// ---------------------------------------------------------------------------
// SiLU activation, x * sigmoid(x).
// ---------------------------------------------------------------------------

template <typename T>
class Silu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        has_input_ = true;
        Tensor<T> out(x.channels, x.height, x.width);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double v = static_cast<double>(x.data[i]);
            out.data[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (!has_input_) throw StateError("silu: backward without forward");
        Tensor<T> dx(input_.channels, input_.height, input_.width);
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            const double v = static_cast<double>(input_.data[i]);
            const double s = 1.0 / (1.0 + std::exp(-v));
            dx.data[i] = static_cast<T>(static_cast<double>(dy.data[i]) * s * (1.0 + v * (1.0 - s)));
        }
        has_input_ = false;
        return dx;
    }

private:
    Tensor<T> input_;
    bool has_input_ = false;
};

// ---------------------------------------------------------------------------
// Linear layer on plain vectors (time-embedding projections).
// ---------------------------------------------------------------------------

template <typename T>
class Linear {
public:
    Linear(std::string name, int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
        weight_.name = name + ".weight";
        weight_.resize({out_dim, in_dim});
        bias_.name = name + ".bias";
        bias_.resize({out_dim});
    }

    void init(Rng& rng) {
        detail::fill_kaiming(weight_, in_dim_, 1.0, rng);
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    // Plain loops: these projections are tiny and scalar evaluation keeps
    // the arithmetic order independent of buffer addresses.
    std::vector<T> forward(const std::vector<T>& x) {
        if (static_cast<int>(x.size()) != in_dim_) throw ShapeError(weight_.name + ": input dim mismatch");
        input_ = x;
        has_input_ = true;
        std::vector<T> out(static_cast<std::size_t>(out_dim_));
        for (int i = 0; i < out_dim_; ++i) {
            const T* wrow = weight_.value.data() + static_cast<std::size_t>(i) * in_dim_;
            T acc = bias_.value[static_cast<std::size_t>(i)];
            for (int j = 0; j < in_dim_; ++j) acc += wrow[j] * x[static_cast<std::size_t>(j)];
            out[static_cast<std::size_t>(i)] = acc;
        }
        return out;
    }

    /// Accumulates parameter grads only; the input is a fixed embedding, so
    /// no gradient flows further back.
    void backward(const std::vector<T>& dy) {
        if (!has_input_) throw StateError(weight_.name + ": backward without forward");
        for (int i = 0; i < out_dim_; ++i) {
            T* grow = weight_.grad.data() + static_cast<std::size_t>(i) * in_dim_;
            const T d = dy[static_cast<std::size_t>(i)];
            for (int j = 0; j < in_dim_; ++j) grow[j] += d * input_[static_cast<std::size_t>(j)];
            bias_.grad[static_cast<std::size_t>(i)] += d;
        }
        has_input_ = false;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    int in_dim_, out_dim_;
    Param<T> weight_, bias_;
    std::vector<T> input_;
    bool has_input_ = false;
};

// ---------------------------------------------------------------------------
// Efficient attention: output = rowsoftmax(Q) * (colsoftmax(K)^T * V).
// Row softmax normalizes each query over its feature dim; column softmax
// normalizes each key feature over positions. Cost is O(N d d_v).
// ---------------------------------------------------------------------------

template <typename T>
inline MatX<T> efficient_attention(const MatX<T>& q, const MatX<T>& k, const MatX<T>& v) {
    if (q.rows() != k.rows() || q.rows() != v.rows()) throw ShapeError("efficient_attention: row count mismatch");
    if (q.cols() != k.cols()) throw ShapeError("efficient_attention: query/key dim mismatch");
    if (q.cols() < 1 || v.cols() < 1) throw ShapeError("efficient_attention: empty feature dims");

    MatX<T> a = q;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const T m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
    }
    MatX<T> b = k;
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
        const T m = b.col(j).maxCoeff();
        b.col(j) = (b.col(j).array() - m).exp();
        b.col(j) /= b.col(j).sum();
    }
    MatX<T> ctx = b.transpose() * v;
    return a * ctx;
}

/// Residual self-attention block over a feature map: pre-norm, learned
/// q/k/v/out projections, efficient attention in between.
template <typename T>
class AttentionBlock {
public:
    AttentionBlock(std::string name, int channels, int groups)
        : channels_(channels), norm_(name + ".norm", channels, groups) {
        const char* tags[4] = {".q", ".k", ".v", ".out"};
        for (int i = 0; i < 4; ++i) {
            proj_w_[i].name = name + tags[i] + ".weight";
            proj_w_[i].resize({channels, channels});
            proj_b_[i].name = name + tags[i] + ".bias";
            proj_b_[i].resize({channels});
        }
    }

    void init(Rng& rng) {
        norm_.init(rng);
        for (int i = 0; i < 4; ++i) {
            detail::fill_kaiming(proj_w_[i], channels_, 1.0, rng);
            std::fill(proj_b_[i].value.begin(), proj_b_[i].value.end(), T(0));
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        shape_ = {x.channels, x.height, x.width};
        Tensor<T> xn = norm_.forward(x);
        const int n = x.plane_size();

        x_ = to_rows(xn);  // N x C
        auto q_w = detail::as_matrix(proj_w_[0].value, channels_, channels_);
        auto k_w = detail::as_matrix(proj_w_[1].value, channels_, channels_);
        auto v_w = detail::as_matrix(proj_w_[2].value, channels_, channels_);
        auto o_w = detail::as_matrix(proj_w_[3].value, channels_, channels_);

        q_ = x_ * q_w.transpose();
        k_ = x_ * k_w.transpose();
        v_ = x_ * v_w.transpose();
        add_bias(q_, proj_b_[0].value);
        add_bias(k_, proj_b_[1].value);
        add_bias(v_, proj_b_[2].value);

        a_ = q_;
        for (Eigen::Index i = 0; i < a_.rows(); ++i) {
            const T m = a_.row(i).maxCoeff();
            a_.row(i) = (a_.row(i).array() - m).exp();
            a_.row(i) /= a_.row(i).sum();
        }
        b_ = k_;
        for (Eigen::Index j = 0; j < b_.cols(); ++j) {
            const T m = b_.col(j).maxCoeff();
            b_.col(j) = (b_.col(j).array() - m).exp();
            b_.col(j) /= b_.col(j).sum();
        }
        g_ = b_.transpose() * v_;
        y0_ = a_ * g_;
        MatX<T> y = y0_ * o_w.transpose();
        add_bias(y, proj_b_[3].value);

        has_input_ = true;
        Tensor<T> out = x;
        accumulate_rows(out, y, n);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (!has_input_) throw StateError("attention: backward without forward");
        const int n = dy.plane_size();
        MatX<T> dy_rows = to_rows(dy);

        auto o_w = detail::as_matrix(proj_w_[3].value, channels_, channels_);
        auto dwo = detail::as_matrix(proj_w_[3].grad, channels_, channels_);
        dwo.noalias() += dy_rows.transpose() * y0_;
        add_bias_grad(proj_b_[3].grad, dy_rows);
        MatX<T> dy0 = dy_rows * o_w;

        MatX<T> da = dy0 * g_.transpose();
        MatX<T> dg = a_.transpose() * dy0;
        MatX<T> db = v_ * dg.transpose();
        MatX<T> dv = b_ * dg;

        // Row-softmax backward for A, column-softmax backward for B.
        MatX<T> dq(n, channels_);
        for (Eigen::Index i = 0; i < da.rows(); ++i) {
            const T dot = (da.row(i).array() * a_.row(i).array()).sum();
            dq.row(i) = a_.row(i).array() * (da.row(i).array() - dot);
        }
        MatX<T> dk(n, channels_);
        for (Eigen::Index j = 0; j < db.cols(); ++j) {
            const T dot = (db.col(j).array() * b_.col(j).array()).sum();
            dk.col(j) = b_.col(j).array() * (db.col(j).array() - dot);
        }

        auto q_w = detail::as_matrix(proj_w_[0].value, channels_, channels_);
        auto k_w = detail::as_matrix(proj_w_[1].value, channels_, channels_);
        auto v_w = detail::as_matrix(proj_w_[2].value, channels_, channels_);
        auto dwq = detail::as_matrix(proj_w_[0].grad, channels_, channels_);
        auto dwk = detail::as_matrix(proj_w_[1].grad, channels_, channels_);
        auto dwv = detail::as_matrix(proj_w_[2].grad, channels_, channels_);
        dwq.noalias() += dq.transpose() * x_;
        dwk.noalias() += dk.transpose() * x_;
        dwv.noalias() += dv.transpose() * x_;
        add_bias_grad(proj_b_[0].grad, dq);
        add_bias_grad(proj_b_[1].grad, dk);
        add_bias_grad(proj_b_[2].grad, dv);

        MatX<T> dxn_rows = dq * q_w + dk * k_w + dv * v_w;
        Tensor<T> dxn(shape_[0], shape_[1], shape_[2]);
        scatter_rows(dxn, dxn_rows, n);
        Tensor<T> dx = norm_.backward(dxn);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];  // residual path
        has_input_ = false;
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        norm_.collect(out);
        for (int i = 0; i < 4; ++i) {
            out.push_back(&proj_w_[i]);
            out.push_back(&proj_b_[i]);
        }
    }

private:
    MatX<T> to_rows(const Tensor<T>& t) const {
        const int n = t.plane_size();
        MatX<T> rows(n, channels_);
        for (int c = 0; c < channels_; ++c) {
            const T* p = t.plane(c);
            for (int i = 0; i < n; ++i) rows(i, c) = p[i];
        }
        return rows;
    }

    static void accumulate_rows(Tensor<T>& t, const MatX<T>& rows, int n) {
        for (int c = 0; c < t.channels; ++c) {
            T* p = t.plane(c);
            for (int i = 0; i < n; ++i) p[i] += rows(i, c);
        }
    }

    static void scatter_rows(Tensor<T>& t, const MatX<T>& rows, int n) {
        for (int c = 0; c < t.channels; ++c) {
            T* p = t.plane(c);
            for (int i = 0; i < n; ++i) p[i] = rows(i, c);
        }
    }

    static void add_bias(MatX<T>& m, const std::vector<T>& b) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).array() += b[static_cast<std::size_t>(j)];
    }

    static void add_bias_grad(std::vector<T>& bg, const MatX<T>& dm) {
        for (Eigen::Index j = 0; j < dm.cols(); ++j) bg[static_cast<std::size_t>(j)] += dm.col(j).sum();
    }

    int channels_;
    GroupNorm<T> norm_;
    std::array<Param<T>, 4> proj_w_;  // q, k, v, out
    std::array<Param<T>, 4> proj_b_;
    MatX<T> x_, q_, k_, v_, a_, b_, g_, y0_;
    std::array<int, 3> shape_{};
    bool has_input_ = false;
};

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling.
// ---------------------------------------------------------------------------

template <typename T>
class Upsample2x {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        in_h_ = x.height;
        in_w_ = x.width;
        Tensor<T> out(x.channels, x.height * 2, x.width * 2);
        for (int c = 0; c < x.channels; ++c) {
            for (int y = 0; y < out.height; ++y) {
                const T* src = x.plane(c) + static_cast<std::size_t>(y / 2) * x.width;
                T* dst = out.plane(c) + static_cast<std::size_t>(y) * out.width;
                for (int x2 = 0; x2 < out.width; ++x2) dst[x2] = src[x2 / 2];
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.channels, in_h_, in_w_);
        for (int c = 0; c < dy.channels; ++c) {
            for (int y = 0; y < dy.height; ++y) {
                const T* src = dy.plane(c) + static_cast<std::size_t>(y) * dy.width;
                T* dst = dx.plane(c) + static_cast<std::size_t>(y / 2) * in_w_;
                for (int x2 = 0; x2 < dy.width; ++x2) dst[x2 / 2] += src[x2];
            }
        }
        return dx;
    }

private:
    int in_h_ = 0, in_w_ = 0;
};

// ---------------------------------------------------------------------------
// ResNetBlock: out = skip(x) + conv2(act(norm2(conv1(act(norm1(x))) + time)))
// where time is a per-block linear projection of the step embedding,
// broadcast over space. Blocks in the image/segmentation encoders run
// without the time path.
// ---------------------------------------------------------------------------

template <typename T>
class ResNetBlock {
public:
    ResNetBlock(std::string name, int in_ch, int out_ch, int embed_dim, int norm_groups, int ksize = 3)
        : in_ch_(in_ch),
          out_ch_(out_ch),
          with_time_(embed_dim > 0),
          norm1_(name + ".norm1", in_ch, norm_groups_for(in_ch, norm_groups)),
          conv1_(name + ".conv1", in_ch, out_ch, ksize),
          norm2_(name + ".norm2", out_ch, norm_groups_for(out_ch, norm_groups)),
          conv2_(name + ".conv2", out_ch, out_ch, ksize) {
        if (with_time_) time_proj_.emplace(name + ".time", embed_dim, out_ch);
        if (in_ch != out_ch) skip_.emplace(name + ".skip", in_ch, out_ch, 1);
    }

    void init(Rng& rng) {
        norm1_.init(rng);
        conv1_.init(rng);
        if (time_proj_) time_proj_->init(rng);
        norm2_.init(rng);
        conv2_.init(rng);
        if (skip_) skip_->init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, const std::vector<T>* time_emb) {
        if (with_time_ != (time_emb != nullptr)) {
            throw StateError("resnet block: time embedding presence does not match configuration");
        }
        Tensor<T> h = conv1_.forward(act1_.forward(norm1_.forward(x)));
        if (with_time_) {
            const std::vector<T> t = time_proj_->forward(*time_emb);
            for (int c = 0; c < h.channels; ++c) {
                T* p = h.plane(c);
                const T tv = t[static_cast<std::size_t>(c)];
                for (int i = 0; i < h.plane_size(); ++i) p[i] += tv;
            }
        }
        h = conv2_.forward(act2_.forward(norm2_.forward(h)));
        Tensor<T> s = skip_ ? skip_->forward(x) : x;
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += s.data[i];
        return h;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dh = norm2_.backward(act2_.backward(conv2_.backward(dy)));
        if (with_time_) {
            std::vector<T> dt(static_cast<std::size_t>(out_ch_), T(0));
            for (int c = 0; c < dh.channels; ++c) {
                const T* p = dh.plane(c);
                T acc = T(0);
                for (int i = 0; i < dh.plane_size(); ++i) acc += p[i];
                dt[static_cast<std::size_t>(c)] = acc;
            }
            time_proj_->backward(dt);
        }
        Tensor<T> dx = norm1_.backward(act1_.backward(conv1_.backward(dh)));
        Tensor<T> ds = skip_ ? skip_->backward(dy) : dy;
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        norm1_.collect(out);
        conv1_.collect(out);
        if (time_proj_) time_proj_->collect(out);
        norm2_.collect(out);
        conv2_.collect(out);
        if (skip_) skip_->collect(out);
    }

    static int norm_groups_for(int channels, int requested) {
        int g = std::min(requested, channels);
        while (channels % g != 0) --g;
        return g;
    }

private:
    int in_ch_, out_ch_;
    bool with_time_;
    GroupNorm<T> norm1_;
    Silu<T> act1_;
    Conv2d<T> conv1_;
    std::optional<Linear<T>> time_proj_;
    GroupNorm<T> norm2_;
    Silu<T> act2_;
    Conv2d<T> conv2_;
    std::optional<Conv2d<T>> skip_;
};

}  // namespace diffseg
