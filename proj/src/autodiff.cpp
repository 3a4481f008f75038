#include "fairstg/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace fairstg::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) {
    throw std::invalid_argument("autodiff: " + msg);
}

} // namespace

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size())) fail("invalid var handle");
    return nodes_[static_cast<std::size_t>(v.idx)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size())) fail("invalid var handle");
    return nodes_[static_cast<std::size_t>(v.idx)];
}

void Tape::check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
             std::to_string(b.cols()));
    }
}

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&)> back) {
    Node n;
    n.grad = Matrix::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = requires_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Matrix value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

Var Tape::scalar_constant(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(m);
}

const Matrix& Tape::grad(Var v) const {
    if (!backward_done_) fail("grad read before backward()");
    return node(v).grad;
}

Var Tape::matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows()) fail("matmul: inner dimensions differ");
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Var out = push(A * B, rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) t.grad_mut(a) += g * t.value(b).transpose();
            if (t.node(b).requires_grad) t.grad_mut(b) += t.value(a).transpose() * g;
        };
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Var out = push(value(a) + value(b), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) t.grad_mut(a) += g;
            if (t.node(b).requires_grad) t.grad_mut(b) += g;
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Var out = push(value(a) - value(b), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) t.grad_mut(a) += g;
            if (t.node(b).requires_grad) t.grad_mut(b) -= g;
        };
    }
    return out;
}

Var Tape::cmul(Var a, Var b) {
    check_same_shape(value(a), value(b), "cmul");
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Var out = push(value(a).cwiseProduct(value(b)), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) t.grad_mut(a) += g.cwiseProduct(t.value(b));
            if (t.node(b).requires_grad) t.grad_mut(b) += g.cwiseProduct(t.value(a));
        };
    }
    return out;
}

Var Tape::scale(Var a, double s) { return affine(a, s, 0.0); }

Var Tape::affine(Var a, double mul, double shift) {
    bool rg = node(a).requires_grad;
    Var out = push((value(a).array() * mul + shift).matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out, mul](Tape& t) { t.grad_mut(a) += mul * t.node(out).grad; };
    }
    return out;
}

Var Tape::transpose(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).transpose(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) { t.grad_mut(a) += t.node(out).grad.transpose(); };
    }
    return out;
}

Var Tape::add_rowvec(Var m, Var row) {
    const Matrix& M = value(m);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != M.cols()) fail("add_rowvec: row must be 1xC");
    bool rg = node(m).requires_grad || node(row).requires_grad;
    Var out = push(M.rowwise() + R.row(0), rg, nullptr);
    if (rg) {
        node(out).back = [m, row, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(m).requires_grad) t.grad_mut(m) += g;
            if (t.node(row).requires_grad) t.grad_mut(row) += g.colwise().sum();
        };
    }
    return out;
}

Var Tape::relu(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).cwiseMax(0.0), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            t.grad_mut(a) += (t.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g);
        };
    }
    return out;
}

Var Tape::tanh_(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).array().tanh().matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            const Matrix& y = t.value(out);
            t.grad_mut(a) += (1.0 - y.array().square()).matrix().cwiseProduct(t.node(out).grad);
        };
    }
    return out;
}

Var Tape::sigmoid(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push((1.0 / (1.0 + (-value(a).array()).exp())).matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            const Eigen::ArrayXXd y = t.value(out).array();
            t.grad_mut(a) += (y * (1.0 - y)).matrix().cwiseProduct(t.node(out).grad);
        };
    }
    return out;
}

Var Tape::abs_(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).cwiseAbs(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            const Eigen::ArrayXXd x = t.value(a).array();
            Eigen::ArrayXXd sign = (x > 0.0).cast<double>() - (x < 0.0).cast<double>();
            t.grad_mut(a) += sign.matrix().cwiseProduct(t.node(out).grad);
        };
    }
    return out;
}

Var Tape::square(Var a) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).array().square().matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            t.grad_mut(a) += 2.0 * t.value(a).cwiseProduct(t.node(out).grad);
        };
    }
    return out;
}

Var Tape::log_(Var a) {
    if ((value(a).array() <= 0.0).any()) fail("log_: non-positive input");
    bool rg = node(a).requires_grad;
    Var out = push(value(a).array().log().matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            t.grad_mut(a) += t.node(out).grad.cwiseQuotient(t.value(a));
        };
    }
    return out;
}

Var Tape::clamp(Var a, double lo, double hi) {
    bool rg = node(a).requires_grad;
    Var out = push(value(a).cwiseMax(lo).cwiseMin(hi), rg, nullptr);
    if (rg) {
        node(out).back = [a, out, lo, hi](Tape& t) {
            const Eigen::ArrayXXd x = t.value(a).array();
            Eigen::ArrayXXd inside = (x > lo).cast<double>() * (x < hi).cast<double>();
            t.grad_mut(a) += inside.matrix().cwiseProduct(t.node(out).grad);
        };
    }
    return out;
}

Var Tape::rows(Var a, std::vector<int> idx) {
    const Matrix& A = value(a);
    Matrix out(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= A.rows()) fail("rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = A.row(idx[i]);
    }
    bool rg = node(a).requires_grad;
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
        node(o).back = [a, o, idx = std::move(idx)](Tape& t) {
            const Matrix& g = t.node(o).grad;
            Matrix& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
            }
        };
    }
    return o;
}

Var Tape::cols(Var a, int start, int count) {
    const Matrix& A = value(a);
    if (start < 0 || count < 0 || start + count > A.cols()) fail("cols: block out of range");
    bool rg = node(a).requires_grad;
    Var out = push(A.middleCols(start, count), rg, nullptr);
    if (rg) {
        node(out).back = [a, out, start, count](Tape& t) {
            t.grad_mut(a).middleCols(start, count) += t.node(out).grad;
        };
    }
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) fail("concat_cols: no parts");
    Eigen::Index rows_n = value(parts[0]).rows();
    Eigen::Index total = 0;
    bool rg = false;
    for (Var p : parts) {
        if (value(p).rows() != rows_n) fail("concat_cols: row count mismatch");
        total += value(p).cols();
        rg = rg || node(p).requires_grad;
    }
    Matrix out(rows_n, total);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleCols(at, value(p).cols()) = value(p);
        at += value(p).cols();
    }
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
        node(o).back = [parts, o](Tape& t) {
            const Matrix& g = t.node(o).grad;
            Eigen::Index at2 = 0;
            for (Var p : parts) {
                Eigen::Index c = t.value(p).cols();
                if (t.node(p).requires_grad) t.grad_mut(p) += g.middleCols(at2, c);
                at2 += c;
            }
        };
    }
    return o;
}

Var Tape::row_mean(Var a) {
    const Matrix& A = value(a);
    bool rg = node(a).requires_grad;
    // push_back may reallocate nodes_, so derive sizes before push
    const double inv = 1.0 / static_cast<double>(A.cols());
    Var out = push(A.rowwise().mean(), rg, nullptr);
    if (rg) {
        node(out).back = [a, out, inv](Tape& t) {
            const Matrix& g = t.node(out).grad; // Mx1
            t.grad_mut(a) += (g * Matrix::Ones(1, t.value(a).cols())) * inv;
        };
    }
    return out;
}

Var Tape::mean_all(Var a) {
    const Matrix& A = value(a);
    Matrix m(1, 1);
    m(0, 0) = A.mean();
    bool rg = node(a).requires_grad;
    const double inv = 1.0 / static_cast<double>(A.size());
    Var out = push(std::move(m), rg, nullptr);
    if (rg) {
        node(out).back = [a, out, inv](Tape& t) {
            t.grad_mut(a).array() += t.node(out).grad(0, 0) * inv;
        };
    }
    return out;
}

Var Tape::sum_all(Var a) {
    Matrix m(1, 1);
    m(0, 0) = value(a).sum();
    bool rg = node(a).requires_grad;
    Var out = push(std::move(m), rg, nullptr);
    if (rg) {
        node(out).back = [a, out](Tape& t) {
            t.grad_mut(a).array() += t.node(out).grad(0, 0);
        };
    }
    return out;
}

Var Tape::sub_scalar(Var a, Var s) {
    if (value(s).rows() != 1 || value(s).cols() != 1) fail("sub_scalar: s must be 1x1");
    bool rg = node(a).requires_grad || node(s).requires_grad;
    Var out = push((value(a).array() - value(s)(0, 0)).matrix(), rg, nullptr);
    if (rg) {
        node(out).back = [a, s, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) t.grad_mut(a) += g;
            if (t.node(s).requires_grad) t.grad_mut(s)(0, 0) -= g.sum();
        };
    }
    return out;
}

Var Tape::row_scale(Var a, Var s) {
    const Matrix& A = value(a);
    const Matrix& S = value(s);
    if (S.cols() != 1 || S.rows() != A.rows()) fail("row_scale: s must be Mx1");
    bool rg = node(a).requires_grad || node(s).requires_grad;
    Var out = push(A.array().colwise() * S.col(0).array(), rg, nullptr);
    if (rg) {
        node(out).back = [a, s, out](Tape& t) {
            const Matrix& g = t.node(out).grad;
            if (t.node(a).requires_grad) {
                t.grad_mut(a) += (g.array().colwise() * t.value(s).col(0).array()).matrix();
            }
            if (t.node(s).requires_grad) {
                t.grad_mut(s).col(0) += g.cwiseProduct(t.value(a)).rowwise().sum();
            }
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    const Matrix& A = value(a);
    Matrix out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        Eigen::ArrayXd row = A.row(i).array();
        row -= row.maxCoeff();
        Eigen::ArrayXd e = row.exp();
        out.row(i) = (e / e.sum()).matrix().transpose();
    }
    bool rg = node(a).requires_grad;
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
        node(o).back = [a, o](Tape& t) {
            const Matrix& y = t.value(o);
            const Matrix& g = t.node(o).grad;
            Matrix& ga = t.grad_mut(a);
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double dot = y.row(i).cwiseProduct(g.row(i)).sum();
                ga.row(i) += y.row(i).cwiseProduct(g.row(i)) - dot * y.row(i);
            }
        };
    }
    return o;
}

Var Tape::temporal_conv(Var x, Var W, Var b, int w, int cin, int cout, int kernel,
                        int dilation) {
    const Matrix& X = value(x);
    const Matrix& Wm = value(W);
    const Matrix& B = value(b);
    if (X.cols() != static_cast<Eigen::Index>(w) * cin) fail("temporal_conv: x cols != w*cin");
    if (Wm.rows() != static_cast<Eigen::Index>(kernel) * cin || Wm.cols() != cout)
        fail("temporal_conv: W must be (kernel*cin)xcout");
    if (B.rows() != 1 || B.cols() != cout) fail("temporal_conv: b must be 1xcout");
    if (dilation < 1 || kernel < 1) fail("temporal_conv: bad kernel/dilation");

    const Eigen::Index M = X.rows();
    Matrix out(M, static_cast<Eigen::Index>(w) * cout);
    for (int t = 0; t < w; ++t) {
        Matrix acc = Matrix::Zero(M, cout);
        for (int j = 0; j < kernel; ++j) {
            int src = t - j * dilation;
            if (src < 0) continue; // causal zero padding
            acc.noalias() += X.middleCols(static_cast<Eigen::Index>(src) * cin, cin) *
                             Wm.middleRows(static_cast<Eigen::Index>(j) * cin, cin);
        }
        out.middleCols(static_cast<Eigen::Index>(t) * cout, cout) = acc.rowwise() + B.row(0);
    }

    bool rg = node(x).requires_grad || node(W).requires_grad || node(b).requires_grad;
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
        node(o).back = [x, W, b, o, w, cin, cout, kernel, dilation](Tape& t) {
            const Matrix& g = t.node(o).grad;
            const Matrix& Xv = t.value(x);
            const Matrix& Wv = t.value(W);
            const bool need_x = t.node(x).requires_grad;
            const bool need_w = t.node(W).requires_grad;
            const bool need_b = t.node(b).requires_grad;
            for (int tt = 0; tt < w; ++tt) {
                const auto gt = g.middleCols(static_cast<Eigen::Index>(tt) * cout, cout);
                if (need_b) t.grad_mut(b).row(0) += gt.colwise().sum();
                for (int j = 0; j < kernel; ++j) {
                    int src = tt - j * dilation;
                    if (src < 0) continue;
                    if (need_x) {
                        t.grad_mut(x).middleCols(static_cast<Eigen::Index>(src) * cin, cin) +=
                            gt * Wv.middleRows(static_cast<Eigen::Index>(j) * cin, cin)
                                     .transpose();
                    }
                    if (need_w) {
                        t.grad_mut(W).middleRows(static_cast<Eigen::Index>(j) * cin, cin) +=
                            Xv.middleCols(static_cast<Eigen::Index>(src) * cin, cin)
                                .transpose() *
                            gt;
                    }
                }
            }
        };
    }
    return o;
}

Var Tape::spatial_mix(Var A, Var x, int group_size) {
    const Matrix& Am = value(A);
    const Matrix& X = value(x);
    if (Am.rows() != Am.cols() || Am.rows() != group_size) fail("spatial_mix: A must be nxn");
    if (X.rows() % group_size != 0) fail("spatial_mix: rows not a multiple of group size");

    const Eigen::Index groups = X.rows() / group_size;
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index gidx = 0; gidx < groups; ++gidx) {
        out.middleRows(gidx * group_size, group_size).noalias() =
            Am * X.middleRows(gidx * group_size, group_size);
    }
    bool rg = node(A).requires_grad || node(x).requires_grad;
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
        node(o).back = [A, x, o, group_size](Tape& t) {
            const Matrix& g = t.node(o).grad;
            const Matrix& Xv = t.value(x);
            const Matrix& Av = t.value(A);
            const Eigen::Index groups2 = Xv.rows() / group_size;
            for (Eigen::Index gidx = 0; gidx < groups2; ++gidx) {
                const auto gblock = g.middleRows(gidx * group_size, group_size);
                if (t.node(x).requires_grad) {
                    t.grad_mut(x).middleRows(gidx * group_size, group_size).noalias() +=
                        Av.transpose() * gblock;
                }
                if (t.node(A).requires_grad) {
                    t.grad_mut(A).noalias() +=
                        gblock * Xv.middleRows(gidx * group_size, group_size).transpose();
                }
            }
        };
    }
    return o;
}

void Tape::backward(Var scalar_out) {
    const Matrix& v = value(scalar_out);
    if (v.rows() != 1 || v.cols() != 1) fail("backward: output must be 1x1");
    if (backward_done_) fail("backward: already run on this tape");
    backward_done_ = true;
    node(scalar_out).grad(0, 0) = 1.0;
    for (int i = scalar_out.idx; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this);
    }
}

} // namespace fairstg::ad
