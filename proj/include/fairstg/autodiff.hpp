#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace fairstg::ad {

using Matrix = Eigen::MatrixXd;

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense fp64 matrices. One forward build, one
// backward sweep; a fresh tape is created per training/eval step.
class Tape {
public:
    Var leaf(Matrix value, bool requires_grad = true);
    Var constant(Matrix value) { return leaf(std::move(value), false); }
    Var scalar_constant(double v);

    const Matrix& value(Var v) const { return node(v).value; }
    const Matrix& grad(Var v) const;

    // Elementwise / linear algebra
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var scale(Var a, double s);
    Var affine(Var a, double mul, double shift); // mul*a + shift
    Var transpose(Var a);
    Var add_rowvec(Var m, Var row); // row: 1xC broadcast over rows of m

    // Nonlinearities
    Var relu(Var a);
    Var tanh_(Var a);
    Var sigmoid(Var a);
    Var abs_(Var a); // subgradient 0 at exactly 0
    Var square(Var a);
    Var log_(Var a);
    Var clamp(Var a, double lo, double hi); // zero gradient where clamped

    // Shape / gather
    Var rows(Var a, std::vector<int> idx); // gathered rows, grads scatter-add
    Var cols(Var a, int start, int count); // contiguous column block
    Var concat_cols(const std::vector<Var>& parts);

    // Reductions / broadcasts
    Var row_mean(Var a);              // MxC -> Mx1
    Var mean_all(Var a);              // -> 1x1
    Var sum_all(Var a);               // -> 1x1
    Var sub_scalar(Var a, Var s);     // s: 1x1, broadcast subtract
    Var row_scale(Var a, Var s);      // a: MxC, s: Mx1, scales row i by s(i)
    Var softmax_rows(Var a);

    // Structured ops for the forecasting stack.
    //
    // temporal_conv: x is Mx(w*cin) with time-major channel blocks
    // (column t*cin+c holds channel c at step t). Causal left-padded
    // convolution, output Mx(w*cout). W: (kernel*cin)xcout with tap j in
    // rows [j*cin, (j+1)*cin) reading step t - j*dilation; b: 1xcout.
    Var temporal_conv(Var x, Var W, Var b, int w, int cin, int cout,
                      int kernel, int dilation);

    // spatial_mix: x is MxC with M = g*n rows in group-major order; each
    // n-row block is left-multiplied by A (nxn).
    Var spatial_mix(Var A, Var x, int group_size);

    void backward(Var scalar_out);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> back;
        bool requires_grad = false;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Matrix value, bool requires_grad, std::function<void(Tape&)> back);
    Matrix& grad_mut(Var v) { return node(v).grad; }
    static void check_same_shape(const Matrix& a, const Matrix& b, const char* op);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace fairstg::ad
