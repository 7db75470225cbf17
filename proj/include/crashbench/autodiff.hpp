#pragma once
#include <cassert>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over row-major 2-D f64
// tensors. Forward evaluation is eager; backward closures are recorded on a
// tape and replayed in reverse. Exactly the operations the surrogate needs.

namespace crashbench::ad {

struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> d;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, 0.0) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor ones(int r, int c);
    static Tensor from(int r, int c, std::initializer_list<double> vals);

    double& at(int i, int j) { return d[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return d[static_cast<std::size_t>(i) * cols + j]; }
    std::size_t size() const { return d.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

class Tape {
  public:
    using Ref = int;

    // Leaves. Gradients are accumulated only for grad-enabled leaves and
    // anything derived from them.
    Ref input(const Tensor& t, bool needs_grad);
    Ref constant(const Tensor& t) { return input(t, false); }

    const Tensor& val(Ref r) const { return nodes_[static_cast<std::size_t>(r)].value; }
    const Tensor& grad(Ref r) const { return nodes_[static_cast<std::size_t>(r)].grad; }

    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref mul(Ref a, Ref b);          // elementwise
    Ref scale(Ref a, double c);
    Ref matmul(Ref a, Ref b);       // A(m,k) * B(k,n)
    Ref matmul_nt(Ref a, Ref b);    // A(m,k) * B(n,k)^T
    Ref matmul_tn(Ref a, Ref b);    // A(k,m)^T * B(k,n)
    Ref add_rowvec(Ref a, Ref b);   // A(m,n) + broadcast b(1,n)
    Ref tanh_(Ref a);
    Ref softmax_rows(Ref a);
    Ref layer_norm_rows(Ref a, Ref gamma, Ref beta, double eps = 1e-8);
    Ref concat_cols(const std::vector<Ref>& parts);
    Ref slice_cols(Ref a, int c0, int c1);  // [c0, c1)
    Ref concat_rows(const std::vector<Ref>& parts);
    Ref slice_rows(Ref a, int r0, int r1);
    Ref rowscale(Ref a, Ref r);     // A(m,n) scaled per-row by r(m,1)
    Ref reciprocal(Ref a);
    Ref sse(Ref pred, const Tensor& target);  // sum of squared error, 1x1

    void backward(Ref loss);  // loss must be 1x1
    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;  // empty for leaves
    };

    Ref push(Tensor value, bool needs_grad, std::function<void()> back = {});
    Tensor& grad_mut(Ref r) { return nodes_[static_cast<std::size_t>(r)].grad; }
    bool needs(Ref r) const { return nodes_[static_cast<std::size_t>(r)].needs_grad; }

    // deque keeps val()/grad() references stable while later ops are recorded
    std::deque<Node> nodes_;
};

}  // namespace crashbench::ad
