#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "revtune/rng.hpp"

namespace revtune {

// Row-major 64-bit dense storage. All tensors in the engine are rank 1 or 2;
// rank-1 values are carried as 1 x n matrices.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor {
public:
    Matrix value;
    Matrix grad;  // same dims as value once touched by backward; empty until then
    bool requires_grad = false;

    static TensorPtr create(Matrix v, bool requires_grad = false);
    static TensorPtr zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);
    static TensorPtr randn(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng,
                           bool requires_grad = false);

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    Eigen::Index size() const { return value.size(); }
    bool is_scalar() const { return value.size() == 1; }

    // Allocates (or re-zeroes) the gradient buffer.
    void zero_grad();
    // Allocates the gradient buffer if missing; keeps accumulated values.
    void ensure_grad();
    double grad_sq_sum() const;
};

// Ordered record of the differentiable operations executed through it.
// backward() replays the record in reverse, accumulating into the grad of
// every requires_grad tensor reachable from the loss. Gradients of leaf
// tensors accumulate across calls; intermediate grads are reset per call.
class Tape {
public:
    Tape() = default;
    explicit Tape(bool recording) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void record(TensorPtr output, std::function<void()> backward_fn);
    void backward(const TensorPtr& loss);
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        TensorPtr output;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
    bool recording_ = true;
};

// --- differentiable operations ------------------------------------------

// c[m x n] = a[m x k] * b[k x n]
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// y[m x d_out] = x[m x d_in] * w[d_out x d_in]^T
TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w);

TensorPtr transpose(Tape& tape, const TensorPtr& a);
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
// x[m x n] + bias[1 x n] broadcast over rows
TensorPtr add_rowwise(Tape& tape, const TensorPtr& x, const TensorPtr& bias);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& a, double c);
TensorPtr gelu(Tape& tape, const TensorPtr& x);

// Row-wise softmax with max subtraction; rows sum to 1.
TensorPtr softmax_rows(Tape& tape, const TensorPtr& x);

// Per-row normalization with learned gain/bias, population variance, epsilon
// inside the square root.
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-5);

// Gathers rows of table[v x d] at ids; backward scatter-adds.
TensorPtr embedding_lookup(Tape& tape, const TensorPtr& table, const std::vector<int>& ids);

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, Eigen::Index start, Eigen::Index count);
TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr select_row(Tape& tape, const TensorPtr& x, Eigen::Index row);

// Inverted dropout on training paths; identity when p == 0.
TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, Rng& rng);

// loss = -log softmax(logits)[target]; logits is 1 x n.
TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits, int target);

// Sum over rows selected by mask of -log softmax(logits_row)[target_row].
TensorPtr cross_entropy_rows(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets,
                             const std::vector<std::uint8_t>& mask);

// Multi-label binary cross-entropy over a 1 x n logit row, log-sum-exp form.
TensorPtr sigmoid_bce(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets);

}  // namespace revtune
