#include "revtune/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace revtune {

namespace {

std::string shape_str(const TensorPtr& t) {
    return "[" + std::to_string(t->rows()) + "x" + std::to_string(t->cols()) + "]";
}

bool any_requires_grad(std::initializer_list<TensorPtr> ts) {
    for (const auto& t : ts) {
        if (t->requires_grad) return true;
    }
    return false;
}

}  // namespace

TensorPtr Tensor::create(Matrix v, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->value = std::move(v);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return create(Matrix::Zero(rows, cols), requires_grad);
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return create(std::move(m), requires_grad);
}

TensorPtr Tensor::randn(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng,
                        bool requires_grad) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = rng.normal(0.0, stddev);
        }
    }
    return create(std::move(m), requires_grad);
}

void Tensor::zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }

void Tensor::ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) zero_grad();
}

double Tensor::grad_sq_sum() const {
    if (grad.size() == 0) return 0.0;
    return grad.array().square().sum();
}

void Tape::record(TensorPtr output, std::function<void()> backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw std::invalid_argument("backward expects a scalar loss, got " +
                                    std::to_string(loss->rows()) + "x" +
                                    std::to_string(loss->cols()));
    }
    // Intermediate grads are per-call scratch; leaf grads accumulate.
    for (auto& e : entries_) e.output->zero_grad();
    loss->ensure_grad();
    loss->grad(0, 0) += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward_fn();
    }
}

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->rows()) {
        throw std::invalid_argument("matmul dimension mismatch: " + shape_str(a) + " x " +
                                    shape_str(b));
    }
    auto out = Tensor::create(a->value * b->value, any_requires_grad({a, b}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad.noalias() += out->grad * b->value.transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad.noalias() += a->value.transpose() * out->grad;
            }
        });
    }
    return out;
}

TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w) {
    if (x->cols() != w->cols()) {
        throw std::invalid_argument("linear dimension mismatch: x " + shape_str(x) + ", w " +
                                    shape_str(w));
    }
    auto out = Tensor::create(x->value * w->value.transpose(), any_requires_grad({x, w}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, w, out] {
            if (x->requires_grad) {
                x->ensure_grad();
                x->grad.noalias() += out->grad * w->value;
            }
            if (w->requires_grad) {
                w->ensure_grad();
                w->grad.noalias() += out->grad.transpose() * x->value;
            }
        });
    }
    return out;
}

TensorPtr transpose(Tape& tape, const TensorPtr& a) {
    auto out = Tensor::create(a->value.transpose(), a->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [a, out] {
            a->ensure_grad();
            a->grad += out->grad.transpose();
        });
    }
    return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) {
        throw std::invalid_argument("add shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    auto out = Tensor::create(a->value + b->value, any_requires_grad({a, b}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad += out->grad;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad += out->grad;
            }
        });
    }
    return out;
}

TensorPtr add_rowwise(Tape& tape, const TensorPtr& x, const TensorPtr& bias) {
    if (bias->rows() != 1 || bias->cols() != x->cols()) {
        throw std::invalid_argument("add_rowwise expects bias [1x" + std::to_string(x->cols()) +
                                    "], got " + shape_str(bias));
    }
    Matrix v = x->value;
    v.rowwise() += bias->value.row(0);
    auto out = Tensor::create(std::move(v), any_requires_grad({x, bias}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, bias, out] {
            if (x->requires_grad) {
                x->ensure_grad();
                x->grad += out->grad;
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                bias->grad.row(0) += out->grad.colwise().sum();
            }
        });
    }
    return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) {
        throw std::invalid_argument("mul shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    auto out = Tensor::create(a->value.cwiseProduct(b->value), any_requires_grad({a, b}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad.array() += out->grad.array() * b->value.array();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad.array() += out->grad.array() * a->value.array();
            }
        });
    }
    return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
    auto out = Tensor::create(a->value * c, a->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [a, c, out] {
            a->ensure_grad();
            a->grad += out->grad * c;
        });
    }
    return out;
}

TensorPtr gelu(Tape& tape, const TensorPtr& x) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Matrix v = x->value.unaryExpr(
        [inv_sqrt2](double t) { return 0.5 * t * (1.0 + std::erf(t * inv_sqrt2)); });
    auto out = Tensor::create(std::move(v), x->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, out, inv_sqrt2] {
            x->ensure_grad();
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
            x->grad.array() +=
                out->grad.array() *
                x->value
                    .unaryExpr([inv_sqrt2, inv_sqrt2pi](double t) {
                        return 0.5 * (1.0 + std::erf(t * inv_sqrt2)) +
                               t * std::exp(-0.5 * t * t) * inv_sqrt2pi;
                    })
                    .array();
        });
    }
    return out;
}

TensorPtr softmax_rows(Tape& tape, const TensorPtr& x) {
    Matrix v(x->rows(), x->cols());
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        double mx = x->value.row(i).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = (x->value.row(i).array() - mx).exp();
        v.row(i) = (e / e.sum()).matrix();
    }
    auto out = Tensor::create(std::move(v), x->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (Eigen::Index i = 0; i < x->rows(); ++i) {
                double dot = out->grad.row(i).dot(out->value.row(i));
                x->grad.row(i).array() +=
                    (out->grad.row(i).array() - dot) * out->value.row(i).array();
            }
        });
    }
    return out;
}

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps) {
    if (gain->rows() != 1 || gain->cols() != x->cols() || bias->rows() != 1 ||
        bias->cols() != x->cols()) {
        throw std::invalid_argument("layer_norm gain/bias must be [1x" +
                                    std::to_string(x->cols()) + "]");
    }
    const Eigen::Index n = x->cols();
    Matrix xhat(x->rows(), n);
    Eigen::ArrayXd inv_sigma(x->rows());
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        double mean = x->value.row(i).mean();
        double var = (x->value.row(i).array() - mean).square().sum() / static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma(i) = inv;
        xhat.row(i) = ((x->value.row(i).array() - mean) * inv).matrix();
    }
    Matrix v = xhat.array().rowwise() * gain->value.row(0).array();
    v.rowwise() += bias->value.row(0);
    auto out = Tensor::create(std::move(v), any_requires_grad({x, gain, bias}));
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, gain, bias, out, xhat, inv_sigma] {
            using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
            for (Eigen::Index i = 0; i < x->rows(); ++i) {
                RowArray dy = out->grad.row(i).array();
                RowArray xh = xhat.row(i).array();
                if (gain->requires_grad) {
                    gain->ensure_grad();
                    gain->grad.row(0).array() += dy * xh;
                }
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    bias->grad.row(0).array() += dy;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    RowArray dxhat = dy * gain->value.row(0).array();
                    double m1 = dxhat.mean();
                    double m2 = (dxhat * xh).mean();
                    x->grad.row(i).array() += (dxhat - m1 - xh * m2) * inv_sigma(i);
                }
            }
        });
    }
    return out;
}

TensorPtr embedding_lookup(Tape& tape, const TensorPtr& table, const std::vector<int>& ids) {
    Matrix v(static_cast<Eigen::Index>(ids.size()), table->cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->rows()) {
            throw std::invalid_argument("embedding id " + std::to_string(ids[i]) +
                                        " out of range [0," + std::to_string(table->rows()) + ")");
        }
        v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    auto out = Tensor::create(std::move(v), table->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [table, out, ids] {
            table->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                table->grad.row(ids[i]) += out->grad.row(static_cast<Eigen::Index>(i));
            }
        });
    }
    return out;
}

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count <= 0 || start + count > x->cols()) {
        throw std::invalid_argument("slice_cols out of range for " + shape_str(x));
    }
    auto out =
        Tensor::create(Matrix(x->value.block(0, start, x->rows(), count)), x->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, out, start, count] {
            x->ensure_grad();
            x->grad.block(0, start, x->rows(), count) += out->grad;
        });
    }
    return out;
}

TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols on empty list");
    Eigen::Index rows = parts[0]->rows();
    Eigen::Index cols = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
        cols += p->cols();
        needs_grad = needs_grad || p->requires_grad;
    }
    Matrix v(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.block(0, at, rows, p->cols()) = p->value;
        at += p->cols();
    }
    auto out = Tensor::create(std::move(v), needs_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [parts, out, rows] {
            Eigen::Index at = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    p->grad += out->grad.block(0, at, rows, p->cols());
                }
                at += p->cols();
            }
        });
    }
    return out;
}

TensorPtr select_row(Tape& tape, const TensorPtr& x, Eigen::Index row) {
    if (row < 0 || row >= x->rows()) {
        throw std::invalid_argument("select_row index " + std::to_string(row) + " out of range");
    }
    auto out = Tensor::create(Matrix(x->value.row(row)), x->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, out, row] {
            x->ensure_grad();
            x->grad.row(row) += out->grad.row(0);
        });
    }
    return out;
}

TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout p must be in [0,1)");
    if (p == 0.0) return x;
    Matrix mask(x->rows(), x->cols());
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        for (Eigen::Index j = 0; j < x->cols(); ++j) {
            mask(i, j) = rng.uniform() < p ? 0.0 : keep;
        }
    }
    auto out = Tensor::create(x->value.cwiseProduct(mask), x->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [x, out, mask] {
            x->ensure_grad();
            x->grad.array() += out->grad.array() * mask.array();
        });
    }
    return out;
}

namespace {

// log softmax row with max subtraction; returns probabilities and the log
// normalizer so losses share one numerically stable path.
Eigen::ArrayXd stable_softmax(const Eigen::ArrayXd& z, double* log_z) {
    double mx = z.maxCoeff();
    Eigen::ArrayXd e = (z - mx).exp();
    double s = e.sum();
    if (log_z) *log_z = mx + std::log(s);
    return e / s;
}

}  // namespace

TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits, int target) {
    if (logits->rows() != 1) {
        throw std::invalid_argument("softmax_cross_entropy expects a 1xN logit row, got " +
                                    shape_str(logits));
    }
    if (!logits->value.allFinite()) {
        throw std::runtime_error("softmax_cross_entropy: non-finite logits");
    }
    if (target < 0 || target >= logits->cols()) {
        throw std::invalid_argument("softmax_cross_entropy target " + std::to_string(target) +
                                    " out of range [0," + std::to_string(logits->cols()) + ")");
    }
    double log_z = 0.0;
    Eigen::ArrayXd probs = stable_softmax(logits->value.row(0).transpose().array(), &log_z);
    double loss = log_z - logits->value(0, target);
    auto out = Tensor::scalar(loss, logits->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [logits, out, probs, target] {
            logits->ensure_grad();
            double g = out->grad(0, 0);
            logits->grad.row(0) += (g * probs).matrix().transpose();
            logits->grad(0, target) -= g;
        });
    }
    return out;
}

TensorPtr cross_entropy_rows(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets,
                             const std::vector<std::uint8_t>& mask) {
    const Eigen::Index t = logits->rows();
    if (static_cast<Eigen::Index>(targets.size()) != t ||
        static_cast<Eigen::Index>(mask.size()) != t) {
        throw std::invalid_argument("cross_entropy_rows: targets/mask length must equal rows");
    }
    std::size_t selected = 0;
    for (auto m : mask) selected += m ? 1 : 0;
    if (selected == 0) {
        throw std::invalid_argument("cross_entropy_rows: mask selects zero positions");
    }
    double loss = 0.0;
    Matrix probs(t, logits->cols());
    for (Eigen::Index i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || targets[i] >= logits->cols()) {
            throw std::invalid_argument("cross_entropy_rows target out of range at row " +
                                        std::to_string(i));
        }
        double log_z = 0.0;
        probs.row(i) =
            stable_softmax(logits->value.row(i).transpose().array(), &log_z).matrix().transpose();
        loss += log_z - logits->value(i, targets[i]);
    }
    auto out = Tensor::scalar(loss, logits->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [logits, out, probs, targets, mask] {
            logits->ensure_grad();
            double g = out->grad(0, 0);
            for (Eigen::Index i = 0; i < logits->rows(); ++i) {
                if (!mask[i]) continue;
                logits->grad.row(i) += g * probs.row(i);
                logits->grad(i, targets[i]) -= g;
            }
        });
    }
    return out;
}

TensorPtr sigmoid_bce(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets) {
    if (logits->rows() != 1 || static_cast<Eigen::Index>(targets.size()) != logits->cols()) {
        throw std::invalid_argument("sigmoid_bce expects 1xN logits with N targets");
    }
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits->cols(); ++i) {
        if (targets[i] != 0 && targets[i] != 1) {
            throw std::invalid_argument("sigmoid_bce target must be 0 or 1, got " +
                                        std::to_string(targets[i]));
        }
        double z = logits->value(0, i);
        // max(z,0) - z*t + log(1 + exp(-|z|))
        loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    auto out = Tensor::scalar(loss, logits->requires_grad);
    if (tape.recording() && out->requires_grad) {
        tape.record(out, [logits, out, targets] {
            logits->ensure_grad();
            double g = out->grad(0, 0);
            for (Eigen::Index i = 0; i < logits->cols(); ++i) {
                double z = logits->value(0, i);
                double sig = 1.0 / (1.0 + std::exp(-z));
                logits->grad(0, i) += g * (sig - targets[i]);
            }
        });
    }
    return out;
}

}  // namespace revtune
