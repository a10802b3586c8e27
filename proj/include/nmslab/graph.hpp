#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nmslab/tensor.hpp"

namespace nmslab::ad {

// Tape-style reverse-mode autodiff. Ops are recorded in execution order;
// backward() replays the tape in reverse and accumulates (+=) into each
// tensor's grad buffer, so shared inputs receive summed gradients.
class Graph {
 public:
  // y = x W + b, x: [n x in], W: [in x out], b: [out]
  TensorPtr linear(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
    const std::size_t n = x->rows();
    const std::size_t in = x->cols();
    const std::size_t out = W->cols();
    if (W->rows() != in) throw std::invalid_argument("linear: weight shape mismatch");
    if (b->size() != out) throw std::invalid_argument("linear: bias shape mismatch");
    TensorPtr y = make_tensor({n, out});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < out; ++c) {
        double acc = b->values[c];
        for (std::size_t k = 0; k < in; ++k) {
          acc += x->at(r, k) * W->at(k, c);
        }
        y->at(r, c) = acc;
      }
    }
    tape_.push_back([x, W, b, y, n, in, out]() {
      x->ensure_grad();
      W->ensure_grad();
      b->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < out; ++c) {
          const double gy = y->grad[r * out + c];
          if (gy == 0.0) continue;
          b->grad[c] += gy;
          for (std::size_t k = 0; k < in; ++k) {
            x->grad[r * in + k] += gy * W->values[k * out + c];
            W->grad[k * out + c] += gy * x->values[r * in + k];
          }
        }
      }
    });
    return y;
  }

  TensorPtr relu(const TensorPtr& x) {
    TensorPtr y = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
      y->values[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
    }
    tape_.push_back([x, y]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->size(); ++i) {
        if (x->values[i] > 0.0) x->grad[i] += y->grad[i];
      }
    });
    return y;
  }

  TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(*a, *b, "add");
    TensorPtr y = make_tensor(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) y->values[i] = a->values[i] + b->values[i];
    tape_.push_back([a, b, y]() {
      a->ensure_grad();
      b->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) {
        a->grad[i] += y->grad[i];
        b->grad[i] += y->grad[i];
      }
    });
    return y;
  }

  // Concatenate along the feature axis: [n x c1], [n x c2] -> [n x (c1+c2)]
  TensorPtr concat_cols(const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t n = xs[0]->rows();
    std::size_t total = 0;
    for (const TensorPtr& x : xs) {
      if (x->rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
      total += x->cols();
    }
    TensorPtr y = make_tensor({n, total});
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t off = 0;
      for (const TensorPtr& x : xs) {
        for (std::size_t c = 0; c < x->cols(); ++c) y->at(r, off + c) = x->at(r, c);
        off += x->cols();
      }
    }
    tape_.push_back([xs, y, n]() {
      for (const TensorPtr& x : xs) x->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        std::size_t off = 0;
        for (const TensorPtr& x : xs) {
          const std::size_t cc = x->cols();
          for (std::size_t c = 0; c < cc; ++c) {
            x->grad[r * cc + c] += y->grad[r * y->cols() + off + c];
          }
          off += cc;
        }
      }
    });
    return y;
  }

  // Rows of the output are rows[k] of the input; backward scatter-adds.
  TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::size_t>& rows) {
    const std::size_t c = x->cols();
    TensorPtr y = make_tensor({rows.size(), c});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] >= x->rows()) throw std::invalid_argument("gather_rows: index out of range");
      for (std::size_t j = 0; j < c; ++j) y->at(k, j) = x->at(rows[k], j);
    }
    tape_.push_back([x, y, rows, c]() {
      x->ensure_grad();
      for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t j = 0; j < c; ++j) {
          x->grad[rows[k] * c + j] += y->grad[k * c + j];
        }
      }
    });
    return y;
  }

  // Columnwise maximum within each segment: [K x l] -> [n x l]. Segment ids
  // must be < n and every segment non-empty. Backward routes each output
  // gradient to the first argmax row of its segment.
  TensorPtr segmented_max_pool(const TensorPtr& x, const std::vector<std::size_t>& segments,
                               std::size_t num_segments) {
    const std::size_t k_rows = x->rows();
    const std::size_t l = x->cols();
    if (segments.size() != k_rows) {
      throw std::invalid_argument("segmented_max_pool: segment ids must cover every row");
    }
    std::vector<bool> seen(num_segments, false);
    for (std::size_t s : segments) {
      if (s >= num_segments) throw std::invalid_argument("segmented_max_pool: segment id too big");
      seen[s] = true;
    }
    for (bool s : seen) {
      if (!s) throw std::invalid_argument("segment without members");
    }
    TensorPtr y = make_tensor({num_segments, l});
    auto argmax = std::make_shared<std::vector<std::size_t>>(num_segments * l, k_rows);
    for (std::size_t r = 0; r < k_rows; ++r) {
      const std::size_t s = segments[r];
      for (std::size_t c = 0; c < l; ++c) {
        const std::size_t idx = s * l + c;
        if ((*argmax)[idx] == k_rows || x->at(r, c) > y->values[idx]) {
          y->values[idx] = x->at(r, c);
          (*argmax)[idx] = r;
        }
      }
    }
    tape_.push_back([x, y, argmax, num_segments, l]() {
      x->ensure_grad();
      for (std::size_t idx = 0; idx < num_segments * l; ++idx) {
        const std::size_t r = (*argmax)[idx];
        x->grad[r * l + idx % l] += y->grad[idx];
      }
    });
    return y;
  }

  // Picks one entry per row: [n x C] -> [n x 1], entry cols[r] of row r.
  TensorPtr select_per_row(const TensorPtr& x, const std::vector<std::size_t>& cols) {
    const std::size_t n = x->rows();
    const std::size_t c = x->cols();
    if (cols.size() != n) throw std::invalid_argument("select_per_row: length mismatch");
    TensorPtr y = make_tensor({n, 1});
    for (std::size_t r = 0; r < n; ++r) {
      if (cols[r] >= c) throw std::invalid_argument("select_per_row: column out of range");
      y->values[r] = x->at(r, cols[r]);
    }
    tape_.push_back([x, y, cols, c]() {
      x->ensure_grad();
      for (std::size_t r = 0; r < cols.size(); ++r) {
        x->grad[r * c + cols[r]] += y->grad[r];
      }
    });
    return y;
  }

  // sum_i w_i * log(1 + exp(-s_i * y_i)), computed in the stable form
  // log1p(exp(-|z|)) + max(0, -z) for z = s*y. Gradient: -w*y*sigmoid(-s*y).
  TensorPtr weighted_logistic_loss(const TensorPtr& s, const std::vector<int>& y,
                                   const std::vector<double>& w) {
    const std::size_t n = s->size();
    if (y.size() != n || w.size() != n) {
      throw std::invalid_argument("weighted_logistic_loss: length mismatch");
    }
    TensorPtr loss = make_tensor({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = s->values[i] * static_cast<double>(y[i]);
      acc += w[i] * (std::log1p(std::exp(-std::abs(z))) + std::max(0.0, -z));
    }
    loss->values[0] = acc;
    tape_.push_back([s, loss, y, w, n]() {
      s->ensure_grad();
      const double g = loss->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double z = s->values[i] * static_cast<double>(y[i]);
        const double sig = 1.0 / (1.0 + std::exp(z));  // sigmoid(-z), stable for z >= 0
        const double sig_stable = z >= 0.0 ? sig : 1.0 - 1.0 / (1.0 + std::exp(-z));
        s->grad[i] += g * (-w[i] * static_cast<double>(y[i]) * sig_stable);
      }
    });
    return loss;
  }

  TensorPtr sum(const TensorPtr& x) {
    TensorPtr y = make_tensor({1});
    double acc = 0.0;
    for (double v : x->values) acc += v;
    y->values[0] = acc;
    tape_.push_back([x, y]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += y->grad[0];
    });
    return y;
  }

  // Seeds root->grad with 1 and replays the tape in reverse.
  void backward(const TensorPtr& root) {
    root->ensure_grad();
    std::fill(root->grad.begin(), root->grad.end(), 1.0);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

  void clear() { tape_.clear(); }
  std::size_t num_ops() const { return tape_.size(); }

 private:
  std::vector<std::function<void()>> tape_;
};

}  // namespace nmslab::ad
