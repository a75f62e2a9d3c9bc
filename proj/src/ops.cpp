#include "tesu/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "tesu/error.hpp"

namespace tesu {
namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap view(Tensor& t) {
  return MatMap(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

MatMap grad_view(const Tensor& t) {
  return MatMap(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

template <typename... Ts>
bool tracking(const Ts&... inputs) {
  return active_tape() != nullptr && (inputs.requires_grad() || ...);
}

void record(const Tensor& out, Tape::Backward fn) {
  active_tape()->record(out, std::move(fn));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    fail(ErrorKind::kDimension,
         std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_vector(const Tensor& t, std::size_t n, const char* op) {
  if (t.rank() != 1 || t.numel() != n) {
    fail(ErrorKind::kDimension, std::string(op) + ": expected vector [" + std::to_string(n) +
                                    "], got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension,
         std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_finite(const Tensor& t, const char* op) {
  if (!all_finite(t)) fail(ErrorKind::kInvalidArgument, std::string(op) + ": non-finite input");
}

void check_segments(const Segments& segments, std::size_t rows, const char* op) {
  std::size_t expect = 0;
  for (const auto& s : segments) {
    if (s.offset != expect || s.length == 0) {
      fail(ErrorKind::kDimension, std::string(op) + ": segments must be contiguous and nonempty");
    }
    expect += s.length;
  }
  if (expect != rows) {
    fail(ErrorKind::kDimension, std::string(op) + ": segments cover " + std::to_string(expect) +
                                    " rows, tensor has " + std::to_string(rows));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

}  // namespace

Segments single_segment(std::size_t length) { return {Segment{0, length}}; }

Segments segments_from_lengths(std::span<const std::size_t> lengths) {
  Segments out;
  out.reserve(lengths.size());
  std::size_t offset = 0;
  for (auto len : lengths) {
    out.push_back({offset, len});
    offset += len;
  }
  return out;
}

std::size_t total_length(const Segments& segments) {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.length;
  return n;
}

bool all_finite(const Tensor& x) {
  for (Real v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    fail(ErrorKind::kDimension,
         "matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool track = tracking(a, b);
  Tensor out = Tensor::zeros({a.rows(), b.cols()}, track);
  view(out).noalias() = view(a) * view(b);
  if (track) {
    record(out, [a, b, out]() mutable {
      auto g = grad_view(out);
      if (a.requires_grad()) grad_view(a).noalias() += g * view(b).transpose();
      if (b.requires_grad()) grad_view(b).noalias() += view(a).transpose() * g;
    });
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  if (a.cols() != b.cols()) {
    fail(ErrorKind::kDimension, "matmul_transposed: inner dimensions differ for " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool track = tracking(a, b);
  Tensor out = Tensor::zeros({a.rows(), b.rows()}, track);
  view(out).noalias() = view(a) * view(b).transpose();
  if (track) {
    record(out, [a, b, out]() mutable {
      auto g = grad_view(out);
      if (a.requires_grad()) grad_view(a).noalias() += g * view(b);
      if (b.requires_grad()) grad_view(b).noalias() += g.transpose() * view(a);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  if (x.cols() != weight.rows()) {
    fail(ErrorKind::kDimension, "linear: input " + shape_str(x.shape()) +
                                    " incompatible with weight " + shape_str(weight.shape()));
  }
  require_vector(bias, weight.cols(), "linear");
  const bool track = tracking(x, weight, bias);
  Tensor out = Tensor::zeros({x.rows(), weight.cols()}, track);
  auto o = view(out);
  o.noalias() = view(x) * view(weight);
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b(bias.ptr(),
                                                             static_cast<Eigen::Index>(bias.numel()));
  o.rowwise() += b;
  if (track) {
    record(out, [x, weight, bias, out]() mutable {
      auto g = grad_view(out);
      if (x.requires_grad()) grad_view(x).noalias() += g * view(weight).transpose();
      if (weight.requires_grad()) grad_view(weight).noalias() += view(x).transpose() * g;
      if (bias.requires_grad()) {
        Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> gb(
            bias.grad().data(), static_cast<Eigen::Index>(bias.numel()));
        gb += g.colwise().sum();
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tracking(a, b);
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (track) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool track = tracking(a, b);
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (track) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool track = tracking(a, b);
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (track) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Real factor) {
  const bool track = tracking(a);
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (track) {
    record(out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_matrix(x, "add_row");
  require_vector(row, x.cols(), "add_row");
  const bool track = tracking(x, row);
  Tensor out = Tensor::zeros(x.shape(), track);
  const std::size_t m = x.rows(), n = x.cols();
  auto o = out.data();
  auto xs = x.data();
  auto r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xs[i * n + j] + r[j];
  if (track) {
    record(out, [x, row, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = row.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  const bool track = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = xs[i];
    const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
    o[i] = static_cast<Real>(0.5 * v * (1.0 + t));
  }
  if (track) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xs = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xs[i];
        const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
        gx[i] += static_cast<Real>(g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt));
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  require_finite(x, "softmax_rows");
  const bool track = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), track);
  const std::size_t m = x.rows(), n = x.cols();
  auto xs = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = xs.data() + i * n;
    const Real mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) {
      o[i * n + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / total);
    }
  }
  if (track) {
    record(out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += static_cast<Real>(y[i * n + j] * (g[i * n + j] - dot));
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (n < 2) fail(ErrorKind::kDimension, "layer_norm: need at least 2 columns, got " + shape_str(x.shape()));
  require_vector(gain, n, "layer_norm");
  require_vector(bias, n, "layer_norm");
  const bool track = tracking(x, gain, bias);
  Tensor out = Tensor::zeros(x.shape(), track);
  std::vector<Real> xhat(m * n);
  std::vector<double> inv_std(m);
  auto xs = x.data();
  auto o = out.data();
  auto ga = gain.data();
  auto be = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = xs.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = static_cast<Real>((row[j] - mu) * inv);
      xhat[i * n + j] = h;
      o[i * n + j] = h * ga[j] + be[j];
    }
  }
  if (track) {
    record(out, [x, gain, bias, out, m, n, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)]() mutable {
      auto g = out.grad();
      auto ga = gain.data();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[i * n + j]) * ga[j];
            mean_d += d;
            mean_dh += d * xhat[i * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dh /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[i * n + j]) * ga[j];
            gx[i * n + j] += static_cast<Real>(inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dh));
          }
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, Real eps) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool track = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), track);
  std::vector<double> norms(m);
  auto xs = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(xs[i * n + j]) * xs[i * n + j];
    norms[i] = std::sqrt(s + static_cast<double>(eps));
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = static_cast<Real>(xs[i * n + j] / norms[i]);
  }
  if (track) {
    record(out, [x, out, m, n, norms = std::move(norms)]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += static_cast<Real>((g[i * n + j] - y[i * n + j] * dot) / norms[i]);
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) fail(ErrorKind::kDimension, "gather_rows: empty index list");
  const std::size_t v = table.rows(), n = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      fail(ErrorKind::kDimension, "gather_rows: id " + std::to_string(id) + " outside table of " +
                                      std::to_string(v) + " rows");
    }
  }
  const bool track = tracking(table);
  Tensor out = Tensor::zeros({ids.size(), n}, track);
  auto t = table.data();
  auto o = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * n, n, o.data() + i * n);
  }
  if (track) {
    std::vector<int> idx(ids.begin(), ids.end());
    record(out, [table, out, n, idx = std::move(idx)]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Real* dst = gt.data() + static_cast<std::size_t>(idx[i]) * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  if (count == 0 || begin + count > x.rows()) {
    fail(ErrorKind::kDimension, "slice_rows: rows [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  const bool track = tracking(x);
  Tensor out = Tensor::zeros({count, n}, track);
  std::copy_n(x.ptr() + begin * n, count * n, out.ptr());
  if (track) {
    record(out, [x, out, begin, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      fail(ErrorKind::kDimension, "concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                                      " vs " + shape_str(p.shape()));
    }
    rows += p.rows();
    track = track || p.requires_grad();
  }
  track = track && active_tape() != nullptr;
  Tensor out = Tensor::zeros({rows, n}, track);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.ptr(), p.numel(), out.ptr() + offset);
    offset += p.numel();
  }
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record(out, [inputs = std::move(inputs), out]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor replace_rows(const Tensor& base, const Tensor& rows, std::span<const std::size_t> index) {
  require_matrix(base, "replace_rows");
  require_matrix(rows, "replace_rows");
  if (rows.cols() != base.cols() || rows.rows() != index.size()) {
    fail(ErrorKind::kDimension, "replace_rows: " + shape_str(rows.shape()) + " rows for " +
                                    std::to_string(index.size()) + " indices into " +
                                    shape_str(base.shape()));
  }
  const std::size_t m = base.rows(), n = base.cols();
  std::vector<std::uint8_t> replaced(m, 0);
  for (auto r : index) {
    if (r >= m || replaced[r]) {
      fail(ErrorKind::kDimension, "replace_rows: index " + std::to_string(r) + " out of range or repeated");
    }
    replaced[r] = 1;
  }
  const bool track = tracking(base, rows);
  Tensor out = base.detach();
  if (track) out.set_requires_grad(true);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(rows.ptr() + i * n, n, out.ptr() + index[i] * n);
  }
  if (track) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    record(out, [base, rows, out, n, m, idx = std::move(idx), replaced = std::move(replaced)]() mutable {
      auto g = out.grad();
      if (base.requires_grad()) {
        auto gb = base.grad();
        for (std::size_t i = 0; i < m; ++i) {
          if (replaced[i]) continue;
          for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += g[i * n + j];
        }
      }
      if (rows.requires_grad()) {
        auto gr = rows.grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < n; ++j) gr[i * n + j] += g[idx[i] * n + j];
      }
    });
  }
  return out;
}

Tensor mean_pool_rows(const Tensor& x, std::size_t stride, const Segments& segments,
                      Segments* pooled_segments) {
  require_matrix(x, "mean_pool_rows");
  if (stride == 0) fail(ErrorKind::kInvalidArgument, "mean_pool_rows: stride must be positive");
  check_segments(segments, x.rows(), "mean_pool_rows");
  const std::size_t n = x.cols();
  // (first input row, row count) for every output row
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  Segments pooled;
  for (const auto& s : segments) {
    const std::size_t groups = (s.length + stride - 1) / stride;
    pooled.push_back({windows.size(), groups});
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      const std::size_t first = gidx * stride;
      windows.emplace_back(s.offset + first, std::min(stride, s.length - first));
    }
  }
  const bool track = tracking(x);
  Tensor out = Tensor::zeros({windows.size(), n}, track);
  auto xs = x.data();
  auto o = out.data();
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto [first, count] = windows[w];
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < count; ++r) acc += xs[(first + r) * n + j];
      o[w * n + j] = static_cast<Real>(acc / static_cast<double>(count));
    }
  }
  if (pooled_segments) *pooled_segments = pooled;
  if (track) {
    record(out, [x, out, n, windows = std::move(windows)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto [first, count] = windows[w];
        const Real inv = Real(1) / static_cast<Real>(count);
        for (std::size_t r = 0; r < count; ++r)
          for (std::size_t j = 0; j < n; ++j) gx[(first + r) * n + j] += g[w * n + j] * inv;
      }
    });
  }
  return out;
}

Tensor attention(const Tensor& qkv, std::size_t heads, const Segments& segments, bool causal) {
  require_matrix(qkv, "attention");
  if (heads == 0 || qkv.cols() % (3 * heads) != 0) {
    fail(ErrorKind::kDimension, "attention: width " + std::to_string(qkv.cols()) +
                                    " not divisible into q|k|v for " + std::to_string(heads) + " heads");
  }
  check_segments(segments, qkv.rows(), "attention");
  const std::size_t width = qkv.cols();
  const std::size_t d = width / 3;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool track = tracking(qkv);
  Tensor out = Tensor::zeros({qkv.rows(), d}, track);
  const Real* src = qkv.ptr();
  Real* dst = out.ptr();

  // Probabilities for every (segment, head) block, row-major T x T.
  std::vector<Real> probs;
  std::vector<std::size_t> prob_offsets;
  std::vector<double> scores;
  for (const auto& seg : segments) {
    const std::size_t t_len = seg.length;
    scores.resize(t_len);
    for (std::size_t h = 0; h < heads; ++h) {
      prob_offsets.push_back(probs.size());
      const std::size_t base = probs.size();
      probs.resize(base + t_len * t_len, Real(0));
      const std::size_t qc = h * dh, kc = d + h * dh, vc = 2 * d + h * dh;
      for (std::size_t i = 0; i < t_len; ++i) {
        const Real* q = src + (seg.offset + i) * width + qc;
        const std::size_t limit = causal ? i + 1 : t_len;
        double mx = -1e300;
        for (std::size_t j = 0; j < limit; ++j) {
          const Real* k = src + (seg.offset + j) * width + kc;
          Real dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[c] * k[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          total += scores[j];
        }
        Real* p = probs.data() + base + i * t_len;
        Real* o = dst + (seg.offset + i) * d + qc;
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = static_cast<Real>(scores[j] / total);
          const Real* v = src + (seg.offset + j) * width + vc;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * v[c];
        }
      }
    }
  }

  if (track) {
    record(out, [qkv, out, heads, segments, causal, width, d, dh, inv_sqrt,
                 probs = std::move(probs), prob_offsets = std::move(prob_offsets)]() mutable {
      const Real* src = qkv.ptr();
      const Real* g = out.grad().data();
      Real* gsrc = qkv.grad().data();
      std::vector<double> dp;
      std::size_t block = 0;
      for (const auto& seg : segments) {
        const std::size_t t_len = seg.length;
        dp.resize(t_len);
        for (std::size_t h = 0; h < heads; ++h, ++block) {
          const Real* p_block = probs.data() + prob_offsets[block];
          const std::size_t qc = h * dh, kc = d + h * dh, vc = 2 * d + h * dh;
          for (std::size_t i = 0; i < t_len; ++i) {
            const std::size_t limit = causal ? i + 1 : t_len;
            const Real* p = p_block + i * t_len;
            const Real* go = g + (seg.offset + i) * d + qc;
            double weighted = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
              const Real* v = src + (seg.offset + j) * width + vc;
              Real* gv = gsrc + (seg.offset + j) * width + vc;
              Real dot = 0;
              for (std::size_t c = 0; c < dh; ++c) {
                dot += go[c] * v[c];
                gv[c] += p[j] * go[c];
              }
              dp[j] = dot;
              weighted += dot * p[j];
            }
            const Real* q = src + (seg.offset + i) * width + qc;
            Real* gq = gsrc + (seg.offset + i) * width + qc;
            for (std::size_t j = 0; j < limit; ++j) {
              const Real ds = static_cast<Real>(p[j] * (dp[j] - weighted) * inv_sqrt);
              const Real* k = src + (seg.offset + j) * width + kc;
              Real* gk = gsrc + (seg.offset + j) * width + kc;
              for (std::size_t c = 0; c < dh; ++c) {
                gq[c] += ds * k[c];
                gk[c] += ds * q[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking(x);
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<Real>(acc), track);
  if (track) {
    record(out, [x, out]() mutable {
      const Real g = out.grad()[0];
      for (auto& gx : x.grad()) gx += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const bool track = tracking(a, b);
  auto x = a.data();
  auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  const double count = static_cast<double>(x.size());
  Tensor out = Tensor::scalar(static_cast<Real>(acc / count), track);
  if (track) {
    record(out, [a, b, out, count]() mutable {
      const double g = out.grad()[0] * 2.0 / count;
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<Real>(g * (x[i] - y[i]));
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= static_cast<Real>(g * (x[i] - y[i]));
      }
    });
  }
  return out;
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const std::uint8_t> mask) {
  require_matrix(logits, "masked_cross_entropy");
  const std::size_t t_len = logits.rows(), v = logits.cols();
  if (targets.size() != t_len || mask.size() != t_len) {
    fail(ErrorKind::kDimension, "masked_cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                                    std::to_string(targets.size()) + " targets and " +
                                    std::to_string(mask.size()) + " mask bits");
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!mask[t]) continue;
    ++count;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v) {
      fail(ErrorKind::kInvalidArgument, "masked_cross_entropy: target " + std::to_string(targets[t]) +
                                            " outside vocabulary of " + std::to_string(v));
    }
  }
  if (count == 0) fail(ErrorKind::kEmptySupervision, "masked_cross_entropy: mask selects no positions");
  require_finite(logits, "masked_cross_entropy");

  const bool track = tracking(logits);
  const Real* x = logits.ptr();
  std::vector<double> lse(t_len, 0.0);
  double loss = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!mask[t]) continue;
    const Real* row = x + t * v;
    const double mx = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += std::exp(row[j] - mx);
    lse[t] = mx + std::log(total);
    loss += lse[t] - row[targets[t]];
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  Tensor out = Tensor::scalar(static_cast<Real>(loss * inv_count), track);
  if (track) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    record(out, [logits, out, v, inv_count, tgt = std::move(tgt), msk = std::move(msk),
                 lse = std::move(lse)]() mutable {
      const double g = out.grad()[0] * inv_count;
      const Real* x = logits.ptr();
      Real* gx = logits.grad().data();
      for (std::size_t t = 0; t < tgt.size(); ++t) {
        if (!msk[t]) continue;
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(x[t * v + j] - lse[t]);
          gx[t * v + j] += static_cast<Real>(g * (p - (static_cast<int>(j) == tgt[t] ? 1.0 : 0.0)));
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  std::vector<std::uint8_t> mask(targets.size(), 1);
  return masked_cross_entropy(logits, targets, mask);
}

}  // namespace tesu
