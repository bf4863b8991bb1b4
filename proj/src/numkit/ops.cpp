#include "rpm/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "rpm/rng.hpp"

namespace rpm::nk {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::kShapeMismatch,
              std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void bad_shape(const char* op, const Shape& a, const std::string& why) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": shape " + to_string(a) + " " + why);
}

constexpr int kColumnBlock = 256;

template <typename T>
void axpy(int n, T alpha, const T* __restrict x, T* __restrict y) {
  for (int j = 0; j < n; ++j) y[j] += alpha * x[j];
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  if (!acc) std::fill(c, c + std::size_t(m) * n, T(0));
  for (int j0 = 0; j0 < n; j0 += kColumnBlock) {
    const int len = std::min(kColumnBlock, n - j0);
    for (int kk = 0; kk < k; ++kk) {
      const T* brow = b + std::size_t(kk) * n + j0;
      for (int i = 0; i < m; ++i) {
        const T aik = a[std::size_t(i) * k + kk];
        if (aik != T(0)) axpy(len, aik, brow, c + std::size_t(i) * n + j0);
      }
    }
  }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  if (!acc) std::fill(c, c + std::size_t(m) * n, T(0));
  for (int j0 = 0; j0 < n; j0 += kColumnBlock) {
    const int len = std::min(kColumnBlock, n - j0);
    for (int kk = 0; kk < k; ++kk) {
      const T* brow = b + std::size_t(kk) * n + j0;
      const T* arow = a + std::size_t(kk) * m;
      for (int i = 0; i < m; ++i) {
        if (arow[i] != T(0)) axpy(len, arow[i], brow, c + std::size_t(i) * n + j0);
      }
    }
  }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  std::vector<T> bt(std::size_t(k) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) bt[std::size_t(j) * n + i] = b[std::size_t(i) * k + j];
  }
  gemm_nn(m, n, k, a, bt.data(), c, acc);
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(std::size_t(m) * n);
  gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data(), false);
  const int ia = a.id(), ib = b.id();
  return a.tape().record({m, n}, std::move(out), {ia, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    if (auto da = t.grad(ia); !da.empty()) gemm_nt(m, k, n, g.data(), t.value(ib).data(), da.data(), true);
    if (auto db = t.grad(ib); !db.empty()) gemm_tn(k, n, m, t.value(ia).data(), g.data(), db.data(), true);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) mismatch("matmul_nt", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(std::size_t(m) * n);
  gemm_nt(m, n, k, a.value().data(), b.value().data(), out.data(), false);
  const int ia = a.id(), ib = b.id();
  return a.tape().record({m, n}, std::move(out), {ia, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    if (auto da = t.grad(ia); !da.empty()) gemm_nn(m, k, n, g.data(), t.value(ib).data(), da.data(), true);
    if (auto db = t.grad(ib); !db.empty()) gemm_tn(n, k, m, g.data(), t.value(ia).data(), db.data(), true);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  auto va = a.value(), vb = b.value();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.shape(), std::move(out), {ia, ib}, [=](Tape<T>& t, int self) {
    std::span<const T> g = t.grad(self);
    if (auto da = t.grad(ia); !da.empty()) accumulate(da, g);
    if (auto db = t.grad(ib); !db.empty()) accumulate(db, g);
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  if (x.rank() != 2 || bias.size() != static_cast<std::size_t>(x.dim(1))) mismatch("add_bias", x.shape(), bias.shape());
  const int m = x.dim(0), n = x.dim(1);
  auto vx = x.value(), vb = bias.value();
  std::vector<T> out(vx.begin(), vx.end());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[std::size_t(i) * n + j] += vb[j];
  }
  const int ix = x.id(), ib = bias.id();
  return x.tape().record(x.shape(), std::move(out), {ix, ib}, [=](Tape<T>& t, int self) {
    std::span<const T> g = t.grad(self);
    if (auto dx = t.grad(ix); !dx.empty()) accumulate(dx, g);
    if (auto db = t.grad(ib); !db.empty()) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) db[j] += g[std::size_t(i) * n + j];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  auto va = a.value(), vb = b.value();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.shape(), std::move(out), {ia, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto va = t.value(ia), vb = t.value(ib);
    if (auto da = t.grad(ia); !da.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * vb[i];
    }
    if (auto db = t.grad(ib); !db.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  auto vx = x.value();
  std::vector<T> out(vx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * factor;
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto dx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  auto vx = x.value();
  const int ix = x.id();
  return x.tape().record(std::move(shape), std::vector<T>(vx.begin(), vx.end()), {ix},
                         [=](Tape<T>& t, int self) { accumulate(t.grad(ix), std::span<const T>(t.grad(self))); });
}

namespace {

template <typename T>
void transpose_into(int m, int n, const T* src, T* dst, bool acc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T& d = dst[std::size_t(j) * m + i];
      d = acc ? d + src[std::size_t(i) * n + j] : src[std::size_t(i) * n + j];
    }
  }
}

}  // namespace

template <typename T>
Var<T> transpose(Var<T> x) {
  if (x.rank() != 2) bad_shape("transpose", x.shape(), "is not rank 2");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.size());
  transpose_into(m, n, x.value().data(), out.data(), false);
  const int ix = x.id();
  return x.tape().record({n, m}, std::move(out), {ix}, [=](Tape<T>& t, int self) {
    transpose_into(n, m, t.grad(self).data(), t.grad(ix).data(), true);
  });
}

template <typename T>
Var<T> feature_map_to_tokens(Var<T> x) {
  if (x.rank() != 3) bad_shape("feature_map_to_tokens", x.shape(), "is not [C,H,W]");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<T> out(x.size());
  transpose_into(c, hw, x.value().data(), out.data(), false);
  const int ix = x.id();
  return x.tape().record({hw, c}, std::move(out), {ix}, [=](Tape<T>& t, int self) {
    transpose_into(hw, c, t.grad(self).data(), t.grad(ix).data(), true);
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) bad_shape("concat", first, "has no axis " + std::to_string(axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) mismatch("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) mismatch("concat", first, s);
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t total = out_shape[axis];
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].value();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * chunk, chunk, out.begin() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  return parts[0].tape().record(out_shape, std::move(out), ids, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t chunk = widths[p] * inner;
      if (auto d = t.grad(ids[p]); !d.empty()) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.data() + (o * total + off) * inner;
          for (std::size_t j = 0; j < chunk; ++j) d[o * chunk + j] += src[j];
        }
      }
      off += widths[p];
    }
  });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, int begin, int end) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || begin < 0 || end > s[axis] || begin >= end) {
    bad_shape("slice", s, "cannot slice [" + std::to_string(begin) + "," + std::to_string(end) +
                              ") on axis " + std::to_string(axis));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t full = s[axis], width = end - begin;
  auto v = x.value();
  std::vector<T> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + (o * full + begin) * inner, width * inner, out.begin() + o * width * inner);
  }
  const int ix = x.id();
  return x.tape().record(out_shape, std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto d = t.grad(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = d.data() + (o * full + begin) * inner;
      const T* src = g.data() + o * width * inner;
      for (std::size_t j = 0; j < width * inner; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  auto v = x.value();
  T total = std::accumulate(v.begin(), v.end(), T(0));
  const int ix = x.id();
  return x.tape().record({1}, {total}, {ix}, [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (auto& d : t.grad(ix)) d += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.size());
  auto v = x.value();
  T total = std::accumulate(v.begin(), v.end(), T(0));
  const int ix = x.id();
  return x.tape().record({1}, {total / n}, {ix}, [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0] / n;
    for (auto& d : t.grad(ix)) d += g;
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) mismatch("linear", x.shape(), weight.shape());
  if (bias.size() != static_cast<std::size_t>(weight.dim(1))) mismatch("linear(bias)", weight.shape(), bias.shape());
  const int m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  std::vector<T> out(std::size_t(m) * n);
  gemm_nn(m, n, k, x.value().data(), weight.value().data(), out.data(), false);
  auto vb = bias.value();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[std::size_t(i) * n + j] += vb[j];
  }
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record({m, n}, std::move(out), {ix, iw, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    if (auto dx = t.grad(ix); !dx.empty()) gemm_nt(m, k, n, g.data(), t.value(iw).data(), dx.data(), true);
    if (auto dw = t.grad(iw); !dw.empty()) gemm_tn(k, n, m, t.value(ix).data(), g.data(), dw.data(), true);
    if (auto db = t.grad(ib); !db.empty()) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) db[j] += g[std::size_t(i) * n + j];
      }
    }
  });
}

namespace {

struct ConvGeometry {
  int c, h, w, o, k, stride, ho, wo, pad_top, pad_left;
  int patch() const { return c * k * k; }
  int positions() const { return ho * wo; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + std::size_t((ci * g.k + ky) * g.k + kx) * g.positions();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_top;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad_left;
            const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
            row[oy * g.wo + ox] = inside ? x[(std::size_t(ci) * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + std::size_t((ci * g.k + ky) * g.k + kx) * g.positions();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.w) continue;
            dx[(std::size_t(ci) * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    mismatch("conv2d", x.shape(), weight.shape());
  }
  if (bias.size() != static_cast<std::size_t>(weight.dim(0))) mismatch("conv2d(bias)", weight.shape(), bias.shape());
  ConvGeometry geo{};
  geo.c = x.dim(0);
  geo.h = x.dim(1);
  geo.w = x.dim(2);
  geo.o = weight.dim(0);
  geo.k = weight.dim(2);
  geo.stride = stride;
  geo.ho = (geo.h + stride - 1) / stride;
  geo.wo = (geo.w + stride - 1) / stride;
  geo.pad_top = std::max((geo.ho - 1) * stride + geo.k - geo.h, 0) / 2;
  geo.pad_left = std::max((geo.wo - 1) * stride + geo.k - geo.w, 0) / 2;

  auto col = std::make_shared<std::vector<T>>(std::size_t(geo.patch()) * geo.positions());
  im2col(geo, x.value().data(), col->data());
  std::vector<T> out(std::size_t(geo.o) * geo.positions());
  gemm_nn(geo.o, geo.positions(), geo.patch(), weight.value().data(), col->data(), out.data(), false);
  auto vb = bias.value();
  for (int oc = 0; oc < geo.o; ++oc) {
    T* row = out.data() + std::size_t(oc) * geo.positions();
    for (int p = 0; p < geo.positions(); ++p) row[p] += vb[oc];
  }
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record({geo.o, geo.ho, geo.wo}, std::move(out), {ix, iw, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    const int n = geo.positions();
    if (auto dw = t.grad(iw); !dw.empty()) gemm_nt(geo.o, geo.patch(), n, g.data(), col->data(), dw.data(), true);
    if (auto db = t.grad(ib); !db.empty()) {
      for (int oc = 0; oc < geo.o; ++oc) {
        for (int p = 0; p < n; ++p) db[oc] += g[std::size_t(oc) * n + p];
      }
    }
    if (auto dx = t.grad(ix); !dx.empty()) {
      std::vector<T> dcol(std::size_t(geo.patch()) * n);
      gemm_tn(geo.patch(), n, geo.o, t.value(iw).data(), g.data(), dcol.data(), false);
      col2im_add(geo, dcol.data(), dx.data());
    }
  });
}

template <typename T>
Var<T> embedding_add(Var<T> z, Var<T> table) {
  if (z.shape() != table.shape()) mismatch("embedding_add", z.shape(), table.shape());
  return add(z, table);
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const int n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto v = x.value();
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (int j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (int j = 0; j < n; ++j) o[j] /= z;
  }
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto dx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (int j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto v = x.value();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = stable_sigmoid(v[i]);
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto dx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T a = T(0.044715);
  auto v = x.value();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T xi = v[i];
    out[i] = T(0.5) * xi * (T(1) + std::tanh(c * (xi + a * xi * xi * xi)));
  }
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto in = t.value(ix);
    auto dx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T xi = in[i];
      const T th = std::tanh(c * (xi + a * xi * xi * xi));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * xi * (T(1) - th * th) * c * (T(1) + T(3) * a * xi * xi);
      dx[i] += g[i] * d;
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const int n = x.shape().back();
  if (gamma.size() != static_cast<std::size_t>(n) || beta.size() != static_cast<std::size_t>(n)) {
    mismatch("layer_norm", x.shape(), gamma.shape());
  }
  const std::size_t rows = x.size() / n;
  auto v = x.value();
  auto vg = gamma.value(), vb = beta.value();
  auto xhat = std::make_shared<std::vector<T>>(v.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data() + r * n;
    T mu = 0;
    for (int j = 0; j < n; ++j) mu += in[j];
    mu /= n;
    T var = 0;
    for (int j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= n;
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < n; ++j) {
      const T h = (in[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * vg[j] + vb[j];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(x.shape(), std::move(out), {ix, ig, ib}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto gam = t.value(ig);
    auto dg = t.grad(ig);
    auto db = t.grad(ib);
    auto dx = t.grad(ix);
    const auto& h = *xhat;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * n;
      const T* hr = h.data() + r * n;
      if (!dg.empty()) for (int j = 0; j < n; ++j) dg[j] += gr[j] * hr[j];
      if (!db.empty()) for (int j = 0; j < n; ++j) db[j] += gr[j];
      if (dx.empty()) continue;
      T m1 = 0, m2 = 0;
      for (int j = 0; j < n; ++j) {
        const T dh = gr[j] * gam[j];
        m1 += dh;
        m2 += dh * hr[j];
      }
      m1 /= n;
      m2 /= n;
      const T is = (*inv_std)[r];
      for (int j = 0; j < n; ++j) dx[r * n + j] += is * (gr[j] * gam[j] - m1 - hr[j] * m2);
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, T rate, bool training, std::uint64_t seed) {
  if (!training || rate <= T(0)) return x;
  Rng rng(seed);
  const T keep_scale = T(1) / (T(1) - rate);
  auto mask = std::make_shared<std::vector<T>>(x.size());
  auto v = x.value();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*mask)[i] = rng.uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] = v[i] * (*mask)[i];
  }
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto dx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != static_cast<std::size_t>(logits.dim(0))) {
    bad_shape("cross_entropy", logits.shape(), "does not match " + std::to_string(labels.size()) + " labels");
  }
  const int m = logits.dim(0), n = logits.dim(1);
  auto v = logits.value();
  auto probs = std::make_shared<std::vector<T>>(v.size());
  std::vector<int> lab(labels.begin(), labels.end());
  T loss = 0;
  for (int r = 0; r < m; ++r) {
    const T* in = v.data() + std::size_t(r) * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (int j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const T lse = mx + std::log(z);
    for (int j = 0; j < n; ++j) (*probs)[std::size_t(r) * n + j] = std::exp(in[j] - lse);
    loss += lse - in[lab[r]];
  }
  const int ix = logits.id();
  return logits.tape().record({1}, {loss / m}, {ix}, [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0] / m;
    auto dx = t.grad(ix);
    for (int r = 0; r < m; ++r) {
      for (int j = 0; j < n; ++j) {
        const std::size_t i = std::size_t(r) * n + j;
        dx[i] += g * ((*probs)[i] - (j == lab[r] ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Var<T> grouped_activation(Var<T> logits, std::span<const ActivationGroup> groups) {
  const int n = logits.shape().back();
  for (const auto& gr : groups) {
    if (gr.offset < 0 || gr.offset + gr.length > n) bad_shape("grouped_activation", logits.shape(), "too narrow for groups");
  }
  const std::size_t rows = logits.size() / n;
  std::vector<ActivationGroup> gs(groups.begin(), groups.end());
  auto v = logits.value();
  std::vector<T> out(v.begin(), v.end());
  for (std::size_t r = 0; r < rows; ++r) {
    for (const auto& gr : gs) {
      T* o = out.data() + r * n + gr.offset;
      if (gr.binary) {
        for (int j = 0; j < gr.length; ++j) o[j] = stable_sigmoid(o[j]);
        continue;
      }
      const T mx = *std::max_element(o, o + gr.length);
      T z = 0;
      for (int j = 0; j < gr.length; ++j) z += (o[j] = std::exp(o[j] - mx));
      for (int j = 0; j < gr.length; ++j) o[j] /= z;
    }
  }
  const int ix = logits.id();
  return logits.tape().record(logits.shape(), std::move(out), {ix}, [=](Tape<T>& t, int self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto dx = t.grad(ix);
    // Dims outside every group pass through unchanged.
    std::vector<std::uint8_t> covered(n, 0);
    for (const auto& gr : gs) std::fill_n(covered.begin() + gr.offset, gr.length, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      for (int j = 0; j < n; ++j) {
        if (!covered[j]) dx[base + j] += g[base + j];
      }
      for (const auto& gr : gs) {
        const std::size_t o = base + gr.offset;
        if (gr.binary) {
          for (int j = 0; j < gr.length; ++j) dx[o + j] += g[o + j] * y[o + j] * (T(1) - y[o + j]);
          continue;
        }
        T dot = 0;
        for (int j = 0; j < gr.length; ++j) dot += g[o + j] * y[o + j];
        for (int j = 0; j < gr.length; ++j) dx[o + j] += y[o + j] * (g[o + j] - dot);
      }
    }
  });
}

template <typename T>
Var<T> weighted_log_loss(Var<T> probs, std::span<const T> target, std::span<const T> weight,
                         std::span<const std::uint8_t> binary, T clamp) {
  const std::size_t n = probs.size();
  if (target.size() != n || weight.size() != n || binary.size() != n) {
    bad_shape("weighted_log_loss", probs.shape(), "does not match target/weight sizes");
  }
  auto p = probs.value();
  T loss = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (weight[j] == T(0)) continue;
    const T pj = std::clamp(p[j], clamp, T(1) - clamp);
    T term = -target[j] * std::log(pj);
    if (binary[j]) term -= (T(1) - target[j]) * std::log(T(1) - pj);
    loss += weight[j] * term;
  }
  std::vector<T> tv(target.begin(), target.end()), wv(weight.begin(), weight.end());
  std::vector<std::uint8_t> bv(binary.begin(), binary.end());
  const int ip = probs.id();
  return probs.tape().record({1}, {loss}, {ip}, [=, tv = std::move(tv), wv = std::move(wv), bv = std::move(bv)](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    auto pv = t.value(ip);
    auto dp = t.grad(ip);
    for (std::size_t j = 0; j < n; ++j) {
      if (wv[j] == T(0)) continue;
      const T pj = pv[j];
      if (pj <= clamp || pj >= T(1) - clamp) continue;
      T d = -tv[j] / pj;
      if (bv[j]) d += (T(1) - tv[j]) / (T(1) - pj);
      dp[j] += g * wv[j] * d;
    }
  });
}

#define RPM_NK_INSTANTIATE(T)                                                                     \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);                          \
  template void gemm_tn<T>(int, int, int, const T*, const T*, T*, bool);                          \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*, bool);                          \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                                   \
  template Var<T> add<T>(Var<T>, Var<T>);                                                         \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                                    \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                         \
  template Var<T> scale<T>(Var<T>, T);                                                            \
  template Var<T> reshape<T>(Var<T>, Shape);                                                      \
  template Var<T> transpose<T>(Var<T>);                                                           \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                     \
  template Var<T> slice<T>(Var<T>, int, int, int);                                                \
  template Var<T> sum<T>(Var<T>);                                                                 \
  template Var<T> mean<T>(Var<T>);                                                                \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                              \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, int);                                         \
  template Var<T> feature_map_to_tokens<T>(Var<T>);                                               \
  template Var<T> embedding_add<T>(Var<T>, Var<T>);                                               \
  template Var<T> softmax<T>(Var<T>);                                                             \
  template Var<T> sigmoid<T>(Var<T>);                                                             \
  template Var<T> gelu<T>(Var<T>);                                                                \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                       \
  template Var<T> dropout<T>(Var<T>, T, bool, std::uint64_t);                                     \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>);                                 \
  template Var<T> grouped_activation<T>(Var<T>, std::span<const ActivationGroup>);                \
  template Var<T> weighted_log_loss<T>(Var<T>, std::span<const T>, std::span<const T>,            \
                                       std::span<const std::uint8_t>, T);

RPM_NK_INSTANTIATE(float)
RPM_NK_INSTANTIATE(double)

#undef RPM_NK_INSTANTIATE

}  // namespace rpm::nk
