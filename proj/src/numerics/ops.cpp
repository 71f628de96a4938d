#include "iidm/numerics/ops.hpp"

#include <cmath>
#include <limits>

namespace iidm {

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMat<Scalar>& cols) {
  cols.resize(static_cast<Eigen::Index>(g.cin) * g.k * g.k, static_cast<Eigen::Index>(g.ho) * g.wo);
  Scalar* out = cols.data();
  for (int c = 0; c < g.cin; ++c) {
    const Scalar* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, Scalar(0));
            out += g.wo;
            continue;
          }
          const Scalar* row = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            *out++ = (ix >= 0 && ix < g.w) ? row[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMat<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  const Scalar* in = cols.data();
  for (int c = 0; c < g.cin; ++c) {
    Scalar* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            in += g.wo;
            continue;
          }
          Scalar* row = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox, ++in) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) row[ix] += *in;
          }
        }
      }
    }
  }
}

}  // namespace

int conv_output_size(int size, int kernel, int stride, int padding) {
  if (stride <= 0) throw ShapeError("conv: stride must be positive");
  const int span = size + 2 * padding - kernel;
  if (span < 0) throw ShapeError("conv: kernel larger than padded input");
  return span / stride + 1;
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  BasicTensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.grad_buffer(b).vec() -= g.vec();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<Scalar> out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    if (t.requires_grad(a)) t.grad_buffer(a).vec() += g.vec().cwiseProduct(b.value().vec());
    if (t.requires_grad(b)) t.grad_buffer(b).vec() += g.vec().cwiseProduct(a.value().vec());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  BasicTensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() * factor;
  return a.tape()->record(std::move(out), {a}, [a, factor](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.grad_buffer(a).vec() += g.vec() * factor;
  });
}

template <typename Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  const auto& xs = x.shape();
  if (bias.value().size() != static_cast<std::size_t>(xs.at(0))) {
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(xs));
  }
  BasicTensor<Scalar> out = x.value();
  out.matrix().colwise() += bias.value().vec();
  return x.tape()->record(std::move(out), {x, bias}, [x, bias](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) t.grad_buffer(bias).vec() += g.matrix().rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  BasicTensor<Scalar> out(x.shape());
  out.vec() = x.value().vec().cwiseMax(Scalar(0));
  return x.tape()->record(std::move(out), {x}, [x](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& dx = t.grad_buffer(x);
    const auto& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > Scalar(0)) dx[i] += g[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const std::optional<std::type_identity_t<Var<Scalar>>>& bias,
                   int stride, int padding) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[1] != is[0]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(is[0]));
  }
  if (ks[2] != ks[3] || ks[2] % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  const int cout = ks[0];
  ConvGeometry g{is[0], is[1], is[2], ks[2], stride, padding, 0, 0};
  g.ho = conv_output_size(g.h, g.k, stride, padding);
  g.wo = conv_output_size(g.w, g.k, stride, padding);
  if (bias && bias->value().size() != static_cast<std::size_t>(cout)) throw ShapeError("conv2d: bias size mismatch");

  BasicTensor<Scalar> out(Shape{cout, g.ho, g.wo});
  ConstRowMap<Scalar> wmat(kernel.value().data(), cout, static_cast<Eigen::Index>(g.cin) * g.k * g.k);
  RowMap<Scalar> omat(out.data(), cout, static_cast<Eigen::Index>(g.ho) * g.wo);
  if (g.pointwise()) {
    omat.noalias() = wmat * ConstRowMap<Scalar>(input.value().data(), g.cin, static_cast<Eigen::Index>(g.h) * g.w);
  } else {
    RowMat<Scalar> cols;
    im2col(input.value().data(), g, cols);
    omat.noalias() = wmat * cols;
  }
  if (bias) omat.colwise() += bias->value().vec();

  std::vector<Var<Scalar>> parents{input, kernel};
  if (bias) parents.push_back(*bias);
  return input.tape()->record(
      std::move(out), parents, [input, kernel, bias, g, cout](Tape<Scalar>& t, const BasicTensor<Scalar>& grad) {
        const Eigen::Index patch = static_cast<Eigen::Index>(g.cin) * g.k * g.k;
        ConstRowMap<Scalar> gmat(grad.data(), cout, static_cast<Eigen::Index>(g.ho) * g.wo);
        ConstRowMap<Scalar> wmat(kernel.value().data(), cout, patch);
        if (bias && t.requires_grad(*bias)) t.grad_buffer(*bias).vec() += gmat.rowwise().sum();
        const bool need_w = t.requires_grad(kernel);
        const bool need_x = t.requires_grad(input);
        if (g.pointwise()) {
          ConstRowMap<Scalar> xmat(input.value().data(), g.cin, static_cast<Eigen::Index>(g.h) * g.w);
          if (need_w) RowMap<Scalar>(t.grad_buffer(kernel).data(), cout, patch).noalias() += gmat * xmat.transpose();
          if (need_x) {
            RowMap<Scalar>(t.grad_buffer(input).data(), g.cin, static_cast<Eigen::Index>(g.h) * g.w).noalias() +=
                wmat.transpose() * gmat;
          }
          return;
        }
        if (need_w) {
          RowMat<Scalar> cols;
          im2col(input.value().data(), g, cols);
          RowMap<Scalar>(t.grad_buffer(kernel).data(), cout, patch).noalias() += gmat * cols.transpose();
        }
        if (need_x) {
          RowMat<Scalar> dcols = wmat.transpose() * gmat;
          col2im(dcols, g, t.grad_buffer(input).data());
        }
      });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool ta, bool tb) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const int m = ta ? a.shape()[1] : a.shape()[0];
  const int ka = ta ? a.shape()[0] : a.shape()[1];
  const int kb = tb ? b.shape()[1] : b.shape()[0];
  const int n = tb ? b.shape()[0] : b.shape()[1];
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_string(a.shape()) + (ta ? "^T" : "") + " x " +
                     shape_string(b.shape()) + (tb ? "^T" : "") + ")");
  }
  BasicTensor<Scalar> out(Shape{m, n});
  auto am = a.value().matrix();
  auto bm = b.value().matrix();
  auto om = out.matrix();
  if (!ta && !tb) om.noalias() = am * bm;
  if (ta && !tb) om.noalias() = am.transpose() * bm;
  if (!ta && tb) om.noalias() = am * bm.transpose();
  if (ta && tb) om.noalias() = am.transpose() * bm.transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b, ta, tb](Tape<Scalar>& t, const BasicTensor<Scalar>& grad) {
    auto gm = grad.matrix();
    auto am = a.value().matrix();
    auto bm = b.value().matrix();
    if (t.requires_grad(a)) {
      auto da = t.grad_buffer(a).matrix();
      if (!ta && !tb) da.noalias() += gm * bm.transpose();
      if (ta && !tb) da.noalias() += bm * gm.transpose();
      if (!ta && tb) da.noalias() += gm * bm;
      if (ta && tb) da.noalias() += bm.transpose() * gm.transpose();
    }
    if (t.requires_grad(b)) {
      auto db = t.grad_buffer(b).matrix();
      if (!ta && !tb) db.noalias() += am.transpose() * gm;
      if (ta && !tb) db.noalias() += am * gm;
      if (!ta && tb) db.noalias() += gm.transpose() * am;
      if (ta && tb) db.noalias() += gm.transpose() * am.transpose();
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  require_rank(a.shape(), 2, "softmax_rows");
  BasicTensor<Scalar> out(a.shape());
  auto in = a.value().matrix();
  auto om = out.matrix();
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Scalar mx = in.row(r).maxCoeff();
    om.row(r) = (in.row(r).array() - mx).exp().matrix();
    om.row(r) /= om.row(r).sum();
  }
  auto* tape = a.tape();
  // The output is the node about to be recorded; its id is the current tape size.
  const int out_id = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a}, [a, out_id](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto ym = t.value(out_id).matrix();
    auto gm = g.matrix();
    auto da = t.grad_buffer(a).matrix();
    for (Eigen::Index r = 0; r < ym.rows(); ++r) {
      const Scalar dot = ym.row(r).dot(gm.row(r));
      da.row(r).array() += ym.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto out = BasicTensor<Scalar>::scalar(a.value().vec().sum());
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.grad_buffer(a).vec().array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  auto out = BasicTensor<Scalar>::scalar(a.value().vec().sum() / n);
  return a.tape()->record(std::move(out), {a}, [a, n](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.grad_buffer(a).vec().array() += g[0] / n;
  });
}

template <typename Scalar>
Var<Scalar> abs_mean(const Var<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  auto out = BasicTensor<Scalar>::scalar(a.value().vec().cwiseAbs().sum() / n);
  return a.tape()->record(std::move(out), {a}, [a, n](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& da = t.grad_buffer(a);
    const auto& av = a.value();
    const Scalar s = g[0] / n;
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (av[i] > Scalar(0)) da[i] += s;
      else if (av[i] < Scalar(0)) da[i] -= s;
    }
  });
}

template <typename Scalar>
Var<Scalar> sum_squares(const Var<Scalar>& a) {
  auto out = BasicTensor<Scalar>::scalar(a.value().vec().squaredNorm());
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.grad_buffer(a).vec() += (Scalar(2) * g[0]) * a.value().vec();
  });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  Shape tail(shape.begin() + 1, shape.end());
  int rows = 0;
  for (const auto& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail) throw ShapeError("concat: trailing shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(shape));
    rows += p.shape()[0];
  }
  shape[0] = rows;
  BasicTensor<Scalar> out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return parts[0].tape()->record(std::move(out), parts, [parts, offsets](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!t.requires_grad(parts[i])) continue;
      auto& d = t.grad_buffer(parts[i]);
      d.vec() += Eigen::Map<const typename BasicTensor<Scalar>::Vector>(g.data() + offsets[i],
                                                                        static_cast<Eigen::Index>(d.size()));
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int begin, int count) {
  const Shape& xs = x.shape();
  if (begin < 0 || count <= 0 || begin + count > xs.at(0)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside axis of size " + std::to_string(xs.at(0)));
  }
  Shape shape = xs;
  shape[0] = count;
  const std::size_t stride = x.value().size() / static_cast<std::size_t>(xs[0]);
  const std::size_t offset = stride * static_cast<std::size_t>(begin);
  BasicTensor<Scalar> out(shape);
  std::copy(x.value().data() + offset, x.value().data() + offset + out.size(), out.data());
  return x.tape()->record(std::move(out), {x}, [x, offset](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& d = t.grad_buffer(x);
    Eigen::Map<typename BasicTensor<Scalar>::Vector>(d.data() + offset, static_cast<Eigen::Index>(g.size())) += g.vec();
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  auto out = x.value().reshaped(std::move(shape));
  return x.tape()->record(std::move(out), {x}, [x](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    t.grad_buffer(x).vec() += g.vec();
  });
}

template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x) {
  require_rank(x.shape(), 3, "avg_pool2");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_string(x.shape()));
  BasicTensor<Scalar> out(Shape{c, h / 2, w / 2});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx) {
        out.at(ch, y, xx) = Scalar(0.25) * (xv.at(ch, 2 * y, 2 * xx) + xv.at(ch, 2 * y, 2 * xx + 1) +
                                            xv.at(ch, 2 * y + 1, 2 * xx) + xv.at(ch, 2 * y + 1, 2 * xx + 1));
      }
  return x.tape()->record(std::move(out), {x}, [x, c, h, w](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& d = t.grad_buffer(x);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) d.at(ch, y, xx) += Scalar(0.25) * g.at(ch, y / 2, xx / 2);
  });
}

template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x) {
  require_rank(x.shape(), 3, "max_pool2");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % 2 || w % 2) throw ShapeError("max_pool2: odd spatial size " + shape_string(x.shape()));
  BasicTensor<Scalar> out(Shape{c, h / 2, w / 2});
  std::vector<std::size_t> argmax(out.size());
  const auto& xv = x.value();
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx, ++o) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        argmax[o] = best;
        out[o] = xv[best];
      }
  return x.tape()->record(std::move(out), {x}, [x, argmax](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& d = t.grad_buffer(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += g[i];
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2(const Var<Scalar>& x) {
  require_rank(x.shape(), 3, "upsample_nearest2");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  BasicTensor<Scalar> out(Shape{c, 2 * h, 2 * w});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
  return x.tape()->record(std::move(out), {x}, [x, c, h, w](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto& d = t.grad_buffer(x);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) d.at(ch, y / 2, xx / 2) += g.at(ch, y, xx);
  });
}

template <typename Scalar>
Var<Scalar> center_rows(const Var<Scalar>& x) {
  if (x.shape().size() < 2) throw ShapeError("center_rows: need rank >= 2, got " + shape_string(x.shape()));
  BasicTensor<Scalar> out = x.value();
  auto m = out.matrix();
  if (m.cols() == 0) throw ShapeError("center_rows: empty spatial extent");
  m.colwise() -= m.rowwise().mean();
  return x.tape()->record(std::move(out), {x}, [x](Tape<Scalar>& t, const BasicTensor<Scalar>& g) {
    auto gm = g.matrix();
    auto d = t.grad_buffer(x).matrix();
    d += gm;
    d.colwise() -= gm.rowwise().mean();
  });
}

#define IIDM_INSTANTIATE_OPS(S)                                                                              \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> scale<S>(const Var<S>&, S);                                                                \
  template Var<S> add_channel_bias<S>(const Var<S>&, const Var<S>&);                                         \
  template Var<S> relu<S>(const Var<S>&);                                                                    \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const std::optional<Var<S>>&, int, int);           \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&, bool, bool);                                       \
  template Var<S> softmax_rows<S>(const Var<S>&);                                                            \
  template Var<S> sum<S>(const Var<S>&);                                                                     \
  template Var<S> mean<S>(const Var<S>&);                                                                    \
  template Var<S> abs_mean<S>(const Var<S>&);                                                                \
  template Var<S> sum_squares<S>(const Var<S>&);                                                             \
  template Var<S> concat<S>(const std::vector<Var<S>>&);                                                     \
  template Var<S> slice<S>(const Var<S>&, int, int);                                                         \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                                          \
  template Var<S> avg_pool2<S>(const Var<S>&);                                                               \
  template Var<S> max_pool2<S>(const Var<S>&);                                                               \
  template Var<S> upsample_nearest2<S>(const Var<S>&);                                                       \
  template Var<S> center_rows<S>(const Var<S>&);

IIDM_INSTANTIATE_OPS(float)
IIDM_INSTANTIATE_OPS(double)

}  // namespace iidm
