#include "dgdata/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dgdata/errors.hpp"

namespace dgdata {

namespace {

void ensure_finite(const Tensor& t, const char* op_name) {
    if (!t.all_finite()) {
        throw NumericalError(std::string(op_name) + " produced a non-finite value");
    }
}

void require_same_tape(Var a, Var b, const char* op_name) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw StateError(std::string(op_name) + ": operands recorded on different tapes");
    }
}

} // namespace

Var Tape::leaf(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.grad = Tensor::zeros_like(n.value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::bound_leaf(const Tensor& value, Tensor* grad_sink) {
    Var v = leaf(value, true);
    nodes_.back().grad_sink = grad_sink;
    return v;
}

Var Tape::emit(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> backward,
               const char* op_name) {
    ensure_finite(value, op_name);
    Node n;
    n.value = std::move(value);
    n.grad = Tensor::zeros_like(n.value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this || loss.id < 0 || loss.id >= size()) {
        throw StateError("backward: loss does not belong to this tape");
    }
    Node& top = nodes_[static_cast<size_t>(loss.id)];
    if (!top.needs_grad) throw StateError("backward on a detached value");
    if (top.value.numel() != 1) throw DimensionError("backward requires a scalar loss");

    top.grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad && n.backward) n.backward(*this, n);
    }
    for (int i = 0; i <= loss.id; ++i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad_sink != nullptr) {
            if (!n.grad_sink->same_shape(n.grad)) {
                throw DimensionError("gradient sink shape mismatch");
            }
            for (size_t k = 0; k < n.grad.data.size(); ++k) {
                n.grad_sink->data[k] += n.grad.data[k];
            }
        }
    }
}

// --- ops ---------------------------------------------------------------------

Var add(Var a, Var b) {
    require_same_tape(a, b, "add");
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) {
        throw DimensionError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int ai = a.id, bi = b.id;
    return t.emit(std::move(out), ng,
                  [ai, bi](Tape& tp, const Tape::Node& self) {
                      Tensor& ga = tp.node(ai).grad;
                      Tensor& gb = tp.node(bi).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          ga.data[i] += self.grad.data[i];
                          gb.data[i] += self.grad.data[i];
                      }
                  },
                  "add");
}

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v *= c;
    bool ng = t.node(a.id).needs_grad;
    int ai = a.id;
    return t.emit(std::move(out), ng,
                  [ai, c](Tape& tp, const Tape::Node& self) {
                      Tensor& ga = tp.node(ai).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          ga.data[i] += c * self.grad.data[i];
                      }
                  },
                  "scale");
}

Var linear(Var x, Var w, Var b) {
    require_same_tape(x, w, "linear");
    require_same_tape(x, b, "linear");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
        throw DimensionError("linear: expected x[n,in], W[in,out], b[out]");
    }
    int n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(1);
    if (wv.dim(0) != in || bv.dim(0) != out_dim) {
        throw DimensionError("linear: shape mismatch x" + xv.shape_str() + " W" + wv.shape_str() +
                             " b" + bv.shape_str());
    }
    Tensor y({n, out_dim});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < out_dim; ++j) y(i, j) = bv(j);
        for (int k = 0; k < in; ++k) {
            double xv_ik = xv(i, k);
            if (xv_ik == 0.0) continue;
            for (int j = 0; j < out_dim; ++j) y(i, j) += xv_ik * wv(k, j);
        }
    }
    bool ng = t.node(x.id).needs_grad || t.node(w.id).needs_grad || t.node(b.id).needs_grad;
    int xi = x.id, wi = w.id, bi = b.id;
    return t.emit(std::move(y), ng,
                  [xi, wi, bi, n, in, out_dim](Tape& tp, const Tape::Node& self) {
                      const Tensor& xv = tp.node(xi).value;
                      const Tensor& wv = tp.node(wi).value;
                      Tensor& gx = tp.node(xi).grad;
                      Tensor& gw = tp.node(wi).grad;
                      Tensor& gb = tp.node(bi).grad;
                      const Tensor& gy = self.grad;
                      for (int i = 0; i < n; ++i) {
                          for (int j = 0; j < out_dim; ++j) {
                              double g = gy(i, j);
                              if (g == 0.0) continue;
                              gb(j) += g;
                              for (int k = 0; k < in; ++k) {
                                  gx(i, k) += g * wv(k, j);
                                  gw(k, j) += g * xv(i, k);
                              }
                          }
                      }
                  },
                  "linear");
}

Var conv1d(Var x, Var kernels, int stride) {
    require_same_tape(x, kernels, "conv1d");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernels);
    if (xv.rank() != 3 || kv.rank() != 3) {
        throw DimensionError("conv1d: expected x[n,ch,L] and kernels[co,ch,k]");
    }
    int n = xv.dim(0), ch = xv.dim(1), len = xv.dim(2);
    int co = kv.dim(0), kw = kv.dim(2);
    if (kv.dim(1) != ch) throw DimensionError("conv1d: channel mismatch");
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
    if (kw > len) throw DimensionError("conv1d: kernel wider than input");
    int out_len = (len - kw) / stride + 1;

    Tensor y({n, co, out_len});
    for (int b = 0; b < n; ++b) {
        for (int o = 0; o < co; ++o) {
            for (int c = 0; c < ch; ++c) {
                const double* xrow = &xv.data[(static_cast<size_t>(b) * ch + c) * len];
                const double* krow = &kv.data[(static_cast<size_t>(o) * ch + c) * kw];
                double* yrow = &y.data[(static_cast<size_t>(b) * co + o) * out_len];
                for (int p = 0; p < out_len; ++p) {
                    const double* xw = xrow + p * stride;
                    double acc = 0.0;
                    for (int i = 0; i < kw; ++i) acc += xw[i] * krow[i];
                    yrow[p] += acc;
                }
            }
        }
    }
    bool ng = t.node(x.id).needs_grad || t.node(kernels.id).needs_grad;
    int xi = x.id, ki = kernels.id;
    return t.emit(std::move(y), ng,
                  [xi, ki, n, ch, len, co, kw, stride, out_len](Tape& tp, const Tape::Node& self) {
                      const Tensor& xv = tp.node(xi).value;
                      const Tensor& kv = tp.node(ki).value;
                      Tensor& gx = tp.node(xi).grad;
                      Tensor& gk = tp.node(ki).grad;
                      const Tensor& gy = self.grad;
                      for (int b = 0; b < n; ++b) {
                          for (int o = 0; o < co; ++o) {
                              const double* gyrow = &gy.data[(static_cast<size_t>(b) * co + o) * out_len];
                              for (int c = 0; c < ch; ++c) {
                                  const double* xrow = &xv.data[(static_cast<size_t>(b) * ch + c) * len];
                                  const double* krow = &kv.data[(static_cast<size_t>(o) * ch + c) * kw];
                                  double* gxrow = &gx.data[(static_cast<size_t>(b) * ch + c) * len];
                                  double* gkrow = &gk.data[(static_cast<size_t>(o) * ch + c) * kw];
                                  for (int p = 0; p < out_len; ++p) {
                                      double g = gyrow[p];
                                      if (g == 0.0) continue;
                                      const double* xw = xrow + p * stride;
                                      double* gxw = gxrow + p * stride;
                                      for (int i = 0; i < kw; ++i) {
                                          gxw[i] += g * krow[i];
                                          gkrow[i] += g * xw[i];
                                      }
                                  }
                              }
                          }
                      }
                  },
                  "conv1d");
}

Var bias_channel(Var x, Var b) {
    require_same_tape(x, b, "bias_channel");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 3 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
        throw DimensionError("bias_channel: expected x[n,ch,L], b[ch]");
    }
    int n = xv.dim(0), ch = xv.dim(1), len = xv.dim(2);
    Tensor y = xv;
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < ch; ++c) {
            double add_v = bv(c);
            for (int l = 0; l < len; ++l) y(i, c, l) += add_v;
        }
    }
    bool ng = t.node(x.id).needs_grad || t.node(b.id).needs_grad;
    int xi = x.id, bi = b.id;
    return t.emit(std::move(y), ng,
                  [xi, bi, n, ch, len](Tape& tp, const Tape::Node& self) {
                      Tensor& gx = tp.node(xi).grad;
                      Tensor& gb = tp.node(bi).grad;
                      const Tensor& gy = self.grad;
                      for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
                      for (int i = 0; i < n; ++i) {
                          for (int c = 0; c < ch; ++c) {
                              double acc = 0.0;
                              for (int l = 0; l < len; ++l) acc += gy(i, c, l);
                              gb(c) += acc;
                          }
                      }
                  },
                  "bias_channel");
}

Var relu(Var x) {
    Tape& t = *x.tape;
    Tensor y = t.value(x);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    bool ng = t.node(x.id).needs_grad;
    int xi = x.id;
    return t.emit(std::move(y), ng,
                  [xi](Tape& tp, const Tape::Node& self) {
                      const Tensor& xv = tp.node(xi).value;
                      Tensor& gx = tp.node(xi).grad;
                      for (size_t i = 0; i < xv.data.size(); ++i) {
                          if (xv.data[i] > 0.0) gx.data[i] += self.grad.data[i];
                      }
                  },
                  "relu");
}

Var sigmoid(Var x) {
    Tape& t = *x.tape;
    Tensor y = t.value(x);
    for (double& v : y.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    bool ng = t.node(x.id).needs_grad;
    int xi = x.id;
    return t.emit(std::move(y), ng,
                  [xi](Tape& tp, const Tape::Node& self) {
                      Tensor& gx = tp.node(xi).grad;
                      for (size_t i = 0; i < self.value.data.size(); ++i) {
                          double s = self.value.data[i];
                          gx.data[i] += self.grad.data[i] * s * (1.0 - s);
                      }
                  },
                  "sigmoid");
}

Var maxpool1d(Var x, int width, int stride) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 3) throw DimensionError("maxpool1d: expected x[n,ch,L]");
    int n = xv.dim(0), ch = xv.dim(1), len = xv.dim(2);
    if (width < 1 || stride < 1) throw ConfigError("maxpool1d: width and stride must be >= 1");
    if (width > len) throw DimensionError("maxpool1d: window wider than input");
    int out_len = (len - width) / stride + 1;

    Tensor y({n, ch, out_len});
    std::vector<int> argmax(static_cast<size_t>(n) * ch * out_len);
    size_t idx = 0;
    for (int b = 0; b < n; ++b) {
        for (int c = 0; c < ch; ++c) {
            for (int p = 0; p < out_len; ++p, ++idx) {
                int base = p * stride;
                double best = xv(b, c, base);
                int best_i = base;
                for (int i = 1; i < width; ++i) {
                    double v = xv(b, c, base + i);
                    if (v > best) { // strict: first max wins on ties
                        best = v;
                        best_i = base + i;
                    }
                }
                y(b, c, p) = best;
                argmax[idx] = best_i;
            }
        }
    }
    bool ng = t.node(x.id).needs_grad;
    int xi = x.id;
    return t.emit(std::move(y), ng,
                  [xi, n, ch, out_len, argmax](Tape& tp, const Tape::Node& self) {
                      Tensor& gx = tp.node(xi).grad;
                      const Tensor& gy = self.grad;
                      size_t idx = 0;
                      for (int b = 0; b < n; ++b) {
                          for (int c = 0; c < ch; ++c) {
                              for (int p = 0; p < out_len; ++p, ++idx) {
                                  gx(b, c, argmax[idx]) += gy(b, c, p);
                              }
                          }
                      }
                  },
                  "maxpool1d");
}

Var flatten(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 3) throw DimensionError("flatten: expected x[n,ch,L]");
    int n = xv.dim(0);
    int rest = xv.dim(1) * xv.dim(2);
    Tensor y = Tensor::from({n, rest}, xv.data);
    bool ng = t.node(x.id).needs_grad;
    int xi = x.id;
    return t.emit(std::move(y), ng,
                  [xi](Tape& tp, const Tape::Node& self) {
                      Tensor& gx = tp.node(xi).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          gx.data[i] += self.grad.data[i];
                      }
                  },
                  "flatten");
}

Var batchnorm1d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                bool train_mode, double momentum, double eps) {
    require_same_tape(x, gamma, "batchnorm1d");
    require_same_tape(x, beta, "batchnorm1d");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    if (xv.rank() != 2 && xv.rank() != 3) throw DimensionError("batchnorm1d: expected rank 2 or 3");
    int n = xv.dim(0);
    int ch = xv.dim(1);
    int len = xv.rank() == 3 ? xv.dim(2) : 1;
    if (gv.rank() != 1 || gv.dim(0) != ch || bv.rank() != 1 || bv.dim(0) != ch) {
        throw DimensionError("batchnorm1d: gamma/beta must have one entry per channel");
    }
    if (running_mean.numel() != ch || running_var.numel() != ch) {
        throw DimensionError("batchnorm1d: running stats size mismatch");
    }
    if (train_mode && n < 2) {
        throw ConfigError("batchnorm1d: train mode requires batch size >= 2");
    }

    long long m = static_cast<long long>(n) * len; // samples per channel
    std::vector<double> mean(static_cast<size_t>(ch)), var(static_cast<size_t>(ch));
    if (train_mode) {
        for (int c = 0; c < ch; ++c) {
            double s = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* row = &xv.data[(static_cast<size_t>(b) * ch + c) * len];
                for (int l = 0; l < len; ++l) s += row[l];
            }
            double mu = s / static_cast<double>(m);
            double sq = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* row = &xv.data[(static_cast<size_t>(b) * ch + c) * len];
                for (int l = 0; l < len; ++l) {
                    double d = row[l] - mu;
                    sq += d * d;
                }
            }
            mean[static_cast<size_t>(c)] = mu;
            var[static_cast<size_t>(c)] = sq / static_cast<double>(m);
        }
        for (int c = 0; c < ch; ++c) {
            running_mean(c) = (1.0 - momentum) * running_mean(c) + momentum * mean[static_cast<size_t>(c)];
            running_var(c) = (1.0 - momentum) * running_var(c) + momentum * var[static_cast<size_t>(c)];
        }
    } else {
        for (int c = 0; c < ch; ++c) {
            mean[static_cast<size_t>(c)] = running_mean(c);
            var[static_cast<size_t>(c)] = running_var(c);
        }
    }

    Tensor xhat(xv.shape);
    Tensor y(xv.shape);
    std::vector<double> inv_std(static_cast<size_t>(ch));
    for (int c = 0; c < ch; ++c) {
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
    }
    for (int b = 0; b < n; ++b) {
        for (int c = 0; c < ch; ++c) {
            double mu = mean[static_cast<size_t>(c)];
            double is = inv_std[static_cast<size_t>(c)];
            double g = gv(c), be = bv(c);
            size_t off = (static_cast<size_t>(b) * ch + c) * len;
            for (int l = 0; l < len; ++l) {
                double xh = (xv.data[off + l] - mu) * is;
                xhat.data[off + l] = xh;
                y.data[off + l] = g * xh + be;
            }
        }
    }

    bool ng = t.node(x.id).needs_grad || t.node(gamma.id).needs_grad || t.node(beta.id).needs_grad;
    int xi = x.id, gi = gamma.id, bi = beta.id;
    return t.emit(
        std::move(y), ng,
        [xi, gi, bi, n, ch, len, m, train_mode, xhat, inv_std](Tape& tp, const Tape::Node& self) {
            const Tensor& gv = tp.node(gi).value;
            Tensor& gx = tp.node(xi).grad;
            Tensor& gg = tp.node(gi).grad;
            Tensor& gb = tp.node(bi).grad;
            const Tensor& gy = self.grad;
            for (int c = 0; c < ch; ++c) {
                double sum_gy = 0.0, sum_gy_xh = 0.0;
                for (int b = 0; b < n; ++b) {
                    size_t off = (static_cast<size_t>(b) * ch + c) * len;
                    for (int l = 0; l < len; ++l) {
                        sum_gy += gy.data[off + l];
                        sum_gy_xh += gy.data[off + l] * xhat.data[off + l];
                    }
                }
                gb(c) += sum_gy;
                gg(c) += sum_gy_xh;
                double g = gv(c);
                double is = inv_std[static_cast<size_t>(c)];
                if (train_mode) {
                    double inv_m = 1.0 / static_cast<double>(m);
                    for (int b = 0; b < n; ++b) {
                        size_t off = (static_cast<size_t>(b) * ch + c) * len;
                        for (int l = 0; l < len; ++l) {
                            double xh = xhat.data[off + l];
                            gx.data[off + l] +=
                                g * is * (gy.data[off + l] - inv_m * sum_gy - xh * inv_m * sum_gy_xh);
                        }
                    }
                } else {
                    for (int b = 0; b < n; ++b) {
                        size_t off = (static_cast<size_t>(b) * ch + c) * len;
                        for (int l = 0; l < len; ++l) {
                            gx.data[off + l] += g * is * gy.data[off + l];
                        }
                    }
                }
            }
        },
        "batchnorm1d");
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels, int ignore_label) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    if (lv.rank() != 2) throw DimensionError("softmax_cross_entropy: expected logits[n,C]");
    int n = lv.dim(0), classes = lv.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw DimensionError("softmax_cross_entropy: one label per row required");
    }
    int counted = 0;
    for (int label : labels) {
        if (label == ignore_label) continue;
        if (label < 0 || label >= classes) {
            throw LabelError("softmax_cross_entropy: label " + std::to_string(label) +
                             " outside [0," + std::to_string(classes) + ")");
        }
        ++counted;
    }
    if (counted == 0) {
        throw StateError("softmax_cross_entropy: no labelled rows in batch");
    }

    Tensor probs({n, classes});
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = lv(i, 0);
        for (int j = 1; j < classes; ++j) mx = std::max(mx, lv(i, j));
        double sum = 0.0;
        for (int j = 0; j < classes; ++j) sum += std::exp(lv(i, j) - mx);
        double lse = mx + std::log(sum);
        for (int j = 0; j < classes; ++j) probs(i, j) = std::exp(lv(i, j) - lse);
        if (labels[static_cast<size_t>(i)] != ignore_label) {
            total += lse - lv(i, labels[static_cast<size_t>(i)]);
        }
    }
    Tensor out = Tensor::scalar(total / counted);
    bool ng = t.node(logits.id).needs_grad;
    int li = logits.id;
    std::vector<int> labels_copy = labels;
    return t.emit(std::move(out), ng,
                  [li, n, classes, counted, ignore_label, probs,
                   labels_copy](Tape& tp, const Tape::Node& self) {
                      Tensor& gl = tp.node(li).grad;
                      double g = self.grad.data[0] / counted;
                      for (int i = 0; i < n; ++i) {
                          int label = labels_copy[static_cast<size_t>(i)];
                          if (label == ignore_label) continue;
                          for (int j = 0; j < classes; ++j) {
                              double delta = (j == label) ? 1.0 : 0.0;
                              gl(i, j) += g * (probs(i, j) - delta);
                          }
                      }
                  },
                  "softmax_cross_entropy");
}

Var mse(Var a, Var b) {
    require_same_tape(a, b, "mse");
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) {
        throw DimensionError("mse: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    double total = 0.0;
    for (size_t i = 0; i < av.data.size(); ++i) {
        double d = av.data[i] - bv.data[i];
        total += d * d;
    }
    double inv_n = 1.0 / static_cast<double>(av.numel());
    Tensor out = Tensor::scalar(total * inv_n);
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int ai = a.id, bi = b.id;
    return t.emit(std::move(out), ng,
                  [ai, bi, inv_n](Tape& tp, const Tape::Node& self) {
                      const Tensor& av = tp.node(ai).value;
                      const Tensor& bv = tp.node(bi).value;
                      Tensor& ga = tp.node(ai).grad;
                      Tensor& gb = tp.node(bi).grad;
                      double g = self.grad.data[0] * 2.0 * inv_n;
                      for (size_t i = 0; i < av.data.size(); ++i) {
                          double d = g * (av.data[i] - bv.data[i]);
                          ga.data[i] += d;
                          gb.data[i] -= d;
                      }
                  },
                  "mse");
}

Var gaussian_kl_to_var(Var logvar, double var_target) {
    if (var_target <= 0.0) throw ConfigError("gaussian_kl_to_var: var_target must be positive");
    Tape& t = *logvar.tape;
    const Tensor& lv = t.value(logvar);
    double log_vt = std::log(var_target);
    double total = 0.0;
    for (double v : lv.data) {
        double ratio = std::exp(v) / var_target;
        total += 0.5 * (ratio - 1.0 - (v - log_vt));
    }
    double inv_n = 1.0 / static_cast<double>(lv.numel());
    Tensor out = Tensor::scalar(total * inv_n);
    bool ng = t.node(logvar.id).needs_grad;
    int li = logvar.id;
    return t.emit(std::move(out), ng,
                  [li, var_target, inv_n](Tape& tp, const Tape::Node& self) {
                      const Tensor& lv = tp.node(li).value;
                      Tensor& gl = tp.node(li).grad;
                      double g = self.grad.data[0] * 0.5 * inv_n;
                      for (size_t i = 0; i < lv.data.size(); ++i) {
                          gl.data[i] += g * (std::exp(lv.data[i]) / var_target - 1.0);
                      }
                  },
                  "gaussian_kl_to_var");
}

Var reparam_sample(Var mean, Var logvar, Rng& rng) {
    Tensor eps(mean.tape->value(mean).shape);
    for (double& e : eps.data) e = rng.normal();
    return reparam_sample_given(mean, logvar, eps);
}

Var reparam_sample_given(Var mean, Var logvar, const Tensor& eps_in) {
    require_same_tape(mean, logvar, "reparam_sample");
    Tape& t = *mean.tape;
    const Tensor& mv = t.value(mean);
    const Tensor& lv = t.value(logvar);
    if (!mv.same_shape(lv)) throw DimensionError("reparam_sample: mean/logvar shape mismatch");
    if (!mv.same_shape(eps_in)) throw DimensionError("reparam_sample: noise shape mismatch");
    Tensor eps = eps_in;
    Tensor z(mv.shape);
    for (size_t i = 0; i < z.data.size(); ++i) {
        z.data[i] = mv.data[i] + std::exp(0.5 * lv.data[i]) * eps.data[i];
    }
    bool ng = t.node(mean.id).needs_grad || t.node(logvar.id).needs_grad;
    int mi = mean.id, li = logvar.id;
    return t.emit(std::move(z), ng,
                  [mi, li, eps](Tape& tp, const Tape::Node& self) {
                      const Tensor& lv = tp.node(li).value;
                      Tensor& gm = tp.node(mi).grad;
                      Tensor& gl = tp.node(li).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          double g = self.grad.data[i];
                          gm.data[i] += g;
                          gl.data[i] += g * 0.5 * std::exp(0.5 * lv.data[i]) * eps.data[i];
                      }
                  },
                  "reparam_sample");
}

Var grad_reverse(Var x, double lambda) {
    if (lambda < 0.0) throw ConfigError("grad_reverse: lambda must be >= 0");
    Tape& t = *x.tape;
    Tensor y = t.value(x); // forward is the identity, bit for bit
    bool ng = t.node(x.id).needs_grad;
    int xi = x.id;
    return t.emit(std::move(y), ng,
                  [xi, lambda](Tape& tp, const Tape::Node& self) {
                      Tensor& gx = tp.node(xi).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          gx.data[i] += -lambda * self.grad.data[i];
                      }
                  },
                  "grad_reverse");
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [n,C]");
    int n = logits.dim(0), classes = logits.dim(1);
    Tensor out({n, classes});
    for (int i = 0; i < n; ++i) {
        double mx = logits(i, 0);
        for (int j = 1; j < classes; ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (int j = 0; j < classes; ++j) {
            double e = std::exp(logits(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < classes; ++j) out(i, j) /= sum;
    }
    return out;
}

} // namespace dgdata
