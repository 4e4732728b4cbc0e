#include "pheno/tape.hpp"

#include <cmath>

#include "pheno/error.hpp"

namespace pheno {

Tape::NodeId Tape::push(Tensor value, std::vector<NodeId> inputs, BackFn back, std::string op) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(back), std::move(op)});
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value) { return push(std::move(value), {}, {}, "leaf"); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    Tensor c = pheno::matmul(value(a), value(b));
    return push(std::move(c), {a, b},
                [a, b](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    t.grad_mut(a) += pheno::matmul_nt(g, t.value(b));
                    t.grad_mut(b) += pheno::matmul_tn(t.value(a), g);
                },
                "matmul");
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Tensor c = pheno::matmul_nt(value(a), value(b));
    return push(std::move(c), {a, b},
                [a, b](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    t.grad_mut(a) += pheno::matmul(g, t.value(b));
                    t.grad_mut(b) += pheno::matmul_tn(g, t.value(a));
                },
                "matmul_nt");
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Tensor c = value(a) + value(b);
    return push(std::move(c), {a, b},
                [a, b](Tape& t, NodeId self) {
                    t.grad_mut(a) += t.grad(self);
                    t.grad_mut(b) += t.grad(self);
                },
                "add");
}

Tape::NodeId Tape::add_rowvec(NodeId x, NodeId v) {
    const Tensor& xv = value(x);
    const Tensor& vv = value(v);
    if (xv.rank() != 2 || vv.size() != xv.cols())
        throw NumericError("add_rowvec shape mismatch: " + xv.shape_str() + " + " + vv.shape_str());
    Tensor c = xv;
    for (int i = 0; i < xv.rows(); ++i)
        for (int j = 0; j < xv.cols(); ++j) c(i, j) += vv.at(j);
    return push(std::move(c), {x, v},
                [x, v](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    t.grad_mut(x) += g;
                    Tensor& gv = t.grad_mut(v);
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j) gv.at(j) += g(i, j);
                },
                "add_rowvec");
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv))
        throw NumericError("mul shape mismatch: " + av.shape_str() + " vs " + bv.shape_str());
    Tensor c = av;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) *= bv.at(i);
    return push(std::move(c), {a, b},
                [a, b](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_mut(a);
                    Tensor& gb = t.grad_mut(b);
                    const Tensor& av2 = t.value(a);
                    const Tensor& bv2 = t.value(b);
                    for (int64_t i = 0; i < g.size(); ++i) {
                        ga.at(i) += g.at(i) * bv2.at(i);
                        gb.at(i) += g.at(i) * av2.at(i);
                    }
                },
                "mul");
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Tensor c = value(a) * s;
    return push(std::move(c), {a},
                [a, s](Tape& t, NodeId self) { t.grad_mut(a) += t.grad(self) * s; }, "scale");
}

Tape::NodeId Tape::mul_const(NodeId a, Tensor mask) {
    const Tensor& av = value(a);
    if (!av.same_shape(mask))
        throw NumericError("mul_const shape mismatch: " + av.shape_str() + " vs " + mask.shape_str());
    Tensor c = av;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) *= mask.at(i);
    return push(std::move(c), {a},
                [a, m = std::move(mask)](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_mut(a);
                    for (int64_t i = 0; i < g.size(); ++i) ga.at(i) += g.at(i) * m.at(i);
                },
                "mul_const");
}

Tape::NodeId Tape::silu(NodeId a) {
    Tensor c = pheno::silu(value(a));
    return push(std::move(c), {a},
                [a](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    const Tensor& x = t.value(a);
                    Tensor& ga = t.grad_mut(a);
                    for (int64_t i = 0; i < g.size(); ++i) {
                        double s = pheno::sigmoid(x.at(i));
                        ga.at(i) += g.at(i) * s * (1.0 + x.at(i) * (1.0 - s));
                    }
                },
                "silu");
}

Tape::NodeId Tape::sigmoid(NodeId a) {
    const Tensor& x = value(a);
    Tensor c(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) c.at(i) = pheno::sigmoid(x.at(i));
    return push(std::move(c), {a},
                [a](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    const Tensor& y = t.value(self);
                    Tensor& ga = t.grad_mut(a);
                    for (int64_t i = 0; i < g.size(); ++i) ga.at(i) += g.at(i) * y.at(i) * (1.0 - y.at(i));
                },
                "sigmoid");
}

Tape::NodeId Tape::softmax_rows(NodeId a) {
    Tensor c = pheno::softmax_rows(value(a));
    return push(std::move(c), {a},
                [a](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    const Tensor& y = t.value(self);
                    Tensor& ga = t.grad_mut(a);
                    for (int i = 0; i < y.rows(); ++i) {
                        double dot = 0.0;
                        for (int j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                        for (int j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                },
                "softmax_rows");
}

Tape::NodeId Tape::layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const Tensor& bv = value(bias);
    if (xv.rank() != 2 || gv.size() != xv.cols() || bv.size() != xv.cols())
        throw NumericError("layer_norm_rows shape mismatch: " + xv.shape_str());
    const int m = xv.rows(), n = xv.cols();
    if (n < 2) throw NumericError("layer_norm_rows requires row length >= 2, have " + xv.shape_str());
    Tensor y({m, n});
    // cache per-row (mean, inv_std) for the backward pass
    std::vector<double> inv_std(static_cast<size_t>(m));
    std::vector<double> means(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xv(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = xv(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        means[static_cast<size_t>(i)] = mean;
        inv_std[static_cast<size_t>(i)] = inv;
        for (int j = 0; j < n; ++j) y(i, j) = gv.at(j) * (xv(i, j) - mean) * inv + bv.at(j);
    }
    return push(std::move(y), {x, gain, bias},
                [x, gain, bias, means = std::move(means), inv_std = std::move(inv_std)](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    const Tensor& xv2 = t.value(x);
                    const Tensor& gv2 = t.value(gain);
                    Tensor& gx = t.grad_mut(x);
                    Tensor& gg = t.grad_mut(gain);
                    Tensor& gb = t.grad_mut(bias);
                    const int m2 = xv2.rows(), n2 = xv2.cols();
                    for (int i = 0; i < m2; ++i) {
                        const double inv = inv_std[static_cast<size_t>(i)];
                        const double mean = means[static_cast<size_t>(i)];
                        double mean_gg = 0.0, mean_ggx = 0.0;
                        for (int j = 0; j < n2; ++j) {
                            double xhat = (xv2(i, j) - mean) * inv;
                            double gj = g(i, j) * gv2.at(j);
                            mean_gg += gj;
                            mean_ggx += gj * xhat;
                            gg.at(j) += g(i, j) * xhat;
                            gb.at(j) += g(i, j);
                        }
                        mean_gg /= n2;
                        mean_ggx /= n2;
                        for (int j = 0; j < n2; ++j) {
                            double xhat = (xv2(i, j) - mean) * inv;
                            double gj = g(i, j) * gv2.at(j);
                            gx(i, j) += inv * (gj - mean_gg - xhat * mean_ggx);
                        }
                    }
                },
                "layer_norm_rows");
}

Tape::NodeId Tape::slice_cols(NodeId a, int c0, int c1) {
    const Tensor& av = value(a);
    if (av.rank() != 2 || c0 < 0 || c1 > av.cols() || c0 >= c1)
        throw NumericError("slice_cols bad range on " + av.shape_str());
    const int m = av.rows();
    Tensor c({m, c1 - c0});
    for (int i = 0; i < m; ++i)
        for (int j = c0; j < c1; ++j) c(i, j - c0) = av(i, j);
    return push(std::move(c), {a},
                [a, c0, c1](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_mut(a);
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = c0; j < c1; ++j) ga(i, j) += g(i, j - c0);
                },
                "slice_cols");
}

Tape::NodeId Tape::concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw NumericError("concat_cols of zero parts");
    const int m = value(parts[0]).rows();
    int n = 0;
    for (NodeId p : parts) {
        if (value(p).rows() != m) throw NumericError("concat_cols row mismatch");
        n += value(p).cols();
    }
    Tensor c({m, n});
    int off = 0;
    for (NodeId p : parts) {
        const Tensor& pv = value(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pv.cols(); ++j) c(i, off + j) = pv(i, j);
        off += pv.cols();
    }
    std::vector<NodeId> ins(parts.begin(), parts.end());
    return push(std::move(c), ins,
                [ins](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    int off2 = 0;
                    for (NodeId p : ins) {
                        Tensor& gp = t.grad_mut(p);
                        for (int i = 0; i < gp.rows(); ++i)
                            for (int j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, off2 + j);
                        off2 += gp.cols();
                    }
                },
                "concat_cols");
}

Tape::NodeId Tape::mean_rows(NodeId a) {
    const Tensor& av = value(a);
    if (av.rank() != 2) throw NumericError("mean_rows requires rank-2 tensor, have " + av.shape_str());
    const int m = av.rows(), n = av.cols();
    Tensor c({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) c(0, j) += av(i, j);
    for (int j = 0; j < n; ++j) c(0, j) /= m;
    return push(std::move(c), {a},
                [a, m](Tape& t, NodeId self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_mut(a);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < g.cols(); ++j) ga(i, j) += g(0, j) / m;
                },
                "mean_rows");
}

Tape::NodeId Tape::sum_all(NodeId a) {
    const Tensor& av = value(a);
    double s = 0.0;
    for (int64_t i = 0; i < av.size(); ++i) s += av.at(i);
    return push(Tensor({1, 1}, {s}), {a},
                [a](Tape& t, NodeId self) {
                    double g = t.grad(self).at(0);
                    Tensor& ga = t.grad_mut(a);
                    for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += g;
                },
                "sum_all");
}

Tape::NodeId Tape::bce_loss(NodeId p, double y) {
    if (value(p).size() != 1) throw NumericError("bce_loss expects a scalar probability node");
    if (y < 0.0 || y > 1.0) throw NumericError("bce_loss target outside [0,1]");
    constexpr double kEps = 1e-12;
    double pv = value(p).at(0);
    double pc = std::min(std::max(pv, kEps), 1.0 - kEps);
    double loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    return push(Tensor({1, 1}, {loss}), {p},
                [p, y, pc](Tape& t, NodeId self) {
                    double g = t.grad(self).at(0);
                    // derivative through the clamped probability
                    t.grad_mut(p).at(0) += g * (-y / pc + (1.0 - y) / (1.0 - pc));
                },
                "bce_loss");
}

Tape::NodeId Tape::mean_scalars(std::span<const NodeId> losses) {
    if (losses.empty()) throw NumericError("mean_scalars of zero nodes");
    double s = 0.0;
    for (NodeId l : losses) {
        if (value(l).size() != 1) throw NumericError("mean_scalars expects scalar nodes");
        s += value(l).at(0);
    }
    const double n = static_cast<double>(losses.size());
    std::vector<NodeId> ins(losses.begin(), losses.end());
    return push(Tensor({1, 1}, {s / n}), ins,
                [ins, n](Tape& t, NodeId self) {
                    double g = t.grad(self).at(0) / n;
                    for (NodeId l : ins) t.grad_mut(l).at(0) += g;
                },
                "mean_scalars");
}

void Tape::backward(NodeId loss) {
    if (loss < 0 || static_cast<size_t>(loss) >= nodes_.size()) throw NumericError("backward: bad loss node id");
    if (value(loss).size() != 1) throw NumericError("backward requires a scalar loss node, have " + value(loss).shape_str());
    grads_.assign(nodes_.size(), Tensor());
    for (size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor(nodes_[i].value.shape());
    grads_[static_cast<size_t>(loss)].at(0) = 1.0;
    for (NodeId i = loss; i >= 0; --i) {
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back) n.back(*this, i);
    }
}

} // namespace pheno
