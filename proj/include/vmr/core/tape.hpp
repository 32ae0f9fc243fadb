#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vmr/core/error.hpp"
#include "vmr/core/matrix.hpp"
#include "vmr/core/param.hpp"
#include "vmr/core/rng.hpp"

namespace vmr {

// Reverse-mode autodiff over dense row-major matrices. A Tape owns the
// nodes of one forward build; backward() sweeps them in reverse creation
// order. Parameters live outside the tape (see Param) and are bound in
// once per build so gradients from every use accumulate in one place.
struct Node {
    Mat val;
    Mat grad;
    bool rg = false;  // participates in backward
    std::function<void(Node&)> back;
};

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

    bool grad_enabled() const { return grad_; }
    size_t size() const { return nodes_.size(); }

    // ---- leaves ----

    Node* constant(Mat v) { return make(std::move(v), false, nullptr); }

    Node* input(Mat v, bool requires_grad = false) {
        return make(std::move(v), requires_grad && grad_, nullptr);
    }

    // Binds a parameter; one node per Param per tape, grads flow to p.grad.
    Node* use(Param& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;
        Param* pp = &p;
        Node* n = make(p.value, grad_, [pp](Node& self) {
            if (pp->grad.size() == 0) pp->grad = Mat::Zero(self.val.rows(), self.val.cols());
            pp->grad += self.grad;
        });
        bound_[&p] = n;
        return n;
    }

    // ---- arithmetic ----

    Node* add(Node* a, Node* b) {
        check_same_shape(a, b, "add");
        return unary2(a->val + b->val, a, b, [](Node& self, Node* a, Node* b) {
            accum(a, self.grad);
            accum(b, self.grad);
        });
    }

    Node* sub(Node* a, Node* b) {
        check_same_shape(a, b, "sub");
        return unary2(a->val - b->val, a, b, [](Node& self, Node* a, Node* b) {
            accum(a, self.grad);
            accum(b, -self.grad);
        });
    }

    Node* add_const(Node* a, const Mat& c) {
        return unary(a->val + c, a, [](Node& self, Node* a) { accum(a, self.grad); });
    }

    Node* scale(Node* a, double c) {
        return unary(a->val * c, a, [c](Node& self, Node* a) { accum(a, self.grad * c); });
    }

    // Broadcast a 1 x d row over all rows of a.
    Node* add_rowvec(Node* a, Node* r) {
        Mat v = a->val;
        v.rowwise() += r->val.row(0);
        return unary2(std::move(v), a, r, [](Node& self, Node* a, Node* r) {
            accum(a, self.grad);
            accum(r, self.grad.colwise().sum());
        });
    }

    Node* mul_elem(Node* a, Node* b) {
        check_same_shape(a, b, "mul_elem");
        return unary2(a->val.cwiseProduct(b->val), a, b, [](Node& self, Node* a, Node* b) {
            accum(a, self.grad.cwiseProduct(b->val));
            accum(b, self.grad.cwiseProduct(a->val));
        });
    }

    // a / s where s is a 1x1 node (temperature scaling).
    Node* div_by_scalar(Node* a, Node* s) {
        double sv = s->val(0, 0);
        return unary2(a->val / sv, a, s, [sv](Node& self, Node* a, Node* s) {
            accum(a, self.grad / sv);
            Mat ds(1, 1);
            ds(0, 0) = -(self.grad.cwiseProduct(self.val)).sum() / sv;
            accum(s, ds);
        });
    }

    // ---- linear algebra ----

    Node* matmul(Node* a, Node* b) {
        return unary2(a->val * b->val, a, b, [](Node& self, Node* a, Node* b) {
            accum(a, self.grad * b->val.transpose());
            accum(b, a->val.transpose() * self.grad);
        });
    }

    // a * b^T
    Node* matmul_nt(Node* a, Node* b) {
        return unary2(a->val * b->val.transpose(), a, b, [](Node& self, Node* a, Node* b) {
            accum(a, self.grad * b->val);
            accum(b, self.grad.transpose() * a->val);
        });
    }

    // a * C^T with a constant right operand (e.g. queued negatives).
    Node* matmul_nt_const(Node* a, const Mat& c) {
        Mat cc = c;
        return unary(a->val * c.transpose(), a,
                     [cc = std::move(cc)](Node& self, Node* a) { accum(a, self.grad * cc); });
    }

    // x: L x in, w: out x in, b: 1 x out  ->  L x out
    Node* linear(Node* x, Node* w, Node* b) {
        Mat v = x->val * w->val.transpose();
        v.rowwise() += b->val.row(0);
        Node* n = make(std::move(v), (x->rg || w->rg || b->rg) && grad_, nullptr);
        if (n->rg) {
            Node *xp = x, *wp = w, *bp = b;
            n->back = [xp, wp, bp](Node& self) {
                accum(xp, self.grad * wp->val);
                accum(wp, self.grad.transpose() * xp->val);
                accum(bp, self.grad.colwise().sum());
            };
        }
        return n;
    }

    // ---- shape ops ----

    Node* slice_rows(Node* a, Eigen::Index r0, Eigen::Index n) {
        return unary(a->val.middleRows(r0, n), a, [r0, n](Node& self, Node* a) {
            ensure_grad(a);
            a->grad.middleRows(r0, n) += self.grad;
        });
    }

    Node* slice_cols(Node* a, Eigen::Index c0, Eigen::Index n) {
        return unary(a->val.middleCols(c0, n), a, [c0, n](Node& self, Node* a) {
            ensure_grad(a);
            a->grad.middleCols(c0, n) += self.grad;
        });
    }

    Node* vstack(const std::vector<Node*>& parts) {
        Eigen::Index rows = 0, cols = parts.at(0)->val.cols();
        for (Node* p : parts) rows += p->val.rows();
        Mat v(rows, cols);
        Eigen::Index at = 0;
        bool rg = false;
        for (Node* p : parts) {
            v.middleRows(at, p->val.rows()) = p->val;
            at += p->val.rows();
            rg = rg || p->rg;
        }
        Node* n = make(std::move(v), rg && grad_, nullptr);
        if (n->rg) {
            std::vector<Node*> ps = parts;
            n->back = [ps](Node& self) {
                Eigen::Index at = 0;
                for (Node* p : ps) {
                    if (p->rg) {
                        ensure_grad(p);
                        p->grad += self.grad.middleRows(at, p->val.rows());
                    }
                    at += p->val.rows();
                }
            };
        }
        return n;
    }

    Node* hstack(const std::vector<Node*>& parts) {
        Eigen::Index cols = 0, rows = parts.at(0)->val.rows();
        for (Node* p : parts) cols += p->val.cols();
        Mat v(rows, cols);
        Eigen::Index at = 0;
        bool rg = false;
        for (Node* p : parts) {
            v.middleCols(at, p->val.cols()) = p->val;
            at += p->val.cols();
            rg = rg || p->rg;
        }
        Node* n = make(std::move(v), rg && grad_, nullptr);
        if (n->rg) {
            std::vector<Node*> ps = parts;
            n->back = [ps](Node& self) {
                Eigen::Index at = 0;
                for (Node* p : ps) {
                    if (p->rg) {
                        ensure_grad(p);
                        p->grad += self.grad.middleCols(at, p->val.cols());
                    }
                    at += p->val.cols();
                }
            };
        }
        return n;
    }

    Node* gather_rows(Node* a, std::vector<int> idx) {
        Mat v(static_cast<Eigen::Index>(idx.size()), a->val.cols());
        for (size_t k = 0; k < idx.size(); ++k) v.row(static_cast<Eigen::Index>(k)) = a->val.row(idx[k]);
        return unary(std::move(v), a, [idx = std::move(idx)](Node& self, Node* a) {
            ensure_grad(a);
            for (size_t k = 0; k < idx.size(); ++k)
                a->grad.row(idx[k]) += self.grad.row(static_cast<Eigen::Index>(k));
        });
    }

    // Row k of the result is the mean of a's rows [ranges[k].first, ranges[k].second].
    Node* row_range_means(Node* a, std::vector<std::pair<int, int>> ranges) {
        Mat v(static_cast<Eigen::Index>(ranges.size()), a->val.cols());
        for (size_t k = 0; k < ranges.size(); ++k) {
            auto [i, j] = ranges[k];
            v.row(static_cast<Eigen::Index>(k)) = a->val.middleRows(i, j - i + 1).colwise().mean();
        }
        return unary(std::move(v), a, [ranges = std::move(ranges)](Node& self, Node* a) {
            ensure_grad(a);
            for (size_t k = 0; k < ranges.size(); ++k) {
                auto [i, j] = ranges[k];
                double inv = 1.0 / static_cast<double>(j - i + 1);
                a->grad.middleRows(i, j - i + 1).rowwise() +=
                    (self.grad.row(static_cast<Eigen::Index>(k)) * inv).eval();
            }
        });
    }

    // 1 x d mean of rows where mask is true.
    Node* row_mean_masked(Node* a, const BoolVec& mask) {
        int count = 0;
        Mat v = Mat::Zero(1, a->val.cols());
        for (Eigen::Index r = 0; r < a->val.rows(); ++r) {
            if (mask[static_cast<size_t>(r)]) {
                v.row(0) += a->val.row(r);
                ++count;
            }
        }
        if (count == 0) throw ValidationError("row_mean_masked: mask selects no rows");
        v /= static_cast<double>(count);
        BoolVec m = mask;
        return unary(std::move(v), a, [m = std::move(m), count](Node& self, Node* a) {
            ensure_grad(a);
            Mat g = self.grad.row(0) / static_cast<double>(count);
            for (Eigen::Index r = 0; r < a->val.rows(); ++r)
                if (m[static_cast<size_t>(r)]) a->grad.row(r) += g;
        });
    }

    // ---- nonlinearities ----

    Node* gelu(Node* a) {
        constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        constexpr double kA = 0.044715;
        const Mat& x = a->val;
        Mat u = kC * (x.array() + kA * x.array().cube());
        Mat t = u.array().tanh();
        Mat v = 0.5 * x.array() * (1.0 + t.array());
        return unary(std::move(v), a, [x, t](Node& self, Node* a) {
            Eigen::ArrayXXd du = kC_arr(x);
            Eigen::ArrayXXd d =
                0.5 * (1.0 + t.array()) + 0.5 * x.array() * (1.0 - t.array().square()) * du;
            accum(a, self.grad.cwiseProduct(d.matrix()));
        });
    }

    Node* sigmoid(Node* a) {
        Mat v = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
        return unary(std::move(v), a, [](Node& self, Node* a) {
            Eigen::ArrayXXd d = self.val.array() * (1.0 - self.val.array());
            accum(a, self.grad.cwiseProduct(d.matrix()));
        });
    }

    // Row-wise layer norm with affine params gamma, beta (1 x d each).
    Node* layer_norm(Node* x, Node* gamma, Node* beta, double eps = 1e-5) {
        Eigen::Index L = x->val.rows(), d = x->val.cols();
        Mat xhat(L, d);
        Vec inv_sigma(L);
        for (Eigen::Index r = 0; r < L; ++r) {
            double mu = x->val.row(r).mean();
            double var = (x->val.row(r).array() - mu).square().mean();
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma(r) = is;
            xhat.row(r) = (x->val.row(r).array() - mu) * is;
        }
        Mat v = xhat;
        for (Eigen::Index r = 0; r < L; ++r)
            v.row(r) = xhat.row(r).cwiseProduct(gamma->val.row(0)) + beta->val.row(0);
        Node* n = make(std::move(v), (x->rg || gamma->rg || beta->rg) && grad_, nullptr);
        if (n->rg) {
            Node *xp = x, *gp = gamma, *bp = beta;
            n->back = [xp, gp, bp, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
                accum(bp, self.grad.colwise().sum());
                accum(gp, self.grad.cwiseProduct(xhat).colwise().sum());
                if (!xp->rg) return;
                ensure_grad(xp);
                Eigen::Index L = self.grad.rows(), d = self.grad.cols();
                (void)d;
                for (Eigen::Index r = 0; r < L; ++r) {
                    Eigen::RowVectorXd gy = self.grad.row(r).cwiseProduct(gp->val.row(0));
                    double m1 = gy.mean();
                    double m2 = gy.cwiseProduct(xhat.row(r)).mean();
                    xp->grad.row(r) +=
                        ((gy.array() - m1 - xhat.row(r).array() * m2) * inv_sigma(r)).matrix();
                }
            };
        }
        return n;
    }

    // Row-wise softmax over logits; columns with valid=false get probability 0.
    // All rows share the key mask. At least one valid column is required.
    Node* softmax_rows_masked(Node* z, const BoolVec& valid) {
        Eigen::Index L = z->val.rows(), K = z->val.cols();
        Mat p(L, K);
        for (Eigen::Index r = 0; r < L; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index k = 0; k < K; ++k)
                if (valid[static_cast<size_t>(k)]) mx = std::max(mx, z->val(r, k));
            if (!std::isfinite(mx)) throw ValidationError("softmax: no valid key positions");
            double sum = 0.0;
            for (Eigen::Index k = 0; k < K; ++k) {
                double e = valid[static_cast<size_t>(k)] ? std::exp(z->val(r, k) - mx) : 0.0;
                p(r, k) = e;
                sum += e;
            }
            p.row(r) /= sum;
        }
        return unary(std::move(p), z, [](Node& self, Node* z) {
            ensure_grad(z);
            for (Eigen::Index r = 0; r < self.val.rows(); ++r) {
                double dot = self.grad.row(r).dot(self.val.row(r));
                z->grad.row(r) += self.val.row(r).cwiseProduct(self.grad.row(r)) - self.val.row(r) * dot;
            }
        });
    }

    Node* softmax_rows(Node* z) {
        BoolVec all(static_cast<size_t>(z->val.cols()), 1);
        return softmax_rows_masked(z, all);
    }

    // Inverted dropout; identity when p == 0 or rng is null.
    Node* dropout(Node* a, double p, Rng* rng) {
        if (p <= 0.0 || rng == nullptr) return a;
        double keep = 1.0 - p;
        Mat mask(a->val.rows(), a->val.cols());
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                mask(i, j) = rng->uniform() < p ? 0.0 : 1.0 / keep;
        return unary(a->val.cwiseProduct(mask), a, [mask](Node& self, Node* a) {
            accum(a, self.grad.cwiseProduct(mask));
        });
    }

    // Rows scaled to unit L2 norm.
    Node* l2_normalize_rows(Node* a, double eps = 1e-12) {
        Eigen::Index L = a->val.rows();
        Vec inv_norm(L);
        Mat v(L, a->val.cols());
        for (Eigen::Index r = 0; r < L; ++r) {
            double n = std::max(a->val.row(r).norm(), eps);
            inv_norm(r) = 1.0 / n;
            v.row(r) = a->val.row(r) * inv_norm(r);
        }
        return unary(std::move(v), a, [inv_norm = std::move(inv_norm)](Node& self, Node* a) {
            ensure_grad(a);
            for (Eigen::Index r = 0; r < self.val.rows(); ++r) {
                double dot = self.grad.row(r).dot(self.val.row(r));
                a->grad.row(r) += (self.grad.row(r) - self.val.row(r) * dot) * inv_norm(r);
            }
        });
    }

    // ---- losses (all produce 1x1 nodes) ----

    // Mean over rows of -log softmax(z)[target]; targets are class indices.
    Node* cross_entropy_index(Node* z, std::vector<int> targets) {
        Eigen::Index L = z->val.rows();
        double total = 0.0;
        Mat p = vmr::softmax_rows(z->val);
        for (Eigen::Index r = 0; r < L; ++r) {
            double mx = z->val.row(r).maxCoeff();
            double lse = mx + std::log((z->val.row(r).array() - mx).exp().sum());
            total += lse - z->val(r, targets[static_cast<size_t>(r)]);
        }
        Mat v(1, 1);
        v(0, 0) = total / static_cast<double>(L);
        return unary(std::move(v), z,
                     [p = std::move(p), targets = std::move(targets)](Node& self, Node* z) {
                         ensure_grad(z);
                         double g = self.grad(0, 0) / static_cast<double>(p.rows());
                         z->grad += g * p;
                         for (Eigen::Index r = 0; r < p.rows(); ++r)
                             z->grad(r, targets[static_cast<size_t>(r)]) -= g;
                     });
    }

    // Mean over rows of H(y, softmax(z)) with soft target rows y (each summing to 1).
    Node* cross_entropy_soft(Node* z, const Mat& y) {
        Eigen::Index L = z->val.rows();
        Mat p = vmr::softmax_rows(z->val);
        double total = 0.0;
        for (Eigen::Index r = 0; r < L; ++r) {
            double mx = z->val.row(r).maxCoeff();
            double lse = mx + std::log((z->val.row(r).array() - mx).exp().sum());
            total += lse - y.row(r).dot(z->val.row(r));
        }
        Mat v(1, 1);
        v(0, 0) = total / static_cast<double>(L);
        Mat yy = y;
        return unary(std::move(v), z, [p = std::move(p), yy = std::move(yy)](Node& self, Node* z) {
            double g = self.grad(0, 0) / static_cast<double>(p.rows());
            accum(z, g * (p - yy));
        });
    }

    // Mean over entries of BCE between sigmoid(z) and targets y in [0,1].
    Node* bce_with_logits(Node* z, const Mat& y) {
        Eigen::Index n = z->val.size();
        Eigen::ArrayXXd za = z->val.array();
        Eigen::ArrayXXd loss = za.max(0.0) - za * y.array() + (1.0 + (-za.abs()).exp()).log();
        Mat v(1, 1);
        v(0, 0) = loss.sum() / static_cast<double>(n);
        Mat yy = y;
        return unary(std::move(v), z, [yy = std::move(yy), n](Node& self, Node* z) {
            Eigen::ArrayXXd s = 1.0 / (1.0 + (-z->val.array()).exp());
            accum(z, (self.grad(0, 0) / static_cast<double>(n)) * (s - yy.array()).matrix());
        });
    }

    // Elementwise smooth-L1 with beta = 1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
    Node* smooth_l1_elem(Node* a) {
        Eigen::ArrayXXd x = a->val.array();
        Mat v = (x.abs() < 1.0).select(0.5 * x.square(), x.abs() - 0.5).matrix();
        return unary(std::move(v), a, [](Node& self, Node* a) {
            Eigen::ArrayXXd x = a->val.array();
            Eigen::ArrayXXd d = (x.abs() < 1.0).select(x, x.sign());
            accum(a, self.grad.cwiseProduct(d.matrix()));
        });
    }

    Node* sum_all(Node* a) {
        Mat v(1, 1);
        v(0, 0) = a->val.sum();
        return unary(std::move(v), a, [](Node& self, Node* a) {
            accum(a, Mat::Constant(a->val.rows(), a->val.cols(), self.grad(0, 0)));
        });
    }

    Node* mean_all(Node* a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size())); }

    // Weighted sum of 1x1 nodes. Zero-weight terms are skipped entirely.
    Node* weighted_sum(const std::vector<std::pair<Node*, double>>& terms) {
        double total = 0.0;
        std::vector<std::pair<Node*, double>> active;
        for (auto& [n, w] : terms) {
            if (n == nullptr || w == 0.0) continue;
            total += w * n->val(0, 0);
            active.push_back({n, w});
        }
        Mat v(1, 1);
        v(0, 0) = total;
        bool rg = false;
        for (auto& [n, w] : active) rg = rg || n->rg;
        Node* out = make(std::move(v), rg && grad_, nullptr);
        if (out->rg) {
            out->back = [active](Node& self) {
                for (auto& [n, w] : active) accum(n, self.grad * w);
            };
        }
        return out;
    }

    // ---- backward ----

    void backward(Node* loss) {
        if (loss->val.size() != 1) throw ValidationError("backward: loss must be scalar");
        if (!grad_) throw ValidationError("backward: tape built with gradients disabled");
        for (auto& n : nodes_)
            if (n.rg) n.grad.resize(0, 0);
        loss->grad = Mat::Ones(1, 1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (!n.rg || !n.back) continue;
            if (n.grad.size() == 0) continue;  // unused branch
            n.back(n);
        }
    }

private:
    static Eigen::ArrayXXd kC_arr(const Mat& x) {
        constexpr double kC = 0.7978845608028654;
        constexpr double kA = 0.044715;
        return kC * (1.0 + 3.0 * kA * x.array().square());
    }

    static void ensure_grad(Node* n) {
        if (!n->rg) return;
        if (n->grad.size() == 0) n->grad = Mat::Zero(n->val.rows(), n->val.cols());
    }

    static void accum(Node* n, const Mat& g) {
        if (!n->rg) return;
        ensure_grad(n);
        n->grad += g;
    }

    static void check_same_shape(Node* a, Node* b, const char* op) {
        if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
            throw ValidationError(std::string(op) + ": shape mismatch");
    }

    Node* make(Mat v, bool rg, std::function<void(Node&)> back) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.val = std::move(v);
        n.rg = rg;
        n.back = std::move(back);
        return &n;
    }

    template <typename F>
    Node* unary(Mat v, Node* a, F&& f) {
        Node* n = make(std::move(v), a->rg && grad_, nullptr);
        if (n->rg) {
            Node* ap = a;
            n->back = [ap, f = std::forward<F>(f)](Node& self) { f(self, ap); };
        }
        return n;
    }

    template <typename F>
    Node* unary2(Mat v, Node* a, Node* b, F&& f) {
        Node* n = make(std::move(v), (a->rg || b->rg) && grad_, nullptr);
        if (n->rg) {
            Node *ap = a, *bp = b;
            n->back = [ap, bp, f = std::forward<F>(f)](Node& self) { f(self, ap, bp); };
        }
        return n;
    }

    std::deque<Node> nodes_;
    std::unordered_map<Param*, Node*> bound_;
    bool grad_;
};

}  // namespace vmr
