#include "cellgraph/grand.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/metrics.hpp"
#include "cellgraph/parallel.hpp"

namespace cellgraph {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

void GrandConfig::check() const {
    auto fail = [](const std::string& m) { throw Error("GrandConfig: " + m); };
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) fail("drop_rate must be in [0, 1)");
    if (prop_order < 0) fail("prop_order must be >= 0");
    if (n_augmentations < 1) fail("n_augmentations must be >= 1");
    if (!(temperature > 0.0)) fail("temperature must be > 0");
    if (!(consistency_weight >= 0.0)) fail("consistency_weight must be >= 0");
    if (hidden_dim < 1) fail("hidden_dim must be >= 1");
    if (!(input_dropout >= 0.0 && input_dropout < 1.0)) fail("input_dropout must be in [0, 1)");
    if (!(hidden_dropout >= 0.0 && hidden_dropout < 1.0)) fail("hidden_dropout must be in [0, 1)");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (patience < 1) fail("patience must be >= 1");
}

GrandParams GrandParams::zeros(int n_features, int hidden, int n_classes) {
    return {Matrix::Zero(n_features, hidden), Vector::Zero(hidden), Matrix::Zero(hidden, n_classes),
            Vector::Zero(n_classes)};
}

GrandParams GrandParams::glorot(int n_features, int hidden, int n_classes, Rng& rng) {
    GrandParams p = zeros(n_features, hidden, n_classes);
    const double l1 = std::sqrt(6.0 / double(n_features + hidden));
    const double l2 = std::sqrt(6.0 / double(hidden + n_classes));
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.uniform(-l1, l1);
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = rng.uniform(-l2, l2);
    return p;
}

// ---------------------------------------------------------------- building blocks

Matrix drop_node(const Matrix& x, double drop_rate, std::span<const std::uint8_t> mask) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw Error("drop_node: drop_rate must be in [0, 1)");
    if (mask.size() != std::size_t(x.rows())) throw Error("drop_node: mask length differs from node count");
    Matrix out = x;
    const double scale = 1.0 / (1.0 - drop_rate);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (mask[std::size_t(i)]) {
            if (drop_rate > 0.0) out.row(i) *= scale;
        } else {
            out.row(i).setZero();
        }
    }
    return out;
}

Matrix drop_node(const Matrix& x, double drop_rate, Rng& rng) {
    std::vector<std::uint8_t> mask(std::size_t(x.rows()));
    for (auto& m : mask) m = rng.bernoulli(1.0 - drop_rate) ? 1 : 0;
    return drop_node(x, drop_rate, mask);
}

Matrix propagate(const NormAdj& adj, const Matrix& x, int k) {
    if (k < 0) throw Error("propagate: K must be >= 0");
    if (std::size_t(x.rows()) != adj.n) throw Error("propagate: feature rows do not match node count");
    Matrix sum = x;
    Matrix cur = x;
    for (int step = 0; step < k; ++step) {
        cur = adj.multiply(cur);
        sum += cur;
    }
    sum /= double(k + 1);
    return sum;
}

namespace {

void softmax_rows(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

struct Forward {
    Matrix pre;     // Z W1 + b1
    Matrix hidden;  // relu(pre) * mask
    Matrix logits;
    Matrix probs;
};

Forward forward(const GrandParams& p, const Matrix& z, const Matrix& hidden_mask) {
    if (z.cols() != p.w1.rows()) throw Error("mlp_forward: feature dimension does not match the model");
    Forward f;
    f.pre = z * p.w1;
    f.pre.rowwise() += p.b1.transpose();
    f.hidden = f.pre.cwiseMax(0.0);
    if (hidden_mask.size() > 0) f.hidden = f.hidden.cwiseProduct(hidden_mask);
    f.logits = f.hidden * p.w2;
    f.logits.rowwise() += p.b2.transpose();
    f.probs = f.logits;
    softmax_rows(f.probs);
    return f;
}

// -log softmax(logits)[y], computed stably.
double cross_entropy(const Matrix& logits, Eigen::Index i, int y) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    return lse - logits(i, y);
}

// Sharpened rows of `pbar`.
Matrix sharpen_rows(const Matrix& pbar, double temperature) {
    Matrix q(pbar.rows(), pbar.cols());
    for (Eigen::Index i = 0; i < pbar.rows(); ++i) {
        std::vector<double> row(pbar.row(i).data(), pbar.row(i).data() + pbar.cols());
        const auto s = sharpen(row, temperature);
        for (Eigen::Index j = 0; j < pbar.cols(); ++j) q(i, j) = s[std::size_t(j)];
    }
    return q;
}

void check_labels(std::span<const int> labels, std::span<const std::size_t> train_idx, Eigen::Index n, Eigen::Index c) {
    if (train_idx.empty()) throw Error("grand_loss: empty train mask");
    if (labels.size() != std::size_t(n)) throw Error("grand_loss: label vector length differs from node count");
    for (std::size_t i : train_idx) {
        if (i >= labels.size()) throw Error("grand_loss: train index out of range");
        if (labels[i] < 0 || labels[i] >= c) throw Error("grand_loss: train node without a valid label");
    }
}

}  // namespace

Matrix mlp_forward(const GrandParams& params, const Matrix& x) { return forward(params, x, Matrix()).probs; }

std::vector<double> sharpen(std::span<const double> p, double temperature) {
    if (!(temperature > 0.0)) throw Error("sharpen: temperature must be > 0");
    const double a = 1.0 / temperature;
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : p) {
        if (v > 0.0) mx = std::max(mx, std::log(v));
    }
    std::vector<double> out(p.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        out[j] = p[j] > 0.0 ? std::exp(a * (std::log(p[j]) - mx)) : 0.0;
        sum += out[j];
    }
    for (double& v : out) v /= sum;
    return out;
}

LossParts grand_loss(const std::vector<Matrix>& outputs, std::span<const int> labels,
                     std::span<const std::size_t> train_idx, double consistency_weight, double temperature) {
    if (outputs.empty()) throw Error("grand_loss: need at least one output");
    const Eigen::Index n = outputs[0].rows(), c = outputs[0].cols();
    check_labels(labels, train_idx, n, c);
    const double s_count = double(outputs.size());

    LossParts parts;
    Matrix pbar = Matrix::Zero(n, c);
    for (const auto& p : outputs) {
        if (p.rows() != n || p.cols() != c) throw Error("grand_loss: output shapes differ");
        double ce = 0.0;
        for (std::size_t i : train_idx) ce -= std::log(p(Eigen::Index(i), labels[i]));
        parts.supervised += ce / double(train_idx.size());
        pbar += p;
    }
    parts.supervised /= s_count;
    pbar /= s_count;
    const Matrix q = sharpen_rows(pbar, temperature);
    for (const auto& p : outputs) parts.consistency += (q - p).squaredNorm();
    parts.consistency /= s_count * double(n);
    parts.total = parts.supervised + consistency_weight * parts.consistency;
    return parts;
}

LossParts grand_objective(const GrandParams& params, const std::vector<AugmentedInput>& inputs,
                          std::span<const int> labels, std::span<const std::size_t> train_idx,
                          double consistency_weight, double temperature, bool detach_target, GrandParams* grad) {
    if (inputs.empty()) throw Error("grand_objective: need at least one augmentation");
    const std::size_t S = inputs.size();
    std::vector<Forward> fw(S);
    parallel_for(S, [&](std::size_t s) { fw[s] = forward(params, inputs[s].features, inputs[s].hidden_mask); });

    const Eigen::Index n = fw[0].probs.rows(), c = fw[0].probs.cols();
    check_labels(labels, train_idx, n, c);
    const double inv_s = 1.0 / double(S);
    const double inv_t = 1.0 / double(train_idx.size());
    const double inv_ns = inv_s / double(n);

    LossParts parts;
    Matrix pbar = Matrix::Zero(n, c);
    for (const auto& f : fw) {
        double ce = 0.0;
        for (std::size_t i : train_idx) ce += cross_entropy(f.logits, Eigen::Index(i), labels[i]);
        parts.supervised += ce * inv_t;
        pbar += f.probs;
    }
    parts.supervised *= inv_s;
    pbar *= inv_s;
    const Matrix q = sharpen_rows(pbar, temperature);
    for (const auto& f : fw) parts.consistency += (q - f.probs).squaredNorm();
    parts.consistency *= inv_ns;
    parts.total = parts.supervised + consistency_weight * parts.consistency;
    if (!grad) return parts;

    // d(total)/d(pbar) through the sharpened target, shared by every s.
    Matrix g_pbar = Matrix::Zero(n, c);
    if (!detach_target && consistency_weight > 0.0) {
        Matrix g_q = Matrix::Zero(n, c);
        for (const auto& f : fw) g_q += 2.0 * (q - f.probs);
        g_q *= consistency_weight * inv_ns;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dot = g_q.row(i).dot(q.row(i));
            for (Eigen::Index k = 0; k < c; ++k) {
                if (pbar(i, k) > 0.0) g_pbar(i, k) = (q(i, k) * (g_q(i, k) - dot)) / (temperature * pbar(i, k));
            }
        }
    }

    *grad = GrandParams::zeros(int(params.w1.rows()), int(params.w1.cols()), int(c));
    std::vector<GrandParams> parts_grad(S, *grad);
    parallel_for(S, [&](std::size_t s) {
        const Forward& f = fw[s];
        // Gradient w.r.t. probabilities (consistency) -> logits via softmax.
        Matrix g_p = consistency_weight * inv_ns * 2.0 * (f.probs - q) + inv_s * g_pbar;
        Matrix g_logit(n, c);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dot = g_p.row(i).dot(f.probs.row(i));
            g_logit.row(i) = f.probs.row(i).array() * (g_p.row(i).array() - dot);
        }
        for (std::size_t i : train_idx) {
            const auto r = Eigen::Index(i);
            Eigen::RowVectorXd d = f.probs.row(r);
            d(labels[i]) -= 1.0;
            g_logit.row(r) += inv_s * inv_t * d;
        }
        GrandParams& g = parts_grad[s];
        g.w2 = f.hidden.transpose() * g_logit;
        g.b2 = g_logit.colwise().sum().transpose();
        Matrix g_hidden = g_logit * params.w2.transpose();
        if (inputs[s].hidden_mask.size() > 0) g_hidden = g_hidden.cwiseProduct(inputs[s].hidden_mask);
        g_hidden = g_hidden.cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
        g.w1 = inputs[s].features.transpose() * g_hidden;
        g.b1 = g_hidden.colwise().sum().transpose();
    });
    for (const auto& g : parts_grad) {
        grad->w1 += g.w1;
        grad->b1 += g.b1;
        grad->w2 += g.w2;
        grad->b2 += g.b2;
    }
    return parts;
}

std::vector<int> argmax_rows(const Matrix& probs) {
    std::vector<int> out(std::size_t(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < probs.cols(); ++j) {
            if (probs(i, j) > probs(i, best)) best = j;
        }
        out[std::size_t(i)] = int(best);
    }
    return out;
}

// ---------------------------------------------------------------- training

namespace {

struct Adam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd;
    long t = 0;
    GrandParams m, v;

    Adam(const GrandParams& shape, double lr_, double wd_) : lr(lr_), wd(wd_) {
        m = GrandParams::zeros(int(shape.w1.rows()), int(shape.w1.cols()), int(shape.w2.cols()));
        v = m;
    }

    template <class P, class G>
    void update(P& param, G grad, P& m1, P& m2, double c1, double c2) {
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double g = grad.data()[i] + wd * param.data()[i];
            double& a = m1.data()[i];
            double& b = m2.data()[i];
            a = b1 * a + (1.0 - b1) * g;
            b = b2 * b + (1.0 - b2) * g * g;
            param.data()[i] -= lr * (a / c1) / (std::sqrt(b / c2) + eps);
        }
    }

    void step(GrandParams& p, const GrandParams& g) {
        ++t;
        const double c1 = 1.0 - std::pow(b1, double(t));
        const double c2 = 1.0 - std::pow(b2, double(t));
        update(p.w1, g.w1, m.w1, v.w1, c1, c2);
        update(p.b1, g.b1, m.b1, v.b1, c1, c2);
        update(p.w2, g.w2, m.w2, v.w2, c1, c2);
        update(p.b2, g.b2, m.b2, v.b2, c1, c2);
    }
};

Matrix bernoulli_scale(Eigen::Index rows, Eigen::Index cols, double drop, Rng& rng) {
    Matrix m(rows, cols);
    const double keep = 1.0 - drop;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return m;
}

}  // namespace

GrandModel train_grand(const NormAdj& adj, const Matrix& x, std::span<const int> labels, const SplitMasks& split,
                       const GrandConfig& cfg) {
    cfg.check();
    const Eigen::Index n = x.rows();
    if (std::size_t(n) != adj.n) throw Error("train_grand: feature rows do not match node count");
    if (labels.size() != std::size_t(n) || split.size() != std::size_t(n)) {
        throw Error("train_grand: labels/masks do not match node count");
    }
    if (!x.allFinite()) throw Error("train_grand: features contain non-finite values");
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (int(split.train[i]) + int(split.val[i]) + int(split.test[i]) > 1) throw Error("train_grand: masks overlap");
    }
    const auto train_idx = split.train_idx();
    const auto val_idx = split.val_idx();
    if (train_idx.empty()) throw Error("train_grand: no labelled training node");

    int n_classes = 2;
    for (int l : labels) n_classes = std::max(n_classes, l + 1);

    GrandModel model;
    model.config = cfg;
    model.n_classes = n_classes;
    Rng init_rng(derive_seed(cfg.seed, "grand-init"));
    model.params = GrandParams::glorot(int(x.cols()), cfg.hidden_dim, n_classes, init_rng);

    const Matrix x_full = propagate(adj, x, cfg.prop_order);
    std::vector<int> val_true;
    for (std::size_t i : val_idx) val_true.push_back(labels[i]);
    const bool binary = n_classes == 2;

    Adam opt(model.params, cfg.learning_rate, cfg.weight_decay);
    GrandParams best = model.params;
    double best_f1 = -1.0, best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const std::uint64_t epoch_root = derive_seed(cfg.seed, "grand-epoch");
    std::vector<AugmentedInput> aug(std::size_t(cfg.n_augmentations));
    GrandParams grad;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(epoch_root, std::uint64_t(epoch));
        parallel_for(aug.size(), [&](std::size_t s) {
            Rng rng(derive_seed(epoch_seed, std::uint64_t(s)));
            Matrix z = propagate(adj, drop_node(x, cfg.drop_rate, rng), cfg.prop_order);
            if (cfg.input_dropout > 0.0) z = z.cwiseProduct(bernoulli_scale(n, z.cols(), cfg.input_dropout, rng));
            aug[s].features = std::move(z);
            aug[s].hidden_mask = cfg.hidden_dropout > 0.0 ? bernoulli_scale(n, cfg.hidden_dim, cfg.hidden_dropout, rng)
                                                          : Matrix();
        });
        const LossParts lp = grand_objective(model.params, aug, labels, train_idx, cfg.consistency_weight,
                                             cfg.temperature, cfg.detach_sharpened_target, &grad);
        if (!std::isfinite(lp.total)) throw Error("train_grand: non-finite loss at epoch " + std::to_string(epoch));
        opt.step(model.params, grad);

        EpochRecord rec{epoch, lp.total, lp.supervised, lp.consistency, 0.0, 0.0};
        if (!val_idx.empty()) {
            const Forward f = forward(model.params, x_full, Matrix());
            std::vector<double> pos;
            double vl = 0.0;
            for (std::size_t i : val_idx) {
                pos.push_back(f.probs(Eigen::Index(i), 1));
                vl += cross_entropy(f.logits, Eigen::Index(i), labels[i]);
            }
            rec.val_loss = vl / double(val_idx.size());
            if (binary) {
                rec.val_f1 = compute_metrics(val_true, pos).f1;
            } else {
                const auto pred = argmax_rows(f.probs);
                std::size_t hit = 0;
                for (std::size_t t = 0; t < val_idx.size(); ++t) hit += pred[val_idx[t]] == val_true[t];
                rec.val_f1 = double(hit) / double(val_idx.size());
            }
        }
        model.history.push_back(rec);

        if (val_idx.empty()) {
            best = model.params;
            model.best_epoch = epoch;
            continue;
        }
        if (rec.val_f1 > best_f1 || (rec.val_f1 == best_f1 && rec.val_loss < best_loss)) {
            best_f1 = rec.val_f1;
            best_loss = rec.val_loss;
            best = model.params;
            model.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model.params = std::move(best);
    return model;
}

Prediction predict_grand(const GrandModel& model, const NormAdj& adj, const Matrix& x) {
    if (x.cols() != model.params.w1.rows()) {
        throw Error("predict_grand: model expects " + std::to_string(model.params.w1.rows()) + " features, got " +
                    std::to_string(x.cols()));
    }
    Prediction p;
    p.probs = mlp_forward(model.params, propagate(adj, x, model.config.prop_order));
    p.labels = argmax_rows(p.probs);
    return p;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[] = "GRND1";

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

template <class M>
void put_blob(std::string& out, const M& m) {
    out.append(reinterpret_cast<const char*>(m.data()), std::size_t(m.size()) * sizeof(double));
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;

    void need(std::size_t k) const {
        if (pos + k > s.size()) throw Error("GRAND checkpoint is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, s.data() + pos, 4);
        pos += 4;
        return v;
    }
    template <class M>
    void blob(M& m) {
        const std::size_t bytes = std::size_t(m.size()) * sizeof(double);
        need(bytes);
        std::memcpy(m.data(), s.data() + pos, bytes);
        pos += bytes;
    }
};

}  // namespace

std::string encode_grand_checkpoint(const GrandModel& model) {
    const auto& p = model.params;
    std::string out(kMagic, 5);
    put_u32(out, std::uint32_t(p.w1.rows()));
    put_u32(out, std::uint32_t(p.w1.cols()));
    put_u32(out, std::uint32_t(p.w2.cols()));
    put_u32(out, std::uint32_t(model.config.prop_order));
    put_blob(out, p.w1);
    put_blob(out, p.b1);
    put_blob(out, p.w2);
    put_blob(out, p.b2);
    return out;
}

GrandModel decode_grand_checkpoint(const std::string& bytes) {
    if (bytes.size() < 5 || bytes.compare(0, 5, kMagic) != 0) throw Error("not a GRAND checkpoint (bad magic)");
    Reader r{bytes, 5};
    const auto f = r.u32(), h = r.u32(), c = r.u32(), k = r.u32();
    if (f == 0 || h == 0 || c < 2 || k > 1000) throw Error("GRAND checkpoint has invalid dimensions");
    GrandModel m;
    m.params = GrandParams::zeros(int(f), int(h), int(c));
    m.config.hidden_dim = int(h);
    m.config.prop_order = int(k);
    m.n_classes = int(c);
    r.blob(m.params.w1);
    r.blob(m.params.b1);
    r.blob(m.params.w2);
    r.blob(m.params.b2);
    if (r.pos != bytes.size()) throw Error("GRAND checkpoint has trailing bytes");
    return m;
}

void save_grand_checkpoint(const GrandModel& model, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_grand_checkpoint(model));
}

GrandModel load_grand_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_grand_checkpoint(io::read_file(path));
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + ": " + path.string());
    }
}

std::string encode_history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,total,supervised,consistency,val_f1,val_loss\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + io::format_double(r.total) + "," + io::format_double(r.supervised) +
               "," + io::format_double(r.consistency) + "," + io::format_double(r.val_f1) + "," +
               io::format_double(r.val_loss) + "\n";
    }
    return out;
}

}  // namespace cellgraph
