#pragma once

#include <optional>

#include "widin/encoder.hpp"
#include "widin/optim.hpp"

namespace widin {

// Training hyperparameters. Defaults are the contract; anything that changes
// here changes what an experiment means.
enum class TemplateStrategy { Fixed, Random, Aggregated, Misaligned, None };
enum class AlignmentMode { CT, SupCT, None };
enum class FeatureLossMode { MSE, Direction };
enum class TrainSchedule { Default, JointClassifier, JointDisentangler };

struct TrainConfig {
    double tau = 0.07;
    double k = 1.0;
    int batch = 64;
    double stage_a_lr = 0.002;   // SGD
    double stage_b_lr = 1e-4;    // AdamW
    double feat_weight = 2.0;
    int epochs = 60;
    TemplateStrategy template_strategy = TemplateStrategy::Fixed;
    AlignmentMode alignment = AlignmentMode::CT;
    FeatureLossMode feature_loss = FeatureLossMode::MSE;
    TrainSchedule schedule = TrainSchedule::Default;
    bool logit_margins = false;   // long-tail class margins in stage B
    double margin_scale = 1.0;

    void validate() const {
        if (!(tau > 0.0)) throw ConfigError("train.tau must be positive");
        if (k < 0.0) throw ConfigError("train.k must be >= 0");
        if (batch < 2) throw ConfigError("train.batch must be >= 2");
        if (stage_a_lr < 0.0 || stage_b_lr < 0.0) throw ConfigError("learning rates must be >= 0");
        if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (feat_weight < 0.0) throw ConfigError("train.feat_weight must be >= 0");
        if (margin_scale < 0.0) throw ConfigError("train.margin_scale must be >= 0");
    }
};

// Dense layer; bias is optional (empty tensor means none).
struct Linear {
    Tensor w;  // in x out
    Tensor b;  // 1 x out, possibly empty

    static Linear init(int in, int out, uint64_t seed, double std = 0.02, bool bias = true) {
        Linear l;
        RngStream rng(seed);
        l.w = Tensor::gaussian(in, out, rng, std);
        if (bias) l.b = Tensor(1, out);
        return l;
    }

    static Linear zeros(int in, int out, bool bias = true) {
        Linear l;
        l.w = Tensor(in, out);
        if (bias) l.b = Tensor(1, out);
        return l;
    }

    static Linear identity(int n, bool bias = false) {
        Linear l;
        l.w = Tensor::identity(n);
        if (bias) l.b = Tensor(1, n);
        return l;
    }

    bool has_bias() const { return b.rows > 0; }
    int in_dim() const { return w.rows; }
    int out_dim() const { return w.cols; }

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, w);
        if (has_bias())
            for (int i = 0; i < y.rows; ++i)
                for (int j = 0; j < y.cols; ++j) y.at(i, j) += b.at(0, j);
        return y;
    }

    struct Nodes {
        int w = -1, b = -1;
    };

    Nodes register_in(Graph& g, bool requires_grad) const {
        Nodes n;
        n.w = g.leaf(w, requires_grad);
        if (has_bias()) n.b = g.leaf(b, requires_grad);
        return n;
    }

    static int forward_node(Graph& g, const Nodes& n, int x) {
        int y = g.matmul(x, n.w);
        if (n.b >= 0) y = g.add_row(y, n.b);
        return y;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> p = {&w};
        if (has_bias()) p.push_back(&b);
        return p;
    }

    std::vector<int> node_list(const Nodes& n) const {
        std::vector<int> ids = {n.w};
        if (n.b >= 0) ids.push_back(n.b);
        return ids;
    }

    uint64_t checksum() const {
        const uint64_t hw = widin::checksum(w);
        const uint64_t hb = widin::checksum(b);
        uint64_t h = fnv1a64(&hw, sizeof(hw));
        return fnv1a64(&hb, sizeof(hb), h);
    }

    size_t param_count() const { return w.size() + b.size(); }
};

// Two-layer MLP d -> d -> d with GELU; the image-wording projector.
struct ProjectorParams {
    Linear l1, l2;

    static ProjectorParams init(int dim, uint64_t seed) {
        ProjectorParams p;
        p.l1 = Linear::init(dim, dim, derive_seed(seed, "proj.l1"), 0.02);
        p.l2 = Linear::init(dim, dim, derive_seed(seed, "proj.l2"), 0.02);
        return p;
    }

    static ProjectorParams zeros(int dim) {
        ProjectorParams p;
        p.l1 = Linear::zeros(dim, dim);
        p.l2 = Linear::zeros(dim, dim);
        return p;
    }

    int dim() const { return l1.in_dim(); }

    Tensor forward(const Tensor& x) const {
        Tensor h = l1.forward(x);
        for (auto& v : h.data) v = 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440));
        return l2.forward(h);
    }

    struct Nodes {
        Linear::Nodes l1, l2;
    };

    Nodes register_in(Graph& g, bool requires_grad) const {
        return {l1.register_in(g, requires_grad), l2.register_in(g, requires_grad)};
    }

    static int forward_node(Graph& g, const Nodes& n, int x) {
        return Linear::forward_node(g, n.l2, g.gelu(Linear::forward_node(g, n.l1, x)));
    }

    std::vector<Tensor*> params() {
        return {&l1.w, &l1.b, &l2.w, &l2.b};
    }

    std::vector<int> node_list(const Nodes& n) const {
        return {n.l1.w, n.l1.b, n.l2.w, n.l2.b};
    }

    uint64_t checksum() const {
        const uint64_t a = l1.checksum();
        const uint64_t b = l2.checksum();
        uint64_t h = fnv1a64(&a, sizeof(a));
        return fnv1a64(&b, sizeof(b), h);
    }

    size_t param_count() const { return l1.param_count() + l2.param_count(); }
};

// How fine-grained embeddings are produced: through the frozen language
// encoder (image wording) or directly from the projector-shaped MLP (the
// direct-prediction ablation arm).
struct WordingModel {
    ProjectorParams projector;
    bool direct = false;
    bool trained = false;  // set by stage A; stage B refuses to run without it
};

// Everything trainable, plus the optional uni-modal bridge.
struct WidinModel {
    ProjectorParams projector;           // F_P
    Linear disentangler;                 // F_D, residual, zero-initialized
    Linear classifier;                   // F_C
    std::optional<Linear> bridge;        // W_B, no bias
    bool direct_wording = false;
    uint64_t encoder_hash = 0;
};

// F_P(x): the slot token embedding. Deliberately unnormalized; it replaces a
// token-table lookup, not a space embedding.
inline Tensor word_image(const ProjectorParams& fp, const Tensor& x) {
    if (x.cols != fp.dim() || x.rows != 1)
        throw ShapeError("word_image: expected 1x" + std::to_string(fp.dim()));
    return fp.forward(x);
}

// t_x: encode the prompt with the worded image in the slot position.
inline Tensor fine_grained_embedding(const FrozenLanguageEncoder& enc, const Vocabulary& vocab,
                                     const ProjectorParams& fp, const Tensor& x,
                                     const PromptTemplate& tmpl) {
    const TokenSequence seq = tokenize(vocab, tmpl.with_slot());
    if (!seq.has_slot()) throw Error("fine_grained_embedding: template has no slot");
    const Tensor slot = word_image(fp, x);
    return enc.encode(seq, &slot);
}

// Eq. of the disentanglement target: x_e = x - k (t_x - t_c), NOT
// re-normalized, and always treated as a constant downstream.
inline Tensor disentangle_target(const Tensor& x, const Tensor& t_x, const Tensor& t_c, double k) {
    require_same_shape(x, t_x, "disentangle_target");
    require_same_shape(x, t_c, "disentangle_target");
    if (k < 0.0) throw Error("disentangle_target: k must be >= 0");
    return sub(x, scale(sub(t_x, t_c), k));
}

// x_e' = x + F_D(x); at zero initialization this is the identity.
inline Tensor predict_invariant(const Linear& fd, const Tensor& x) {
    if (x.cols != fd.in_dim()) throw ShapeError("predict_invariant: dim mismatch");
    return add(x, fd.forward(x));
}

struct Classification {
    int label = 0;
    Tensor logits;  // 1 x C
};

// Test-time path: argmax F_C(x + F_D(x)). Neither the language encoder nor
// the projector is touched here.
inline Classification classify(const Linear& fd, const Linear& fc, const Tensor& x) {
    Classification out;
    out.logits = fc.forward(predict_invariant(fd, x));
    out.label = argmax_row(out.logits, 0);
    return out;
}

}  // namespace widin
