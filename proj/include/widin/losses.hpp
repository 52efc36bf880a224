#pragma once

#include "widin/model.hpp"

namespace widin {

// Symmetric instance-level InfoNCE between a batch of visual embeddings X
// and their fine-grained text embeddings T (positive pairs share a row
// index). Both directional denominators run over the full batch and include
// the positive, so perfect alignment converges to 2*ln(1+(B-1)e^{-1/tau}),
// not zero. SupCT treats all same-class rows as positives, averaged per
// anchor; None contributes nothing.
inline int instance_alignment_loss_node(Graph& g, int x_batch, int t_batch, double tau,
                                        AlignmentMode mode = AlignmentMode::CT,
                                        const std::vector<int>* labels = nullptr) {
    if (mode == AlignmentMode::None) return g.leaf(Tensor(1, 1));
    const Tensor& X = g.value(x_batch);
    const Tensor& T = g.value(t_batch);
    if (X.rows != T.rows || X.cols != T.cols)
        throw ShapeError("instance_alignment_loss: X and T must match");
    const int B = X.rows;
    if (B < 2) throw DegenerateInput("instance_alignment_loss: batch must hold at least 2 rows");
    if (mode == AlignmentMode::SupCT && (labels == nullptr || int(labels->size()) != B))
        throw Error("instance_alignment_loss: SupCT needs one label per row");

    // s_text(i, j) = t_i . x_j   (text anchor against visual candidates)
    // s_vis(i, j)  = x_i . t_j   (visual anchor against text candidates)
    const int s_text = g.matmul(t_batch, g.transpose(x_batch));
    const int s_vis = g.transpose(s_text);

    std::vector<int> terms;
    terms.reserve(2 * B);
    for (int i = 0; i < B; ++i) {
        std::vector<int> positives = {i};
        if (mode == AlignmentMode::SupCT) {
            positives.clear();
            for (int j = 0; j < B; ++j)
                if ((*labels)[j] == (*labels)[i]) positives.push_back(j);
        }
        const int row_text = g.slice_row(s_text, i);
        const int row_vis = g.slice_row(s_vis, i);
        std::vector<int> per_anchor;
        for (int p : positives) {
            per_anchor.push_back(g.softmax_xent(row_text, p, tau));
            per_anchor.push_back(g.softmax_xent(row_vis, p, tau));
        }
        int anchor = per_anchor[0];
        for (size_t k = 1; k < per_anchor.size(); ++k) anchor = g.add(anchor, per_anchor[k]);
        terms.push_back(g.scale(anchor, 1.0 / double(positives.size())));
    }
    int total = terms[0];
    for (size_t k = 1; k < terms.size(); ++k) total = g.add(total, terms[k]);
    return g.scale(total, 1.0 / double(B));
}

inline double instance_alignment_loss(const Tensor& x_batch, const Tensor& t_batch, double tau,
                                      AlignmentMode mode = AlignmentMode::CT,
                                      const std::vector<int>* labels = nullptr) {
    Graph g;
    const int x = g.leaf(x_batch);
    const int t = g.leaf(t_batch);
    return g.value(instance_alignment_loss_node(g, x, t, tau, mode, labels)).at(0, 0);
}

// Cross-entropy of one fine-grained embedding against the class-text table.
inline int class_alignment_loss_node(Graph& g, int t_x, int class_table, int label, double tau) {
    const Tensor& table = g.value(class_table);
    if (label < 0 || label >= table.rows)
        throw Error("class_alignment_loss: label out of range");
    const int logits = g.matmul(t_x, g.transpose(class_table));
    return g.softmax_xent(logits, label, tau);
}

inline double class_alignment_loss(const Tensor& t_x, const Tensor& class_table, int label,
                                   double tau) {
    Graph g;
    const int t = g.leaf(t_x);
    const int tab = g.leaf(class_table);
    return g.value(class_alignment_loss_node(g, t, tab, label, tau)).at(0, 0);
}

// Disentangler regression loss. MSE mode carries the configured loss weight;
// direction mode is the scale-blind 1 - cosine alternative, averaged over
// rows when given a batch.
inline int feature_loss_node(Graph& g, int pred, const Tensor& target, FeatureLossMode mode,
                             double feat_weight = 2.0) {
    require_same_shape(g.value(pred), target, "feature_loss");
    if (mode == FeatureLossMode::MSE) return g.scale(g.mse(pred, target), feat_weight);
    Tensor unit_target = target;
    for (int i = 0; i < target.rows; ++i)
        set_row(unit_target, i, l2_normalized(row_of(target, i)));  // throws on zero rows
    // mean over rows of cos(pred_i, target_i)
    const int prod = g.mul(g.l2_normalize(pred), g.leaf(unit_target));
    const Tensor ones(target.cols, 1, std::vector<double>(target.cols, 1.0));
    const int mean_cos = g.matmul(g.mean_rows(prod), g.leaf(ones));
    Tensor one(1, 1);
    one.at(0, 0) = 1.0;
    return g.sub(g.leaf(one), mean_cos);
}

inline double feature_loss(const Tensor& pred, const Tensor& target, FeatureLossMode mode,
                           double feat_weight = 2.0) {
    Graph g;
    const int p = g.leaf(pred);
    return g.value(feature_loss_node(g, p, target, mode, feat_weight)).at(0, 0);
}

// Cross-entropy with class-prior margins added to the logits
// (z_c + margin_scale * ln pi_c). Uniform priors shift every logit equally
// and reduce to plain cross-entropy gradients.
inline Tensor log_prior_margins(const std::vector<double>& priors, double margin_scale) {
    const int C = static_cast<int>(priors.size());
    double sum = 0.0;
    for (double p : priors) {
        if (!(p > 0.0)) throw Error("logit_adjusted_loss: priors must be strictly positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("logit_adjusted_loss: priors must sum to 1");
    Tensor m(1, C);
    for (int c = 0; c < C; ++c) m.at(0, c) = margin_scale * std::log(priors[c]);
    return m;
}

inline int logit_adjusted_loss_node(Graph& g, int logits, int label, const Tensor& margins) {
    return g.softmax_xent(g.add_row(logits, g.leaf(margins)), label, 1.0);
}

inline double logit_adjusted_loss(const Tensor& logits, int label,
                                  const std::vector<double>& priors, double margin_scale = 1.0) {
    const Tensor margins = log_prior_margins(priors, margin_scale);
    Graph g;
    const int l = g.leaf(logits);
    return g.value(logit_adjusted_loss_node(g, l, label, margins)).at(0, 0);
}

}  // namespace widin
