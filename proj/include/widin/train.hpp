#pragma once

#include <map>

#include "widin/losses.hpp"
#include "widin/world.hpp"

namespace widin {

struct LossTrace {
    std::map<std::string, std::vector<double>> series;

    void append(const std::string& name, double v) { series[name].push_back(v); }
    bool has(const std::string& name) const { return series.count(name) != 0; }
    const std::vector<double>& at(const std::string& name) const { return series.at(name); }
};

// Resolves the prompt strategy into concrete per-sample choices: which
// template(s) produce t_x and which class-text table pairs with them. The
// random strategy keys its choice on the sample's position in the split, so
// stage B reconstructs exactly the pairing stage A trained with.
class TemplatePlan {
public:
    static constexpr int kNone = 3;       // index of the bare [CLS, <V>] prompt
    static constexpr int kAggregated = -1;

    TemplatePlan(const World& world, TemplateStrategy strategy, uint64_t seed)
        : strategy_(strategy), seed_(seed) {
        const auto& b = PromptTemplate::builtins();
        for (int i = 0; i < 3; ++i) {
            slot_seqs_.push_back(tokenize(world.vocab(), b[i].with_slot()));
            tables_.push_back(class_text_table(world.encoder(), world.vocab(), b[i],
                                               world.spec().num_classes));
        }
        slot_seqs_.push_back(tokenize(world.vocab(), PromptTemplate::none().with_slot()));
        tables_.push_back(class_text_table(world.encoder(), world.vocab(), PromptTemplate::none(),
                                           world.spec().num_classes));
        Tensor agg = tables_[0];
        for (int i = 1; i < 3; ++i) agg = add(agg, tables_[i]);
        aggregated_table_ = scale(agg, 1.0 / 3.0);
    }

    TemplateStrategy strategy() const { return strategy_; }

    // Template ids whose embeddings are averaged to form t_x.
    std::vector<int> tx_templates(size_t sample_index) const {
        switch (strategy_) {
            case TemplateStrategy::Fixed: return {0};
            case TemplateStrategy::Random:
                return {static_cast<int>(derive_seed(seed_, "template.pick", sample_index) % 3)};
            case TemplateStrategy::Aggregated: return {0, 1, 2};
            case TemplateStrategy::Misaligned: return {1};
            case TemplateStrategy::None: return {kNone};
        }
        throw Error("unreachable template strategy");
    }

    // Table paired with t_x for losses and for the disentanglement target.
    int tc_table_id(size_t sample_index) const {
        switch (strategy_) {
            case TemplateStrategy::Fixed: return 0;
            case TemplateStrategy::Random: return tx_templates(sample_index)[0];
            case TemplateStrategy::Aggregated: return kAggregated;
            case TemplateStrategy::Misaligned: return 0;  // deliberately not t_x's template
            case TemplateStrategy::None: return kNone;
        }
        throw Error("unreachable template strategy");
    }

    const Tensor& table(int id) const {
        return id == kAggregated ? aggregated_table_ : tables_.at(id);
    }
    const TokenSequence& slot_sequence(int id) const { return slot_seqs_.at(id); }

private:
    TemplateStrategy strategy_;
    uint64_t seed_;
    std::vector<TokenSequence> slot_seqs_;
    std::vector<Tensor> tables_;
    Tensor aggregated_table_;
};

namespace detail {

inline std::vector<size_t> seeded_permutation(size_t n, uint64_t seed) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    RngStream rng(seed);
    for (size_t i = n; i > 1; --i) {
        const size_t j = rng.next_u64() % i;
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

inline Tensor gather_x(const DatasetSplit& split, const std::vector<size_t>& idx, int dim) {
    Tensor X(static_cast<int>(idx.size()), dim);
    for (size_t b = 0; b < idx.size(); ++b) set_row(X, static_cast<int>(b), split.samples[idx[b]].x);
    return X;
}

// t_x node for one sample: encoder forward(s) per the plan, or the direct
// MLP prediction when wording is bypassed.
inline int tx_node_for_sample(Graph& g, const World& world, const TemplatePlan& plan,
                              size_t sample_index, int slot_node, bool direct) {
    if (direct) return g.l2_normalize(slot_node);
    const std::vector<int> ids = plan.tx_templates(sample_index);
    int acc = -1;
    for (int tid : ids) {
        const int t = world.encoder().encode_node(g, plan.slot_sequence(tid), slot_node);
        acc = acc < 0 ? t : g.add(acc, t);
    }
    return ids.size() > 1 ? g.scale(acc, 1.0 / double(ids.size())) : acc;
}

}  // namespace detail

// Fine-grained embedding of one raw visual embedding under the plan (pure
// forward, no gradients).
inline Tensor plan_tx(const World& world, const WordingModel& wording, const TemplatePlan& plan,
                      size_t sample_index, const Tensor& x) {
    Graph g;
    const auto nodes = wording.projector.register_in(g, false);
    const int slot = ProjectorParams::forward_node(g, nodes, g.leaf(x));
    return g.value(detail::tx_node_for_sample(g, world, plan, sample_index, slot, wording.direct));
}

inline Tensor plan_tc(const TemplatePlan& plan, size_t sample_index, int label) {
    return row_of(plan.table(plan.tc_table_id(sample_index)), label);
}

struct StageAResult {
    WordingModel wording;
    LossTrace trace;
    // populated only by the joint schedule variants
    std::optional<Linear> classifier;
    std::optional<Linear> disentangler;
};

// Stage one: train the projector under the alignment losses with SGD.
// Optionally co-trains the classifier (on the live x_e, gradients flowing
// into the projector) or the disentangler (against detached live targets) for
// the inferior schedules of the schedule ablation.
inline StageAResult train_stage_alignment(const World& world, const DatasetSplit& split,
                                          const TrainConfig& cfg, uint64_t seed,
                                          bool direct_wording = false) {
    cfg.validate();
    if (split.samples.empty()) throw DegenerateInput("stage A: empty training split");
    const int d = world.spec().dim;
    const int C = world.spec().num_classes;
    const bool joint_fc = cfg.schedule == TrainSchedule::JointClassifier;
    const bool joint_fd = cfg.schedule == TrainSchedule::JointDisentangler;

    StageAResult out;
    out.wording.projector = ProjectorParams::init(d, derive_seed(seed, "fp.init"));
    out.wording.direct = direct_wording;
    if (joint_fc) out.classifier = Linear::init(d, C, derive_seed(seed, "fc.init"));
    if (joint_fd) out.disentangler = Linear::zeros(d, d);

    const TemplatePlan plan(world, cfg.template_strategy, seed);
    OptimState opt = OptimState::sgd(cfg.stage_a_lr);
    const size_t n = split.samples.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto perm = detail::seeded_permutation(n, derive_seed(seed, "stageA.perm", epoch));
        double ep_ia = 0.0, ep_ca = 0.0, ep_extra = 0.0;
        size_t counted = 0;

        for (size_t start = 0; start < n; start += cfg.batch) {
            const size_t stop = std::min(n, start + cfg.batch);
            const int B = static_cast<int>(stop - start);
            if (B < 2 && cfg.alignment == AlignmentMode::CT) continue;  // degenerate remainder
            const std::vector<size_t> idx(perm.begin() + start, perm.begin() + stop);

            Graph g;
            const auto fp = out.wording.projector.register_in(g, true);
            Linear::Nodes fc{}, fd{};
            if (joint_fc) fc = out.classifier->register_in(g, true);
            if (joint_fd) fd = out.disentangler->register_in(g, true);

            const int xb = g.leaf(detail::gather_x(split, idx, d));
            const int slots = ProjectorParams::forward_node(g, fp, xb);

            std::vector<int> tx_nodes(B);
            std::vector<int> labels(B);
            for (int b = 0; b < B; ++b) {
                labels[b] = split.samples[idx[b]].label;
                tx_nodes[b] = detail::tx_node_for_sample(g, world, plan, idx[b],
                                                         g.slice_row(slots, b), direct_wording);
            }
            const int T = B > 1 ? g.concat_rows(tx_nodes) : tx_nodes[0];

            int loss = -1;
            double batch_ia = 0.0;
            if (cfg.alignment != AlignmentMode::None) {
                const int l_ia = instance_alignment_loss_node(g, xb, T, cfg.tau, cfg.alignment,
                                                              &labels);
                batch_ia = g.value(l_ia).at(0, 0);
                loss = l_ia;
            }

            // class-level alignment, each sample against its paired table
            std::map<int, int> table_leaves;
            int l_ca = -1;
            for (int b = 0; b < B; ++b) {
                const int tid = plan.tc_table_id(idx[b]);
                if (!table_leaves.count(tid)) table_leaves[tid] = g.leaf(plan.table(tid));
                const int term = class_alignment_loss_node(g, g.slice_row(T, b),
                                                           table_leaves[tid], labels[b], cfg.tau);
                l_ca = l_ca < 0 ? term : g.add(l_ca, term);
            }
            l_ca = g.scale(l_ca, 1.0 / double(B));
            const double batch_ca = g.value(l_ca).at(0, 0);
            loss = loss < 0 ? l_ca : g.add(loss, l_ca);

            double batch_extra = 0.0;
            if (joint_fc || joint_fd) {
                // live x_e = x - k (t_x - t_c)
                Tensor tc_rows(B, d);
                for (int b = 0; b < B; ++b)
                    set_row(tc_rows, b, plan_tc(plan, idx[b], labels[b]));
                const int xe_live = g.sub(xb, g.scale(g.sub(T, g.leaf(tc_rows)), cfg.k));
                if (joint_fc) {
                    const int logits = Linear::forward_node(g, fc, xe_live);
                    int l_cls = -1;
                    for (int b = 0; b < B; ++b) {
                        const int term = g.softmax_xent(g.slice_row(logits, b), labels[b], 1.0);
                        l_cls = l_cls < 0 ? term : g.add(l_cls, term);
                    }
                    l_cls = g.scale(l_cls, 1.0 / double(B));
                    batch_extra = g.value(l_cls).at(0, 0);
                    loss = g.add(loss, l_cls);
                } else {
                    // detached targets: the value snapshot of the live x_e
                    const int pred = g.add(xb, Linear::forward_node(g, fd, xb));
                    const int l_feat = feature_loss_node(g, pred, g.value(xe_live),
                                                         cfg.feature_loss, cfg.feat_weight);
                    batch_extra = g.value(l_feat).at(0, 0);
                    loss = g.add(loss, l_feat);
                }
            }

            g.backward(loss);

            std::vector<Tensor*> params = out.wording.projector.params();
            std::vector<int> param_nodes = out.wording.projector.node_list(fp);
            if (joint_fc) {
                for (Tensor* t : out.classifier->params()) params.push_back(t);
                for (int nid : out.classifier->node_list(fc)) param_nodes.push_back(nid);
            }
            if (joint_fd) {
                for (Tensor* t : out.disentangler->params()) params.push_back(t);
                for (int nid : out.disentangler->node_list(fd)) param_nodes.push_back(nid);
            }
            std::vector<const Tensor*> grads;
            for (int nid : param_nodes) grads.push_back(&g.grad(nid));
            sgd_step(params, grads, opt);

            ep_ia += batch_ia * B;
            ep_ca += batch_ca * B;
            ep_extra += batch_extra * B;
            counted += B;
        }

        if (counted == 0) throw DegenerateInput("stage A: no usable batches");
        if (cfg.alignment != AlignmentMode::None)
            out.trace.append("l_ia", ep_ia / double(counted));
        out.trace.append("l_ca", ep_ca / double(counted));
        if (joint_fc) out.trace.append("l_cls", ep_extra / double(counted));
        if (joint_fd) out.trace.append("l_feat", ep_extra / double(counted));
    }

    out.wording.trained = true;
    return out;
}

// Disentanglement targets for every sample, computed once from the frozen
// stage-A wording and cached (fixed-target regression).
inline Tensor cached_disentangle_targets(const World& world, const DatasetSplit& split,
                                         const WordingModel& wording, const TemplatePlan& plan,
                                         double k) {
    const int d = world.spec().dim;
    Tensor xe(static_cast<int>(split.samples.size()), d);
    for (size_t i = 0; i < split.samples.size(); ++i) {
        const Sample& s = split.samples[i];
        const Tensor t_x = plan_tx(world, wording, plan, i, s.x);
        const Tensor t_c = plan_tc(plan, i, s.label);
        set_row(xe, static_cast<int>(i), disentangle_target(s.x, t_x, t_c, k));
    }
    return xe;
}

struct StageBOptions {
    bool train_fd = true;
    bool train_fc = true;
    const Tensor* margins = nullptr;  // 1 x C log-prior margins for long-tail runs
};

struct StageBResult {
    Linear disentangler;
    Linear classifier;
    LossTrace trace;
    Tensor targets;  // cached x_e rows, split order
};

// Stage two: AdamW over the disentangler (regression to cached x_e) and the
// classifier (cross-entropy on the cached x_e itself). The two losses are
// decoupled; the disentangler's prediction never feeds the classifier loss.
inline StageBResult train_stage_disentangle(const World& world, const DatasetSplit& split,
                                            const WordingModel& wording, const TrainConfig& cfg,
                                            uint64_t seed, const StageBOptions& opts = {}) {
    cfg.validate();
    if (!wording.trained) throw Error("stage B: stage A has not run");
    if (split.samples.empty()) throw DegenerateInput("stage B: empty training split");
    const int d = world.spec().dim;
    const int C = world.spec().num_classes;

    StageBResult out;
    out.disentangler = Linear::zeros(d, d);
    out.classifier = Linear::init(d, C, derive_seed(seed, "fc.init"));

    const TemplatePlan plan(world, cfg.template_strategy, seed);
    out.targets = cached_disentangle_targets(world, split, wording, plan, cfg.k);

    OptimState opt = OptimState::adamw(cfg.stage_b_lr);
    const size_t n = split.samples.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto perm = detail::seeded_permutation(n, derive_seed(seed, "stageB.perm", epoch));
        double ep_feat = 0.0, ep_cls = 0.0;
        size_t counted = 0;
        for (size_t start = 0; start < n; start += cfg.batch) {
            const size_t stop = std::min(n, start + cfg.batch);
            const int B = static_cast<int>(stop - start);
            const std::vector<size_t> idx(perm.begin() + start, perm.begin() + stop);

            Tensor xe_rows(B, d);
            std::vector<int> labels(B);
            for (int b = 0; b < B; ++b) {
                for (int j = 0; j < d; ++j) xe_rows.at(b, j) = out.targets.at(int(idx[b]), j);
                labels[b] = split.samples[idx[b]].label;
            }

            Graph g;
            Linear::Nodes fd{}, fc{};
            if (opts.train_fd) fd = out.disentangler.register_in(g, true);
            if (opts.train_fc) fc = out.classifier.register_in(g, true);

            int loss = -1;
            double batch_feat = 0.0, batch_cls = 0.0;
            if (opts.train_fd) {
                const int xb = g.leaf(detail::gather_x(split, idx, d));
                const int pred = g.add(xb, Linear::forward_node(g, fd, xb));
                const int l_feat = feature_loss_node(g, pred, xe_rows, cfg.feature_loss,
                                                     cfg.feat_weight);
                batch_feat = g.value(l_feat).at(0, 0);
                loss = l_feat;
            }
            if (opts.train_fc) {
                const int xe_leaf = g.leaf(xe_rows);
                int logits = Linear::forward_node(g, fc, xe_leaf);
                if (opts.margins != nullptr) logits = g.add_row(logits, g.leaf(*opts.margins));
                int l_cls = -1;
                for (int b = 0; b < B; ++b) {
                    const int term = g.softmax_xent(g.slice_row(logits, b), labels[b], 1.0);
                    l_cls = l_cls < 0 ? term : g.add(l_cls, term);
                }
                l_cls = g.scale(l_cls, 1.0 / double(B));
                batch_cls = g.value(l_cls).at(0, 0);
                loss = loss < 0 ? l_cls : g.add(loss, l_cls);
            }

            g.backward(loss);

            std::vector<Tensor*> params;
            std::vector<const Tensor*> grads;
            if (opts.train_fd) {
                for (Tensor* t : out.disentangler.params()) params.push_back(t);
                for (int nid : out.disentangler.node_list(fd)) grads.push_back(&g.grad(nid));
            }
            if (opts.train_fc) {
                for (Tensor* t : out.classifier.params()) params.push_back(t);
                for (int nid : out.classifier.node_list(fc)) grads.push_back(&g.grad(nid));
            }
            adamw_step(params, grads, opt);

            ep_feat += batch_feat * B;
            ep_cls += batch_cls * B;
            counted += B;
        }
        if (opts.train_fd) out.trace.append("l_feat", ep_feat / double(counted));
        if (opts.train_fc) out.trace.append("l_cls", ep_cls / double(counted));
    }
    return out;
}

struct PipelineResult {
    WidinModel model;
    LossTrace stage_a;
    LossTrace stage_b;
};

// The full method under the configured schedule.
inline PipelineResult run_widin(const World& world, const DatasetSplit& train,
                                const TrainConfig& cfg, uint64_t seed,
                                bool direct_wording = false) {
    PipelineResult out;
    Tensor margins;
    StageBOptions opts;
    if (cfg.logit_margins) {
        std::vector<double> priors;
        size_t total = 0;
        for (int c : train.per_class_counts) total += c;
        for (int c : train.per_class_counts) priors.push_back(double(c) / double(total));
        margins = log_prior_margins(priors, cfg.margin_scale);
        opts.margins = &margins;
    }

    StageAResult a = train_stage_alignment(world, train, cfg, seed, direct_wording);
    out.stage_a = a.trace;
    out.model.projector = a.wording.projector;
    out.model.direct_wording = direct_wording;
    out.model.encoder_hash = world.encoder().spec_hash();

    switch (cfg.schedule) {
        case TrainSchedule::Default:
            break;
        case TrainSchedule::JointClassifier:
            opts.train_fc = false;  // classifier came out of stage one
            break;
        case TrainSchedule::JointDisentangler:
            opts.train_fd = false;  // disentangler came out of stage one
            break;
    }

    StageBResult b = train_stage_disentangle(world, train, a.wording, cfg, seed, opts);
    out.stage_b = b.trace;
    out.model.disentangler = opts.train_fd ? b.disentangler : *a.disentangler;
    out.model.classifier = opts.train_fc ? b.classifier : *a.classifier;
    return out;
}

struct BridgeResult {
    Linear bridge;  // d_v -> d, no bias
    LossTrace trace;
};

// Align the foreign view with the frozen class-text space: symmetric InfoNCE
// between l2-normalized W_B v and the class embedding of the sample's label,
// against in-batch image negatives and all-class text negatives.
inline BridgeResult train_unimodal_bridge(const World& world, const DatasetSplit& split,
                                          const TrainConfig& cfg, uint64_t seed,
                                          const Linear* init = nullptr) {
    cfg.validate();
    if (split.samples.empty()) throw DegenerateInput("bridge: empty training split");
    const int d = world.spec().dim;
    const int dv = world.spec().foreign_dim;

    BridgeResult out;
    if (init != nullptr) {
        if (init->in_dim() != dv || init->out_dim() != d || init->has_bias())
            throw ShapeError("bridge: init must be a bias-free d_v x d map");
        out.bridge = *init;
    } else {
        out.bridge = Linear::init(dv, d, derive_seed(seed, "bridge.init"),
                                  1.0 / std::sqrt(double(dv)), /*bias=*/false);
    }

    const Tensor& table = world.class_text();  // C x d, fixed anchors
    OptimState opt = OptimState::adamw(cfg.stage_b_lr);
    const size_t n = split.samples.size();
    const uint64_t enc_before = world.encoder().weights_checksum();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto perm = detail::seeded_permutation(n, derive_seed(seed, "bridge.perm", epoch));
        double ep_loss = 0.0;
        size_t counted = 0;
        for (size_t start = 0; start < n; start += cfg.batch) {
            const size_t stop = std::min(n, start + cfg.batch);
            const int B = static_cast<int>(stop - start);
            if (B < 2) continue;
            const std::vector<size_t> idx(perm.begin() + start, perm.begin() + stop);

            Tensor V(B, dv);
            Tensor anchor_rows(B, d);
            std::vector<int> labels(B);
            for (int b = 0; b < B; ++b) {
                set_row(V, b, split.samples[idx[b]].v);
                labels[b] = split.samples[idx[b]].label;
                set_row(anchor_rows, b, row_of(table, labels[b]));
            }

            Graph g;
            const Linear::Nodes wb = out.bridge.register_in(g, true);
            const int z = g.l2_normalize(Linear::forward_node(g, wb, g.leaf(V)));
            // class direction: z_i against every class embedding
            const int s_cls = g.matmul(z, g.transpose(g.leaf(table)));
            // image direction: the label's anchor against every z_j
            const int s_img = g.matmul(g.leaf(anchor_rows), g.transpose(z));
            int loss = -1;
            for (int b = 0; b < B; ++b) {
                const int t1 = g.softmax_xent(g.slice_row(s_cls, b), labels[b], cfg.tau);
                const int t2 = g.softmax_xent(g.slice_row(s_img, b), b, cfg.tau);
                const int term = g.add(t1, t2);
                loss = loss < 0 ? term : g.add(loss, term);
            }
            loss = g.scale(loss, 1.0 / double(B));
            const double batch_loss = g.value(loss).at(0, 0);
            g.backward(loss);

            std::vector<Tensor*> params = out.bridge.params();
            std::vector<const Tensor*> grads;
            for (int nid : out.bridge.node_list(wb)) grads.push_back(&g.grad(nid));
            adamw_step(params, grads, opt);

            ep_loss += batch_loss * B;
            counted += B;
        }
        if (counted == 0) throw DegenerateInput("bridge: no usable batches");
        out.trace.append("l_bridge", ep_loss / double(counted));
    }

    if (world.encoder().weights_checksum() != enc_before)
        throw Error("bridge: encoder weights changed during training");
    return out;
}

// Replace every raw visual embedding with its bridged estimate
// x~ = l2_normalize(W_B v); everything downstream consumes x~ as x.
inline DatasetSplit bridged_view(const DatasetSplit& split, const Linear& bridge) {
    DatasetSplit out = split;
    for (Sample& s : out.samples) s.x = l2_normalized(bridge.forward(s.v));
    return out;
}

}  // namespace widin
