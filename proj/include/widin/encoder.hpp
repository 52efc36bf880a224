#pragma once

#include <optional>

#include "widin/graph.hpp"
#include "widin/vocab.hpp"

namespace widin {

// Frozen, seeded toy transformer text encoder. Weights are a pure function
// of (vocab size, dim, seed) and never change after construction; the
// forward pass is deterministic and differentiable with respect to an
// injected slot embedding. Output is the l2-normalized CLS-position vector
// after a final projection.
class FrozenLanguageEncoder {
public:
    static constexpr int kNumBlocks = 2;
    static constexpr int kNumHeads = 2;

    struct Block {
        std::vector<Tensor> wq, wk, wv;  // per head: d x d_head
        std::vector<Tensor> wo;          // per head: d_head x d
        Tensor ff1, ff1_bias;            // d x 2d, 1 x 2d
        Tensor ff2, ff2_bias;            // 2d x d, 1 x d
    };

    FrozenLanguageEncoder(int vocab_size, int dim, uint64_t seed)
        : dim_(dim), seed_(seed) {
        if (dim < 8) throw Error("encoder: dim must be at least 8");
        if (dim % 2 != 0) throw Error("encoder: dim must be even for the head split");
        const double std = 1.0 / std::sqrt(static_cast<double>(dim));
        const int dh = dim / kNumHeads;

        token_table_ = draw(vocab_size, dim, "tok", 0, std);
        pos_table_ = draw(TokenSequence::kMaxLen, dim, "pos", 0, std);
        for (int b = 0; b < kNumBlocks; ++b) {
            Block blk;
            for (int h = 0; h < kNumHeads; ++h) {
                const uint64_t key = static_cast<uint64_t>(b) * 16 + h;
                blk.wq.push_back(draw(dim, dh, "wq", key, std));
                blk.wk.push_back(draw(dim, dh, "wk", key, std));
                blk.wv.push_back(draw(dim, dh, "wv", key, std));
                blk.wo.push_back(draw(dh, dim, "wo", key, std));
            }
            blk.ff1 = draw(dim, 2 * dim, "ff1", b, std);
            blk.ff1_bias = draw(1, 2 * dim, "ff1b", b, std);
            blk.ff2 = draw(2 * dim, dim, "ff2", b, std);
            blk.ff2_bias = draw(1, dim, "ff2b", b, std);
            blocks_.push_back(std::move(blk));
        }
        out_proj_ = draw(dim, dim, "out", 0, std);
        checksum_ = compute_checksum();
    }

    int dim() const { return dim_; }
    uint64_t seed() const { return seed_; }
    int vocab_size() const { return token_table_.rows; }
    uint64_t weights_checksum() const { return compute_checksum(); }

    // Identity of this encoder build; embedded in artifacts so that a
    // checkpoint can refuse to run against the wrong encoder.
    uint64_t spec_hash() const {
        uint64_t h = fnv1a64("widin.encoder");
        const int64_t d = dim_;
        const int64_t vs = token_table_.rows;
        h = fnv1a64(&d, sizeof(d), h);
        h = fnv1a64(&vs, sizeof(vs), h);
        h = fnv1a64(&seed_, sizeof(seed_), h);
        h = fnv1a64(&checksum_, sizeof(checksum_), h);
        return h;
    }

    // Graph-mode forward. `slot_node` must be a 1 x d node when the sequence
    // carries a slot, and -1 otherwise. Returns the embedding node.
    int encode_node(Graph& g, const TokenSequence& seq, int slot_node = -1) const {
        const int L = seq.length();
        if (L < 1 || L > TokenSequence::kMaxLen)
            throw Error("encode: sequence length out of range");
        if (seq.has_slot() != (slot_node >= 0))
            throw Error("encode: slot embedding does not match sequence slot");
        if (seq.has_slot()) {
            const Tensor& s = g.value(slot_node);
            if (s.rows != 1 || s.cols != dim_)
                throw ShapeError("encode: slot embedding must be 1x" + std::to_string(dim_));
        }
        for (int id : seq.ids)
            if (id < 0 || id >= token_table_.rows) throw Error("encode: token id out of range");

        int x = embed(g, seq, slot_node);
        x = g.add(x, g.leaf(pos_rows(L)));
        for (const Block& blk : blocks_) {
            // attention sublayer
            const int a_in = g.layer_norm(x);
            int attn = -1;
            for (int h = 0; h < kNumHeads; ++h) {
                const int q = g.matmul(a_in, g.leaf(blk.wq[h]));
                const int k = g.matmul(a_in, g.leaf(blk.wk[h]));
                const int v = g.matmul(a_in, g.leaf(blk.wv[h]));
                const int head = g.matmul(g.attention(q, k, v), g.leaf(blk.wo[h]));
                attn = (attn < 0) ? head : g.add(attn, head);
            }
            x = g.add(x, attn);
            // feed-forward sublayer
            const int f_in = g.layer_norm(x);
            int f = g.add_row(g.matmul(f_in, g.leaf(blk.ff1)), g.leaf(blk.ff1_bias));
            f = g.gelu(f);
            f = g.add_row(g.matmul(f, g.leaf(blk.ff2)), g.leaf(blk.ff2_bias));
            x = g.add(x, f);
        }
        const int cls = g.slice_row(x, 0);
        return g.l2_normalize(g.matmul(cls, g.leaf(out_proj_)));
    }

    // Plain forward for the common non-training uses.
    Tensor encode(const TokenSequence& seq, const Tensor* slot = nullptr) const {
        Graph g;
        int slot_node = -1;
        if (slot != nullptr) slot_node = g.leaf(*slot);
        return g.value(encode_node(g, seq, slot_node));
    }

private:
    int dim_;
    uint64_t seed_;
    Tensor token_table_;
    Tensor pos_table_;
    std::vector<Block> blocks_;
    Tensor out_proj_;
    uint64_t checksum_ = 0;

    Tensor draw(int r, int c, const char* tag, uint64_t key, double std) const {
        RngStream rng(derive_seed(seed_, std::string("enc.") + tag, key));
        return Tensor::gaussian(r, c, rng, std);
    }

    Tensor pos_rows(int L) const {
        Tensor p(L, dim_);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < dim_; ++j) p.at(i, j) = pos_table_.at(i, j);
        return p;
    }

    // Token embedding matrix with the slot row, when present, spliced in as
    // a live graph node so gradients can reach it.
    int embed(Graph& g, const TokenSequence& seq, int slot_node) const {
        const int L = seq.length();
        auto rows_leaf = [&](int from, int to) {
            Tensor t(to - from, dim_);
            for (int i = from; i < to; ++i)
                for (int j = 0; j < dim_; ++j) t.at(i - from, j) = token_table_.at(seq.ids[i], j);
            return g.leaf(t);
        };
        if (!seq.has_slot()) return rows_leaf(0, L);
        const int p = seq.slot_position;
        std::vector<int> parts;
        if (p > 0) parts.push_back(rows_leaf(0, p));
        parts.push_back(slot_node);
        if (p + 1 < L) parts.push_back(rows_leaf(p + 1, L));
        return parts.size() == 1 ? parts[0] : g.concat_rows(parts);
    }

    uint64_t compute_checksum() const {
        std::vector<const Tensor*> all = {&token_table_, &pos_table_, &out_proj_};
        for (const Block& b : blocks_) {
            for (const Tensor& t : b.wq) all.push_back(&t);
            for (const Tensor& t : b.wk) all.push_back(&t);
            for (const Tensor& t : b.wv) all.push_back(&t);
            for (const Tensor& t : b.wo) all.push_back(&t);
            all.push_back(&b.ff1);
            all.push_back(&b.ff1_bias);
            all.push_back(&b.ff2);
            all.push_back(&b.ff2_bias);
        }
        return checksum(all);
    }
};

inline FrozenLanguageEncoder build_encoder(const Vocabulary& vocab, int dim, uint64_t seed) {
    return FrozenLanguageEncoder(vocab.size(), dim, seed);
}

// Embedding of a class-name prompt (no slot involved).
inline Tensor class_text_embedding(const FrozenLanguageEncoder& enc, const Vocabulary& vocab,
                                   const PromptTemplate& tmpl, const std::string& class_word) {
    (void)vocab.id_of(class_word);  // unknown class word fails loudly
    return enc.encode(tokenize(vocab, tmpl.with_class(class_word)));
}

// Per-class embedding table (C x d) under one template; this is the cache
// every consumer reads instead of re-encoding class prompts.
inline Tensor class_text_table(const FrozenLanguageEncoder& enc, const Vocabulary& vocab,
                               const PromptTemplate& tmpl, int num_classes) {
    Tensor table(num_classes, enc.dim());
    for (int c = 0; c < num_classes; ++c) {
        const Tensor e = class_text_embedding(enc, vocab, tmpl, Vocabulary::class_word(c));
        set_row(table, c, e);
    }
    return table;
}

}  // namespace widin
