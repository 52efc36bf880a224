#pragma once

#include <cstdint>
#include <memory>

#include "widin/encoder.hpp"

namespace widin {

// Generative recipe for a joint vision-language world with known factors.
// Domain 0 is the single source domain; domains 1..num_target_domains are
// unseen at training time.
struct WorldSpec {
    int num_classes = 8;
    int num_target_domains = 3;
    int dim = 32;
    int domain_dim = 8;            // dimension of the domain-factor space
    double sigma_class_map = 0.05; // class map A = I + sigma * G
    double sigma_noise = 0.05;     // per-coordinate instance noise
    double lambda_domain = 0.6;    // strength of the domain offset
    int foreign_dim = 48;          // width of the foreign (uni-modal) view
    double longtail_rho = 0.0;     // 0 = balanced training counts
    int longtail_max = 100;
    int longtail_min = 2;
    int train_per_class = 50;
    int test_per_class = 20;
    uint64_t seed = 1;

    int num_domains() const { return num_target_domains + 1; }

    void validate() const {
        if (num_classes < 2) throw Error("world: need at least 2 classes");
        if (num_target_domains < 1) throw Error("world: need at least 1 target domain");
        if (dim < 8) throw Error("world: dim must be at least 8");
        if (dim % 2 != 0) throw Error("world: dim must be even");
        if (domain_dim < 1) throw Error("world: domain_dim must be positive");
        if (foreign_dim < dim) throw Error("world: foreign_dim must be >= dim for a full-rank view");
        if (lambda_domain < 0.0) throw Error("world: lambda_domain must be >= 0");
        if (sigma_noise < 0.0 || sigma_class_map < 0.0) throw Error("world: sigmas must be >= 0");
        if (longtail_rho < 0.0) throw Error("world: longtail_rho must be >= 0");
        if (longtail_min < 1 || longtail_max < longtail_min)
            throw Error("world: longtail counts must satisfy 1 <= min <= max");
    }

    uint64_t fingerprint() const {
        uint64_t h = fnv1a64("widin.worldspec");
        auto mix_i = [&h](int64_t v) { h = fnv1a64(&v, sizeof(v), h); };
        auto mix_d = [&h](double v) { h = fnv1a64(&v, sizeof(v), h); };
        mix_i(num_classes);
        mix_i(num_target_domains);
        mix_i(dim);
        mix_i(domain_dim);
        mix_d(sigma_class_map);
        mix_d(sigma_noise);
        mix_d(lambda_domain);
        mix_i(foreign_dim);
        mix_d(longtail_rho);
        mix_i(longtail_max);
        mix_i(longtail_min);
        mix_i(train_per_class);
        mix_i(test_per_class);
        mix_i(static_cast<int64_t>(seed));
        return h;
    }
};

// One generated observation. The oracle parts are the pre-normalization
// generative factors and exist only for verification; no training path may
// read them.
struct Sample {
    int label = 0;
    int domain = 0;
    Tensor x;            // 1 x d, unit norm
    Tensor v;            // 1 x d_v foreign view of x
    Tensor class_part;   // 1 x d
    Tensor domain_part;  // 1 x d
    uint64_t world_tag = 0;
};

enum class SplitRole { TrainSource, Test };

struct DatasetSplit {
    std::vector<Sample> samples;
    SplitRole role = SplitRole::Test;
    int domain = 0;
    std::vector<int> per_class_counts;

    size_t size() const { return samples.size(); }
};

// Project into a foreign view through a mixing map stored as (d x d_v).
inline Tensor foreign_project(const Tensor& x, const Tensor& map) {
    if (x.rows != 1 || x.cols != map.rows)
        throw ShapeError("foreign_project: " + shape_str(x) + " through " + shape_str(map));
    return matmul(x, map);
}

// Frozen world: vocabulary, encoder, factor maps and the class-text table
// are all fixed at generation time. Sampling is keyed by
// (seed, role, domain, class, index) counters, never by call order.
class World {
public:
    explicit World(const WorldSpec& spec)
        : spec_(spec),
          vocab_(Vocabulary::build(spec.num_classes, spec.num_domains())),
          encoder_(vocab_.size(), spec.dim, derive_seed(spec.seed, "world.encoder")) {
        spec.validate();
        const int d = spec.dim;

        class_text_ = class_text_table(encoder_, vocab_, default_template(), spec.num_classes);

        RngStream ga(derive_seed(spec.seed, "world.classmap"));
        class_map_ = Tensor::identity(d);
        if (spec.sigma_class_map > 0.0) {
            const Tensor g = Tensor::gaussian(d, d, ga, spec.sigma_class_map);
            class_map_ = add(class_map_, g);
        }

        RngStream gb(derive_seed(spec.seed, "world.domainmap"));
        domain_map_ = Tensor::gaussian(spec.domain_dim, d, gb, 1.0 / std::sqrt(double(spec.domain_dim)));
        for (int g = 0; g < spec.num_domains(); ++g) {
            RngStream gf(derive_seed(spec.seed, "world.domainfactor", g));
            Tensor f = Tensor::gaussian(1, spec.domain_dim, gf);
            const double offset_norm = norm(matmul(f, domain_map_));
            if (offset_norm == 0.0) throw NumericError("world: degenerate domain factor");
            // factors rescaled so every offset B*f_g has unit norm and
            // lambda_domain alone controls the shift strength
            domain_factors_.push_back(scale(f, 1.0 / offset_norm));
        }

        RngStream gm(derive_seed(spec.seed, "world.foreignmap"));
        foreign_map_ = Tensor::gaussian(d, spec.foreign_dim, gm, 1.0 / std::sqrt(double(d)));

        // class prototypes through the near-identity map
        class_prototypes_ = matmul(class_text_, class_map_);

        tag_ = splitmix_tag();
    }

    const WorldSpec& spec() const { return spec_; }
    const Vocabulary& vocab() const { return vocab_; }
    const FrozenLanguageEncoder& encoder() const { return encoder_; }
    const Tensor& class_text() const { return class_text_; }          // C x d
    const Tensor& class_prototypes() const { return class_prototypes_; }
    const Tensor& domain_map() const { return domain_map_; }
    const Tensor& foreign_map() const { return foreign_map_; }
    uint64_t tag() const { return tag_; }

    static const PromptTemplate& default_template() { return PromptTemplate::builtins()[0]; }

    Tensor domain_offset(int g) const {
        return scale(matmul(domain_factors_.at(g), domain_map_), spec_.lambda_domain);
    }

    Sample make_sample(int domain, int cls, int index, SplitRole role) const {
        if (domain < 0 || domain >= spec_.num_domains()) throw Error("make_sample: bad domain");
        if (cls < 0 || cls >= spec_.num_classes) throw Error("make_sample: bad class");
        Sample s;
        s.label = cls;
        s.domain = domain;
        s.world_tag = tag_;
        s.class_part = row_of(class_prototypes_, cls);
        s.domain_part = domain_offset(domain);
        Tensor raw = add(s.class_part, s.domain_part);
        if (spec_.sigma_noise > 0.0) {
            const char* salt = role == SplitRole::TrainSource ? "sample.train" : "sample.test";
            RngStream rng(derive_seed(spec_.seed, salt,
                                      (static_cast<uint64_t>(domain) << 32) | uint64_t(cls),
                                      static_cast<uint64_t>(index)));
            raw = add(raw, Tensor::gaussian(1, spec_.dim, rng, spec_.sigma_noise));
        }
        s.x = l2_normalized(raw);
        s.v = foreign_view(s.x);
        return s;
    }

    // v = M x, the misaligned uni-modal view the bridge has to undo.
    Tensor foreign_view(const Tensor& x) const { return foreign_project(x, foreign_map_); }

    // The stored generative factors, pre-normalization.
    std::pair<Tensor, Tensor> oracle_decompose(const Sample& s) const {
        if (s.world_tag != tag_)
            throw Error("oracle_decompose: sample was not produced by this world");
        return {s.class_part, s.domain_part};
    }

    DatasetSplit sample_split(int domain, int n_per_class, SplitRole role) const {
        if (n_per_class < 1) throw Error("sample_split: n_per_class must be >= 1");
        return sample_counts(domain, std::vector<int>(spec_.num_classes, n_per_class), role);
    }

    // Geometric long-tail profile between longtail_max and longtail_min;
    // rho = 0 keeps every class at longtail_max, rho = 1 is the full decay.
    std::vector<int> longtail_counts() const {
        const int C = spec_.num_classes;
        std::vector<int> counts(C);
        const double ratio = double(spec_.longtail_min) / double(spec_.longtail_max);
        for (int c = 0; c < C; ++c) {
            const double u = C > 1 ? double(c) / double(C - 1) : 0.0;
            const double n = spec_.longtail_max * std::pow(ratio, spec_.longtail_rho * u);
            counts[c] = std::clamp(static_cast<int>(std::lround(n)),
                                   spec_.longtail_min, spec_.longtail_max);
        }
        return counts;
    }

    DatasetSplit sample_longtail_split(int domain, SplitRole role) const {
        return sample_counts(domain, longtail_counts(), role);
    }

    // Test splits for every domain, source first.
    std::vector<DatasetSplit> test_splits(int n_per_class = -1) const {
        if (n_per_class < 0) n_per_class = spec_.test_per_class;
        std::vector<DatasetSplit> out;
        for (int g = 0; g < spec_.num_domains(); ++g)
            out.push_back(sample_split(g, n_per_class, SplitRole::Test));
        return out;
    }

    DatasetSplit train_split() const {
        if (spec_.longtail_rho > 0.0) return sample_longtail_split(0, SplitRole::TrainSource);
        return sample_split(0, spec_.train_per_class, SplitRole::TrainSource);
    }

private:
    WorldSpec spec_;
    Vocabulary vocab_;
    FrozenLanguageEncoder encoder_;
    Tensor class_text_;
    Tensor class_map_;
    Tensor domain_map_;       // stored as (domain_dim x d); offsets are f * B
    std::vector<Tensor> domain_factors_;
    Tensor foreign_map_;      // stored as (d x d_v); views are x * M
    Tensor class_prototypes_; // C x d
    uint64_t tag_ = 0;

    DatasetSplit sample_counts(int domain, const std::vector<int>& counts, SplitRole role) const {
        if (domain < 0 || domain >= spec_.num_domains())
            throw Error("sample_split: bad domain id");
        if (role == SplitRole::TrainSource && domain != 0)
            throw Error("sample_split: training data exists only in the source domain");
        DatasetSplit split;
        split.role = role;
        split.domain = domain;
        split.per_class_counts = counts;
        for (int c = 0; c < spec_.num_classes; ++c)
            for (int i = 0; i < counts[c]; ++i)
                split.samples.push_back(make_sample(domain, c, i, role));
        return split;
    }

    uint64_t splitmix_tag() const {
        uint64_t s = spec_.fingerprint() ^ encoder_.spec_hash();
        return splitmix64(s);
    }
};

inline std::shared_ptr<World> generate_world(const WorldSpec& spec) {
    spec.validate();
    return std::make_shared<World>(spec);
}

}  // namespace widin
