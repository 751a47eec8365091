#pragma once

// Least-squares gradient boosting with exact greedy regression trees.
//
// Trees grow level by level. Split search walks each feature's presorted row
// order once per level, so a level costs O(features * n) regardless of how
// many nodes are open. Candidate splits are compared with strict '>', which
// resolves ties toward the lowest feature index and then the lowest
// threshold. Tree structure is learned on the row subsample; leaf values are
// the shrunken mean residual of all training rows reaching the leaf, which
// makes the training MSE non-increasing in the tree index.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "pstnet/atmos.hpp"
#include "pstnet/datagen.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

struct GBTConfig {
    std::size_t trees = 200;
    std::size_t depth = 4;
    double shrinkage = 0.1;
    double subsample = 1.0;
    std::size_t min_leaf = 5;
    std::uint64_t seed = 1;
};

struct GBTNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // left branch takes x[feature] <= threshold
    std::uint32_t left = 0, right = 0;
    double value = 0.0;
};

struct GBTTree {
    std::vector<GBTNode> nodes;

    double eval(const FeatureVector& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0)
            i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
        return nodes[i].value;
    }
};

struct GBTModel {
    GBTConfig config;
    double base = 0.0;  // standardized target mean of the training rows
    std::vector<GBTTree> trees;
    Standardizer norm;

    std::size_t node_count() const {
        std::size_t n = 0;
        for (const auto& t : trees) n += t.nodes.size();
        return n;
    }
    std::size_t leaf_count() const {
        std::size_t n = 0;
        for (const auto& t : trees)
            for (const auto& nd : t.nodes) n += nd.feature < 0;
        return n;
    }
};

/// Standardized-target prediction.
inline double gbt_predict(const GBTModel& m, const FeatureVector& x) {
    double y = m.base;
    for (const auto& t : m.trees) y += t.eval(x);
    return y;
}

/// Energy prediction (m^2/s^2) for a raw state.
inline double gbt_predict(const GBTModel& m, const AtmosphericState& s) {
    return m.norm.destandardize_target(gbt_predict(m, feature_vector(s, m.norm)));
}

struct GBTFitResult {
    GBTModel model;
    std::vector<double> train_mse;  // after each tree; entry 0 is the constant model
};

namespace detail {

struct SplitCandidate {
    double gain = 0.0;
    std::int32_t feature = -1;
    double threshold = 0.0;
};

inline constexpr double kMinSplitGain = 1e-12;

inline GBTTree grow_tree(std::span<const FeatureVector> X, std::span<const double> resid,
                         const std::array<std::vector<std::uint32_t>, kNumFeatures>& sorted,
                         const std::vector<std::uint8_t>& in_sample, const GBTConfig& cfg) {
    const std::size_t n = X.size();
    GBTTree tree;
    tree.nodes.emplace_back();
    std::vector<std::int32_t> node_of(n, -1);
    std::vector<double> sum(1, 0.0);
    std::vector<std::size_t> cnt(1, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (in_sample[i]) {
            node_of[i] = 0;
            sum[0] += resid[i];
            ++cnt[0];
        }

    std::size_t level_begin = 0, level_end = 1;
    for (std::size_t level = 0; level < cfg.depth && level_begin < level_end; ++level) {
        const std::size_t width = level_end - level_begin;
        std::vector<SplitCandidate> best(width);
        std::vector<double> lsum(width);
        std::vector<std::size_t> lcnt(width);
        std::vector<double> last(width);
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
            std::fill(lsum.begin(), lsum.end(), 0.0);
            std::fill(lcnt.begin(), lcnt.end(), 0);
            for (std::uint32_t i : sorted[f]) {
                const std::int32_t nd = node_of[i];
                if (nd < static_cast<std::int32_t>(level_begin)) continue;
                const std::size_t k = static_cast<std::size_t>(nd) - level_begin;
                const double v = X[i][f];
                const std::size_t nn = cnt[static_cast<std::size_t>(nd)];
                if (lcnt[k] >= cfg.min_leaf && nn - lcnt[k] >= cfg.min_leaf && v > last[k]) {
                    const double S = sum[static_cast<std::size_t>(nd)];
                    const double SL = lsum[k], SR = S - SL;
                    const double nl = static_cast<double>(lcnt[k]), nr = static_cast<double>(nn - lcnt[k]);
                    const double gain = SL * SL / nl + SR * SR / nr - S * S / static_cast<double>(nn);
                    if (gain > best[k].gain && gain > kMinSplitGain) {
                        double thr = last[k] + 0.5 * (v - last[k]);
                        if (!(thr < v)) thr = last[k];
                        best[k] = {gain, static_cast<std::int32_t>(f), thr};
                    }
                }
                lsum[k] += resid[i];
                ++lcnt[k];
                last[k] = v;
            }
        }
        const std::size_t next_begin = tree.nodes.size();
        for (std::size_t k = 0; k < width; ++k) {
            if (best[k].feature < 0) continue;
            auto& nd = tree.nodes[level_begin + k];
            nd.feature = best[k].feature;
            nd.threshold = best[k].threshold;
            nd.left = static_cast<std::uint32_t>(tree.nodes.size());
            nd.right = nd.left + 1;
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
        }
        sum.assign(tree.nodes.size(), 0.0);
        cnt.assign(tree.nodes.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int32_t nd = node_of[i];
            if (nd < static_cast<std::int32_t>(level_begin)) continue;
            const auto& node = tree.nodes[static_cast<std::size_t>(nd)];
            if (node.feature < 0) {
                node_of[i] = -1;  // settled leaf
                continue;
            }
            const std::uint32_t c = X[i][static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
            node_of[i] = static_cast<std::int32_t>(c);
            sum[c] += resid[i];
            ++cnt[c];
        }
        level_begin = next_begin;
        level_end = tree.nodes.size();
    }

    // Leaf values from all training rows.
    std::vector<double> lsum(tree.nodes.size(), 0.0);
    std::vector<std::size_t> lcnt(tree.nodes.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = 0;
        while (tree.nodes[j].feature >= 0)
            j = X[i][static_cast<std::size_t>(tree.nodes[j].feature)] <= tree.nodes[j].threshold ? tree.nodes[j].left
                                                                                               : tree.nodes[j].right;
        lsum[j] += resid[i];
        ++lcnt[j];
    }
    for (std::size_t j = 0; j < tree.nodes.size(); ++j)
        if (tree.nodes[j].feature < 0 && lcnt[j] > 0)
            tree.nodes[j].value = cfg.shrinkage * lsum[j] / static_cast<double>(lcnt[j]);
    return tree;
}

}  // namespace detail

/// Boosts `cfg.trees` trees on standardized features X and targets y.
inline GBTFitResult gbt_fit(std::span<const FeatureVector> X, std::span<const double> y, const GBTConfig& cfg,
                            const Standardizer& norm = {}) {
    const std::size_t n = X.size();
    if (n < 100 || y.size() != n) throw DomainError("gbt_fit: need at least 100 rows with matching targets");
    if (cfg.depth == 0 || cfg.shrinkage <= 0.0 || cfg.shrinkage > 1.0 || cfg.subsample <= 0.0 || cfg.subsample > 1.0)
        throw DomainError("gbt_fit: invalid configuration");

    GBTFitResult out;
    out.model.config = cfg;
    out.model.norm = norm;
    out.model.base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

    std::array<std::vector<std::uint32_t>, kNumFeatures> sorted;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        sorted[f].resize(n);
        std::iota(sorted[f].begin(), sorted[f].end(), 0u);
        std::stable_sort(sorted[f].begin(), sorted[f].end(),
                         [&](std::uint32_t a, std::uint32_t b) { return X[a][f] < X[b][f]; });
    }

    std::vector<double> pred(n, out.model.base), resid(n);
    auto mse = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
        return s / static_cast<double>(n);
    };
    out.train_mse.push_back(mse());

    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.subsample * static_cast<double>(n))));
    std::vector<std::uint8_t> in_sample(n, 1);
    std::vector<std::uint32_t> rows(n);
    for (std::size_t t = 0; t < cfg.trees; ++t) {
        if (take < n) {
            std::iota(rows.begin(), rows.end(), 0u);
            std::mt19937_64 rng(mix_seed(cfg.seed, t));
            std::fill(in_sample.begin(), in_sample.end(), 0);
            for (std::size_t i = 0; i < take; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n - 1);
                std::swap(rows[i], rows[pick(rng)]);
                in_sample[rows[i]] = 1;
            }
        }
        for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - pred[i];
        auto tree = detail::grow_tree(X, resid, sorted, in_sample, cfg);
        for (std::size_t i = 0; i < n; ++i) pred[i] += tree.eval(X[i]);
        out.model.trees.push_back(std::move(tree));
        out.train_mse.push_back(mse());
    }
    return out;
}

/// Fits on a dataset's training split with norm statistics from that split.
inline GBTFitResult gbt_fit(const Dataset& ds, const GBTConfig& cfg) {
    const Standardizer norm = fit_on_train(ds);
    std::vector<FeatureVector> X;
    std::vector<double> y;
    for (const auto& s : ds.subset(ds.split.train)) {
        X.push_back(feature_vector(s.state, norm));
        y.push_back(norm.standardize_target(s.k_true));
    }
    return gbt_fit(X, y, cfg, norm);
}

inline double gbt_mse(const GBTModel& m, const std::vector<SyntheticSample>& samples) {
    double s = 0.0;
    for (const auto& smp : samples) {
        const double e = gbt_predict(m, feature_vector(smp.state, m.norm)) - m.norm.standardize_target(smp.k_true);
        s += e * e;
    }
    return s / static_cast<double>(samples.size());
}

struct GBTGridEntry {
    GBTConfig config;
    double val_mse = 0.0;
};

struct GBTGridResult {
    GBTModel best;
    std::vector<GBTGridEntry> entries;
};

/// depth {3,4,6} x shrinkage {0.05,0.1,0.3} x subsample {0.8,1.0}, scored on the
/// validation split; the first configuration wins ties.
inline GBTGridResult gbt_grid_search(const Dataset& ds, std::uint64_t seed = 1, std::size_t trees = 200) {
    GBTGridResult out;
    const auto val = ds.subset(ds.split.val);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t depth : {3, 4, 6})
        for (double shrink : {0.05, 0.1, 0.3})
            for (double sub : {0.8, 1.0}) {
                GBTConfig cfg{trees, depth, shrink, sub, 5, seed};
                auto fit = gbt_fit(ds, cfg);
                const double v = gbt_mse(fit.model, val);
                out.entries.push_back({cfg, v});
                if (v < best) {
                    best = v;
                    out.best = std::move(fit.model);
                }
            }
    return out;
}

namespace gbt_file {
inline constexpr char magic[4] = {'P', 'S', 'G', 'B'};
inline constexpr std::uint16_t version = 1;
}  // namespace gbt_file

/// "PSGB" | version u16 | trees, depth, min_leaf u32 | shrinkage, subsample f64 | seed u64
/// | base f64 | norm f64[16] | per tree: node count u32, nodes {feature i32,
/// threshold f64, left u32, right u32, value f64} | CRC-32
inline std::vector<std::uint8_t> encode_gbt(const GBTModel& m) {
    ByteWriter w;
    w.put_bytes({gbt_file::magic, 4});
    w.put(gbt_file::version);
    w.put(static_cast<std::uint32_t>(m.trees.size()));
    w.put(static_cast<std::uint32_t>(m.config.depth));
    w.put(static_cast<std::uint32_t>(m.config.min_leaf));
    w.put(m.config.shrinkage);
    w.put(m.config.subsample);
    w.put(m.config.seed);
    w.put(m.base);
    for (double v : m.norm.mean) w.put(v);
    for (double v : m.norm.scale) w.put(v);
    w.put(m.norm.target_mean);
    w.put(m.norm.target_scale);
    for (const auto& t : m.trees) {
        w.put(static_cast<std::uint32_t>(t.nodes.size()));
        for (const auto& nd : t.nodes) {
            w.put(nd.feature);
            w.put(nd.threshold);
            w.put(nd.left);
            w.put(nd.right);
            w.put(nd.value);
        }
    }
    w.put_checksum();
    return w.bytes();
}

inline GBTModel decode_gbt(std::span<const std::uint8_t> bytes) {
    const auto body = checked_body(bytes);
    ByteReader r(body);
    if (r.get_bytes(4) != std::string(gbt_file::magic, 4))
        throw FormatError(FormatError::Kind::corrupt, "gbt file: bad magic");
    if (r.get<std::uint16_t>() != gbt_file::version)
        throw FormatError(FormatError::Kind::version, "gbt file: unsupported version");
    GBTModel m;
    const std::size_t trees = r.get<std::uint32_t>();
    m.config.trees = trees;
    m.config.depth = r.get<std::uint32_t>();
    m.config.min_leaf = r.get<std::uint32_t>();
    m.config.shrinkage = r.get<double>();
    m.config.subsample = r.get<double>();
    m.config.seed = r.get<std::uint64_t>();
    m.base = r.get<double>();
    for (double& v : m.norm.mean) v = r.get<double>();
    for (double& v : m.norm.scale) v = r.get<double>();
    m.norm.target_mean = r.get<double>();
    m.norm.target_scale = r.get<double>();
    for (std::size_t t = 0; t < trees; ++t) {
        GBTTree tree;
        const std::size_t count = r.get<std::uint32_t>();
        if (count == 0 || count > r.remaining()) throw FormatError(FormatError::Kind::corrupt, "gbt file: bad node count");
        tree.nodes.resize(count);
        for (auto& nd : tree.nodes) {
            nd.feature = r.get<std::int32_t>();
            nd.threshold = r.get<double>();
            nd.left = r.get<std::uint32_t>();
            nd.right = r.get<std::uint32_t>();
            nd.value = r.get<double>();
        }
        for (std::size_t j = 0; j < count; ++j) {
            const auto& nd = tree.nodes[j];
            const bool bad_split = nd.feature >= static_cast<std::int32_t>(kNumFeatures) ||
                                   (nd.feature >= 0 && (nd.left <= j || nd.right <= j || nd.left >= count || nd.right >= count));
            if (bad_split || !std::isfinite(nd.value))
                throw FormatError(FormatError::Kind::corrupt, "gbt file: malformed tree");
        }
        m.trees.push_back(std::move(tree));
    }
    if (r.remaining() != 0) throw FormatError(FormatError::Kind::corrupt, "gbt file: trailing bytes");
    return m;
}

}  // namespace pstnet
