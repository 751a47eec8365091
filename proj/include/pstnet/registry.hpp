#pragma once

// Named estimators backed by model files in one directory:
//   pstnet   model.pstn
//   mlp      mlp.psml       (vanilla MLP)
//   deep-mlp deep-mlp.psml  (deep residual MLP)
//   gbt      gbt.psgb
//   dryden   (no file)

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pstnet/baselines/gbt.hpp"
#include "pstnet/baselines/mlp.hpp"
#include "pstnet/dryden.hpp"
#include "pstnet/model_io.hpp"
#include "pstnet/sim.hpp"

namespace pstnet {

inline const std::vector<std::string>& known_estimators() {
    static const std::vector<std::string> names{"dryden", "pstnet", "mlp", "deep-mlp", "gbt"};
    return names;
}

inline std::optional<std::string> model_file_name(const std::string& estimator) {
    if (estimator == "pstnet") return "model.pstn";
    if (estimator == "mlp") return "mlp.psml";
    if (estimator == "deep-mlp") return "deep-mlp.psml";
    if (estimator == "gbt") return "gbt.psgb";
    return std::nullopt;
}

/// Raised when requested estimators have no model file; lists every absent one.
class MissingModelsError : public std::runtime_error {
public:
    explicit MissingModelsError(std::vector<std::string> missing)
        : std::runtime_error(message(missing)), missing_(std::move(missing)) {}
    const std::vector<std::string>& missing() const { return missing_; }

private:
    static std::string message(const std::vector<std::string>& m) {
        std::string s = "missing model files for estimators:";
        for (const auto& x : m) s += " " + x;
        return s;
    }
    std::vector<std::string> missing_;
};

struct LoadedEstimator {
    NamedEstimator estimator;
    std::size_t params = 0;  // stored scalars (GBT: internal nodes x 2 + leaves)
};

class ModelSet {
public:
    /// Loads every estimator in `names` from `dir`; unknown names throw DomainError.
    static ModelSet load(const std::filesystem::path& dir, const std::vector<std::string>& names) {
        ModelSet s;
        std::vector<std::string> missing;
        for (const auto& n : names) {
            if (std::find(known_estimators().begin(), known_estimators().end(), n) == known_estimators().end())
                throw DomainError("unknown estimator '" + n + "'");
            if (const auto f = model_file_name(n); f && !std::filesystem::exists(dir / *f)) missing.push_back(n);
        }
        if (!missing.empty()) throw MissingModelsError(missing);
        for (const auto& n : names) {
            if (n == "pstnet") s.pstnet = pstnet::load(dir / "model.pstn");
            if (n == "mlp") s.mlp = decode_mlp(read_file_bytes(dir / "mlp.psml"));
            if (n == "deep-mlp") s.deep = decode_mlp(read_file_bytes(dir / "deep-mlp.psml"));
            if (n == "gbt") s.gbt = decode_gbt(read_file_bytes(dir / "gbt.psgb"));
        }
        s.names_ = names;
        return s;
    }

    std::optional<PSTNetModel> pstnet;
    std::optional<MLPModel> mlp, deep;
    std::optional<GBTModel> gbt;

    /// Estimators in the requested order. Baseline outputs are floored at
    /// zero: a negative energy has no gust intensity. The returned closures
    /// reference this ModelSet, which must outlive them.
    std::vector<LoadedEstimator> estimators() const {
        std::vector<LoadedEstimator> out;
        for (const auto& n : names_) out.push_back(estimator(n));
        return out;
    }

    LoadedEstimator estimator(const std::string& n) const {
        if (n == "dryden") return {{n, TkeEstimator(DrydenEstimator{})}, 0};
        if (n == "pstnet" && pstnet) {
            const auto* m = &*pstnet;
            const auto L = m->layout();
            return {{n, [m, L](const AtmosphericState& s) { return predict(*m, L, s); }}, L.total};
        }
        if (n == "mlp" && mlp) {
            const auto* m = &*mlp;
            return {{n, [m](const AtmosphericState& s) { return std::max(mlp_predict(*m, s), 0.0); }}, m->params.size()};
        }
        if (n == "deep-mlp" && deep) {
            const auto* m = &*deep;
            return {{n, [m](const AtmosphericState& s) { return std::max(mlp_predict(*m, s), 0.0); }}, m->params.size()};
        }
        if (n == "gbt" && gbt) {
            const auto* m = &*gbt;
            const std::size_t internal = m->node_count() - m->leaf_count();
            return {{n, [m](const AtmosphericState& s) { return std::max(gbt_predict(*m, s), 0.0); }},
                    2 * internal + m->leaf_count()};
        }
        throw DomainError("estimator '" + n + "' is not loaded");
    }

private:
    std::vector<std::string> names_;
};

struct TrainedBaselines {
    MLPModel mlp, deep;
    MLPHistory mlp_history, deep_history;
    GBTModel gbt;
    std::vector<GBTGridEntry> gbt_grid;
};

/// Fits the three learned baselines on the same splits and standardizer as PSTNet.
inline TrainedBaselines train_baselines(const Dataset& ds, std::uint64_t seed = 1, const MLPTrainConfig& mlp_cfg = {}) {
    const Standardizer norm = fit_on_train(ds);
    TrainedBaselines b;
    MLPTrainConfig c = mlp_cfg;
    c.seed = seed;
    std::tie(b.mlp, b.mlp_history) = mlp_train(init_mlp(MLPVariant::vanilla, seed, norm), ds, c);
    std::tie(b.deep, b.deep_history) = mlp_train(init_mlp(MLPVariant::deep, seed, norm), ds, c);
    auto grid = gbt_grid_search(ds, seed);
    b.gbt = std::move(grid.best);
    b.gbt_grid = std::move(grid.entries);
    return b;
}

inline void save_baselines(const TrainedBaselines& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "mlp.psml", encode_mlp(b.mlp));
    write_file_atomic(dir / "deep-mlp.psml", encode_mlp(b.deep));
    write_file_atomic(dir / "gbt.psgb", encode_gbt(b.gbt));
}

}  // namespace pstnet
