// pstnet command-line interface.
//
// Exit codes: 0 success, 2 usage, 3 data/config, 4 runtime. Failures print
// one line to stderr: "pstnet: error code=<n> kind=<kind> msg=<text>".

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "live_transport.hpp"
#include "pstnet/http_server.hpp"
#include "pstnet/registry.hpp"
#include "pstnet/report.hpp"
#include "pstnet/train.hpp"

namespace fs = std::filesystem;
using namespace pstnet;

namespace {

struct CliFailure {
    int code;
    std::string kind;
    std::string message;
};

[[noreturn]] void usage_fail(const std::string& msg) { throw CliFailure{2, "usage", msg}; }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

struct DataSpec {
    std::size_t size = 20000;
    std::uint64_t seed = 7;
};

DataSpec data_spec(const KeyValueConfig& c) {
    return {c.get_uint("dataset_size", 20000), c.get_uint("dataset_seed", 7)};
}

TrainConfig train_config(const KeyValueConfig& c) {
    TrainConfig t;
    t.epochs = c.get_uint("epochs", t.epochs);
    t.batch_size = c.get_uint("batch_size", t.batch_size);
    t.lr_max = c.get_double("lr_max", t.lr_max);
    t.lr_min = c.get_double("lr_min", t.lr_min);
    t.lambda_gate = c.get_double("lambda_gate", t.lambda_gate);
    t.lambda_balance = c.get_double("lambda_balance", t.lambda_balance);
    t.seed = c.get_uint("seed", t.seed);
    if (t.epochs == 0 || t.batch_size == 0 || !(t.lr_max > 0.0) || !(t.lr_min > 0.0) || t.lambda_gate < 0.0 ||
        t.lambda_balance < 0.0)
        throw ConfigError(c.origin() + ": training hyperparameters out of range");
    return t;
}

SimConfig sim_config(const KeyValueConfig& c) {
    SimConfig s;
    s.dt = c.get_double("dt", s.dt);
    s.lag_tau = c.get_double("lag_tau", s.lag_tau);
    s.estimator_period = c.get_double("estimator_period", s.estimator_period);
    s.gust_length_m = c.get_double("gust_length_m", s.gust_length_m);
    s.sensor_noise = c.get_double("sensor_noise", s.sensor_noise);
    s.turbulence_scale = c.get_double("turbulence_scale", s.turbulence_scale);
    s.max_time_s = c.get_double("max_time_s", s.max_time_s);
    s.cep_m = c.get_double("cep_m", s.cep_m);
    s.trace_period = c.get_double("trace_period", s.trace_period);
    if (!(s.dt > 0.0 && s.dt <= 0.05) || !(s.lag_tau > 0.0) || !(s.gust_length_m > 0.0) || s.sensor_noise < 0.0 ||
        s.turbulence_scale < 0.0 || !(s.max_time_s > 0.0) || !(s.cep_m > 0.0) || !(s.trace_period > 0.0))
        throw ConfigError(c.origin() + ": simulator constants out of range");
    return s;
}

std::string model_card(const PSTNetModel& m, const TrainHistory& h, const TrainConfig& tc, const DataSpec& spec,
                       const Dataset& ds, const EvalMetrics& test) {
    const auto a = param_audit(m);
    std::ostringstream o;
    o.precision(6);
    o << "PSTNet model card\n\n"
      << "parameters\n"
      << "  gate            " << a.gate << "\n"
      << "  experts (x4)    " << a.experts << "\n"
      << "  film            " << a.film << "\n"
      << "  head            " << a.head << "\n"
      << "  total           " << a.total << "\n"
      << "  norm scalars    " << a.norm_stat_scalars << " (not trained)\n"
      << "  file bytes      " << a.serialized_bytes << "\n"
      << "  expert width d  " << m.dims.d << "\n\n"
      << "data\n"
      << "  samples " << spec.size << "  seed " << spec.seed << "  hash " << std::hex << dataset_hash(ds) << std::dec
      << "\n  split train/val/test " << ds.split.train.size() << "/" << ds.split.val.size() << "/"
      << ds.split.test.size() << "\n\n"
      << "training\n"
      << "  epochs " << tc.epochs << "  batch " << tc.batch_size << "  lr " << tc.lr_max << " -> " << tc.lr_min
      << "  lambda_gate " << tc.lambda_gate << "  lambda_balance " << tc.lambda_balance << "  seed " << tc.seed
      << "\n  best epoch " << h.best_epoch << "  best val mse " << h.best_val_mse << "  wall " << h.wall_seconds
      << " s\n\n"
      << "test split\n"
      << "  mse (standardized) " << test.mse << "\n  mae (m^2/s^2)      " << test.mae << "\n  gate accuracy      "
      << test.gate_accuracy << "\n  gate purity        " << test.gate_purity << "\n  below k_MO         "
      << test.below_floor << "\n";
    for (std::size_t r = 0; r < kNumRegimes; ++r)
        o << "  mse " << kRegimeNames[r] << " (" << test.regime_count[r] << ") " << test.regime_mse[r] << "\n";
    return o.str();
}

int cmd_train(const std::string& config, const std::string& out_dir, bool baselines_flag) {
    const auto cfg = KeyValueConfig::load(config);
    const auto spec = data_spec(cfg);
    const auto tc = train_config(cfg);
    const bool baselines = baselines_flag || cfg.get_uint("baselines", 0) != 0;
    const Dataset ds = make_dataset(spec.size, spec.seed);
    auto [model, hist] = train_pstnet(ds, tc);
    const auto test = eval_metrics(model, ds.subset(ds.split.test));
    fs::create_directories(out_dir);
    save(model, fs::path(out_dir) / "model.pstn");
    write_file_atomic(fs::path(out_dir) / "history.tsv", history_table(hist));
    write_file_atomic(fs::path(out_dir) / "model_card.txt", model_card(model, hist, tc, spec, ds, test));
    std::cout << "model " << (fs::path(out_dir) / "model.pstn").string() << " bytes "
              << fs::file_size(fs::path(out_dir) / "model.pstn") << " test_mse " << test.mse << " gate_acc "
              << test.gate_accuracy << "\n";
    if (baselines) {
        MLPTrainConfig mc;
        mc.epochs = tc.epochs;
        mc.batch_size = tc.batch_size;
        mc.lr_max = tc.lr_max;
        mc.lr_min = tc.lr_min;
        const auto b = train_baselines(ds, tc.seed, mc);
        save_baselines(b, out_dir);
        const auto te = ds.subset(ds.split.test);
        std::cout << "baselines mlp " << eval_estimator([&](const AtmosphericState& s) { return mlp_predict(b.mlp, s); }, te, model.norm).mse
                  << " deep-mlp " << eval_estimator([&](const AtmosphericState& s) { return mlp_predict(b.deep, s); }, te, model.norm).mse
                  << " gbt " << gbt_mse(b.gbt, te) << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& models_dir, const std::string& config) {
    DataSpec spec;
    if (!config.empty()) spec = data_spec(KeyValueConfig::load(config));
    std::vector<std::string> present;
    for (const auto& n : known_estimators())
        if (const auto f = model_file_name(n); !f || fs::exists(fs::path(models_dir) / *f)) present.push_back(n);
    if (std::find(present.begin(), present.end(), "pstnet") == present.end())
        throw MissingModelsError({"pstnet"});
    const auto set = ModelSet::load(models_dir, present);
    const Dataset ds = make_dataset(spec.size, spec.seed);
    const auto test = ds.subset(ds.split.test);
    const Standardizer norm = set.pstnet->norm;
    std::cout << "# model params test_mse mae below_k_mo gate_acc gate_purity\n";
    for (const auto& e : set.estimators()) {
        EvalMetrics m;
        if (e.estimator.name == "pstnet") {
            m = eval_metrics(*set.pstnet, test);
        } else if (e.estimator.name == "mlp" || e.estimator.name == "deep-mlp" || e.estimator.name == "gbt") {
            // raw outputs, not floored, so below-k_MO counts are honest
            const auto& name = e.estimator.name;
            m = eval_estimator(
                [&](const AtmosphericState& s) {
                    if (name == "gbt") return gbt_predict(*set.gbt, s);
                    return mlp_predict(name == "mlp" ? *set.mlp : *set.deep, s);
                },
                test, norm);
        } else {
            m = eval_estimator(e.estimator.fn, test, norm);
        }
        std::cout << e.estimator.name << ' ' << e.params << ' ' << m.mse << ' ' << m.mae << ' ' << m.below_floor;
        if (e.estimator.name == "pstnet") std::cout << ' ' << m.gate_accuracy << ' ' << m.gate_purity;
        else std::cout << " - -";
        std::cout << '\n';
    }
    return 0;
}

int cmd_campaign(const std::string& config, const std::string& models_dir, const std::string& out_dir,
                 std::optional<std::size_t> runs_override) {
    const auto c = KeyValueConfig::load(config);
    CampaignConfig cc;
    cc.runs = runs_override.value_or(c.get_uint("runs", cc.runs));
    cc.seed = c.get_uint("seed", cc.seed);
    cc.categories = c.get_string("categories", cc.categories);
    if (c.has("vehicles")) cc.vehicles = split_list(c.get_string("vehicles"));
    cc.threads = c.get_uint("threads", 0);
    cc.sim = sim_config(c);
    if (cc.runs == 0) throw ConfigError(c.origin() + ": runs must be >= 1");
    for (char cat : cc.categories)
        if (kCategories.find(cat) == std::string_view::npos)
            throw ConfigError(c.origin() + ": unknown category '" + std::string(1, cat) + "'");
    const auto names = split_list(c.get_string("estimators", "dryden,pstnet"));
    const std::string baseline = c.get_string("baseline", "dryden");
    if (std::find(names.begin(), names.end(), baseline) == names.end())
        throw ConfigError(c.origin() + ": baseline must be one of the estimators");

    const auto set = ModelSet::load(models_dir, names);
    std::vector<NamedEstimator> est;
    std::map<std::string, std::size_t> params;
    for (const auto& e : set.estimators()) {
        est.push_back(e.estimator);
        params[e.estimator.name] = e.params;
    }
    const auto result = run_campaign(cc, est);
    const auto rep = build_report(result, baseline, params, c.get_uint("bootstrap_seed", 1));
    const fs::path out(out_dir);
    fs::create_directories(out);
    write_file_atomic(out / "runs.tsv", campaign_table(result));
    write_file_atomic(out / "records.tsv", records_table(rep.records));
    write_file_atomic(out / "summary.tsv", summary_table(rep));
    write_file_atomic(out / "category_heatmap.tsv", category_heatmap(rep));
    write_file_atomic(out / "vehicle_effect_sizes.tsv", vehicle_effect_sizes(rep));
    write_file_atomic(out / "friedman.txt", friedman_block(rep));
    std::cout << summary_table(rep) << friedman_block(rep);
    return 0;
}

std::shared_ptr<PowerClient> make_ingest(const std::string& cache_dir) {
    IngestConfig ic = default_ingest_config();
    if (!cache_dir.empty()) ic.cache_dir = cache_dir;
    std::shared_ptr<Transport> transport;
    if (!ic.offline) transport = std::make_shared<HttpsTransport>();
    return std::make_shared<PowerClient>(ic, transport);
}

int cmd_infer(const std::string& model_path, const std::vector<double>& state_values, std::optional<double> lat,
              std::optional<double> lon, std::optional<int> level, const std::string& date) {
    auto model = load(model_path);
    if (!state_values.empty()) {
        if (state_values.size() != kNumFeatures)
            usage_fail("--state takes 7 values: altitude_m temperature_k pressure_pa wind10_mps lapse_k_per_m "
                       "density_ratio latitude_deg");
        std::array<double, kNumFeatures> a{};
        std::copy(state_values.begin(), state_values.end(), a.begin());
        const auto state = AtmosphericState::from_array(a);
        const auto [k, diag] = forward(model, state);
        nlohmann::json j{{"k", k}, {"k_mo", diag.k_mo}, {"alpha", diag.alpha}, {"epsilon", diag.epsilon.epsilon_m2s3}};
        std::cout << j.dump() << "\n";
        return 0;
    }
    if (!lat || !lon || !level) usage_fail("infer needs --state, or --lat, --lon and --level");
    ServiceConfig sc;
    sc.query_template.start = sc.query_template.end = date;
    Service svc(sc, ModelBundle::make(std::move(model)), make_ingest(""));
    auto fmt = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    const auto r = svc.estimate(fmt(*lat), fmt(*lon), std::to_string(*level));
    std::cout << r.body.dump() << "\n";
    if (r.status == 400) throw CliFailure{2, "usage", r.body["error"]["message"].get<std::string>()};
    if (r.status != 200) throw CliFailure{3, "ingest", r.body["error"]["message"].get<std::string>()};
    return 0;
}

ServiceConfig service_config(const KeyValueConfig& c) {
    ServiceConfig sc;
    if (c.has("levels_km")) {
        sc.level_altitudes_m.clear();
        for (const auto& t : split_list(c.get_string("levels_km"))) {
            double km = 0.0;
            const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), km);
            if (ec != std::errc() || p != t.data() + t.size() || !(km >= 0.0 && km <= 35.0))
                throw ConfigError(c.origin() + ": bad levels_km entry '" + t + "'");
            sc.level_altitudes_m.push_back(km * 1000.0);
        }
    }
    sc.query_template.start = sc.query_template.end = c.get_string("date", sc.query_template.start);
    sc.default_resolution_deg = c.get_double("default_resolution_deg", sc.default_resolution_deg);
    sc.max_live_cells = c.get_uint("max_live_cells", sc.max_live_cells);
    sc.trajectory_workers = c.get_uint("trajectory_workers", sc.trajectory_workers);
    sc.sim.trace_period = c.get_double("trace_period", sc.sim.trace_period);
    return sc;
}

std::shared_ptr<const ModelBundle> service_models(const std::string& models_dir) {
    std::vector<std::string> names{"pstnet"};
    for (const auto& n : {"mlp", "deep-mlp", "gbt"})
        if (fs::exists(fs::path(models_dir) / *model_file_name(n))) names.push_back(n);
    auto set = std::make_shared<ModelSet>(ModelSet::load(models_dir, names));
    std::map<std::string, TkeEstimator> extra;
    for (const auto& e : set->estimators())
        if (e.estimator.name != "pstnet") {
            auto fn = e.estimator.fn;
            extra[e.estimator.name] = [set, fn](const AtmosphericState& s) { return fn(s); };  // keeps the set alive
        }
    return ModelBundle::make(*set->pstnet, std::move(extra));
}

std::atomic<httplib::Server*> g_server{nullptr};

int cmd_serve(const std::string& config, const std::string& models_dir, std::optional<int> port_override) {
    const auto c = KeyValueConfig::load(config);
    const auto sc = service_config(c);
    const std::string host = c.get_string("host", "127.0.0.1");
    const int port = port_override.value_or(static_cast<int>(c.get_uint("port", 8080)));
    Service svc(sc, service_models(models_dir), make_ingest(c.get_string("cache_dir", "")));
    httplib::Server server;
    mount_api(server, svc);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (auto* s = g_server.load()) s->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (auto* s = g_server.load()) s->stop();
    });
    std::cerr << "pstnet: serving on http://" << host << ":" << port << " (model " << svc.models()->checksum
              << (svc.health().body["offline"].get<bool>() ? ", offline fixtures" : ", live POWER") << ")\n";
    if (!server.listen(host, port)) throw CliFailure{4, "runtime", "cannot listen on " + host + ":" + std::to_string(port)};
    return 0;
}

int cmd_export_grid(const std::string& model_path, int level, double res, const std::string& bbox,
                    const std::string& out_path, const std::string& date) {
    ServiceConfig sc;
    sc.query_template.start = sc.query_template.end = date;
    Service svc(sc, ModelBundle::make(load(model_path)), make_ingest(""));
    const auto r = svc.grid(std::to_string(level), bbox, [&] {
        std::ostringstream o;
        o.precision(17);
        o << res;
        return o.str();
    }());
    if (r.status == 400) throw CliFailure{2, "usage", r.body["error"]["message"].get<std::string>()};
    if (r.status != 200) throw CliFailure{3, "ingest", r.body["error"]["message"].get<std::string>()};
    const auto& b = r.body;
    const auto rows = b["rows"].get<std::size_t>(), cols = b["cols"].get<std::size_t>();
    const auto box = b["bbox"].get<std::array<double, 4>>();
    const auto values = b["values"].get<std::vector<double>>();
    std::ostringstream o;
    o.precision(10);
    o << "# lat lon k  (level " << level << ", altitude_m " << b["altitude_m"].get<double>() << ", source "
      << b["source"].get<std::string>() << ", model " << b["model_checksum"].get<std::string>() << ")\n";
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            o << box[0] + (static_cast<double>(i) + 0.5) * res << ' ' << box[1] + (static_cast<double>(j) + 0.5) * res
              << ' ' << values[i * cols + j] << '\n';
    if (out_path.empty() || out_path == "-") std::cout << o.str();
    else write_file_atomic(out_path, o.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PSTNet turbulence estimator: training, evaluation, guidance campaigns and the HTTP service"};
    app.require_subcommand(1);

    std::string config, out_dir = "out", models_dir = "out", model_path = "out/model.pstn", bbox = "global",
                out_path, date = "20240115";
    bool baselines = false;
    std::optional<std::size_t> runs;
    std::optional<int> port, level_opt;
    std::optional<double> lat, lon;
    std::vector<double> state;
    int level = 0;
    double res = 2.0;

    auto* train = app.add_subcommand("train", "Train PSTNet (and optionally the baselines) on the synthetic set");
    train->add_option("-c,--config", config, "training config (key = value)")->required()->check(CLI::ExistingFile);
    train->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    train->add_flag("--baselines", baselines, "also fit the vanilla MLP, deep MLP and GBT");

    auto* eval = app.add_subcommand("eval", "Test-split metrics for every model file in a directory");
    eval->add_option("-m,--models", models_dir, "model directory")->capture_default_str();
    eval->add_option("-c,--config", config, "training config naming the dataset")->check(CLI::ExistingFile);

    auto* campaign = app.add_subcommand("campaign", "Paired guidance campaign and statistics");
    campaign->add_option("-c,--config", config, "campaign config")->required()->check(CLI::ExistingFile);
    campaign->add_option("-m,--models", models_dir, "model directory")->capture_default_str();
    campaign->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    campaign->add_option("--runs", runs, "override the run count");

    auto* infer = app.add_subcommand("infer", "Single estimate from a state vector or a coordinate");
    infer->add_option("--model", model_path, "model file")->capture_default_str();
    infer->add_option("--state", state, "altitude_m temperature_k pressure_pa wind10_mps lapse_k_per_m density_ratio latitude_deg")
        ->expected(7);
    infer->add_option("--lat", lat, "latitude, degrees");
    infer->add_option("--lon", lon, "longitude, degrees");
    infer->add_option("--level", level_opt, "flight level index 0..7");
    infer->add_option("--date", date, "POWER day YYYYMMDD")->capture_default_str();

    auto* serve = app.add_subcommand("serve", "HTTP API for the web UI");
    serve->add_option("-c,--config", config, "service config")->required()->check(CLI::ExistingFile);
    serve->add_option("-m,--models", models_dir, "model directory")->capture_default_str();
    serve->add_option("--port", port, "override the configured port");

    auto* grid = app.add_subcommand("export-grid", "Write a k grid for one flight level as a table");
    grid->add_option("--model", model_path, "model file")->capture_default_str();
    grid->add_option("--level", level, "flight level index 0..7")->capture_default_str();
    grid->add_option("--res", res, "resolution, degrees")->capture_default_str();
    grid->add_option("--bbox", bbox, "south,west,north,east or 'global'")->capture_default_str();
    grid->add_option("-o,--out", out_path, "output file ('-' for stdout)");
    grid->add_option("--date", date, "POWER day YYYYMMDD")->capture_default_str();

    auto fail = [](int code, const std::string& kind, const std::string& msg) {
        std::string one_line = msg;
        std::replace(one_line.begin(), one_line.end(), '\n', ' ');
        std::cerr << "pstnet: error code=" << code << " kind=" << kind << " msg=" << one_line << "\n";
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(2, "usage", e.what());
    }

    try {
        if (*train) return cmd_train(config, out_dir, baselines);
        if (*eval) return cmd_eval(models_dir, config);
        if (*campaign) return cmd_campaign(config, models_dir, out_dir, runs);
        if (*infer) return cmd_infer(model_path, state, lat, lon, level_opt, date);
        if (*serve) return cmd_serve(config, models_dir, port);
        if (*grid) return cmd_export_grid(model_path, level, res, bbox, out_path, date);
    } catch (const CliFailure& f) {
        return fail(f.code, f.kind, f.message);
    } catch (const ConfigError& e) {
        return fail(3, "config", e.what());
    } catch (const MissingModelsError& e) {
        return fail(3, "missing_models", e.what());
    } catch (const FormatError& e) {
        return fail(3, "format", e.what());
    } catch (const IngestError& e) {
        return fail(3, std::string("ingest_") + kind_name(e.kind()), e.what());
    } catch (const DomainError& e) {
        return fail(3, "domain", e.what());
    } catch (const IoError& e) {
        return fail(3, "io", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(3, "io", e.what());
    } catch (const std::exception& e) {
        return fail(4, "runtime", e.what());
    }
    return fail(2, "usage", "no subcommand");
}
