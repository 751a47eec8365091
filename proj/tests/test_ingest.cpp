#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <thread>

#include "guard_env.hpp"
#include "pstnet/ingest.hpp"

using namespace pstnet;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = data_dir() / "fixtures" / "power";
const char* kKey00 = "power-hourly_+000.0_+0000.0_20240115-20240115_PS-T2M-WS10M";

std::string raw_payload() { return read_file_text(kFixtures / "raw" / (std::string(kKey00) + ".json")); }

// Scripted HTTP replies; repeats the last one when the script runs out.
class FakeTransport : public Transport {
public:
    explicit FakeTransport(std::deque<HttpResult> script) : script_(std::move(script)) {}
    HttpResult get(const std::string& host, const std::string& path) override {
        std::lock_guard lk(mu_);
        ++calls;
        last_host = host;
        last_path = path;
        if (delay_ms) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        HttpResult r = script_.front();
        if (script_.size() > 1) script_.pop_front();
        return r;
    }
    int calls = 0;
    int delay_ms = 0;
    std::string last_host, last_path;

private:
    std::mutex mu_;
    std::deque<HttpResult> script_;
};

struct FakeTime {
    double now = 1.7e9;
    std::vector<double> sleeps;
    PowerClient::Clock clock() {
        return [this] { return now; };
    }
    PowerClient::Sleeper sleeper() {
        return [this](double s) {
            sleeps.push_back(s);
            now += s;
        };
    }
};

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

IngestConfig online_config(const fs::path& cache) {
    IngestConfig c;
    c.cache_dir = cache;
    c.offline = false;
    return c;
}

HttpResult ok() { return {200, raw_payload(), 0.0, {}}; }

}  // namespace

TEST(Query, CacheKeyRoundsToHalfDegreeAndSortsParameters) {
    WeatherQuery q;
    q.latitude_deg = 0.2;
    q.longitude_deg = -0.1;
    q.parameters = {"WS10M", "T2M", "PS"};
    EXPECT_EQ(cache_key(q), kKey00);
    q.latitude_deg = 44.8;
    q.longitude_deg = 10.26;
    EXPECT_EQ(cache_key(q), "power-hourly_+045.0_+0010.5_20240115-20240115_PS-T2M-WS10M");
}

TEST(Query, ValidationRejectsBadInput) {
    WeatherQuery q;
    q.latitude_deg = 91;
    EXPECT_THROW(validate(q), IngestError);
    q = {};
    q.start = "2024-01-15";
    EXPECT_THROW(validate(q), IngestError);
    q = {};
    q.start = "20240116";
    EXPECT_THROW(validate(q), IngestError);
    q = {};
    q.parameters.clear();
    EXPECT_THROW(validate(q), IngestError);
}

TEST(Parse, RawPayloadBecomesFiniteSiSeries) {
    const auto r = parse_power_json(raw_payload(), WeatherQuery{});
    ASSERT_TRUE(r.complete());
    ASSERT_EQ(r.times.size(), 24u);
    EXPECT_EQ(r.times.front(), "2024011500");
    EXPECT_NEAR(r.series.at("T2M")[0], 27.17 + 273.15, 1e-9);
    for (const auto& [name, v] : r.series)
        for (double x : v) {
            ASSERT_TRUE(std::isfinite(x)) << name;
            if (name == "PS") EXPECT_GT(x, 50000.0);
            if (name == "T2M") EXPECT_GT(x, 150.0);
        }
}

TEST(Parse, FillValuesBecomeGapsAndAbsentParametersAreListed) {
    const std::string body = R"({"header":{"fill_value":-999},"properties":{"parameter":{
        "T2M":{"2024011500":-999,"2024011501":12.5},
        "PS":{"2024011500":-999,"2024011501":-999}}}})";
    const auto r = parse_power_json(body, WeatherQuery{});
    EXPECT_TRUE(std::isnan(r.series.at("T2M")[0]));
    EXPECT_DOUBLE_EQ(r.series.at("T2M")[1], 285.65);
    EXPECT_EQ(r.missing, (std::vector<std::string>{"PS", "WS10M"}));
    EXPECT_THROW(surface_observation(r), IngestError);
    const auto obs = surface_observation(r, true);
    EXPECT_DOUBLE_EQ(obs.temperature_k, 285.65);
    EXPECT_DOUBLE_EQ(obs.pressure_pa, 101325.0);
}

TEST(Parse, MalformedPayloadCarriesFragment) {
    try {
        parse_power_json(R"({"properties": {"parameter": {"T2M": [1, 2,)", WeatherQuery{});
        FAIL();
    } catch (const IngestError& e) {
        EXPECT_EQ(e.kind(), IngestError::Kind::parse);
        EXPECT_NE(e.detail().find("T2M"), std::string::npos);
    }
    EXPECT_THROW(parse_power_json(R"({"messages": []})", WeatherQuery{}), IngestError);
}

TEST(Cache, EntryRoundTripPreservesGaps) {
    auto r = parse_power_json(raw_payload(), WeatherQuery{});
    r.series["T2M"][3] = std::nan("");
    r.fetched_at = 123.0;
    const auto text = encode_cache_entry("k", r, 60.0);
    const auto e = decode_cache_entry(text);
    EXPECT_EQ(e.key, "k");
    EXPECT_EQ(e.ttl_s, 60.0);
    EXPECT_TRUE(std::isnan(e.response.series.at("T2M")[3]));
    EXPECT_EQ(e.response.series.at("PS"), r.series.at("PS"));
    EXPECT_EQ(encode_cache_entry("k", e.response, 60.0), text);
}

TEST(Client, SecondCallWithinTtlMakesNoRequest) {
    const auto dir = fresh_dir("pstnet_ingest_ttl");
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{ok()});
    FakeTime time;
    PowerClient c(online_config(dir), t, time.clock(), time.sleeper());
    const auto a = c.fetch_point(WeatherQuery{});
    EXPECT_EQ(a.source, DataSource::live);
    EXPECT_EQ(t->last_host, kPowerHost);
    EXPECT_NE(t->last_path.find("parameters=T2M,PS,WS10M"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / (std::string(kKey00) + ".json")));

    time.now += 3600;
    const auto b = c.fetch_point(WeatherQuery{});
    EXPECT_EQ(b.source, DataSource::cache);
    EXPECT_EQ(t->calls, 1);
    EXPECT_EQ(b.series, a.series);

    // A fresh client on the same cache directory also hits the cache.
    PowerClient c2(online_config(dir), t, time.clock(), time.sleeper());
    EXPECT_EQ(c2.fetch_point(WeatherQuery{}).source, DataSource::cache);
    EXPECT_EQ(c2.network_requests(), 0u);

    time.now += 6 * 3600;
    EXPECT_EQ(c.fetch_point(WeatherQuery{}).source, DataSource::live);
    EXPECT_EQ(t->calls, 2);
    fs::remove_all(dir);
}

TEST(Client, RequestsAreSpacedAtLeastOneSecond) {
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{ok()});
    FakeTime time;
    PowerClient c(online_config({}), t, time.clock(), time.sleeper());
    WeatherQuery q;
    c.fetch_point(q);
    time.now += 0.25;
    q.latitude_deg = 10;
    c.fetch_point(q);
    ASSERT_EQ(time.sleeps.size(), 1u);
    EXPECT_NEAR(time.sleeps[0], 0.75, 1e-12);
    time.now += 5;
    q.latitude_deg = 20;
    c.fetch_point(q);
    EXPECT_EQ(time.sleeps.size(), 1u);
}

TEST(Client, BacksOffExponentiallyOnThrottling) {
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{
        {429, "", 0.0, {}}, {503, "", 0.0, {}}, {429, "", 7.0, {}}, ok()});
    FakeTime time;
    IngestConfig cfg = online_config({});
    cfg.min_interval_s = 0.0;
    PowerClient c(cfg, t, time.clock(), time.sleeper());
    EXPECT_TRUE(c.fetch_point(WeatherQuery{}).complete());
    EXPECT_EQ(t->calls, 4);
    EXPECT_EQ(time.sleeps, (std::vector<double>{1.0, 2.0, 7.0}));  // Retry-After wins when longer
}

TEST(Client, GivesUpAfterMaxRetriesWithTransportError) {
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{{503, "busy", 0.0, {}}});
    FakeTime time;
    IngestConfig cfg = online_config({});
    cfg.max_retries = 2;
    PowerClient c(cfg, t, time.clock(), time.sleeper());
    try {
        c.fetch_point(WeatherQuery{});
        FAIL();
    } catch (const IngestError& e) {
        EXPECT_EQ(e.kind(), IngestError::Kind::transport);
        EXPECT_GT(e.retry_after_s(), 0.0);
    }
    EXPECT_EQ(t->calls, 3);
}

TEST(Client, PartialResponseIsTyped) {
    const std::string body = R"({"properties":{"parameter":{"T2M":{"2024011500":1.0},"PS":{"2024011500":100.0}}}})";
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{{200, body, 0.0, {}}});
    FakeTime time;
    PowerClient c(online_config({}), t, time.clock(), time.sleeper());
    try {
        c.fetch_point(WeatherQuery{});
        FAIL();
    } catch (const IngestError& e) {
        EXPECT_EQ(e.kind(), IngestError::Kind::partial);
        EXPECT_EQ(e.detail(), "WS10M");
    }
}

TEST(Client, ConcurrentCallersShareOneRequest) {
    auto t = std::make_shared<FakeTransport>(std::deque<HttpResult>{ok()});
    t->delay_ms = 150;
    IngestConfig cfg = online_config({});
    cfg.min_interval_s = 0.0;
    PowerClient c(cfg, t);
    std::vector<std::thread> th;
    std::atomic<int> good{0};
    for (int i = 0; i < 6; ++i) th.emplace_back([&] { good += c.fetch_point(WeatherQuery{}).complete(); });
    for (auto& x : th) x.join();
    EXPECT_EQ(good.load(), 6);
    EXPECT_EQ(t->calls, 1);
}

TEST(Offline, FixtureServedBitIdenticallyWithoutTransport) {
    IngestConfig cfg = default_ingest_config();
    cfg.offline = true;
    PowerClient c(cfg, std::make_shared<FakeTransport>(std::deque<HttpResult>{ok()}));
    ASSERT_TRUE(c.offline());
    WeatherQuery q;
    q.latitude_deg = 0.1;
    const auto a = c.fetch_point(q);
    const auto b = c.fetch_point(q);
    EXPECT_EQ(a.source, DataSource::fixture);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(c.network_requests(), 0u);
    // The fixture is the raw payload passed through the same SI conversion.
    const auto raw = parse_power_json(raw_payload(), WeatherQuery{});
    EXPECT_EQ(a.series, raw.series);
    EXPECT_EQ(a.times, raw.times);
}

TEST(Offline, EnvironmentSwitchAndGridFallback) {
    ASSERT_TRUE(offline_from_env()) << "tests run with PSTNET_OFFLINE=1";
    PowerClient c(default_ingest_config());
    WeatherQuery q;
    q.latitude_deg = -33.0;
    q.longitude_deg = 151.0;
    const auto r = c.fetch_point(q);
    EXPECT_EQ(r.source, DataSource::fixture);
    ASSERT_EQ(r.times.size(), 1u);
    const auto obs = surface_observation(r);
    EXPECT_GT(obs.temperature_k, 230.0);
    EXPECT_LT(obs.temperature_k, 320.0);
    EXPECT_GT(obs.pressure_pa, 50000.0);

    IngestConfig bare;
    bare.offline = true;
    try {
        PowerClient(bare).fetch_point(q);
        FAIL();
    } catch (const IngestError& e) {
        EXPECT_EQ(e.kind(), IngestError::Kind::offline);
    }
}

TEST(Climatology, BilinearWithPeriodicLongitude) {
    const auto g = ClimatologyGrid::parse(R"({"format":"pstnet-climatology 1","time":"2024011512",
        "lat":[0,10],"lon":[-180,-90,0,90],
        "T2M":[[0,10,20,30],[100,110,120,130]],
        "PS":[[1,1,1,1],[1,1,1,1]],
        "WS10M":[[2,2,2,2],[4,4,4,4]]})");
    EXPECT_DOUBLE_EQ(g.sample("T2M", 5, -135), 55.0);
    EXPECT_DOUBLE_EQ(g.sample("T2M", 0, 135), 15.0);  // between 90 and 180 == -180
    EXPECT_DOUBLE_EQ(g.sample("T2M", 0, 180), 0.0);
    EXPECT_DOUBLE_EQ(g.sample("WS10M", 99, 0), 4.0);  // latitude clamps
    EXPECT_THROW(ClimatologyGrid::parse(R"({"format":"other"})"), IngestError);
}

TEST(Column, LevelsEchoedAndSurfaceTied) {
    const auto r = decode_cache_entry(read_file_text(kFixtures / (std::string(kKey00) + ".json"))).response;
    const std::vector<double> levels{500, 1000, 2000, 4000, 6000, 9000, 12000, 16000};
    const auto col = to_state_column(r, levels);
    ASSERT_EQ(col.size(), levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) {
        EXPECT_EQ(col[i].altitude_m, levels[i]);
        validate(col[i]);
        if (i) EXPECT_LT(col[i].pressure_pa, col[i - 1].pressure_pa);
    }
    EXPECT_EQ(col[0].wind10_mps, r.series.at("WS10M").back());
}

TEST(NetGuard, BlocksExternalAddressesAndCountsThem) {
    ASSERT_TRUE(net_guard::active());
    ASSERT_EQ(net_guard::denied_attempts(), 0u);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASSERT_GE(fd, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(443);
    ::inet_pton(AF_INET, "192.0.2.1", &addr.sin_addr);  // TEST-NET-1
    EXPECT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), -1);
    EXPECT_EQ(errno, ENETUNREACH);
    ::close(fd);
    EXPECT_EQ(net_guard::denied_attempts(), 1u);
    net_guard::reset();
}
