#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "sparsetx/wb.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"

namespace sparsetx::wb {

namespace {

constexpr const char* kApiBase = "https://api.worldbank.org/v2";

double now_s() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

int as_int(const nlohmann::json& v, const char* what) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            const std::string s = v.get<std::string>();
            const int out = std::stoi(s, &used);
            if (used == s.size()) return out;
        } catch (const std::exception&) {
        }
    }
    throw Error(ErrorKind::ApiShapeError, std::string("field '") + what + "' is not an integer");
}

std::string snippet(const std::string& body) { return body.substr(0, std::min<std::size_t>(body.size(), 200)); }

}  // namespace

std::filesystem::path default_cache_dir() {
    if (const char* env = std::getenv("SPARSETX_CACHE_DIR"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "sparsetx";
    return ".sparsetx-cache";
}

HttpResponse HttplibTransport::get(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = scheme_end == std::string::npos ? std::string::npos : url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) throw Error(ErrorKind::HttpError, "malformed URL " + url, 0);
    httplib::Client client(url.substr(0, path_start));
    client.set_connection_timeout(timeout_s_, 0);
    client.set_read_timeout(timeout_s_, 0);
    client.set_follow_location(true);
    auto res = client.Get(url.substr(path_start));
    if (!res) throw Error(ErrorKind::HttpError, "request failed: " + httplib::to_string(res.error()) + " for " + url, 0);
    return HttpResponse{res->status, res->body};
}

FixtureTransport::FixtureTransport(std::filesystem::path dir) : dir_(std::move(dir)) {
    const auto index = nlohmann::json::parse(io::read_file(dir_ / "index.json"));
    for (const auto& [url, entry] : index.items()) {
        routes_[url] = {entry.at("file").get<std::string>(), entry.value("status", 200)};
    }
}

HttpResponse FixtureTransport::get(const std::string& url) {
    ++requests_;
    const auto it = routes_.find(url);
    if (it == routes_.end()) return HttpResponse{404, "no fixture for " + url};
    return HttpResponse{it->second.second, io::read_file(dir_ / it->second.first)};
}

std::string indicator_url(const IndicatorRequest& req, int page) {
    if (req.countries.empty()) throw Error(ErrorKind::InvalidConfig, "no countries requested");
    if (req.year_start > req.year_end) throw Error(ErrorKind::InvalidConfig, "year_start after year_end");
    if (req.indicator.empty()) throw Error(ErrorKind::InvalidConfig, "empty indicator code");
    std::string codes;
    for (const auto& c : req.countries) {
        if (!codes.empty()) codes += ';';
        codes += c;
    }
    std::string url = std::string(kApiBase) + "/country/" + codes + "/indicator/" + req.indicator +
                      "?format=json&per_page=1000&date=" + std::to_string(req.year_start) + ":" + std::to_string(req.year_end);
    if (page > 1) url += "&page=" + std::to_string(page);
    return url;
}

std::string cache_key(const std::string& url) { return io::sha256_hex(url) + ".json"; }

int parse_page(const std::string& body, panel::Sector sector, std::vector<panel::LongRecord>& out) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ApiShapeError, std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorKind::ApiShapeError, "response is not an array");
    if (doc.size() == 1 && doc[0].is_object() && doc[0].contains("message")) {
        throw Error(ErrorKind::ApiShapeError, "API error: " + doc[0]["message"].dump());
    }
    if (doc.size() != 2 || !doc[0].is_object()) throw Error(ErrorKind::ApiShapeError, "response is not [metadata, rows]");
    const int pages = doc[0].contains("pages") ? as_int(doc[0]["pages"], "pages") : 1;
    const auto& rows = doc[1];
    if (rows.is_null()) return pages;
    if (!rows.is_array()) throw Error(ErrorKind::ApiShapeError, "rows are not an array");
    for (const auto& r : rows) {
        if (!r.is_object()) throw Error(ErrorKind::ApiShapeError, "row is not an object");
        panel::LongRecord rec;
        rec.sector = sector;
        if (r.contains("countryiso3code") && r["countryiso3code"].is_string() && !r["countryiso3code"].get<std::string>().empty()) {
            rec.country = r["countryiso3code"].get<std::string>();
        } else if (r.contains("country") && r["country"].is_object() && r["country"].contains("id")) {
            rec.country = r["country"]["id"].get<std::string>();
        } else {
            throw Error(ErrorKind::ApiShapeError, "row lacks a country code");
        }
        if (!r.contains("date")) throw Error(ErrorKind::ApiShapeError, "row lacks a date");
        rec.year = as_int(r["date"], "date");
        const auto& v = r.contains("value") ? r["value"] : nlohmann::json();
        if (v.is_null()) {
            rec.present = false;
        } else if (v.is_number()) {
            rec.value = v.get<double>();
            rec.present = std::isfinite(rec.value);
        } else {
            throw Error(ErrorKind::ApiShapeError, "value is neither a number nor null");
        }
        out.push_back(std::move(rec));
    }
    return pages;
}

Client::Client(std::shared_ptr<HttpTransport> transport, ClientConfig cfg) : transport_(std::move(transport)), cfg_(std::move(cfg)) {
    if (!cfg_.sleeper) cfg_.sleeper = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
    if (!(cfg_.max_requests_per_second > 0.0) || cfg_.retries < 0) throw Error(ErrorKind::InvalidConfig, "bad client config");
}

void Client::throttle() {
    const double interval = 1.0 / cfg_.max_requests_per_second;
    const double now = now_s();
    if (last_request_s_ >= 0.0 && now - last_request_s_ < interval) cfg_.sleeper(interval - (now - last_request_s_));
    last_request_s_ = now_s();
}

std::string Client::get_page(const std::string& url, bool offline) {
    if (offline) throw Error(ErrorKind::CacheMiss, "offline and no cached response for " + url);
    if (!transport_) throw Error(ErrorKind::InvalidConfig, "no HTTP transport configured");
    for (int attempt = 0;; ++attempt) {
        throttle();
        ++network_requests_;
        const HttpResponse res = transport_->get(url);
        if (res.status == 200) return res.body;
        const bool transient = res.status == 429 || res.status >= 500;
        if (!transient || attempt >= cfg_.retries) {
            throw Error(ErrorKind::HttpError, "HTTP " + std::to_string(res.status) + " for " + url + ": " + snippet(res.body),
                        res.status);
        }
        cfg_.sleeper(cfg_.backoff_s * std::pow(2.0, attempt));
    }
}

std::vector<panel::LongRecord> Client::fetch_indicator(const IndicatorRequest& req, panel::Sector sector) {
    std::vector<panel::LongRecord> out;
    int pages = 1;
    for (int page = 1; page <= pages; ++page) {
        const std::string url = indicator_url(req, page);
        const auto cached = req.cache_dir / cache_key(url);
        std::string body;
        const bool hit = !req.cache_dir.empty() && std::filesystem::exists(cached);
        if (hit) body = io::read_file(cached);
        else body = get_page(url, req.offline);
        pages = parse_page(body, sector, out);
        if (!hit && !req.cache_dir.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(req.cache_dir, ec);
            if (ec) throw Error(ErrorKind::IoError, "cannot create cache dir " + req.cache_dir.string());
            io::write_file_atomic(cached, body);
        }
    }
    return out;
}

panel::PanelMatrix Client::fetch_panel(const std::vector<std::string>& countries, int year_start, int year_end,
                                       const std::filesystem::path& cache_dir, bool offline, const IndicatorSet& set) {
    std::vector<panel::LongRecord> records;
    for (const auto& [sector, code] : set.codes) {
        IndicatorRequest req{countries, code, year_start, year_end, cache_dir, offline};
        for (auto& r : fetch_indicator(req, sector))
            if (r.year >= year_start && r.year <= year_end) records.push_back(std::move(r));
    }
    const panel::PanelMatrix merged = panel::to_wide_matrix(records);
    if (merged.years().front() == year_start && merged.years().back() == year_end) return merged;

    std::vector<int> years;
    for (int y = year_start; y <= year_end; ++y) years.push_back(y);
    const auto t = static_cast<Eigen::Index>(years.size());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(merged.rows(), t);
    panel::Mask mask = panel::Mask::Constant(merged.rows(), t, false);
    const Eigen::Index offset = merged.years().front() - year_start;
    values.middleCols(offset, merged.cols()) = merged.values();
    mask.middleCols(offset, merged.cols()) = merged.mask();
    return panel::PanelMatrix(merged.entities(), std::move(years), std::move(values), std::move(mask));
}

}  // namespace sparsetx::wb
