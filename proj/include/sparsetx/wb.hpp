#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sparsetx/panel.hpp"

namespace sparsetx::wb {

struct HttpResponse {
    int status = 0;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    /// Throws HttpError when no response could be obtained.
    virtual HttpResponse get(const std::string& url) = 0;
};

/// HTTPS via cpp-httplib and OpenSSL.
class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(int timeout_s = 30) : timeout_s_(timeout_s) {}
    HttpResponse get(const std::string& url) override;

private:
    int timeout_s_;
};

/// Serves recorded responses from a directory holding `index.json`
/// ({"<url>": {"file": "...", "status": 200}}) and the body files. Unknown
/// URLs answer 404.
class FixtureTransport final : public HttpTransport {
public:
    explicit FixtureTransport(std::filesystem::path dir);
    HttpResponse get(const std::string& url) override;
    int request_count() const noexcept { return requests_; }

private:
    std::filesystem::path dir_;
    std::map<std::string, std::pair<std::string, int>> routes_;
    int requests_ = 0;
};

struct IndicatorRequest {
    std::vector<std::string> countries;  // ISO3 codes
    std::string indicator;
    int year_start = 1991;
    int year_end = 2020;
    std::filesystem::path cache_dir;
    bool offline = false;
};

struct ClientConfig {
    double max_requests_per_second = 5.0;
    int retries = 3;
    double backoff_s = 0.5;
    /// Replaced in tests to avoid real sleeping.
    std::function<void(double seconds)> sleeper;
};

/// Indicator code for each sector, in sector order.
struct IndicatorSet {
    std::map<panel::Sector, std::string> codes{
        {panel::Sector::Agriculture, "NV.AGR.TOTL.CD"},
        {panel::Sector::Industry, "NV.IND.TOTL.CD"},
        {panel::Sector::Services, "NV.SRV.TOTL.CD"},
        {panel::Sector::GDP, "NY.GDP.MKTP.CD"},
    };
};

inline const std::vector<std::string> kDefaultCountries{"KEN", "NGA", "ZAF"};

/// `SPARSETX_CACHE_DIR`, else `$HOME/.cache/sparsetx`, else `.sparsetx-cache`.
std::filesystem::path default_cache_dir();

/// Page 1 URL; later pages append `&page=k`.
std::string indicator_url(const IndicatorRequest& req, int page = 1);
std::string cache_key(const std::string& url);

class Client {
public:
    Client(std::shared_ptr<HttpTransport> transport, ClientConfig cfg = {});

    /// All pages of one indicator. Pages come from the cache when present;
    /// otherwise they are downloaded and cached atomically. Null values map to
    /// present = false records.
    std::vector<panel::LongRecord> fetch_indicator(const IndicatorRequest& req, panel::Sector sector);

    /// Fetches every indicator in `set` and merges them into a wide panel over
    /// year_start..year_end.
    panel::PanelMatrix fetch_panel(const std::vector<std::string>& countries, int year_start, int year_end,
                                   const std::filesystem::path& cache_dir, bool offline = false,
                                   const IndicatorSet& set = {});

    int network_requests() const noexcept { return network_requests_; }

private:
    std::string get_page(const std::string& url, bool offline);
    void throttle();

    std::shared_ptr<HttpTransport> transport_;
    ClientConfig cfg_;
    int network_requests_ = 0;
    double last_request_s_ = -1.0;
};

/// Parses one API page: `[metadata, rows]`. Throws ApiShapeError on error
/// messages or any other shape. Returns the total page count.
int parse_page(const std::string& body, panel::Sector sector, std::vector<panel::LongRecord>& out);

}  // namespace sparsetx::wb
