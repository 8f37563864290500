#include "sparsetx/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"

namespace sparsetx::panel {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_missing_token(std::string_view s) {
    if (s.empty()) return true;
    const auto l = lower(s);
    return l == "na" || l == "nan" || l == "null" || l == "..";
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::SchemaMismatch, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::string_view to_string(Sector sector) noexcept {
    switch (sector) {
        case Sector::Agriculture: return "Agriculture";
        case Sector::Industry: return "Industry";
        case Sector::Services: return "Services";
        case Sector::GDP: return "GDP";
    }
    return "GDP";
}

Sector parse_sector(std::string_view name) {
    const auto l = lower(trim(name));
    if (l == "agriculture") return Sector::Agriculture;
    if (l == "industry") return Sector::Industry;
    if (l == "services") return Sector::Services;
    if (l == "gdp") return Sector::GDP;
    throw Error(ErrorKind::ParseError, "unknown sector '" + std::string(name) + "'");
}

std::string Entity::label() const {
    return country + ":" + std::string(to_string(sector));
}

Entity Entity::parse(std::string_view label) {
    const auto colon = label.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
        throw Error(ErrorKind::ParseError, "entity label '" + std::string(label) + "' is not COUNTRY:SECTOR");
    }
    return Entity{std::string(label.substr(0, colon)), parse_sector(label.substr(colon + 1))};
}

PanelMatrix::PanelMatrix(std::vector<Entity> entities, std::vector<int> years, Eigen::MatrixXd values, Mask mask)
    : entities_(std::move(entities)), years_(std::move(years)), values_(std::move(values)), mask_(std::move(mask)) {
    const auto n = static_cast<Eigen::Index>(entities_.size());
    const auto t = static_cast<Eigen::Index>(years_.size());
    if (values_.rows() != n || values_.cols() != t || mask_.rows() != n || mask_.cols() != t) {
        throw Error(ErrorKind::ShapeMismatch, "panel values/mask do not match entities x years");
    }
    std::set<Entity> seen(entities_.begin(), entities_.end());
    if (seen.size() != entities_.size()) throw Error(ErrorKind::InvalidConfig, "duplicate entity in panel");
    for (std::size_t k = 1; k < years_.size(); ++k) {
        if (years_[k] <= years_[k - 1]) throw Error(ErrorKind::InvalidConfig, "panel years not strictly increasing");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < t; ++j) {
            if (mask_(i, j)) {
                if (!std::isfinite(values_(i, j))) {
                    throw Error(ErrorKind::InvalidConfig, "non-finite observed value at " + entities_[i].label());
                }
            } else {
                values_(i, j) = 0.0;
            }
        }
    }
}

PanelMatrix PanelMatrix::with_cells(Eigen::MatrixXd values, Mask mask) const {
    return PanelMatrix(entities_, years_, std::move(values), std::move(mask));
}

PanelMatrix PanelMatrix::completed_with(Eigen::MatrixXd values) const {
    Mask all = Mask::Constant(values.rows(), values.cols(), true);
    return with_cells(std::move(values), std::move(all));
}

bool PanelMatrix::operator==(const PanelMatrix& other) const {
    return entities_ == other.entities_ && years_ == other.years_ && values_.rows() == other.values_.rows() &&
           values_.cols() == other.values_.cols() && (mask_ == other.mask_).all() &&
           (values_.array() == other.values_.array()).all();
}

std::vector<LongRecord> parse_long_csv(std::string_view text, const CsvSchema& schema) {
    std::vector<LongRecord> records;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        line = text.substr(pos, end - pos);
        pos = end + 1;
        return true;
    };

    std::string_view line;
    if (!next_line(line)) throw Error(ErrorKind::SchemaMismatch, "empty file, no header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.remove_prefix(3);  // BOM
    auto header = io::split_csv_line(line);
    for (auto& h : header) h = std::string(trim(h));
    const auto c_country = column_index(header, schema.country);
    const auto c_sector = column_index(header, schema.sector);
    const auto c_year = column_index(header, schema.year);
    const auto c_value = column_index(header, schema.value);
    const auto needed = std::max({c_country, c_sector, c_year, c_value}) + 1;

    long row = 0;
    while (next_line(line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto fields = io::split_csv_line(line);
        if (fields.size() < needed) throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": too few fields", row);

        LongRecord rec;
        rec.country = std::string(trim(fields[c_country]));
        if (rec.country.empty()) throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": empty country", row);
        try {
            rec.sector = parse_sector(fields[c_sector]);
        } catch (const Error& e) {
            throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": " + e.what(), row);
        }

        const auto ys = trim(fields[c_year]);
        int year = 0;
        const auto [yend, yec] = std::from_chars(ys.data(), ys.data() + ys.size(), year);
        if (ys.empty() || yec != std::errc{} || yend != ys.data() + ys.size()) {
            throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": bad year '" + std::string(ys) + "'", row);
        }
        if (year < schema.year_min || year > schema.year_max) {
            throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": year out of range", row);
        }
        rec.year = year;

        const auto vs = trim(fields[c_value]);
        if (is_missing_token(vs)) {
            rec.present = false;
            rec.value = 0.0;
        } else {
            double v = 0.0;
            const auto [vend, vec] = std::from_chars(vs.data(), vs.data() + vs.size(), v);
            if (vec != std::errc{} || vend != vs.data() + vs.size() || !std::isfinite(v)) {
                throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": bad value '" + std::string(vs) + "'", row);
            }
            rec.value = v;
            rec.present = true;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<LongRecord> load_long_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    return parse_long_csv(io::read_file(path), schema);
}

std::string long_csv(const std::vector<LongRecord>& records) {
    std::ostringstream out;
    out << "country,sector,year,value\n";
    for (const auto& r : records) {
        out << io::csv_escape(r.country) << ',' << to_string(r.sector) << ',' << r.year << ',';
        if (r.present) out << io::format_double(r.value);
        out << '\n';
    }
    return out.str();
}

std::string wide_csv(const PanelMatrix& m) {
    std::ostringstream out;
    out << "entity";
    for (const int y : m.years()) out << ',' << y;
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << io::csv_escape(m.entities()[static_cast<std::size_t>(i)].label());
        for (Eigen::Index t = 0; t < m.cols(); ++t) {
            out << ',';
            if (m.observed(i, t)) out << io::format_double(m.values()(i, t));
        }
        out << '\n';
    }
    return out.str();
}

PanelMatrix to_wide_matrix(const std::vector<LongRecord>& records) {
    if (records.empty()) throw Error(ErrorKind::EmptyMatrix, "no records");
    std::set<Entity> entity_set;
    int y0 = records.front().year;
    int y1 = y0;
    for (const auto& r : records) {
        entity_set.insert(Entity{r.country, r.sector});
        y0 = std::min(y0, r.year);
        y1 = std::max(y1, r.year);
    }
    std::vector<Entity> entities(entity_set.begin(), entity_set.end());
    std::map<Entity, Eigen::Index> row_of;
    for (std::size_t i = 0; i < entities.size(); ++i) row_of[entities[i]] = static_cast<Eigen::Index>(i);
    std::vector<int> years;
    for (int y = y0; y <= y1; ++y) years.push_back(y);

    const auto n = static_cast<Eigen::Index>(entities.size());
    const auto t = static_cast<Eigen::Index>(years.size());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(n, t);
    Mask mask = Mask::Constant(n, t, false);
    for (const auto& r : records) {
        if (!r.present) continue;
        const auto i = row_of.at(Entity{r.country, r.sector});
        const auto j = static_cast<Eigen::Index>(r.year - y0);
        if (mask(i, j) && values(i, j) != r.value) {
            throw Error(ErrorKind::DuplicateCell,
                        entities[static_cast<std::size_t>(i)].label() + " " + std::to_string(r.year));
        }
        values(i, j) = r.value;
        mask(i, j) = true;
    }
    return PanelMatrix(std::move(entities), std::move(years), std::move(values), std::move(mask));
}

std::vector<LongRecord> to_long(const PanelMatrix& m) {
    std::vector<LongRecord> out;
    out.reserve(static_cast<std::size_t>(m.rows() * m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const auto& e = m.entities()[static_cast<std::size_t>(i)];
        for (Eigen::Index t = 0; t < m.cols(); ++t) {
            const bool present = m.observed(i, t);
            out.push_back(LongRecord{e.country, e.sector, m.years()[static_cast<std::size_t>(t)],
                                     present ? m.values()(i, t) : 0.0, present});
        }
    }
    return out;
}

double missing_fraction(const PanelMatrix& m) {
    const auto cells = m.rows() * m.cols();
    if (cells == 0) throw Error(ErrorKind::EmptyMatrix, "panel has no cells");
    return static_cast<double>(cells - m.observed_count()) / static_cast<double>(cells);
}

bool ShareTriple::valid(double tol) const noexcept {
    const auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
    return in_unit(agriculture) && in_unit(industry) && in_unit(services) &&
           std::abs(agriculture + industry + services - 1.0) <= tol;
}

std::vector<ShareSummary> summarize_shares(const std::vector<ShareSeries>& panel) {
    std::vector<ShareSummary> out;
    out.reserve(panel.size());
    for (const auto& series : panel) {
        const auto n = series.shares.size();
        if (n < 2) throw Error(ErrorKind::InsufficientData, series.country + ": need at least two years");
        Eigen::Array3d sum = Eigen::Array3d::Zero();
        for (const auto& s : series.shares) {
            if (!s.valid()) throw Error(ErrorKind::InvalidShare, series.country + ": share triple invalid");
            sum += Eigen::Array3d(s.agriculture, s.industry, s.services);
        }
        const Eigen::Array3d mean = sum / static_cast<double>(n);
        Eigen::Array3d ss = Eigen::Array3d::Zero();
        for (const auto& s : series.shares) {
            ss += (Eigen::Array3d(s.agriculture, s.industry, s.services) - mean).square();
        }
        const Eigen::Array3d sd = (ss / static_cast<double>(n - 1)).sqrt();
        out.push_back(ShareSummary{series.country, {mean[0], mean[1], mean[2]}, {sd[0], sd[1], sd[2]}});
    }
    return out;
}

std::string shares_csv(const std::vector<ShareSeries>& panel) {
    std::ostringstream out;
    out << "country,year,agriculture,industry,services\n";
    for (const auto& s : panel) {
        for (std::size_t k = 0; k < s.shares.size(); ++k) {
            const auto& t = s.shares[k];
            out << io::csv_escape(s.country) << ',' << s.years[k] << ',' << io::format_double(t.agriculture) << ','
                << io::format_double(t.industry) << ',' << io::format_double(t.services) << '\n';
        }
    }
    return out.str();
}

std::string share_summary_csv(const std::vector<ShareSummary>& summary) {
    std::ostringstream out;
    out << "country,agriculture_mean,agriculture_std,industry_mean,industry_std,services_mean,services_std\n";
    for (const auto& s : summary) {
        out << io::csv_escape(s.country) << ',' << io::format_double(s.mean.agriculture) << ','
            << io::format_double(s.sd.agriculture) << ',' << io::format_double(s.mean.industry) << ','
            << io::format_double(s.sd.industry) << ',' << io::format_double(s.mean.services) << ','
            << io::format_double(s.sd.services) << '\n';
    }
    return out.str();
}

}  // namespace sparsetx::panel
