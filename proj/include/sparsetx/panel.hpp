#pragma once

#include <Eigen/Dense>

#include <compare>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sparsetx::panel {

enum class Sector { Agriculture, Industry, Services, GDP };

std::string_view to_string(Sector sector) noexcept;
/// Case-insensitive; throws ParseError on unknown names.
Sector parse_sector(std::string_view name);

struct LongRecord {
    std::string country;
    Sector sector = Sector::GDP;
    int year = 0;
    double value = 0.0;
    bool present = false;

    bool operator==(const LongRecord&) const = default;
};

struct Entity {
    std::string country;
    Sector sector = Sector::GDP;

    /// "COUNTRY:SECTOR", the wide-CSV row key.
    std::string label() const;
    static Entity parse(std::string_view label);

    auto operator<=>(const Entity&) const = default;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// N entities by T contiguous years. The mask is the only source of truth for
/// missingness; values under a false mask are stored as 0 and carry no meaning.
class PanelMatrix {
public:
    PanelMatrix() = default;
    /// Validates the invariants (unique entities, increasing years, matching
    /// shapes, finite observed values); throws ShapeMismatch / InvalidConfig.
    PanelMatrix(std::vector<Entity> entities, std::vector<int> years, Eigen::MatrixXd values, Mask mask);

    Eigen::Index rows() const noexcept { return values_.rows(); }
    Eigen::Index cols() const noexcept { return values_.cols(); }
    const std::vector<Entity>& entities() const noexcept { return entities_; }
    const std::vector<int>& years() const noexcept { return years_; }
    const Eigen::MatrixXd& values() const noexcept { return values_; }
    const Mask& mask() const noexcept { return mask_; }

    bool observed(Eigen::Index i, Eigen::Index t) const { return mask_(i, t); }
    Eigen::Index observed_count() const { return mask_.count(); }
    bool fully_observed() const { return mask_.all(); }

    /// Same layout with new cell contents.
    PanelMatrix with_cells(Eigen::MatrixXd values, Mask mask) const;
    /// Fully observed copy holding `values`.
    PanelMatrix completed_with(Eigen::MatrixXd values) const;

    bool operator==(const PanelMatrix& other) const;

private:
    std::vector<Entity> entities_;
    std::vector<int> years_;
    Eigen::MatrixXd values_;
    Mask mask_;
};

struct CsvSchema {
    std::string country = "country";
    std::string sector = "sector";
    std::string year = "year";
    std::string value = "value";
    int year_min = 1800;
    int year_max = 2200;
};

/// Reads a long CSV. Empty / NA cells become present = false; malformed rows
/// raise ParseError with the 1-based data row index in detail().
std::vector<LongRecord> load_long_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
std::vector<LongRecord> parse_long_csv(std::string_view text, const CsvSchema& schema = {});

std::string long_csv(const std::vector<LongRecord>& records);
std::string wide_csv(const PanelMatrix& m);

/// Entities sorted by (country, sector); years min..max contiguous.
PanelMatrix to_wide_matrix(const std::vector<LongRecord>& records);

/// One record per cell, row-major, missing cells as present = false.
std::vector<LongRecord> to_long(const PanelMatrix& m);

double missing_fraction(const PanelMatrix& m);

struct ShareTriple {
    double agriculture = 0.0;
    double industry = 0.0;
    double services = 0.0;

    bool valid(double tol = 1e-9) const noexcept;
};

struct ShareSeries {
    std::string country;
    std::vector<int> years;
    std::vector<ShareTriple> shares;
};

struct ShareSummary {
    std::string country;
    ShareTriple mean;
    ShareTriple sd;  // sample sd, n - 1 denominator
};

std::vector<ShareSummary> summarize_shares(const std::vector<ShareSeries>& panel);

std::string shares_csv(const std::vector<ShareSeries>& panel);
std::string share_summary_csv(const std::vector<ShareSummary>& summary);

}  // namespace sparsetx::panel
