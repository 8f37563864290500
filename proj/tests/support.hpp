#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unistd.h>

#include "sparsetx/panel.hpp"
#include "sparsetx/rng.hpp"

// Hand-rolled generators and small helpers shared by the test binaries.
namespace support {

using sparsetx::Rng;
using sparsetx::panel::Entity;
using sparsetx::panel::Mask;
using sparsetx::panel::PanelMatrix;
using sparsetx::panel::Sector;

inline Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) { return normal_matrix(rng, n, 1).col(0); }

inline int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); }

/// Random orthogonal k x k matrix from the QR of a Gaussian matrix.
inline Eigen::MatrixXd random_orthogonal(Rng& rng, Eigen::Index k) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(normal_matrix(rng, k, k));
    return qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
}

inline std::vector<Entity> entities(int countries) {
    std::vector<Entity> out;
    const Sector all[] = {Sector::Agriculture, Sector::Industry, Sector::Services, Sector::GDP};
    for (int c = 0; c < countries; ++c)
        for (const auto s : all) out.push_back({"C" + std::to_string(c), s});
    return out;
}

inline std::vector<int> years(int first, int count) {
    std::vector<int> out;
    for (int k = 0; k < count; ++k) out.push_back(first + k);
    return out;
}

/// Random panel of `countries` x 4 sectors over `t` years. Each cell is missing
/// with probability `p_missing`, but every row keeps at least one observation.
inline PanelMatrix random_panel(Rng& rng, int countries, int t, double p_missing) {
    const auto ents = entities(countries);
    const auto n = static_cast<Eigen::Index>(ents.size());
    Eigen::MatrixXd values = normal_matrix(rng, n, t) * 10.0;
    Mask mask(n, t);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < t; ++j) mask(i, j) = rng.uniform() >= p_missing;
        if (!mask.row(i).any()) mask(i, static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(t)))) = true;
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < t; ++j)
            if (!mask(i, j)) values(i, j) = 0.0;
    return PanelMatrix(ents, years(2000, t), values, mask);
}

inline PanelMatrix full_panel(const Eigen::MatrixXd& values) {
    const int countries = static_cast<int>(values.rows() / 4);
    return PanelMatrix(entities(countries), years(2000, static_cast<int>(values.cols())), values,
                       Mask::Constant(values.rows(), values.cols(), true));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("sparsetx-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::filesystem::path fixture_dir() { return SPARSETX_FIXTURE_DIR; }

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace support
