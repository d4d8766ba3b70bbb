#pragma once

#include <Eigen/Dense>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stackdec/common.hpp"

namespace stackdec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// n observed rows of a fixed prediction function: feature matrix X (n x d)
// and the black-box value F per row. Immutable after construction.
struct SampleSet {
    Matrix X;                        // n x d
    Vector F;                        // n
    std::vector<std::string> names;  // d feature column names

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index d() const { return X.cols(); }

    void validate() const {
        if (X.rows() < 1 || X.cols() < 1) throw ValidationError("SampleSet needs n >= 1 and d >= 1");
        if (F.size() != X.rows()) throw ValidationError("feature/prediction row count mismatch");
        if (!X.allFinite() || !F.allFinite()) throw ValidationError("SampleSet contains non-finite values");
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& raw, size_t row, const std::string& col) {
    std::string s = trim(raw);
    if (s.empty())
        throw ValidationError("empty cell at data row " + std::to_string(row) + ", column '" + col + "'");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw ValidationError("non-numeric cell '" + s + "' at data row " + std::to_string(row) +
                              ", column '" + col + "'");
    if (!is_finite(v))
        throw ValidationError("non-finite value at data row " + std::to_string(row) + ", column '" + col + "'");
    return v;
}

}  // namespace detail

// Strict CSV ingestion: header row required, '.' decimal point, every cell a
// finite real. The prediction column becomes F, everything else becomes X in
// the original column order.
inline SampleSet load_csv(const std::string& path, const std::string& prediction_column) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open input file: " + path);

    std::string header;
    if (!std::getline(in, header)) throw ValidationError("empty file: " + path);
    auto cols = detail::split_csv_line(header);
    for (auto& c : cols) c = detail::trim(c);

    int pred_idx = -1;
    for (size_t j = 0; j < cols.size(); ++j) {
        if (cols[j] == prediction_column) {
            if (pred_idx >= 0) throw ValidationError("duplicate prediction column '" + prediction_column + "'");
            pred_idx = static_cast<int>(j);
        }
        for (size_t k = j + 1; k < cols.size(); ++k)
            if (cols[j] == cols[k]) throw ValidationError("duplicate column name '" + cols[j] + "'");
    }
    if (pred_idx < 0) throw ValidationError("prediction column '" + prediction_column + "' not found in " + path);
    if (cols.size() < 2) throw ValidationError("at least one feature column required besides '" + prediction_column + "'");

    std::vector<std::vector<double>> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != cols.size())
            throw ValidationError("row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                  " cells, expected " + std::to_string(cols.size()));
        std::vector<double> vals(cells.size());
        for (size_t j = 0; j < cells.size(); ++j) vals[j] = detail::parse_cell(cells[j], lineno, cols[j]);
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ValidationError("no data rows in " + path);

    SampleSet s;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(cols.size()) - 1;
    s.X.resize(n, d);
    s.F.resize(n);
    for (size_t j = 0; j < cols.size(); ++j)
        if (static_cast<int>(j) != pred_idx) s.names.push_back(cols[j]);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index jj = 0;
        for (size_t j = 0; j < cols.size(); ++j) {
            if (static_cast<int>(j) == pred_idx)
                s.F[i] = rows[static_cast<size_t>(i)][j];
            else
                s.X(i, jj++) = rows[static_cast<size_t>(i)][j];
        }
    }
    s.validate();
    return s;
}

inline void save_csv(const SampleSet& s, const std::string& path, const std::string& prediction_column = "pred") {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write file: " + path);
    for (Eigen::Index j = 0; j < s.d(); ++j) {
        out << (j < static_cast<Eigen::Index>(s.names.size()) ? s.names[static_cast<size_t>(j)]
                                                              : "x" + std::to_string(j + 1))
            << ',';
    }
    out << prediction_column << '\n';
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        for (Eigen::Index j = 0; j < s.d(); ++j) out << fp17(s.X(i, j)) << ',';
        out << fp17(s.F[i]) << '\n';
    }
}

// Per-column location/scale record; enough to map standardized coordinates
// back to original units for plotting.
struct StandardizeRecord {
    std::vector<double> mean;
    std::vector<double> sd;  // sample sd, divisor n-1

    double to_original(int col, double z) const {
        return z * sd[static_cast<size_t>(col)] + mean[static_cast<size_t>(col)];
    }
    double to_standardized(int col, double x) const {
        return (x - mean[static_cast<size_t>(col)]) / sd[static_cast<size_t>(col)];
    }
};

// Zero-mean unit-variance feature columns (sample sd); F untouched.
inline std::pair<SampleSet, StandardizeRecord> standardize(const SampleSet& s) {
    s.validate();
    if (s.n() < 2) throw ValidationError("standardize needs n >= 2");
    SampleSet out = s;
    StandardizeRecord rec;
    for (Eigen::Index j = 0; j < s.d(); ++j) {
        double m = s.X.col(j).mean();
        double ss = (s.X.col(j).array() - m).square().sum();
        double sd = std::sqrt(ss / static_cast<double>(s.n() - 1));
        if (sd == 0.0) {
            std::string name = j < static_cast<Eigen::Index>(s.names.size())
                                   ? s.names[static_cast<size_t>(j)]
                                   : "x" + std::to_string(j + 1);
            throw ValidationError("constant feature column '" + name + "' cannot be standardized");
        }
        out.X.col(j) = (s.X.col(j).array() - m) / sd;
        rec.mean.push_back(m);
        rec.sd.push_back(sd);
    }
    return {std::move(out), std::move(rec)};
}

}  // namespace stackdec
