#include "vbstream/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vbstream/errors.hpp"
#include "vbstream/rng.hpp"

namespace vbs::io {

namespace {

double parse_field(const std::string& field, std::size_t line_no) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw DataError("parse error at line " + std::to_string(line_no) + ": bad number '" +
                        field + "'");
    return value;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

} // namespace

Dataset load_dataset(const std::string& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    Dataset ds;
    ds.has_labels = has_labels;
    std::vector<Vec> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv(line);
        if (width == 0) {
            width = fields.size();
            if (has_labels && width < 2)
                throw DataError("parse error at line " + std::to_string(line_no) +
                                ": labeled data needs at least two columns");
        } else if (fields.size() != width) {
            throw DataError("parse error at line " + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " fields, got " +
                            std::to_string(fields.size()));
        }
        const std::size_t feature_count = has_labels ? width - 1 : width;
        Vec row(feature_count);
        for (std::size_t c = 0; c < feature_count; ++c) row[c] = parse_field(fields[c], line_no);
        if (has_labels) {
            const double raw = parse_field(fields[width - 1], line_no);
            if (raw < 0.0 || raw != std::floor(raw))
                throw DataError("parse error at line " + std::to_string(line_no) +
                                ": label must be a non-negative integer");
            ds.labels.push_back(static_cast<int>(raw));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::domain_error("dataset is empty: " + path);
    ds.x = Matrix::from_rows(rows);
    return ds;
}

void save_dataset(const std::string& path, const Matrix& x, const std::vector<int>* labels) {
    if (labels && labels->size() != x.rows())
        throw ShapeError("save_dataset: label count mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    char buf[40];
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", x(r, c));
            out << (c ? "," : "") << buf;
        }
        if (labels) out << ',' << (*labels)[r];
        out << '\n';
    }
}

std::vector<int> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file: " + path);
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const double raw = parse_field(line, line_no);
        if (raw != std::floor(raw))
            throw DataError("parse error at line " + std::to_string(line_no) +
                            ": label must be an integer");
        labels.push_back(static_cast<int>(raw));
    }
    if (labels.empty()) throw std::domain_error("label file is empty: " + path);
    return labels;
}

void save_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write label file: " + path);
    for (int l : labels) out << l << '\n';
}

GmmSample make_gmm(std::uint64_t seed, std::size_t k, std::size_t d, std::size_t n,
                   double separation) {
    if (k < 1 || d < 1 || n < 1) throw std::domain_error("make_gmm: k, d, n must be >= 1");

    // Center layout: a scaled standard-basis simplex keeps every pair exactly
    // `separation` apart when it fits; otherwise an axis-aligned grid with
    // spacing `separation`.
    Matrix centers(k, d);
    if (k <= d) {
        const double scale = separation / std::sqrt(2.0);
        for (std::size_t c = 0; c < k; ++c) centers(c, c) = scale;
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t c = 0; c < k; ++c) mean += centers(c, j);
            mean /= static_cast<double>(k);
            for (std::size_t c = 0; c < k; ++c) centers(c, j) -= mean;
        }
    } else {
        std::size_t side = 1;
        while (std::pow(static_cast<double>(side), static_cast<double>(d)) <
               static_cast<double>(k))
            ++side;
        for (std::size_t c = 0; c < k; ++c) {
            std::size_t rem = c;
            for (std::size_t j = 0; j < d; ++j) {
                centers(c, j) = separation * static_cast<double>(rem % side);
                rem /= side;
            }
        }
    }

    Rng rng(seed);
    GmmSample out;
    out.centers = centers;
    out.x = Matrix(n, d);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % k;
        out.labels[i] = static_cast<int>(c);
        for (std::size_t j = 0; j < d; ++j) out.x(i, j) = centers(c, j) + rng.normal();
    }
    return out;
}

} // namespace vbs::io
