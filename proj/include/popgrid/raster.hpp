#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "popgrid/csv.hpp"

namespace popgrid {

/// Header of a co-registered grid layer. Cells are row-major with row 0 at
/// the northern edge, matching the on-disk layout of ESRI ASCII grids.
struct GridHeader {
    int ncols = 0;
    int nrows = 0;
    double xll = 0.0;
    double yll = 0.0;
    double cellsize = 0.0;
    double nodata = -9999.0;

    bool compatible(const GridHeader& o) const {
        auto close = [](double a, double b) {
            const double scale = std::max({std::abs(a), std::abs(b), 1.0});
            return std::abs(a - b) <= 1e-9 * scale;
        };
        return ncols == o.ncols && nrows == o.nrows && close(xll, o.xll) && close(yll, o.yll) &&
               close(cellsize, o.cellsize);
    }

    std::size_t size() const { return static_cast<std::size_t>(ncols) * nrows; }

    double cell_x(int col) const { return xll + (col + 0.5) * cellsize; }
    double cell_y(int row) const { return yll + (nrows - row - 0.5) * cellsize; }
};

struct Grid {
    GridHeader header;
    std::vector<double> values;

    Grid() = default;
    Grid(const GridHeader& h, double fill) : header(h), values(h.size(), fill) {}

    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * header.ncols + col]; }
    double at(int row, int col) const {
        return values[static_cast<std::size_t>(row) * header.ncols + col];
    }
    bool is_nodata(int row, int col) const { return at(row, col) == header.nodata; }
    void fill(double v) { values.assign(header.size(), v); }
};

/// Reads an ESRI ASCII grid: six-key header (NODATA_value optional,
/// defaults to -9999) followed by ncols*nrows values row-major from north.
inline Grid read_esri_ascii(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open raster: " + path);

    Grid g;
    bool have_ncols = false, have_nrows = false, have_xll = false, have_yll = false,
         have_cell = false;
    std::string key;
    while (in >> key) {
        std::string lower;
        for (char c : key)
            lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (lower == "ncols") {
            in >> g.header.ncols;
            have_ncols = true;
        } else if (lower == "nrows") {
            in >> g.header.nrows;
            have_nrows = true;
        } else if (lower == "xllcorner") {
            in >> g.header.xll;
            have_xll = true;
        } else if (lower == "yllcorner") {
            in >> g.header.yll;
            have_yll = true;
        } else if (lower == "cellsize") {
            in >> g.header.cellsize;
            have_cell = true;
        } else if (lower == "nodata_value") {
            in >> g.header.nodata;
        } else {
            // First data token: push it back by parsing it as a value below.
            break;
        }
        key.clear();
    }
    if (!(have_ncols && have_nrows && have_xll && have_yll && have_cell))
        throw Error(path + ": incomplete ESRI ASCII header");
    if (g.header.ncols <= 0 || g.header.nrows <= 0 || !(g.header.cellsize > 0.0))
        throw Error(path + ": invalid grid dimensions");

    g.values.reserve(g.header.size());
    if (!key.empty()) {
        g.values.push_back(parse_double(key, path));
    }
    double v;
    while (in >> v)
        g.values.push_back(v);
    if (g.values.size() != g.header.size())
        throw Error(path + ": expected " + std::to_string(g.header.size()) + " cell values, found " +
                    std::to_string(g.values.size()));
    return g;
}

inline void write_esri_ascii(const std::string& path, const Grid& g) {
    auto out = open_output(path);
    out << "ncols " << g.header.ncols << "\n";
    out << "nrows " << g.header.nrows << "\n";
    out << "xllcorner " << fmt_double(g.header.xll) << "\n";
    out << "yllcorner " << fmt_double(g.header.yll) << "\n";
    out << "cellsize " << fmt_double(g.header.cellsize) << "\n";
    out << "NODATA_value " << fmt_double(g.header.nodata) << "\n";
    for (int r = 0; r < g.header.nrows; ++r) {
        for (int c = 0; c < g.header.ncols; ++c) {
            if (c)
                out << ' ';
            out << fmt_double(g.at(r, c));
        }
        out << "\n";
    }
}

} // namespace popgrid
