#ifndef ROMBAYES_TEXT_IO_HPP
#define ROMBAYES_TEXT_IO_HPP

#include "rombayes/pce.hpp"
#include "rombayes/fom.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace rombayes::io {

class FormatError : public Error {
public:
    using Error::Error;
};

/// Shortest form is not required; 17 significant digits round-trip doubles.
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_row(std::ostream& os, const Eigen::Ref<const Eigen::RowVectorXd>& row)
{
    for (Index i = 0; i < row.size(); ++i) {
        if (i) os << ' ';
        os << format_double(row[i]);
    }
    os << '\n';
}

namespace detail {

struct Header {
    std::string kind;
    std::map<std::string, std::string> fields;

    long long integer(const std::string& key) const
    {
        auto it = fields.find(key);
        if (it == fields.end()) throw FormatError("missing header field '" + key + "' in " + kind + " file");
        try {
            std::size_t used = 0;
            long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw FormatError("bad integer for '" + key + "'");
            return v;
        } catch (const std::logic_error&) {
            throw FormatError("bad integer for '" + key + "'");
        }
    }

    double real(const std::string& key) const
    {
        auto it = fields.find(key);
        if (it == fields.end()) throw FormatError("missing header field '" + key + "' in " + kind + " file");
        try {
            return std::stod(it->second);
        } catch (const std::logic_error&) {
            throw FormatError("bad number for '" + key + "'");
        }
    }
};

inline Header read_header(std::istream& is, const std::string& expected_kind)
{
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty input; expected '# " + expected_kind + " v1' header");
    std::istringstream ls(line);
    std::string hash, kind, version;
    ls >> hash >> kind >> version;
    if (hash != "#" || kind != expected_kind || version != "v1")
        throw FormatError("expected header '# " + expected_kind + " v1 ...', got '" + line + "'");
    Header h{kind, {}};
    std::string tok;
    while (ls >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("malformed header token '" + tok + "'");
        h.fields[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return h;
}

inline double read_value(std::istream& is, const char* what)
{
    std::string tok;
    if (!(is >> tok)) throw FormatError(std::string("unexpected end of input while reading ") + what);
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw FormatError(std::string("bad number '") + tok + "' in " + what);
        return v;
    } catch (const std::logic_error&) {
        throw FormatError(std::string("bad number '") + tok + "' in " + what);
    }
}

inline Vector read_vector(std::istream& is, Index n, const char* what)
{
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = read_value(is, what);
    return v;
}

inline Matrix read_matrix(std::istream& is, Index rows, Index cols, const char* what)
{
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = read_value(is, what);
    return m;
}

inline void expect_end(std::istream& is, const std::string& kind)
{
    std::string tok;
    if (is >> tok) throw FormatError("trailing data in " + kind + " file");
}

} // namespace detail

// --- snapshot v1 -----------------------------------------------------------

inline void write_snapshots(std::ostream& os, const SnapshotMatrix& s)
{
    os << "# snapshot v1 n_cells=" << s.n_cells() << " n_times=" << s.n_times() << '\n';
    write_row(os, s.times.transpose());
    write_row(os, s.weights.transpose());
    for (Index r = 0; r < s.n_cells(); ++r) write_row(os, s.values.row(r));
}

inline SnapshotMatrix read_snapshots(std::istream& is)
{
    auto h = detail::read_header(is, "snapshot");
    const Index nc = h.integer("n_cells");
    const Index nt = h.integer("n_times");
    if (nc <= 0 || nt <= 0) throw FormatError("snapshot file: sizes must be positive");
    SnapshotMatrix s;
    s.times = detail::read_vector(is, nt, "snapshot times");
    s.weights = detail::read_vector(is, nc, "snapshot weights");
    s.values = detail::read_matrix(is, nc, nt, "snapshot values");
    detail::expect_end(is, "snapshot");
    s.validate();
    return s;
}

// --- basis v1 --------------------------------------------------------------

inline void write_basis(std::ostream& os, const PodBasis& b)
{
    os << "# basis v1 n_cells=" << b.n_cells() << " n_modes=" << b.n_modes() << '\n';
    write_row(os, b.singular_values.transpose());
    write_row(os, b.weights.transpose());
    for (Index r = 0; r < b.n_cells(); ++r) write_row(os, b.modes.row(r));
}

inline PodBasis read_basis(std::istream& is)
{
    auto h = detail::read_header(is, "basis");
    const Index nc = h.integer("n_cells");
    const Index nr = h.integer("n_modes");
    if (nc <= 0 || nr <= 0) throw FormatError("basis file: sizes must be positive");
    PodBasis b;
    b.singular_values = detail::read_vector(is, nr, "singular values");
    b.weights = detail::read_vector(is, nc, "basis weights");
    b.modes = detail::read_matrix(is, nc, nr, "modes");
    detail::expect_end(is, "basis");
    return b;
}

// --- rom v1 ----------------------------------------------------------------

inline void write_rom(std::ostream& os, const ReducedSystem& sys)
{
    const Index n = sys.n_modes();
    os << "# rom v1 n_modes=" << n << " nu=" << format_double(sys.nu) << '\n';
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) os << format_double(sys.gram(i, j)) << '\n';
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) os << format_double(sys.diffusion(i, j)) << '\n';
    for (Index e = 0; e < sys.convection.flat().size(); ++e) os << format_double(sys.convection.flat()[e]) << '\n';
}

inline ReducedSystem read_rom(std::istream& is)
{
    auto h = detail::read_header(is, "rom");
    const Index n = h.integer("n_modes");
    if (n <= 0) throw FormatError("rom file: n_modes must be positive");
    ReducedSystem sys;
    sys.nu = h.real("nu");
    sys.gram = detail::read_matrix(is, n, n, "gram");
    sys.diffusion = detail::read_matrix(is, n, n, "diffusion");
    sys.convection = Tensor3(n);
    sys.convection.flat() = detail::read_vector(is, n * n * n, "convection");
    detail::expect_end(is, "rom");
    sys.validate();
    return sys;
}

// --- pce v1 ----------------------------------------------------------------

inline void write_pce(std::ostream& os, const PceExpansion& e)
{
    const MultiIndexSet& set = *e.index_set;
    os << "# pce v1 m=" << set.n_vars() << " p=" << set.degree() << " d=" << e.outputs() << '\n';
    for (Index a = 0; a < set.size(); ++a) {
        auto dense = set.dense(a);
        for (std::size_t k = 0; k < dense.size(); ++k) os << (k ? " " : "") << dense[k];
        os << '\n';
    }
    for (Index r = 0; r < e.outputs(); ++r) write_row(os, e.coefficients.row(r));
}

inline PceExpansion read_pce(std::istream& is)
{
    auto h = detail::read_header(is, "pce");
    const auto m = static_cast<int>(h.integer("m"));
    const auto p = static_cast<int>(h.integer("p"));
    const Index d = h.integer("d");
    auto set = std::make_shared<const MultiIndexSet>(build_multiindex(m, p));
    for (Index a = 0; a < set->size(); ++a) {
        auto expected = set->dense(a);
        for (int k = 0; k < m; ++k) {
            double v = detail::read_value(is, "multi-index");
            if (v != expected[static_cast<std::size_t>(k)])
                throw FormatError("pce file: multi-index list is not in graded order");
        }
    }
    PceExpansion e{set, detail::read_matrix(is, d, set->size(), "pce coefficients")};
    detail::expect_end(is, "pce");
    return e;
}

// --- ensemble v1 -----------------------------------------------------------

inline void write_ensemble(std::ostream& os, const Matrix& members, std::uint64_t seed)
{
    os << "# ensemble v1 n_members=" << members.rows() << " dim=" << members.cols() << " seed=" << seed << '\n';
    for (Index r = 0; r < members.rows(); ++r) write_row(os, members.row(r));
}

inline Ensemble read_ensemble(std::istream& is)
{
    auto h = detail::read_header(is, "ensemble");
    Ensemble e;
    const Index z = h.integer("n_members");
    const Index s = h.integer("dim");
    e.seed = static_cast<std::uint64_t>(h.integer("seed"));
    e.members = detail::read_matrix(is, z, s, "ensemble members");
    e.active_mask.assign(static_cast<std::size_t>(s), true);
    detail::expect_end(is, "ensemble");
    return e;
}

// --- file helpers ----------------------------------------------------------

template <class Writer>
void write_file(const std::string& path, Writer&& writer)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    writer(os);
    os.flush();
    if (!os) throw Error("write to '" + path + "' failed");
}

template <class Reader>
auto read_file(const std::string& path, Reader&& reader)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path + "' for reading");
    try {
        return reader(is);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

} // namespace rombayes::io

#endif
