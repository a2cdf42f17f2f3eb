#pragma once

// Classical Schottky groups: generator g_i maps the exterior of disk D_i onto the
// interior of D'_i. Letters are coded internally as 2i (g_i) and 2i+1 (g_i^{-1});
// externally as signed indices +(i+1) / -(i+1).
//
// The pairing map is g_i(z) = c' - e^{i phi} r r' / (z - c) with twist phi, normalised
// to determinant one. With phi = 0 and real centres it is real, hence Fuchsian.

#include <kleinlab/error.hpp>
#include <kleinlab/hyperbolic.hpp>
#include <kleinlab/rng.hpp>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

struct Disk {
    cplx center{0.0};
    double radius = 1.0;

    bool contains(cplx w) const { return std::norm(w - center) < radius * radius; }
};

struct DiskPair {
    Disk from;  // D_i
    Disk to;    // D'_i
    double twist = 0.0;  // extra rotation of D'_i about its centre, radians
};

inline int letter_inverse(int code) { return code ^ 1; }
inline int signed_letter(int code) { return (code & 1) ? -(code / 2 + 1) : (code / 2 + 1); }
inline int letter_code(int signed_letter) {
    return signed_letter > 0 ? 2 * (signed_letter - 1) : 2 * (-signed_letter - 1) + 1;
}

// Image of a disk under a Moebius map whose pole lies outside the disk.
inline Disk image_disk(const Mobius& g, const Disk& D) {
    if (g.c == cplx(0.0)) {
        cplx center = (g.a * D.center + g.b) / g.d;
        return {center, D.radius * std::abs(g.a / g.d)};
    }
    cplx pole = -g.d / g.c;
    // The reflection of the pole in the circle goes to the image centre.
    cplx center = g.a / g.c;
    if (pole != D.center) {
        cplx q = D.center + D.radius * D.radius / std::conj(pole - D.center);
        center = apply_boundary(g, BoundaryPoint::finite(q)).z;
    }
    cplx on_circle = apply_boundary(g, BoundaryPoint::finite(D.center + D.radius)).z;
    return {center, std::abs(on_circle - center)};
}

// True when the Moebius map sends the inside of D onto the outside of the image circle.
inline bool maps_to_exterior(const Mobius& g, const Disk& D) {
    if (g.c == cplx(0.0)) return false;
    return D.contains(-g.d / g.c);
}

class SchottkyGroup {
public:
    explicit SchottkyGroup(std::vector<DiskPair> pairs) : pairs_(std::move(pairs)) {
        if (pairs_.size() < 2) throw ConfigError("RankTooSmall", "a Schottky group needs at least two disk pairs");
        for (const auto& p : pairs_) {
            if (!(p.from.radius > 0.0) || !(p.to.radius > 0.0) || !std::isfinite(p.from.radius) ||
                !std::isfinite(p.to.radius))
                throw ConfigError("DegeneratePair", "disk radii must be positive and finite");
        }
        for (const auto& p : pairs_) {
            disks_.push_back(p.to);
            disks_.push_back(p.from);
        }
        for (size_t i = 0; i < disks_.size(); ++i)
            for (size_t j = i + 1; j < disks_.size(); ++j)
                if (std::abs(disks_[i].center - disks_[j].center) <= disks_[i].radius + disks_[j].radius)
                    throw ConfigError("OverlappingDisks", "disks " + std::to_string(i) + " and " +
                                                              std::to_string(j) + " have intersecting closures");
        for (const auto& D : disks_)
            if (std::norm(D.center) + 1.0 <= D.radius * D.radius)
                throw ConfigError("BasepointCovered", "the half-ball over a disk contains o = (0,1)");
        for (const auto& p : pairs_) {
            const cplx c = p.from.center, c2 = p.to.center;
            const double rr = p.from.radius * p.to.radius;
            const cplx tw = std::polar(1.0, p.twist);
            Mobius g(c2, -tw * rr - c * c2, 1.0, -c);
            g.normalize();
            gens_.push_back(g);
            gens_.push_back(g.inverse().normalized());
        }
        check_ping_pong();
        estimate_contraction();
    }

    int rank() const { return static_cast<int>(pairs_.size()); }
    int letters() const { return 2 * rank(); }
    const std::vector<DiskPair>& pairs() const { return pairs_; }
    const Mobius& generator(int code) const { return gens_[code]; }
    // Disk into which the letter maps everything outside the disk of its inverse.
    const Disk& disk_of(int code) const { return disks_[code]; }
    const std::vector<Disk>& disks() const { return disks_; }
    double contraction() const { return lambda_; }
    double contraction_constant() const { return c_lambda_; }

    bool is_fuchsian() const {
        for (const auto& g : gens_)
            for (cplx e : {g.a, g.b, g.c, g.d})
                if (std::abs(e.imag()) > 1e-10) return false;
        return true;
    }

    // Letter whose image half-ball contains p, or -1 when p lies in the closed
    // fundamental domain. Points within 1e-12 of a hemisphere are nudged by +1e-12
    // in the real direction before deciding.
    int covering_letter(const H3Point& p) const {
        for (int code = 0; code < letters(); ++code) {
            const Disk& D = disks_[code];
            double r2 = D.radius * D.radius;
            double lhs = std::norm(p.z - D.center) + p.t * p.t;
            if (std::abs(lhs - r2) <= 1e-12 * r2) {
                tie_count().fetch_add(1, std::memory_order_relaxed);
                lhs = std::norm(p.z + 1e-12 - D.center) + p.t * p.t;
            }
            if (lhs < r2) return code;
        }
        return -1;
    }

    static std::atomic<long long>& tie_count() {
        static std::atomic<long long> n{0};
        return n;
    }

private:
    void check_ping_pong() const {
        for (int i = 0; i < rank(); ++i) {
            const Mobius& g = gens_[2 * i];
            const DiskPair& p = pairs_[i];
            for (int k = 0; k < 64; ++k) {
                cplx e = std::polar(1.0, 2.0 * M_PI * k / 64.0);
                cplx on = apply_boundary(g, BoundaryPoint::finite(p.from.center + p.from.radius * e)).z;
                if (std::abs(std::abs(on - p.to.center) - p.to.radius) > 1e-9 * (1.0 + p.to.radius))
                    throw NumericalError("PingPongViolation", "generator does not pair the boundary circles");
                cplx out = apply_boundary(g, BoundaryPoint::finite(p.from.center + 2.0 * p.from.radius * e)).z;
                if (!p.to.contains(out))
                    throw NumericalError("PingPongViolation", "exterior is not mapped into the paired disk");
            }
        }
    }

    // Largest ratio radius(child)/radius(parent) of nested disk images up to depth 4.
    void estimate_contraction() {
        double worst = 0.0;
        double top = 0.0;
        for (const auto& D : disks_) top = std::max(top, 2.0 * D.radius);
        struct Node { Mobius g; int last; double r; int depth; };
        std::vector<Node> stack;
        for (int l = 0; l < letters(); ++l) stack.push_back({gens_[l], l, disks_[l].radius, 1});
        while (!stack.empty()) {
            Node nd = stack.back();
            stack.pop_back();
            if (nd.depth >= 4) continue;
            for (int l = 0; l < letters(); ++l) {
                if (l == letter_inverse(nd.last)) continue;
                Disk child = image_disk(nd.g, disks_[l]);
                worst = std::max(worst, child.radius / nd.r);
                stack.push_back({nd.g * gens_[l], l, child.radius, nd.depth + 1});
            }
        }
        lambda_ = worst;
        c_lambda_ = top / worst;
    }

    std::vector<DiskPair> pairs_;
    std::vector<Disk> disks_;
    std::vector<Mobius> gens_;
    double lambda_ = 0.0;
    double c_lambda_ = 0.0;
};

struct Word {
    std::vector<int> letters;  // signed indices
    Mobius element;
    double displacement = 0.0;
};

// View handed to enumeration visitors. Letters are internal codes.
struct WordNode {
    int level = 0;
    const int* codes = nullptr;
    Mobius element;
    double displacement = 0.0;
    Disk nested;  // gamma_{k-1}(disk of last letter); unset for the identity

    Word to_word() const {
        Word w;
        for (int i = 0; i < level; ++i) w.letters.push_back(signed_letter(codes[i]));
        w.element = element;
        w.displacement = displacement;
        return w;
    }
};

// Depth-first enumeration of every reduced word of length <= max_len, identity first.
// The visitor returns false to prune the subtree below the node it was given.
template <class Visitor>
void for_each_word(const SchottkyGroup& G, int max_len, Visitor&& visit) {
    std::vector<int> codes(static_cast<size_t>(std::max(max_len, 1)));
    WordNode root;
    root.level = 0;
    root.codes = codes.data();
    root.element = Mobius::identity();
    root.displacement = 0.0;
    if (!visit(static_cast<const WordNode&>(root)) || max_len == 0) return;

    struct Frame { Mobius parent; int level; int next; };
    std::vector<Frame> stack;
    stack.push_back({Mobius::identity(), 0, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next >= G.letters()) {
            stack.pop_back();
            continue;
        }
        int l = f.next++;
        if (f.level > 0 && l == letter_inverse(codes[f.level - 1])) continue;
        codes[f.level] = l;
        WordNode nd;
        nd.level = f.level + 1;
        nd.codes = codes.data();
        nd.element = f.parent * G.generator(l);
        nd.displacement = displacement(nd.element);
        nd.nested = f.level == 0 ? G.disk_of(l) : image_disk(f.parent, G.disk_of(l));
        bool descend = visit(static_cast<const WordNode&>(nd));
        if (descend && nd.level < max_len) {
            Mobius el = nd.element;
            int lev = nd.level;
            stack.push_back({el, lev, 0});
        }
    }
}

inline std::vector<Word> enumerate_words(const SchottkyGroup& G, int max_len) {
    std::vector<Word> out;
    for_each_word(G, max_len, [&](const WordNode& nd) {
        out.push_back(nd.to_word());
        return true;
    });
    return out;
}

inline long long word_count(int rank, int max_len) {
    long long total = 1, level = 2 * rank;
    for (int k = 1; k <= max_len; ++k) {
        total += level;
        level *= 2 * rank - 1;
    }
    return total;
}

inline Mobius word_element(const SchottkyGroup& G, const std::vector<int>& signed_letters) {
    Mobius g;
    for (int s : signed_letters) g = g * G.generator(letter_code(s));
    return g.normalize();
}

inline Disk nested_disk(const SchottkyGroup& G, const std::vector<int>& signed_letters) {
    if (signed_letters.empty()) throw ConfigError("EmptyWord", "the identity has no nested disk");
    Mobius g;
    for (size_t i = 0; i + 1 < signed_letters.size(); ++i) g = g * G.generator(letter_code(signed_letters[i]));
    return image_disk(g, G.disk_of(letter_code(signed_letters.back())));
}

struct Reduction {
    Mobius rep;
    std::vector<int> word;  // signed letters of gamma with g = gamma * rep
};

// Pushes g o into the closed fundamental domain by peeling one generator at a time.
inline Reduction reduce(const SchottkyGroup& G, const Mobius& g, int budget = 10000) {
    Reduction out;
    Mobius rep = g;
    for (int it = 0;; ++it) {
        int code = G.covering_letter(apply_h3(rep, origin()));
        if (code < 0) break;
        if (it >= budget) throw NumericalError("IterationBudgetExceeded", "reduction did not terminate");
        rep = G.generator(letter_inverse(code)) * rep;
        out.word.push_back(signed_letter(code));
    }
    out.rep = rep.normalize();
    return out;
}

inline std::vector<int> random_reduced_word(const SchottkyGroup& G, int depth, Rng& rng) {
    std::vector<int> codes;
    for (int k = 0; k < depth; ++k) {
        int l;
        if (k == 0) {
            l = static_cast<int>(rng.below(G.letters()));
        } else {
            l = static_cast<int>(rng.below(G.letters() - 1));
            if (l >= letter_inverse(codes.back())) ++l;
        }
        codes.push_back(l);
    }
    std::vector<int> out;
    for (int c : codes) out.push_back(signed_letter(c));
    return out;
}

// Centres of nested disks of random reduced words of the given length.
inline std::vector<BoundaryPoint> sample_limit_set(const SchottkyGroup& G, int depth, int count, std::uint64_t seed) {
    if (depth < 1) throw ConfigError("InvalidDepth", "depth must be at least 1");
    std::vector<BoundaryPoint> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        out.push_back(BoundaryPoint::finite(nested_disk(G, random_reduced_word(G, depth, rng)).center));
    }
    return out;
}

// ---- structured-text table -------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline constexpr const char* kTableHeader = "center1_re,center1_im,radius1,center2_re,center2_im,radius2";

// The twist column is written only when some pair carries a twist.
inline std::string group_table(const SchottkyGroup& G) {
    bool twisted = std::any_of(G.pairs().begin(), G.pairs().end(), [](const DiskPair& p) { return p.twist != 0.0; });
    std::ostringstream os;
    os << kTableHeader << (twisted ? ",twist\n" : "\n");
    for (const auto& p : G.pairs()) {
        os << format_double(p.from.center.real()) << ',' << format_double(p.from.center.imag()) << ','
           << format_double(p.from.radius) << ',' << format_double(p.to.center.real()) << ','
           << format_double(p.to.center.imag()) << ',' << format_double(p.to.radius);
        if (twisted) os << ',' << format_double(p.twist);
        os << '\n';
    }
    return os.str();
}

inline double parse_decimal(const std::string& field, int line, int column) {
    const char* begin = field.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
    if (end == begin || *end != '\0' || !std::isfinite(v))
        throw ConfigError("ParseError", "line " + std::to_string(line) + ", field " + std::to_string(column) +
                                            ": not a decimal number: '" + field + "'");
    return v;
}

inline std::vector<DiskPair> parse_group_table(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<DiskPair> pairs;
    int lineno = 0;
    bool header = false;
    size_t columns = 6;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line == std::string(kTableHeader) + ",twist")
                columns = 7;
            else if (line != kTableHeader)
                throw ConfigError("ParseError", "line " + std::to_string(lineno) + ": unexpected header");
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != columns)
            throw ConfigError("ParseError", "line " + std::to_string(lineno) + ": expected " +
                                                std::to_string(columns) + " fields, got " + std::to_string(f.size()));
        double v[7] = {0, 0, 0, 0, 0, 0, 0};
        for (size_t k = 0; k < columns; ++k) v[k] = parse_decimal(f[k], lineno, static_cast<int>(k) + 1);
        pairs.push_back({{cplx(v[0], v[1]), v[2]}, {cplx(v[3], v[4]), v[5]}, v[6]});
    }
    if (!header) throw ConfigError("ParseError", "missing header line");
    return pairs;
}

inline std::uint64_t group_hash(const SchottkyGroup& G) { return fnv1a(group_table(G)); }

} // namespace kleinlab
