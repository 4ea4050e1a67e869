#include "psra/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "psra/kernels.hpp"
#include "psra/rng.hpp"

namespace psra::geometry {

namespace {

constexpr double kGrid = 1073741824.0;  // 2^30; see normalize()

double snap(double v) { return std::round(v * kGrid) / kGrid; }

// Center, scale to the unit sphere, snap to the 2^-30 grid. On the grid,
// center-relative subtraction and re-addition are exact, which makes the
// grouping round trip bitwise.
void normalize(Array& pts, CloudMeta& meta) {
    const std::size_t n = pts.shape[0];
    double c[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < 3; ++d) c[d] += pts.data[i * 3 + d];
    for (double& v : c) v /= static_cast<double>(n);
    double maxr2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r2 = 0.0;
        for (std::size_t d = 0; d < 3; ++d) {
            const double x = pts.data[i * 3 + d] - c[d];
            r2 += x * x;
        }
        maxr2 = std::max(maxr2, r2);
    }
    const double s = maxr2 > 0.0 ? std::sqrt(maxr2) : 1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < 3; ++d)
            pts.data[i * 3 + d] = snap((pts.data[i * 3 + d] - c[d]) / s);
    meta.scale = s;
    for (std::size_t d = 0; d < 3; ++d) meta.centroid[d] = c[d];
}

void jitter(double* p, Rng& rng, double amp) {
    for (int d = 0; d < 3; ++d) p[d] += rng.uniform(-amp, amp);
}

Array raw_sphere(std::size_t n, Rng& rng) {
    Array pts{Shape{n, 3}};
    for (std::size_t i = 0; i < n; ++i) {
        double v[3], r2 = 0.0;
        do {
            r2 = 0.0;
            for (int d = 0; d < 3; ++d) {
                v[d] = rng.normal();
                r2 += v[d] * v[d];
            }
        } while (r2 < 1e-12);
        const double inv = 1.0 / std::sqrt(r2);
        for (int d = 0; d < 3; ++d) v[d] *= inv;
        jitter(v, rng, 0.006);
        for (int d = 0; d < 3; ++d) pts.data[i * 3 + d] = v[d];
    }
    return pts;
}

void rotate_z(double* p, double c, double s) {
    const double x = p[0], y = p[1];
    p[0] = c * x - s * y;
    p[1] = s * x + c * y;
}

Array raw_cube(std::size_t n, Rng& rng) {
    Array pts{Shape{n, 3}};
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t face = rng.index(6);
        double v[3];
        v[0] = rng.uniform(-1.0, 1.0);
        v[1] = rng.uniform(-1.0, 1.0);
        v[2] = (face & 1) ? 1.0 : -1.0;
        std::swap(v[2], v[face / 2]);
        jitter(v, rng, 0.01);
        rotate_z(v, ca, sa);
        for (int d = 0; d < 3; ++d) pts.data[i * 3 + d] = v[d];
    }
    return pts;
}

Array raw_cylinder(std::size_t n, Rng& rng) {
    Array pts{Shape{n, 3}};
    const double h = rng.uniform(1.6, 2.4);  // per-seed aspect variation
    for (std::size_t i = 0; i < n; ++i) {
        double v[3];
        const double a = rng.uniform(0.0, 6.283185307179586);
        if (rng.uniform() < 2.0 * h / (2.0 * h + 2.0)) {  // lateral vs caps by area
            v[0] = std::cos(a);
            v[1] = std::sin(a);
            v[2] = rng.uniform(-0.5 * h, 0.5 * h);
        } else {
            const double r = std::sqrt(rng.uniform());
            v[0] = r * std::cos(a);
            v[1] = r * std::sin(a);
            v[2] = rng.uniform() < 0.5 ? -0.5 * h : 0.5 * h;
        }
        jitter(v, rng, 0.01);
        for (int d = 0; d < 3; ++d) pts.data[i * 3 + d] = v[d];
    }
    return pts;
}

// Table top plus two legs. Mode 0: vertical legs under the top edges.
// Mode 1: legs splayed outward. The top is large enough that the maximal
// radius (and hence the normalization) is set by its corners in both modes,
// keeping the visible region statistically identical across modes.
Array raw_table(std::size_t n, Rng& rng, int mode) {
    Array pts{Shape{n, 3}};
    const std::size_t n_top = (n * 3) / 5;
    const std::size_t n_leg = (n - n_top) / 2;
    std::size_t i = 0;
    for (; i < n - 2 * n_leg; ++i) {
        double v[3] = {rng.uniform(-0.8, 0.8), rng.uniform(-0.5, 0.5), rng.uniform(0.5, 0.6)};
        for (int d = 0; d < 3; ++d) pts.data[i * 3 + d] = v[d];
    }
    for (int leg = 0; leg < 2; ++leg) {
        const double sign = leg == 0 ? 1.0 : -1.0;
        const double x_top = sign * 0.4;
        const double x_foot = mode == 0 ? sign * 0.4 : sign * 0.7;
        for (std::size_t j = 0; j < n_leg; ++j, ++i) {
            const double s = rng.uniform();
            double v[3];
            v[0] = x_top + s * (x_foot - x_top) + rng.uniform(-0.04, 0.04);
            v[1] = rng.uniform(-0.04, 0.04);
            v[2] = 0.5 + s * (-0.6 - 0.5);
            for (int d = 0; d < 3; ++d) pts.data[i * 3 + d] = v[d];
        }
    }
    return pts;
}

PointCloud finish(Array pts, Family family, std::uint64_t seed, int mode) {
    PointCloud cloud;
    cloud.meta.family = family;
    cloud.meta.seed = seed;
    cloud.meta.mode = mode;
    normalize(pts, cloud.meta);
    cloud.points = std::move(pts);
    cloud.label = static_cast<std::uint16_t>(family);
    return cloud;
}

}  // namespace

Family family_from_name(const std::string& name) {
    if (name == "sphere") return Family::Sphere;
    if (name == "cube") return Family::Cube;
    if (name == "cylinder") return Family::Cylinder;
    if (name == "two_leg_table") return Family::TwoLegTable;
    throw EngineError("unknown shape family: " + name);
}

const char* family_name(Family f) {
    switch (f) {
    case Family::Sphere: return "sphere";
    case Family::Cube: return "cube";
    case Family::Cylinder: return "cylinder";
    case Family::TwoLegTable: return "two_leg_table";
    }
    return "?";
}

PointCloud generate_shape(Family family, std::size_t n_points, std::uint64_t seed) {
    if (n_points < 32)
        throw EngineError("generate_shape: n_points must be >= 32, got " +
                          std::to_string(n_points));
    Rng rng = Rng::split(seed, static_cast<std::uint64_t>(family) + 1000);
    switch (family) {
    case Family::Sphere: return finish(raw_sphere(n_points, rng), family, seed, 0);
    case Family::Cube: return finish(raw_cube(n_points, rng), family, seed, 0);
    case Family::Cylinder: return finish(raw_cylinder(n_points, rng), family, seed, 0);
    case Family::TwoLegTable: {
        const int mode = static_cast<int>(mix64(seed ^ 0xab1eULL) & 1);
        return finish(raw_table(n_points, rng, mode), family, seed, mode);
    }
    }
    throw EngineError("unknown shape family enum");
}

PointCloud generate_two_leg_table(std::size_t n_points, std::uint64_t seed, int mode) {
    if (n_points < 32)
        throw EngineError("generate_two_leg_table: n_points must be >= 32");
    Rng rng = Rng::split(seed, static_cast<std::uint64_t>(Family::TwoLegTable) + 1000);
    return finish(raw_table(n_points, rng, mode), Family::TwoLegTable, seed, mode);
}

std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t g, std::size_t start) {
    const std::size_t n = cloud.size();
    if (g < 1 || g > n)
        throw EngineError("fps: g=" + std::to_string(g) + " out of range for N=" +
                          std::to_string(n));
    if (start >= n) throw EngineError("fps: start index out of range");

    const double* p = cloud.points.data.data();
    std::vector<std::size_t> picked;
    picked.reserve(g);
    picked.push_back(start);
    std::vector<double> min_d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t d = 0; d < 3; ++d) {
            const double x = p[i * 3 + d] - p[start * 3 + d];
            s += x * x;
        }
        min_d2[i] = s;
    }
    while (picked.size() < g) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i)
            if (min_d2[i] > best_d) {  // strict: ties keep the lowest index
                best_d = min_d2[i];
                best = i;
            }
        picked.push_back(best);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double x = p[i * 3 + d] - p[best * 3 + d];
                s += x * x;
            }
            min_d2[i] = std::min(min_d2[i], s);
        }
    }
    return picked;
}

Array GroupedCloud::group_rel(std::size_t g) const {
    const std::size_t k = group_size();
    Array out{Shape{k, 3}};
    std::copy_n(groups.data.data() + g * k * 3, k * 3, out.data.data());
    return out;
}

GroupedCloud group(const PointCloud& cloud, const std::vector<std::size_t>& centers,
                   std::size_t k) {
    const std::size_t n = cloud.size();
    if (k > n) throw EngineError("group: k=" + std::to_string(k) + " exceeds N=" +
                                 std::to_string(n));
    const std::size_t g = centers.size();
    const double* p = cloud.points.data.data();

    GroupedCloud out;
    out.centers = Array{Shape{g, 3}};
    out.groups = Array{Shape{g, k, 3}};
    out.center_indices = centers;

    std::vector<double> d2(n);
    std::vector<std::size_t> order(n);
    for (std::size_t gi = 0; gi < g; ++gi) {
        const std::size_t c = centers[gi];
        if (c >= n) throw EngineError("group: center index out of range");
        kernels::serial::pairwise_sqdist(p + c * 3, 1, p, n, 3, d2.data());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              if (d2[a] != d2[b]) return d2[a] < d2[b];
                              return a < b;
                          });
        for (std::size_t d = 0; d < 3; ++d)
            out.centers.data[gi * 3 + d] = p[c * 3 + d];
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t d = 0; d < 3; ++d)
                out.groups.data[(gi * k + j) * 3 + d] =
                    p[order[j] * 3 + d] - p[c * 3 + d];
    }
    return out;
}

MaskSpec make_mask(std::size_t g, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0)
        throw EngineError("make_mask: ratio must lie in [0,1], got " + std::to_string(ratio));
    // floor of the real product; the nudge keeps exact-integer products from
    // rounding down through the float representation
    const auto m = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(g) + 1e-9));
    MaskSpec spec;
    spec.ratio = ratio;
    spec.seed = seed;
    spec.masked.assign(g, 0);
    std::vector<std::size_t> idx(g);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = Rng::split(seed, 0x6d61736bULL);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + rng.index(g - i);
        std::swap(idx[i], idx[j]);
        spec.masked[idx[i]] = 1;
    }
    return spec;
}

std::size_t MaskSpec::masked_count() const {
    std::size_t c = 0;
    for (char m : masked) c += m != 0;
    return c;
}

std::vector<std::size_t> MaskSpec::masked_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
        if (masked[i]) out.push_back(i);
    return out;
}

std::vector<std::size_t> MaskSpec::visible_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
        if (!masked[i]) out.push_back(i);
    return out;
}

namespace {

std::vector<std::size_t> argmin_rows(const Array& p, const Array& q) {
    const std::size_t np = p.shape[0], nq = q.shape[0];
    std::vector<double> d2(np * nq);
    kernels::pairwise_sqdist(p.data.data(), np, q.data.data(), nq, 3, d2.data());
    std::vector<std::size_t> out(np);
    for (std::size_t i = 0; i < np; ++i) {
        const double* row = d2.data() + i * nq;
        std::size_t best = 0;
        for (std::size_t j = 1; j < nq; ++j)
            if (row[j] < row[best]) best = j;
        out[i] = best;
    }
    return out;
}

}  // namespace

TracedValue chamfer(const TracedValue& p, const TracedValue& q) {
    if (p.val.rank() != 2 || q.val.rank() != 2 || p.val.cols() != 3 || q.val.cols() != 3)
        throw EngineError("chamfer: expected [N,3] point sets, got " + shape_str(p.shape()) +
                          " and " + shape_str(q.shape()));
    if (p.shape()[0] == 0 || q.shape()[0] == 0)
        throw EngineError("chamfer: empty point set");
    // nearest-neighbor indices are fixed from the values; the selected
    // squared distances stay differentiable
    auto jp = argmin_rows(p.val, q.val);
    auto jq = argmin_rows(q.val, p.val);
    TracedValue dpq = sub(p, take_rows(q, std::move(jp)));
    TracedValue dqp = sub(q, take_rows(p, std::move(jq)));
    TracedValue t1 = mean_all(sum_axis(mul(dpq, dpq), 1));
    TracedValue t2 = mean_all(sum_axis(mul(dqp, dqp), 1));
    return add(t1, t2);
}

double chamfer_value(const Array& p, const Array& q) {
    if (p.shape[0] == 0 || q.shape[0] == 0) throw EngineError("chamfer: empty point set");
    const std::size_t np = p.shape[0], nq = q.shape[0];
    std::vector<double> d2(np * nq);
    kernels::pairwise_sqdist(p.data.data(), np, q.data.data(), nq, 3, d2.data());
    double s1 = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
        const double* row = d2.data() + i * nq;
        double m = row[0];
        for (std::size_t j = 1; j < nq; ++j) m = std::min(m, row[j]);
        s1 += m;
    }
    double s2 = 0.0;
    for (std::size_t j = 0; j < nq; ++j) {
        double m = d2[j];
        for (std::size_t i = 1; i < np; ++i) m = std::min(m, d2[i * nq + j]);
        s2 += m;
    }
    return s1 / static_cast<double>(np) + s2 / static_cast<double>(nq);
}

}  // namespace psra::geometry
