// bsreg: command-line front end.
//
// Machine-readable output is one JSON object per line on stdout when --json
// is given (human text then goes to stderr). Every object carries a
// "record" field naming its schema; see README.md.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bsreg/analytic_penalty.hpp"
#include "bsreg/metrics.hpp"
#include "bsreg/numeric_penalty.hpp"
#include "bsreg/registration.hpp"
#include "bsreg/synthetic.hpp"
#include "bsreg/volume.hpp"

using namespace bsreg;
using nlohmann::json;

namespace {

// Bad input data (as opposed to bad flags).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::optional<int> threads;
    std::uint64_t seed = 1;
    bool json = false;
    std::string out;

    int thread_count() const
    {
        if (threads) return *threads;
        if (const char* env = std::getenv("BSREG_THREADS")) {
            try {
                return std::stoi(env);
            } catch (const std::exception&) {
                throw std::invalid_argument(std::string("BSREG_THREADS is not an integer: ") + env);
            }
        }
        return 1;
    }
};

class Report {
public:
    explicit Report(bool json) : json_(json) {}

    std::ostream& human() { return json_ ? std::cerr : std::cout; }
    void record(const json& j)
    {
        if (json_) std::cout << j.dump() << '\n' << std::flush;
    }

private:
    bool json_;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw std::invalid_argument("not a number: '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

// "8" -> {8, 8, 8}; "1,2,3" -> {1, 2, 3}.
Vec3 parse_vec3(const std::string& text)
{
    const auto v = parse_list(text);
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() != 3) throw std::invalid_argument("expected 1 or 3 values: '" + text + "'");
    return {v[0], v[1], v[2]};
}

Index3 parse_index3(const std::string& text)
{
    const Vec3 v = parse_vec3(text);
    Index3 out{};
    for (int d = 0; d < 3; ++d) {
        if (v[d] != std::floor(v[d]) || v[d] < 1) throw std::invalid_argument("expected positive integers: '" + text + "'");
        out[d] = static_cast<int>(v[d]);
    }
    return out;
}

RegularizerWeights parse_weights(const std::string& weights, const std::string& only)
{
    if (!only.empty()) return RegularizerWeights::only(parse_regularizer(only));
    const auto v = parse_list(weights);
    if (v.size() != 5) throw std::invalid_argument("--weights needs five values");
    RegularizerWeights w;
    std::copy(v.begin(), v.end(), w.mu.begin());
    w.validate();
    return w;
}

BoundaryPolicy parse_boundary(const std::string& s)
{
    if (s == "skip") return BoundaryPolicy::skip;
    if (s == "clamp") return BoundaryPolicy::clamp;
    throw std::invalid_argument("boundary must be skip or clamp");
}

std::vector<RegistrationStage> parse_stages(const std::string& text)
{
    // spacing:iterations:downsample, comma separated.
    std::vector<RegistrationStage> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        RegistrationStage st;
        double sp = 0.0;
        char c1 = 0, c2 = 0;
        std::istringstream is(item);
        if (!(is >> sp >> c1 >> st.max_iterations >> c2 >> st.downsample) || c1 != ':' || c2 != ':' || !is.eof())
            throw std::invalid_argument("stage must be spacing:iterations:downsample, got '" + item + "'");
        st.grid_spacing = {sp, sp, sp};
        out.push_back(st);
    }
    return out;
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
json idx_json(const Index3& v) { return json::array({v[0], v[1], v[2]}); }

json terms_json(const std::array<double, 5>& terms, const std::array<bool, 5>& evaluated)
{
    json j = json::object();
    for (int t = 0; t < 5; ++t) j[kRegularizerNames[t]] = evaluated[t] ? json(terms[t]) : json(nullptr);
    return j;
}

json weights_json(const RegularizerWeights& w)
{
    json j = json::object();
    for (int t = 0; t < 5; ++t) j[kRegularizerNames[t]] = w.mu[t];
    return j;
}

ControlPointGrid load_grid(const std::string& path) { return read_grid(path); }

LandmarkSet load_landmarks(const std::string& path, const Volume* voxel_reference)
{
    LandmarkSet s = read_landmarks(path);
    return voxel_reference ? voxel_to_physical(s, *voxel_reference) : s;
}

double percentile(std::vector<double> v, double p)
{
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = p * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------- penalty

struct PenaltyArgs {
    std::string grid, weights = "1,1,1,1,1", only, method = "analytic", boundary = "skip", voxel, dump_vbank;
    int samples = 16;
    bool normalize = false;
};

int cmd_penalty(const PenaltyArgs& a, const Common& c)
{
    Report rep(c.json);
    const ControlPointGrid grid = load_grid(a.grid);
    const RegularizerWeights w = parse_weights(a.weights, a.only);
    const int threads = c.thread_count();
    const auto& g = grid.geometry;

    std::array<double, 5> terms{};
    std::array<bool, 5> evaluated{};
    double value = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    if (a.method == "analytic") {
        const VMatrixBank bank(g.spacing());
        if (!a.dump_vbank.empty()) bank.write(a.dump_vbank);
        PenaltyOptions opt;
        opt.normalize_by_volume = a.normalize;
        opt.compute_gradient = !c.out.empty();
        const auto r = penalty_parallel(grid, w, bank, threads, opt);
        terms = r.terms;
        evaluated = r.evaluated;
        value = r.value;
        if (!c.out.empty()) {
            ControlPointGrid grad(g);
            grad.coefficients = r.gradient;
            write_grid(grad, c.out);
        }
    } else if (a.method == "numeric" || a.method == "quadrature") {
        if (!c.out.empty()) throw std::invalid_argument("gradient output needs --method analytic");
        PenaltyBreakdown r;
        if (a.method == "numeric") {
            const SamplingSpec spec = a.voxel.empty()
                                          ? SamplingSpec::per_tile_samples({a.samples, a.samples, a.samples},
                                                                           parse_boundary(a.boundary))
                                          : SamplingSpec::voxels(parse_vec3(a.voxel), parse_boundary(a.boundary));
            r = fd_penalty(grid, w, spec, threads);
        } else {
            r = quadrature_penalty(grid, w, {a.samples, a.samples, a.samples});
        }
        terms = r.terms;
        evaluated = r.evaluated;
        value = r.value;
        if (a.normalize) {
            const Vec3 e = g.extent();
            const double vol = e[0] * e[1] * e[2];
            for (double& t : terms) t /= vol;
            value /= vol;
        }
    } else {
        throw std::invalid_argument("--method must be analytic, numeric or quadrature");
    }
    const double secs = seconds_since(t0);

    auto& h = rep.human();
    h << "method " << a.method << ", " << g.tile_count() << " tiles, " << threads << " thread(s), " << secs << " s\n";
    for (int t = 0; t < 5; ++t) {
        h << "  S" << t + 1 << " " << std::left << std::setw(20) << kRegularizerNames[t];
        if (evaluated[t])
            h << std::setprecision(17) << terms[t] << "\n";
        else
            h << "-\n";
    }
    h << "  weighted total " << std::setprecision(17) << value << "\n";
    rep.record({{"record", "penalty"},
                {"method", a.method},
                {"tiles", idx_json(g.tiles())},
                {"spacing", vec_json(g.spacing())},
                {"weights", weights_json(w)},
                {"terms", terms_json(terms, evaluated)},
                {"value", value},
                {"normalized", a.normalize},
                {"threads", threads},
                {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- compare

struct SyntheticGridArgs {
    std::string grid;
    std::string dims = "128,128,64", extent = "240,240,180", tile_spacing = "30";
    double amplitude = 5.0, smoothness = 40.0;
};

// Either a grid file or a smooth synthetic field over the requested extent.
ControlPointGrid make_or_load(const SyntheticGridArgs& a, std::uint64_t seed)
{
    if (!a.grid.empty()) return load_grid(a.grid);
    const Vec3 extent = parse_vec3(a.extent);
    const Vec3 r = parse_vec3(a.tile_spacing);
    Index3 tiles{};
    for (int d = 0; d < 3; ++d) tiles[d] = std::max(1, static_cast<int>(std::ceil(extent[d] / r[d] - 1e-9)));
    return make_ground_truth_field(GridGeometry(tiles, r, {0, 0, 0}), a.amplitude, a.smoothness, seed, 0).field;
}

struct CompareArgs {
    SyntheticGridArgs src;
    std::string voxel, boundary = "skip", dump_vbank;
};

int cmd_compare(const CompareArgs& a, const Common& c)
{
    Report rep(c.json);
    const ControlPointGrid grid = make_or_load(a.src, c.seed);
    const auto& g = grid.geometry;
    Vec3 voxel{1, 1, 1};
    if (!a.voxel.empty()) {
        voxel = parse_vec3(a.voxel);
    } else if (a.src.grid.empty()) {
        const Vec3 e = parse_vec3(a.src.extent);
        const Index3 n = parse_index3(a.src.dims);
        for (int d = 0; d < 3; ++d) voxel[d] = e[d] / n[d];
    }
    const int threads = c.thread_count();
    const VMatrixBank bank(g.spacing());
    if (!a.dump_vbank.empty()) bank.write(a.dump_vbank);
    const auto spec = SamplingSpec::voxels(voxel, parse_boundary(a.boundary));
    const Volume lattice = sample_lattice(g, spec, 1);

    auto& h = rep.human();
    h << g.tiles()[0] << "x" << g.tiles()[1] << "x" << g.tiles()[2] << " tiles of " << g.spacing()[0] << " mm, "
      << lattice.dims()[0] << "x" << lattice.dims()[1] << "x" << lattice.dims()[2] << " samples\n";
    h << "  " << std::left << std::setw(20) << "regularizer" << std::setw(16) << "analytic" << std::setw(16)
      << "numeric" << std::setw(10) << "diff %" << "speedup\n";
    for (int t = 0; t < 5; ++t) {
        const auto w = RegularizerWeights::only(static_cast<Regularizer>(t));
        PenaltyOptions opt;
        opt.compute_gradient = false;
        auto t0 = std::chrono::steady_clock::now();
        const auto an = penalty_parallel(grid, w, bank, threads, opt);
        const double ta = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        const auto nu = fd_penalty(grid, w, spec, threads);
        const double tn = seconds_since(t0);
        const double exact = an.terms[t];
        const double rel = exact != 0.0 ? (nu.terms[t] - exact) / exact : 0.0;
        h << "  " << std::left << std::setw(20) << kRegularizerNames[t] << std::setw(16) << std::setprecision(8)
          << exact << std::setw(16) << nu.terms[t] << std::setw(10) << std::setprecision(3) << 100 * rel
          << std::setprecision(4) << tn / ta << "x\n";
        rep.record({{"record", "compare"},
                    {"regularizer", kRegularizerNames[t]},
                    {"term", "S" + std::to_string(t + 1)},
                    {"analytic", exact},
                    {"numeric", nu.terms[t]},
                    {"rel_diff", rel},
                    {"analytic_seconds", ta},
                    {"numeric_seconds", tn},
                    {"tiles", idx_json(g.tiles())},
                    {"spacing", vec_json(g.spacing())},
                    {"samples", idx_json(lattice.dims())},
                    {"boundary", a.boundary},
                    {"threads", threads}});
    }
    return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string dims = "128", voxel = "1", tile_voxels = "16", density = "1", thread_list, regularizers = "all";
    int repeats = 20;
    int warmup = 1;
};

struct Timing {
    std::vector<double> runs;
    double min = 0.0, mean = 0.0;
};

template <class F>
Timing time_runs(F&& f, int warmup, int repeats)
{
    for (int i = 0; i < warmup; ++i) f();
    Timing t;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        t.runs.push_back(seconds_since(t0));
    }
    t.min = *std::min_element(t.runs.begin(), t.runs.end());
    for (double v : t.runs) t.mean += v;
    t.mean /= t.runs.size();
    return t;
}

int cmd_bench(const BenchArgs& a, const Common& c)
{
    if (a.repeats < 3) throw std::invalid_argument("--repeats must be at least 3");
    if (a.warmup < 0) throw std::invalid_argument("--warmup must be >= 0");
    Report rep(c.json);
    const Index3 dims = parse_index3(a.dims);
    const Vec3 voxel = parse_vec3(a.voxel);
    std::vector<int> threads;
    if (a.thread_list.empty())
        threads.push_back(c.thread_count());
    else
        for (double v : parse_list(a.thread_list)) threads.push_back(static_cast<int>(v));
    std::vector<int> regs;
    if (a.regularizers == "all") {
        regs = {0, 1, 2, 3, 4};
    } else {
        std::stringstream ss(a.regularizers);
        std::string item;
        while (std::getline(ss, item, ',')) regs.push_back(static_cast<int>(parse_regularizer(item)));
    }

    auto& h = rep.human();
    for (double tv : parse_list(a.tile_voxels)) {
        // Grid of tv-voxel tiles covering the base volume.
        Vec3 r{};
        Index3 tiles{};
        for (int d = 0; d < 3; ++d) {
            r[d] = tv * voxel[d];
            tiles[d] = std::max(1, static_cast<int>(std::ceil(dims[d] / tv - 1e-9)));
        }
        const GridGeometry g(tiles, r, {0, 0, 0});
        const ControlPointGrid grid = random_grid(g, 1.0, c.seed);
        const VMatrixBank bank(g.spacing());
        for (double dens : parse_list(a.density)) {
            if (!(dens > 0)) throw std::invalid_argument("density factors must be positive");
            // dens multiplies the total voxel count.
            const double f = std::cbrt(dens);
            const auto spec = SamplingSpec::voxels({voxel[0] / f, voxel[1] / f, voxel[2] / f});
            const Index3 n = sample_lattice(g, spec, 1).dims();
            for (int th : threads) {
                for (int t : regs) {
                    const auto w = RegularizerWeights::only(static_cast<Regularizer>(t));
                    const Timing an = time_runs([&] { (void)penalty_parallel(grid, w, bank, th); }, a.warmup, a.repeats);
                    const Timing nu = time_runs([&] { (void)fd_penalty(grid, w, spec, th); }, a.warmup, a.repeats);
                    h << kRegularizerNames[t] << ": " << tiles[0] << "x" << tiles[1] << "x" << tiles[2] << " tiles, "
                      << n[0] << "x" << n[1] << "x" << n[2] << " voxels, " << th << " thread(s): analytic "
                      << an.min * 1e3 << " ms, numeric " << nu.min * 1e3 << " ms, speedup " << nu.min / an.min
                      << "x\n";
                    rep.record({{"record", "bench"},
                                {"regularizer", kRegularizerNames[t]},
                                {"tiles", idx_json(tiles)},
                                {"tile_count", g.tile_count()},
                                {"grid_spacing", vec_json(r)},
                                {"voxels", idx_json(n)},
                                {"voxel_count", static_cast<double>(n[0]) * n[1] * n[2]},
                                {"threads", th},
                                {"repeats", a.repeats},
                                {"analytic_times", an.runs},
                                {"numeric_times", nu.runs},
                                {"analytic_min", an.min},
                                {"analytic_mean", an.mean},
                                {"numeric_min", nu.min},
                                {"numeric_mean", nu.mean},
                                {"speedup_min", nu.min / an.min},
                                {"speedup_mean", nu.mean / an.mean}});
                }
            }
        }
    }
    return 0;
}

// ---------------------------------------------------------------- register

struct RegisterArgs {
    std::string fixed, moving, stages = "16:50:2,8:50:1", weights = "0,0.01,0,0,0", only, sweep,
                                sweep_regularizer = "curvature", fixed_landmarks, moving_landmarks, warped;
    bool landmarks_voxel = false;
    int history = 10;
    double grad_tol = 1e-6, step_tol = 1e-6;
};

std::string indexed_path(const std::string& path, std::size_t i, std::size_t n)
{
    if (n == 1 || path.empty()) return path;
    const auto dot = path.find_last_of('.');
    const std::string tag = "_" + std::to_string(i);
    return dot == std::string::npos || dot < path.find_last_of('/') + 1 ? path + tag
                                                                         : path.substr(0, dot) + tag + path.substr(dot);
}

int cmd_register(const RegisterArgs& a, const Common& c)
{
    Report rep(c.json);
    const Volume fixed = read_volume(a.fixed);
    const Volume moving = read_volume(a.moving);
    if (fixed.components() != 1 || moving.components() != 1) throw DataError("images must be scalar volumes");

    RegistrationConfig cfg;
    cfg.stages = parse_stages(a.stages);
    cfg.weights = parse_weights(a.weights, a.only);
    cfg.optimizer.history_size = a.history;
    cfg.optimizer.gradient_tolerance = a.grad_tol;
    cfg.optimizer.step_tolerance = a.step_tol;
    cfg.threads = c.thread_count();
    cfg.validate();

    std::optional<LandmarkSet> lf, lm;
    if (a.fixed_landmarks.empty() != a.moving_landmarks.empty())
        throw std::invalid_argument("give both --fixed-landmarks and --moving-landmarks");
    if (!a.fixed_landmarks.empty()) {
        lf = load_landmarks(a.fixed_landmarks, a.landmarks_voxel ? &fixed : nullptr);
        lm = load_landmarks(a.moving_landmarks, a.landmarks_voxel ? &moving : nullptr);
        if (lf->size() != lm->size()) throw DataError("landmark files have different counts");
    }

    std::vector<RegularizerWeights> runs;
    if (a.sweep.empty()) {
        runs.push_back(cfg.weights);
    } else {
        const Regularizer r = parse_regularizer(a.sweep_regularizer);
        for (double mu : parse_list(a.sweep)) {
            RegularizerWeights w = cfg.weights;
            w.mu[static_cast<int>(r)] = mu;
            w.validate();
            runs.push_back(w);
        }
    }

    auto& h = rep.human();
    for (std::size_t run = 0; run < runs.size(); ++run) {
        cfg.weights = runs[run];
        const auto t0 = std::chrono::steady_clock::now();
        const RegistrationResult res = optimize(fixed, moving, cfg);
        const double secs = seconds_since(t0);

        json stages = json::array();
        for (std::size_t s = 0; s < res.stages.size(); ++s) {
            const auto& st = res.stages[s];
            stages.push_back({{"stage", s},
                              {"tiles", idx_json(st.geometry.tiles())},
                              {"spacing", vec_json(st.geometry.spacing())},
                              {"iterations", st.iterations},
                              {"evaluations", st.evaluations},
                              {"stop_reason", st.stop_reason},
                              {"initial_cost", st.initial_cost},
                              {"final_cost", st.final_cost}});
        }
        const auto& last = res.stages.back();
        const double min_j = jacobian_map(res.grid, fixed).min;
        json row = {{"record", "register"},
                    {"run", run},
                    {"weights", weights_json(cfg.weights)},
                    {"final_mse", last.final_mse},
                    {"final_penalty", last.final_penalty},
                    {"final_cost", last.final_cost},
                    {"min_jacobian", min_j},
                    {"stages", stages},
                    {"threads", cfg.threads},
                    {"seconds", secs}};
        h << "run " << run << ": mse " << last.final_mse << ", penalty " << last.final_penalty << ", min J " << min_j;
        if (lf) {
            const double before = mls(*lf, *lm);
            const auto after = registration_mls(res.grid, *lf, *lm);
            row["mls_before"] = before;
            row["mls_after"] = after.mls;
            row["landmarks_used"] = after.used;
            row["landmarks_excluded"] = after.excluded;
            h << ", MLS " << before << " -> " << after.mls;
        }
        h << " (" << secs << " s)\n";

        const std::string grid_path = indexed_path(c.out, run, runs.size());
        const std::string warped_path = indexed_path(a.warped, run, runs.size());
        if (!grid_path.empty()) {
            write_grid(res.grid, grid_path);
            row["grid_path"] = grid_path;
        }
        if (!warped_path.empty()) {
            write_volume(warp_volume(moving, res.grid, fixed, 0.0), warped_path);
            row["warped_path"] = warped_path;
        }
        rep.record(row);
    }
    return 0;
}

// ---------------------------------------------------------------- metrics

struct MetricsArgs {
    std::string grid, reference, fixed_landmarks, moving_landmarks;
    int samples = 4;
    bool landmarks_voxel = false;
};

int cmd_metrics(const MetricsArgs& a, const Common& c)
{
    Report rep(c.json);
    const ControlPointGrid grid = load_grid(a.grid);
    std::optional<Volume> ref;
    if (!a.reference.empty()) ref = read_volume(a.reference);
    if (a.landmarks_voxel && !ref) throw std::invalid_argument("--landmarks-voxel needs --reference");

    json row = {{"record", "metrics"}};
    auto& h = rep.human();
    const auto jm = ref ? jacobian_map(grid, *ref)
                        : jacobian_map(grid, SamplingSpec::per_tile_samples({a.samples, a.samples, a.samples}));
    row["min_jacobian"] = jm.min;
    std::size_t folded = 0;
    for (double v : jm.map.data()) folded += v <= 0.0;
    row["folded_samples"] = folded;
    row["jacobian_samples"] = jm.map.voxel_count();
    h << "min Jacobian " << jm.min << " (" << folded << " of " << jm.map.voxel_count() << " samples <= 0)\n";

    if (a.fixed_landmarks.empty() != a.moving_landmarks.empty())
        throw std::invalid_argument("give both --fixed-landmarks and --moving-landmarks");
    if (!a.fixed_landmarks.empty()) {
        const LandmarkSet lf = load_landmarks(a.fixed_landmarks, a.landmarks_voxel ? &*ref : nullptr);
        const LandmarkSet lm = load_landmarks(a.moving_landmarks, a.landmarks_voxel ? &*ref : nullptr);
        if (lf.size() != lm.size())
            throw DataError("landmark files have different counts (" + std::to_string(lf.size()) + " vs " +
                            std::to_string(lm.size()) + ")");
        const auto w = warp_landmarks(grid, lf);
        std::vector<double> err;
        std::size_t k = 0;
        for (std::size_t i = 0; i < lf.size(); ++i) {
            if (k < w.outside.size() && w.outside[k] == i) {
                ++k;
                continue;
            }
            double s = 0.0;
            for (int d = 0; d < 3; ++d) s += std::pow(w.warped.points[i][d] - lm.points[i][d], 2);
            err.push_back(std::sqrt(s));
        }
        const auto rr = registration_mls(grid, lf, lm);
        row["mls_before"] = mls(lf, lm);
        row["mls_after"] = rr.mls;
        row["landmarks_used"] = rr.used;
        row["landmarks_excluded"] = rr.excluded;
        row["error_p50"] = percentile(err, 0.5);
        row["error_p90"] = percentile(err, 0.9);
        row["error_max"] = err.empty() ? 0.0 : *std::max_element(err.begin(), err.end());
        h << "MLS " << row["mls_before"].get<double>() << " -> " << rr.mls << " over " << rr.used << " landmarks ("
          << rr.excluded << " excluded)\n";
    }
    rep.record(row);
    return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string kind = "blobs", dims = "64", spacing = "2", origin = "0", tiles = "4", tile_spacing = "8";
    double amplitude = 1.0, smoothness = 64.0, margin = 12.0;
    int landmarks = 300;
};

int cmd_synth(const SynthArgs& a, const Common& c)
{
    if (c.out.empty()) throw std::invalid_argument("synth needs --out");
    Report rep(c.json);
    json row = {{"record", "synth"}, {"kind", a.kind}, {"seed", c.seed}};
    json files = json::array();
    if (a.kind == "grid") {
        const GridGeometry g(parse_index3(a.tiles), parse_vec3(a.tile_spacing), parse_vec3(a.origin));
        write_grid(random_grid(g, a.amplitude, c.seed), c.out);
        files.push_back(c.out);
    } else if (a.kind == "pair") {
        // Moving phantom, smooth ground-truth field, fixed = moving warped by it.
        const Volume moving = make_phantom(PhantomKind::blobs, parse_index3(a.dims), parse_vec3(a.spacing), c.seed,
                                           parse_vec3(a.origin));
        const GridGeometry g = grid_for_volume(moving, parse_vec3(a.tile_spacing));
        const auto gt = make_ground_truth_field(g, a.amplitude, a.smoothness, c.seed + 1,
                                                static_cast<std::size_t>(a.landmarks), a.margin);
        const Volume fixed = warp_volume(moving, gt.field, moving, 0.0);
        const std::string p = c.out;
        write_volume(fixed, p + "_fixed.vol");
        write_volume(moving, p + "_moving.vol");
        write_grid(gt.field, p + "_field.bspg");
        write_landmarks(gt.fixed, p + "_fixed.txt");
        write_landmarks(gt.moving, p + "_moving.txt");
        for (const char* s : {"_fixed.vol", "_moving.vol", "_field.bspg", "_fixed.txt", "_moving.txt"})
            files.push_back(p + s);
        row["mls_ground_truth"] = mls(gt.fixed, gt.moving);
    } else {
        write_volume(make_phantom(parse_phantom_kind(a.kind), parse_index3(a.dims), parse_vec3(a.spacing), c.seed,
                                  parse_vec3(a.origin)),
                     c.out);
        files.push_back(c.out);
    }
    row["files"] = files;
    for (const auto& f : files) rep.human() << "wrote " << f.get<std::string>() << "\n";
    rep.record(row);
    return 0;
}

// ---------------------------------------------------------------- vbank

int cmd_vbank(const std::string& spacing, const Common& c)
{
    if (c.out.empty()) throw std::invalid_argument("vbank needs --out");
    Report rep(c.json);
    const VMatrixBank bank(parse_vec3(spacing));
    bank.write(c.out);
    rep.human() << bank.size() << " operators, " << bank.payload_bytes() << " bytes (" << bank.payload_bytes(4)
                << " at 4-byte precision), wrote " << c.out << "\n";
    json pairs = json::array();
    for (const auto& p : bank.pairs()) pairs.push_back(to_string(p));
    rep.record({{"record", "vbank"},
                {"spacing", vec_json(bank.spacing())},
                {"operators", bank.size()},
                {"payload_bytes", bank.payload_bytes()},
                {"payload_bytes_f32", bank.payload_bytes(4)},
                {"pairs", pairs},
                {"path", c.out}});
    return 0;
}

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--threads", c.threads, "Thread count (default: $BSREG_THREADS, else 1)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_flag("--json", c.json, "JSON lines on stdout, human text on stderr");
    sub->add_option("--out", c.out, "Output path");
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"B-spline regularization penalties, finite-difference baseline and registration"};
    app.require_subcommand(1);
    Common common;

    PenaltyArgs pa;
    auto* pen = app.add_subcommand("penalty", "Evaluate S1..S5 for a coefficient grid (--out writes the gradient)");
    pen->add_option("--grid", pa.grid, "BSPG1 coefficient file")->required();
    pen->add_option("--weights", pa.weights, "Five comma-separated weights");
    pen->add_option("--only", pa.only, "Weight one regularizer by 1, others 0");
    pen->add_option("--method", pa.method, "analytic | numeric | quadrature");
    pen->add_option("--samples", pa.samples, "Samples per tile per axis (numeric, quadrature)");
    pen->add_option("--voxel", pa.voxel, "Numeric: sample spacing in mm (overrides --samples)");
    pen->add_option("--boundary", pa.boundary, "Numeric: skip | clamp");
    pen->add_flag("--normalize", pa.normalize, "Divide by the grid volume");
    pen->add_option("--dump-vbank", pa.dump_vbank, "Write the V bank used (VBANK1)");
    add_common(pen, common);

    CompareArgs ca;
    auto* cmp = app.add_subcommand("compare", "Analytic vs finite-difference values and timings per regularizer");
    cmp->add_option("--grid", ca.src.grid, "BSPG1 file (default: synthetic smooth field)");
    cmp->add_option("--dims", ca.src.dims, "Synthetic: voxel counts");
    cmp->add_option("--extent", ca.src.extent, "Synthetic: physical extent in mm");
    cmp->add_option("--tile-spacing", ca.src.tile_spacing, "Synthetic: control-point spacing in mm");
    cmp->add_option("--amplitude", ca.src.amplitude, "Synthetic: peak coefficient in mm");
    cmp->add_option("--smoothness", ca.src.smoothness, "Synthetic: shortest wavelength in mm");
    cmp->add_option("--voxel", ca.voxel, "Sample spacing in mm (default: extent / dims, or 1)");
    cmp->add_option("--boundary", ca.boundary, "skip | clamp");
    cmp->add_option("--dump-vbank", ca.dump_vbank, "Write the V bank used (VBANK1)");
    add_common(cmp, common);

    BenchArgs ba;
    auto* ben = app.add_subcommand("bench", "Time analytic and finite-difference penalties");
    ben->add_option("--dims", ba.dims, "Base voxel counts");
    ben->add_option("--voxel", ba.voxel, "Base voxel size in mm");
    ben->add_option("--tile-voxels", ba.tile_voxels, "Comma list of tile sizes in base voxels");
    ben->add_option("--density", ba.density, "Comma list of voxel-count multipliers");
    ben->add_option("--thread-list", ba.thread_list, "Comma list of thread counts (default: --threads)");
    ben->add_option("--regularizers", ba.regularizers, "Comma list of names, or all");
    ben->add_option("--repeats", ba.repeats, "Timed repeats (>= 3)");
    ben->add_option("--warmup", ba.warmup, "Untimed warm-up runs");
    add_common(ben, common);

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "Register moving to fixed (--out writes the grid)");
    reg->add_option("--fixed", ra.fixed, "Fixed VOL1 image")->required();
    reg->add_option("--moving", ra.moving, "Moving VOL1 image")->required();
    reg->add_option("--stages", ra.stages, "spacing:iterations:downsample,...");
    reg->add_option("--weights", ra.weights, "Five comma-separated weights");
    reg->add_option("--only", ra.only, "Weight one regularizer by 1, others 0");
    reg->add_option("--sweep", ra.sweep, "Comma list of weights; one run per value");
    reg->add_option("--sweep-regularizer", ra.sweep_regularizer, "Regularizer the sweep varies");
    reg->add_option("--fixed-landmarks", ra.fixed_landmarks, "Landmarks in the fixed image");
    reg->add_option("--moving-landmarks", ra.moving_landmarks, "Corresponding landmarks in the moving image");
    reg->add_flag("--landmarks-voxel", ra.landmarks_voxel, "Landmarks are voxel indices, not mm");
    reg->add_option("--warped", ra.warped, "Write the warped moving image");
    reg->add_option("--history", ra.history, "L-BFGS history size");
    reg->add_option("--gradient-tolerance", ra.grad_tol, "Stop when max |g| falls below this");
    reg->add_option("--step-tolerance", ra.step_tol, "Stop on relative decrease below this, 3 times");
    add_common(reg, common);

    MetricsArgs ma;
    auto* met = app.add_subcommand("metrics", "Minimum Jacobian and landmark separation for a grid");
    met->add_option("--grid", ma.grid, "BSPG1 coefficient file")->required();
    met->add_option("--reference", ma.reference, "Sample the Jacobian at this volume's voxels");
    met->add_option("--samples", ma.samples, "Jacobian samples per tile without --reference");
    met->add_option("--fixed-landmarks", ma.fixed_landmarks, "Landmarks in the fixed image");
    met->add_option("--moving-landmarks", ma.moving_landmarks, "Corresponding landmarks in the moving image");
    met->add_flag("--landmarks-voxel", ma.landmarks_voxel, "Landmarks are voxel indices of --reference");
    add_common(met, common);

    SynthArgs sa;
    auto* syn = app.add_subcommand("synth", "Generate phantoms, random grids or registration pairs");
    syn->add_option("--kind", sa.kind, "blobs | gradient | checker | grid | pair");
    syn->add_option("--dims", sa.dims, "Voxel counts");
    syn->add_option("--spacing", sa.spacing, "Voxel size in mm");
    syn->add_option("--origin", sa.origin, "Origin in mm");
    syn->add_option("--tiles", sa.tiles, "grid: tile counts");
    syn->add_option("--tile-spacing", sa.tile_spacing, "grid, pair: control-point spacing in mm");
    syn->add_option("--amplitude", sa.amplitude, "grid: coefficient range; pair: peak displacement");
    syn->add_option("--smoothness", sa.smoothness, "pair: shortest wavelength in mm");
    syn->add_option("--landmarks", sa.landmarks, "pair: landmark count");
    syn->add_option("--margin", sa.margin, "pair: landmark distance from the grid boundary in mm");
    add_common(syn, common);

    std::string vspacing;
    auto* vb = app.add_subcommand("vbank", "Export the V-operator bank for a tile spacing");
    vb->add_option("--spacing", vspacing, "Tile spacing in mm")->required();
    add_common(vb, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*pen) return cmd_penalty(pa, common);
        if (*cmp) return cmd_compare(ca, common);
        if (*ben) return cmd_bench(ba, common);
        if (*reg) return cmd_register(ra, common);
        if (*met) return cmd_metrics(ma, common);
        if (*syn) return cmd_synth(sa, common);
        if (*vb) return cmd_vbank(vspacing, common);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        // FormatError, OutOfDomain, DataError, I/O and spacing mismatches.
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
