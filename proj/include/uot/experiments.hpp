#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "uot/core.hpp"
#include "uot/image.hpp"
#include "uot/oracle.hpp"
#include "uot/sinkhorn.hpp"
#include "uot/types.hpp"

namespace uot {

// mt19937_64 with an explicit 53-bit mapping to [0, 1], so instances are
// identical across standard libraries (std::uniform_real_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double unit() { return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740991.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Cost entries uniform on [1, 50]; a and b uniform on [0.1, 1] then scaled
// to total masses 2 and 4. Draw order: C row-major, then a, then b.
inline Problem gen_synthetic(std::size_t n, double tau, std::uint64_t seed) {
  detail::require(n >= 2, "gen_synthetic: n must be at least 2");
  const auto m = static_cast<Eigen::Index>(n);
  Rng rng(seed);
  Matrix C(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) C(i, j) = rng.uniform(1.0, 50.0);
  Vector a(m), b(m);
  for (Eigen::Index i = 0; i < m; ++i) a[i] = rng.uniform(0.1, 1.0);
  for (Eigen::Index i = 0; i < m; ++i) b[i] = rng.uniform(0.1, 1.0);
  a *= 2.0 / a.sum();
  b *= 4.0 / b.sum();
  return Problem(std::move(a), std::move(b), std::move(C), tau);
}

// l1 distance between pixel locations, pixels flattened row-major.
inline Matrix build_l1_cost(std::size_t width, std::size_t height) {
  detail::require(width * height >= 2, "build_l1_cost: need at least two pixels");
  const auto n = static_cast<Eigen::Index>(width * height);
  Matrix C(n, n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const auto r1 = static_cast<double>(static_cast<std::size_t>(p) / width);
    const auto c1 = static_cast<double>(static_cast<std::size_t>(p) % width);
    for (Eigen::Index q = 0; q < n; ++q) {
      const auto r2 = static_cast<double>(static_cast<std::size_t>(q) / width);
      const auto c2 = static_cast<double>(static_cast<std::size_t>(q) % width);
      C(p, q) = std::abs(r1 - r2) + std::abs(c1 - c2);
    }
  }
  return C;
}

struct ImageMarginalOptions {
  // Pixels with intensity exactly 0 become this value.
  double zero_lift = 1e-6;
  // Multiplier applied to the 8-bit intensity; 1/255 maps onto [0, 1].
  double intensity_scale = 1.0 / 255.0;
};

struct ImagePair {
  Vector a;
  Vector b;
  std::size_t width = 0;
  std::size_t height = 0;
};

inline Vector image_to_marginal(const GrayImage& img, const ImageMarginalOptions& opt = {}) {
  Vector v(static_cast<Eigen::Index>(img.pixels.size()));
  for (std::size_t k = 0; k < img.pixels.size(); ++k) {
    const auto px = img.pixels[k];
    v[static_cast<Eigen::Index>(k)] = px == 0 ? opt.zero_lift : opt.intensity_scale * px;
  }
  return v;
}

inline ImagePair load_image_pair(const std::string& path_a, const std::string& path_b,
                                 const ImageMarginalOptions& opt = {}, std::size_t index_a = 0,
                                 std::size_t index_b = 0) {
  const GrayImage ia = load_gray_image(path_a, index_a);
  const GrayImage ib = load_gray_image(path_b, index_b);
  if (ia.width != ib.width || ia.height != ib.height) throw InvalidInput("image pair dimensions differ");
  return {image_to_marginal(ia, opt), image_to_marginal(ib, opt), ia.width, ia.height};
}

inline Problem image_problem(const ImagePair& pair, double tau) {
  return Problem(pair.a, pair.b, build_l1_cost(pair.width, pair.height), tau);
}

enum class InstanceKind { synthetic, image_pair };

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t n = 100;
  double tau = 5.0;
  std::vector<double> epsilon_grid;
  InstanceKind kind = InstanceKind::synthetic;
  std::optional<std::string> image_a;
  std::optional<std::string> image_b;
  std::string output_dir = ".";

  void validate() const {
    for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
      detail::require(epsilon_grid[i] > 0.0, "epsilon grid entries must be positive");
      if (i > 0) detail::require(epsilon_grid[i] < epsilon_grid[i - 1], "epsilon grid must be strictly descending");
    }
    if (kind == InstanceKind::image_pair) detail::require(image_a && image_b, "image-pair experiments need two images");
  }
};

// points values of epsilon from eps_max down to eps_min, uniform in log(1/eps).
inline std::vector<double> epsilon_grid(double eps_max, double eps_min, std::size_t points) {
  detail::require(eps_max > 0.0 && eps_min > 0.0 && eps_min <= eps_max, "epsilon_grid: bad range");
  detail::require(points >= 1, "epsilon_grid: need at least one point");
  std::vector<double> grid;
  if (points == 1) return {eps_max};
  const double lo = std::log(eps_max), hi = std::log(eps_min);
  for (std::size_t k = 0; k < points; ++k)
    grid.push_back(std::exp(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1)));
  grid.front() = eps_max;
  grid.back() = eps_min;
  return grid;
}

struct KfKcRecord {
  double epsilon = 0;
  std::int64_t k_f = 0;
  std::int64_t k_c = 0;
  double fhat = 0;
  double eta = 0;
  // Spacing of the iterates at which f was evaluated.
  std::int64_t resolution = 1;
  double f_final = 0;
  bool certified() const { return k_c <= k_f; }
};

// k_c = 1 + the largest evaluated k in [1, k_f] whose iterate misses the
// epsilon target (1 when none does). The horizon of known iterates is k_f.
inline std::int64_t first_certified_iteration(const SinkhornTrace& trace, double fhat, double epsilon) {
  std::int64_t last_bad = 0;
  for (const auto& rec : trace.records)
    if (rec.k >= 1 && rec.f && *rec.f - fhat > epsilon) last_bad = std::max(last_bad, rec.k);
  return last_bad + 1;
}

inline KfKcRecord compute_kf_kc(const Problem& p, double epsilon, double fhat, std::int64_t max_trace = 100000) {
  RunOptions opt;
  opt.record_primal = true;
  opt.max_trace = max_trace;
  const auto rep = run(p, epsilon, opt);
  KfKcRecord rec;
  rec.epsilon = epsilon;
  rec.k_f = rep.k_f;
  rec.k_c = first_certified_iteration(rep.trace, fhat, epsilon);
  rec.fhat = fhat;
  rec.eta = rep.quantities.eta;
  rec.resolution = rep.trace.stride;
  rec.f_final = rep.f_final;
  return rec;
}

inline KfKcRecord compute_kf_kc(const Problem& p, double epsilon) {
  const auto oracle = solve_unregularized(p);
  return compute_kf_kc(p, epsilon, oracle.value);
}

// Worker count: UOT_THREADS if set and positive, else the hardware count.
inline std::size_t thread_budget() {
  if (const char* env = std::getenv("UOT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, count) on up to thread_budget() workers. The
// first exception is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(count, thread_budget());
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<KfKcRecord> run_kfkc_grid(const Problem& p, const std::vector<double>& grid, double fhat) {
  std::vector<KfKcRecord> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) { out[i] = compute_kf_kc(p, grid[i], fhat); });
  return out;
}

struct RatioPoint {
  std::int64_t k = 0;
  // |v^k - v*| / |u^{k+1} - u*|
  std::optional<double> ratio_uv;
  // |u^{k-1} - u*| / |v^k - v*|
  std::optional<double> ratio_vu;
  // A ratio was dropped because its denominator fell below 1e-14
  // (or k - 1 < 0).
  bool omitted = false;
};

struct RatioSeries {
  std::vector<RatioPoint> points;
  double tau = 0;
  double eta = 0;
  double geometric_factor() const { return (tau + eta) / tau; }
};

inline RatioSeries convergence_ratios(const Problem& p, double eta, std::int64_t k_lo, std::int64_t k_hi,
                                      const DualPotentials& optimum) {
  detail::require(k_lo >= 0 && k_hi >= k_lo, "convergence_ratios: bad k range");
  detail::require(optimum.n() == p.n(), "convergence_ratios: dimension mismatch");
  std::vector<double> du(static_cast<std::size_t>(k_hi + 2)), dv(static_cast<std::size_t>(k_hi + 2));
  RunOptions opt;
  opt.max_trace = 1;
  opt.observer = [&](std::int64_t k, const DualPotentials& uv) {
    if (k <= k_hi + 1) {
      du[static_cast<std::size_t>(k)] = sup_norm(uv.u - optimum.u);
      dv[static_cast<std::size_t>(k)] = sup_norm(uv.v - optimum.v);
    }
  };
  iterate(p, eta, k_hi + 1, opt);

  constexpr double kFloor = 1e-14;
  RatioSeries series;
  series.tau = p.tau();
  series.eta = eta;
  for (std::int64_t k = k_lo; k <= k_hi; ++k) {
    if (k % 2 != 0) continue;
    RatioPoint pt;
    pt.k = k;
    const auto ku = static_cast<std::size_t>(k);
    if (du[ku + 1] >= kFloor)
      pt.ratio_uv = dv[ku] / du[ku + 1];
    else
      pt.omitted = true;
    if (k >= 1 && dv[ku] >= kFloor)
      pt.ratio_vu = du[ku - 1] / dv[ku];
    else
      pt.omitted = true;
    series.points.push_back(pt);
  }
  return series;
}

inline RatioSeries convergence_ratios(const Problem& p, double eta, std::int64_t k_lo, std::int64_t k_hi) {
  const auto oracle = solve_regularized(p, eta, 1e-13);
  return convergence_ratios(p, eta, k_lo, k_hi, *oracle.potentials);
}

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> xy;
};

// Minimal line plot: axes box, min/max tick labels, one polyline and marker
// set per series, legend in the upper right.
inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (auto [x, y] : s.xy) {
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  s += "<rect x=\"70\" y=\"40\" width=\"550\" height=\"325\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"345\" y=\"405\" text-anchor=\"middle\" font-size=\"13\">" + xlabel + "</text>\n";
  s += "<text x=\"16\" y=\"202\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 202)\">" + ylabel +
       "</text>\n";
  s += "<text x=\"70\" y=\"382\" text-anchor=\"middle\" font-size=\"11\">" + fmt17(xmin) + "</text>\n";
  s += "<text x=\"620\" y=\"382\" text-anchor=\"end\" font-size=\"11\">" + fmt17(xmax) + "</text>\n";
  s += "<text x=\"66\" y=\"365\" text-anchor=\"end\" font-size=\"11\">" + fmt17(ymin) + "</text>\n";
  s += "<text x=\"66\" y=\"48\" text-anchor=\"end\" font-size=\"11\">" + fmt17(ymax) + "</text>\n";
  int row = 0;
  for (const auto& ser : series) {
    if (!ser.xy.empty()) {
      s += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.5\" points=\"";
      for (auto [x, y] : ser.xy) s += fmt17(px(x)) + "," + fmt17(py(y)) + " ";
      s += "\"/>\n";
      for (auto [x, y] : ser.xy)
        s += "<circle cx=\"" + fmt17(px(x)) + "\" cy=\"" + fmt17(py(y)) + "\" r=\"3\" fill=\"" + ser.color + "\"/>\n";
    }
    const std::string ly = std::to_string(58 + 18 * row++);
    s += "<text x=\"610\" y=\"" + ly + "\" text-anchor=\"end\" font-size=\"12\" fill=\"" + ser.color + "\">" +
         ser.label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

// Writes kfkc.csv, ratios.csv and three SVG plots; returns the paths.
inline std::vector<std::filesystem::path> emit_report(const std::vector<KfKcRecord>& records, const RatioSeries& series,
                                                      const std::filesystem::path& dir) {
  using detail::fmt17;
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;

  std::string csv = "epsilon,k_f,k_c,log_inv_eps,log_kf,log_kc,ratio\n";
  detail::PlotSeries log_kf{"log k_f", "#1f77b4", {}}, log_kc{"log k_c", "#d62728", {}}, ratio{"k_f / k_c", "#2ca02c", {}};
  for (const auto& r : records) {
    const double x = std::log(1.0 / r.epsilon);
    const double lkf = std::log(static_cast<double>(r.k_f));
    const double lkc = std::log(static_cast<double>(r.k_c));
    const double q = static_cast<double>(r.k_f) / static_cast<double>(r.k_c);
    csv += fmt17(r.epsilon) + "," + std::to_string(r.k_f) + "," + std::to_string(r.k_c) + "," + fmt17(x) + "," +
           fmt17(lkf) + "," + fmt17(lkc) + "," + fmt17(q) + "\n";
    log_kf.xy.emplace_back(x, lkf);
    log_kc.xy.emplace_back(x, lkc);
    ratio.xy.emplace_back(x, q);
  }
  out.push_back(dir / "kfkc.csv");
  detail::write_text(out.back(), csv);

  std::string rcsv = "k,ratio_uv,ratio_vu\n";
  detail::PlotSeries ruv{"|v^k - v*| / |u^(k+1) - u*|", "#1f77b4", {}}, rvu{"|u^(k-1) - u*| / |v^k - v*|", "#ff7f0e", {}};
  for (const auto& pt : series.points) {
    rcsv += std::to_string(pt.k) + "," + (pt.ratio_uv ? fmt17(*pt.ratio_uv) : "") + "," +
            (pt.ratio_vu ? fmt17(*pt.ratio_vu) : "") + "\n";
    if (pt.ratio_uv) ruv.xy.emplace_back(static_cast<double>(pt.k), *pt.ratio_uv);
    if (pt.ratio_vu) rvu.xy.emplace_back(static_cast<double>(pt.k), *pt.ratio_vu);
  }
  out.push_back(dir / "ratios.csv");
  detail::write_text(out.back(), rcsv);

  out.push_back(dir / "kfkc_log.svg");
  detail::write_text(out.back(), detail::svg_line_plot("iterations vs accuracy", "log(1/epsilon)", "log k", {log_kf, log_kc}));
  out.push_back(dir / "kfkc_ratio.svg");
  detail::write_text(out.back(), detail::svg_line_plot("k_f / k_c", "log(1/epsilon)", "ratio", {ratio}));
  out.push_back(dir / "ratios.svg");
  detail::write_text(out.back(), detail::svg_line_plot("distance ratios", "k", "ratio", {ruv, rvu}));
  return out;
}

}  // namespace uot
