#include "atlas/layout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "atlas/error.hpp"
#include "atlas/ivfpq.hpp"
#include "atlas/parallel.hpp"
#include "atlas/rng.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

void LayoutParams::validate() const {
  if (n_neighbors < 2) throw ValidationError("n_neighbors must be >= 2");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(min_dist >= 0) || !(spread > 0) || min_dist > spread)
    throw ValidationError("need 0 <= min_dist <= spread and spread > 0");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
}

MatrixView::MatrixView(std::uint32_t d, std::span<const float> values) : dim(d), data(values) {
  if (d == 0) throw ValidationError("matrix dim must be positive");
  if (values.size() % d != 0) throw ValidationError("matrix data is not a whole number of rows");
  count = values.size() / d;
}

namespace {

void exact_neighbours(const MatrixView& x, std::uint32_t k, KnnGraph& g) {
  const std::size_t n = x.count;
  parallel_for(0, n, [&](std::size_t i) {
    std::vector<std::pair<double, std::uint32_t>> cand;
    cand.reserve(n - 1);
    const float* a = x.row(i).data();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(l2_sq_exact(a, x.row(j).data(), x.dim), static_cast<std::uint32_t>(j));
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::uint32_t t = 0; t < k; ++t) {
      g.indices[i * k + t] = cand[t].second;
      g.distances[i * k + t] = static_cast<float>(std::sqrt(cand[t].first));
    }
  });
}

void approximate_neighbours(const MatrixView& x, std::uint32_t k, std::uint64_t seed, KnnGraph& g) {
  const std::size_t n = x.count;
  IvfPqParams ip;
  ip.nlist = static_cast<std::uint32_t>(std::clamp<double>(std::sqrt(static_cast<double>(n)), 1.0, 4096.0));
  ip.nlist = std::min<std::uint32_t>(ip.nlist, static_cast<std::uint32_t>(n / IvfPqParams::kCodewords));
  ip.nlist = std::max<std::uint32_t>(ip.nlist, 1);
  ip.m = default_subquantizers(x.dim);
  ip.nprobe = std::max<std::uint32_t>(std::min<std::uint32_t>(8, ip.nlist), ip.nlist / 8);
  ip.seed = seed;
  std::vector<float> rows(x.data.begin(), x.data.end());
  const auto matrix = EmbeddingMatrix::from_unnormalized(x.dim, std::move(rows));
  // from_unnormalized rescales rows; neighbours are found on the original
  // vectors, so the index only supplies candidates.
  auto index = IvfPqIndex::train(ip, matrix);
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  index.add(ids, matrix);
  const std::size_t shortlist = std::max<std::size_t>(64, 8 * (k + 1));
  parallel_for(0, n, [&](std::size_t i) {
    const auto hits = index.search(matrix.row(i), shortlist);
    std::vector<std::pair<double, std::uint32_t>> cand;
    cand.reserve(hits.size());
    const float* a = x.row(i).data();
    for (const auto& h : hits)
      if (h.id != i)
        cand.emplace_back(l2_sq_exact(a, x.row(h.id).data(), x.dim), static_cast<std::uint32_t>(h.id));
    // Pad with arbitrary rows if the probed cells were too small.
    for (std::uint32_t j = 0; cand.size() < k; ++j) {
      if (j == i || std::any_of(cand.begin(), cand.end(), [&](const auto& c) { return c.second == j; })) continue;
      cand.emplace_back(l2_sq_exact(a, x.row(j).data(), x.dim), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::uint32_t t = 0; t < k; ++t) {
      g.indices[i * k + t] = cand[t].second;
      g.distances[i * k + t] = static_cast<float>(std::sqrt(cand[t].first));
    }
  });
}

// Bandwidth sigma and offset rho of one point's neighbour distances.
std::pair<double, double> smooth_distances(std::span<const float> dist, double mean_all) {
  constexpr int kIters = 64;
  constexpr double kTolerance = 1e-5;
  constexpr double kMinScale = 1e-3;
  const double target = std::log2(static_cast<double>(dist.size()));
  double rho = 0;
  for (float d : dist)
    if (d > 0) {
      rho = d;
      break;
    }
  double lo = 0, hi = std::numeric_limits<double>::infinity(), mid = 1;
  for (int it = 0; it < kIters; ++it) {
    double psum = 0;
    for (float d : dist) {
      const double r = d - rho;
      psum += r > 0 ? std::exp(-r / mid) : 1.0;
    }
    if (std::abs(psum - target) < kTolerance) break;
    if (psum > target) {
      hi = mid;
      mid = (lo + hi) / 2;
    } else {
      lo = mid;
      mid = std::isinf(hi) ? mid * 2 : (lo + hi) / 2;
    }
  }
  double mean = 0;
  for (float d : dist) mean += d;
  mean /= static_cast<double>(dist.size());
  const double floor = kMinScale * (rho > 0 ? mean : mean_all);
  return {std::max(mid, floor), rho};
}

}  // namespace

KnnGraph knn_graph(const MatrixView& x, std::uint32_t k, std::size_t exact_limit, std::uint64_t seed) {
  if (k == 0 || k >= x.count) throw ValidationError("need 0 < k < number of rows for a neighbour graph");
  KnnGraph g;
  g.k = k;
  g.indices.resize(x.count * k);
  g.distances.resize(x.count * k);
  if (x.count <= exact_limit || x.count < 4 * IvfPqParams::kCodewords)
    exact_neighbours(x, k, g);
  else
    approximate_neighbours(x, k, seed, g);
  return g;
}

FuzzyGraph fuzzy_graph(const KnnGraph& knn) {
  const std::uint32_t k = knn.k;
  const std::size_t n = k ? knn.indices.size() / k : 0;
  double mean_all = 0;
  for (float d : knn.distances) mean_all += d;
  if (!knn.distances.empty()) mean_all /= static_cast<double>(knn.distances.size());

  struct Directed {
    std::uint32_t lo, hi;
    bool forward;  // lo -> hi
    double w;
  };
  std::vector<Directed> edges;
  edges.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const float> dist(&knn.distances[i * k], k);
    const auto [sigma, rho] = smooth_distances(dist, mean_all);
    for (std::uint32_t t = 0; t < k; ++t) {
      const auto j = knn.indices[i * k + t];
      const double r = dist[t] - rho;
      const double w = r <= 0 ? 1.0 : std::exp(-r / sigma);
      const auto ii = static_cast<std::uint32_t>(i);
      edges.push_back({std::min(ii, j), std::max(ii, j), ii < j, w});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Directed& a, const Directed& b) {
    return std::tie(a.lo, a.hi, a.forward) < std::tie(b.lo, b.hi, b.forward);
  });

  struct Undirected {
    std::uint32_t head, tail;
    float w;
  };
  std::vector<Undirected> out;
  for (std::size_t s = 0; s < edges.size();) {
    std::size_t e = s;
    double fw = 0, bw = 0;
    while (e < edges.size() && edges[e].lo == edges[s].lo && edges[e].hi == edges[s].hi) {
      (edges[e].forward ? fw : bw) = edges[e].w;
      ++e;
    }
    const auto w = static_cast<float>(fw + bw - fw * bw);
    if (w > 0 && edges[s].lo != edges[s].hi) {
      out.push_back({edges[s].lo, edges[s].hi, w});
      out.push_back({edges[s].hi, edges[s].lo, w});
    }
    s = e;
  }
  std::sort(out.begin(), out.end(),
            [](const Undirected& a, const Undirected& b) { return std::tie(a.head, a.tail) < std::tie(b.head, b.tail); });
  FuzzyGraph g;
  for (const auto& u : out) {
    g.head.push_back(u.head);
    g.tail.push_back(u.tail);
    g.weight.push_back(u.w);
  }
  return g;
}

CurveParams fit_curve(double spread, double min_dist) {
  constexpr int kSamples = 300;
  std::vector<double> xs(kSamples), ys(kSamples);
  for (int i = 0; i < kSamples; ++i) {
    xs[i] = 3.0 * spread * i / (kSamples - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto sse = [&](double a, double b) {
    double s = 0;
    for (int i = 0; i < kSamples; ++i) {
      const double f = 1.0 / (1.0 + a * std::pow(xs[i], 2 * b));
      s += (f - ys[i]) * (f - ys[i]);
    }
    return s;
  };
  // Levenberg-Marquardt on (a, b).
  double a = 1, b = 1, lambda = 1e-3;
  double cost = sse(a, b);
  for (int it = 0; it < 500; ++it) {
    double jtj[2][2] = {{0, 0}, {0, 0}}, jtr[2] = {0, 0};
    for (int i = 0; i < kSamples; ++i) {
      if (xs[i] <= 0) continue;
      const double u = std::pow(xs[i], 2 * b);
      const double den = 1.0 + a * u;
      const double f = 1.0 / den;
      const double da = -u / (den * den);
      const double db = -a * u * 2.0 * std::log(xs[i]) / (den * den);
      const double r = f - ys[i];
      jtj[0][0] += da * da;
      jtj[0][1] += da * db;
      jtj[1][1] += db * db;
      jtr[0] += da * r;
      jtr[1] += db * r;
    }
    jtj[1][0] = jtj[0][1];
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      const double m00 = jtj[0][0] * (1 + lambda), m11 = jtj[1][1] * (1 + lambda), m01 = jtj[0][1];
      const double det = m00 * m11 - m01 * m01;
      if (det == 0) break;
      const double sa = -(m11 * jtr[0] - m01 * jtr[1]) / det;
      const double sb = -(m00 * jtr[1] - m01 * jtr[0]) / det;
      const double na = a + sa, nb = b + sb;
      const double nc = (na > 0 && nb > 0) ? sse(na, nb) : std::numeric_limits<double>::infinity();
      if (nc < cost) {
        const double gain = cost - nc;
        a = na;
        b = nb;
        cost = nc;
        lambda = std::max(lambda / 10, 1e-12);
        improved = true;
        if (gain < 1e-15) return {a, b};
      } else {
        lambda *= 10;
      }
    }
    if (!improved) break;
  }
  return {a, b};
}

std::vector<Point2> layout(const MatrixView& x, const LayoutParams& params) {
  params.validate();
  for (float v : x.data)
    if (!std::isfinite(v)) throw ValidationError("layout input contains a non-finite value");
  const std::size_t n = x.count;
  if (n == 0) return {};
  if (n == 1) return {Point2{0, 0}};
  if (n <= params.n_neighbors)
    throw ValidationError("layout needs at least n_neighbors + 1 = " + std::to_string(params.n_neighbors + 1) +
                          " rows, got " + std::to_string(n));

  const auto graph = fuzzy_graph(knn_graph(x, params.n_neighbors, params.exact_knn_limit, params.seed));
  const auto [a, b] = fit_curve(params.spread, params.min_dist);
  const auto fa = static_cast<float>(a), fb = static_cast<float>(b);

  const std::size_t edges = graph.weight.size();
  const float wmax = edges ? *std::max_element(graph.weight.begin(), graph.weight.end()) : 1.0f;
  const auto epochs = static_cast<double>(params.epochs);
  std::vector<double> per_sample(edges), next_sample(edges), per_negative(edges), next_negative(edges);
  std::vector<char> active(edges, 0);
  for (std::size_t e = 0; e < edges; ++e) {
    // Edges too weak to be sampled once over the whole run are dropped.
    const double samples = epochs * graph.weight[e] / wmax;
    if (samples < 1.0) continue;
    active[e] = 1;
    per_sample[e] = epochs / samples;
    next_sample[e] = per_sample[e];
    per_negative[e] = per_sample[e] / params.negative_samples;
    next_negative[e] = per_negative[e];
  }

  Rng rng(params.seed);
  std::vector<float> pos(n * 2);
  for (auto& p : pos) p = static_cast<float>(rng.uniform() * 20.0 - 10.0);

  static constexpr float kClip = 4.0f;
  auto clip = [](float v) { return std::clamp(v, -kClip, kClip); };
  for (std::uint32_t epoch = 0; epoch < params.epochs; ++epoch) {
    const auto alpha = static_cast<float>(params.learning_rate * (1.0 - epoch / epochs));
    const double now = epoch;
    for (std::size_t e = 0; e < edges; ++e) {
      if (!active[e] || next_sample[e] > now) continue;
      const std::uint32_t j = graph.head[e], k = graph.tail[e];
      float* cur = &pos[j * 2];
      float* oth = &pos[k * 2];
      float dx = cur[0] - oth[0], dy = cur[1] - oth[1];
      float d2 = dx * dx + dy * dy;
      if (d2 > 0) {
        const float coeff = (-2.0f * fa * fb * std::pow(d2, fb - 1.0f)) / (fa * std::pow(d2, fb) + 1.0f);
        const float gx = clip(coeff * dx), gy = clip(coeff * dy);
        cur[0] += gx * alpha;
        cur[1] += gy * alpha;
        oth[0] -= gx * alpha;
        oth[1] -= gy * alpha;
      }
      next_sample[e] += per_sample[e];

      const auto negatives = static_cast<std::size_t>((now - next_negative[e]) / per_negative[e]);
      for (std::size_t s = 0; s < negatives; ++s) {
        const auto r = static_cast<std::uint32_t>(rng.below(n));
        if (r == j) continue;
        oth = &pos[r * 2];
        dx = cur[0] - oth[0];
        dy = cur[1] - oth[1];
        d2 = dx * dx + dy * dy;
        float gx = kClip, gy = kClip;
        if (d2 > 0) {
          const float coeff = (2.0f * fb) / ((0.001f + d2) * (fa * std::pow(d2, fb) + 1.0f));
          gx = clip(coeff * dx);
          gy = clip(coeff * dy);
        }
        cur[0] += gx * alpha;
        cur[1] += gy * alpha;
      }
      next_negative[e] += static_cast<double>(negatives) * per_negative[e];
    }
  }

  std::vector<Point2> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {pos[i * 2], pos[i * 2 + 1]};
  return out;
}

}  // namespace atlas
