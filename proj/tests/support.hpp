#pragma once

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("atlas-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// httplib server on an ephemeral localhost port, run on a background thread.
class FakeServer {
 public:
  httplib::Server server;

  void start() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    if (thread_.joinable()) thread_.join();
  }
  int port() const { return port_; }
  std::string url(const std::string& path = "") const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

 private:
  int port_ = 0;
  std::thread thread_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- independent oracles: plain loops in double, no library code ----
namespace oracle {

inline std::vector<std::vector<float>> random_rows(std::size_t n, std::size_t d, std::uint64_t seed, bool normalize) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<float>> rows(n, std::vector<float>(d));
  for (auto& r : rows) {
    double s = 0;
    for (auto& v : r) {
      v = static_cast<float>(nd(gen));
      s += double(v) * v;
    }
    if (normalize) {
      const double inv = 1.0 / std::sqrt(s);
      for (auto& v : r) v = static_cast<float>(v * inv);
    }
  }
  return rows;
}

inline std::vector<float> flatten(const std::vector<std::vector<float>>& rows) {
  std::vector<float> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline double sqdist(const float* a, const float* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = double(a[i]) - double(b[i]);
    s += t * t;
  }
  return s;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

// Ids of the k nearest base rows to q; exact, ties by index.
inline std::vector<std::uint64_t> knn(const std::vector<float>& base, std::size_t d, const float* q, std::size_t k) {
  const std::size_t n = base.size() / d;
  std::vector<std::pair<double, std::uint64_t>> all;
  for (std::size_t i = 0; i < n; ++i) all.emplace_back(sqdist(&base[i * d], q, d), i);
  std::sort(all.begin(), all.end());
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < std::min(k, n); ++i) out.push_back(all[i].second);
  return out;
}

// O(n^2) greedy first-wins dedup: compare every row to every earlier survivor.
inline std::vector<std::size_t> greedy_dedup(const std::vector<std::vector<float>>& rows, double threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool dup = false;
    for (auto s : keep) {
      double dot = 0;
      for (std::size_t j = 0; j < rows[i].size(); ++j) dot += double(rows[i][j]) * rows[s][j];
      if (dot > threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) keep.push_back(i);
  }
  return keep;
}

// Mean silhouette of 2D points under integer labels.
inline double silhouette(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<int>& labels) {
  const std::size_t n = xs.size();
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(k, 0);
    std::vector<int> cnt(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += std::hypot(xs[i] - xs[j], ys[i] - ys[j]);
      ++cnt[labels[j]];
    }
    if (cnt[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / cnt[labels[i]];
    double b = INFINITY;
    for (int c = 0; c < k; ++c)
      if (c != labels[i] && cnt[c]) b = std::min(b, sum[c] / cnt[c]);
    total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

// Trustworthiness of a low-dimensional embedding, k neighbours:
// 1 - 2/(n k (2n - 3k - 1)) * sum over embedded neighbours that are not
// original neighbours of (original rank - k).
inline double trustworthiness(const std::vector<std::vector<float>>& high, const std::vector<double>& xs,
                              const std::vector<double>& ys, std::size_t k) {
  const std::size_t n = high.size();
  double penalty = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> hd, ld;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      hd.emplace_back(sqdist(high[i].data(), high[j].data(), high[i].size()), j);
      ld.emplace_back(std::hypot(xs[i] - xs[j], ys[i] - ys[j]), j);
    }
    std::sort(hd.begin(), hd.end());
    std::sort(ld.begin(), ld.end());
    std::vector<std::size_t> rank(n, 0);
    for (std::size_t r = 0; r < hd.size(); ++r) rank[hd[r].second] = r + 1;
    for (std::size_t r = 0; r < k; ++r) {
      const auto j = ld[r].second;
      if (rank[j] > k) penalty += double(rank[j]) - double(k);
    }
  }
  return 1.0 - 2.0 / (double(n) * k * (2.0 * n - 3.0 * k - 1.0)) * penalty;
}

inline std::size_t whitespace_tokens(const std::string& s) {
  std::size_t count = 0;
  bool in = false;
  for (unsigned char c : s) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!ws && !in) ++count;
    in = !ws;
  }
  return count;
}

}  // namespace oracle
}  // namespace testing
