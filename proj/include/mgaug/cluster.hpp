// k-means++ clustering and the adjusted Rand index.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mgaug {

struct KMeansResult {
    std::vector<std::vector<double>> centroids;
    std::vector<int> assignment;
    double inertia = 0.0;
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

/// Lloyd iterations from a k-means++ seeding; best of `restarts` by inertia.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::mt19937_64& rng,
                           int restarts = 5, int max_iter = 100) {
    if (k < 1 || points.size() < static_cast<std::size_t>(k)) throw std::invalid_argument("kmeans needs k <= points");
    const std::size_t n = points.size();
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        KMeansResult cur;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        cur.centroids.push_back(points[pick(rng)]);
        std::vector<double> d2(n);
        while (cur.centroids.size() < static_cast<std::size_t>(k)) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                d2[i] = std::numeric_limits<double>::infinity();
                for (const auto& c : cur.centroids) d2[i] = std::min(d2[i], squared_distance(points[i], c));
                total += d2[i];
            }
            if (total <= 0.0) {
                cur.centroids.push_back(points[pick(rng)]);
                continue;
            }
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            std::size_t chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                target -= d2[i];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
            cur.centroids.push_back(points[chosen]);
        }
        cur.assignment.assign(n, -1);
        for (int it = 0; it < max_iter; ++it) {
            bool changed = false;
            cur.inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                int arg = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double d = squared_distance(points[i], cur.centroids[c]);
                    if (d < bd) {
                        bd = d;
                        arg = c;
                    }
                }
                cur.inertia += bd;
                if (cur.assignment[i] != arg) {
                    cur.assignment[i] = arg;
                    changed = true;
                }
            }
            if (!changed) break;
            for (int c = 0; c < k; ++c) {
                std::vector<double> sum(points[0].size(), 0.0);
                int count = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (cur.assignment[i] != c) continue;
                    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += points[i][j];
                    ++count;
                }
                if (count == 0) continue;
                for (double& s : sum) s /= count;
                cur.centroids[c] = std::move(sum);
            }
        }
        if (cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

/// Adjusted Rand index between two labelings (Hubert & Arabie).
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
    const double n = static_cast<double>(a.size());
    auto comb2 = [](double x) { return 0.5 * x * (x - 1.0); };
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows;
    std::map<int, double> cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    double index = 0.0;
    for (const auto& [key, c] : table) index += comb2(c);
    double ra = 0.0;
    double cb = 0.0;
    for (const auto& [key, c] : rows) ra += comb2(c);
    for (const auto& [key, c] : cols) cb += comb2(c);
    const double expected = ra * cb / comb2(n);
    const double max_index = 0.5 * (ra + cb);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

}  // namespace mgaug
