#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// being checked except to evaluate a scalar objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace oracle {

// Central differences of f with respect to every entry of x (x is perturbed in place and restored).
inline std::vector<double> central_differences(std::span<double> x, const std::function<double()>& f,
                                               double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Relative error of one parameter tensor: ||a - n|| / max(||a||, ||n||). When both norms are
// below 1e-8 (a gradient that is identically zero) the absolute difference is returned instead.
inline double rel_error(std::span<const double> analytic, std::span<const double> numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(std::max(na, nn));
    if (denom < 1e-8) return std::sqrt(diff);
    return std::sqrt(diff) / denom;
}

// Margin loss by explicit enumeration of max_a [q_a + l(label, a)] - q_label.
inline double margin_scan(const std::vector<double>& q, int label, double margin) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < q.size(); ++a) {
        const double v = q[a] + (static_cast<int>(a) == label ? 0.0 : margin);
        if (v > best) best = v;
    }
    return best - q[static_cast<std::size_t>(label)];
}

// Shortest path lengths on a grid with 4-neighbour moves; blocked cells are impassable.
// Returns -1 for unreachable cells.
inline std::vector<int> grid_bfs(int rows, int cols, std::pair<int, int> source,
                                 const std::function<bool(int, int)>& blocked) {
    std::vector<int> dist(static_cast<std::size_t>(rows * cols), -1);
    std::deque<std::pair<int, int>> frontier{source};
    dist[static_cast<std::size_t>(source.first * cols + source.second)] = 0;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    while (!frontier.empty()) {
        auto [r, c] = frontier.front();
        frontier.pop_front();
        for (int k = 0; k < 4; ++k) {
            const int nr = r + dr[k];
            const int nc = c + dc[k];
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols || blocked(nr, nc)) continue;
            auto& d = dist[static_cast<std::size_t>(nr * cols + nc)];
            if (d >= 0) continue;
            d = dist[static_cast<std::size_t>(r * cols + c)] + 1;
            frontier.emplace_back(nr, nc);
        }
    }
    return dist;
}

// Half-width of a 3-sigma band for a binomial proportion.
inline double three_sigma(double p, std::size_t n) {
    return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

} // namespace oracle
