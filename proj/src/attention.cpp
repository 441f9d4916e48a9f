#include "dgdata/attention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dgdata/errors.hpp"

namespace dgdata {

namespace {

/// Solve (A + ridge I) x = b for symmetric positive semidefinite A via Cholesky.
std::vector<double> solve_ridged_spd(std::vector<double> a, std::vector<double> b, int n,
                                     double ridge) {
    for (int i = 0; i < n; ++i) a[static_cast<size_t>(i) * n + i] += ridge;
    // in-place Cholesky: a = L L^T
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) {
                s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
            }
            if (i == j) {
                if (s <= 0.0) throw NumericalError("attention fit: normal matrix not positive definite");
                a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
            }
        }
    }
    // forward then back substitution
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
    return b;
}

} // namespace

AttentionWeights fit_attention(const std::vector<FeatureSequence>& sequences, int p,
                               double ridge) {
    if (p < 1) throw ConfigError("fit_attention: lag count must be >= 1");
    if (ridge <= 0.0) throw ConfigError("fit_attention: ridge must be positive");
    int dim = -1;
    long long usable_rows = 0;
    for (const auto& seq : sequences) {
        if (seq.length() == 0) continue;
        int d = static_cast<int>(seq.features.front().size());
        if (dim == -1) dim = d;
        if (d != dim) throw DimensionError("fit_attention: inconsistent feature dimensions");
        if (seq.length() > p) usable_rows += seq.length() - p;
    }
    if (dim <= 0 || usable_rows == 0) {
        throw DataError("fit_attention: no sequence longer than the lag count");
    }

    // One scalar regression per feature dimension, averaged into a single beta.
    std::vector<double> beta_sum(static_cast<size_t>(p), 0.0);
    std::vector<double> a(static_cast<size_t>(p) * p), rhs(static_cast<size_t>(p));
    for (int j = 0; j < dim; ++j) {
        std::fill(a.begin(), a.end(), 0.0);
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (const auto& seq : sequences) {
            for (int t = p; t < seq.length(); ++t) {
                double y = seq.features[static_cast<size_t>(t)][static_cast<size_t>(j)];
                for (int r = 0; r < p; ++r) {
                    double xr = seq.features[static_cast<size_t>(t - 1 - r)][static_cast<size_t>(j)];
                    rhs[static_cast<size_t>(r)] += xr * y;
                    for (int c = 0; c <= r; ++c) {
                        double xc = seq.features[static_cast<size_t>(t - 1 - c)][static_cast<size_t>(j)];
                        a[static_cast<size_t>(r) * p + c] += xr * xc;
                    }
                }
            }
        }
        for (int r = 0; r < p; ++r) {
            for (int c = r + 1; c < p; ++c) {
                a[static_cast<size_t>(r) * p + c] = a[static_cast<size_t>(c) * p + r];
            }
        }
        std::vector<double> beta_j = solve_ridged_spd(a, rhs, p, ridge);
        for (int r = 0; r < p; ++r) beta_sum[static_cast<size_t>(r)] += beta_j[static_cast<size_t>(r)];
    }

    AttentionWeights w;
    w.beta.resize(static_cast<size_t>(p));
    for (int r = 0; r < p; ++r) w.beta[static_cast<size_t>(r)] = beta_sum[static_cast<size_t>(r)] / dim;

    double sq = 0.0;
    long long count = 0;
    for (const auto& seq : sequences) {
        for (int t = p; t < seq.length(); ++t) {
            for (int j = 0; j < dim; ++j) {
                double pred = 0.0;
                for (int r = 0; r < p; ++r) {
                    pred += w.beta[static_cast<size_t>(r)] *
                            seq.features[static_cast<size_t>(t - 1 - r)][static_cast<size_t>(j)];
                }
                double e = seq.features[static_cast<size_t>(t)][static_cast<size_t>(j)] - pred;
                sq += e * e;
                ++count;
            }
        }
    }
    w.residual = std::sqrt(sq / static_cast<double>(count));
    return w;
}

std::vector<FeatureSequence> refine_features(const std::vector<FeatureSequence>& sequences,
                                             const AttentionWeights& weights, int top_k,
                                             double rho) {
    int p = weights.lags();
    if (top_k < 1 || top_k > p) throw ConfigError("refine_features: top_k must be in [1, lags]");
    if (rho < 0.0 || rho > 1.0) throw ConfigError("refine_features: rho must be in [0,1]");

    // Most significant lags by |beta|; ties resolved toward the nearer lag.
    std::vector<int> order(static_cast<size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return std::abs(weights.beta[static_cast<size_t>(x)]) >
               std::abs(weights.beta[static_cast<size_t>(y)]);
    });
    order.resize(static_cast<size_t>(top_k));
    double total_abs = 0.0;
    for (int i : order) total_abs += std::abs(weights.beta[static_cast<size_t>(i)]);

    std::vector<FeatureSequence> out = sequences;
    if (rho == 0.0) return out;
    for (size_t s = 0; s < out.size(); ++s) {
        FeatureSequence& seq = out[s];
        int n = seq.length();
        if (n == 0) continue;
        int dim = static_cast<int>(seq.features.front().size());
        const auto& src = sequences[s].features;
        for (int t = p; t < n; ++t) {
            std::vector<double>& dst = seq.features[static_cast<size_t>(t)];
            for (int j = 0; j < dim; ++j) {
                double mixed = 0.0;
                if (total_abs > 1e-15) {
                    for (int i : order) {
                        double wn = weights.beta[static_cast<size_t>(i)] / total_abs;
                        mixed += wn * src[static_cast<size_t>(t - 1 - i)][static_cast<size_t>(j)];
                    }
                }
                dst[static_cast<size_t>(j)] =
                    (1.0 - rho) * src[static_cast<size_t>(t)][static_cast<size_t>(j)] + rho * mixed;
            }
        }
    }
    return out;
}

std::vector<int> kmeans_assign(const std::vector<const std::vector<double>*>& points, int k,
                               Rng& rng, int max_iters) {
    int n = static_cast<int>(points.size());
    if (n == 0) return {};
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    k = std::min(k, n);
    int dim = static_cast<int>(points.front()->size());

    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = a[static_cast<size_t>(j)] - b[static_cast<size_t>(j)];
            s += d * d;
        }
        return s;
    };

    // Greedy k-means++ seeding: the first centroid comes from the seed, each
    // further one is the point farthest from the chosen set. Unlike threshold
    // sampling this stays put under small feature drift, so repeated fits on
    // slowly moving features do not flip between local optima.
    std::vector<std::vector<double>> centroids;
    centroids.push_back(*points[static_cast<size_t>(rng.uniform_int(n))]);
    while (static_cast<int>(centroids.size()) < k) {
        int chosen = 0;
        double best = -1.0;
        for (int i = 0; i < n; ++i) {
            double d = dist2(*points[static_cast<size_t>(i)], centroids.front());
            for (size_t c = 1; c < centroids.size(); ++c) {
                d = std::min(d, dist2(*points[static_cast<size_t>(i)], centroids[c]));
            }
            if (d > best) {
                best = d;
                chosen = i;
            }
        }
        centroids.push_back(*points[static_cast<size_t>(chosen)]);
    }

    std::vector<int> assign(static_cast<size_t>(n), 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(*points[static_cast<size_t>(i)], centroids[0]);
            for (int c = 1; c < k; ++c) {
                double d = dist2(*points[static_cast<size_t>(i)], centroids[static_cast<size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        // recompute centroids
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            int c = assign[static_cast<size_t>(i)];
            counts[static_cast<size_t>(c)]++;
            for (int j = 0; j < dim; ++j) {
                centroids[static_cast<size_t>(c)][static_cast<size_t>(j)] +=
                    (*points[static_cast<size_t>(i)])[static_cast<size_t>(j)];
            }
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) {
                // repopulate with the point farthest from its own centroid
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double d = dist2(*points[static_cast<size_t>(i)],
                                     centroids[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[static_cast<size_t>(c)] = *points[static_cast<size_t>(far_i)];
                counts[static_cast<size_t>(c)] = 1;
            } else {
                for (int j = 0; j < dim; ++j) {
                    centroids[static_cast<size_t>(c)][static_cast<size_t>(j)] /=
                        counts[static_cast<size_t>(c)];
                }
            }
        }
    }
    return assign;
}

std::vector<int> assign_temporal_states(const std::vector<StateAssignmentInput>& windows,
                                        int states_per_class, uint64_t seed) {
    if (states_per_class < 1) throw ConfigError("assign_temporal_states: need >= 1 state");
    std::vector<int> result(windows.size(), -1);

    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].class_label >= 0) by_class[windows[i].class_label].push_back(static_cast<int>(i));
    }

    for (auto& [cls, idx] : by_class) {
        // Canonical chronological order (source user first) makes the result
        // independent of the caller's window ordering.
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            const auto& wa = windows[static_cast<size_t>(a)];
            const auto& wb = windows[static_cast<size_t>(b)];
            if (wa.from_source != wb.from_source) return wa.from_source;
            if (wa.recording_id != wb.recording_id) return wa.recording_id < wb.recording_id;
            if (wa.seq_index != wb.seq_index) return wa.seq_index < wb.seq_index;
            return wa.uid < wb.uid;
        });
        std::vector<const std::vector<double>*> points;
        points.reserve(idx.size());
        for (int i : idx) points.push_back(windows[static_cast<size_t>(i)].feature);

        int k = std::min(states_per_class, static_cast<int>(points.size()));
        Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(cls + 1)));
        std::vector<int> raw = kmeans_assign(points, k, rng);

        // Width-3 median pass per recording run, chronological order.
        std::vector<int> smoothed = raw;
        size_t run_start = 0;
        auto smooth_run = [&](size_t lo, size_t hi) { // [lo, hi)
            if (hi - lo < 3) return;
            for (size_t i = lo + 1; i + 1 < hi; ++i) {
                int a = raw[i - 1], b = raw[i], c = raw[i + 1];
                int mx = std::max({a, b, c}), mn = std::min({a, b, c});
                smoothed[i] = a + b + c - mx - mn;
            }
        };
        for (size_t i = 1; i <= idx.size(); ++i) {
            bool boundary =
                i == idx.size() ||
                windows[static_cast<size_t>(idx[i])].recording_id !=
                    windows[static_cast<size_t>(idx[run_start])].recording_id ||
                windows[static_cast<size_t>(idx[i])].from_source !=
                    windows[static_cast<size_t>(idx[run_start])].from_source;
            if (boundary) {
                smooth_run(run_start, i);
                run_start = i;
            }
        }

        // Canonical ids: order of first chronological appearance in the source
        // user, then in the target user for clusters the source never visits.
        std::vector<int> remap(static_cast<size_t>(k), -1);
        int next_id = 0;
        for (int pass = 0; pass < 2 && next_id < k; ++pass) {
            bool want_source = pass == 0;
            for (size_t i = 0; i < idx.size(); ++i) {
                if (windows[static_cast<size_t>(idx[i])].from_source != want_source) continue;
                int c = smoothed[i];
                if (remap[static_cast<size_t>(c)] == -1) remap[static_cast<size_t>(c)] = next_id++;
            }
        }
        for (size_t i = 0; i < idx.size(); ++i) {
            result[static_cast<size_t>(idx[i])] = remap[static_cast<size_t>(smoothed[i])];
        }
    }
    return result;
}

int composite_pseudo_label(int class_label, int state, int states_per_class) {
    if (states_per_class < 1) throw ConfigError("composite label: states_per_class must be >= 1");
    if (class_label < 0) throw LabelError("composite label: negative class");
    if (state < 0 || state >= states_per_class) {
        throw LabelError("composite label: state " + std::to_string(state) + " outside [0," +
                         std::to_string(states_per_class) + ")");
    }
    return class_label * states_per_class + state;
}

std::pair<int, int> split_composite_label(int label, int states_per_class) {
    if (label < 0) throw LabelError("composite label must be nonnegative");
    return {label / states_per_class, label % states_per_class};
}

} // namespace dgdata
