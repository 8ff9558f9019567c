#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sasatr/chip.hpp"
#include "sasatr/error.hpp"
#include "sasatr/io.hpp"
#include "sasatr/nn/model.hpp"
#include "sasatr/rng.hpp"
#include "sasatr/trainer.hpp"

namespace sasatr::latent {

/// n x d feature matrix with per-row metadata.
struct FeatureCloud {
  Eigen::MatrixXd values;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> trials;

  std::size_t n() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

inline void validate(const FeatureCloud& c) {
  if (!c.values.allFinite()) throw NumericError("feature cloud", "non-finite feature value");
  const auto n = c.n();
  if ((!c.ids.empty() && c.ids.size() != n) || (!c.labels.empty() && c.labels.size() != n) ||
      (!c.trials.empty() && c.trials.size() != n))
    throw ShapeError("feature cloud metadata length does not match its row count");
}

inline FeatureCloud from_matrix(Eigen::MatrixXd m) { return FeatureCloud{std::move(m), {}, {}, {}}; }

// ---- feature taps ---------------------------------------------------------------

/// Post-ReLU second-add activations of one path, flattened row-major.
inline FeatureCloud extract_features(const nn::Model<float>& model, const train::PreparedSet& set,
                                     std::size_t path_index) {
  if (path_index >= model.paths())
    throw InvalidParameter("path index " + std::to_string(path_index) + " out of range for a " +
                           std::to_string(model.paths()) + "-path model");
  const ReprSet single{model.reprs()[path_index]};
  FeatureCloud c{Eigen::MatrixXd(set.size(), model.path_width()), set.ids, set.labels, set.trials};
  for (std::size_t b = 0; b < set.size(); b += train::kEvalBatch) {
    const auto e = std::min(set.size(), b + train::kEvalBatch);
    const auto inputs = train::gather_inputs(set, single, b, e);
    const auto cache = model.path_forward(path_index, inputs[0]);
    const std::size_t w = model.path_width();
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < w; ++j)
        c.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cache.tap[(i - b) * w + j];
  }
  validate(c);
  return c;
}

/// Concatenated taps of every path (the dense layer's input).
inline FeatureCloud extract_joint_features(const nn::Model<float>& model, const train::PreparedSet& set) {
  FeatureCloud joint{Eigen::MatrixXd(set.size(), model.feature_width()), set.ids, set.labels, set.trials};
  Eigen::Index col = 0;
  for (std::size_t p = 0; p < model.paths(); ++p) {
    const auto part = extract_features(model, set, p);
    joint.values.middleCols(col, part.values.cols()) = part.values;
    col += part.values.cols();
  }
  return joint;
}

// ---- PCA ------------------------------------------------------------------------

struct Pca {
  FeatureCloud projected;
  Eigen::MatrixXd components;   // d x k, columns by descending eigenvalue
  Eigen::VectorXd eigenvalues;  // all d, descending
  Eigen::RowVectorXd mean;
  bool rank_deficient = false;  // fewer than d_out non-trivial components
};

/// Top-`d_out` principal components of the sample covariance. Each
/// component's largest-magnitude entry is made positive.
inline Pca pca_project(const FeatureCloud& cloud, std::size_t d_out = 10) {
  validate(cloud);
  if (d_out == 0) throw InvalidParameter("pca needs at least one output dimension");
  if (cloud.n() <= d_out) throw InvalidParameter("pca needs more rows than output dimensions");
  Pca r;
  r.mean = cloud.values.colwise().mean();
  const Eigen::MatrixXd centred = cloud.values.rowwise() - r.mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(cloud.n() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca", "eigendecomposition failed");
  const auto d = static_cast<Eigen::Index>(cloud.d());
  r.eigenvalues = eig.eigenvalues().reverse();
  const double top = std::max(r.eigenvalues.size() ? r.eigenvalues(0) : 0.0, 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (r.eigenvalues(i) > 1e-12 * top && r.eigenvalues(i) > 0.0) ++rank;
  const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(d_out), rank);
  r.rank_deficient = k < static_cast<Eigen::Index>(d_out);
  r.components = eig.eigenvectors().rowwise().reverse().leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg;
    r.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.components(arg, j) < 0.0) r.components.col(j) *= -1.0;
  }
  r.projected = FeatureCloud{centred * r.components, cloud.ids, cloud.labels, cloud.trials};
  return r;
}

// ---- KSG mutual information -----------------------------------------------------

/// Digamma for x > 0: recurrence up to 6, then the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw InvalidParameter("digamma is only defined here for positive arguments");
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132)))));
}

struct MiEstimate {
  double nats = 0.0;
  std::size_t k = 0;
  std::size_t n = 0;
  std::string source;
};

inline constexpr double kKsgJitter = 1e-10;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Adds uniform noise of amplitude kKsgJitter * column standard deviation
/// (or 1 for constant columns) so exact duplicates cannot tie.
inline RowMatrix jittered(const Eigen::MatrixXd& m, Rng& rng) {
  RowMatrix out = m;
  const double n = static_cast<double>(m.rows());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const double sd = std::sqrt((m.col(j).array() - mean).square().sum() / std::max(1.0, n - 1.0));
    const double amp = kKsgJitter * (sd > 0.0 ? sd : 1.0);
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(i, j) += amp * rng.uniform(-1.0, 1.0);
  }
  return out;
}

inline double max_norm(const RowMatrix& m, Eigen::Index a, Eigen::Index b) {
  const double* pa = m.data() + a * m.cols();
  const double* pb = m.data() + b * m.cols();
  double d = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) d = std::max(d, std::abs(pa[j] - pb[j]));
  return d;
}

}  // namespace detail

/// Kraskov-Stoegbauer-Grassberger estimator #1 with the max-norm.
inline MiEstimate ksg_mi(const FeatureCloud& x, const FeatureCloud& y, std::size_t k = 3, std::uint64_t seed = 0,
                         std::string source = {}) {
  validate(x);
  validate(y);
  if (x.n() != y.n() || (!x.ids.empty() && !y.ids.empty() && x.ids != y.ids))
    throw PairingError("mutual information needs row-aligned clouds");
  if (k < 1) throw InvalidParameter("k must be >= 1");
  const std::size_t n = x.n();
  if (n <= 2 * k) throw InvalidParameter("mutual information needs more than 2k samples");
  auto rng = Rng::derive(seed, "ksg-jitter");
  const auto X = detail::jittered(x.values, rng);
  const auto Y = detail::jittered(y.values, rng);

  double acc = 0.0;
  std::vector<double> dx(n), dy(n), dz(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      dx[j] = detail::max_norm(X, ii, jj);
      dy[j] = detail::max_norm(Y, ii, jj);
      dz[j] = j == i ? std::numeric_limits<double>::infinity() : std::max(dx[j], dy[j]);
    }
    std::nth_element(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(k - 1), dz.end());
    const double eps = dz[k - 1];
    std::size_t nx = 0, ny = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (dx[j] < eps) ++nx;
      if (dy[j] < eps) ++ny;
    }
    acc += digamma(static_cast<double>(nx) + 1.0) + digamma(static_cast<double>(ny) + 1.0);
  }
  const double mi = digamma(static_cast<double>(k)) + digamma(static_cast<double>(n)) - acc / static_cast<double>(n);
  return {mi, k, n, std::move(source)};
}

// ---- t-SNE ----------------------------------------------------------------------

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
};

struct Embedding2D {
  Eigen::MatrixXd coords;  // n x 2
  double kl = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> kl_history;  // KL(P||Q) after each iteration, P unexaggerated
};

namespace detail {

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

/// Row-conditional Gaussian affinities matching log(perplexity).
inline Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const Eigen::Index n = d2.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2(i, j));
    for (int it = 0; it < 50; ++it) {
      double sum = 0.0, dot = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double v = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - dmin));
        row[static_cast<std::size_t>(j)] = v;
        sum += v;
        dot += v * (d2(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * dot / sum;
      if (std::abs(entropy - target) < 1e-5) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) sum += row[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < n; ++j) p(i, j) = row[static_cast<std::size_t>(j)] / sum;
  }
  return p;
}

}  // namespace detail

/// Exact t-SNE with the canonical optimizer schedule (momentum 0.5 then 0.8,
/// per-coordinate gains, early exaggeration).
inline Embedding2D tsne(const FeatureCloud& cloud, const TsneOptions& opt = {}) {
  validate(cloud);
  const auto n = static_cast<Eigen::Index>(cloud.n());
  if (!(opt.perplexity > 0.0)) throw InvalidParameter("perplexity must be positive");
  if (static_cast<double>(n) < 3.0 * opt.perplexity)
    throw InvalidParameter("t-SNE needs at least 3 * perplexity samples, got " + std::to_string(n));

  const Eigen::MatrixXd cond = detail::conditional_affinities(detail::squared_distances(cloud.values), opt.perplexity);
  Eigen::MatrixXd P = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  P = P.cwiseMax(1e-12);
  P.diagonal().setZero();
  double p_log_p = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) p_log_p += P(i, j) * std::log(P(i, j));

  auto rng = Rng::derive(opt.seed, "tsne-init");
  Eigen::MatrixXd Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) Y(i, c) = 1e-4 * rng.normal();
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);

  Embedding2D out;
  out.seed = opt.seed;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const bool early = it < opt.exaggeration_iters;
    const double ex = early ? opt.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        z += 2.0 * v;
      }
    }
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 2);
    double p_log_q = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = std::max(num(i, j) / z, 1e-300);
        const double m = (ex * P(i, j) - q) * num(i, j);
        gx += m * (Y(i, 0) - Y(j, 0));
        gy += m * (Y(i, 1) - Y(j, 1));
        p_log_q += P(i, j) * std::log(q);
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    out.kl_history.push_back(std::max(0.0, p_log_p - p_log_q));
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = std::max(0.01, same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
        update(i, c) = momentum * update(i, c) - opt.learning_rate * gains(i, c) * grad(i, c);
        Y(i, c) += update(i, c);
      }
    Y.rowwise() -= Y.colwise().mean();
    if (!Y.allFinite()) throw NumericError("tsne", "embedding diverged at iteration " + std::to_string(it));
  }
  out.coords = std::move(Y);
  out.iterations = opt.iterations;
  out.kl = out.kl_history.empty() ? 0.0 : out.kl_history.back();
  return out;
}

// ---- silhouette -----------------------------------------------------------------

/// Mean silhouette with Euclidean distance. A point whose mean intra- and
/// nearest-other-group distances are both zero scores 0.
inline double silhouette(const Eigen::MatrixXd& points, const std::vector<std::string>& groups) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (groups.size() != n) throw ShapeError("silhouette needs one group label per point");
  std::map<std::string, std::size_t> index;
  for (const auto& g : groups) index.emplace(g, index.size());
  const std::size_t G = index.size();
  std::vector<std::size_t> gid(n), count(G, 0);
  for (std::size_t i = 0; i < n; ++i) ++count[gid[i] = index[groups[i]]];
  if (G < 2) throw InvalidParameter("silhouette needs at least two groups");
  for (auto c : count)
    if (c < 2) throw InvalidParameter("silhouette needs at least two members in every group");

  double total = 0.0;
  std::vector<double> sums(G);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        sums[gid[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    const double a = sums[gid[i]] / static_cast<double>(count[gid[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < G; ++g)
      if (g != gid[i]) b = std::min(b, sums[g] / static_cast<double>(count[g]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

inline double silhouette(const Embedding2D& e, const std::vector<std::string>& groups) {
  return silhouette(e.coords, groups);
}

// ---- weight introspection -------------------------------------------------------

struct PathWeightMaps {
  std::vector<Grid<double>> channels;  // kTapChannels maps of side x side
  Grid<double> coherent_sum;           // sum over channels
};

/// Splits the dense kernel by path and inverts the (row, col, channel) flatten.
inline std::vector<PathWeightMaps> unflatten_dense_weights(const nn::Model<float>& model) {
  const auto& w = model.dense_kernel().value;
  const std::size_t side = nn::tap_side(model.input_side());
  const std::size_t C = nn::kTapChannels;
  const std::size_t per_path = model.path_width();
  std::vector<PathWeightMaps> maps;
  for (std::size_t p = 0; p < model.paths(); ++p) {
    PathWeightMaps m{std::vector<Grid<double>>(C, Grid<double>(side, side)), Grid<double>(side, side)};
    for (std::size_t i = 0; i < per_path; ++i) {
      const std::size_t r = i / (side * C), c = (i / C) % side, ch = i % C;
      const double v = w[p * per_path + i];
      m.channels[ch](r, c) = v;
      m.coherent_sum(r, c) += v;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

/// Inverse of unflatten_dense_weights for one path.
inline std::vector<double> flatten_path_weights(const PathWeightMaps& m) {
  const std::size_t C = m.channels.size();
  const std::size_t side = C ? m.channels[0].rows : 0;
  std::vector<double> flat(side * side * C);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = m.channels[i % C]((i / (side * C)), (i / C) % side);
  return flat;
}

/// The first convolution's kernels of a path as kh x kw grids.
inline std::vector<Grid<double>> first_layer_filters(const nn::Model<float>& model, std::size_t path_index) {
  if (path_index >= model.paths()) throw InvalidParameter("path index out of range");
  const auto& k = model.conv_param(path_index, 0, false).value;  // (kh, kw, 1, cout)
  std::vector<Grid<double>> out(k.dim(3), Grid<double>(k.dim(0), k.dim(1)));
  for (std::size_t y = 0; y < k.dim(0); ++y)
    for (std::size_t x = 0; x < k.dim(1); ++x)
      for (std::size_t o = 0; o < k.dim(3); ++o) out[o](y, x) = k[(y * k.dim(1) + x) * k.dim(3) + o];
  return out;
}

// ---- mutual-information report ---------------------------------------------------

struct MiRow {
  std::string source;  // which net(s)
  std::string pair;    // representation pair
  double nats = 0.0;
};

struct MiOptions {
  std::size_t k = 3;
  std::size_t pca_dims = 10;
  std::uint64_t seed = 1;
};

struct NamedModel {
  std::string name;
  const nn::Model<float>* model = nullptr;
};

/// MI between last-conv features (each PCA-reduced) of separately trained
/// single-input nets, and between the paths inside each joint net.
inline std::vector<MiRow> mi_report(const std::vector<NamedModel>& models, const train::PreparedSet& probe,
                                    const MiOptions& opt = {}) {
  std::vector<MiRow> rows;
  std::vector<std::pair<Representation, FeatureCloud>> singles;
  for (const auto& m : models)
    if (m.model->paths() == 1)
      singles.emplace_back(m.model->reprs()[0], pca_project(extract_features(*m.model, probe, 0), opt.pca_dims).projected);
  for (std::size_t a = 0; a < singles.size(); ++a)
    for (std::size_t b = a + 1; b < singles.size(); ++b) {
      const std::string pair =
          std::string(short_name(singles[a].first)) + "-" + std::string(short_name(singles[b].first));
      rows.push_back({"separate", pair, ksg_mi(singles[a].second, singles[b].second, opt.k, opt.seed).nats});
    }
  for (const auto& m : models) {
    if (m.model->paths() < 2) continue;
    std::vector<FeatureCloud> paths;
    for (std::size_t p = 0; p < m.model->paths(); ++p)
      paths.push_back(pca_project(extract_features(*m.model, probe, p), opt.pca_dims).projected);
    for (std::size_t a = 0; a < paths.size(); ++a)
      for (std::size_t b = a + 1; b < paths.size(); ++b) {
        const std::string pair = std::string(short_name(m.model->reprs()[a])) + "-" +
                                 std::string(short_name(m.model->reprs()[b]));
        rows.push_back({"joint " + m.name, pair, ksg_mi(paths[a], paths[b], opt.k, opt.seed).nats});
      }
  }
  return rows;
}

inline std::string encode_mi_report(const std::vector<MiRow>& rows, std::size_t probe_size) {
  std::string s = "# probe chips: " + std::to_string(probe_size) + "\nsource\tpair\tmi_nats\n";
  for (const auto& r : rows) s += io::join({r.source, r.pair, io::fmt(r.nats, 6)}) + "\n";
  return s;
}

inline std::string encode_embedding(const Embedding2D& e, const FeatureCloud& meta) {
  std::string s = "chip_id\tx\ty\tlabel\ttrial_name\n";
  for (Eigen::Index i = 0; i < e.coords.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    s += io::join({k < meta.ids.size() ? meta.ids[k] : std::to_string(k), io::fmt(e.coords(i, 0), 6),
                   io::fmt(e.coords(i, 1), 6), k < meta.labels.size() ? std::to_string(meta.labels[k]) : "",
                   k < meta.trials.size() ? meta.trials[k] : ""}) +
         "\n";
  }
  return s;
}

/// Row indices of a class-stratified probe of about `size` chips.
inline std::vector<std::size_t> stratified_probe(const std::vector<int>& labels, std::size_t size, std::uint64_t seed) {
  if (size >= labels.size()) {
    std::vector<std::size_t> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  auto rng = Rng::derive(seed, "probe");
  return train::stratified_subset(labels, static_cast<double>(size) / static_cast<double>(labels.size()), rng);
}

inline train::PreparedSet subset(const train::PreparedSet& set, const std::vector<std::size_t>& idx) {
  train::PreparedSet s;
  s.side = set.side;
  const std::size_t plane = set.side * set.side;
  for (const auto& [r, v] : set.planes) {
    auto& dst = s.planes[r];
    dst.reserve(idx.size() * plane);
    for (auto i : idx)
      dst.insert(dst.end(), v.begin() + static_cast<std::ptrdiff_t>(i * plane),
                 v.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
  }
  for (auto i : idx) {
    s.labels.push_back(set.labels[i]);
    s.ids.push_back(set.ids[i]);
    s.trials.push_back(set.trials[i]);
  }
  return s;
}

}  // namespace sasatr::latent
