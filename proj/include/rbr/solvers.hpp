#pragma once

// Representation-based classification baselines. The ℓ1 objective is taken
// literally as ‖Dx − y‖² + λ‖x‖₁ (no ½ on the quadratic), so the proximal
// step 1/L pairs with the soft threshold λ/(2L).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rbr/dictionary.hpp"
#include "rbr/error.hpp"
#include "rbr/numlin.hpp"

namespace rbr {

enum class SolverMethod { Crc, Fista, Ista, Omp, Admm };

struct SolverConfig {
  SolverMethod method = SolverMethod::Crc;
  double lambda = 1e-2;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  std::size_t omp_k = 20;
  double admm_rho = 1.0;
};

struct ClassificationResult {
  Vector coefficients;
  Vector residuals;
  std::size_t predicted_class = 0;
  double predicted_distance = 0.0;
};

inline const char* to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::Crc: return "crc";
    case SolverMethod::Fista: return "fista";
    case SolverMethod::Ista: return "ista";
    case SolverMethod::Omp: return "omp";
    case SolverMethod::Admm: return "admm";
  }
  return "?";
}

/// Accepts the implemented families plus the names of third-party SRC
/// solvers, which map onto the closest implemented family.
inline SolverMethod parse_solver_method(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "crc") return SolverMethod::Crc;
  if (name == "fista" || name == "homotopy" || name == "gpsr" || name == "l1ls" || name == "l1-magic" ||
      name == "l1magic")
    return SolverMethod::Fista;
  if (name == "ista") return SolverMethod::Ista;
  if (name == "omp") return SolverMethod::Omp;
  if (name == "admm" || name == "dalm" || name == "palm") return SolverMethod::Admm;
  throw Error(ErrorCode::Config, "unknown solver '" + name + "'");
}

inline double lasso_objective(const Matrix& D, std::span<const double> y, std::span<const double> x,
                              double lambda) {
  Vector r = matvec(D, x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  return dot(r, r) + lambda * norm1(x);
}

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// ----------------------------------------------------------------------
// CRC
// ----------------------------------------------------------------------

/// (DᵀD + λI)⁻¹Dᵀy through the n×n normal equations.
inline Vector crc_solve(const Matrix& D, std::span<const double> y, double lambda) {
  return solve_spd(add_diagonal(gram(D), lambda), matvec_t(D, y));
}

inline Vector crc_solve(const DenoiserMap& dm, std::span<const double> y) { return matvec(dm.B, y); }

// ----------------------------------------------------------------------
// ISTA / FISTA
// ----------------------------------------------------------------------

/// Proximal gradient on the Lasso. With accelerate=false this is ISTA, whose
/// objective never increases; FISTA returns the best iterate seen.
/// `lipschitz` (largest eigenvalue of DᵀD) may be supplied to skip the power iteration.
inline Vector lasso_proximal(const Matrix& D, std::span<const double> y, const SolverConfig& cfg, bool accelerate,
                             std::vector<double>* objective_trace = nullptr,
                             std::optional<double> lipschitz = std::nullopt) {
  if (y.size() != D.rows()) throw Error(ErrorCode::DimensionMismatch, "query length differs from m");
  const std::size_t n = D.cols();
  const double L = lipschitz ? *lipschitz : spectral_norm_sq(D, 1e-10);
  Vector x(n, 0.0);
  if (L == 0.0) return x;
  const double step = 1.0 / L;
  const double thresh = cfg.lambda / (2.0 * L);

  Vector z = x;  // extrapolated point (== x for ISTA)
  Vector best = x;
  double f_prev = lasso_objective(D, y, x, cfg.lambda);
  double f_best = f_prev;
  if (objective_trace) objective_trace->assign(1, f_prev);
  double t = 1.0;

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    Vector r = matvec(D, z);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
    const Vector g = matvec_t(D, r);
    Vector x_next(n);
    for (std::size_t j = 0; j < n; ++j) x_next[j] = soft_threshold(z[j] - step * g[j], thresh);

    if (accelerate) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      const double beta = (t - 1.0) / t_next;
      for (std::size_t j = 0; j < n; ++j) z[j] = x_next[j] + beta * (x_next[j] - x[j]);
      t = t_next;
    } else {
      z = x_next;
    }
    x = std::move(x_next);

    const double f = lasso_objective(D, y, x, cfg.lambda);
    if (objective_trace) objective_trace->push_back(f);
    if (f < f_best) {
      f_best = f;
      best = x;
    }
    const bool done = std::abs(f_prev - f) <= cfg.tol * std::max(std::abs(f_prev), 1e-300);
    f_prev = f;
    if (done) break;
  }
  return accelerate ? best : x;
}

inline Vector lasso_fista(const Matrix& D, std::span<const double> y, const SolverConfig& cfg,
                          std::vector<double>* objective_trace = nullptr) {
  return lasso_proximal(D, y, cfg, true, objective_trace);
}

inline Vector lasso_ista(const Matrix& D, std::span<const double> y, const SolverConfig& cfg,
                         std::vector<double>* objective_trace = nullptr) {
  return lasso_proximal(D, y, cfg, false, objective_trace);
}

// ----------------------------------------------------------------------
// OMP
// ----------------------------------------------------------------------

inline Vector omp(const Matrix& D, std::span<const double> y, const SolverConfig& cfg) {
  const std::size_t m = D.rows();
  const std::size_t n = D.cols();
  if (y.size() != m) throw Error(ErrorCode::DimensionMismatch, "query length differs from m");
  if (cfg.omp_k > m) throw Error(ErrorCode::InvalidArgument, "omp_k exceeds the measurement dimension");

  std::vector<std::size_t> active;
  Vector coef;
  Vector residual(y.begin(), y.end());
  while (active.size() < cfg.omp_k && norm2(residual) >= cfg.tol) {
    const Vector corr = matvec_t(D, residual);
    std::size_t pick = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(corr[j]) > std::abs(corr[pick])) pick = j;
    if (corr[pick] == 0.0 || std::find(active.begin(), active.end(), pick) != active.end()) break;
    active.push_back(pick);

    const std::size_t k = active.size();
    Matrix sub_gram(k, k);
    Vector rhs(k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) s += D(r, active[a]) * D(r, active[b]);
        sub_gram(a, b) = sub_gram(b, a) = s;
      }
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += D(r, active[a]) * y[r];
      rhs[a] = s;
    }
    coef = solve_spd(sub_gram, rhs);
    for (std::size_t r = 0; r < m; ++r) {
      double s = y[r];
      for (std::size_t a = 0; a < k; ++a) s -= D(r, active[a]) * coef[a];
      residual[r] = s;
    }
  }
  Vector x(n, 0.0);
  for (std::size_t a = 0; a < active.size(); ++a) x[active[a]] = coef[a];
  return x;
}

// ----------------------------------------------------------------------
// ADMM
// ----------------------------------------------------------------------

/// Lasso by ADMM with the x–z splitting. The x-update system
/// (2DᵀD + ρI) is factored once per dictionary; for m < n it is inverted
/// through the m×m Woodbury form ρ⁻¹[I − Dᵀ(ρ/2·I + DDᵀ)⁻¹D].
class LassoAdmm {
 public:
  LassoAdmm(const Matrix& D, double rho) : D_(&D), rho_(rho) {
    if (!(rho > 0.0)) throw Error(ErrorCode::InvalidArgument, "ADMM penalty must be positive");
    wide_ = D.rows() < D.cols();
    if (wide_)
      chol_ = std::make_unique<Cholesky>(add_diagonal(matmul_nt(D, D), 0.5 * rho));
    else
      chol_ = std::make_unique<Cholesky>(scaled_normal(D, rho));
  }

  Vector solve(std::span<const double> y, const SolverConfig& cfg) const {
    const Matrix& D = *D_;
    const std::size_t n = D.cols();
    if (y.size() != D.rows()) throw Error(ErrorCode::DimensionMismatch, "query length differs from m");
    const Vector dty2 = [&] {
      Vector v = matvec_t(D, y);
      for (double& e : v) e *= 2.0;
      return v;
    }();
    Vector x(n, 0.0), z(n, 0.0), u(n, 0.0), q(n);
    const double kappa = cfg.lambda / rho_;
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
      for (std::size_t j = 0; j < n; ++j) q[j] = dty2[j] + rho_ * (z[j] - u[j]);
      x = apply_inverse(q);
      double primal = 0.0, dual = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double z_new = soft_threshold(x[j] + u[j], kappa);
        dual += (z_new - z[j]) * (z_new - z[j]);
        z[j] = z_new;
        u[j] += x[j] - z[j];
        primal += (x[j] - z[j]) * (x[j] - z[j]);
      }
      if (std::sqrt(primal) < cfg.tol && rho_ * std::sqrt(dual) < cfg.tol) break;
    }
    return z;
  }

 private:
  static Matrix scaled_normal(const Matrix& D, double rho) {
    Matrix g = gram(D);
    for (double& v : g.data()) v *= 2.0;
    return add_diagonal(std::move(g), rho);
  }

  Vector apply_inverse(const Vector& q) const {
    if (!wide_) return chol_->solve(q);
    const Matrix& D = *D_;
    Vector w = chol_->solve(matvec(D, q));
    Vector out = matvec_t(D, w);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (q[j] - out[j]) / rho_;
    return out;
  }

  const Matrix* D_;
  double rho_;
  bool wide_ = false;
  std::unique_ptr<Cholesky> chol_;
};

inline Vector lasso_admm(const Matrix& D, std::span<const double> y, const SolverConfig& cfg) {
  return LassoAdmm(D, cfg.admm_rho).solve(y, cfg);
}

// ----------------------------------------------------------------------
// Four-step residual classification
// ----------------------------------------------------------------------

/// Per-class residuals ‖y − D_i x̂_i‖₂ over the columns of each class.
inline Vector class_residuals(const Dictionary& dict, std::span<const double> y, std::span<const double> coef) {
  const std::size_t m = dict.m();
  std::vector<Vector> recon(dict.classes, Vector(m, 0.0));
  for (std::size_t j = 0; j < dict.n(); ++j) {
    const double c = coef[j];
    if (c == 0.0) continue;
    Vector& acc = recon[dict.class_of_column[j]];
    for (std::size_t r = 0; r < m; ++r) acc[r] += dict.D(r, j) * c;
  }
  Vector e(dict.classes);
  for (std::size_t i = 0; i < dict.classes; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double diff = y[r] - recon[i][r];
      s += diff * diff;
    }
    e[i] = std::sqrt(s);
  }
  return e;
}

/// Holds per-dictionary precomputation (denoiser, Lipschitz constant, ADMM
/// factorization) so a batch of queries is classified without refactoring.
class FourStepClassifier {
 public:
  FourStepClassifier(const Dictionary& dict, SolverConfig cfg, const DenoiserMap* denoiser = nullptr,
                     double range_min = 0.5, double bin_width = 1.0)
      : dict_(dict), cfg_(cfg), range_min_(range_min), bin_width_(bin_width) {
    switch (cfg_.method) {
      case SolverMethod::Crc:
        if (denoiser && denoiser->lambda == cfg_.lambda)
          denoiser_ = denoiser;
        else {
          owned_ = build_denoiser(dict.D, cfg_.lambda);
          denoiser_ = &*owned_;
        }
        break;
      case SolverMethod::Fista:
      case SolverMethod::Ista:
        lipschitz_ = spectral_norm_sq(dict.D, 1e-10);
        break;
      case SolverMethod::Admm:
        admm_ = std::make_unique<LassoAdmm>(dict.D, cfg_.admm_rho);
        break;
      case SolverMethod::Omp:
        break;
    }
  }

  ClassificationResult classify(std::span<const double> feature) const {
    return classify_compressed(compress_query(dict_, feature));
  }

  ClassificationResult classify_compressed(const Vector& y) const {
    ClassificationResult out;
    switch (cfg_.method) {
      case SolverMethod::Crc: out.coefficients = crc_solve(*denoiser_, y); break;
      case SolverMethod::Fista: out.coefficients = lasso_proximal(dict_.D, y, cfg_, true, nullptr, lipschitz_); break;
      case SolverMethod::Ista: out.coefficients = lasso_proximal(dict_.D, y, cfg_, false, nullptr, lipschitz_); break;
      case SolverMethod::Omp: out.coefficients = omp(dict_.D, y, cfg_); break;
      case SolverMethod::Admm: out.coefficients = admm_->solve(y, cfg_); break;
    }
    out.residuals = class_residuals(dict_, y, out.coefficients);
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.residuals.size(); ++i)
      if (out.residuals[i] < out.residuals[best]) best = i;
    out.predicted_class = best;
    out.predicted_distance = range_min_ + static_cast<double>(best) * bin_width_ + bin_width_ / 2.0;
    return out;
  }

 private:
  const Dictionary& dict_;
  SolverConfig cfg_;
  double range_min_;
  double bin_width_;
  const DenoiserMap* denoiser_ = nullptr;
  std::optional<DenoiserMap> owned_;
  std::optional<double> lipschitz_;
  std::unique_ptr<LassoAdmm> admm_;
};

inline ClassificationResult classify_four_step(const Dictionary& dict, std::span<const double> feature,
                                               const SolverConfig& cfg, const DenoiserMap* denoiser = nullptr,
                                               double range_min = 0.5, double bin_width = 1.0) {
  return FourStepClassifier(dict, cfg, denoiser, range_min, bin_width).classify(feature);
}

}  // namespace rbr
