#include "hte/base_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "hte/errors.hpp"

namespace hte {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Cdf { Logistic, MinExtremeValue };

// Derivatives of log P(zl < Z <= zu) with respect to (zu, zl).
struct IntervalTerm {
  double log_prob = 0.0;
  double du = 0.0, dl = 0.0;
  double duu = 0.0, dll = 0.0, dul = 0.0;
};

double log_cdf(Cdf cdf, double z) {
  if (cdf == Cdf::Logistic) return -softplus(-z);
  const double ez = std::exp(z);
  return std::log(-std::expm1(-ez));
}

double log_density(Cdf cdf, double z) {
  if (cdf == Cdf::Logistic) return -softplus(-z) - softplus(z);
  return z - std::exp(z);
}

// f'(z) / f(z)
double density_slope(Cdf cdf, double z) {
  if (cdf == Cdf::Logistic) return 1.0 - 2.0 * expit(z);
  return 1.0 - std::exp(z);
}

IntervalTerm interval_term(Cdf cdf, double zl, double zu) {
  IntervalTerm t;
  const bool lower_open = zl == -kInf;
  const bool upper_open = zu == kInf;
  if (lower_open && upper_open) return t;
  if (lower_open) {
    t.log_prob = log_cdf(cdf, zu);
    const double r = std::exp(log_density(cdf, zu) - t.log_prob);
    t.du = r;
    t.duu = r * density_slope(cdf, zu) - r * r;
    return t;
  }
  if (upper_open) {
    double r = 0.0;
    if (cdf == Cdf::Logistic) {
      t.log_prob = -softplus(zl);
      r = expit(zl);
    } else {
      t.log_prob = -std::exp(zl);
      r = std::exp(zl);
    }
    t.dl = -r;
    t.dll = -r * density_slope(cdf, zl) - r * r;
    return t;
  }
  if (cdf == Cdf::Logistic) {
    // F(zu) - F(zl) = F(zu) S(zl) (1 - exp(zl - zu))
    t.log_prob = -softplus(-zu) - softplus(zl) + std::log(-std::expm1(zl - zu));
  } else {
    // S(zl) - S(zu) = S(zl) (1 - exp(e^zl - e^zu))
    t.log_prob = -std::exp(zl) + std::log(-std::expm1(std::exp(zl) - std::exp(zu)));
  }
  const double ru = std::exp(log_density(cdf, zu) - t.log_prob);
  const double rl = std::exp(log_density(cdf, zl) - t.log_prob);
  t.du = ru;
  t.dl = -rl;
  t.duu = ru * density_slope(cdf, zu) - ru * ru;
  t.dll = -rl * density_slope(cdf, zl) - rl * rl;
  t.dul = ru * rl;
  return t;
}

// A linear index z = const + a^T theta entering one observation's loss.
struct LinearIndex {
  double value = 0.0;
  double deta = 0.0;  // dz / d eta
  // Sparse coefficients on theta other than through eta: (index, coefficient).
  int extra_index[2] = {-1, -1};
  double extra_coef[2] = {0.0, 0.0};
};

// Loss contribution of one observation in terms of at most two linear indices.
struct ObsLoss {
  double value = 0.0;
  int n_index = 0;
  LinearIndex z[2];
  double lz[2] = {0.0, 0.0};
  double lzz[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  // Additional direct terms on theta (Weibull -log nu2).
  int direct_index = -1;
  double direct_grad = 0.0;
  double direct_hess = 0.0;
};

// theta layout per family:
//   LinearGaussian, BinomialLogit: (mu, tau)
//   ProportionalOdds(K): (tau, theta_1..theta_{K-1})
//   WeibullPH: (tau, nu1, nu2)
//   CoxPartial: (tau)
// The optimizer works on an unconstrained u with theta = T(u):
//   ProportionalOdds: u = (tau, theta_1, log gaps) ; WeibullPH: u = (tau, nu1, log nu2).
int theta_size(const ModelFamily& f) {
  switch (f.kind) {
    case FamilyKind::LinearGaussian:
    case FamilyKind::BinomialLogit: return 2;
    case FamilyKind::ProportionalOdds: return f.num_levels;
    case FamilyKind::WeibullPH: return 3;
    case FamilyKind::CoxPartial: return 1;
  }
  return 0;
}

int tau_index(const ModelFamily& f) { return f.has_intercept() ? 1 : 0; }

Vec theta_of(const ModelFamily& f, const ModelParams& p) {
  Vec th(theta_size(f));
  switch (f.kind) {
    case FamilyKind::LinearGaussian:
    case FamilyKind::BinomialLogit:
      th << p.mu, p.tau;
      break;
    case FamilyKind::ProportionalOdds:
      if (static_cast<int>(p.theta.size()) != f.num_levels - 1)
        throw ValidationError("proportional odds needs K-1 thresholds");
      th(0) = p.tau;
      for (int k = 0; k < f.num_levels - 1; ++k) th(k + 1) = p.theta[k];
      break;
    case FamilyKind::WeibullPH:
      th << p.tau, p.nu1, p.nu2;
      break;
    case FamilyKind::CoxPartial:
      th << p.tau;
      break;
  }
  return th;
}

void check_params(const ModelFamily& f, const ModelParams& p) {
  if (f.kind == FamilyKind::LinearGaussian && !(p.phi > 0.0))
    throw ValidationError("Gaussian scale phi must be positive");
  if (f.kind == FamilyKind::ProportionalOdds) {
    for (std::size_t k = 1; k < p.theta.size(); ++k)
      if (!(p.theta[k] > p.theta[k - 1]))
        throw ValidationError("thresholds must be strictly increasing");
  }
  if (f.kind == FamilyKind::WeibullPH && !(p.nu2 > 0.0))
    throw ValidationError("Weibull nu2 must be positive");
}

ModelParams params_of(const ModelFamily& f, const Vec& th) {
  ModelParams p;
  switch (f.kind) {
    case FamilyKind::LinearGaussian:
    case FamilyKind::BinomialLogit:
      p.mu = th(0);
      p.tau = th(1);
      break;
    case FamilyKind::ProportionalOdds:
      p.tau = th(0);
      p.theta.assign(th.data() + 1, th.data() + th.size());
      break;
    case FamilyKind::WeibullPH:
      p.tau = th(0);
      p.nu1 = th(1);
      p.nu2 = th(2);
      break;
    case FamilyKind::CoxPartial:
      p.tau = th(0);
      break;
  }
  return p;
}

Vec theta_from_u(const ModelFamily& f, const Vec& u) {
  Vec th = u;
  if (f.kind == FamilyKind::ProportionalOdds) {
    for (int k = 2; k < th.size(); ++k) th(k) = th(k - 1) + std::exp(u(k));
  } else if (f.kind == FamilyKind::WeibullPH) {
    th(2) = std::exp(u(2));
  }
  return th;
}

Vec u_from_theta(const ModelFamily& f, const Vec& th) {
  Vec u = th;
  if (f.kind == FamilyKind::ProportionalOdds) {
    for (int k = 2; k < th.size(); ++k) u(k) = std::log(th(k) - th(k - 1));
  } else if (f.kind == FamilyKind::WeibullPH) {
    u(2) = std::log(th(2));
  }
  return u;
}

// Chain rule from theta-space derivatives to u-space.
void to_u_space(const ModelFamily& f, const Vec& u, Vec& g, Mat& h) {
  if (f.kind == FamilyKind::ProportionalOdds) {
    const int m = static_cast<int>(u.size());
    Mat jac = Mat::Identity(m, m);
    // theta_k = theta_1 + sum_{j=2..k} exp(u_j)
    for (int k = 1; k < m; ++k) {
      jac(k, 1) = 1.0;
      for (int j = 2; j <= k; ++j) jac(k, j) = std::exp(u(j));
    }
    Vec gu = jac.transpose() * g;
    Mat hu = jac.transpose() * h * jac;
    for (int j = 2; j < m; ++j) {
      double s = 0.0;
      for (int k = j; k < m; ++k) s += g(k);
      hu(j, j) += s * std::exp(u(j));
    }
    g = gu;
    h = hu;
  } else if (f.kind == FamilyKind::WeibullPH) {
    const double e = std::exp(u(2));
    h.row(2) *= e;
    h.col(2) *= e;
    h(2, 2) += g(2) * e;
    g(2) *= e;
  }
}

struct NodeView {
  const ModelFamily& family;
  const Dataset& data;
  const CenteredDesign& design;
  std::vector<std::size_t> rows;
  std::vector<double> weights;
  double weight_sum = 0.0;
  std::vector<std::size_t> time_order;  // Cox: positions into rows, time descending
};

NodeView make_view(const ModelFamily& family, const Dataset& data, const CenteredDesign& design,
                   std::span<const std::size_t> rows, std::span<const double> weights) {
  if (!family.accepts(data.outcome_kind()))
    throw ValidationError(fmt::format("family {} cannot model {} outcomes", family.name(),
                                      to_string(data.outcome_kind())));
  if (family.kind == FamilyKind::ProportionalOdds && data.num_levels() != family.num_levels)
    throw ValidationError("number of ordinal levels differs between data and family");
  if (design.size() != data.n()) throw ValidationError("design length differs from data");
  if (!weights.empty() && weights.size() != rows.size())
    throw ValidationError("weights and rows differ in length");
  NodeView v{family, data, design, {}, {}, 0.0, {}};
  v.rows.reserve(rows.size());
  v.weights.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and >= 0");
    if (w == 0.0) continue;
    v.rows.push_back(rows[k]);
    v.weights.push_back(w);
    v.weight_sum += w;
  }
  if (family.kind == FamilyKind::CoxPartial) {
    v.time_order.resize(v.rows.size());
    std::iota(v.time_order.begin(), v.time_order.end(), 0);
    std::stable_sort(v.time_order.begin(), v.time_order.end(), [&](std::size_t a, std::size_t b) {
      return std::get<Survival>(data[v.rows[a]].outcome).time >
             std::get<Survival>(data[v.rows[b]].outcome).time;
    });
  }
  return v;
}

double h_weibull(double nu1, double nu2, double y) {
  if (y <= 0.0) return -kInf;
  if (y == kInf) return kInf;
  return nu1 + nu2 * std::log(y);
}

// Loss of one observation for the separable families. For LinearGaussian the
// loss is the scaled squared error r^2 / (2 phi^2) + log(phi) + log(2 pi)/2.
ObsLoss observation_loss(const ModelFamily& f, const Vec& th, const Sample& s, double eta,
                         double phi) {
  ObsLoss o;
  switch (f.kind) {
    case FamilyKind::LinearGaussian: {
      const double y = std::get<Continuous>(s.outcome).value;
      const double r = y - eta;
      const double v = phi * phi;
      o.value = 0.5 * r * r / v + std::log(phi) + 0.5 * std::log(2.0 * std::numbers::pi);
      o.n_index = 1;
      o.z[0].value = eta;
      o.z[0].deta = 1.0;
      o.lz[0] = -r / v;
      o.lzz[0][0] = 1.0 / v;
      break;
    }
    case FamilyKind::BinomialLogit: {
      const int y = std::get<Binary>(s.outcome).value;
      const double pr = expit(eta);
      o.value = softplus(eta) - y * eta;
      o.n_index = 1;
      o.z[0].value = eta;
      o.z[0].deta = 1.0;
      o.lz[0] = pr - y;
      o.lzz[0][0] = pr * (1.0 - pr);
      break;
    }
    case FamilyKind::ProportionalOdds: {
      const int k = std::get<Ordinal>(s.outcome).level;
      const int kk = f.num_levels;
      const double zu = k < kk ? th(k) - eta : kInf;
      const double zl = k > 1 ? th(k - 1) - eta : -kInf;
      const IntervalTerm t = interval_term(Cdf::Logistic, zl, zu);
      if (!std::isfinite(t.log_prob))
        throw EvaluationError("ordinal category probability is not positive");
      o.value = -t.log_prob;
      o.n_index = 2;
      o.z[0] = {zu, -1.0, {k < kk ? k : -1, -1}, {1.0, 0.0}};
      o.z[1] = {zl, -1.0, {k > 1 ? k - 1 : -1, -1}, {1.0, 0.0}};
      o.lz[0] = -t.du;
      o.lz[1] = -t.dl;
      o.lzz[0][0] = -t.duu;
      o.lzz[1][1] = -t.dll;
      o.lzz[0][1] = o.lzz[1][0] = -t.dul;
      break;
    }
    case FamilyKind::WeibullPH: {
      const double nu1 = th(1), nu2 = th(2);
      if (const auto* sv = std::get_if<Survival>(&s.outcome)) {
        const double ly = std::log(sv->time);
        const double z = nu1 + nu2 * ly - eta;
        const double ez = std::exp(z);
        o.n_index = 1;
        o.z[0] = {z, -1.0, {1, 2}, {1.0, ly}};
        if (sv->event) {
          // -log f(z) - log h'(y) with f(z) = exp(z - e^z), h'(y) = nu2 / y
          o.value = ez - z - std::log(nu2) + ly;
          o.lz[0] = ez - 1.0;
          o.direct_index = 2;
          o.direct_grad = -1.0 / nu2;
          o.direct_hess = 1.0 / (nu2 * nu2);
        } else {
          o.value = ez;
          o.lz[0] = ez;
        }
        o.lzz[0][0] = ez;
      } else {
        const auto& iv = std::get<Interval>(s.outcome);
        const double zu = h_weibull(nu1, nu2, iv.upper) - eta;
        const double zl = h_weibull(nu1, nu2, iv.lower) - eta;
        const IntervalTerm t = interval_term(Cdf::MinExtremeValue, zl, zu);
        if (!std::isfinite(t.log_prob))
          throw EvaluationError("interval probability is not positive");
        o.value = -t.log_prob;
        o.n_index = 2;
        const bool fu = std::isfinite(zu), fl = std::isfinite(zl);
        o.z[0] = {zu, -1.0, {fu ? 1 : -1, fu ? 2 : -1}, {1.0, fu ? std::log(iv.upper) : 0.0}};
        o.z[1] = {zl, -1.0, {fl ? 1 : -1, fl ? 2 : -1}, {1.0, fl ? std::log(iv.lower) : 0.0}};
        o.lz[0] = -t.du;
        o.lz[1] = -t.dl;
        o.lzz[0][0] = -t.duu;
        o.lzz[1][1] = -t.dll;
        o.lzz[0][1] = o.lzz[1][0] = -t.dul;
      }
      break;
    }
    case FamilyKind::CoxPartial:
      break;
  }
  if (!std::isfinite(o.value)) throw EvaluationError("non-finite likelihood contribution");
  return o;
}

struct Evaluation {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

double eta_of(const NodeView& v, const Vec& th, std::size_t k) {
  const std::size_t i = v.rows[k];
  const double mu = v.family.has_intercept() ? th(0) : 0.0;
  return v.design.offset[i] + mu + th(tau_index(v.family)) * v.design.treatment_regressor[i];
}

Evaluation evaluate_cox(const NodeView& v, const Vec& th, bool derivatives) {
  Evaluation e;
  e.grad = Vec::Zero(1);
  e.hess = Mat::Zero(1, 1);
  const std::size_t m = v.rows.size();
  if (m == 0) return e;
  std::vector<double> eta(m);
  double shift = -kInf;
  for (std::size_t k = 0; k < m; ++k) {
    eta[k] = eta_of(v, th, k);
    shift = std::max(shift, -eta[k]);
  }
  // Breslow: every event at time t uses the full risk set {j : t_j >= t}.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  std::size_t pos = 0;
  while (pos < m) {
    const double t = std::get<Survival>(v.data[v.rows[v.time_order[pos]]].outcome).time;
    std::size_t end = pos;
    while (end < m && std::get<Survival>(v.data[v.rows[v.time_order[end]]].outcome).time == t) {
      const std::size_t k = v.time_order[end];
      const double x = v.design.treatment_regressor[v.rows[k]];
      const double r = v.weights[k] * std::exp(-eta[k] - shift);
      s0 += r;
      s1 += r * x;
      s2 += r * x * x;
      ++end;
    }
    for (std::size_t q = pos; q < end; ++q) {
      const std::size_t k = v.time_order[q];
      if (!std::get<Survival>(v.data[v.rows[k]].outcome).event) continue;
      const double w = v.weights[k];
      const double x = v.design.treatment_regressor[v.rows[k]];
      e.value += w * (eta[k] + std::log(s0) + shift);
      if (derivatives) {
        const double a = s1 / s0;
        e.grad(0) += w * (x - a);
        e.hess(0, 0) += w * (s2 / s0 - a * a);
      }
    }
    pos = end;
  }
  if (!std::isfinite(e.value)) throw EvaluationError("non-finite partial likelihood");
  return e;
}

// Weighted loss and theta-space derivatives. For LinearGaussian the optimizer
// passes phi = 1, which leaves the (mu, tau) argmin unchanged.
Evaluation evaluate_theta(const NodeView& v, const Vec& th, double phi, bool derivatives) {
  if (v.family.kind == FamilyKind::CoxPartial) return evaluate_cox(v, th, derivatives);
  const int m = static_cast<int>(th.size());
  Evaluation e;
  e.grad = Vec::Zero(m);
  e.hess = Mat::Zero(m, m);
  const bool intercept = v.family.has_intercept();
  const int ti = tau_index(v.family);
  int idx[4];
  for (std::size_t k = 0; k < v.rows.size(); ++k) {
    const std::size_t i = v.rows[k];
    const double w = v.weights[k];
    const double x = v.design.treatment_regressor[i];
    const ObsLoss o = observation_loss(v.family, th, v.data[i], eta_of(v, th, k), phi);
    e.value += w * o.value;
    if (!derivatives) continue;
    // Dense coefficient vectors a_z over theta for each linear index.
    double a[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};
    for (int z = 0; z < o.n_index; ++z) {
      if (intercept) a[z][0] += o.z[z].deta;
      a[z][ti] += o.z[z].deta * x;
      for (int q = 0; q < 2; ++q)
        if (o.z[z].extra_index[q] >= 0) a[z][o.z[z].extra_index[q]] += o.z[z].extra_coef[q];
    }
    int nnz = 0;
    for (int c = 0; c < m; ++c) {
      if (a[0][c] != 0.0 || (o.n_index > 1 && a[1][c] != 0.0) || c == o.direct_index) {
        idx[nnz++] = c;
      }
    }
    for (int r = 0; r < nnz; ++r) {
      const int c = idx[r];
      double g = 0.0;
      for (int z = 0; z < o.n_index; ++z) g += o.lz[z] * a[z][c];
      e.grad(c) += w * g;
      for (int s = 0; s <= r; ++s) {
        const int d = idx[s];
        double h = 0.0;
        for (int z1 = 0; z1 < o.n_index; ++z1)
          for (int z2 = 0; z2 < o.n_index; ++z2) h += o.lzz[z1][z2] * a[z1][c] * a[z2][d];
        e.hess(c, d) += w * h;
      }
    }
    if (o.direct_index >= 0) {
      e.grad(o.direct_index) += w * o.direct_grad;
      e.hess(o.direct_index, o.direct_index) += w * o.direct_hess;
    }
  }
  e.hess = e.hess.selfadjointView<Eigen::Lower>();
  return e;
}

// Derivative of each observation's loss with respect to its own eta.
std::vector<double> eta_derivatives(const NodeView& v, const Vec& th, double phi) {
  const std::size_t m = v.rows.size();
  std::vector<double> d(m, 0.0);
  if (v.family.kind != FamilyKind::CoxPartial) {
    for (std::size_t k = 0; k < m; ++k) {
      const ObsLoss o = observation_loss(v.family, th, v.data[v.rows[k]], eta_of(v, th, k), phi);
      for (int z = 0; z < o.n_index; ++z) d[k] += o.lz[z] * o.z[z].deta;
    }
    return d;
  }
  // d/d eta_k of the weighted partial likelihood:
  //   w_k delta_k - w_k exp(-eta_k) * sum_{events i : t_i <= t_k} w_i / S_i.
  std::vector<double> eta(m);
  double shift = -kInf;
  for (std::size_t k = 0; k < m; ++k) {
    eta[k] = eta_of(v, th, k);
    shift = std::max(shift, -eta[k]);
  }
  auto time_at = [&](std::size_t q) {
    return std::get<Survival>(v.data[v.rows[v.time_order[q]]].outcome).time;
  };
  // Risk-set sums per distinct time (descending), then cumulative hazard ascending.
  std::vector<std::size_t> group_start;
  std::vector<double> group_hazard;
  double s0 = 0.0;
  std::size_t pos = 0;
  while (pos < m) {
    const double t = time_at(pos);
    std::size_t end = pos;
    double events = 0.0;
    while (end < m && time_at(end) == t) {
      const std::size_t k = v.time_order[end];
      s0 += v.weights[k] * std::exp(-eta[k] - shift);
      if (std::get<Survival>(v.data[v.rows[k]].outcome).event) events += v.weights[k];
      ++end;
    }
    group_start.push_back(pos);
    group_hazard.push_back(events / s0);
    pos = end;
  }
  group_start.push_back(m);
  double cumulative = 0.0;
  for (std::size_t g = group_hazard.size(); g-- > 0;) {
    cumulative += group_hazard[g];
    for (std::size_t q = group_start[g]; q < group_start[g + 1]; ++q) {
      const std::size_t k = v.time_order[q];
      const bool event = std::get<Survival>(v.data[v.rows[k]].outcome).event;
      d[k] = v.weights[k] * ((event ? 1.0 : 0.0) - std::exp(-eta[k] - shift) * cumulative);
    }
  }
  return d;
}

void require_treatment_variation(const NodeView& v) {
  if (v.weight_sum <= 0.0) throw RankDeficiencyError("node has zero total weight");
  double mean = 0.0;
  for (std::size_t k = 0; k < v.rows.size(); ++k)
    mean += v.weights[k] * v.design.treatment_regressor[v.rows[k]];
  mean /= v.weight_sum;
  double var = 0.0;
  for (std::size_t k = 0; k < v.rows.size(); ++k) {
    const double d = v.design.treatment_regressor[v.rows[k]] - mean;
    var += v.weights[k] * d * d;
  }
  var /= v.weight_sum;
  if (!(var > 1e-12 * std::max(1.0, mean * mean)))
    throw RankDeficiencyError("no variation in the treatment regressor");
}

double weighted_mean_offset(const NodeView& v) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.rows.size(); ++k) s += v.weights[k] * v.design.offset[v.rows[k]];
  return s / v.weight_sum;
}

Vec initial_theta(const NodeView& v) {
  const ModelFamily& f = v.family;
  Vec th = Vec::Zero(theta_size(f));
  const double off = weighted_mean_offset(v);
  switch (f.kind) {
    case FamilyKind::LinearGaussian: {
      double s = 0.0;
      for (std::size_t k = 0; k < v.rows.size(); ++k)
        s += v.weights[k] * std::get<Continuous>(v.data[v.rows[k]].outcome).value;
      th(0) = s / v.weight_sum - off;
      break;
    }
    case FamilyKind::BinomialLogit: {
      double s = 0.0;
      for (std::size_t k = 0; k < v.rows.size(); ++k)
        s += v.weights[k] * std::get<Binary>(v.data[v.rows[k]].outcome).value;
      const double eps = 0.5 / static_cast<double>(v.rows.size());
      th(0) = logit(std::clamp(s / v.weight_sum, eps, 1.0 - eps)) - off;
      break;
    }
    case FamilyKind::ProportionalOdds: {
      const int kk = f.num_levels;
      std::vector<double> freq(kk, 0.0);
      for (std::size_t k = 0; k < v.rows.size(); ++k)
        freq[std::get<Ordinal>(v.data[v.rows[k]].outcome).level - 1] += v.weights[k];
      const double eps = 0.1 * v.weight_sum / static_cast<double>(v.rows.size());
      double total = 0.0;
      for (double& q : freq) total += (q += eps);
      double cum = 0.0;
      for (int k = 1; k < kk; ++k) {
        cum += freq[k - 1];
        th(k) = logit(cum / total) + off;
      }
      break;
    }
    case FamilyKind::WeibullPH: {
      double events = 0.0, exposure = 0.0;
      for (std::size_t k = 0; k < v.rows.size(); ++k) {
        const Sample& s = v.data[v.rows[k]];
        if (const auto* sv = std::get_if<Survival>(&s.outcome)) {
          events += v.weights[k] * (sv->event ? 1.0 : 0.0);
          exposure += v.weights[k] * sv->time;
        } else {
          const auto& iv = std::get<Interval>(s.outcome);
          const double lo = std::max(iv.lower, 0.0);
          if (std::isfinite(iv.upper)) {
            events += v.weights[k];
            exposure += v.weights[k] * 0.5 * (lo + iv.upper);
          } else {
            exposure += v.weights[k] * lo;
          }
        }
      }
      const double rate = std::max(events, 0.5) / std::max(exposure, 1e-300);
      th(1) = std::log(rate) + off;
      th(2) = 1.0;
      break;
    }
    case FamilyKind::CoxPartial:
      break;
  }
  return th;
}

// Bounds on u: effects are capped, nuisance coordinates get wide boxes.
void u_bounds(const ModelFamily& f, const NewtonOptions& opt, Vec& lo, Vec& hi) {
  const int m = theta_size(f);
  lo = Vec::Constant(m, -kInf);
  hi = Vec::Constant(m, kInf);
  if (f.kind == FamilyKind::LinearGaussian) return;
  const int ti = tau_index(f);
  lo(ti) = -opt.effect_cap;
  hi(ti) = opt.effect_cap;
  if (f.has_intercept()) {
    lo(0) = -opt.effect_cap;
    hi(0) = opt.effect_cap;
  }
  if (f.kind == FamilyKind::ProportionalOdds) {
    lo(1) = -50.0;
    hi(1) = 50.0;
    for (int k = 2; k < m; ++k) {
      lo(k) = -15.0;
      hi(k) = std::log(100.0);
    }
  } else if (f.kind == FamilyKind::WeibullPH) {
    lo(1) = -50.0;
    hi(1) = 50.0;
    lo(2) = -15.0;
    hi(2) = std::log(100.0);
  }
}

ModelParams newton_fit(const NodeView& v, const NewtonOptions& opt) {
  require_treatment_variation(v);
  const ModelFamily& f = v.family;
  const int m = theta_size(f);
  Vec u = u_from_theta(f, initial_theta(v));
  Vec lo, hi;
  u_bounds(f, opt, lo, hi);
  for (int c = 0; c < m; ++c) u(c) = std::clamp(u(c), lo(c), hi(c));
  std::vector<bool> frozen(m, false);
  bool capped = false;

  auto eval_u = [&](const Vec& uu, bool deriv) {
    Evaluation e = evaluate_theta(v, theta_from_u(f, uu), 1.0, deriv);
    if (deriv) to_u_space(f, uu, e.grad, e.hess);
    return e;
  };

  Evaluation cur = eval_u(u, true);
  if (opt.trace) opt.trace->push_back(cur.value);
  double gnorm = kInf;
  int it = 0;
  for (; it <= opt.max_iterations; ++it) {
    Vec g = cur.grad;
    for (int c = 0; c < m; ++c)
      if (frozen[c]) g(c) = 0.0;
    gnorm = g.cwiseAbs().maxCoeff() / v.weight_sum;
    if (!std::isfinite(gnorm)) throw ConvergenceError("non-finite gradient", gnorm);
    if (gnorm < opt.gradient_tolerance || it == opt.max_iterations) break;

    std::vector<int> free_idx;
    for (int c = 0; c < m; ++c)
      if (!frozen[c]) free_idx.push_back(c);
    const int nf = static_cast<int>(free_idx.size());
    if (nf == 0) break;
    Mat hf(nf, nf);
    Vec gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf(a) = g(free_idx[a]);
      for (int b = 0; b < nf; ++b) hf(a, b) = cur.hess(free_idx[a], free_idx[b]);
    }
    // Levenberg damping until the step is a descent direction.
    Vec df;
    double lambda = 0.0;
    const double scale = std::max(hf.diagonal().cwiseAbs().maxCoeff(), 1e-12 * v.weight_sum);
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LDLT<Mat> ldlt(hf + lambda * Mat::Identity(nf, nf));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        df = ldlt.solve(-gf);
        if (df.allFinite() && gf.dot(df) < 0.0) break;
      }
      lambda = lambda == 0.0 ? 1e-8 * scale : lambda * 10.0;
      df.resize(0);
    }
    if (df.size() == 0) df = -gf / scale;
    Vec d = Vec::Zero(m);
    for (int a = 0; a < nf; ++a) d(free_idx[a]) = df(a);

    // Largest step keeping u inside its box; the blocking coordinate freezes.
    double t_max = 1.0;
    int blocking = -1;
    for (int c = 0; c < m; ++c) {
      if (d(c) > 0.0 && std::isfinite(hi(c))) {
        const double t = (hi(c) - u(c)) / d(c);
        if (t < t_max) t_max = t, blocking = c;
      } else if (d(c) < 0.0 && std::isfinite(lo(c))) {
        const double t = (lo(c) - u(c)) / d(c);
        if (t < t_max) t_max = t, blocking = c;
      }
    }
    if (blocking >= 0 && t_max <= 0.0) {
      u(blocking) = d(blocking) > 0.0 ? hi(blocking) : lo(blocking);
      frozen[blocking] = true;
      capped = true;
      cur = eval_u(u, true);
      continue;
    }
    const double slope = g.dot(d);
    double step = t_max;
    bool accepted = false;
    Evaluation next;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      if (step <= 0.0) break;
      const Vec trial = u + step * d;
      try {
        next = eval_u(trial, false);
      } catch (const EvaluationError&) {
        continue;
      }
      if (std::isfinite(next.value) && next.value <= cur.value + 1e-4 * step * slope) {
        u = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No decrease representable in floating point: accept a near-stationary
      // point, otherwise report the stall.
      if (gnorm < 1e-5) break;
      throw ConvergenceError(fmt::format("{} fit: line search failed (gradient {:.3g})",
                                         f.name(), gnorm),
                             gnorm);
    }
    if (blocking >= 0 && step == t_max) {
      u(blocking) = d(blocking) > 0.0 ? hi(blocking) : lo(blocking);
      frozen[blocking] = true;
      capped = true;
    }
    cur = eval_u(u, true);
    if (opt.trace) opt.trace->push_back(cur.value);
  }
  if (it >= opt.max_iterations && gnorm > 1e-5)
    throw ConvergenceError(fmt::format("{} fit did not converge in {} iterations (gradient {:.3g})",
                                       f.name(), opt.max_iterations, gnorm),
                           gnorm);

  const Vec th = theta_from_u(f, u);
  ModelParams p = params_of(f, th);
  if (f.kind == FamilyKind::LinearGaussian) {
    double rss = 0.0;
    for (std::size_t k = 0; k < v.rows.size(); ++k) {
      const double r = std::get<Continuous>(v.data[v.rows[k]].outcome).value - eta_of(v, th, k);
      rss += v.weights[k] * r * r;
    }
    p.phi = std::max(std::sqrt(rss / v.weight_sum), 1e-8);
  }
  p.capped = capped;
  p.iterations = it;
  p.gradient_norm = gnorm;
  return p;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

double expit(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double softplus(double z) {
  if (z > 30.0) return z + std::exp(-z);
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

ModelFamily ModelFamily::proportional_odds(int k) {
  if (k < 2) throw ArgumentError("proportional odds needs K >= 2");
  return {FamilyKind::ProportionalOdds, k};
}

ModelFamily ModelFamily::from_string(const std::string& name, int num_levels) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "gaussian" || n == "normal" || n == "linear") return linear_gaussian();
  if (n == "binomial" || n == "logit" || n == "logistic") return binomial_logit();
  if (n == "ordinal" || n == "po" || n == "multinomial" || n == "proportional_odds")
    return proportional_odds(num_levels);
  if (n == "weibull") return weibull_ph();
  if (n == "cox") return cox_partial();
  throw ArgumentError("unknown family '" + name + "'");
}

std::string ModelFamily::name() const {
  switch (kind) {
    case FamilyKind::LinearGaussian: return "gaussian";
    case FamilyKind::BinomialLogit: return "binomial";
    case FamilyKind::ProportionalOdds: return "ordinal";
    case FamilyKind::WeibullPH: return "weibull";
    case FamilyKind::CoxPartial: return "cox";
  }
  return "?";
}

bool ModelFamily::has_intercept() const {
  return kind == FamilyKind::LinearGaussian || kind == FamilyKind::BinomialLogit;
}

std::size_t ModelFamily::num_free_parameters() const {
  switch (kind) {
    case FamilyKind::LinearGaussian: return 3;
    case FamilyKind::BinomialLogit: return 2;
    case FamilyKind::ProportionalOdds: return static_cast<std::size_t>(num_levels);
    case FamilyKind::WeibullPH: return 3;
    case FamilyKind::CoxPartial: return 1;
  }
  return 0;
}

bool ModelFamily::accepts(OutcomeKind k) const {
  switch (kind) {
    case FamilyKind::LinearGaussian: return k == OutcomeKind::Continuous;
    case FamilyKind::BinomialLogit: return k == OutcomeKind::Binary;
    case FamilyKind::ProportionalOdds: return k == OutcomeKind::Ordinal;
    case FamilyKind::WeibullPH: return k == OutcomeKind::Survival || k == OutcomeKind::Interval;
    case FamilyKind::CoxPartial: return k == OutcomeKind::Survival;
  }
  return false;
}

double ModelFamily::inverse_link(double z) const {
  switch (kind) {
    case FamilyKind::LinearGaussian: return z;
    case FamilyKind::BinomialLogit:
    case FamilyKind::ProportionalOdds: return expit(z);
    case FamilyKind::WeibullPH:
    case FamilyKind::CoxPartial: return -std::expm1(-std::exp(z));
  }
  return z;
}

std::optional<double> ModelFamily::canonical_variance(double eta) const {
  if (kind == FamilyKind::LinearGaussian) return 1.0;
  if (kind == FamilyKind::BinomialLogit) {
    const double p = expit(eta);
    return p * (1.0 - p);
  }
  return std::nullopt;
}

ModelParams fit_rows(const ModelFamily& family, const Dataset& data, const CenteredDesign& design,
                     std::span<const std::size_t> rows, std::span<const double> weights,
                     const NewtonOptions& options) {
  const NodeView v = make_view(family, data, design, rows, weights);
  return newton_fit(v, options);
}

ModelParams fit_node(const ModelFamily& family, const Dataset& data,
                     std::span<const double> weights, const CenteredDesign& design,
                     const NewtonOptions& options) {
  if (weights.size() != data.n()) throw ValidationError("weights length differs from data");
  const auto rows = all_rows(data.n());
  return fit_rows(family, data, design, rows, weights, options);
}

double neg_log_lik_rows(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                        const CenteredDesign& design, std::span<const std::size_t> rows,
                        std::span<const double> weights) {
  check_params(family, params);
  const NodeView v = make_view(family, data, design, rows, weights);
  return evaluate_theta(v, theta_of(family, params), params.phi, false).value;
}

double neg_log_lik(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                   std::span<const double> weights, const CenteredDesign& design) {
  if (weights.size() != data.n()) throw ValidationError("weights length differs from data");
  const auto rows = all_rows(data.n());
  return neg_log_lik_rows(family, params, data, design, rows, weights);
}

ScoreMatrix score_rows(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                       const CenteredDesign& design, std::span<const std::size_t> rows) {
  check_params(family, params);
  const NodeView v = make_view(family, data, design, rows, {});
  const std::vector<double> d = eta_derivatives(v, theta_of(family, params), params.phi);
  ScoreMatrix s(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    s(r, 0) = -d[k];
    s(r, 1) = -d[k] * design.treatment_regressor[rows[k]];
  }
  return s;
}

ScoreMatrix score(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                  const CenteredDesign& design) {
  const auto rows = all_rows(data.n());
  return score_rows(family, params, data, design, rows);
}

EtaLoss observation_eta_loss(const ModelFamily& family, const ModelParams& params,
                             const OutcomeValue& y, double eta) {
  if (family.kind == FamilyKind::CoxPartial)
    throw ArgumentError("the partial likelihood does not split into observation losses");
  check_params(family, params);
  Sample s;
  s.outcome = y;
  const ObsLoss o = observation_loss(family, theta_of(family, params), s, eta, params.phi);
  EtaLoss e;
  e.value = o.value;
  for (int z = 0; z < o.n_index; ++z) {
    e.d1 += o.lz[z] * o.z[z].deta;
    for (int q = 0; q < o.n_index; ++q) e.d2 += o.lzz[z][q] * o.z[z].deta * o.z[q].deta;
  }
  return e;
}

std::vector<double> ordinal_probabilities(std::span<const double> theta, double eta) {
  const std::size_t kk = theta.size() + 1;
  std::vector<double> p(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    const double zu = k + 1 < kk ? theta[k] - eta : kInf;
    const double zl = k > 0 ? theta[k - 1] - eta : -kInf;
    p[k] = std::exp(interval_term(Cdf::Logistic, zl, zu).log_prob);
  }
  return p;
}

}  // namespace hte
