#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace topo {

// Method-of-moving-asymptotes design update (separable convex subproblem with
// a primal-dual interior point subsolver). Asymptotes shrink/grow by 0.7/1.2
// depending on the oscillation of the last two iterates. On subsolver
// breakdown the caller is expected to fall back to a projected descent step.
class MmaOptimizer {
 public:
  MmaOptimizer(int n, int m, double move_limit = 0.2)
      : n_(n), m_(m), move_(move_limit), iter_(0) {
    xold1_ = Eigen::VectorXd::Zero(n);
    xold2_ = Eigen::VectorXd::Zero(n);
    low_ = Eigen::VectorXd::Zero(n);
    upp_ = Eigen::VectorXd::Zero(n);
  }

  int n() const { return n_; }
  int m() const { return m_; }
  int iteration() const { return iter_; }

  // Optimizer memory, exposed so it can be transferred across mesh changes.
  Eigen::VectorXd& xold1() { return xold1_; }
  Eigen::VectorXd& xold2() { return xold2_; }
  Eigen::VectorXd& lower_asymptote() { return low_; }
  Eigen::VectorXd& upper_asymptote() { return upp_; }

  // Replaces the memory after a mesh change (fields already transferred).
  void reset_after_transfer(int n_new, const Eigen::VectorXd& xold1,
                            const Eigen::VectorXd& xold2, const Eigen::VectorXd& low,
                            const Eigen::VectorXd& upp) {
    n_ = n_new;
    xold1_ = xold1;
    xold2_ = xold2;
    low_ = low;
    upp_ = upp;
  }

  // One design update. df0dx: objective gradient; fval (m): constraint values
  // (feasible <= 0); dfdx: m x n constraint gradients. Returns the new design
  // inside [xmin, xmax] and the move limits. success=false signals that the
  // subsolver failed and the returned x is a projected descent fallback.
  Eigen::VectorXd update(const Eigen::VectorXd& x, const Eigen::VectorXd& df0dx,
                         const Eigen::VectorXd& fval, const Eigen::MatrixXd& dfdx,
                         double xmin = 0.0, double xmax = 1.0, bool* success = nullptr) {
    if (x.size() != n_ || df0dx.size() != n_ || fval.size() != m_ || dfdx.rows() != m_ ||
        dfdx.cols() != n_)
      throw std::invalid_argument("MmaOptimizer::update: dimension mismatch");
    ++iter_;
    const double range = xmax - xmin;

    if (iter_ <= 2) {
      low_ = x.array() - 0.5 * range;
      upp_ = x.array() + 0.5 * range;
    } else {
      for (int j = 0; j < n_; ++j) {
        double zz = (x[j] - xold1_[j]) * (xold1_[j] - xold2_[j]);
        double factor = zz > 0 ? 1.2 : (zz < 0 ? 0.7 : 1.0);
        low_[j] = x[j] - factor * (xold1_[j] - low_[j]);
        upp_[j] = x[j] + factor * (upp_[j] - xold1_[j]);
        low_[j] = std::clamp(low_[j], x[j] - 10.0 * range, x[j] - 0.01 * range);
        upp_[j] = std::clamp(upp_[j], x[j] + 0.01 * range, x[j] + 10.0 * range);
      }
    }

    const double albefa = 0.1, raa0 = 1e-5;
    Eigen::VectorXd alfa(n_), beta(n_);
    for (int j = 0; j < n_; ++j) {
      alfa[j] = std::max({xmin, low_[j] + albefa * (x[j] - low_[j]), x[j] - move_ * range});
      beta[j] = std::min({xmax, upp_[j] - albefa * (upp_[j] - x[j]), x[j] + move_ * range});
      if (beta[j] < alfa[j]) beta[j] = alfa[j];
    }

    Eigen::VectorXd p0(n_), q0(n_);
    Eigen::MatrixXd P(m_, n_), Q(m_, n_);
    Eigen::VectorXd b = -fval;
    for (int j = 0; j < n_; ++j) {
      double ux = upp_[j] - x[j], xl = x[j] - low_[j];
      double dpos = std::max(df0dx[j], 0.0), dneg = std::max(-df0dx[j], 0.0);
      double pert = 0.001 * std::abs(df0dx[j]) + raa0 / range;
      p0[j] = ux * ux * (dpos + pert);
      q0[j] = xl * xl * (dneg + pert);
      for (int i = 0; i < m_; ++i) {
        double g = dfdx(i, j);
        double gpert = 0.001 * std::abs(g) + raa0 / range;
        P(i, j) = ux * ux * (std::max(g, 0.0) + gpert);
        Q(i, j) = xl * xl * (std::max(-g, 0.0) + gpert);
        b[i] += P(i, j) / ux + Q(i, j) / xl;
      }
    }

    Eigen::VectorXd xnew(n_);
    bool ok = subsolve(p0, q0, P, Q, b, alfa, beta, xnew);
    if (!ok) {
      // Scaled steepest-descent projection fallback.
      double gmax = std::max(df0dx.cwiseAbs().maxCoeff(), 1e-30);
      for (int j = 0; j < n_; ++j)
        xnew[j] = std::clamp(x[j] - move_ * range * df0dx[j] / gmax, alfa[j], beta[j]);
    }
    if (success) *success = ok;
    xold2_ = xold1_;
    xold1_ = x;
    return xnew;
  }

 private:
  // Primal-dual interior point solve of the MMA subproblem
  //   min  sum_j (p0j/(uj-xj) + q0j/(xj-lj)) + a0 z + sum_i (ci yi + di yi^2/2)
  //   s.t. sum_j (Pij/(uj-xj) + Qij/(xj-lj)) - ai z - yi <= bi,  alfa<=x<=beta.
  bool subsolve(const Eigen::VectorXd& p0, const Eigen::VectorXd& q0, const Eigen::MatrixXd& P,
                const Eigen::MatrixXd& Q, const Eigen::VectorXd& b, const Eigen::VectorXd& alfa,
                const Eigen::VectorXd& beta, Eigen::VectorXd& xout) const {
    const double a0 = 1.0;
    const Eigen::VectorXd a = Eigen::VectorXd::Zero(m_);
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(m_, 1000.0);
    const Eigen::VectorXd d = Eigen::VectorXd::Ones(m_);
    const double epsimin = 1e-7;

    Eigen::VectorXd x = 0.5 * (alfa + beta);
    Eigen::VectorXd y = Eigen::VectorXd::Ones(m_);
    double z = 1.0, zet = 1.0;
    Eigen::VectorXd lam = Eigen::VectorXd::Ones(m_);
    Eigen::VectorXd xsi = ((x - alfa).cwiseInverse()).cwiseMax(1.0);
    Eigen::VectorXd eta = ((beta - x).cwiseInverse()).cwiseMax(1.0);
    Eigen::VectorXd mu = (0.5 * c).cwiseMax(1.0);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(m_);

    auto residual = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& yv, double zv,
                        const Eigen::VectorXd& lamv, const Eigen::VectorXd& xsiv,
                        const Eigen::VectorXd& etav, const Eigen::VectorXd& muv, double zetv,
                        const Eigen::VectorXd& sv, double epsi, double& norm2,
                        double& normmax) {
      Eigen::VectorXd ux1 = upp_ - xv, xl1 = xv - low_;
      Eigen::VectorXd plam = p0 + P.transpose() * lamv;
      Eigen::VectorXd qlam = q0 + Q.transpose() * lamv;
      Eigen::VectorXd gvec = P * ux1.cwiseInverse() + Q * xl1.cwiseInverse();
      Eigen::VectorXd rex = plam.cwiseQuotient(ux1.cwiseAbs2()) -
                            qlam.cwiseQuotient(xl1.cwiseAbs2()) - xsiv + etav;
      Eigen::VectorXd rey = c + d.cwiseProduct(yv) - muv - lamv;
      double rez = a0 - zetv - a.dot(lamv);
      Eigen::VectorXd relam = gvec - a * zv - yv + sv - b;
      Eigen::VectorXd rexsi = xsiv.cwiseProduct(xv - alfa).array() - epsi;
      Eigen::VectorXd reeta = etav.cwiseProduct(beta - xv).array() - epsi;
      Eigen::VectorXd remu = muv.cwiseProduct(yv).array() - epsi;
      double rezet = zetv * zv - epsi;
      Eigen::VectorXd res = lamv.cwiseProduct(sv).array() - epsi;
      norm2 = rex.squaredNorm() + rey.squaredNorm() + rez * rez + relam.squaredNorm() +
              rexsi.squaredNorm() + reeta.squaredNorm() + remu.squaredNorm() + rezet * rezet +
              res.squaredNorm();
      norm2 = std::sqrt(norm2);
      normmax = std::max({rex.cwiseAbs().maxCoeff(), rey.size() ? rey.cwiseAbs().maxCoeff() : 0.0,
                          std::abs(rez), relam.size() ? relam.cwiseAbs().maxCoeff() : 0.0,
                          rexsi.cwiseAbs().maxCoeff(), reeta.cwiseAbs().maxCoeff(),
                          remu.size() ? remu.cwiseAbs().maxCoeff() : 0.0, std::abs(rezet),
                          res.size() ? res.cwiseAbs().maxCoeff() : 0.0});
    };

    double epsi = 1.0;
    int outer_guard = 0;
    while (epsi > epsimin) {
      if (++outer_guard > 200) return false;
      double norm2, normmax;
      residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi, norm2, normmax);
      int inner = 0;
      while (normmax > 0.9 * epsi && inner < 200) {
        ++inner;
        Eigen::VectorXd ux1 = upp_ - x, xl1 = x - low_;
        Eigen::VectorXd ux2 = ux1.cwiseAbs2(), xl2 = xl1.cwiseAbs2();
        Eigen::VectorXd ux3 = ux2.cwiseProduct(ux1), xl3 = xl2.cwiseProduct(xl1);
        Eigen::VectorXd uxinv1 = ux1.cwiseInverse(), xlinv1 = xl1.cwiseInverse();
        Eigen::VectorXd plam = p0 + P.transpose() * lam;
        Eigen::VectorXd qlam = q0 + Q.transpose() * lam;
        Eigen::VectorXd gvec = P * uxinv1 + Q * xlinv1;
        Eigen::MatrixXd GG(m_, n_);
        for (int i = 0; i < m_; ++i)
          for (int j = 0; j < n_; ++j) GG(i, j) = P(i, j) / ux2[j] - Q(i, j) / xl2[j];
        Eigen::VectorXd dpsidx = plam.cwiseQuotient(ux2) - qlam.cwiseQuotient(xl2);
        Eigen::VectorXd delx = dpsidx - epsi * (x - alfa).cwiseInverse() +
                               epsi * (beta - x).cwiseInverse();
        Eigen::VectorXd dely = c + d.cwiseProduct(y) - lam - epsi * y.cwiseInverse();
        double delz = a0 - a.dot(lam) - epsi / z;
        Eigen::VectorXd dellam = gvec - a * z - y - b + epsi * lam.cwiseInverse();
        Eigen::VectorXd diagx = 2.0 * (plam.cwiseQuotient(ux3) + qlam.cwiseQuotient(xl3)) +
                                xsi.cwiseQuotient(x - alfa) + eta.cwiseQuotient(beta - x);
        Eigen::VectorXd diagy = d + mu.cwiseQuotient(y);
        Eigen::VectorXd diaglam = s.cwiseQuotient(lam);
        Eigen::VectorXd diaglamyi = diaglam + diagy.cwiseInverse();

        // m is small: solve the (m+1)x(m+1) Schur system for (dlam, dz).
        Eigen::VectorXd blam = dellam + dely.cwiseQuotient(diagy) -
                               GG * delx.cwiseQuotient(diagx);
        Eigen::MatrixXd Alam = diaglamyi.asDiagonal();
        Alam += GG * diagx.cwiseInverse().asDiagonal() * GG.transpose();
        Eigen::MatrixXd AA(m_ + 1, m_ + 1);
        AA.topLeftCorner(m_, m_) = Alam;
        AA.topRightCorner(m_, 1) = a;
        AA.bottomLeftCorner(1, m_) = a.transpose();
        AA(m_, m_) = -zet / z;
        Eigen::VectorXd bb(m_ + 1);
        bb.head(m_) = blam;
        bb[m_] = delz;
        Eigen::VectorXd sol = AA.fullPivLu().solve(bb);
        if (!sol.allFinite()) return false;
        Eigen::VectorXd dlam = sol.head(m_);
        double dz = sol[m_];
        Eigen::VectorXd dx = -delx.cwiseQuotient(diagx) -
                             (GG.transpose() * dlam).cwiseQuotient(diagx);
        Eigen::VectorXd dy = -dely.cwiseQuotient(diagy) + dlam.cwiseQuotient(diagy);
        Eigen::VectorXd dxsi = -xsi + (epsi - xsi.cwiseProduct(dx).array()).matrix()
                                          .cwiseQuotient(x - alfa);
        Eigen::VectorXd deta = -eta + (epsi + eta.cwiseProduct(dx).array()).matrix()
                                          .cwiseQuotient(beta - x);
        Eigen::VectorXd dmu = -mu + (epsi - mu.cwiseProduct(dy).array()).matrix()
                                        .cwiseQuotient(y);
        double dzet = -zet + (epsi - zet * dz) / z;
        Eigen::VectorXd ds = -s + (epsi - s.cwiseProduct(dlam).array()).matrix()
                                      .cwiseQuotient(lam);

        // Step length keeping all positivity conditions with margin 1/1.01.
        double t = 0.0;
        auto rate = [&t](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
          for (int i = 0; i < v.size(); ++i)
            if (dv[i] < 0.0) t = std::max(t, -1.01 * dv[i] / v[i]);
        };
        rate(y, dy); rate(lam, dlam); rate(xsi, dxsi); rate(eta, deta);
        rate(mu, dmu); rate(s, ds);
        if (dz < 0.0) t = std::max(t, -1.01 * dz / z);
        if (dzet < 0.0) t = std::max(t, -1.01 * dzet / zet);
        rate(x - alfa, dx);
        rate(beta - x, -dx);
        double steg = 1.0 / std::max(t, 1.0);

        double old_norm = norm2;
        Eigen::VectorXd xo = x, yo = y, lamo = lam, xsio = xsi, etao = eta, muo = mu, so = s;
        double zo = z, zeto = zet;
        int itto = 0;
        for (; itto < 50; ++itto) {
          x = xo + steg * dx; y = yo + steg * dy; z = zo + steg * dz;
          lam = lamo + steg * dlam; xsi = xsio + steg * dxsi; eta = etao + steg * deta;
          mu = muo + steg * dmu; zet = zeto + steg * dzet; s = so + steg * ds;
          residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi, norm2, normmax);
          if (norm2 < old_norm) break;
          steg *= 0.5;
        }
        if (itto >= 50) return false;
      }
      if (inner >= 200) return false;
      epsi *= 0.1;
    }
    if (!x.allFinite()) return false;
    xout = x;
    return true;
  }

  int n_, m_;
  double move_;
  int iter_;
  Eigen::VectorXd xold1_, xold2_, low_, upp_;
};

}  // namespace topo
