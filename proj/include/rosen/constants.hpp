#pragma once

namespace rosen {

// Hurst index restricted to the long-memory range (1/2, 1).
class Hurst {
 public:
  explicit Hurst(double h);
  double value() const noexcept { return h_; }
  // Index of the auxiliary fBm that appears next to R^H, (H+1)/2.
  Hurst companion() const { return Hurst((h_ + 1.0) / 2.0); }

 private:
  double h_;
};

// Gamma and Beta through Boost.Math (Lanczos approximation, ~1e-16 relative).
double gamma_fn(double x);
double beta_fn(double a, double b);

struct ConstantSet {
  double h = 0.0;
  double cBigB = 0.0;   // normalizes B^H so that E (B_1)^2 = 1
  double cBigR = 0.0;   // normalizes R^H so that E (R_1)^2 = 1
  double cSmallB = 0.0; // cBigB * Gamma(H - 1/2)
  double cSmallR = 0.0; // cBigR * Gamma(H/2)^2
  double cBR = 0.0;     // cSmallR / cSmallB((H+1)/2)
  double cBR_closed = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double kappa3 = 0.0;
};

ConstantSet derived_constants(Hurst h);

// Covariance of the normalized fractional Brownian motion.
double fbm_covariance(Hurst h, double s, double t);

// Third cumulant of R_1^H.
double third_cumulant_target(Hurst h);

}  // namespace rosen
