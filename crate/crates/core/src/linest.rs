//! Online regularized least squares with confidence-ellipsoid geometry.
//!
//! The estimator keeps the information vector `b = Σ w_i φ_i r_i` and an
//! upper-triangular factor `R` of the precision matrix `V = λI + Σ w_i φ_i φ_iᵀ`
//! (`V = RᵀR`). Everything downstream (the estimate, ellipsoid sampling,
//! posterior draws, `V⁻¹`-norms, log-determinants) is derived from `R` with
//! triangular solves, so `V` and `V⁻¹` are never formed explicitly.
//!
//! With `rho == 1` updates are rank-1 modifications of `R` in `O(d²)`. With
//! `rho < 1` only the data Gram matrix is decayed (the ridge `λI` is not), and
//! `V` is refactorized after every update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng;

/// Smallest admissible diagonal entry of the Cholesky factor.
pub const CHOL_FLOOR: f64 = 1e-12;

/// How the confidence radius `β` is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfidenceSpec {
    /// Constant radius.
    Fixed { beta: f64 },
    /// Self-normalized radius `√λ·S + σ·√(log(det V / λ^d) + 2·log(1/δ))`.
    Theoretical { delta: f64, s_bound: f64, sigma: f64 },
}

impl ConfidenceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConfidenceSpec::Fixed { beta } => {
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fixed beta must be finite and >= 0, got {beta}"
                    )));
                }
            }
            ConfidenceSpec::Theoretical {
                delta,
                s_bound,
                sigma,
            } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "delta must lie in (0, 1), got {delta}"
                    )));
                }
                if !(s_bound > 0.0 && s_bound.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "s_bound must be positive, got {s_bound}"
                    )));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "sigma must be nonnegative, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Online weighted ridge-regression state.
#[derive(Clone, Debug)]
pub struct Estimator {
    dim: usize,
    lambda: f64,
    rho: f64,
    info: DVector<f64>,
    chol: DMatrix<f64>,
    /// Decayed data Gram matrix; present only on the refactorizing path.
    gram: Option<DMatrix<f64>>,
    count: u64,
    zhat: DVector<f64>,
}

fn validate_params(dim: usize, lambda: f64, rho: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dim must be >= 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    Ok(())
}

/// In-place rank-1 update of an upper-triangular Cholesky factor.
///
/// On return `RᵀR` equals the previous `RᵀR + x·xᵀ`. `x` is consumed as
/// workspace. Plane rotations applied row by row, `O(d²)`.
pub fn chol_rank1_update(r: &mut DMatrix<f64>, mut x: DVector<f64>) {
    let n = r.nrows();
    for k in 0..n {
        let rkk = r[(k, k)];
        let xk = x[k];
        if xk == 0.0 {
            continue;
        }
        let nrm = rkk.hypot(xk);
        let c = nrm / rkk;
        let s = xk / rkk;
        r[(k, k)] = nrm;
        for j in (k + 1)..n {
            let rkj = (r[(k, j)] + s * x[j]) / c;
            x[j] = c * x[j] - s * rkj;
            r[(k, j)] = rkj;
        }
    }
}

impl Estimator {
    /// Empty estimator: `b = 0`, `ẑ = 0`, `R = √λ·I`.
    ///
    /// `rho == 1` selects the `O(d²)` rank-1 path, `rho < 1` the decayed path.
    pub fn new(dim: usize, lambda: f64, rho: f64) -> Result<Self> {
        validate_params(dim, lambda, rho)?;
        let mut est = Self::blank(dim, lambda, rho);
        if rho < 1.0 {
            est.gram = Some(DMatrix::zeros(dim, dim));
        }
        Ok(est)
    }

    /// Estimator that always uses the decayed/refactorizing path, even at `rho == 1`.
    pub fn new_weighted(dim: usize, lambda: f64, rho: f64) -> Result<Self> {
        validate_params(dim, lambda, rho)?;
        let mut est = Self::blank(dim, lambda, rho);
        est.gram = Some(DMatrix::zeros(dim, dim));
        Ok(est)
    }

    fn blank(dim: usize, lambda: f64, rho: f64) -> Self {
        Estimator {
            dim,
            lambda,
            rho,
            info: DVector::zeros(dim),
            chol: DMatrix::identity(dim, dim) * lambda.sqrt(),
            gram: None,
            count: 0,
            zhat: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Current least-squares estimate `ẑ = V⁻¹ b`.
    pub fn zhat(&self) -> &DVector<f64> {
        &self.zhat
    }

    pub fn info(&self) -> &DVector<f64> {
        &self.info
    }

    /// Upper-triangular factor `R` with `V = RᵀR`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn is_weighted_path(&self) -> bool {
        self.gram.is_some()
    }

    /// Dense precision matrix `RᵀR`.
    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.transpose() * &self.chol
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Absorb one observation `(φ, r)`.
    pub fn update(&mut self, phi: &DVector<f64>, r: f64) -> Result<()> {
        self.check_dim(phi)?;
        ensure_finite(phi.as_slice(), "feature vector")?;
        if !r.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        match self.gram.as_mut() {
            None => {
                self.info.axpy(r, phi, 1.0);
                chol_rank1_update(&mut self.chol, phi.clone());
            }
            Some(gram) => {
                *gram *= self.rho;
                gram.ger(1.0, phi, phi, 1.0);
                self.info *= self.rho;
                self.info.axpy(r, phi, 1.0);
                let mut v = gram.clone();
                for i in 0..self.dim {
                    v[(i, i)] += self.lambda;
                }
                self.chol = upper_cholesky(v)?;
            }
        }
        self.check_floor()?;
        self.count += 1;
        self.refresh_estimate()
    }

    fn check_floor(&self) -> Result<()> {
        for i in 0..self.dim {
            let v = self.chol[(i, i)];
            if !(v >= CHOL_FLOOR) {
                return Err(Error::NotPositiveDefinite { index: i, value: v });
            }
        }
        Ok(())
    }

    fn refresh_estimate(&mut self) -> Result<()> {
        let y = self.solve_rt(&self.info);
        self.zhat = self.solve_r(&y);
        ensure_finite(self.zhat.as_slice(), "estimate")
    }

    /// `R⁻¹ x`.
    fn solve_r(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        // Diagonal is floored, so the solve cannot fail.
        self.chol.solve_upper_triangular_mut(&mut out);
        out
    }

    /// `R⁻ᵀ x`.
    fn solve_rt(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        self.chol.tr_solve_upper_triangular_mut(&mut out);
        out
    }

    /// `log det V = 2·Σ log R_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }

    /// Confidence radius under `spec`.
    pub fn beta(&self, spec: &ConfidenceSpec) -> f64 {
        match *spec {
            ConfidenceSpec::Fixed { beta } => beta,
            ConfidenceSpec::Theoretical {
                delta,
                s_bound,
                sigma,
            } => {
                let log_ratio =
                    (self.log_det() - self.dim as f64 * self.lambda.ln()).max(0.0);
                self.lambda.sqrt() * s_bound
                    + sigma * (log_ratio + 2.0 * (1.0 / delta).ln()).sqrt()
            }
        }
    }

    /// `‖z − ẑ‖_V = ‖R(z − ẑ)‖₂`.
    pub fn mahalanobis(&self, z: &DVector<f64>) -> f64 {
        let diff = z - &self.zhat;
        (&self.chol * diff).norm()
    }

    /// `‖x‖_{V⁻¹} = ‖R⁻ᵀx‖₂`.
    pub fn inv_norm(&self, x: &DVector<f64>) -> f64 {
        self.solve_rt(x).norm()
    }

    /// Information gain of one more observation at `φ`:
    /// `log(1 + ‖φ‖²_{V⁻¹}) = log det(V + φφᵀ) − log det V`.
    pub fn d_gap(&self, phi: &DVector<f64>) -> f64 {
        self.inv_norm(phi).powi(2).ln_1p()
    }

    /// `count` uniform draws from the ellipsoid `{z : ‖z − ẑ‖_V ≤ radius}`.
    pub fn sample_ellipsoid<R: Rng + ?Sized>(
        &self,
        radius: f64,
        count: usize,
        rng: &mut R,
    ) -> Vec<DVector<f64>> {
        (0..count)
            .map(|_| {
                let xi = rng::unit_ball(rng, self.dim);
                &self.zhat + self.solve_r(&xi) * radius
            })
            .collect()
    }

    /// One draw from `N(ẑ, V⁻¹)`.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = rng::standard_normal(rng, self.dim);
        &self.zhat + self.solve_r(&xi)
    }

    pub fn to_snapshot(&self) -> EstimatorSnapshot {
        let mut chol = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                chol.push(self.chol[(i, j)]);
            }
        }
        EstimatorSnapshot {
            dim: self.dim,
            lambda: self.lambda,
            rho: self.rho,
            info: self.info.iter().copied().collect(),
            chol,
            count: self.count,
            weighted: self.gram.is_some(),
        }
    }

    pub fn from_snapshot(snap: &EstimatorSnapshot) -> Result<Self> {
        validate_params(snap.dim, snap.lambda, snap.rho)?;
        let d = snap.dim;
        if snap.info.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: snap.info.len(),
            });
        }
        if snap.chol.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: snap.chol.len(),
            });
        }
        ensure_finite(&snap.info, "snapshot info")?;
        ensure_finite(&snap.chol, "snapshot factor")?;
        let chol = DMatrix::from_row_slice(d, d, &snap.chol).upper_triangle();
        let mut est = Self::blank(d, snap.lambda, snap.rho);
        est.chol = chol;
        est.info = DVector::from_column_slice(&snap.info);
        est.count = snap.count;
        est.check_floor()?;
        if snap.weighted || snap.rho < 1.0 {
            let mut gram = est.precision();
            for i in 0..d {
                gram[(i, i)] -= snap.lambda;
            }
            est.gram = Some(gram);
        }
        est.refresh_estimate()?;
        Ok(est)
    }
}

/// Upper Cholesky factor `R` of a symmetric positive-definite matrix.
fn upper_cholesky(v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    match v.cholesky() {
        Some(c) => Ok(c.l().transpose()),
        None => Err(Error::NotPositiveDefinite {
            index: n,
            value: f64::NAN,
        }),
    }
}

/// Serializable estimator state (factor stored row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSnapshot {
    pub dim: usize,
    pub lambda: f64,
    pub rho: f64,
    pub info: Vec<f64>,
    pub chol: Vec<f64>,
    pub count: u64,
    #[serde(default)]
    pub weighted: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;

    fn dense_zhat(lambda: f64, data: &[(DVector<f64>, f64)], d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut v = DMatrix::identity(d, d) * lambda;
        let mut b = DVector::zeros(d);
        for (phi, r) in data {
            v += phi * phi.transpose();
            b += phi * *r;
        }
        let z = v.clone().lu().solve(&b).unwrap();
        (v, z)
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn new_is_scaled_identity() {
        let est = Estimator::new(2, 1.0, 1.0).unwrap();
        assert_eq!(est.chol(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(est.zhat(), &DVector::<f64>::zeros(2));

        let est = Estimator::new(3, 4.0, 1.0).unwrap();
        assert_eq!(est.chol(), &(DMatrix::<f64>::identity(3, 3) * 2.0));

        let est = Estimator::new(50, 1.0, 1.0).unwrap();
        assert_eq!(est.dim(), 50);
        assert_eq!(est.count(), 0);
    }

    #[test]
    fn new_rejects_bad_params() {
        assert!(Estimator::new(0, 1.0, 1.0).is_err());
        assert!(Estimator::new(2, 0.0, 1.0).is_err());
        assert!(Estimator::new(2, -1.0, 1.0).is_err());
        assert!(Estimator::new(2, 1.0, 0.0).is_err());
        assert!(Estimator::new(2, 1.0, 1.5).is_err());
    }

    #[test]
    fn single_axis_update() {
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        est.update(&DVector::from_vec(vec![1.0, 0.0, 0.0]), 1.0).unwrap();
        assert_relative_eq!(est.zhat()[0], 0.5, epsilon = 1e-15);
        assert_eq!(est.zhat()[1], 0.0);
        assert_eq!(est.zhat()[2], 0.0);
    }

    #[test]
    fn zero_feature_is_uninformative() {
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        est.update(&DVector::from_vec(vec![0.3, -0.2, 0.9]), 0.7).unwrap();
        let before = est.zhat().clone();
        est.update(&DVector::zeros(3), 5.0).unwrap();
        assert_eq!(est.zhat(), &before);
    }

    #[test]
    fn rejects_non_finite_and_wrong_dim() {
        let mut est = Estimator::new(2, 1.0, 1.0).unwrap();
        assert!(matches!(
            est.update(&DVector::from_vec(vec![f64::NAN, 0.0]), 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            est.update(&DVector::from_vec(vec![1.0, 0.0]), f64::INFINITY),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            est.update(&DVector::from_vec(vec![1.0]), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(est.count(), 0);
    }

    #[test]
    fn matches_dense_solve_after_random_updates() {
        let mut rng = rng::stream(11, &[]);
        let d = 4;
        let mut est = Estimator::new(d, 1.0, 1.0).unwrap();
        let mut data = Vec::new();
        for _ in 0..50 {
            let phi = rng::standard_normal(&mut rng, d);
            let r: f64 = rng.random_range(-1.0..1.0);
            est.update(&phi, r).unwrap();
            data.push((phi, r));
        }
        let (_, z) = dense_zhat(1.0, &data, d);
        assert!(rel_err(est.zhat(), &z) <= 1e-8);
    }

    #[test]
    fn beta_fixed_and_theoretical() {
        let est = Estimator::new(3, 1.0, 1.0).unwrap();
        assert_eq!(est.beta(&ConfidenceSpec::Fixed { beta: 0.1 }), 0.1);
        let spec = ConfidenceSpec::Theoretical {
            delta: (-2.0f64).exp(),
            s_bound: 1.0,
            sigma: 1.0,
        };
        assert_relative_eq!(est.beta(&spec), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_matches_dense_log_det() {
        let mut rng = rng::stream(12, &[]);
        let d = 5;
        let spec = ConfidenceSpec::Theoretical {
            delta: 0.05,
            s_bound: 2.0,
            sigma: 0.3,
        };
        let mut est = Estimator::new(d, 0.5, 1.0).unwrap();
        let mut v = DMatrix::identity(d, d) * 0.5;
        for _ in 0..100 {
            let phi = rng::unit_sphere(&mut rng, d);
            est.update(&phi, 0.0).unwrap();
            v += &phi * phi.transpose();
        }
        let ld = v.determinant().ln();
        let expected = 0.5f64.sqrt() * 2.0
            + 0.3 * (ld - d as f64 * 0.5f64.ln() + 2.0 * (1.0f64 / 0.05).ln()).sqrt();
        assert_relative_eq!(est.beta(&spec), expected, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn beta_monotone_in_count() {
        let mut rng = rng::stream(13, &[]);
        let spec = ConfidenceSpec::Theoretical {
            delta: 0.1,
            s_bound: 1.0,
            sigma: 0.5,
        };
        let mut est = Estimator::new(4, 1.0, 1.0).unwrap();
        let mut last = est.beta(&spec);
        for _ in 0..200 {
            est.update(&rng::standard_normal(&mut rng, 4), 1.0).unwrap();
            let b = est.beta(&spec);
            assert!(b >= last - 1e-12);
            last = b;
        }
    }

    #[test]
    fn mahalanobis_cases() {
        let mut rng = rng::stream(14, &[]);
        let mut est = Estimator::new(3, 2.0, 1.0).unwrap();
        assert_eq!(est.mahalanobis(&est.zhat().clone()), 0.0);
        let u = rng::unit_sphere(&mut rng, 3);
        assert_relative_eq!(est.mahalanobis(&(est.zhat() + &u)), 2.0f64.sqrt(), epsilon = 1e-14);

        for _ in 0..20 {
            est.update(&rng::standard_normal(&mut rng, 3), rng.random()).unwrap();
        }
        let v = est.precision();
        let z = rng::standard_normal(&mut rng, 3);
        let diff = &z - est.zhat();
        let dense = (diff.transpose() * &v * &diff)[(0, 0)].sqrt();
        assert_relative_eq!(est.mahalanobis(&z), dense, max_relative = 1e-10);
    }

    #[test]
    fn ellipsoid_degenerate_and_isotropic() {
        let mut rng = rng::stream(15, &[]);
        let mut est = Estimator::new(3, 4.0, 1.0).unwrap();
        for s in est.sample_ellipsoid(0.0, 10, &mut rng) {
            assert_eq!(&s, est.zhat());
        }
        for s in est.sample_ellipsoid(1.5, 1000, &mut rng) {
            assert!((s - est.zhat()).norm() <= 1.5 / 2.0 + 1e-12);
        }
        est.update(&DVector::from_vec(vec![1.0, 2.0, 0.5]), 1.0).unwrap();
        for s in est.sample_ellipsoid(0.0, 3, &mut rng) {
            assert_eq!(&s, est.zhat());
        }
    }

    #[test]
    fn ellipsoid_volume_fraction() {
        let mut rng = rng::stream(16, &[]);
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        for _ in 0..10 {
            est.update(&rng::standard_normal(&mut rng, 3), rng.random()).unwrap();
        }
        let samples = est.sample_ellipsoid(2.0, 100_000, &mut rng);
        let mut inner = 0usize;
        let mut max_m: f64 = 0.0;
        for s in &samples {
            let m = est.mahalanobis(s);
            max_m = max_m.max(m);
            if m <= 1.0 {
                inner += 1;
            }
        }
        assert!(max_m <= 2.0 + 1e-9);
        let frac = inner as f64 / samples.len() as f64;
        assert!((frac - 0.125).abs() <= 0.01, "fraction {frac}");
    }

    #[test]
    fn posterior_identity_prior() {
        let mut rng = rng::stream(17, &[]);
        let est = Estimator::new(2, 1.0, 1.0).unwrap();
        let n = 100_000;
        let mut s2 = [0.0; 2];
        for _ in 0..n {
            let z = est.sample_posterior(&mut rng);
            s2[0] += z[0] * z[0];
            s2[1] += z[1] * z[1];
        }
        for v in s2 {
            assert!((v / n as f64 - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn posterior_replay_is_deterministic() {
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        est.update(&DVector::from_vec(vec![1.0, 0.5, -0.2]), 0.4).unwrap();
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(est.sample_posterior(&mut a), est.sample_posterior(&mut b));
        }
    }

    #[test]
    fn d_gap_cases() {
        let mut rng = rng::stream(18, &[]);
        let mut est = Estimator::new(4, 1.0, 1.0).unwrap();
        assert_eq!(est.d_gap(&DVector::zeros(4)), 0.0);
        let u = rng::unit_sphere(&mut rng, 4);
        assert_relative_eq!(est.d_gap(&u), 2.0f64.ln(), epsilon = 1e-14);

        for _ in 0..15 {
            est.update(&rng::standard_normal(&mut rng, 4), 0.0).unwrap();
        }
        let phi = rng::standard_normal(&mut rng, 4);
        let v = est.precision();
        let v2 = &v + &phi * phi.transpose();
        let expected = v2.determinant().ln() - v.determinant().ln();
        assert_relative_eq!(est.d_gap(&phi), expected, epsilon = 1e-9);
    }

    #[test]
    fn d_gap_shrinks_after_observing_same_feature() {
        let mut rng = rng::stream(19, &[]);
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        let phi = rng::standard_normal(&mut rng, 3);
        let mut last = est.d_gap(&phi);
        for _ in 0..20 {
            est.update(&phi, 1.0).unwrap();
            let g = est.d_gap(&phi);
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn decayed_path_matches_weighted_dense_solve() {
        let mut rng = rng::stream(20, &[]);
        let (d, lambda, rho) = (3, 0.7, 0.9);
        let mut est = Estimator::new(d, lambda, rho).unwrap();
        assert!(est.is_weighted_path());
        let mut data = Vec::new();
        for _ in 0..40 {
            let phi = rng::standard_normal(&mut rng, d);
            let r: f64 = rng.random();
            est.update(&phi, r).unwrap();
            data.push((phi, r));
        }
        let t = data.len();
        let mut v = DMatrix::identity(d, d) * lambda;
        let mut b = DVector::zeros(d);
        for (i, (phi, r)) in data.iter().enumerate() {
            let w = rho.powi((t - 1 - i) as i32);
            v += phi * phi.transpose() * w;
            b += phi * (*r * w);
        }
        let z = v.lu().solve(&b).unwrap();
        assert!(rel_err(est.zhat(), &z) <= 1e-10);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = rng::stream(21, &[]);
        for rho in [1.0, 0.95] {
            let mut est = Estimator::new(4, 1.0, rho).unwrap();
            for _ in 0..30 {
                est.update(&rng::standard_normal(&mut rng, 4), rng.random()).unwrap();
            }
            let json = serde_json::to_string(&est.to_snapshot()).unwrap();
            let snap: EstimatorSnapshot = serde_json::from_str(&json).unwrap();
            let mut back = Estimator::from_snapshot(&snap).unwrap();
            assert_eq!(back.chol(), est.chol());
            assert!(rel_err(back.zhat(), est.zhat()) < 1e-12);
            let phi = rng::standard_normal(&mut rng, 4);
            est.update(&phi, 0.3).unwrap();
            back.update(&phi, 0.3).unwrap();
            assert!(rel_err(back.zhat(), est.zhat()) < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factor_and_estimate_track_dense_accumulation(
            d in 1usize..7,
            lambda in 0.05f64..5.0,
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 7), 0..40),
            rewards in proptest::collection::vec(-2.0f64..2.0, 40),
        ) {
            let mut est = Estimator::new(d, lambda, 1.0).unwrap();
            let mut data = Vec::new();
            for (row, r) in rows.iter().zip(rewards.iter()) {
                let phi = DVector::from_column_slice(&row[..d]);
                est.update(&phi, *r).unwrap();
                data.push((phi, *r));
            }
            let (v, z) = dense_zhat(lambda, &data, d);
            let rtr = est.precision();
            let scale = v.amax();
            prop_assert!((rtr - &v).amax() <= 1e-8 * scale);
            // Upper triangular with positive diagonal.
            for i in 0..d {
                prop_assert!(est.chol()[(i, i)] > 0.0);
                for j in 0..i {
                    prop_assert_eq!(est.chol()[(i, j)], 0.0);
                }
            }
            let resid = &v * est.zhat() - est.info();
            prop_assert!(resid.norm() <= 1e-8 * (1.0 + est.info().norm()));
            prop_assert!((est.zhat() - &z).norm() <= 1e-8 * (1.0 + z.norm()));
        }
    }
}
