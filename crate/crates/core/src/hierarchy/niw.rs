use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::PriorHypercube;

/// Normal-Inverse-Wishart distribution over a mean vector and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NIWParams {
    pub mu0: DVector<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub psi: DMatrix<f64>,
}

impl NIWParams {
    pub fn new(mu0: DVector<f64>, kappa0: f64, nu0: f64, psi: DMatrix<f64>) -> Result<Self> {
        let d = mu0.len();
        if d == 0 || psi.shape() != (d, d) {
            return Err(Error::Domain(
                "NIW location and scale dimensions differ".into(),
            ));
        }
        if !(kappa0 >= 0.0) || !nu0.is_finite() {
            return Err(Error::Domain(format!(
                "invalid NIW kappa0 {kappa0} / nu0 {nu0}"
            )));
        }
        check_spd(&psi, "NIW scale")?;
        Ok(Self {
            mu0,
            kappa0,
            nu0,
            psi,
        })
    }

    /// Location at the hypercube centre, `kappa0 = 0`, `nu0 = 1` and a
    /// diagonal scale of squared half-widths. The cube must already be in
    /// the coordinates being sampled.
    pub fn default_for(cube: &PriorHypercube) -> Self {
        let mu0 = DVector::from_column_slice(&cube.centre());
        let half: Vec<f64> = cube.widths().iter().map(|w| (0.5 * w).powi(2)).collect();
        Self {
            mu0,
            kappa0: 0.0,
            nu0: 1.0,
            psi: DMatrix::from_diagonal(&DVector::from_vec(half)),
        }
    }

    pub fn dimension(&self) -> usize {
        self.mu0.len()
    }

    /// Errors unless the distribution can be sampled.
    pub fn check_proper(&self) -> Result<()> {
        let d = self.dimension() as f64;
        if !(self.kappa0 > 0.0) {
            return Err(Error::ImproperDistribution(format!(
                "kappa0 = {} must be > 0",
                self.kappa0
            )));
        }
        if !(self.nu0 > d - 1.0) {
            return Err(Error::ImproperDistribution(format!(
                "nu0 = {} must exceed d - 1 = {}",
                self.nu0,
                d - 1.0
            )));
        }
        Ok(())
    }
}

/// One draw of the hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSample {
    pub mu: DVector<f64>,
    pub sigma_mat: DMatrix<f64>,
}

impl HyperSample {
    /// Rescales each coordinate `k` by `factors[k]`.
    pub fn scaled(&self, factors: &[f64]) -> Self {
        let s = DVector::from_column_slice(factors);
        let d = DMatrix::from_diagonal(&s);
        Self {
            mu: self.mu.component_mul(&s),
            sigma_mat: &d * &self.sigma_mat * &d,
        }
    }
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!("{what} is not symmetric")));
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::Domain(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Draws from inverse-Wishart(`nu`, `psi`) through the Bartlett
/// decomposition of the Wishart(`nu`, `psi^-1`) precision.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    nu: f64,
    psi: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = psi.nrows();
    if !(nu > d as f64 - 1.0) {
        return Err(Error::ImproperDistribution(format!(
            "inverse-Wishart needs nu > {}, got {nu}",
            d - 1
        )));
    }
    let psi_inv = Cholesky::new(psi.clone())
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is not positive definite".into()))?
        .inverse();
    let l = Cholesky::new((&psi_inv + psi_inv.transpose()) * 0.5)
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is ill conditioned".into()))?
        .l();

    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = &l * a;
    let precision = &la * la.transpose();
    let sigma = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("Wishart draw is singular".into()))?
        .inverse();
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Draws `Sigma ~ IW(nu0, psi)` then `mu ~ N(mu0, Sigma / kappa0)`.
pub fn sample_niw<R: Rng + ?Sized>(params: &NIWParams, rng: &mut R) -> Result<HyperSample> {
    params.check_proper()?;
    let sigma_mat = sample_inverse_wishart(params.nu0, &params.psi, rng)?;
    let l = Cholesky::new(&sigma_mat / params.kappa0)
        .ok_or_else(|| Error::Numerical("covariance draw is not positive definite".into()))?
        .l();
    let z = DVector::from_fn(params.dimension(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    Ok(HyperSample {
        mu: &params.mu0 + l * z,
        sigma_mat,
    })
}

/// Conjugate update of the NIW parameters given observed vectors.
pub fn niw_posterior<S: AsRef<[f64]>>(params: &NIWParams, thetas: &[S]) -> Result<NIWParams> {
    if thetas.is_empty() {
        return Err(Error::Domain(
            "posterior update needs at least one observation".into(),
        ));
    }
    let d = params.dimension();
    if thetas.iter().any(|t| t.as_ref().len() != d) {
        return Err(Error::Domain(format!(
            "observations must have dimension {d}"
        )));
    }
    let n = thetas.len() as f64;
    let mut mean = DVector::zeros(d);
    for t in thetas {
        mean += DVector::from_column_slice(t.as_ref());
    }
    mean /= n;
    let mut scatter = DMatrix::zeros(d, d);
    for t in thetas {
        let dx = DVector::from_column_slice(t.as_ref()) - &mean;
        scatter += &dx * dx.transpose();
    }
    let k0 = params.kappa0;
    let kappa = k0 + n;
    let shift = &mean - &params.mu0;
    let psi = &params.psi + scatter + (&shift * shift.transpose()) * (k0 * n / kappa);
    Ok(NIWParams {
        mu0: (&params.mu0 * k0 + &mean * n) / kappa,
        kappa0: kappa,
        nu0: params.nu0 + n,
        psi: (&psi + psi.transpose()) * 0.5,
    })
}
