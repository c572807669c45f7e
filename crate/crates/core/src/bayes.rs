//! Conjugate Bayesian multioutput linear regression with a matrix-normal
//! inverse-Wishart prior.
//!
//! Rows of the design carry a trailing constant 1. The posterior keeps
//! only sufficient statistics. Rows are folded into them in fixed blocks of
//! [`BLOCK_ROWS`] counted from the first row ever added, so the statistics
//! do not depend on how the caller chunks its updates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Blob, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::net::symmetrize;

pub const BLOCK_ROWS: usize = 256;

/// Row covariance of the coefficient prior.
#[derive(Debug, Clone, PartialEq)]
pub enum RowCovariance {
    /// `tau * I`
    Scaled(f64),
    Dense(DMatrix<f64>),
}

impl RowCovariance {
    fn inverse(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            RowCovariance::Scaled(tau) => {
                if !(*tau > 0.0) {
                    return Err(Error::Config(format!("prior scale must be positive, got {tau}")));
                }
                Ok(DMatrix::identity(p, p) / *tau)
            }
            RowCovariance::Dense(m) => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(Error::shape("prior row covariance", p, m.nrows()));
                }
                Cholesky::new(symmetrize(m))
                    .map(|c| c.inverse())
                    .ok_or_else(|| Error::Config("prior row covariance is not SPD".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesPrior {
    /// `p x C`
    pub beta0: DMatrix<f64>,
    pub sigma0: RowCovariance,
    /// `C x C`
    pub omega: DMatrix<f64>,
    pub n0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesPriorConfig {
    pub tau: f64,
    /// Prior strength; `None` picks `2C + p + 2`, which gives `nu0 = C + 3`.
    pub n0: Option<f64>,
}

impl Default for BayesPriorConfig {
    fn default() -> Self {
        Self { tau: 1e4, n0: None }
    }
}

impl BayesPrior {
    /// `beta0 = 0`, `Sigma0 = tau I`, `Omega = I`.
    pub fn weak(features: usize, outputs: usize, cfg: &BayesPriorConfig) -> Self {
        Self {
            beta0: DMatrix::zeros(features, outputs),
            sigma0: RowCovariance::Scaled(cfg.tau),
            omega: DMatrix::identity(outputs, outputs),
            n0: cfg.n0.unwrap_or((2 * outputs + features + 2) as f64),
        }
    }

    pub fn features(&self) -> usize {
        self.beta0.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.beta0.ncols()
    }

    pub fn nu0(&self) -> f64 {
        self.n0 - (self.outputs() + self.features()) as f64 + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.outputs();
        if self.omega.nrows() != c || self.omega.ncols() != c {
            return Err(Error::shape("prior scale matrix", c, self.omega.nrows()));
        }
        if Cholesky::new(symmetrize(&self.omega)).is_none() {
            return Err(Error::Config("prior scale matrix is not SPD".into()));
        }
        if !(self.nu0() > (c + 1) as f64) {
            return Err(Error::Config(format!(
                "prior degrees of freedom {} must exceed C + 1 = {}",
                self.nu0(),
                c + 1
            )));
        }
        self.sigma0.inverse(self.features()).map(|_| ())
    }
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// `(G + S0^-1)^-1 (D^T Y + S0^-1 beta0)`
    coef: DMatrix<f64>,
    a_star: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct BayesPosterior {
    pub prior: BayesPrior,
    sigma0_inv: DMatrix<f64>,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    yty: DMatrix<f64>,
    committed: usize,
    pending_x: Vec<f64>,
    pending_y: Vec<f64>,
    cache: Option<Factor>,
}

/// Predictive mean, covariance and Student-t degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub mean: DVector<f64>,
    pub variance: DMatrix<f64>,
    /// Variance without the parameter-uncertainty factor `C^-1`.
    pub noise: DMatrix<f64>,
    pub c_inv: f64,
    pub dof: f64,
}

/// `a^T b` over row-major `rows x p` and `rows x q` blocks, accumulated into `out`.
fn add_cross(rows: usize, p: usize, q: usize, a: &[f64], b: &[f64], out: &mut DMatrix<f64>) {
    // nalgebra is column-major, so compute into a row-major scratch first.
    let mut tmp = vec![0.0; p * q];
    // SAFETY: `a` is rows x p and `b` rows x q, both row-major; `tmp` is p x q.
    unsafe {
        matrixmultiply::dgemm(
            p,
            rows,
            q,
            1.0,
            a.as_ptr(),
            1,
            p as isize,
            b.as_ptr(),
            q as isize,
            1,
            0.0,
            tmp.as_mut_ptr(),
            q as isize,
            1,
        );
    }
    for i in 0..p {
        for j in 0..q {
            out[(i, j)] += tmp[i * q + j];
        }
    }
}

impl BayesPosterior {
    /// Prior-only state.
    pub fn new(prior: BayesPrior) -> Result<Self> {
        prior.validate()?;
        let p = prior.features();
        let c = prior.outputs();
        let sigma0_inv = prior.sigma0.inverse(p)?;
        Ok(Self {
            prior,
            sigma0_inv,
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(p, c),
            yty: DMatrix::zeros(c, c),
            committed: 0,
            pending_x: Vec::new(),
            pending_y: Vec::new(),
            cache: None,
        })
    }

    /// Fits all rows and factorizes.
    pub fn fit(prior: BayesPrior, design: &[f64], targets: &[f64]) -> Result<Self> {
        let mut post = Self::new(prior)?;
        post.add_rows(design, targets)?;
        post.refresh()?;
        Ok(post)
    }

    pub fn n(&self) -> usize {
        self.committed + self.pending_x.len() / self.prior.features()
    }

    /// Adds row-major design rows (constant included) and targets.
    /// Invalidates the cached factorization.
    pub fn add_rows(&mut self, design: &[f64], targets: &[f64]) -> Result<()> {
        let p = self.prior.features();
        let c = self.prior.outputs();
        if design.len() % p != 0 {
            return Err(Error::shape("design width", p, design.len() % p));
        }
        let rows = design.len() / p;
        if targets.len() != rows * c {
            return Err(Error::shape("target rows", rows * c, targets.len()));
        }
        self.cache = None;
        let mut r = 0;
        while r < rows {
            let have = self.pending_x.len() / p;
            let take = (BLOCK_ROWS - have).min(rows - r);
            self.pending_x.extend_from_slice(&design[r * p..(r + take) * p]);
            self.pending_y.extend_from_slice(&targets[r * c..(r + take) * c]);
            r += take;
            if have + take == BLOCK_ROWS {
                self.flush_block();
            }
        }
        Ok(())
    }

    fn flush_block(&mut self) {
        let p = self.prior.features();
        let c = self.prior.outputs();
        let rows = self.pending_x.len() / p;
        add_cross(rows, p, p, &self.pending_x, &self.pending_x, &mut self.gram);
        add_cross(rows, p, c, &self.pending_x, &self.pending_y, &mut self.cross);
        add_cross(rows, c, c, &self.pending_y, &self.pending_y, &mut self.yty);
        self.committed += rows;
        self.pending_x.clear();
        self.pending_y.clear();
    }

    /// `(D^T D, D^T Y, Y^T Y)` over every row added so far.
    pub fn statistics(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let p = self.prior.features();
        let c = self.prior.outputs();
        let rows = self.pending_x.len() / p;
        let (mut g, mut x, mut y) = (self.gram.clone(), self.cross.clone(), self.yty.clone());
        if rows > 0 {
            add_cross(rows, p, p, &self.pending_x, &self.pending_x, &mut g);
            add_cross(rows, p, c, &self.pending_x, &self.pending_y, &mut x);
            add_cross(rows, c, c, &self.pending_y, &self.pending_y, &mut y);
        }
        (g, x, y)
    }

    /// Recomputes the cached factorization of `D^T D + Sigma0^-1` and `A*`.
    pub fn refresh(&mut self) -> Result<()> {
        let (gram, cross, yty) = self.statistics();
        let prec = symmetrize(&(gram + &self.sigma0_inv));
        let chol = Cholesky::new(prec)
            .ok_or_else(|| Error::Conditioning("D^T D + prior precision is not positive definite".into()))?;
        let (coef, a_star) = if self.n() == 0 {
            // No data: the formulas reduce to beta0 and a zero A*.
            let c = self.prior.outputs();
            (self.prior.beta0.clone(), DMatrix::zeros(c, c))
        } else {
            let s0b = &self.sigma0_inv * &self.prior.beta0;
            let b = cross + &s0b;
            let coef = chol.solve(&b);
            let a_star = yty + self.prior.beta0.transpose() * &s0b - b.transpose() * &coef;
            (coef, a_star)
        };
        self.cache = Some(Factor {
            chol,
            coef,
            a_star: symmetrize(&a_star),
        });
        Ok(())
    }

    pub fn a_star(&self) -> Result<&DMatrix<f64>> {
        Ok(&self.factor()?.a_star)
    }

    fn factor(&self) -> Result<&Factor> {
        self.cache
            .as_ref()
            .ok_or_else(|| Error::Conditioning("posterior has changed since the last refresh".into()))
    }

    pub fn dof(&self) -> f64 {
        self.n() as f64 + self.prior.nu0()
    }

    /// Posterior predictive for one design row `d` (constant included).
    pub fn predictive(&self, d: &[f64]) -> Result<Predictive> {
        let p = self.prior.features();
        if d.len() != p {
            return Err(Error::shape("design row", p, d.len()));
        }
        let f = self.factor()?;
        let dof = self.dof();
        if dof <= 2.0 {
            return Err(Error::VarianceUndefined(dof));
        }
        let dv = DVector::from_column_slice(d);
        let mean = f.coef.transpose() * &dv;
        let c_inv = if self.n() == 0 {
            1.0 + match &self.prior.sigma0 {
                RowCovariance::Scaled(tau) => tau * dv.norm_squared(),
                RowCovariance::Dense(m) => dv.dot(&(m * &dv)),
            }
        } else {
            let z = f
                .chol
                .l_dirty()
                .solve_lower_triangular(&dv)
                .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
            1.0 + z.norm_squared()
        };
        let scale = &self.prior.omega + &f.a_star;
        if Cholesky::new(symmetrize(&scale)).is_none() {
            return Err(Error::Conditioning("Omega + A* is not positive definite".into()));
        }
        let noise = symmetrize(&(scale / (dof - 2.0)));
        let variance = &noise * c_inv;
        Ok(Predictive {
            mean,
            variance,
            noise,
            c_inv,
            dof,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let p = self.prior.features();
        let c = self.prior.outputs();
        let (sigma0_kind, tau) = match &self.prior.sigma0 {
            RowCovariance::Scaled(t) => ("scaled", *t),
            RowCovariance::Dense(_) => ("dense", 0.0),
        };
        let config = serde_json::json!({
            "features": p,
            "outputs": c,
            "n0": self.prior.n0,
            "sigma0": sigma0_kind,
            "tau": tau,
            "committed": self.committed,
        });
        let mut ck = Checkpoint::new(CheckpointKind::Bayes, config);
        let col_major = |m: &DMatrix<f64>| Blob::encode(vec![m.nrows(), m.ncols()], m.as_slice());
        ck.blobs.insert("beta0".into(), col_major(&self.prior.beta0));
        ck.blobs.insert("omega".into(), col_major(&self.prior.omega));
        if let RowCovariance::Dense(m) = &self.prior.sigma0 {
            ck.blobs.insert("sigma0".into(), col_major(m));
        }
        ck.blobs.insert("gram".into(), col_major(&self.gram));
        ck.blobs.insert("cross".into(), col_major(&self.cross));
        ck.blobs.insert("yty".into(), col_major(&self.yty));
        let pending = self.pending_x.len() / p;
        ck.blobs.insert("pending_x".into(), Blob::encode(vec![pending, p], &self.pending_x));
        ck.blobs.insert("pending_y".into(), Blob::encode(vec![pending, c], &self.pending_y));
        ck
    }

    /// Restores the statistics and refreshes the factorization.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Bayes)?;
        let field = |k: &str| {
            ck.config
                .get(k)
                .ok_or_else(|| Error::Format(format!("bayes checkpoint lacks '{k}'")))
        };
        let as_usize = |k: &str| -> Result<usize> {
            field(k)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("'{k}' is not an integer")))
        };
        let as_f64 = |k: &str| -> Result<f64> {
            field(k)?
                .as_f64()
                .ok_or_else(|| Error::Format(format!("'{k}' is not a number")))
        };
        let p = as_usize("features")?;
        let c = as_usize("outputs")?;
        let matrix = |name: &str, r: usize, cc: usize| -> Result<DMatrix<f64>> {
            let v = ck.blob(name)?;
            if v.len() != r * cc {
                return Err(Error::shape(format!("blob {name}"), r * cc, v.len()));
            }
            Ok(DMatrix::from_vec(r, cc, v))
        };
        let sigma0 = match field("sigma0")?.as_str() {
            Some("scaled") => RowCovariance::Scaled(as_f64("tau")?),
            Some("dense") => RowCovariance::Dense(matrix("sigma0", p, p)?),
            _ => return Err(Error::Format("unknown prior row covariance".into())),
        };
        let prior = BayesPrior {
            beta0: matrix("beta0", p, c)?,
            sigma0,
            omega: matrix("omega", c, c)?,
            n0: as_f64("n0")?,
        };
        let mut post = Self::new(prior)?;
        post.gram = matrix("gram", p, p)?;
        post.cross = matrix("cross", p, c)?;
        post.yty = matrix("yty", c, c)?;
        post.committed = as_usize("committed")?;
        post.pending_x = ck.blob("pending_x")?;
        post.pending_y = ck.blob("pending_y")?;
        if post.pending_x.len() / p.max(1) != post.pending_y.len() / c.max(1) {
            return Err(Error::Format("pending rows disagree".into()));
        }
        post.refresh()?;
        Ok(post)
    }
}

/// Appends the constant feature to a flattened window.
pub fn design_row(window: &[f64]) -> Vec<f64> {
    let mut d = Vec::with_capacity(window.len() + 1);
    d.extend_from_slice(window);
    d.push(1.0);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(p: usize, c: usize, tau: f64) -> BayesPrior {
        BayesPrior::weak(p, c, &BayesPriorConfig { tau, n0: None })
    }

    fn random_rows(n: usize, p: usize, c: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            for j in 0..p {
                x.push(if j + 1 == p { 1.0 } else { rng.random_range(-1.0..1.0) });
            }
            for _ in 0..c {
                y.push(rng.random_range(-1.0..1.0));
            }
        }
        (x, y)
    }

    #[test]
    fn tiny_statistics_by_hand() {
        // rows (1, 2) and (3, 1); targets 5 and 7
        let mut post = BayesPosterior::new(prior(2, 1, 1.0)).unwrap();
        post.add_rows(&[1.0, 2.0, 3.0, 1.0], &[5.0, 7.0]).unwrap();
        let (g, x, y) = post.statistics();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[10.0, 5.0, 5.0, 5.0]));
        assert_eq!(x, DMatrix::from_row_slice(2, 1, &[26.0, 17.0]));
        assert_eq!(y[(0, 0)], 74.0);
    }

    #[test]
    fn prior_only_predictive() {
        let mut pr = prior(3, 2, 2.0);
        pr.beta0 = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 0.0, 2.0, 1.0, 0.25]);
        let mut post = BayesPosterior::new(pr.clone()).unwrap();
        post.refresh().unwrap();
        let d = [0.2, -0.4, 1.0];
        let pred = post.predictive(&d).unwrap();
        let dv = DVector::from_column_slice(&d);
        assert_eq!(pred.mean, pr.beta0.transpose() * &dv);
        assert_eq!(post.a_star().unwrap(), &DMatrix::zeros(2, 2));
        let c_inv = 1.0 + 2.0 * dv.norm_squared();
        let nu0 = pr.nu0();
        assert_eq!(pred.c_inv, c_inv);
        assert_eq!(pred.variance, &pr.omega / (nu0 - 2.0) * c_inv);
        assert_eq!(pred.dof, nu0);
    }

    #[test]
    fn flat_prior_matches_least_squares() {
        let (p, n) = (20, 200);
        let (x, y) = random_rows(n, p, 1, 3);
        let post = BayesPosterior::fit(prior(p, 1, 1e10), &x, &y).unwrap();
        let dm = DMatrix::from_row_slice(n, p, &x);
        let yv = DVector::from_column_slice(&y);
        let beta = (dm.transpose() * &dm).try_inverse().unwrap() * dm.transpose() * yv;
        let (q, _) = random_rows(5, p, 1, 4);
        for row in q.chunks(p) {
            let ols = DVector::from_column_slice(row).dot(&beta);
            let got = post.predictive(row).unwrap().mean[0];
            assert!((got - ols).abs() < 1e-6, "{got} vs {ols}");
        }
    }

    #[test]
    fn dense_formula_oracle() {
        // One output, two features, unit priors.
        let pr = BayesPrior {
            beta0: DMatrix::from_element(2, 1, 1.0),
            sigma0: RowCovariance::Dense(DMatrix::identity(2, 2)),
            omega: DMatrix::identity(1, 1),
            n0: 8.0,
        };
        let x = [1.0, 0.5, -0.3, 1.2, 0.7, -0.9, 2.0, 0.1];
        let y = [0.4, -0.2, 1.1, 0.3];
        let post = BayesPosterior::fit(pr, &x, &y).unwrap();
        let d = [0.6, -0.8];
        let got = post.predictive(&d).unwrap();

        let dm = DMatrix::from_row_slice(4, 2, &x);
        let ym = DMatrix::from_row_slice(4, 1, &y);
        let g = dm.transpose() * &dm;
        let s0i = DMatrix::<f64>::identity(2, 2);
        let b0 = DMatrix::from_element(2, 1, 1.0);
        let beta_hat = g.clone().try_inverse().unwrap() * dm.transpose() * &ym;
        let inv = (&g + &s0i).try_inverse().unwrap();
        let t = &g * &beta_hat + &s0i * &b0;
        let a_star = ym.transpose() * &ym + b0.transpose() * &s0i * &b0 - t.transpose() * &inv * &t;
        let dt = DMatrix::from_row_slice(1, 2, &d);
        let c_inv = 1.0 + (&dt * &inv * dt.transpose())[(0, 0)];
        let nu0 = 8.0 - (1.0 + 2.0) + 1.0;
        let mean = (&dt * &inv * (dm.transpose() * &ym + &s0i * &b0))[(0, 0)];
        let var = (1.0 + a_star[(0, 0)]) * c_inv / (4.0 + nu0 - 2.0);
        assert!((got.mean[0] - mean).abs() < 1e-12);
        assert!((got.c_inv - c_inv).abs() < 1e-12);
        assert!((got.variance[(0, 0)] - var).abs() < 1e-12);
        assert_eq!(got.dof, 4.0 + nu0);
    }

    #[test]
    fn incremental_equals_batch_bitwise() {
        let (p, c) = (6, 2);
        let (x, y) = random_rows(700, p, c, 8);
        let batch = BayesPosterior::fit(prior(p, c, 10.0), &x, &y).unwrap();
        let mut inc = BayesPosterior::new(prior(p, c, 10.0)).unwrap();
        for (lo, hi) in [(0, 7), (7, 300), (300, 301), (301, 700)] {
            inc.add_rows(&x[lo * p..hi * p], &y[lo * c..hi * c]).unwrap();
        }
        inc.refresh().unwrap();
        assert_eq!(batch.statistics(), inc.statistics());
        let d = &x[..p];
        assert_eq!(batch.predictive(d).unwrap(), inc.predictive(d).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, c) = (4, 2);
        let (x, y) = random_rows(300, p, c, 2);
        let post = BayesPosterior::fit(prior(p, c, 5.0), &x, &y).unwrap();
        let ck = post.to_checkpoint();
        let back = BayesPosterior::from_checkpoint(&Checkpoint::from_json(&ck.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back.statistics(), post.statistics());
        assert_eq!(back.predictive(&x[..p]).unwrap(), post.predictive(&x[..p]).unwrap());
    }

    #[test]
    fn stale_cache_and_bad_prior_rejected() {
        let mut post = BayesPosterior::new(prior(2, 1, 1.0)).unwrap();
        assert!(post.predictive(&[1.0, 1.0]).is_err());
        post.refresh().unwrap();
        post.add_rows(&[1.0, 1.0], &[0.0]).unwrap();
        assert!(post.predictive(&[1.0, 1.0]).is_err());
        let bad = BayesPrior {
            n0: 3.0,
            ..prior(2, 1, 1.0)
        };
        assert!(BayesPosterior::new(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn c_inv_at_least_one_and_variance_pd(seed in 0u64..1000, n in 0usize..40) {
                let (p, c) = (4, 3);
                let (x, y) = random_rows(n, p, c, seed);
                let post = BayesPosterior::fit(prior(p, c, 3.0), &x, &y).unwrap();
                let (q, _) = random_rows(1, p, c, seed + 1);
                let pred = post.predictive(&q).unwrap();
                prop_assert!(pred.c_inv >= 1.0);
                prop_assert!(Cholesky::new(pred.variance.clone()).is_some());
                prop_assert_eq!(pred.variance.clone(), pred.variance.transpose());
            }

            #[test]
            fn mean_affine_in_prior_mean(seed in 0u64..1000, t in -2.0f64..2.0) {
                let (p, c) = (3, 2);
                let (x, y) = random_rows(10, p, c, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b1 = DMatrix::from_fn(p, c, |_, _| rng.random_range(-1.0..1.0));
                let b2 = DMatrix::from_fn(p, c, |_, _| rng.random_range(-1.0..1.0));
                let mean_for = |b: DMatrix<f64>| {
                    let pr = BayesPrior { beta0: b, ..prior(p, c, 2.0) };
                    BayesPosterior::fit(pr, &x, &y).unwrap().predictive(&x[..p]).unwrap().mean
                };
                let mix = mean_for(&b1 * (1.0 - t) + &b2 * t);
                let lin = mean_for(b1) * (1.0 - t) + mean_for(b2) * t;
                prop_assert!((mix - lin).abs().max() < 1e-9);
            }
        }
    }
}
