//! C ABI over `curvecast`.
//!
//! Every fallible call returns a [`CcStatus`]; on failure the message is
//! available from [`cc_last_error`] on the same thread. Results are written
//! through out-pointers only on success. No panic crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use curvecast::backtest::{sharpe, size_position, StrategyKind, StrategySpec};
use curvecast::checkpoint::Checkpoint;
use curvecast::market::{microprice, QuoteEvent};
use curvecast::model::TrainedModel;
use curvecast::uncertainty::mc_predict;
use curvecast::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    ConfigError = 1,
    DataError = 2,
    NumericalError = 3,
    NullArgument = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStrategy {
    Base = 0,
    RlsdVol = 1,
    Alea = 2,
    AlEp = 3,
}

impl From<CcStrategy> for StrategyKind {
    fn from(s: CcStrategy) -> Self {
        match s {
            CcStrategy::Base => StrategyKind::Base,
            CcStrategy::RlsdVol => StrategyKind::RlsdVol,
            CcStrategy::Alea => StrategyKind::Alea,
            CcStrategy::AlEp => StrategyKind::AlEp,
        }
    }
}

/// A trained model loaded from a checkpoint file.
pub struct CcModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: &Error) -> CcStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        1 => CcStatus::ConfigError,
        2 => CcStatus::DataError,
        _ => CcStatus::NumericalError,
    }
}

fn null(what: &str) -> CcStatus {
    set_error(&format!("{what} is null"));
    CcStatus::NullArgument
}

fn guard(f: impl FnOnce() -> CcStatus) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            CcStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Microprice of one Level-1 quote.
///
/// # Safety
/// `out` must be valid for a write of one `double`.
#[no_mangle]
pub unsafe extern "C" fn cc_microprice(
    bid_price: f64,
    ask_price: f64,
    bid_volume: u64,
    ask_volume: u64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let q = QuoteEvent {
            contract_id: 0,
            timestamp: 0,
            bid_price,
            ask_price,
            bid_volume,
            ask_volume,
        };
        match microprice(&q) {
            Ok(p) => {
                *out = p;
                CcStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Target position for predicted change `mu` and uncertainty `sigma`, both
/// in bps. `(ref_mu, ref_sigma)` is the pair mapped to a unit position;
/// `clip <= 0` disables clipping.
///
/// # Safety
/// `out` must be valid for a write of one `double`.
#[no_mangle]
pub unsafe extern "C" fn cc_size_position(
    mu: f64,
    sigma: f64,
    strategy: CcStrategy,
    threshold: f64,
    ref_mu: f64,
    ref_sigma: f64,
    clip: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let spec = StrategySpec {
            kind: strategy.into(),
            threshold,
            rescale_ref: (ref_mu, ref_sigma),
            clip: (clip > 0.0).then_some(clip),
        };
        if let Err(e) = spec.validate() {
            return fail(&e);
        }
        match size_position(mu, sigma, &spec) {
            Ok(a) => {
                *out = a;
                CcStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Mean over sample standard deviation of `n` daily returns.
///
/// # Safety
/// `returns` must point to `n` readable doubles and `out` must be valid for
/// one write.
#[no_mangle]
pub unsafe extern "C" fn cc_sharpe(returns: *const f64, n: usize, out: *mut f64) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        if returns.is_null() && n > 0 {
            return null("returns");
        }
        let r = if n == 0 { &[][..] } else { std::slice::from_raw_parts(returns, n) };
        match sharpe(r) {
            Some(s) => {
                *out = s;
                CcStatus::Ok
            }
            None => {
                set_error("sharpe undefined: fewer than two returns or no dispersion");
                CcStatus::NumericalError
            }
        }
    })
}

/// Loads a checkpoint written by the `train` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
/// Release the handle with [`cc_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cc_model_load(path: *const c_char, out: *mut *mut CcModel) -> CcStatus {
    guard(|| {
        if path.is_null() {
            return null("path");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            set_error("path is not valid UTF-8");
            return CcStatus::ConfigError;
        };
        match Checkpoint::load(Path::new(p)).and_then(|ck| TrainedModel::from_checkpoint(&ck)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(CcModel { inner: m }));
                CcStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must come from [`cc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_model_free(model: *mut CcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of contracts `C` the model predicts.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cc_model_contracts(model: *const CcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.contracts())
}

/// Length of the flattened, normalized input window.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cc_model_input_dim(model: *const CcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Predictive mean and covariances for one normalized window, in
/// normalized units. Networks use `n_samples` dropout passes seeded by
/// `seed`; the Bayesian baseline ignores both. `mean` receives `C` values,
/// `cov_aleatoric` and `cov_total` receive `C*C` values in row-major order.
///
/// # Safety
/// `window` must point to `window_len` doubles; each output must hold the
/// stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_model_predict(
    model: *const CcModel,
    window: *const f64,
    window_len: usize,
    n_samples: usize,
    seed: u64,
    mean: *mut f64,
    cov_aleatoric: *mut f64,
    cov_total: *mut f64,
) -> CcStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return null("model") };
        if window.is_null() {
            return null("window");
        }
        if mean.is_null() || cov_aleatoric.is_null() || cov_total.is_null() {
            return null("output buffer");
        }
        let d = m.inner.input_dim();
        if window_len != d {
            return fail(&Error::shape("window length", d, window_len));
        }
        let x = std::slice::from_raw_parts(window, window_len);
        let c = m.inner.contracts();
        let (mu, sa, st) = match &m.inner {
            TrainedModel::Network { params, .. } => match mc_predict(params, x, &[seed], n_samples) {
                Ok(mut v) => {
                    let u = v.remove(0);
                    (u.mu_hat, u.sigma_a_hat, u.sigma_total)
                }
                Err(e) => return fail(&e),
            },
            TrainedModel::Bayes(post) => {
                let mut row = x.to_vec();
                row.push(1.0);
                match post.predictive(&row) {
                    Ok(p) => (p.mean, p.noise, p.variance),
                    Err(e) => return fail(&e),
                }
            }
        };
        ptr::copy_nonoverlapping(mu.as_ptr(), mean, c);
        // nalgebra is column-major; both matrices are symmetric, but write
        // row-major explicitly.
        for i in 0..c {
            for j in 0..c {
                *cov_aleatoric.add(i * c + j) = sa[(i, j)];
                *cov_total.add(i * c + j) = st[(i, j)];
            }
        }
        CcStatus::Ok
    })
}
