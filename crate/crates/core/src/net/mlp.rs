//! The two-headed perceptron: parameters, batched forward pass and
//! reverse-mode gradients of the batch objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayerSpec, NetworkConfig, Segment};
use super::density::{nll_with_grad, DensityPrediction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    /// All weights and biases, laid out by [`NetworkConfig::layout`].
    pub values: Vec<f64>,
    layout: Vec<LayerSpec>,
}

impl NetworkParams {
    /// Seeded uniform initialization, `U(-a, a)` with `a = sqrt(3 / fan_in)`;
    /// biases start at zero.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut values = vec![0.0; config.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for l in &layout {
            let a = (3.0 / l.fan_in as f64).sqrt();
            for w in &mut values[l.weights()] {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(Self {
            config: config.clone(),
            values,
            layout,
        })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            values: vec![0.0; config.param_count()],
            layout: config.layout(),
        })
    }

    pub fn from_values(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if values.len() != expected {
            return Err(Error::shape("parameter vector", expected, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter value".into()));
        }
        Ok(Self {
            config: config.clone(),
            values,
            layout: config.layout(),
        })
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sum of squared weights; biases are not penalized.
    pub fn weight_penalty(&self) -> f64 {
        self.layout
            .iter()
            .map(|l| self.values[l.weights()].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Index of the layer feeding each layer; `None` for the network input.
    fn sources(&self) -> Vec<Option<usize>> {
        let last_trunk = self
            .layout
            .iter()
            .rposition(|l| l.segment == Segment::Trunk)
            .expect("trunk present");
        self.layout
            .iter()
            .enumerate()
            .map(|(k, l)| {
                if k == 0 {
                    None
                } else if self.layout[k - 1].segment == l.segment {
                    Some(k - 1)
                } else {
                    Some(last_trunk)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Inverted dropout with masks drawn from `mask_seed`.
    Train { mask_seed: u64 },
    /// No masks and no rescaling.
    Eval,
}

/// Raw head outputs for a batch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub batch: usize,
    pub contracts: usize,
    /// `batch x contracts`
    pub mu: Vec<f64>,
    /// `batch x chol_dim`
    pub raw: Vec<f64>,
}

impl HeadOutputs {
    pub fn mu_row(&self, b: usize) -> &[f64] {
        &self.mu[b * self.contracts..(b + 1) * self.contracts]
    }

    pub fn raw_row(&self, b: usize) -> &[f64] {
        let k = self.raw.len() / self.batch.max(1);
        &self.raw[b * k..(b + 1) * k]
    }
}

struct Trace {
    /// Final (post-dropout) output of each layer.
    outputs: Vec<Vec<f64>>,
    /// ReLU output before dropout, hidden layers only.
    acts: Vec<Option<Vec<f64>>>,
    masks: Vec<Option<Vec<f64>>>,
}

/// `c = a * b` for row-major `a: m x k`, `b: k x n`, accumulating when `beta = 1`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the strided extents for the
    // given dimensions; `c` is row-major m x n and does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

fn run(params: &NetworkParams, inputs: &[f64], batch: usize, mode: Mode, keep: bool) -> Result<(HeadOutputs, Option<Trace>)> {
    let cfg = &params.config;
    let in_dim = cfg.input_dim();
    if inputs.len() != batch * in_dim {
        return Err(Error::shape("input batch", batch * in_dim, inputs.len()));
    }
    check_finite(inputs, 0)?;
    let p = cfg.dropout_rate;
    let layout = params.layout();
    let sources = params.sources();
    let mut rng = match mode {
        Mode::Train { mask_seed } if p > 0.0 => Some(ChaCha8Rng::seed_from_u64(mask_seed)),
        _ => None,
    };
    let keep_scale = 1.0 / (1.0 - p);

    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layout.len());
    let mut acts = Vec::with_capacity(layout.len());
    let mut masks = Vec::with_capacity(layout.len());
    for (k, l) in layout.iter().enumerate() {
        let input: &[f64] = match sources[k] {
            None => inputs,
            Some(s) => &outputs[s],
        };
        let mut z = vec![0.0; batch * l.fan_out];
        let bias = &params.values[l.biases()];
        for row in z.chunks_exact_mut(l.fan_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            batch,
            l.fan_in,
            l.fan_out,
            input,
            (l.fan_in as isize, 1),
            &params.values[l.weights()],
            (l.fan_out as isize, 1),
            1.0,
            &mut z,
        );
        if l.hidden {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            match rng.as_mut() {
                Some(rng) => {
                    let mask: Vec<f64> = (0..z.len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                        .collect();
                    let out: Vec<f64> = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
                    check_finite(&out, k + 1)?;
                    acts.push(if keep { Some(z) } else { None });
                    masks.push(Some(mask));
                    outputs.push(out);
                }
                None => {
                    check_finite(&z, k + 1)?;
                    acts.push(if keep { Some(z.clone()) } else { None });
                    masks.push(None);
                    outputs.push(z);
                }
            }
        } else {
            check_finite(&z, k + 1)?;
            acts.push(None);
            masks.push(None);
            outputs.push(z);
        }
    }
    let mean_out = layout
        .iter()
        .rposition(|l| l.segment == Segment::MeanHead)
        .expect("mean head");
    let heads = HeadOutputs {
        batch,
        contracts: cfg.contracts,
        mu: outputs[mean_out].clone(),
        raw: outputs[layout.len() - 1].clone(),
    };
    let trace = keep.then_some(Trace { outputs, acts, masks });
    Ok((heads, trace))
}

/// Batched forward pass to the raw head outputs.
pub fn forward_heads(params: &NetworkParams, inputs: &[f64], batch: usize, mode: Mode) -> Result<HeadOutputs> {
    run(params, inputs, batch, mode, false).map(|(h, _)| h)
}

/// Forward pass for one flattened window.
pub fn forward(params: &NetworkParams, x: &[f64], mode: Mode) -> Result<DensityPrediction> {
    let heads = forward_heads(params, x, 1, mode)?;
    Ok(DensityPrediction::from_heads(
        heads.mu_row(0),
        heads.raw_row(0),
        params.config.covariance_mode,
    ))
}

/// Monte-Carlo dropout pass: `passes` masked evaluations of every input row.
///
/// Output row `b * passes + n` is pass `n` of input `b`. The masks of that
/// row come from a ChaCha8 generator seeded with `seeds[b]` on stream `n`,
/// drawn layer by layer, so a row's masks do not depend on which other rows
/// share the call. The first layer's affine map is computed once per input
/// since dropout only acts after it. Without dropout every pass is a copy of
/// a single evaluation, so the passes agree bit for bit.
pub fn forward_heads_mc(
    params: &NetworkParams,
    inputs: &[f64],
    batch: usize,
    passes: usize,
    seeds: &[u64],
) -> Result<HeadOutputs> {
    let cfg = &params.config;
    let in_dim = cfg.input_dim();
    if inputs.len() != batch * in_dim {
        return Err(Error::shape("input batch", batch * in_dim, inputs.len()));
    }
    if seeds.len() != batch {
        return Err(Error::shape("mask seeds", batch, seeds.len()));
    }
    check_finite(inputs, 0)?;
    let p = cfg.dropout_rate;
    if p == 0.0 && passes > 1 {
        let one = forward_heads_mc(params, inputs, batch, 1, seeds)?;
        let k = one.raw.len() / batch.max(1);
        let mut mu = Vec::with_capacity(batch * passes * cfg.contracts);
        let mut raw = Vec::with_capacity(batch * passes * k);
        for b in 0..batch {
            for _ in 0..passes {
                mu.extend_from_slice(one.mu_row(b));
                raw.extend_from_slice(one.raw_row(b));
            }
        }
        return Ok(HeadOutputs {
            batch: batch * passes,
            contracts: cfg.contracts,
            mu,
            raw,
        });
    }
    let layout = params.layout();
    let sources = params.sources();
    let keep_scale = 1.0 / (1.0 - p);
    let rows = batch * passes;
    let mut rngs: Vec<ChaCha8Rng> = if p > 0.0 {
        (0..rows)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds[r / passes.max(1)]);
                rng.set_stream((r % passes) as u64);
                rng
            })
            .collect()
    } else {
        Vec::new()
    };

    let affine = |l: &LayerSpec, input: &[f64], n: usize| {
        let mut z = vec![0.0; n * l.fan_out];
        for row in z.chunks_exact_mut(l.fan_out) {
            row.copy_from_slice(&params.values[l.biases()]);
        }
        gemm(n, l.fan_in, l.fan_out, input, (l.fan_in as isize, 1), &params.values[l.weights()], (l.fan_out as isize, 1), 1.0, &mut z);
        z
    };

    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layout.len());
    for (k, l) in layout.iter().enumerate() {
        let mut z = match sources[k] {
            None => {
                let z0 = affine(l, inputs, batch);
                let mut z = Vec::with_capacity(rows * l.fan_out);
                for row in z0.chunks_exact(l.fan_out) {
                    for _ in 0..passes {
                        z.extend_from_slice(row);
                    }
                }
                z
            }
            Some(s) => affine(l, &outputs[s], rows),
        };
        if l.hidden {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            if p > 0.0 {
                for (row, rng) in z.chunks_exact_mut(l.fan_out).zip(rngs.iter_mut()) {
                    for v in row {
                        *v *= if rng.random::<f64>() < p { 0.0 } else { keep_scale };
                    }
                }
            }
        }
        check_finite(&z, k + 1)?;
        outputs.push(z);
    }
    let mean_out = layout
        .iter()
        .rposition(|l| l.segment == Segment::MeanHead)
        .expect("mean head");
    let raw = outputs.pop().expect("layers present");
    Ok(HeadOutputs {
        batch: rows,
        contracts: cfg.contracts,
        mu: std::mem::take(&mut outputs[mean_out]),
        raw,
    })
}

/// A borrowed mini-batch: row-major inputs and normalized targets.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
    pub len: usize,
}

/// Mean per-sample loss of the heads against the batch targets.
pub fn mean_nll(params: &NetworkParams, heads: &HeadOutputs, targets: &[f64]) -> f64 {
    let c = params.config.contracts;
    let k = params.config.chol_dim();
    let mut d_mu = vec![0.0; c];
    let mut d_raw = vec![0.0; k];
    let mut scratch = vec![0.0; 2 * c];
    let mut total = 0.0;
    for b in 0..heads.batch {
        total += nll_with_grad(
            heads.mu_row(b),
            heads.raw_row(b),
            &targets[b * c..(b + 1) * c],
            params.config.covariance_mode,
            &mut d_mu,
            &mut d_raw,
            &mut scratch,
        );
    }
    total / heads.batch as f64
}

/// Batch objective: mean loss plus `l2_lambda * ||weights||^2`.
pub fn objective(params: &NetworkParams, batch: Batch<'_>, mode: Mode) -> Result<f64> {
    let heads = forward_heads(params, batch.inputs, batch.len, mode)?;
    Ok(mean_nll(params, &heads, batch.targets) + params.config.l2_lambda * params.weight_penalty())
}

/// Objective value and its gradient with respect to every parameter.
pub fn backward(params: &NetworkParams, batch: Batch<'_>, mode: Mode) -> Result<(f64, Vec<f64>)> {
    if batch.len == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let cfg = &params.config;
    let c = cfg.contracts;
    let kdim = cfg.chol_dim();
    if batch.targets.len() != batch.len * c {
        return Err(Error::shape("target batch", batch.len * c, batch.targets.len()));
    }
    let (heads, trace) = run(params, batch.inputs, batch.len, mode, true)?;
    let trace = trace.expect("trace kept");
    let layout = params.layout();
    let sources = params.sources();
    let n = batch.len;
    let inv_n = 1.0 / n as f64;

    // Head gradients, already divided by the batch size.
    let mut d_mu = vec![0.0; n * c];
    let mut d_raw = vec![0.0; n * kdim];
    let mut scratch = vec![0.0; 2 * c];
    let mut loss = 0.0;
    for b in 0..n {
        loss += nll_with_grad(
            heads.mu_row(b),
            heads.raw_row(b),
            &batch.targets[b * c..(b + 1) * c],
            cfg.covariance_mode,
            &mut d_mu[b * c..(b + 1) * c],
            &mut d_raw[b * kdim..(b + 1) * kdim],
            &mut scratch,
        );
    }
    d_mu.iter_mut().for_each(|g| *g *= inv_n);
    d_raw.iter_mut().for_each(|g| *g *= inv_n);
    let objective = loss * inv_n + cfg.l2_lambda * params.weight_penalty();

    let mean_out = layout
        .iter()
        .rposition(|l| l.segment == Segment::MeanHead)
        .expect("mean head");
    let mut d_outputs: Vec<Option<Vec<f64>>> = vec![None; layout.len()];
    d_outputs[mean_out] = Some(d_mu);
    d_outputs[layout.len() - 1] = Some(d_raw);

    let mut grads = vec![0.0; params.len()];
    for k in (0..layout.len()).rev() {
        let l = &layout[k];
        let mut dz = d_outputs[k].take().expect("gradient reaches every layer");
        if l.hidden {
            if let Some(mask) = &trace.masks[k] {
                dz.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
            }
            let act = trace.acts[k].as_ref().expect("hidden activations kept");
            dz.iter_mut().zip(act).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let input: &[f64] = match sources[k] {
            None => batch.inputs,
            Some(s) => &trace.outputs[s],
        };
        // dW = X^T dZ
        gemm(
            l.fan_in,
            n,
            l.fan_out,
            input,
            (1, l.fan_in as isize),
            &dz,
            (l.fan_out as isize, 1),
            0.0,
            &mut grads[l.weights()],
        );
        let db = &mut grads[l.biases()];
        for row in dz.chunks_exact(l.fan_out) {
            db.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        if let Some(s) = sources[k] {
            // dX = dZ W^T
            let target = d_outputs[s].get_or_insert_with(|| vec![0.0; n * l.fan_in]);
            gemm(
                n,
                l.fan_out,
                l.fan_in,
                &dz,
                (l.fan_out as isize, 1),
                &params.values[l.weights()],
                (1, l.fan_out as isize),
                1.0,
                target,
            );
        }
    }
    if cfg.l2_lambda > 0.0 {
        let two_l = 2.0 * cfg.l2_lambda;
        for l in layout {
            let r = l.weights();
            for (g, w) in grads[r.clone()].iter_mut().zip(&params.values[r]) {
                *g += two_l * w;
            }
        }
    }
    Ok((objective, grads))
}
