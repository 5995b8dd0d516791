//! Scoring rule, per-client objective, analytic gradients and the proximal
//! update for the additive item embedding `C + D`.
//!
//! A client scores item `j` as `sigmoid(<u, C_j + D_j>)`. Its smooth objective
//! over a batch is the summed binary cross-entropy plus `s * lambda * ||D - C||_F^2`,
//! where `s = -1` when the regularizer rewards a large gap between `D` and `C`
//! and `s = +1` when it penalizes the gap. The `mu * ||C||_1` term is applied
//! through soft-thresholding after each gradient step.

use serde::{Deserialize, Serialize};

use crate::data::ItemSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Lower/upper clamp applied to predicted probabilities inside the log.
pub const PROB_EPS: f64 = 1e-12;

/// Half-width of the uniform initialization interval for every embedding.
pub const INIT_SCALE: f64 = 0.01;

pub type UserEmbedding = Vec<f64>;
pub type GlobalItemEmbedding = Matrix;
pub type LocalItemEmbedding = Matrix;

/// One `(item, label)` pair of a client's training universe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub item: u32,
    pub label: f64,
}

impl TrainingEntry {
    pub fn positive(item: usize) -> Self {
        TrainingEntry {
            item: item as u32,
            label: 1.0,
        }
    }

    pub fn negative(item: usize) -> Self {
        TrainingEntry {
            item: item as u32,
            label: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegSign {
    /// `- lambda * ||D - C||^2`: pushes the local and global tables apart.
    #[default]
    EncourageDifference,
    /// `+ lambda * ||D - C||^2`: pulls them together.
    PenalizeDifference,
}

impl RegSign {
    /// Sign of the difference term in the objective.
    pub fn factor(self) -> f64 {
        match self {
            RegSign::EncourageDifference => -1.0,
            RegSign::PenalizeDifference => 1.0,
        }
    }
}

impl std::str::FromStr for RegSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encourage-difference" | "encourage" => Ok(RegSign::EncourageDifference),
            "penalize-difference" | "penalize" => Ok(RegSign::PenalizeDifference),
            other => Err(Error::InvalidParam(format!("unknown reg_sign {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub k: usize,
    pub eta: f64,
    pub v1: f64,
    pub v2: f64,
    pub t1: usize,
    pub t2: usize,
    pub batch_size: usize,
    pub reg_sign: RegSign,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            k: 32,
            eta: 0.05,
            // Larger v1 lets the encouraged C/D gap grow geometrically.
            v1: 1e-3,
            v2: 1e-2,
            t1: 100,
            t2: 10,
            batch_size: 2048,
            reg_sign: RegSign::EncourageDifference,
        }
    }
}

impl HyperParams {
    /// `t2 = 0` is accepted and means "no local work".
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta must be > 0");
        }
        if !(self.v1 >= 0.0) || !(self.v2 >= 0.0) {
            return bad("v1 and v2 must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Proximal threshold for an L1 weight `mu` under this step size.
    pub fn prox_threshold(&self, mu: f64) -> f64 {
        self.eta * mu
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot_sum(u: &[f64], c: &[f64], d: Option<&[f64]>) -> f64 {
    match d {
        Some(d) => u
            .iter()
            .zip(c)
            .zip(d)
            .map(|((u, c), d)| u * (c + d))
            .sum(),
        None => u.iter().zip(c).map(|(u, c)| u * c).sum(),
    }
}

/// `sigmoid(<u, c_row + d_row>)`.
pub fn predict(u: &[f64], c_row: &[f64], d_row: &[f64]) -> Result<f64> {
    if c_row.len() != u.len() || d_row.len() != u.len() {
        return Err(Error::shape(
            format!("rows of length {}", u.len()),
            format!("{} and {}", c_row.len(), d_row.len()),
        ));
    }
    if !u.iter().chain(c_row).chain(d_row).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("predict input"));
    }
    Ok(sigmoid(dot_sum(u, c_row, Some(d_row))))
}

/// Binary cross-entropy of one label against a clamped probability.
pub fn bce_loss(r: f64, r_hat: f64) -> f64 {
    let p = r_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(r * p.ln() + (1.0 - r) * (1.0 - p).ln())
}

/// Components of one client's objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub bce: f64,
    /// `sign * lambda * ||D - C||_F^2`
    pub difference: f64,
    /// `mu * ||C||_1`
    pub l1: f64,
}

impl Objective {
    /// The differentiable part.
    pub fn smooth(&self) -> f64 {
        self.bce + self.difference
    }

    pub fn total(&self) -> f64 {
        self.bce + self.difference + self.l1
    }
}

fn check_shapes(u: &[f64], c: &Matrix, d: &Matrix, batch: &[TrainingEntry]) -> Result<()> {
    let k = u.len();
    c.check_shape(c.rows(), k, "C with k columns")?;
    d.check_shape(c.rows(), k, "D matching C")?;
    if let Some(e) = batch.iter().find(|e| e.item as usize >= c.rows()) {
        return Err(Error::shape(
            format!("item index < {}", c.rows()),
            e.item,
        ));
    }
    Ok(())
}

pub fn client_objective(
    u: &[f64],
    c: &Matrix,
    d: &Matrix,
    batch: &[TrainingEntry],
    lambda: f64,
    mu: f64,
    reg_sign: RegSign,
) -> Result<Objective> {
    check_shapes(u, c, d, batch)?;
    let bce = batch
        .iter()
        .map(|e| {
            let j = e.item as usize;
            bce_loss(e.label, sigmoid(dot_sum(u, c.row(j), Some(d.row(j)))))
        })
        .sum();
    let gap: f64 = c
        .as_slice()
        .iter()
        .zip(d.as_slice())
        .map(|(c, d)| (d - c) * (d - c))
        .sum();
    let l1: f64 = c.as_slice().iter().map(|v| v.abs()).sum();
    Ok(Objective {
        bce,
        difference: reg_sign.factor() * lambda * gap,
        l1: mu * l1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub u: Vec<f64>,
    pub c: Matrix,
    pub d: Matrix,
}

/// Exact gradients of the smooth part of [`client_objective`].
pub fn gradients(
    u: &[f64],
    c: &Matrix,
    d: &Matrix,
    batch: &[TrainingEntry],
    lambda: f64,
    reg_sign: RegSign,
) -> Result<Gradients> {
    check_shapes(u, c, d, batch)?;
    let k = u.len();
    let mut gu = vec![0.0; k];
    let mut gc = Matrix::zeros(c.rows(), k);
    for e in batch {
        let j = e.item as usize;
        let (cj, dj) = (c.row(j), d.row(j));
        let g = sigmoid(dot_sum(u, cj, Some(dj))) - e.label;
        for f in 0..k {
            gu[f] += g * (cj[f] + dj[f]);
        }
        for (acc, uf) in gc.row_mut(j).iter_mut().zip(u) {
            *acc += g * uf;
        }
    }
    let mut gd = gc.clone();
    let coef = 2.0 * reg_sign.factor() * lambda;
    if coef != 0.0 {
        for ((gc, gd), (cv, dv)) in gc
            .as_mut_slice()
            .iter_mut()
            .zip(gd.as_mut_slice())
            .zip(c.as_slice().iter().zip(d.as_slice()))
        {
            *gc += coef * (cv - dv);
            *gd += coef * (dv - cv);
        }
    }
    Ok(Gradients { u: gu, c: gc, d: gd })
}

/// `max(v - theta, 0) - max(-v - theta, 0)`.
#[inline]
pub fn shrink(v: f64, theta: f64) -> f64 {
    (v - theta).max(0.0) - (-v - theta).max(0.0)
}

pub fn soft_threshold(m: &Matrix, theta: f64) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = shrink(*v, theta));
    out
}

/// One simultaneous gradient step on `(u, C, D)` followed by soft-thresholding
/// of `C` with `theta = eta * mu`.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step_with_prox(
    u: &[f64],
    c: &Matrix,
    d: &Matrix,
    batch: &[TrainingEntry],
    lambda: f64,
    mu: f64,
    eta: f64,
    reg_sign: RegSign,
) -> Result<(UserEmbedding, Matrix, Matrix)> {
    let g = gradients(u, c, d, batch, lambda, reg_sign)?;
    let u_new = u.iter().zip(&g.u).map(|(u, g)| u - eta * g).collect();
    let theta = eta * mu;
    let mut c_new = c.clone();
    for (cv, gv) in c_new.as_mut_slice().iter_mut().zip(g.c.as_slice()) {
        *cv = shrink(*cv - eta * gv, theta);
    }
    let mut d_new = d.clone();
    for (dv, gv) in d_new.as_mut_slice().iter_mut().zip(g.d.as_slice()) {
        *dv -= eta * gv;
    }
    Ok((u_new, c_new, d_new))
}

/// How the global table reacts to a local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalRule {
    /// Gradient step followed by soft-thresholding at `eta * mu`.
    Prox,
    /// Gradient step on the smooth objective plus `mu * ||C||_F^2`; no thresholding.
    Ridge,
    /// `C` is held fixed.
    Frozen,
}

/// Parameters of one in-place local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub eta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub reg_sign: RegSign,
    pub global: GlobalRule,
    /// Clip the full gradient of `C` to this Frobenius norm before stepping.
    pub clip: Option<f64>,
}

/// Reusable buffers for [`step_in_place`]; sized for one `(m, k)`.
#[derive(Debug, Clone)]
pub struct StepScratch {
    row_grad: Matrix,
    touched: Vec<u32>,
    marks: ItemSet,
    grad_u: Vec<f64>,
}

impl StepScratch {
    pub fn new(m: usize, k: usize) -> Self {
        StepScratch {
            row_grad: Matrix::zeros(m, k),
            touched: Vec::new(),
            marks: ItemSet::new(m),
            grad_u: vec![0.0; k],
        }
    }

    fn reset(&mut self) {
        for &j in &self.touched {
            self.row_grad.row_mut(j as usize).fill(0.0);
            self.marks.remove(j as usize);
        }
        self.touched.clear();
        self.grad_u.fill(0.0);
    }
}

/// What one step observed, evaluated at the pre-step parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub bce: f64,
    /// `||D - C||_F^2`; zero when the difference term was not evaluated.
    pub gap_sq: f64,
    /// Frobenius norm of the gradient of `C` before clipping; only computed
    /// when clipping is on.
    pub grad_c_norm: f64,
    pub clipped: bool,
}

/// In-place version of [`sgd_step_with_prox`] generalized over the ablation
/// rules. `d = None` drops the local table and with it the difference term.
///
/// When `grad_c_sink` is given, the gradient actually applied to `C` (after
/// clipping) is added into it.
#[allow(clippy::too_many_arguments)]
pub fn step_in_place(
    u: &mut [f64],
    c: &mut Matrix,
    mut d: Option<&mut Matrix>,
    batch: &[TrainingEntry],
    rule: &StepRule,
    scratch: &mut StepScratch,
    grad_c_sink: Option<&mut Matrix>,
) -> Result<StepStats> {
    let k = u.len();
    let m = c.rows();
    c.check_shape(m, k, "C with k columns")?;
    if let Some(d) = d.as_deref() {
        d.check_shape(m, k, "D matching C")?;
    }
    scratch.row_grad.check_shape(m, k, "scratch")?;
    scratch.reset();

    let mut stats = StepStats::default();
    for e in batch {
        let j = e.item as usize;
        if j >= m {
            return Err(Error::shape(format!("item index < {m}"), j));
        }
        let cj = c.row(j);
        let dj = d.as_deref().map(|d| d.row(j));
        let p = sigmoid(dot_sum(u, cj, dj));
        stats.bce += bce_loss(e.label, p);
        let g = p - e.label;
        match dj {
            Some(dj) => {
                for ((acc, cf), df) in scratch.grad_u.iter_mut().zip(cj).zip(dj) {
                    *acc += g * (cf + df);
                }
            }
            None => {
                for (acc, cf) in scratch.grad_u.iter_mut().zip(cj) {
                    *acc += g * cf;
                }
            }
        }
        for (acc, uf) in scratch.row_grad.row_mut(j).iter_mut().zip(u.iter()) {
            *acc += g * uf;
        }
        if !scratch.marks.contains(j) {
            scratch.marks.insert(j);
            scratch.touched.push(j as u32);
        }
    }

    let has_gap = d.is_some() && rule.lambda != 0.0;
    let gap_coef = 2.0 * rule.reg_sign.factor() * rule.lambda;
    let ridge_coef = match rule.global {
        GlobalRule::Ridge => 2.0 * rule.mu,
        _ => 0.0,
    };
    let theta = match rule.global {
        GlobalRule::Prox => rule.eta * rule.mu,
        _ => 0.0,
    };
    let update_c = rule.global != GlobalRule::Frozen;
    // Untouched rows only move through the dense terms.
    let dense = has_gap || (update_c && (theta > 0.0 || ridge_coef != 0.0));

    let grad_c_at = |sg: f64, cv: f64, dv: f64| -> f64 {
        let mut g = sg;
        if has_gap {
            g += gap_coef * (cv - dv);
        }
        g + ridge_coef * cv
    };

    let mut scale = 1.0;
    if update_c && rule.clip.is_some() {
        let mut sq = 0.0;
        let rows: Box<dyn Iterator<Item = usize>> = if dense {
            Box::new(0..m)
        } else {
            Box::new(scratch.touched.iter().map(|&j| j as usize))
        };
        for j in rows {
            let sg = scratch.row_grad.row(j);
            let cr = c.row(j);
            for f in 0..k {
                let dv = d.as_deref().map_or(0.0, |d| d.get(j, f));
                let g = grad_c_at(sg[f], cr[f], dv);
                sq += g * g;
            }
        }
        stats.grad_c_norm = sq.sqrt();
        if let Some(tau) = rule.clip {
            if stats.grad_c_norm > tau {
                scale = tau / stats.grad_c_norm;
                stats.clipped = true;
            }
        }
    }

    let eta = rule.eta;
    let mut sink = grad_c_sink;
    if let Some(s) = sink.as_deref() {
        s.check_shape(m, k, "gradient sink")?;
    }
    let fast = dense && sink.is_none();
    let mut update_row = |j: usize, c: &mut Matrix, d: Option<&mut Matrix>, gap_sq: &mut f64| {
        let sg = scratch.row_grad.row(j);
        let cr = c.row_mut(j);
        match d {
            Some(d) => {
                let dr = d.row_mut(j);
                for f in 0..k {
                    let (cv, dv) = (cr[f], dr[f]);
                    let diff = cv - dv;
                    *gap_sq += diff * diff;
                    if update_c {
                        let gc = scale * grad_c_at(sg[f], cv, dv);
                        if let Some(s) = sink.as_deref_mut() {
                            s.row_mut(j)[f] += gc;
                        }
                        cr[f] = shrink(cv - eta * gc, theta);
                    }
                    let gd = if has_gap { sg[f] - gap_coef * diff } else { sg[f] };
                    dr[f] = dv - eta * gd;
                }
            }
            None => {
                if update_c {
                    for f in 0..k {
                        let gc = scale * grad_c_at(sg[f], cr[f], 0.0);
                        if let Some(s) = sink.as_deref_mut() {
                            s.row_mut(j)[f] += gc;
                        }
                        cr[f] = shrink(cr[f] - eta * gc, theta);
                    }
                }
            }
        }
    };

    let mut gap_sq = 0.0;
    if fast {
        let coefs = DenseCoefs {
            eta,
            scale,
            gap_coef,
            ridge_coef,
            theta,
        };
        let sg = scratch.row_grad.as_slice();
        gap_sq = match (d.as_deref_mut(), has_gap, update_c) {
            (Some(d), true, true) => dense_pass::<true, true>(c.as_mut_slice(), d.as_mut_slice(), sg, &coefs),
            (Some(d), false, true) => dense_pass::<false, true>(c.as_mut_slice(), d.as_mut_slice(), sg, &coefs),
            (Some(d), true, false) => dense_pass::<true, false>(c.as_mut_slice(), d.as_mut_slice(), sg, &coefs),
            (Some(d), false, false) => dense_pass::<false, false>(c.as_mut_slice(), d.as_mut_slice(), sg, &coefs),
            (None, _, _) => {
                dense_global_pass(c.as_mut_slice(), sg, &coefs);
                0.0
            }
        };
    } else if dense {
        for j in 0..m {
            update_row(j, c, d.as_deref_mut(), &mut gap_sq);
        }
    } else {
        for &j in &scratch.touched {
            update_row(j as usize, c, d.as_deref_mut(), &mut gap_sq);
        }
    }
    if has_gap {
        stats.gap_sq = gap_sq;
    }

    for (uf, g) in u.iter_mut().zip(&scratch.grad_u) {
        *uf -= eta * g;
    }
    Ok(stats)
}

struct DenseCoefs {
    eta: f64,
    scale: f64,
    gap_coef: f64,
    ridge_coef: f64,
    theta: f64,
}

const LANES: usize = 4;

/// Whole-table update of `C` and `D` without a gradient sink. Same per-entry
/// arithmetic as the row-wise path; returns `||C - D||^2` at the old values,
/// summed in four fixed lanes.
fn dense_pass<const GAP: bool, const UPDATE_C: bool>(
    c: &mut [f64],
    d: &mut [f64],
    sg: &[f64],
    k: &DenseCoefs,
) -> f64 {
    let mut acc = [0.0; LANES];
    let entry = |cv: &mut f64, dv: &mut f64, g: f64| -> f64 {
        let (c0, d0) = (*cv, *dv);
        let diff = c0 - d0;
        if UPDATE_C {
            let mut gc = g;
            if GAP {
                gc += k.gap_coef * diff;
            }
            gc = k.scale * (gc + k.ridge_coef * c0);
            *cv = shrink(c0 - k.eta * gc, k.theta);
        }
        let gd = if GAP { g - k.gap_coef * diff } else { g };
        *dv = d0 - k.eta * gd;
        diff * diff
    };
    let mut cc = c.chunks_exact_mut(LANES);
    let mut dc = d.chunks_exact_mut(LANES);
    let mut gc = sg.chunks_exact(LANES);
    for ((cs, ds), gs) in (&mut cc).zip(&mut dc).zip(&mut gc) {
        for l in 0..LANES {
            acc[l] += entry(&mut cs[l], &mut ds[l], gs[l]);
        }
    }
    for ((cv, dv), &g) in cc
        .into_remainder()
        .iter_mut()
        .zip(dc.into_remainder())
        .zip(gc.remainder())
    {
        acc[0] += entry(cv, dv, g);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn dense_global_pass(c: &mut [f64], sg: &[f64], k: &DenseCoefs) {
    for (cv, &g) in c.iter_mut().zip(sg) {
        let gc = k.scale * (g + k.ridge_coef * *cv);
        *cv = shrink(*cv - k.eta * gc, k.theta);
    }
}
