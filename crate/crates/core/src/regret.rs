//! Wide-range regret minimization with Hedge over (time selection, modification) pairs.
//!
//! Each index `b` carries a time-selection weight `S_b ∈ [0,1]` per round.
//! Swap indices compete against every map `[A] → [A]`, external indices
//! against every constant map. A modification `ψ` is stored as its index in
//! base `A`: digit `r` is `ψ(r)`.
//!
//! The protocol per round is `observe_time_selection`, then `recommend`, then
//! `observe_loss` (or `observe_losses` in the stochastic variant). The Hedge
//! update for a round is applied when the next round's time selections arrive.

use thiserror::Error;

/// Largest supported action count; swap sets have `A^A` elements.
pub const MAX_ACTIONS: usize = 8;
/// Target for `‖pQ − p‖₁` at every recommendation.
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Maximum number of squarings of the lazy chain (each doubles the step count).
pub const MAX_SQUARINGS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum RegretError {
    #[error("both index sets are empty")]
    EmptyIndexSets,
    #[error("{0} actions exceed the supported maximum")]
    TooManyActions(usize),
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("fixed point not reached, residual {residual:e}")]
    ConvergenceFailure { residual: f64 },
    #[error("index {index}: S·‖ℓ‖∞ = {value} exceeds the cap {cap}")]
    CapExceeded { index: usize, value: f64, cap: f64 },
    #[error("call out of order: {0}")]
    Protocol(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// One loss vector per round; the discount uses its sup norm.
    Exact,
    /// One loss vector per index, each bounded by `loss_cap / S_b`.
    Stochastic { loss_cap: f64 },
}

#[derive(Debug, Clone)]
struct Record {
    s: Vec<f64>,
    p: Vec<f64>,
    /// One vector per index, or a single shared vector.
    losses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct WideRangeMinimizer {
    num_actions: usize,
    num_swap: usize,
    num_ext: usize,
    num_maps: usize,
    eta: f64,
    variant: Variant,
    /// Unnormalized log-weights: swap pairs first (`num_maps` each), then external pairs (`A` each).
    log_w: Vec<f64>,
    current_s: Option<Vec<f64>>,
    current_p: Option<Vec<f64>>,
    pending: Option<Record>,
}

/// `ψ(r)` for the map with base-`A` index `psi`.
pub fn map_apply(num_actions: usize, psi: usize, r: usize) -> usize {
    (psi / num_actions.pow(r as u32)) % num_actions
}

impl WideRangeMinimizer {
    pub fn new(num_actions: usize, num_swap: usize, num_ext: usize, eta: f64, variant: Variant) -> Result<Self, RegretError> {
        if num_swap + num_ext == 0 {
            return Err(RegretError::EmptyIndexSets);
        }
        if num_actions == 0 || num_actions > MAX_ACTIONS {
            return Err(RegretError::TooManyActions(num_actions));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(RegretError::RangeError(format!("learning rate {eta}")));
        }
        if let Variant::Stochastic { loss_cap } = variant {
            if !(loss_cap > 0.0 && loss_cap.is_finite()) {
                return Err(RegretError::RangeError(format!("loss cap {loss_cap}")));
            }
        }
        let a = num_actions;
        let num_maps = a.pow(a as u32);
        let ln_a = (a as f64).ln();
        // Swap pairs start at |Ψ^e| = A, external pairs at |Ψ^s| = A^A.
        let mut log_w = vec![ln_a; num_swap * num_maps];
        log_w.extend(std::iter::repeat_n(a as f64 * ln_a, num_ext * a));
        Ok(WideRangeMinimizer {
            num_actions,
            num_swap,
            num_ext,
            num_maps,
            eta,
            variant,
            log_w,
            current_s: None,
            current_p: None,
            pending: None,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_indices(&self) -> usize {
        self.num_swap + self.num_ext
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Logarithm of the total unnormalized weight.
    pub fn log_total_weight(&self) -> f64 {
        let mx = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + self.log_w.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln()
    }

    /// Normalized weights over swap pairs (`[b][ψ]`) and external pairs (`[b][a]`).
    pub fn weights(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let lt = self.log_total_weight();
        let q: Vec<f64> = self.log_w.iter().map(|&l| (l - lt).exp()).collect();
        let split = self.num_swap * self.num_maps;
        let swap = q[..split].chunks(self.num_maps.max(1)).map(<[f64]>::to_vec).collect();
        let ext = q[split..].chunks(self.num_actions).map(<[f64]>::to_vec).collect();
        (swap, ext)
    }

    /// Records this round's time selections (swap indices first) and applies
    /// the previous round's update.
    pub fn observe_time_selection(&mut self, s: &[f64]) -> Result<(), RegretError> {
        if s.len() != self.num_indices() {
            return Err(RegretError::RangeError(format!("{} time selections for {} indices", s.len(), self.num_indices())));
        }
        if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RegretError::RangeError(format!("time selection {v}")));
        }
        if let Some(rec) = self.pending.take() {
            self.apply(&rec);
        }
        self.current_s = Some(s.to_vec());
        self.current_p = None;
        Ok(())
    }

    fn apply(&mut self, rec: &Record) {
        let a = self.num_actions;
        let eta = self.eta;
        let discount = match self.variant {
            Variant::Exact => (-eta * rec.losses[0].iter().cloned().fold(0.0, f64::max)).exp(),
            Variant::Stochastic { loss_cap } => (-eta * loss_cap).exp(),
        };
        for b in 0..self.num_indices() {
            let sb = rec.s[b];
            if sb == 0.0 {
                continue;
            }
            let loss = if rec.losses.len() == 1 { &rec.losses[0] } else { &rec.losses[b] };
            let base: f64 = rec.p.iter().zip(loss).map(|(p, l)| p * l).sum();
            let gain = eta * discount * sb * base;
            if b < self.num_swap {
                for psi in 0..self.num_maps {
                    let moved: f64 = (0..a).map(|r| rec.p[r] * loss[map_apply(a, psi, r)]).sum();
                    self.log_w[b * self.num_maps + psi] += gain - eta * sb * moved;
                }
            } else {
                let off = self.num_swap * self.num_maps + (b - self.num_swap) * a;
                for c in 0..a {
                    self.log_w[off + c] += gain - eta * sb * loss[c];
                }
            }
        }
    }

    /// The row-stochastic matrix `Q` of this round, or `None` when the
    /// time-selected mass is zero.
    fn transition(&self, s: &[f64]) -> Option<Vec<f64>> {
        let a = self.num_actions;
        let mx = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut q = vec![0.0; a * a];
        let mut mass = 0.0;
        for b in 0..self.num_swap {
            if s[b] == 0.0 {
                continue;
            }
            for psi in 0..self.num_maps {
                let w = s[b] * (self.log_w[b * self.num_maps + psi] - mx).exp();
                mass += w;
                for r in 0..a {
                    q[r * a + map_apply(a, psi, r)] += w;
                }
            }
        }
        for e in 0..self.num_ext {
            let sb = s[self.num_swap + e];
            if sb == 0.0 {
                continue;
            }
            let off = self.num_swap * self.num_maps + e * a;
            for c in 0..a {
                let w = sb * (self.log_w[off + c] - mx).exp();
                mass += w;
                for r in 0..a {
                    q[r * a + c] += w;
                }
            }
        }
        if mass <= 0.0 {
            return None;
        }
        for v in &mut q {
            *v /= mass;
        }
        Some(q)
    }

    /// A distribution `p` with `p Q = p`.
    pub fn recommend(&mut self) -> Result<Vec<f64>, RegretError> {
        let s = self.current_s.as_ref().ok_or(RegretError::Protocol("recommend before time selections"))?;
        let a = self.num_actions;
        let p = match self.transition(s) {
            None => vec![1.0 / a as f64; a],
            Some(q) => stationary(&q, a)?,
        };
        self.current_p = Some(p.clone());
        Ok(p)
    }

    /// Records the loss shared by every index.
    pub fn observe_loss(&mut self, loss: &[f64]) -> Result<(), RegretError> {
        self.record(vec![loss.to_vec()])
    }

    /// Records one loss vector per index (stochastic variant only).
    pub fn observe_losses(&mut self, losses: &[Vec<f64>]) -> Result<(), RegretError> {
        if self.variant == Variant::Exact {
            return Err(RegretError::Protocol("per-index losses need the stochastic variant"));
        }
        if losses.len() != self.num_indices() {
            return Err(RegretError::RangeError(format!("{} loss vectors for {} indices", losses.len(), self.num_indices())));
        }
        self.record(losses.to_vec())
    }

    fn record(&mut self, losses: Vec<Vec<f64>>) -> Result<(), RegretError> {
        if self.current_p.is_none() {
            return Err(RegretError::Protocol("loss before recommend"));
        }
        let s = self.current_s.clone().expect("set with p");
        for l in &losses {
            if l.len() != self.num_actions {
                return Err(RegretError::RangeError(format!("loss of length {}", l.len())));
            }
            if let Some(v) = l.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(RegretError::RangeError(format!("loss entry {v}")));
            }
        }
        if let Variant::Stochastic { loss_cap } = self.variant {
            for (b, &sb) in s.iter().enumerate() {
                let l = if losses.len() == 1 { &losses[0] } else { &losses[b] };
                let value = sb * l.iter().cloned().fold(0.0, f64::max);
                if value > loss_cap * (1.0 + 1e-9) {
                    return Err(RegretError::CapExceeded { index: b, value, cap: loss_cap });
                }
            }
        }
        let p = self.current_p.take().expect("checked above");
        self.pending = Some(Record { s, p, losses });
        Ok(())
    }
}

fn mat_mul(x: &[f64], y: &[f64], a: usize) -> Vec<f64> {
    let mut out = vec![0.0; a * a];
    for i in 0..a {
        for k in 0..a {
            let v = x[i * a + k];
            if v == 0.0 {
                continue;
            }
            for j in 0..a {
                out[i * a + j] += v * y[k * a + j];
            }
        }
    }
    out
}

fn residual(p: &[f64], q: &[f64], a: usize) -> f64 {
    (0..a).map(|j| ((0..a).map(|r| p[r] * q[r * a + j]).sum::<f64>() - p[j]).abs()).sum()
}

/// Limit of the lazy chain `p ← p(I+Q)/2` started from uniform. The chain is
/// advanced by repeated squaring of its transition matrix.
fn stationary(q: &[f64], a: usize) -> Result<Vec<f64>, RegretError> {
    let mut lazy: Vec<f64> = q.iter().map(|v| v / 2.0).collect();
    for r in 0..a {
        lazy[r * a + r] += 0.5;
    }
    let uniform = vec![1.0 / a as f64; a];
    let mut p = uniform.clone();
    let mut res = residual(&p, q, a);
    for _ in 0..MAX_SQUARINGS {
        if res <= FIXED_POINT_TOL {
            return Ok(p);
        }
        lazy = mat_mul(&lazy, &lazy, a);
        // Rows drift from 1 by rounding over many squarings.
        for row in lazy.chunks_mut(a) {
            let t: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= t);
        }
        p = (0..a).map(|j| (0..a).map(|r| uniform[r] * lazy[r * a + j]).sum()).collect();
        let t: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= t);
        res = residual(&p, q, a);
    }
    if res <= FIXED_POINT_TOL {
        Ok(p)
    } else {
        Err(RegretError::ConvergenceFailure { residual: res })
    }
}
