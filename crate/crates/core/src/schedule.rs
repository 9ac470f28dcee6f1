//! Dropout-rate schedules.
//!
//! Each decaying schedule maps an iteration `t ∈ [0, T]` to a rate between
//! `p0` and `pf`:
//!
//! | kind        | p(t)                                            |
//! |-------------|-------------------------------------------------|
//! | constant    | `p0`                                            |
//! | linear      | `p0·(1 − t/T) + pf·t/T`                         |
//! | exponential | `p0·(pf'/p0)^(t/T)`, `pf' = max(pf, ε)`         |
//! | step        | `max(pf, p0·decay^⌊t/step⌋)`                    |
//! | cosine      | `pf + (p0 − pf)·(1 + cos(πt/T))/2`              |
//!
//! The validation-loss-adaptive schedule is a controller instead: it holds a
//! current rate, nudges it down by `adapt_delta` whenever the validation loss
//! beats the best seen so far, and up by the same amount otherwise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    LinearDecay,
    ExponentialDecay,
    StepDecay,
    CosineAnnealing,
    ValLossAdaptive,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Constant,
        ScheduleKind::LinearDecay,
        ScheduleKind::ExponentialDecay,
        ScheduleKind::StepDecay,
        ScheduleKind::CosineAnnealing,
        ScheduleKind::ValLossAdaptive,
    ];

    /// Stable report label.
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "baseline",
            ScheduleKind::LinearDecay => "linear",
            ScheduleKind::ExponentialDecay => "exponential",
            ScheduleKind::StepDecay => "step",
            ScheduleKind::CosineAnnealing => "cosine",
            ScheduleKind::ValLossAdaptive => "val_adaptive",
        }
    }

    /// Whether the rate is a pure function of the iteration.
    pub fn is_deterministic(self) -> bool {
        self != ScheduleKind::ValLossAdaptive
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" | "constant" => ScheduleKind::Constant,
            "linear" | "linear_decay" => ScheduleKind::LinearDecay,
            "exponential" | "exponential_decay" => ScheduleKind::ExponentialDecay,
            "step" | "step_decay" => ScheduleKind::StepDecay,
            "cosine" | "cosine_annealing" => ScheduleKind::CosineAnnealing,
            "val_adaptive" | "val_loss_adaptive" | "adaptive" => ScheduleKind::ValLossAdaptive,
            other => {
                return Err(Error::Config(format!(
                    "unknown schedule {other:?} (expected one of baseline, linear, exponential, step, cosine, val_adaptive)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub p0: f64,
    pub pf: f64,
    pub total_iters: usize,
    pub decay_factor: f64,
    pub step_size: usize,
    pub adapt_delta: f64,
    pub adapt_p_min: f64,
    /// Upper clamp for the adaptive controller; `None` means `p0`.
    pub adapt_p_max: Option<f64>,
    pub improve_tol: f64,
    pub exp_floor_eps: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            p0: 0.2,
            pf: 0.0,
            total_iters: 5000,
            decay_factor: 0.5,
            step_size: 1000,
            adapt_delta: 0.01,
            adapt_p_min: 0.0,
            adapt_p_max: None,
            improve_tol: 0.0,
            exp_floor_eps: 1e-3,
        }
    }
}

impl ScheduleConfig {
    pub fn p_max(&self) -> f64 {
        self.adapt_p_max.unwrap_or(self.p0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let frac = |v: f64| (0.0..1.0).contains(&v);
        if !frac(self.p0) || !frac(self.pf) {
            return bad(format!("p0={} and pf={} must lie in [0, 1)", self.p0, self.pf));
        }
        if self.pf > self.p0 {
            return bad(format!("pf={} exceeds p0={}", self.pf, self.p0));
        }
        if self.total_iters == 0 || self.step_size == 0 {
            return bad("total_iters and step_size must be at least 1".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor={} must lie in (0, 1]", self.decay_factor));
        }
        if !(self.adapt_delta >= 0.0 && self.adapt_delta.is_finite()) {
            return bad(format!("adapt_delta={} must be finite and non-negative", self.adapt_delta));
        }
        if !frac(self.adapt_p_min) || !frac(self.p_max()) || self.adapt_p_min > self.p_max() {
            return bad(format!(
                "adaptive bounds [{}, {}] must satisfy 0 <= min <= max < 1",
                self.adapt_p_min,
                self.p_max()
            ));
        }
        if !(self.improve_tol >= 0.0 && self.improve_tol.is_finite()) {
            return bad(format!("improve_tol={} must be finite and non-negative", self.improve_tol));
        }
        if !(self.exp_floor_eps > 0.0 && self.exp_floor_eps < 1.0) {
            return bad(format!("exp_floor_eps={} must lie in (0, 1)", self.exp_floor_eps));
        }
        Ok(())
    }

    fn check_horizon(&self, t: usize) -> Result<()> {
        if t > self.total_iters {
            Err(Error::OutOfRange {
                t,
                total: self.total_iters,
            })
        } else {
            Ok(())
        }
    }

    fn progress(&self, t: usize) -> f64 {
        t as f64 / self.total_iters as f64
    }

    /// The exponential schedule's effective target.
    pub fn exp_target(&self) -> f64 {
        self.pf.max(self.exp_floor_eps).min(self.p0)
    }
}

fn bounded(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

pub fn rate_linear(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_horizon(t)?;
    if t == cfg.total_iters {
        return Ok(cfg.pf);
    }
    let f = cfg.progress(t);
    // p0 − (p0 − pf)·f is the same line, written so each rounding step is
    // monotone in t
    Ok(bounded(cfg.p0 - (cfg.p0 - cfg.pf) * f, cfg.pf, cfg.p0))
}

pub fn rate_exponential(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_horizon(t)?;
    if cfg.p0 == 0.0 {
        return Ok(0.0);
    }
    let target = cfg.exp_target();
    if t == cfg.total_iters {
        return Ok(target);
    }
    let p = cfg.p0 * (target / cfg.p0).powf(cfg.progress(t));
    Ok(bounded(p, target, cfg.p0))
}

pub fn rate_step(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if cfg.step_size == 0 {
        return Err(Error::Config("step_size must be at least 1".into()));
    }
    let k = (t / cfg.step_size).min(i32::MAX as usize) as i32;
    Ok(cfg.pf.max(cfg.p0 * cfg.decay_factor.powi(k)))
}

pub fn rate_cosine(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_horizon(t)?;
    if t == 0 {
        return Ok(cfg.p0);
    }
    if t == cfg.total_iters {
        return Ok(cfg.pf);
    }
    let c = (std::f64::consts::PI * cfg.progress(t)).cos();
    Ok(bounded(cfg.pf + (cfg.p0 - cfg.pf) * (1.0 + c) / 2.0, cfg.pf, cfg.p0))
}

/// State of the validation-loss-adaptive controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub current_p: f64,
    /// `None` until the first evaluation (the +∞ sentinel).
    pub best_val_loss: Option<f64>,
    pub evals_seen: usize,
}

impl AdaptiveState {
    pub fn new(cfg: &ScheduleConfig) -> AdaptiveState {
        AdaptiveState {
            current_p: cfg.p0.clamp(cfg.adapt_p_min, cfg.p_max()),
            best_val_loss: None,
            evals_seen: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best_val_loss.unwrap_or(f64::INFINITY)
    }
}

/// One controller step: lower the rate on strict improvement over the best
/// validation loss (by more than `improve_tol`), raise it otherwise.
pub fn adaptive_update(state: &AdaptiveState, val_loss: f64, cfg: &ScheduleConfig) -> Result<(AdaptiveState, f64)> {
    if !val_loss.is_finite() || val_loss < 0.0 {
        return Err(Error::InvalidInput(format!(
            "validation loss {val_loss} must be finite and non-negative"
        )));
    }
    let (p_min, p_max) = (cfg.adapt_p_min, cfg.p_max());
    let improved = val_loss < state.best() - cfg.improve_tol;
    let (current_p, best_val_loss) = if improved {
        ((state.current_p - cfg.adapt_delta).max(p_min), Some(val_loss))
    } else {
        ((state.current_p + cfg.adapt_delta).min(p_max), state.best_val_loss)
    };
    let next = AdaptiveState {
        current_p,
        best_val_loss,
        evals_seen: state.evals_seen + 1,
    };
    Ok((next, current_p))
}

/// Controller step as driven by the trainer. The first observation only
/// records the reference loss (an untrained model has nothing to improve on)
/// and leaves the rate at its initial value; later observations go through
/// [`adaptive_update`].
pub fn adaptive_observe(state: &AdaptiveState, val_loss: f64, cfg: &ScheduleConfig) -> Result<(AdaptiveState, f64)> {
    if state.evals_seen > 0 {
        return adaptive_update(state, val_loss, cfg);
    }
    if !val_loss.is_finite() || val_loss < 0.0 {
        return Err(Error::InvalidInput(format!(
            "validation loss {val_loss} must be finite and non-negative"
        )));
    }
    let next = AdaptiveState {
        current_p: state.current_p,
        best_val_loss: Some(state.best().min(val_loss)),
        evals_seen: 1,
    };
    Ok((next, state.current_p))
}

/// The rate for iteration `t` under `kind`. The adaptive schedule reads the
/// controller's current rate; it changes only through [`adaptive_update`].
pub fn rate_at(kind: ScheduleKind, t: usize, cfg: &ScheduleConfig, state: Option<&AdaptiveState>) -> Result<f64> {
    match kind {
        ScheduleKind::Constant => Ok(cfg.p0),
        ScheduleKind::LinearDecay => rate_linear(t, cfg),
        ScheduleKind::ExponentialDecay => rate_exponential(t, cfg),
        ScheduleKind::StepDecay => rate_step(t, cfg),
        ScheduleKind::CosineAnnealing => rate_cosine(t, cfg),
        ScheduleKind::ValLossAdaptive => state
            .map(|s| s.current_p)
            .ok_or_else(|| Error::Config("val_adaptive schedule requires controller state".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> ScheduleConfig {
        ScheduleConfig::default()
    }

    #[test]
    fn linear_values() {
        let c = base_cfg();
        assert_eq!(rate_linear(0, &c).unwrap(), 0.2);
        assert_eq!(rate_linear(2500, &c).unwrap(), 0.1);
        assert_eq!(rate_linear(5000, &c).unwrap(), 0.0);
        assert!(matches!(rate_linear(5001, &c), Err(Error::OutOfRange { t: 5001, total: 5000 })));
    }

    #[test]
    fn exponential_values() {
        let c = ScheduleConfig { pf: 0.001, ..base_cfg() };
        assert_eq!(rate_exponential(0, &c).unwrap(), 0.2);
        assert_eq!(rate_exponential(5000, &c).unwrap(), 0.001);
        // 0.2 · sqrt(0.005), evaluated by hand to 12 digits
        assert!((rate_exponential(2500, &c).unwrap() - 0.014_142_135_623_7).abs() < 1e-12);
        assert!(rate_exponential(5001, &c).is_err());
    }

    #[test]
    fn exponential_zero_target_is_floored() {
        let c = base_cfg();
        assert_eq!(rate_exponential(5000, &c).unwrap(), 1e-3);
        assert!(rate_exponential(1, &c).unwrap() > 0.19);
    }

    #[test]
    fn exponential_with_zero_start() {
        let c = ScheduleConfig { p0: 0.0, ..base_cfg() };
        for t in [0, 10, 5000] {
            assert_eq!(rate_exponential(t, &c).unwrap(), 0.0);
        }
    }

    #[test]
    fn step_values() {
        let c = base_cfg();
        assert_eq!(rate_step(999, &c).unwrap(), 0.2);
        assert_eq!(rate_step(1000, &c).unwrap(), 0.1);
        assert_eq!(rate_step(2500, &c).unwrap(), 0.05);
        // defined past the horizon
        assert!(rate_step(1_000_000, &c).unwrap() >= 0.0);
    }

    #[test]
    fn cosine_values() {
        let c = base_cfg();
        assert_eq!(rate_cosine(0, &c).unwrap(), 0.2);
        assert_eq!(rate_cosine(2500, &c).unwrap(), 0.1);
        assert_eq!(rate_cosine(5000, &c).unwrap(), 0.0);
        assert!(rate_cosine(5001, &c).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let c = base_cfg();
        let s = AdaptiveState::new(&c);
        let (s, p) = adaptive_update(&s, 1.8, &c).unwrap();
        assert!((p - 0.19).abs() < 1e-12);
        assert_eq!(s.best_val_loss, Some(1.8));
        let (s, p) = adaptive_update(&s, 1.9, &c).unwrap();
        assert!((p - 0.20).abs() < 1e-12);
        assert_eq!(s.best_val_loss, Some(1.8));
        assert_eq!(s.evals_seen, 2);

        let floor = AdaptiveState {
            current_p: 0.0,
            best_val_loss: Some(1.5),
            evals_seen: 4,
        };
        let (s, p) = adaptive_update(&floor, 1.4, &c).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(s.best_val_loss, Some(1.4));
    }

    #[test]
    fn observed_trace_primes_on_first_loss() {
        let c = base_cfg();
        let mut s = AdaptiveState::new(&c);
        let mut trace = Vec::new();
        for v in [2.0, 1.9, 1.95, 1.8] {
            let (next, p) = adaptive_observe(&s, v, &c).unwrap();
            s = next;
            trace.push(p);
        }
        assert_eq!(trace[0], 0.2);
        for (got, want) in trace[1..].iter().zip([0.19, 0.20, 0.19]) {
            assert!((got - want).abs() < 1e-12, "{trace:?}");
        }
        assert_eq!(s.best_val_loss, Some(1.8));
        assert_eq!(s.evals_seen, 4);
    }

    #[test]
    fn adaptive_tie_counts_as_no_improvement() {
        let c = base_cfg();
        let s = AdaptiveState {
            current_p: 0.1,
            best_val_loss: Some(1.5),
            evals_seen: 1,
        };
        let (_, p) = adaptive_update(&s, 1.5, &c).unwrap();
        assert!(p > 0.1);
    }

    #[test]
    fn adaptive_rejects_non_finite() {
        let c = base_cfg();
        let s = AdaptiveState::new(&c);
        assert!(adaptive_update(&s, f64::NAN, &c).is_err());
        assert!(adaptive_update(&s, f64::INFINITY, &c).is_err());
    }

    #[test]
    fn rate_at_dispatch() {
        let c = base_cfg();
        assert_eq!(rate_at(ScheduleKind::Constant, 4999, &c, None).unwrap(), 0.2);
        assert_eq!(rate_at(ScheduleKind::LinearDecay, 0, &c, None).unwrap(), 0.2);
        let s = AdaptiveState {
            current_p: 0.13,
            best_val_loss: None,
            evals_seen: 0,
        };
        assert_eq!(rate_at(ScheduleKind::ValLossAdaptive, 77, &c, Some(&s)).unwrap(), 0.13);
        assert!(matches!(
            rate_at(ScheduleKind::ValLossAdaptive, 0, &c, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn labels_round_trip() {
        for k in ScheduleKind::ALL {
            assert_eq!(k.label().parse::<ScheduleKind>().unwrap(), k);
        }
    }

    #[test]
    fn validation_rejects_inverted_endpoints() {
        let c = ScheduleConfig { pf: 0.3, ..base_cfg() };
        assert!(c.validate().is_err());
        assert!(base_cfg().validate().is_ok());
    }
}
