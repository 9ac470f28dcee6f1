//! Central-difference verification of analytic gradients.

use crate::params::ParamStore;
use crate::rng::RngState;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Perturbation half-width.
    pub h: f32,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Coordinates to sample; every coordinate is checked when the store
    /// holds fewer.
    pub samples: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are judged on absolute error at this scale.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-3,
            tol: 1e-2,
            samples: 200,
            abs_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    /// Checked coordinates sorted by descending relative error.
    pub worst: Vec<CoordCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordCheck> {
        self.worst.iter().filter(|c| c.rel_error >= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients already stored in `params` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` of `f`, over a random subsample of
/// coordinates (plus any in `forced`). `f` must be deterministic.
pub fn gradcheck<F>(mut f: F, params: &ParamStore, opts: &GradcheckOptions, forced: &[(String, usize)]) -> GradcheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let sizes: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_string(), t.len())).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();

    let mut coords: Vec<(String, usize)> = Vec::new();
    if total <= opts.samples {
        for (name, n) in &sizes {
            coords.extend((0..*n).map(|i| (name.clone(), i)));
        }
    } else {
        let mut rng = RngState::new(opts.seed, 0);
        for _ in 0..opts.samples {
            let mut flat = rng.below(total);
            for (name, n) in &sizes {
                if flat < *n {
                    coords.push((name.clone(), flat));
                    break;
                }
                flat -= n;
            }
        }
    }
    for c in forced {
        if !coords.contains(c) {
            coords.push(c.clone());
        }
    }

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(coords.len());
    for (name, idx) in coords {
        let orig = probe.get(&name).expect("sampled from store").data()[idx];
        let set = |s: &mut ParamStore, v: f32| s.get_mut(&name).expect("present").data_mut()[idx] = v;
        set(&mut probe, orig + opts.h);
        let up = f(&probe);
        set(&mut probe, orig - opts.h);
        let down = f(&probe);
        set(&mut probe, orig);
        // the perturbation actually applied, after f32 rounding
        let step = ((orig + opts.h) as f64) - ((orig - opts.h) as f64);
        let numeric = (up - down) / step;
        let analytic = params.grad(&name).expect("present").data()[idx] as f64;
        checks.push(CoordCheck {
            rel_error: relative_error(analytic, numeric, opts.abs_floor),
            param: name,
            index: idx,
            analytic,
            numeric,
        });
    }
    checks.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    GradcheckReport {
        checked: checks.len(),
        max_rel_error: checks.first().map_or(0.0, |c| c.rel_error),
        tol: opts.tol,
        worst: checks,
    }
}
