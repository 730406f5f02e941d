//! Amplification metrics, power-law fits, the Grover baseline and quench
//! comparisons of coherent versus incoherent orbit states.

use crate::ctqw::{Propagator, StateVector, WalkGenerator, C64};
use crate::error::{Error, Result};
use crate::rydberg::{emulate_from, synthesize_walk_pulse, AtomLayout, EmulateOptions, Fragment, PhysicalConstants, RydbergProgram};
use crate::subspace::{DihedralOrbit, SubspaceBasis};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationPoint {
    pub subspace_size: usize,
    pub success: f64,
    pub target_cardinality: usize,
    /// `|V| P / |z*|`
    pub amplification: f64,
}

pub fn amplification(subspace_size: usize, success: f64, target_cardinality: usize) -> Result<AmplificationPoint> {
    if target_cardinality == 0 {
        return Err(Error::EmptyTarget);
    }
    if !(0.0..=1.0).contains(&success) {
        return Err(Error::InvalidArgument(format!("success probability {success} outside [0, 1]")));
    }
    Ok(AmplificationPoint {
        subspace_size,
        success,
        target_cardinality,
        amplification: subspace_size as f64 * success / target_cardinality as f64,
    })
}

/// Interval on the speedup order `n = 1/(1 − α)`; `high = None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupOrder {
    pub value: f64,
    pub low: f64,
    pub high: Option<f64>,
}

impl SpeedupOrder {
    pub fn from_alpha(alpha: f64, alpha_low: f64, alpha_high: f64) -> Self {
        let n = |a: f64| if a < 1.0 { 1.0 / (1.0 - a) } else { f64::INFINITY };
        let high = n(alpha_high);
        Self { value: n(alpha), low: n(alpha_low), high: high.is_finite().then_some(high) }
    }

    pub fn is_bounded(&self) -> bool {
        self.high.is_some() && self.value.is_finite()
    }
}

impl std::fmt::Display for SpeedupOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.high {
            Some(h) if self.value.is_finite() => write!(f, "{:.2} [{:.2}, {:.2}]", self.value, self.low, h),
            _ => write!(f, ">= {:.2}", self.low),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub alpha: f64,
    /// 95% half-widths.
    pub c_ci: f64,
    pub alpha_ci: f64,
    pub r_squared: f64,
    pub speedup: SpeedupOrder,
    /// The fit sits on the constraint `α = 1`.
    pub at_bound: bool,
}

/// Weighted least squares of `A = c |V|^α` with `α ≤ 1`.
///
/// `sigma` gives the per-point uncertainty; `None` uses relative errors
/// (`σ_i = A_i`). Intervals are 1.96 standard errors from the
/// residual-scaled covariance.
pub fn fit_power_law(sizes: &[f64], amps: &[f64], sigma: Option<&[f64]>) -> Result<PowerLawFit> {
    let m = sizes.len();
    if m < 3 {
        return Err(Error::TooFewInstances { needed: 3, got: m });
    }
    if amps.len() != m || sigma.is_some_and(|s| s.len() != m) {
        return Err(Error::InvalidArgument("sizes, amplifications and weights differ in length".into()));
    }
    if sizes.iter().chain(amps).any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("sizes and amplifications must be positive".into()));
    }
    let sig: Vec<f64> = match sigma {
        Some(s) => {
            if s.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::InvalidArgument("weights must be positive".into()));
            }
            s.to_vec()
        }
        None => amps.to_vec(),
    };
    let lx: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let mean_lx = lx.iter().sum::<f64>() / m as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mean_lx).powi(2)).sum();
    if sxx < 1e-14 * (1.0 + mean_lx * mean_lx) {
        return Err(Error::FitFailure("all sizes are equal".into()));
    }
    // log-log start
    let ly: Vec<f64> = amps.iter().map(|a| a.ln()).collect();
    let mean_ly = ly.iter().sum::<f64>() / m as f64;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mean_lx) * (y - mean_ly)).sum::<f64>() / sxx;
    let mut alpha = slope.min(1.0);
    let mut c = (mean_ly - alpha * mean_lx).exp();

    let cost = |c: f64, a: f64| -> f64 {
        (0..m).map(|i| ((amps[i] - c * sizes[i].powf(a)) / sig[i]).powi(2)).sum()
    };
    // scale-free parametrisation: c = exp(u)
    let mut u = c.ln();
    let mut lambda = 1e-3;
    let mut f = cost(c, alpha);
    let mut at_bound = false;
    for _ in 0..500 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for i in 0..m {
            let model = c * sizes[i].powf(alpha);
            let r = (amps[i] - model) / sig[i];
            let j = Vector2::new(model / sig[i], model * lx[i] / sig[i]);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        at_bound = alpha >= 1.0 - 1e-15 && jtr[1] > 0.0;
        let mut improved = false;
        for _ in 0..60 {
            let step = if at_bound {
                let d = jtj[(0, 0)] * (1.0 + lambda);
                if d <= 0.0 {
                    return Err(Error::FitFailure("singular normal equations".into()));
                }
                Vector2::new(jtr[0] / d, 0.0)
            } else {
                let mut a = jtj;
                a[(0, 0)] *= 1.0 + lambda;
                a[(1, 1)] *= 1.0 + lambda;
                match a.try_inverse() {
                    Some(inv) => inv * jtr,
                    None => return Err(Error::FitFailure("singular normal equations".into())),
                }
            };
            let nu = u + step[0];
            let na = (alpha + step[1]).min(1.0);
            let nf = cost(nu.exp(), na);
            if nf <= f {
                let done = (nf - f).abs() <= 1e-15 * f.max(1e-300) && step.norm() < 1e-12;
                u = nu;
                alpha = na;
                c = nu.exp();
                f = nf;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    // The cost is flat to rounding near the optimum, so finish with plain
    // Gauss-Newton steps on the gradient.
    for _ in 0..20 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for i in 0..m {
            let model = c * sizes[i].powf(alpha);
            let r = (amps[i] - model) / sig[i];
            let j = Vector2::new(model / sig[i], model * lx[i] / sig[i]);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let step = if at_bound || alpha >= 1.0 {
            Vector2::new(jtr[0] / jtj[(0, 0)], 0.0)
        } else {
            match jtj.try_inverse() {
                Some(inv) => inv * jtr,
                None => break,
            }
        };
        if !(step.norm() < 1e-6) || alpha + step[1] > 1.0 {
            break;
        }
        u += step[0];
        alpha += step[1];
        c = u.exp();
        if step.norm() < 1e-15 {
            break;
        }
    }
    f = cost(c, alpha);

    let mut jtj = Matrix2::zeros();
    for i in 0..m {
        let model = c * sizes[i].powf(alpha);
        let j = Vector2::new(sizes[i].powf(alpha) / sig[i], model * lx[i] / sig[i]);
        jtj += j * j.transpose();
    }
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular covariance".into()))?
        * if m > 2 { f / (m - 2) as f64 } else { 0.0 };
    let c_ci = 1.96 * cov[(0, 0)].max(0.0).sqrt();
    let alpha_ci = 1.96 * cov[(1, 1)].max(0.0).sqrt();
    let mean_a = amps.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = amps.iter().map(|a| (a - mean_a).powi(2)).sum();
    let ss_res: f64 = (0..m).map(|i| (amps[i] - c * sizes[i].powf(alpha)).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    at_bound = at_bound || alpha >= 1.0;
    Ok(PowerLawFit {
        c,
        alpha,
        c_ci,
        alpha_ci,
        r_squared,
        speedup: SpeedupOrder::from_alpha(alpha, alpha - alpha_ci, alpha + alpha_ci),
        at_bound,
    })
}

/// Standard Grover success after `p` iterations with one marked item.
pub fn grover_reference(subspace_size: usize, p: usize) -> Result<f64> {
    if subspace_size == 0 {
        return Err(Error::InvalidArgument("empty search space".into()));
    }
    let theta = (1.0 / subspace_size as f64).sqrt().asin();
    Ok(((2 * p + 1) as f64 * theta).sin().powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuenchMode {
    /// Evolve the equal superposition over the orbit.
    Coherent,
    /// Evolve each member separately and average the probabilities.
    Incoherent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchTrace {
    pub mode: QuenchMode,
    pub tau: Vec<f64>,
    /// `<n>/N`
    pub density: Vec<f64>,
    /// Population of the orbit.
    pub orbit_population: Vec<f64>,
}

fn observables(probs: &[f64], states: &[u64], n: usize, orbit: &DihedralOrbit) -> (f64, f64) {
    let mut dens = 0.0;
    let mut pop = 0.0;
    for (&p, &s) in probs.iter().zip(states) {
        dens += p * s.count_ones() as f64;
        if orbit.contains(s) {
            pop += p;
        }
    }
    (dens / n as f64, pop)
}

/// Walk quench of an orbit state on the ideal subspace dynamics.
pub fn quench(basis: &SubspaceBasis, gen: &WalkGenerator, orbit: &DihedralOrbit, tau_grid: &[f64], mode: QuenchMode) -> Result<QuenchTrace> {
    if gen.dim() != basis.len() {
        return Err(Error::InconsistentBasis { expected: basis.len(), got: gen.dim() });
    }
    let members: Vec<usize> = orbit.members.iter().map(|&m| basis.require_index(m)).collect::<Result<_>>()?;
    let starts: Vec<StateVector> = match mode {
        QuenchMode::Coherent => {
            let a = C64::new(1.0 / (members.len() as f64).sqrt(), 0.0);
            let mut v = vec![C64::new(0.0, 0.0); basis.len()];
            for &k in &members {
                v[k] = a;
            }
            vec![StateVector::new(v)]
        }
        QuenchMode::Incoherent => members.iter().map(|&k| StateVector::basis_state(basis.len(), k)).collect(),
    };
    let w = 1.0 / starts.len() as f64;
    let rows: Vec<(f64, f64)> = tau_grid
        .par_iter()
        .map(|&tau| {
            let mut probs = vec![0.0; basis.len()];
            for s in &starts {
                let e = gen.evolve_with(s, tau, Propagator::Auto)?;
                for (p, q) in probs.iter_mut().zip(e.probabilities()) {
                    *p += w * q;
                }
            }
            Ok(observables(&probs, basis.states(), basis.n(), orbit))
        })
        .collect::<Result<_>>()?;
    Ok(QuenchTrace {
        mode,
        tau: tau_grid.to_vec(),
        density: rows.iter().map(|r| r.0).collect(),
        orbit_population: rows.iter().map(|r| r.1).collect(),
    })
}

/// Same quench on the emulated atoms: each start state (full register) gets
/// one extra walk pulse of area `2τ` at the given geometry.
pub fn quench_rydberg(
    layout: &AtomLayout,
    constants: &PhysicalConstants,
    starts: &[StateVector],
    orbit: &DihedralOrbit,
    tau_grid: &[f64],
    mode: QuenchMode,
    opts: &EmulateOptions,
) -> Result<QuenchTrace> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("no start states".into()));
    }
    let n = layout.n();
    let states: Vec<u64> = (0..1u64 << n).collect();
    let w = 1.0 / starts.len() as f64;
    let rows: Vec<(f64, f64)> = tau_grid
        .par_iter()
        .map(|&tau| {
            let mut probs = vec![0.0; 1 << n];
            if tau <= 0.0 {
                for s in starts {
                    for (p, q) in probs.iter_mut().zip(s.probabilities()) {
                        *p += w * q;
                    }
                }
                return Ok(observables(&probs, &states, n, orbit));
            }
            let (regime, rabi) = synthesize_walk_pulse(tau, constants)?;
            let program = RydbergProgram {
                constants: *constants,
                layout: layout.clone(),
                duration: rabi.duration(),
                omega_avg: rabi.area() / rabi.duration(),
                fragments: vec![Fragment::Walk { tau, regime, rabi }],
                schedule: crate::ctqw::AnsatzSchedule {
                    tau0: tau,
                    layers: vec![],
                    phasor: crate::ctqw::PhasorKind::GlobalHamming,
                },
                warnings: vec![],
            };
            for s in starts {
                let e = emulate_from(&program, s, opts)?;
                for (p, q) in probs.iter_mut().zip(e.state.probabilities()) {
                    *p += w * q;
                }
            }
            Ok(observables(&probs, &states, n, orbit))
        })
        .collect::<Result<_>>()?;
    Ok(QuenchTrace {
        mode,
        tau: tau_grid.to_vec(),
        density: rows.iter().map(|r| r.0).collect(),
        orbit_population: rows.iter().map(|r| r.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::dihedral_orbit;

    #[test]
    fn amplification_examples() {
        assert!((amplification(29, 1.0 / 29.0, 1).unwrap().amplification - 1.0).abs() < 1e-12);
        assert!((amplification(29, 0.857, 1).unwrap().amplification - 24.853).abs() < 1e-9);
        assert!((amplification(29, 0.960, 1).unwrap().amplification - 27.84).abs() < 1e-9);
        assert!(matches!(amplification(29, 0.5, 0), Err(Error::EmptyTarget)));
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let v: Vec<f64> = [11.0, 18.0, 29.0, 47.0, 76.0, 123.0].to_vec();
        let a: Vec<f64> = v.iter().map(|x| 2.0 * x.powf(0.9)).collect();
        let f = fit_power_law(&v, &a, None).unwrap();
        assert!((f.c - 2.0).abs() < 1e-6 && (f.alpha - 0.9).abs() < 1e-6, "{f:?}");
        assert!((f.speedup.value - 10.0).abs() < 1e-4);
        let u: Vec<f64> = vec![1.0; 6];
        let g = fit_power_law(&v, &a, Some(&u)).unwrap();
        assert!((g.alpha - 0.9).abs() < 1e-6);
    }

    #[test]
    fn alpha_is_capped_at_one() {
        let v = [11.0f64, 18.0, 29.0, 47.0, 76.0];
        let a: Vec<f64> = v.iter().map(|x| 0.5 * x.powf(1.1)).collect();
        let f = fit_power_law(&v, &a, None).unwrap();
        assert!(f.alpha <= 1.0 && f.at_bound);
        assert!(!f.speedup.is_bounded());
        assert!(f.speedup.to_string().starts_with(">="));
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_power_law(&[1.0, 2.0], &[1.0, 2.0], None), Err(Error::TooFewInstances { .. })));
        assert!(matches!(fit_power_law(&[5.0; 4], &[1.0, 2.0, 3.0, 4.0], None), Err(Error::FitFailure(_))));
    }

    #[test]
    fn grover_examples() {
        assert!((grover_reference(4, 1).unwrap() - 1.0).abs() < 1e-12);
        let big = 1usize << 40;
        let r = grover_reference(big, 2).unwrap() / grover_reference(big, 1).unwrap();
        assert!((r - 25.0 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn quench_modes_agree_at_zero_and_short_times() {
        let b = SubspaceBasis::ring(6).unwrap();
        let g = WalkGenerator::from_basis(&b);
        let o = dihedral_orbit(0b000101, 6);
        let grid = [0.0, 0.1, 0.2];
        let c = quench(&b, &g, &o, &grid, QuenchMode::Coherent).unwrap();
        let i = quench(&b, &g, &o, &grid, QuenchMode::Incoherent).unwrap();
        assert!((c.orbit_population[0] - 1.0).abs() < 1e-12);
        assert!((c.density[0] - i.density[0]).abs() < 1e-15);
        for k in 0..grid.len() {
            assert!((c.density[k] - i.density[k]).abs() < 1e-3);
        }
    }
}
