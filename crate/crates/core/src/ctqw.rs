//! States over a subspace basis and their evolution under the walk generator,
//! diagonal phasors and the phase-walk ansatz.

use crate::error::{Error, Result};
use crate::sparse::SparseSym;
use crate::subspace::SubspaceBasis;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub type C64 = Complex64;

/// Largest subspace for which `Propagator::Auto` uses the dense route.
pub const DENSE_LIMIT: usize = 2048;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn basis_state(dim: usize, k: usize) -> Self {
        let mut amps = vec![ZERO; dim];
        amps[k] = C64::new(1.0, 0.0);
        Self { amps }
    }

    /// `|0...0>` of a basis.
    pub fn vacuum(basis: &SubspaceBasis) -> Self {
        let k = basis.index_of(0).expect("the empty set is always independent");
        Self::basis_state(basis.len(), k)
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.amps.len() != dim {
            return Err(Error::InconsistentBasis { expected: dim, got: self.amps.len() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Propagator {
    /// Dense for `dim <= DENSE_LIMIT`, Krylov above.
    #[default]
    Auto,
    Dense,
    Krylov,
}

/// Eigendecomposition `G = V diag(λ) V^T`.
#[derive(Clone, Debug)]
pub struct DenseEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl DenseEigen {
    pub fn new(m: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(m);
        Self { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
    }

    /// Coefficients in the eigenbasis, `V^T x`.
    pub fn to_eigenbasis(&self, x: &[C64]) -> Vec<C64> {
        let re = DVector::from_iterator(x.len(), x.iter().map(|a| a.re));
        let im = DVector::from_iterator(x.len(), x.iter().map(|a| a.im));
        let cr = self.vectors.tr_mul(&re);
        let ci = self.vectors.tr_mul(&im);
        cr.iter().zip(ci.iter()).map(|(&r, &i)| C64::new(r, i)).collect()
    }

    pub fn from_eigenbasis(&self, c: &[C64]) -> Vec<C64> {
        let re = DVector::from_iterator(c.len(), c.iter().map(|a| a.re));
        let im = DVector::from_iterator(c.len(), c.iter().map(|a| a.im));
        let xr = &self.vectors * re;
        let xi = &self.vectors * im;
        xr.iter().zip(xi.iter()).map(|(&r, &i)| C64::new(r, i)).collect()
    }

    /// `exp(-i tau G) x`.
    pub fn evolve(&self, x: &[C64], tau: f64) -> Vec<C64> {
        let mut c = self.to_eigenbasis(x);
        for (ck, &l) in c.iter_mut().zip(&self.values) {
            *ck *= C64::from_polar(1.0, -l * tau);
        }
        self.from_eigenbasis(&c)
    }
}

/// Sparse adjacency of the Hamming-1 walk graph over a subspace.
#[derive(Debug)]
pub struct WalkGenerator {
    matrix: SparseSym,
    dense: OnceLock<DenseEigen>,
}

impl Clone for WalkGenerator {
    fn clone(&self) -> Self {
        Self { matrix: self.matrix.clone(), dense: OnceLock::new() }
    }
}

impl WalkGenerator {
    pub fn from_basis(basis: &SubspaceBasis) -> Self {
        let entries: Vec<_> = basis.walk_edges().into_iter().map(|(a, b)| (a, b, 1.0)).collect();
        Self::from_matrix(SparseSym::from_entries(basis.len(), &entries))
    }

    pub fn from_matrix(matrix: SparseSym) -> Self {
        Self { matrix, dense: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.matrix
    }

    pub fn degree(&self, k: usize) -> usize {
        self.matrix.row(k).count()
    }

    /// Cached dense eigendecomposition. O(dim^3) on first call.
    pub fn dense_eigen(&self) -> &DenseEigen {
        self.dense.get_or_init(|| DenseEigen::new(self.matrix.to_dense()))
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matrix.mul_vec(x)
    }

    pub fn evolve(&self, psi: &StateVector, tau: f64) -> Result<StateVector> {
        self.evolve_with(psi, tau, Propagator::Auto)
    }

    pub fn evolve_with(&self, psi: &StateVector, tau: f64, how: Propagator) -> Result<StateVector> {
        psi.check_dim(self.dim())?;
        if !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite walk time {tau}")));
        }
        if tau == 0.0 {
            return Ok(psi.clone());
        }
        let use_dense = match how {
            Propagator::Dense => true,
            Propagator::Krylov => false,
            Propagator::Auto => self.dim() <= DENSE_LIMIT,
        };
        let amps = if use_dense {
            self.dense_eigen().evolve(&psi.amps, tau)
        } else {
            expm_krylov(|x, y| self.matrix.apply(x, y), &psi.amps, tau, &KrylovOptions::default())
        };
        Ok(StateVector { amps })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    /// Target 2-norm error of the whole propagation.
    pub tol: f64,
    pub max_dim: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_dim: 60 }
    }
}

/// `exp(-i tau H) v` for a Hermitian operator given as `op(x, y): y = H x`.
///
/// Three-term Lanczos. The basis is grown until the
/// a-posteriori estimate `beta_{m+1} |[exp(-i h T_m) e_1]_m|` falls below the
/// local tolerance; if it never does, the step `h` is halved.
pub fn expm_krylov<F>(op: F, v: &[C64], tau: f64, opts: &KrylovOptions) -> Vec<C64>
where
    F: Fn(&[C64], &mut [C64]),
{
    let dim = v.len();
    let mut w = v.to_vec();
    let mut remaining = tau;
    let mut scratch = vec![ZERO; dim];
    let safety = 10.0;
    while remaining.abs() > 0.0 {
        let beta0 = norm(&w);
        if beta0 == 0.0 {
            return w;
        }
        let mut basis: Vec<Vec<C64>> = vec![w.iter().map(|a| a / beta0).collect()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut h = remaining;
        let mut accepted: Option<Vec<C64>> = None;
        let max_dim = opts.max_dim.min(dim).max(1);
        for j in 0..max_dim {
            op(&basis[j], &mut scratch);
            let a = dot(&basis[j], &scratch).re;
            axpy(C64::new(-a, 0.0), &basis[j], &mut scratch);
            if j > 0 {
                axpy(C64::new(-beta[j - 1], 0.0), &basis[j - 1], &mut scratch);
            }
            // local reorthogonalisation against the last two vectors
            for q in basis.iter().skip(j.saturating_sub(1)) {
                let c = dot(q, &scratch);
                axpy(-c, q, &mut scratch);
            }
            alpha.push(a);
            let b = norm(&scratch);
            let breakdown = b <= 1e-14 * (1.0 + a.abs());
            let m = j + 1;
            let check = breakdown || m == max_dim || m % 4 == 0;
            if check {
                let local_tol = opts.tol * (h / tau).abs() / safety;
                let (y, err) = small_exp(&alpha, &beta, h, if breakdown { 0.0 } else { b });
                if err * beta0 <= local_tol {
                    accepted = Some(y);
                    break;
                }
                if breakdown || m == max_dim {
                    // shrink the step on the basis we already have
                    loop {
                        h *= 0.5;
                        let local_tol = opts.tol * (h / tau).abs() / safety;
                        let (y, err) = small_exp(&alpha, &beta, h, b);
                        if err * beta0 <= local_tol || h.abs() < 1e-12 * tau.abs() {
                            accepted = Some(y);
                            break;
                        }
                    }
                    break;
                }
            }
            beta.push(b);
            basis.push(scratch.iter().map(|x| x / b).collect());
        }
        let y = accepted.expect("Krylov step accepted");
        let mut next = vec![ZERO; dim];
        for (yk, q) in y.iter().zip(&basis) {
            axpy(yk * beta0, q, &mut next);
        }
        w = next;
        remaining -= h;
        if remaining.abs() <= 1e-15 * tau.abs() {
            break;
        }
    }
    w
}

// exp(-i h T) e_1 for the tridiagonal T, and the error estimate b_next * |y_m|.
fn small_exp(alpha: &[f64], beta: &[f64], h: f64, b_next: f64) -> (Vec<C64>, f64) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut y = vec![ZERO; m];
    for k in 0..m {
        let c = eig.eigenvectors[(0, k)] * C64::from_polar(1.0, -eig.eigenvalues[k] * h);
        for i in 0..m {
            y[i] += c * eig.eigenvectors[(i, k)];
        }
    }
    let err = b_next * y[m - 1].norm();
    (y, err)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(c: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Real diagonal `C` over a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasorDiagonal {
    coeffs: Vec<f64>,
}

impl PhasorDiagonal {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// `c_a = Σ_i site[i] z_i(a)`.
    pub fn site_linear(basis: &SubspaceBasis, site: &[f64]) -> Result<Self> {
        if site.len() != basis.n() {
            return Err(Error::InvalidArgument(format!(
                "{} site coefficients for {} vertices",
                site.len(),
                basis.n()
            )));
        }
        let coeffs = basis
            .states()
            .iter()
            .map(|&z| (0..site.len()).filter(|&i| (z >> i) & 1 == 1).map(|i| site[i]).sum())
            .collect();
        Ok(Self { coeffs })
    }

    /// `c_a = popcount(a & mask)`.
    pub fn local_mask(basis: &SubspaceBasis, mask: u64) -> Self {
        Self { coeffs: basis.states().iter().map(|&z| (z & mask).count_ones() as f64).collect() }
    }

    /// `c_a = popcount(a)`, the number operator.
    pub fn hamming(basis: &SubspaceBasis) -> Self {
        Self { coeffs: basis.states().iter().map(|&z| z.count_ones() as f64).collect() }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// `amp_a <- exp(-i gamma c_a) amp_a`.
pub fn apply_phasor(psi: &StateVector, phasor: &PhasorDiagonal, gamma: f64) -> Result<StateVector> {
    let mut out = psi.clone();
    apply_phasor_in_place(&mut out, phasor, gamma)?;
    Ok(out)
}

pub fn apply_phasor_in_place(psi: &mut StateVector, phasor: &PhasorDiagonal, gamma: f64) -> Result<()> {
    psi.check_dim(phasor.len())?;
    if gamma == 0.0 {
        return Ok(());
    }
    for (a, &c) in psi.amps.iter_mut().zip(&phasor.coeffs) {
        *a *= C64::from_polar(1.0, -gamma * c);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub gamma: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhasorKind {
    /// `c_a = popcount(a & mask)`.
    LocalMask { mask: u64 },
    /// `c_a = popcount(a)`.
    GlobalHamming,
}

/// Fiducial walk `tau0` followed by `p` layers of (phasor `gamma_q`, walk `tau_q`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSchedule {
    pub tau0: f64,
    pub layers: Vec<Layer>,
    pub phasor: PhasorKind,
}

impl AnsatzSchedule {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn total_walk_time(&self) -> f64 {
        self.tau0 + self.layers.iter().map(|l| l.tau).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |t: f64| !t.is_finite() || t < 0.0;
        if bad(self.tau0) || self.layers.iter().any(|l| bad(l.tau) || !l.gamma.is_finite()) {
            return Err(Error::InvalidArgument("walk times must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn phasor_for(&self, basis: &SubspaceBasis) -> PhasorDiagonal {
        match self.phasor {
            PhasorKind::LocalMask { mask } => PhasorDiagonal::local_mask(basis, mask),
            PhasorKind::GlobalHamming => PhasorDiagonal::hamming(basis),
        }
    }
}

/// Runs the ansatz from `|0...0>`; `start` is the index of the empty set.
pub fn run_ansatz(
    schedule: &AnsatzSchedule,
    gen: &WalkGenerator,
    phasor: &PhasorDiagonal,
    start: usize,
) -> Result<StateVector> {
    schedule.validate()?;
    let psi = StateVector::basis_state(gen.dim(), start);
    run_ansatz_from(schedule, gen, phasor, psi)
}

pub fn run_ansatz_from(
    schedule: &AnsatzSchedule,
    gen: &WalkGenerator,
    phasor: &PhasorDiagonal,
    psi: StateVector,
) -> Result<StateVector> {
    let mut psi = gen.evolve(&psi, schedule.tau0)?;
    for layer in &schedule.layers {
        apply_phasor_in_place(&mut psi, phasor, layer.gamma)?;
        psi = gen.evolve(&psi, layer.tau)?;
    }
    Ok(psi)
}

/// `Σ_{a in target} |amp_a|^2`.
pub fn success_probability(psi: &StateVector, target: &[usize]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    target
        .iter()
        .map(|&k| {
            psi.amps
                .get(k)
                .map(|a| a.norm_sqr())
                .ok_or(Error::InconsistentBasis { expected: k + 1, got: psi.len() })
        })
        .sum()
}

/// `|<phi|psi>|^2`.
pub fn overlap_probability(psi: &StateVector, phi: &[C64]) -> Result<f64> {
    psi.check_dim(phi.len())?;
    Ok(dot(phi, &psi.amps).norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{ConstraintGraph, SubspaceBasis};

    #[test]
    fn generator_shape() {
        let b1 = SubspaceBasis::enumerate(&ConstraintGraph::empty(1).unwrap());
        let g1 = WalkGenerator::from_basis(&b1);
        assert_eq!(g1.matrix().to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let b5 = SubspaceBasis::ring(5).unwrap();
        let g5 = WalkGenerator::from_basis(&b5);
        assert_eq!(g5.dim(), 11);
        assert_eq!(g5.matrix().nnz(), 30);
        assert_eq!(g5.degree(0), 5);
        assert!(g5.matrix().is_symmetric());
    }

    #[test]
    fn single_qubit_rabi() {
        let b1 = SubspaceBasis::enumerate(&ConstraintGraph::empty(1).unwrap());
        let g = WalkGenerator::from_basis(&b1);
        for &tau in &[0.0, 0.3, 1.1, 2.7] {
            let psi = g.evolve(&StateVector::vacuum(&b1), tau).unwrap();
            assert!((psi.probabilities()[1] - tau.sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn krylov_matches_dense_on_ring() {
        let b = SubspaceBasis::ring(10).unwrap();
        let g = WalkGenerator::from_basis(&b);
        let psi = StateVector::vacuum(&b);
        for &tau in &[0.01, 0.7, 3.0, 25.0] {
            let d = g.evolve_with(&psi, tau, Propagator::Dense).unwrap();
            let k = g.evolve_with(&psi, tau, Propagator::Krylov).unwrap();
            assert!(d.distance(&k) < 1e-10, "tau {tau}: {}", d.distance(&k));
        }
    }

    #[test]
    fn phasor_examples() {
        let b = SubspaceBasis::ring(5).unwrap();
        let k101 = b.index_of(0b00101).unwrap();
        let k001 = b.index_of(0b00001).unwrap();
        let ham = PhasorDiagonal::hamming(&b);
        let psi = StateVector::basis_state(b.len(), k101);
        let out = apply_phasor(&psi, &ham, 0.37).unwrap();
        assert!((out.amplitudes()[k101] - C64::from_polar(1.0, -2.0 * 0.37)).norm() < 1e-15);
        let mask = PhasorDiagonal::local_mask(&b, 0b00101);
        let pi = std::f64::consts::PI;
        let a = apply_phasor(&psi, &mask, pi).unwrap().amplitudes()[k101];
        assert!((a - C64::new(1.0, 0.0)).norm() < 1e-12);
        let psi1 = StateVector::basis_state(b.len(), k001);
        let a1 = apply_phasor(&psi1, &mask, pi).unwrap().amplitudes()[k001];
        assert!((a1 - C64::new(-1.0, 0.0)).norm() < 1e-12);
        assert_eq!(apply_phasor(&psi, &mask, 0.0).unwrap(), psi);
        let site = PhasorDiagonal::site_linear(&b, &[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(site, mask);
    }

    #[test]
    fn ansatz_p0_is_a_walk() {
        let b = SubspaceBasis::ring(6).unwrap();
        let g = WalkGenerator::from_basis(&b);
        let sched = AnsatzSchedule { tau0: 0.8, layers: vec![], phasor: PhasorKind::GlobalHamming };
        let ph = sched.phasor_for(&b);
        let a = run_ansatz(&sched, &g, &ph, 0).unwrap();
        let w = g.evolve(&StateVector::vacuum(&b), 0.8).unwrap();
        assert!(a.distance(&w) < 1e-14);
    }

    #[test]
    fn target_probabilities() {
        let b = SubspaceBasis::ring(5).unwrap();
        let n = b.len();
        let uni = StateVector::new(vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n]);
        let all: Vec<usize> = (0..n).collect();
        assert!((success_probability(&uni, &all).unwrap() - 1.0).abs() < 1e-12);
        assert!((success_probability(&uni, &[3]).unwrap() - 1.0 / n as f64).abs() < 1e-12);
        assert!(matches!(success_probability(&uni, &[]), Err(Error::EmptyTarget)));
        let orbit = crate::subspace::dihedral_orbit(0b00101, 5);
        let bv = crate::subspace::bracelet_vector(&orbit, &b).unwrap();
        let st = StateVector::new(bv.clone());
        assert!((overlap_probability(&st, &bv).unwrap() - 1.0).abs() < 1e-12);
        let idx: Vec<usize> = orbit.members.iter().map(|&m| b.index_of(m).unwrap()).collect();
        assert!((success_probability(&st, &idx).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let b = SubspaceBasis::ring(5).unwrap();
        let g = WalkGenerator::from_basis(&b);
        let bad = StateVector::basis_state(4, 0);
        assert!(matches!(g.evolve(&bad, 1.0), Err(Error::InconsistentBasis { .. })));
    }
}
