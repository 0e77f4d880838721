//! Exact few-mode validation oracle.
//!
//! A handful of plane-wave modes with the number-conserving four-wave-mixing
//! Hamiltonian
//!
//! ```text
//! H / hbar = sum_j w_j n_j
//!          + (u/2) sum_{j,k,l,m : momentum conserving} a_j+ a_k+ a_l a_m
//! ```
//!
//! is evolved exactly in a truncated Fock space (Lanczos propagation of the
//! state vector). Momentum conservation is modular per axis, matching the
//! wrap-around of the discrete nonlinear term on a periodic lattice, so a
//! [`FewModeSystem`] built from a degenerate lattice has *identical* physics
//! to the positive-P integrator on that lattice. That makes the solver an
//! independent oracle for the stochastic method.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::constants::HBAR;
use crate::dynamics::{
    field_from_mode_amplitudes, simulate_ensemble, EnsembleMoments, MomentPlan, SimConfig,
};
use crate::error::{Error, Result};
use crate::groundstate::{AtomTarget, PhysicalParams};
use crate::lattice::Lattice3D;
use crate::observables::Measured;

/// Few plane-wave modes with four-wave-mixing couplings.
#[derive(Debug, Clone)]
pub struct FewModeSystem {
    /// Modulus per axis for momentum conservation (the lattice point counts).
    pub ring: [usize; 3],
    /// Signed integer wavenumbers of the modes.
    pub modes: Vec<[i64; 3]>,
    /// Mode frequencies, rad/s.
    pub frequencies: Vec<f64>,
    /// Interaction rate `u = U0 / V_box`, rad/s per atom.
    pub coupling: f64,
    /// Highest retained Fock level per mode (inclusive).
    pub cutoffs: Vec<usize>,
    /// Initial coherent amplitudes (pumps complex, vacuum modes zero).
    pub initial_amplitudes: Vec<Complex64>,
}

impl FewModeSystem {
    /// Build the system whose physics matches the positive-P integrator on
    /// `lattice`: one mode per bin, kCoordinate frequencies `hbar k^2 / 2m`,
    /// coupling `U0 / V_box`.
    pub fn from_lattice(
        lattice: &Lattice3D,
        mass: f64,
        u0: f64,
        initial_amplitudes: &[Complex64],
        cutoffs: &[usize],
    ) -> Result<Self> {
        let n = lattice.num_points();
        if initial_amplitudes.len() != n || cutoffs.len() != n {
            return Err(Error::InvalidParameter(
                "initial amplitudes and cutoffs must cover every lattice bin".into(),
            ));
        }
        if n > 8 {
            return Err(Error::InvalidParameter(format!(
                "{n} modes is beyond the exact solver's intended range (2-4 plus spectators)"
            )));
        }
        let mut modes = Vec::with_capacity(n);
        let mut frequencies = Vec::with_capacity(n);
        for flat in 0..n {
            let [ix, iy, iz] = lattice.grid_coords(flat);
            modes.push([
                lattice.signed_index(0, ix),
                lattice.signed_index(1, iy),
                lattice.signed_index(2, iz),
            ]);
            let k = [
                lattice.wavevector_component(0, ix),
                lattice.wavevector_component(1, iy),
                lattice.wavevector_component(2, iz),
            ];
            frequencies.push(HBAR * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) / (2.0 * mass));
        }
        Ok(Self {
            ring: lattice.points(),
            modes,
            frequencies,
            coupling: u0 / lattice.box_volume(),
            cutoffs: cutoffs.to_vec(),
            initial_amplitudes: initial_amplitudes.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.cutoffs.iter().map(|c| c + 1).product()
    }

    fn conserving(&self, j: usize, k: usize, l: usize, m: usize) -> bool {
        for axis in 0..3 {
            let n = self.ring[axis] as i64;
            let s = self.modes[j][axis] + self.modes[k][axis]
                - self.modes[l][axis]
                - self.modes[m][axis];
            if s.rem_euclid(n) != 0 {
                return false;
            }
        }
        true
    }
}

/// Exactly evolved moments at the requested times.
#[derive(Debug, Clone, Serialize)]
pub struct ExactMoments {
    pub times: Vec<f64>,
    /// `occupations[t][i] = <n_i>`.
    pub occupations: Vec<Vec<f64>>,
    /// Normally ordered `g2[t][i][j]`; NaN where a mode is empty.
    pub g2: Vec<Vec<Vec<f64>>>,
    /// Relative number variance `V[t][i][j]` (full variance over shot noise).
    pub pair_variance: Vec<Vec<Vec<f64>>>,
    /// Worst top-Fock-level population seen at any reported time.
    pub max_leakage: f64,
    /// `| ||psi|| - 1 |` at the end.
    pub norm_error: f64,
    /// Relative drift of the total particle number.
    pub number_drift: f64,
    /// Cutoffs actually used (after any automatic doubling).
    pub cutoffs: Vec<usize>,
}

struct FockBasis {
    dims: Vec<usize>,
    occupations: Vec<u16>, // dim * n_modes
    n_modes: usize,
}

impl FockBasis {
    fn new(cutoffs: &[usize]) -> Self {
        let dims: Vec<usize> = cutoffs.iter().map(|c| c + 1).collect();
        let dim: usize = dims.iter().product();
        let n_modes = cutoffs.len();
        let mut occupations = vec![0u16; dim * n_modes];
        for s in 0..dim {
            let mut rem = s;
            for mode in (0..n_modes).rev() {
                occupations[s * n_modes + mode] = (rem % dims[mode]) as u16;
                rem /= dims[mode];
            }
        }
        Self { dims, occupations, n_modes }
    }

    fn dim(&self) -> usize {
        self.occupations.len() / self.n_modes
    }

    #[inline]
    fn occ(&self, state: usize, mode: usize) -> usize {
        self.occupations[state * self.n_modes + mode] as usize
    }

    /// Stride of one quantum in `mode`.
    fn stride(&self, mode: usize) -> usize {
        self.dims[mode + 1..].iter().product()
    }
}

struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    norm_bound: f64,
}

impl SparseHamiltonian {
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        for row in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += x[self.col[idx] as usize] * self.val[idx];
            }
            y[row] = acc;
        }
    }
}

fn build_hamiltonian(system: &FewModeSystem, basis: &FockBasis) -> SparseHamiltonian {
    let dim = basis.dim();
    let n_modes = system.modes.len();
    // conserving ordered quadruples (j, k create; l, m annihilate)
    let mut quads = Vec::new();
    for j in 0..n_modes {
        for k in 0..n_modes {
            for l in 0..n_modes {
                for m in 0..n_modes {
                    if system.conserving(j, k, l, m) {
                        quads.push((j, k, l, m));
                    }
                }
            }
        }
    }

    let mut entries: Vec<(u32, u32, f64)> = Vec::new();
    let half_u = 0.5 * system.coupling;
    let mut occ = vec![0i64; n_modes];
    for state in 0..dim {
        // kinetic diagonal
        let mut diag = 0.0;
        for mode in 0..n_modes {
            diag += system.frequencies[mode] * basis.occ(state, mode) as f64;
        }
        entries.push((state as u32, state as u32, diag));

        for &(j, k, l, m) in &quads {
            for mode in 0..n_modes {
                occ[mode] = basis.occ(state, mode) as i64;
            }
            // a_m, a_l, a_k+, a_j+ in order
            if occ[m] == 0 {
                continue;
            }
            let mut amp = (occ[m] as f64).sqrt();
            occ[m] -= 1;
            if occ[l] == 0 {
                continue;
            }
            amp *= (occ[l] as f64).sqrt();
            occ[l] -= 1;
            amp *= ((occ[k] + 1) as f64).sqrt();
            occ[k] += 1;
            if occ[k] > system.cutoffs[k] as i64 {
                continue; // target outside the truncated space
            }
            amp *= ((occ[j] + 1) as f64).sqrt();
            occ[j] += 1;
            if occ[j] > system.cutoffs[j] as i64 {
                continue;
            }
            let target = (state as i64 + basis.stride(j) as i64 + basis.stride(k) as i64
                - basis.stride(l) as i64
                - basis.stride(m) as i64) as usize;
            entries.push((target as u32, state as u32, half_u * amp));
        }
    }

    entries.sort_unstable_by_key(|&(r, c, _)| ((r as u64) << 32) | c as u64);
    let mut row_ptr = vec![0usize; dim + 1];
    let mut col: Vec<u32> = Vec::with_capacity(entries.len());
    let mut val: Vec<f64> = Vec::with_capacity(entries.len());
    for (r, c, v) in entries {
        if let Some(last) = col.len().checked_sub(1) {
            if row_ptr[r as usize + 1] == col.len() && col[last] == c {
                val[last] += v;
                continue;
            }
        }
        col.push(c);
        val.push(v);
        row_ptr[r as usize + 1] = col.len();
    }
    // rows with no entries inherit the previous pointer
    for r in 1..=dim {
        if row_ptr[r] < row_ptr[r - 1] {
            row_ptr[r] = row_ptr[r - 1];
        }
    }

    let mut norm_bound: f64 = 0.0;
    for row in 0..dim {
        let s: f64 = (row_ptr[row]..row_ptr[row + 1]).map(|i| val[i].abs()).sum();
        norm_bound = norm_bound.max(s);
    }
    SparseHamiltonian { dim, row_ptr, col, val, norm_bound }
}

fn coherent_state(system: &FewModeSystem, basis: &FockBasis) -> Result<Vec<Complex64>> {
    let n_modes = system.modes.len();
    // per-mode coefficient tables
    let mut tables: Vec<Vec<Complex64>> = Vec::with_capacity(n_modes);
    for mode in 0..n_modes {
        let alpha = system.initial_amplitudes[mode];
        let mut table = Vec::with_capacity(system.cutoffs[mode] + 1);
        let norm = (-0.5 * alpha.norm_sqr()).exp();
        let mut coeff = Complex64::new(norm, 0.0);
        table.push(coeff);
        for n in 1..=system.cutoffs[mode] {
            coeff *= alpha / (n as f64).sqrt();
            table.push(coeff);
        }
        tables.push(table);
    }
    let mut state = Vec::with_capacity(basis.dim());
    for s in 0..basis.dim() {
        let mut c = Complex64::new(1.0, 0.0);
        for mode in 0..n_modes {
            c *= tables[mode][basis.occ(s, mode)];
        }
        state.push(c);
    }
    let norm: f64 = state.iter().map(|c| c.norm_sqr()).sum();
    let deficit = 1.0 - norm;
    if deficit > 1e-9 {
        return Err(Error::CutoffExceeded(format!(
            "initial coherent state loses {deficit:.2e} probability to truncation"
        )));
    }
    let scale = 1.0 / norm.sqrt();
    for c in state.iter_mut() {
        *c *= scale;
    }
    Ok(state)
}

/// Lanczos propagation `state <- exp(-i H tau) state` with full
/// reorthogonalization; `tau` is pre-subdivided by the caller.
fn lanczos_exp(h: &SparseHamiltonian, state: &mut [Complex64], tau: f64, krylov: usize) {
    let dim = h.dim;
    let m_max = krylov.min(dim);
    let beta0 = state.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if beta0 == 0.0 {
        return;
    }
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m_max);
    let mut q0: Vec<Complex64> = state.iter().map(|c| c / beta0).collect();
    basis.push(q0.clone());
    let mut alphas = Vec::with_capacity(m_max);
    let mut betas: Vec<f64> = Vec::with_capacity(m_max);
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    let mut m = m_max;
    for j in 0..m_max {
        h.apply(&basis[j], &mut w);
        let alpha: f64 = basis[j].iter().zip(&w).map(|(q, wv)| (q.conj() * wv).re).sum();
        alphas.push(alpha);
        for i in 0..dim {
            w[i] -= basis[j][i] * alpha;
            if j > 0 {
                w[i] -= basis[j - 1][i] * betas[j - 1];
            }
        }
        // full reorthogonalization, twice
        for _ in 0..2 {
            for q in &basis {
                let overlap: Complex64 = q.iter().zip(&w).map(|(qi, wi)| qi.conj() * wi).sum();
                for i in 0..dim {
                    w[i] -= q[i] * overlap;
                }
            }
        }
        let beta = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if j + 1 == m_max || beta < 1e-14 * h.norm_bound.max(1.0) {
            m = j + 1;
            break;
        }
        betas.push(beta);
        q0.copy_from_slice(&w);
        for c in q0.iter_mut() {
            *c /= beta;
        }
        basis.push(q0.clone());
    }

    // tridiagonal exponential via dense symmetric eigensolve
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alphas[r]
        } else if r + 1 == c || c + 1 == r {
            betas[r.min(c)]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    // coeff_j = sum_k Q[j,k] exp(-i lambda_k tau) Q[0,k]
    let mut coeffs = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..m {
        let phase = Complex64::new(0.0, -eig.eigenvalues[k] * tau).exp();
        let q0k = eig.eigenvectors[(0, k)];
        for (j, cj) in coeffs.iter_mut().enumerate() {
            *cj += eig.eigenvectors[(j, k)] * phase * q0k;
        }
    }
    for c in state.iter_mut() {
        *c = Complex64::new(0.0, 0.0);
    }
    for (j, cj) in coeffs.iter().enumerate() {
        let scaled = cj * beta0;
        for i in 0..dim {
            state[i] += basis[j][i] * scaled;
        }
    }
}

fn mode_leakage(basis: &FockBasis, cutoffs: &[usize], state: &[Complex64]) -> (f64, usize) {
    let n_modes = cutoffs.len();
    let mut worst = 0.0;
    let mut worst_mode = 0;
    for mode in 0..n_modes {
        let mut pop = 0.0;
        for (s, c) in state.iter().enumerate() {
            if basis.occ(s, mode) == cutoffs[mode] {
                pop += c.norm_sqr();
            }
        }
        if pop > worst {
            worst = pop;
            worst_mode = mode;
        }
    }
    (worst, worst_mode)
}

const LEAKAGE_LIMIT: f64 = 1e-6;
const DIM_LIMIT: usize = 200_000;

/// Inner result: `Err(mode)` means the truncation of `mode` leaked.
type EvolveOutcome = std::result::Result<ExactMoments, usize>;

fn evolve_once(system: &FewModeSystem, times: &[f64]) -> Result<EvolveOutcome> {
    if system.dim() > DIM_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "Fock dimension {} exceeds the solver limit {DIM_LIMIT}",
            system.dim()
        )));
    }
    let basis = FockBasis::new(&system.cutoffs);
    let h = build_hamiltonian(system, &basis);
    let mut state = match coherent_state(system, &basis) {
        Ok(s) => s,
        Err(Error::CutoffExceeded(_)) => {
            // grow the largest pump first
            let worst = system
                .initial_amplitudes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return Ok(Err(worst));
        }
        Err(other) => return Err(other),
    };
    let n_modes = system.modes.len();

    let number = |state: &[Complex64]| -> f64 {
        let mut total = 0.0;
        for (s, c) in state.iter().enumerate() {
            let p = c.norm_sqr();
            for mode in 0..n_modes {
                total += p * basis.occ(s, mode) as f64;
            }
        }
        total
    };
    let n0 = number(&state);

    let mut occupations = Vec::new();
    let mut g2_out = Vec::new();
    let mut var_out = Vec::new();
    let mut max_leakage: f64 = 0.0;
    let mut current_t = 0.0;
    // substep so ||H|| tau stays small enough for the Krylov dimension
    let theta = 5.0;
    for &target in times {
        let dt = target - current_t;
        if dt < 0.0 {
            return Err(Error::InvalidParameter("times must be non-decreasing".into()));
        }
        if dt > 0.0 {
            let n_sub = ((h.norm_bound * dt / theta).ceil() as usize).max(1);
            let tau = dt / n_sub as f64;
            for _ in 0..n_sub {
                lanczos_exp(&h, &mut state, tau, 40);
            }
            current_t = target;
        }
        let (leak, worst_mode) = mode_leakage(&basis, &system.cutoffs, &state);
        max_leakage = max_leakage.max(leak);
        if leak > LEAKAGE_LIMIT {
            return Ok(Err(worst_mode));
        }

        let mut occ = vec![0.0; n_modes];
        let mut pair = vec![vec![0.0; n_modes]; n_modes];
        let mut pair_sq = vec![vec![0.0; n_modes]; n_modes];
        for (s, c) in state.iter().enumerate() {
            let p = c.norm_sqr();
            for i in 0..n_modes {
                let ni = basis.occ(s, i) as f64;
                occ[i] += p * ni;
                for j in 0..n_modes {
                    let nj = basis.occ(s, j) as f64;
                    // normally ordered: n_i (n_j - delta_ij)
                    pair[i][j] += p * ni * (nj - if i == j { 1.0 } else { 0.0 });
                    pair_sq[i][j] += p * (ni - nj) * (ni - nj);
                }
            }
        }
        let mut g2 = vec![vec![f64::NAN; n_modes]; n_modes];
        let mut variance = vec![vec![f64::NAN; n_modes]; n_modes];
        for i in 0..n_modes {
            for j in 0..n_modes {
                if occ[i] > 1e-12 && occ[j] > 1e-12 {
                    g2[i][j] = pair[i][j] / (occ[i] * occ[j]);
                    if i != j {
                        let mean_diff = occ[i] - occ[j];
                        variance[i][j] = (pair_sq[i][j] - mean_diff * mean_diff)
                            / (occ[i] + occ[j]);
                    }
                }
            }
        }
        occupations.push(occ);
        g2_out.push(g2);
        var_out.push(variance);
    }

    let norm_error = (state.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs();
    let number_drift = (number(&state) - n0).abs() / n0.max(1e-300);
    Ok(Ok(ExactMoments {
        times: times.to_vec(),
        occupations,
        g2: g2_out,
        pair_variance: var_out,
        max_leakage,
        norm_error,
        number_drift,
        cutoffs: system.cutoffs.clone(),
    }))
}

/// Exact evolution with automatic cutoff doubling on truncation leakage.
pub fn evolve_exact(system: &FewModeSystem, times: &[f64]) -> Result<ExactMoments> {
    let mut sys = system.clone();
    for _ in 0..8 {
        match evolve_once(&sys, times)? {
            Ok(m) => return Ok(m),
            Err(leaking_mode) => {
                sys.cutoffs[leaking_mode] = (sys.cutoffs[leaking_mode] * 2).max(8);
                if sys.dim() > DIM_LIMIT {
                    return Err(Error::CutoffExceeded(format!(
                        "doubling mode {leaking_mode} exceeded the dimension limit {DIM_LIMIT}"
                    )));
                }
            }
        }
    }
    Err(Error::CutoffExceeded("cutoff doubling did not converge".into()))
}

/// One compared moment.
#[derive(Debug, Clone, Serialize)]
pub struct MomentComparison {
    pub name: String,
    pub exact: f64,
    pub stochastic: f64,
    pub std_err: f64,
    pub z: f64,
}

/// Oracle-vs-stochastic validation report.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub n_trajectories: usize,
    pub entries: Vec<MomentComparison>,
    pub exact_norm_error: f64,
    pub exact_number_drift: f64,
}

impl ComparisonReport {
    pub fn all_within(&self, z_max: f64) -> bool {
        self.entries.iter().all(|e| e.z.abs() < z_max)
    }

    pub fn worst_z(&self) -> f64 {
        self.entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max)
    }
}

/// Named stochastic mode moments (occupations, g2, pair variances) at one
/// sample, with jackknife errors, from raw few-mode rows.
pub fn stochastic_mode_moments(
    moments: &EnsembleMoments,
    sample: usize,
    occupation_floor: f64,
    reference_occupations: &[f64],
) -> Vec<(String, Measured)> {
    let n_t = moments.n_valid;
    let n_modes = moments.lattice.num_points();
    let occ = |t: usize, i: usize| -> f64 {
        let (a, at) = moments.mode_fields(t, sample).expect("mode rows present");
        (at[i] * a[i]).re
    };
    let fourth = |t: usize, i: usize, j: usize| -> f64 {
        let (a, at) = moments.mode_fields(t, sample).expect("mode rows present");
        (at[i] * at[j] * a[j] * a[i]).re
    };
    let max_ref = reference_occupations.iter().cloned().fold(0.0f64, f64::max);
    let active: Vec<usize> = (0..n_modes)
        .filter(|&i| reference_occupations[i] > occupation_floor * max_ref)
        .collect();

    let mut out = Vec::new();
    let jk = |f: &dyn Fn(&dyn Fn(usize) -> bool) -> f64| -> Measured {
        crate::observables::jackknife(n_t, f)
    };
    for &i in &active {
        let m = jk(&|keep| {
            let (mut s, mut n) = (0.0, 0.0);
            for t in 0..n_t {
                if keep(t) {
                    s += occ(t, i);
                    n += 1.0;
                }
            }
            s / n
        });
        out.push((format!("n[{i}]"), m));
    }
    for &i in &active {
        for &j in &active {
            if j < i {
                continue;
            }
            let m = jk(&|keep| {
                let (mut num, mut di, mut dj, mut n) = (0.0, 0.0, 0.0, 0.0);
                for t in 0..n_t {
                    if keep(t) {
                        num += fourth(t, i, j);
                        di += occ(t, i);
                        dj += occ(t, j);
                        n += 1.0;
                    }
                }
                (num / n) / ((di / n) * (dj / n))
            });
            out.push((format!("g2[{i},{j}]"), m));
            if i != j {
                let m = jk(&|keep| {
                    let (mut si, mut sj, mut qii, mut qjj, mut qij, mut n) =
                        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for t in 0..n_t {
                        if keep(t) {
                            si += occ(t, i);
                            sj += occ(t, j);
                            qii += fourth(t, i, i);
                            qjj += fourth(t, j, j);
                            qij += fourth(t, i, j);
                            n += 1.0;
                        }
                    }
                    let (si, sj, qii, qjj, qij) =
                        (si / n, sj / n, qii / n, qjj / n, qij / n);
                    // full variance = shot noise + normally ordered part
                    let ordered = qii + qjj - 2.0 * qij - (si - sj) * (si - sj);
                    1.0 + ordered / (si + sj)
                });
                out.push((format!("V[{i}-{j}]"), m));
            }
        }
    }
    out
}

/// Exact counterparts of [`stochastic_mode_moments`], with matching names.
pub fn exact_mode_moments(
    exact: &ExactMoments,
    time_index: usize,
    occupation_floor: f64,
) -> Vec<(String, f64)> {
    let occ = &exact.occupations[time_index];
    let max_ref = occ.iter().cloned().fold(0.0f64, f64::max);
    let active: Vec<usize> =
        (0..occ.len()).filter(|&i| occ[i] > occupation_floor * max_ref).collect();
    let mut out = Vec::new();
    for &i in &active {
        out.push((format!("n[{i}]"), occ[i]));
    }
    for &i in &active {
        for &j in &active {
            if j < i {
                continue;
            }
            out.push((format!("g2[{i},{j}]"), exact.g2[time_index][i][j]));
            if i != j {
                out.push((format!("V[{i}-{j}]"), exact.pair_variance[time_index][i][j]));
            }
        }
    }
    out
}

/// Synthetic physical parameters that reproduce a target `U0` for validation
/// lattices (the trap and target play no role in free-space dynamics).
pub fn validation_params(mass: f64, u0: f64, total_atoms: f64) -> PhysicalParams {
    let a_eff = u0 * mass / (4.0 * std::f64::consts::PI * HBAR);
    PhysicalParams {
        mass,
        a00: a_eff,
        a11: a_eff,
        trap_freqs: [1.0, 1.0, 1.0],
        target: AtomTarget::AtomNumber(total_atoms),
        collision_speed: 1e-6,
    }
}

/// Run the positive-P integrator on the degenerate lattice matching
/// `system` and compare every resolvable moment against the exact solver.
#[allow(clippy::too_many_arguments)]
pub fn compare_positive_p(
    lattice: &Lattice3D,
    mass: f64,
    u0: f64,
    initial_amplitudes: &[Complex64],
    cutoffs: &[usize],
    times: &[f64],
    n_steps: usize,
    n_trajectories: usize,
    base_seed: u64,
) -> Result<ComparisonReport> {
    let system = FewModeSystem::from_lattice(lattice, mass, u0, initial_amplitudes, cutoffs)?;
    let exact = evolve_exact(&system, times)?;

    let t_final = *times.last().ok_or_else(|| Error::InvalidParameter("no times".into()))?;
    // sample stride hitting every requested time
    let n_times = times.len();
    if n_steps % n_times != 0 {
        return Err(Error::InvalidParameter(
            "step count must be a multiple of the number of report times".into(),
        ));
    }
    for (i, &t) in times.iter().enumerate() {
        let expected = t_final * (i + 1) as f64 / n_times as f64;
        if (t - expected).abs() > 1e-9 * t_final {
            return Err(Error::InvalidParameter(
                "report times must be uniformly spaced from t_final/n to t_final".into(),
            ));
        }
    }

    let total_atoms: f64 = initial_amplitudes.iter().map(|a| a.norm_sqr()).sum();
    let params = validation_params(mass, u0, total_atoms);
    let modes: Vec<([i64; 3], Complex64)> = (0..lattice.num_points())
        .map(|flat| {
            let [ix, iy, iz] = lattice.grid_coords(flat);
            (
                [
                    lattice.signed_index(0, ix),
                    lattice.signed_index(1, iy),
                    lattice.signed_index(2, iz),
                ],
                initial_amplitudes[flat],
            )
        })
        .collect();
    let initial = field_from_mode_amplitudes(lattice, &modes)?;
    let peak_density = initial
        .psi
        .values()
        .iter()
        .map(|c| c.norm_sqr())
        .fold(0.0f64, f64::max)
        .max(1.0 / lattice.box_volume());

    let config = SimConfig {
        params,
        lattice: lattice.clone(),
        t_final,
        n_steps,
        n_trajectories,
        base_seed,
        divergence_factor: 1e8,
        reference_density: peak_density,
        noise_enabled: true,
        noise_pairing: false,
        interaction_length: None,
        plan: MomentPlan {
            sample_stride: n_steps / n_times,
            reference_wavevector: 0.0,
            lag_counts: [0, 0, 0],
            accumulate_fields: false,
            mode_row_threshold: lattice.num_points(),
            ..MomentPlan::default()
        },
    };
    let (moments, _) = simulate_ensemble(&config, &initial, "fewmode-validation")?;

    let floor = 1e-3;
    let mut entries = Vec::new();
    for (i, _) in times.iter().enumerate() {
        // sample 0 is t = 0; requested times start at sample 1
        let sample = i + 1;
        let exact_named = exact_mode_moments(&exact, i, floor);
        let stoch_named =
            stochastic_mode_moments(&moments, sample, floor, &exact.occupations[i]);
        for ((name_e, value_e), (name_s, m)) in exact_named.iter().zip(&stoch_named) {
            debug_assert_eq!(name_e, name_s);
            if !value_e.is_finite() {
                continue;
            }
            entries.push(MomentComparison {
                name: format!("{name_e}@t{}", i + 1),
                exact: *value_e,
                stochastic: m.value,
                std_err: m.std_err,
                z: m.z_score(*value_e),
            });
        }
    }
    Ok(ComparisonReport {
        times: times.to_vec(),
        n_trajectories,
        entries,
        exact_norm_error: exact.norm_error,
        exact_number_drift: exact.number_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Degenerate pump/signal pair: one pump mode at k = 0 and one signal
    /// mode, coupled by the umklapp process 2 pump -> 2 signal on a 2-bin
    /// ring. The signal frequency is tuned to cancel the mean-field shifts
    /// so the parametric resonance sits at zero detuning.
    fn pump_signal_system(n_pump: f64, gbar: f64) -> FewModeSystem {
        let u = gbar / n_pump;
        FewModeSystem {
            ring: [2, 1, 1],
            modes: vec![[0, 0, 0], [-1, 0, 0]],
            frequencies: vec![0.0, -u * n_pump],
            coupling: u,
            cutoffs: vec![(n_pump + 8.0 * n_pump.sqrt()) as usize, 48],
            initial_amplitudes: vec![
                Complex64::new(n_pump.sqrt(), 0.0),
                Complex64::new(0.0, 0.0),
            ],
        }
    }

    #[test]
    fn undepleted_pump_limit_matches_sinh() {
        let gbar = 1000.0;
        for (n_pump, tol) in [(60.0, 0.05), (150.0, 0.02)] {
            let sys = pump_signal_system(n_pump, gbar);
            let times: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|g| g / gbar).collect();
            let exact = evolve_exact(&sys, &times).unwrap();
            for (i, &t) in times.iter().enumerate() {
                let expected = (gbar * t).sinh().powi(2);
                let got = exact.occupations[i][1];
                assert!(
                    (got - expected).abs() / expected < tol,
                    "n_pump {n_pump}: n_s({}) = {got}, sinh^2 = {expected}",
                    gbar * t
                );
            }
            assert!(exact.norm_error < 1e-10);
            assert!(exact.number_drift < 1e-10);
        }
    }

    #[test]
    fn vacuum_signal_moments_at_t_zero() {
        let sys = pump_signal_system(40.0, 500.0);
        let exact = evolve_exact(&sys, &[0.0]).unwrap();
        assert!(exact.occupations[0][1].abs() < 1e-14);
        // g2 undefined for the empty mode
        assert!(exact.g2[0][1][1].is_nan());
        assert!(exact.g2[0][0][0].is_finite());
    }

    /// Pump plus symmetric signal pair on a 4-bin ring.
    fn pump_pair_system(n_pump: f64, gbar: f64) -> FewModeSystem {
        let u = gbar / n_pump;
        FewModeSystem {
            ring: [4, 1, 1],
            modes: vec![[0, 0, 0], [1, 0, 0], [-1, 0, 0]],
            frequencies: vec![0.0, -u * n_pump, -u * n_pump],
            coupling: u,
            cutoffs: vec![(n_pump + 8.0 * n_pump.sqrt()) as usize, 24, 24],
            initial_amplitudes: vec![
                Complex64::new(n_pump.sqrt(), 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        }
    }

    #[test]
    fn signal_pair_symmetric_superbunched_and_cs_violating() {
        let gbar = 800.0;
        let sys = pump_pair_system(30.0, gbar);
        // spontaneous regime: n_s = sinh^2(gbar t) well below one
        let times = [0.2 / gbar, 0.3 / gbar];
        let exact = evolve_exact(&sys, &times).unwrap();
        for (i, _) in times.iter().enumerate() {
            let n1 = exact.occupations[i][1];
            let n2 = exact.occupations[i][2];
            assert!((n1 - n2).abs() < 1e-10 * n1.max(1e-12), "pair asymmetry");
            // spontaneous regime: strong超 bunching of the cross correlation
            let g_cross = exact.g2[i][1][2];
            let g_auto = exact.g2[i][1][1];
            assert!(g_cross > 10.0, "g_cross = {g_cross}");
            // Cauchy-Schwarz violation
            assert!(g_cross > g_auto);
            // squeezing of the relative number
            assert!(exact.pair_variance[i][1][2] < 1.0);
        }
    }

    #[test]
    fn conservation_of_norm_and_number() {
        let sys = pump_pair_system(25.0, 600.0);
        let exact = evolve_exact(&sys, &[1.0 / 600.0]).unwrap();
        assert!(exact.norm_error < 1e-10, "norm error {}", exact.norm_error);
        assert!(exact.number_drift < 1e-10, "number drift {}", exact.number_drift);
        assert!(exact.max_leakage < 1e-6);
    }

    #[test]
    fn cutoff_doubling_recovers_from_tight_truncation() {
        let mut sys = pump_signal_system(40.0, 800.0);
        sys.cutoffs[1] = 6; // far too small for gbar t = 1
        let times = [1.0 / 800.0];
        let exact = evolve_exact(&sys, &times).unwrap();
        assert!(exact.cutoffs[1] > 6);
        let expected = (1.0f64).sinh().powi(2);
        assert!((exact.occupations[0][1] - expected).abs() / expected < 0.1);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let sys = pump_pair_system(6.0, 100.0);
        let basis = FockBasis::new(&sys.cutoffs);
        let h = build_hamiltonian(&sys, &basis);
        // spot-check H[r,c] == H[c,r] via dense reconstruction of a block
        let dim = h.dim.min(400);
        let mut dense = vec![vec![0.0; dim]; dim];
        for r in 0..dim {
            for idx in h.row_ptr[r]..h.row_ptr[r + 1] {
                let c = h.col[idx] as usize;
                if c < dim {
                    dense[r][c] += h.val[idx];
                }
            }
        }
        for r in 0..dim {
            for c in 0..dim {
                assert!(
                    (dense[r][c] - dense[c][r]).abs() < 1e-9,
                    "H[{r}][{c}] = {} vs H[{c}][{r}] = {}",
                    dense[r][c],
                    dense[c][r]
                );
            }
        }
    }
}
