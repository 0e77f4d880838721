//! Trapped-condensate ground state by imaginary-time propagation of the
//! Gross-Pitaevskii equation.
//!
//! The trapped species interacts with scattering length `a11`; the solver
//! relaxes `psi` under `H = -hbar^2/2m nabla^2 + V_trap + g |psi|^2` with
//! `g = 4 pi hbar^2 a11 / m`, renormalizing every step. The experiment fixes
//! the peak density rather than the atom number, so targeting a peak density
//! is implemented as an outer bracketed iteration on `N`.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::fit::{fit_gaussian, GaussianModel};
use crate::lattice::{ComplexField, FftContext, Lattice3D, SpaceTag};

/// Whether the solver pins the peak density or the atom number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AtomTarget {
    /// Peak density of the trapped cloud, 1/m^3.
    PeakDensity(f64),
    /// Total atom number.
    AtomNumber(f64),
}

/// Material and trap parameters of one collision scenario (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Atomic mass, kg.
    pub mass: f64,
    /// s-wave scattering length of the outcoupled (colliding) state, m.
    pub a00: f64,
    /// s-wave scattering length of the trapped state, m.
    pub a11: f64,
    /// Angular trap frequencies, rad/s.
    pub trap_freqs: [f64; 3],
    /// Ground-state normalization target.
    pub target: AtomTarget,
    /// Collision speed `v_r`, m/s. Each outcoupled condensate moves at
    /// `+-v_r` along x.
    pub collision_speed: f64,
}

impl PhysicalParams {
    /// Main helium example: He* atoms outcoupled at v_r = 9.2 cm/s from a
    /// (47, 1150, 1150) Hz trap with peak density 2.5e19 m^-3.
    pub fn helium_main() -> Self {
        use crate::constants::*;
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            mass: HELIUM4_MASS,
            a00: HELIUM4_A00,
            a11: HELIUM4_A11,
            trap_freqs: [two_pi * 47.0, two_pi * 1150.0, two_pi * 1150.0],
            target: AtomTarget::PeakDensity(2.5e19),
            collision_speed: 0.092,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("a00", self.a00),
            ("collision_speed", self.collision_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.a11.is_finite() && self.a11 >= 0.0) {
            return Err(Error::InvalidParameter(format!("a11 must be >= 0, got {}", self.a11)));
        }
        for (i, w) in self.trap_freqs.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidParameter(format!("trap frequency {i} must be positive")));
            }
        }
        match self.target {
            AtomTarget::PeakDensity(d) if d > 0.0 && d.is_finite() => {}
            AtomTarget::AtomNumber(n) if n > 0.0 && n.is_finite() => {}
            _ => return Err(Error::InvalidParameter("target must be positive".into())),
        }
        Ok(())
    }

    /// Recoil wavevector `k_r = m v_r / hbar`, 1/m.
    pub fn recoil_wavevector(&self) -> f64 {
        self.mass * self.collision_speed / HBAR
    }

    /// GPE coupling `g = 4 pi hbar^2 a / m`, J m^3.
    pub fn gpe_coupling(&self, scattering_length: f64) -> f64 {
        4.0 * std::f64::consts::PI * HBAR * HBAR * scattering_length / self.mass
    }

    /// Positive-P coupling `U0 = 4 pi hbar a / m`, m^3/s.
    pub fn positive_p_coupling(&self, scattering_length: f64) -> f64 {
        4.0 * std::f64::consts::PI * HBAR * scattering_length / self.mass
    }

    /// Thomas-Fermi chemical potential for a given peak density.
    pub fn tf_mu_from_peak(&self, peak_density: f64) -> f64 {
        self.gpe_coupling(self.a11) * peak_density
    }

    /// Thomas-Fermi radii at chemical potential `mu`.
    pub fn tf_radii(&self, mu: f64) -> [f64; 3] {
        let mut r = [0.0; 3];
        for i in 0..3 {
            r[i] = (2.0 * mu / (self.mass * self.trap_freqs[i] * self.trap_freqs[i])).sqrt();
        }
        r
    }

    /// Thomas-Fermi chemical potential at atom number `n`:
    /// `(hbar wbar / 2) (15 N a / abar)^(2/5)`.
    pub fn tf_mu_from_number(&self, n: f64) -> f64 {
        let wbar = (self.trap_freqs[0] * self.trap_freqs[1] * self.trap_freqs[2]).powf(1.0 / 3.0);
        let abar = (HBAR / (self.mass * wbar)).sqrt();
        0.5 * HBAR * wbar * (15.0 * n * self.a11 / abar).powf(0.4)
    }

    fn tf_number_from_peak(&self, peak_density: f64) -> f64 {
        let r = self.tf_radii(self.tf_mu_from_peak(peak_density));
        (8.0 * std::f64::consts::PI / 15.0) * peak_density * r[0] * r[1] * r[2]
    }
}

/// Converged trapped ground state.
#[derive(Debug, Clone)]
pub struct GroundState {
    /// Real amplitude `sqrt(rho0(x))` in lattice order, 1/m^(3/2).
    pub amplitude: Vec<f64>,
    pub lattice: Lattice3D,
    /// Chemical potential, J.
    pub chemical_potential: f64,
    pub atom_number: f64,
    /// rms momentum width of the source along x, 1/m.
    pub sigma_x: f64,
    /// rms momentum width averaged over y and z, 1/m.
    pub sigma_yz: f64,
    pub info: ConvergenceInfo,
}

/// Solver diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceInfo {
    pub iterations: usize,
    pub outer_iterations: usize,
    pub final_residual: f64,
    /// Energy at every accepted step of the final inner solve.
    pub energy_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Eigenvalue residual `|H psi - mu psi| / |mu psi|` required at the end.
    pub residual_tol: f64,
    /// Relative energy change per step below which the state is stationary.
    pub energy_tol: f64,
    pub max_iterations: usize,
    /// Relative tolerance on the peak density when targeting a density.
    pub peak_density_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-6,
            energy_tol: 1e-8,
            max_iterations: 50_000,
            peak_density_tol: 5e-4,
        }
    }
}

impl GroundState {
    pub fn density(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a * a).collect()
    }

    pub fn peak_density(&self) -> f64 {
        self.amplitude.iter().fold(0.0f64, |m, a| m.max(a * a))
    }

    pub fn as_complex_field(&self) -> ComplexField {
        let values = self.amplitude.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        ComplexField::new(values, &self.lattice, SpaceTag::Position).expect("shape consistent")
    }

    /// Write the amplitude as a little-endian f64 array plus a JSON sidecar
    /// with grid metadata, mu and N.
    pub fn save(&self, data_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(data_path)?);
        for &a in &self.amplitude {
            w.write_f64::<LittleEndian>(a)?;
        }
        w.flush()?;
        let sidecar = GroundStateSidecar {
            kind: "ground_state".into(),
            points: self.lattice.points(),
            lengths_m: self.lattice.lengths(),
            chemical_potential_j: self.chemical_potential,
            atom_number: self.atom_number,
            sigma_x_per_m: self.sigma_x,
            sigma_yz_per_m: self.sigma_yz,
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(sidecar_path, json)?;
        Ok(())
    }

    pub fn load(data_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: GroundStateSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)
                .map_err(|e| Error::Serialization(e.to_string()))?;
        let lattice = Lattice3D::new(sidecar.points, sidecar.lengths_m)?;
        let mut r = BufReader::new(std::fs::File::open(data_path)?);
        let mut amplitude = vec![0.0; lattice.num_points()];
        for a in amplitude.iter_mut() {
            *a = r.read_f64::<LittleEndian>()?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::CheckpointMismatch("ground state data longer than grid".into()));
        }
        Ok(Self {
            amplitude,
            lattice,
            chemical_potential: sidecar.chemical_potential_j,
            atom_number: sidecar.atom_number,
            sigma_x: sidecar.sigma_x_per_m,
            sigma_yz: sidecar.sigma_yz_per_m,
            info: ConvergenceInfo::default(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GroundStateSidecar {
    kind: String,
    points: [usize; 3],
    lengths_m: [f64; 3],
    chemical_potential_j: f64,
    atom_number: f64,
    sigma_x_per_m: f64,
    sigma_yz_per_m: f64,
}

struct Workspace {
    lattice: Lattice3D,
    ctx: FftContext,
    potential: Vec<f64>,
    /// `hbar k^2 / 2m` per bin, 1/s.
    kinetic_rate: Vec<f64>,
    g_over_hbar: f64,
    cell_volume: f64,
    /// Slowest relaxation rate scale, `2 min(omega)`, 1/s.
    slow_rate: f64,
}

impl Workspace {
    fn new(params: &PhysicalParams, lattice: &Lattice3D) -> Self {
        let [nx, ny, nz] = lattice.points();
        let mut potential = Vec::with_capacity(lattice.num_points());
        for ix in 0..nx {
            let x = lattice.position(0, ix);
            let vx = 0.5 * params.mass * params.trap_freqs[0].powi(2) * x * x;
            for iy in 0..ny {
                let y = lattice.position(1, iy);
                let vy = 0.5 * params.mass * params.trap_freqs[1].powi(2) * y * y;
                for iz in 0..nz {
                    let z = lattice.position(2, iz);
                    let vz = 0.5 * params.mass * params.trap_freqs[2].powi(2) * z * z;
                    potential.push(vx + vy + vz);
                }
            }
        }
        let mut kinetic_rate = Vec::with_capacity(lattice.num_points());
        for ix in 0..nx {
            let kx = lattice.wavevector_component(0, ix);
            for iy in 0..ny {
                let ky = lattice.wavevector_component(1, iy);
                for iz in 0..nz {
                    let kz = lattice.wavevector_component(2, iz);
                    kinetic_rate.push(HBAR * (kx * kx + ky * ky + kz * kz) / (2.0 * params.mass));
                }
            }
        }
        let slow_rate = 2.0 * params.trap_freqs.iter().cloned().fold(f64::INFINITY, f64::min);
        Self {
            lattice: lattice.clone(),
            ctx: FftContext::new(lattice),
            potential,
            kinetic_rate,
            g_over_hbar: params.gpe_coupling(params.a11) / HBAR,
            cell_volume: lattice.cell_volume(),
            slow_rate,
        }
    }

    fn norm(&self, psi: &[Complex64]) -> f64 {
        psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.cell_volume
    }

    fn renormalize(&self, psi: &mut [Complex64], n_target: f64) {
        let s = (n_target / self.norm(psi)).sqrt();
        for c in psi.iter_mut() {
            *c *= s;
        }
    }

    /// Energy functional and chemical potential, J.
    fn energy_and_mu(&mut self, psi: &[Complex64]) -> (f64, f64) {
        let mut k_space = psi.to_vec();
        self.ctx.forward_raw(&mut k_space);
        let npts = psi.len() as f64;
        // raw FFT carries n/dV relative to the normalized convention
        let k_scale = self.cell_volume / npts;
        let e_kin: f64 = k_space
            .iter()
            .zip(&self.kinetic_rate)
            .map(|(c, rate)| HBAR * rate * c.norm_sqr())
            .sum::<f64>()
            * k_scale;
        let mut e_pot = 0.0;
        let mut e_int2 = 0.0; // integral of g rho^2
        for (c, v) in psi.iter().zip(&self.potential) {
            let rho = c.norm_sqr();
            e_pot += v * rho;
            e_int2 += self.g_over_hbar * HBAR * rho * rho;
        }
        e_pot *= self.cell_volume;
        e_int2 *= self.cell_volume;
        let n = self.norm(psi);
        let energy = e_kin + e_pot + 0.5 * e_int2;
        let mu = (e_kin + e_pot + e_int2) / n;
        (energy, mu)
    }

    /// `|H psi - mu psi| / |mu psi|`.
    fn residual(&mut self, psi: &[Complex64]) -> f64 {
        let mut k_space = psi.to_vec();
        self.ctx.forward_raw(&mut k_space);
        for (c, rate) in k_space.iter_mut().zip(&self.kinetic_rate) {
            *c *= HBAR * rate;
        }
        self.ctx.inverse_raw(&mut k_space);
        let npts = psi.len() as f64;
        let (_, mu) = self.energy_and_mu(psi);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..psi.len() {
            let h_psi = k_space[i] / npts
                + (self.potential[i] + self.g_over_hbar * HBAR * psi[i].norm_sqr()) * psi[i];
            num += (h_psi - mu * psi[i]).norm_sqr();
            den += (mu * psi[i]).norm_sqr();
        }
        (num / den).sqrt()
    }

    /// One Strang step `exp(-K dtau/2) exp(-(V + g rho) dtau) exp(-K dtau/2)`
    /// followed by renormalization to `n_target`.
    fn imaginary_step(&mut self, psi: &mut Vec<Complex64>, dtau: f64, n_target: f64) {
        let npts = psi.len() as f64;
        self.ctx.forward_raw(psi);
        for (c, rate) in psi.iter_mut().zip(&self.kinetic_rate) {
            *c *= (-rate * dtau * 0.5).exp();
        }
        self.ctx.inverse_raw(psi);
        let inv_n = 1.0 / npts;
        for (c, v) in psi.iter_mut().zip(&self.potential) {
            *c *= inv_n;
            let rho = c.norm_sqr();
            *c *= (-(v / HBAR + self.g_over_hbar * rho) * dtau).exp();
        }
        self.ctx.forward_raw(psi);
        for (c, rate) in psi.iter_mut().zip(&self.kinetic_rate) {
            *c *= (-rate * dtau * 0.5).exp() * inv_n;
        }
        self.ctx.inverse_raw(psi);
        self.renormalize(psi, n_target);
    }

    /// Relax to the stationary state at fixed atom number.
    fn solve_fixed_number(
        &mut self,
        psi: &mut Vec<Complex64>,
        n_target: f64,
        mu_scale: f64,
        opts: &SolverOptions,
    ) -> Result<ConvergenceInfo> {
        self.renormalize(psi, n_target);
        let dtau_ref = 0.5 * HBAR / mu_scale;
        let mut dtau_max = dtau_ref;
        let mut dtau = 0.5 * dtau_ref;
        let (mut energy, _) = self.energy_and_mu(psi);
        let mut history = vec![energy];
        let mut prev = psi.clone();
        let mut stationary = 0usize;
        let mut last_residual = f64::INFINITY;
        let mut since_check = 0usize;

        for iter in 0..opts.max_iterations {
            prev.copy_from_slice(psi);
            self.imaginary_step(psi, dtau, n_target);
            let (e_new, _) = self.energy_and_mu(psi);
            // near the fixed point the split map raises the energy by its
            // own splitting bias; only increases beyond that band signal an
            // unstable step
            if (e_new - energy) > 1e-11 * energy.abs() {
                psi.copy_from_slice(&prev);
                dtau *= 0.5;
                if dtau < 1e-9 * dtau_ref {
                    return Err(Error::Convergence { iterations: iter, residual: f64::NAN });
                }
                continue;
            }
            let rel = (energy - e_new).abs() / energy.abs().max(1e-300);
            energy = e_new;
            history.push(energy);
            dtau = (dtau * 1.05).min(dtau_max);
            stationary = if rel < opts.energy_tol { stationary + 1 } else { 0 };
            since_check += 1;

            // residual checks spaced so the slowest mode can make visible
            // progress between them
            let window = (0.5 / (dtau * self.slow_rate)).ceil().max(25.0) as usize;
            if since_check >= window {
                since_check = 0;
                let residual = self.residual(psi);
                if residual < opts.residual_tol && stationary >= 1 {
                    return Ok(ConvergenceInfo {
                        iterations: iter + 1,
                        outer_iterations: 0,
                        final_residual: residual,
                        energy_history: history,
                    });
                }
                // a genuine plateau above tolerance is the splitting bias of
                // the stationary map: shrink the step ceiling to lower it
                if residual > 0.8 * last_residual {
                    dtau_max *= 0.5;
                    dtau = dtau.min(dtau_max);
                    if dtau_max < 1e-5 * dtau_ref {
                        return Err(Error::Convergence { iterations: iter, residual });
                    }
                }
                last_residual = residual;
            }
        }
        let residual = self.residual(psi);
        if residual < opts.residual_tol {
            Ok(ConvergenceInfo {
                iterations: opts.max_iterations,
                outer_iterations: 0,
                final_residual: residual,
                energy_history: history,
            })
        } else {
            Err(Error::Convergence { iterations: opts.max_iterations, residual })
        }
    }

    fn peak_density(&self, psi: &[Complex64]) -> f64 {
        psi.iter().fold(0.0f64, |m, c| m.max(c.norm_sqr()))
    }

    fn boundary_density(&self, psi: &[Complex64]) -> f64 {
        let [nx, ny, nz] = self.lattice.points();
        let mut worst = 0.0f64;
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    let on_face = ix == 0 || ix == nx - 1 || iy == 0 || iy == ny - 1 || iz == 0
                        || iz == nz - 1;
                    if on_face {
                        worst = worst.max(psi[self.lattice.flat_index(ix, iy, iz)].norm_sqr());
                    }
                }
            }
        }
        worst
    }
}

/// Gaussian initial guess with harmonic-oscillator widths (used when the
/// interaction is absent or as a fallback).
fn oscillator_guess(params: &PhysicalParams, lattice: &Lattice3D) -> Vec<Complex64> {
    let [nx, ny, nz] = lattice.points();
    let aho: Vec<f64> =
        params.trap_freqs.iter().map(|w| (HBAR / (params.mass * w)).sqrt()).collect();
    let mut out = Vec::with_capacity(lattice.num_points());
    for ix in 0..nx {
        let x = lattice.position(0, ix) / aho[0];
        for iy in 0..ny {
            let y = lattice.position(1, iy) / aho[1];
            for iz in 0..nz {
                let z = lattice.position(2, iz) / aho[2];
                out.push(Complex64::new((-(x * x + y * y + z * z) / 2.0).exp(), 0.0));
            }
        }
    }
    out
}

/// Thomas-Fermi initial guess at chemical potential `mu`.
fn tf_guess(ws: &Workspace, mu: f64) -> Vec<Complex64> {
    ws.potential
        .iter()
        .map(|&v| {
            let rho = ((mu - v) / (ws.g_over_hbar * HBAR)).max(0.0);
            Complex64::new(rho.sqrt(), 0.0)
        })
        .collect()
}

/// Check that the Thomas-Fermi cloud leaves at least 4 grid spacings to each
/// box face before attempting a solve.
fn check_cloud_fits(params: &PhysicalParams, lattice: &Lattice3D, mu_estimate: f64) -> Result<()> {
    let radii = params.tf_radii(mu_estimate);
    for i in 0..3 {
        let margin = 0.5 * lattice.lengths()[i] - radii[i];
        if margin < 4.0 * lattice.spacing()[i] {
            return Err(Error::CloudTouchesBoundary(format!(
                "axis {i}: TF radius {:.3e} m leaves {:.2} spacings of margin (need >= 4)",
                radii[i],
                margin / lattice.spacing()[i]
            )));
        }
    }
    Ok(())
}

/// Compute the trapped ground state on `lattice`.
///
/// `residual_tol` bounds the eigenvalue residual `|H psi - mu psi|/|mu psi|`
/// at convergence. Errors on non-convergence or when the cloud would touch
/// the box boundary.
pub fn solve_ground_state(
    params: &PhysicalParams,
    lattice: &Lattice3D,
    opts: &SolverOptions,
) -> Result<GroundState> {
    params.validate()?;
    let interacting = params.a11 > 0.0;
    let mu_estimate = match params.target {
        AtomTarget::PeakDensity(rho0) if interacting => params.tf_mu_from_peak(rho0),
        AtomTarget::AtomNumber(n) if interacting => params.tf_mu_from_number(n),
        _ => 0.5 * HBAR * params.trap_freqs.iter().sum::<f64>(),
    };
    check_cloud_fits(params, lattice, mu_estimate)?;
    let mut ws = Workspace::new(params, lattice);

    let (psi, info) = match params.target {
        AtomTarget::AtomNumber(n) => {
            let mut psi = if interacting {
                tf_guess(&ws, mu_estimate)
            } else {
                oscillator_guess(params, lattice)
            };
            let info = ws.solve_fixed_number(&mut psi, n, mu_estimate, opts)?;
            (psi, info)
        }
        AtomTarget::PeakDensity(rho0) => solve_peak_density(params, &mut ws, rho0, mu_estimate, opts)?,
    };

    // reject states leaking into the periodic boundary
    let peak = ws.peak_density(&psi);
    if ws.boundary_density(&psi) > 1e-6 * peak {
        return Err(Error::CloudTouchesBoundary(
            "converged density at the box faces exceeds 1e-6 of the peak".into(),
        ));
    }

    let atom_number = ws.norm(&psi);
    let (_, mu) = ws.energy_and_mu(&psi);
    let amplitude: Vec<f64> = psi.iter().map(|c| c.norm()).collect();

    let mut state = GroundState {
        amplitude,
        lattice: lattice.clone(),
        chemical_potential: mu,
        atom_number,
        sigma_x: 0.0,
        sigma_yz: 0.0,
        info,
    };
    let (sx, syz) = source_momentum_widths(&state, lattice)?;
    state.sigma_x = sx;
    state.sigma_yz = syz;
    Ok(state)
}

/// Outer iteration on N so that the converged peak density hits `rho0`.
fn solve_peak_density(
    params: &PhysicalParams,
    ws: &mut Workspace,
    rho0: f64,
    mu_estimate: f64,
    opts: &SolverOptions,
) -> Result<(Vec<Complex64>, ConvergenceInfo)> {
    let interacting = params.a11 > 0.0;
    let n_guess = if interacting {
        params.tf_number_from_peak(rho0)
    } else {
        // Gaussian cloud: rho_peak = N / ((2 pi)^{3/2} wx wy wz) with the
        // density widths w_i = aho_i / sqrt(2)
        let mut vol = (2.0 * std::f64::consts::PI).powf(1.5);
        for w in params.trap_freqs {
            vol *= (HBAR / (2.0 * params.mass * w)).sqrt();
        }
        rho0 * vol
    };

    let mut psi = if interacting {
        tf_guess(ws, mu_estimate)
    } else {
        oscillator_guess(params, lattice_of(ws))
    };

    let mut eval = |n: f64, psi: &mut Vec<Complex64>| -> Result<(f64, ConvergenceInfo)> {
        let info = ws.solve_fixed_number(psi, n, mu_estimate, opts)?;
        Ok((ws.peak_density(psi), info))
    };

    // bracket rho_peak(N) around rho0; rho_peak is monotone increasing in N
    let mut n_lo = n_guess * 0.5;
    let mut n_hi = n_guess * 1.5;
    let (mut rho_lo, _) = eval(n_lo, &mut psi)?;
    let mut expansions = 0;
    while rho_lo > rho0 {
        n_lo *= 0.5;
        rho_lo = eval(n_lo, &mut psi)?.0;
        expansions += 1;
        if expansions > 12 {
            return Err(Error::Convergence { iterations: 0, residual: f64::NAN });
        }
    }
    let (mut rho_hi, _) = eval(n_hi, &mut psi)?;
    while rho_hi < rho0 {
        n_hi *= 2.0;
        rho_hi = eval(n_hi, &mut psi)?.0;
        expansions += 1;
        if expansions > 12 {
            return Err(Error::Convergence { iterations: 0, residual: f64::NAN });
        }
    }

    // Illinois secant on the bracket
    let mut outer = 2 + expansions;
    let mut side = 0i32;
    loop {
        let n_mid = n_hi - (rho_hi - rho0) * (n_hi - n_lo) / (rho_hi - rho_lo);
        let (rho_mid, info) = eval(n_mid, &mut psi)?;
        outer += 1;
        if (rho_mid - rho0).abs() / rho0 < opts.peak_density_tol {
            let mut info = info;
            info.outer_iterations = outer;
            return Ok((psi, info));
        }
        if rho_mid < rho0 {
            n_lo = n_mid;
            rho_lo = rho_mid;
            if side == -1 {
                rho_hi = rho0 + 0.5 * (rho_hi - rho0);
            }
            side = -1;
        } else {
            n_hi = n_mid;
            rho_hi = rho_mid;
            if side == 1 {
                rho_lo = rho0 - 0.5 * (rho0 - rho_lo);
            }
            side = 1;
        }
        if outer > 60 {
            return Err(Error::Convergence { iterations: outer, residual: f64::NAN });
        }
    }
}

fn lattice_of(ws: &Workspace) -> &Lattice3D {
    &ws.lattice
}

/// rms momentum widths of the source, from Gaussian fits of the
/// momentum-space density `|FT(sqrt(rho0))|^2` sliced along each axis through
/// the origin. `sigma_y` and `sigma_z` are averaged into `sigma_yz`.
pub fn source_momentum_widths(state: &GroundState, lattice: &Lattice3D) -> Result<(f64, f64)> {
    let mut ctx = FftContext::new(lattice);
    let field = state.as_complex_field();
    let momentum = ctx.to_momentum(&field, lattice)?;
    let mut sigmas = [0.0; 3];
    for (axis, sigma) in sigmas.iter_mut().enumerate() {
        *sigma = axis_slice_width(&momentum, lattice, axis)?;
    }
    Ok((sigmas[0], 0.5 * (sigmas[1] + sigmas[2])))
}

fn axis_slice_width(
    momentum: &crate::lattice::ComplexField,
    lattice: &Lattice3D,
    axis: usize,
) -> Result<f64> {
    let n = lattice.points()[axis];
    if n < 4 {
        return Err(Error::FitFailure(format!("axis {axis} has {n} bins, profile degenerate")));
    }
    // slice through the origin of the other axes
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let mut idx = [0usize; 3];
            idx[axis] = j;
            let flat = lattice.flat_index(idx[0], idx[1], idx[2]);
            (lattice.wavevector_component(axis, j), momentum.values()[flat].norm_sqr())
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let center = pts
        .iter()
        .position(|p| p.0.abs() < 0.5 * lattice.momentum_spacing()[axis])
        .ok_or_else(|| Error::FitFailure("origin bin missing".into()))?;
    let peak = pts[center].1;
    if peak <= 0.0 {
        return Err(Error::FitFailure("empty momentum profile".into()));
    }
    // keep the central lobe: walk outward until the profile turns back up or
    // falls below a floor that side lobes stay under
    let floor = 1e-7 * peak;
    let mut lo = center;
    while lo > 0 && pts[lo - 1].1 < pts[lo].1 && pts[lo - 1].1 > floor {
        lo -= 1;
    }
    let mut hi = center;
    while hi + 1 < pts.len() && pts[hi + 1].1 < pts[hi].1 && pts[hi + 1].1 > floor {
        hi += 1;
    }
    let xs: Vec<f64> = pts[lo..=hi].iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts[lo..=hi].iter().map(|p| p.1 / peak).collect();
    let fit = fit_gaussian(&xs, &ys, None, GaussianModel::CenteredAmpWidth)?;
    Ok(fit.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::HELIUM4_MASS;

    fn noninteracting_params() -> PhysicalParams {
        let two_pi = 2.0 * std::f64::consts::PI;
        PhysicalParams {
            mass: HELIUM4_MASS,
            a00: 5.3e-9,
            a11: 0.0,
            trap_freqs: [two_pi * 300.0, two_pi * 800.0, two_pi * 800.0],
            target: AtomTarget::AtomNumber(1000.0),
            collision_speed: 0.05,
        }
    }

    #[test]
    fn harmonic_oscillator_limit() {
        let params = noninteracting_params();
        let aho: Vec<f64> =
            params.trap_freqs.iter().map(|w| (HBAR / (params.mass * w)).sqrt()).collect();
        // box: 14 oscillator lengths per axis
        let lengths = [14.0 * aho[0], 14.0 * aho[1], 14.0 * aho[2]];
        let lattice = Lattice3D::new([32, 32, 32], lengths).unwrap();
        let state = solve_ground_state(&params, &lattice, &SolverOptions::default()).unwrap();

        let mu_exact = 0.5 * HBAR * params.trap_freqs.iter().sum::<f64>();
        assert!(
            (state.chemical_potential - mu_exact).abs() / mu_exact < 0.01,
            "mu {:.4e} vs exact {:.4e}",
            state.chemical_potential,
            mu_exact
        );
        assert!((state.atom_number - 1000.0).abs() / 1000.0 < 1e-6);

        // exact momentum width of the oscillator ground state: the momentum
        // density exp(-k^2 aho^2) has rms width 1/(sqrt(2) aho)
        let sigma_exact_x = 1.0 / (std::f64::consts::SQRT_2 * aho[0]);
        let sigma_exact_yz = 1.0 / (std::f64::consts::SQRT_2 * aho[1]);
        assert!((state.sigma_x - sigma_exact_x).abs() / sigma_exact_x < 0.01);
        assert!((state.sigma_yz - sigma_exact_yz).abs() / sigma_exact_yz < 0.01);
    }

    #[test]
    fn energy_history_non_increasing() {
        let params = noninteracting_params();
        let aho: Vec<f64> =
            params.trap_freqs.iter().map(|w| (HBAR / (params.mass * w)).sqrt()).collect();
        let lattice =
            Lattice3D::new([16, 16, 16], [12.0 * aho[0], 12.0 * aho[1], 12.0 * aho[2]]).unwrap();
        let state = solve_ground_state(&params, &lattice, &SolverOptions::default()).unwrap();
        for w in state.info.energy_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-11));
        }
    }

    #[test]
    fn cloud_must_fit_in_box() {
        let mut params = PhysicalParams::helium_main();
        params.target = AtomTarget::PeakDensity(2.5e19);
        // a box much smaller than the 117 um TF radius along x
        let lattice = Lattice3D::new([64, 16, 16], [40e-6, 20e-6, 20e-6]).unwrap();
        assert!(matches!(
            solve_ground_state(&params, &lattice, &SolverOptions::default()),
            Err(Error::CloudTouchesBoundary(_))
        ));
    }

    #[test]
    fn recoil_wavevector_matches_speed() {
        let params = PhysicalParams::helium_main();
        let kr = params.recoil_wavevector();
        assert!((kr - 5.8e6).abs() / 5.8e6 < 0.01);
        // definition k_r = m v_r / hbar is exact
        assert!((kr * HBAR / params.mass - params.collision_speed).abs() < 1e-12 * params.collision_speed);
    }

    #[test]
    fn save_load_round_trip() {
        let params = noninteracting_params();
        let aho: Vec<f64> =
            params.trap_freqs.iter().map(|w| (HBAR / (params.mass * w)).sqrt()).collect();
        let lattice =
            Lattice3D::new([16, 16, 16], [12.0 * aho[0], 12.0 * aho[1], 12.0 * aho[2]]).unwrap();
        let state = solve_ground_state(&params, &lattice, &SolverOptions::default()).unwrap();
        let dir = std::env::temp_dir().join("fourwave_gs_test");
        std::fs::create_dir_all(&dir).unwrap();
        let data = dir.join("gs.f64");
        let sidecar = dir.join("gs.json");
        state.save(&data, &sidecar).unwrap();
        let loaded = GroundState::load(&data, &sidecar).unwrap();
        assert_eq!(loaded.amplitude.len(), state.amplitude.len());
        assert!((loaded.atom_number - state.atom_number).abs() < 1e-9 * state.atom_number);
        assert_eq!(loaded.amplitude, state.amplitude);
    }
}
