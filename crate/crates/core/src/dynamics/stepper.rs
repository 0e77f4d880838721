//! Split-step integrator for one stochastic trajectory.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::groundstate::{GroundState, PhysicalParams};
use crate::lattice::{ComplexField, FftContext, Lattice3D, SpaceTag};

/// One trajectory's two stochastic fields, in position space.
///
/// At `t = 0` the pair represents a coherent state: `psi_tilde` equals
/// `conj(psi)` exactly. The fields decorrelate as noise accumulates.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub psi: ComplexField,
    pub psi_tilde: ComplexField,
    pub time: f64,
    pub step: usize,
    pub trajectory_id: u64,
}

impl FieldPair {
    pub fn coherent(psi: ComplexField, lattice: &Lattice3D) -> Result<Self> {
        if psi.space() != SpaceTag::Position {
            return Err(Error::WrongSpace { expected: SpaceTag::Position });
        }
        if psi.shape() != lattice.points() {
            return Err(Error::ShapeMismatch {
                expected: lattice.points(),
                found: psi.values().len(),
            });
        }
        let mut tilde = psi.clone();
        for v in tilde.values_mut() {
            *v = v.conj();
        }
        Ok(Self { psi, psi_tilde: tilde, time: 0.0, step: 0, trajectory_id: 0 })
    }
}

/// Outcoupled initial condition: the trapped ground state modulated with a
/// standing wave, `psi(x, 0) = sqrt(rho0(x)/2) (e^{i kr x} + e^{-i kr x})`,
/// with `kr` snapped to the nearest momentum bin. The momentum density then
/// shows two peaks at `+-kr` holding `N/2` atoms each.
pub fn initialize_collision(
    ground_state: &GroundState,
    params: &PhysicalParams,
    lattice: &Lattice3D,
) -> Result<FieldPair> {
    if ground_state.lattice.points() != lattice.points() {
        return Err(Error::ShapeMismatch {
            expected: lattice.points(),
            found: ground_state.amplitude.len(),
        });
    }
    let kr = params.recoil_wavevector();
    if kr > lattice.momentum_cutoff()[0] {
        return Err(Error::InvalidParameter(format!(
            "recoil wavevector {kr:.3e} exceeds the x momentum cutoff {:.3e}",
            lattice.momentum_cutoff()[0]
        )));
    }
    let (_, kr_grid) = lattice.nearest_bin(0, kr);
    let [nx, ny, nz] = lattice.points();
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    let mut values = vec![Complex64::new(0.0, 0.0); lattice.num_points()];
    for ix in 0..nx {
        let x = lattice.position(0, ix);
        // e^{ikx} + e^{-ikx} = 2 cos(kx)
        let modulation = 2.0 * (kr_grid * x).cos() * inv_sqrt2;
        for iy in 0..ny {
            for iz in 0..nz {
                let flat = lattice.flat_index(ix, iy, iz);
                values[flat] = Complex64::new(ground_state.amplitude[flat] * modulation, 0.0);
            }
        }
    }
    FieldPair::coherent(ComplexField::new(values, lattice, SpaceTag::Position)?, lattice)
}

/// Grid wavevector actually used for a collision on `lattice` (the recoil
/// wavevector snapped to the nearest x bin).
pub fn snapped_recoil(params: &PhysicalParams, lattice: &Lattice3D) -> f64 {
    lattice.nearest_bin(0, params.recoil_wavevector()).1
}

/// Coherent plane-wave initial state from explicit mode amplitudes
/// `(signed indices, amplitude)`; used by the few-mode validation runs.
pub fn field_from_mode_amplitudes(
    lattice: &Lattice3D,
    modes: &[([i64; 3], Complex64)],
) -> Result<FieldPair> {
    let mut momentum = ComplexField::zeros(lattice, SpaceTag::Momentum);
    for (signed, amp) in modes {
        let bins = [
            lattice.bin_of_signed(0, signed[0]),
            lattice.bin_of_signed(1, signed[1]),
            lattice.bin_of_signed(2, signed[2]),
        ];
        let [Some(bx), Some(by), Some(bz)] = bins else {
            return Err(Error::InvalidParameter(format!(
                "mode {signed:?} is not representable on the lattice"
            )));
        };
        momentum.values_mut()[lattice.flat_index(bx, by, bz)] = *amp;
    }
    let mut ctx = FftContext::new(lattice);
    let psi = ctx.to_position(&momentum, lattice)?;
    FieldPair::coherent(psi, lattice)
}

/// Immutable per-run tables shared across trajectory workers.
pub struct StepperTables {
    lattice: Lattice3D,
    /// `exp(-i hbar k^2/(2m) dt/2) / n_tot` in transform order (psi).
    half: Vec<Complex64>,
    /// `exp(-i hbar k^2/(2m) dt) / n_tot`.
    full: Vec<Complex64>,
    dt: f64,
}

impl StepperTables {
    pub fn new(lattice: &Lattice3D, mass: f64, dt: f64) -> Self {
        let inv_n = 1.0 / lattice.num_points() as f64;
        let [nx, ny, nz] = lattice.points();
        let mut half = Vec::with_capacity(lattice.num_points());
        let mut full = Vec::with_capacity(lattice.num_points());
        for ix in 0..nx {
            let kx = lattice.wavevector_component(0, ix);
            for iy in 0..ny {
                let ky = lattice.wavevector_component(1, iy);
                for iz in 0..nz {
                    let kz = lattice.wavevector_component(2, iz);
                    let rate = HBAR * (kx * kx + ky * ky + kz * kz) / (2.0 * mass);
                    half.push(Complex64::new(0.0, -rate * dt * 0.5).exp() * inv_n);
                    full.push(Complex64::new(0.0, -rate * dt).exp() * inv_n);
                }
            }
        }
        Self { lattice: lattice.clone(), half, full, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// How noise increments map onto the ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseGranularity {
    /// One pair of noise arrays per step.
    #[default]
    Single,
    /// Draw two half-step pairs per step and combine them,
    /// `zeta = (z_a + z_b)/sqrt(2)`. A run at `dt` with paired noise then
    /// shares its Brownian path with a run at `dt/2` using `Single`, which
    /// makes step-halving convergence checks nearly noise-free.
    PairedHalves,
}

/// Per-worker integrator state.
pub struct Stepper {
    tables: Arc<StepperTables>,
    ctx: FftContext,
    /// Interaction strength `U0 = 4 pi hbar a / m`, m^3/s.
    u0: f64,
    /// Noise scale `sqrt(dt / dV)` from the discrete delta correlation.
    noise_amp: f64,
    /// Divergence guard on `|psi|^2` at any site.
    guard: f64,
    noise_enabled: bool,
    granularity: NoiseGranularity,
    zeta: Vec<f64>,
    zeta_halves: Vec<f64>,
}

impl Stepper {
    pub fn new(tables: Arc<StepperTables>, u0: f64, guard: f64, noise_enabled: bool) -> Self {
        Self::with_granularity(tables, u0, guard, noise_enabled, NoiseGranularity::Single)
    }

    pub fn with_granularity(
        tables: Arc<StepperTables>,
        u0: f64,
        guard: f64,
        noise_enabled: bool,
        granularity: NoiseGranularity,
    ) -> Self {
        let lattice = tables.lattice.clone();
        let noise_amp = (tables.dt / lattice.cell_volume()).sqrt();
        Self {
            ctx: FftContext::new(&lattice),
            tables,
            u0,
            noise_amp,
            guard,
            noise_enabled,
            granularity,
            zeta: Vec::new(),
            zeta_halves: Vec::new(),
        }
    }

    fn kinetic(&mut self, pair: &mut FieldPair, table: &[Complex64]) {
        let psi = pair.psi.values_mut();
        self.ctx.forward_raw(psi);
        for (v, t) in psi.iter_mut().zip(table) {
            *v *= t;
        }
        self.ctx.inverse_raw(psi);

        // psi_tilde evolves with the conjugate phase, and its momentum
        // representation uses the conjugate kernel
        let tilde = pair.psi_tilde.values_mut();
        self.ctx.inverse_raw(tilde);
        for (v, t) in tilde.iter_mut().zip(table) {
            *v *= t.conj();
        }
        self.ctx.forward_raw(tilde);
    }

    /// Interaction drift (exact phase rotation; `psi_tilde psi` is invariant
    /// under the drift alone) followed by the Euler-Maruyama noise
    /// increment. Returns false when the divergence guard trips.
    fn rotate_and_kick(&mut self, pair: &mut FieldPair, rng: &mut ChaCha8Rng) -> bool {
        let n = pair.psi.values().len();
        let dt = self.tables.dt;
        if self.noise_enabled {
            self.zeta.resize(2 * n, 0.0);
            let normal = StandardNormal;
            match self.granularity {
                NoiseGranularity::Single => {
                    // fixed fill order: all of zeta1, then all of zeta2
                    for z in self.zeta.iter_mut() {
                        *z = normal.sample(rng);
                    }
                }
                NoiseGranularity::PairedHalves => {
                    // consume the stream exactly like two Single half-steps
                    self.zeta_halves.resize(2 * n, 0.0);
                    for z in self.zeta.iter_mut() {
                        *z = normal.sample(rng);
                    }
                    for z in self.zeta_halves.iter_mut() {
                        *z = normal.sample(rng);
                    }
                    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
                    for (z, h) in self.zeta.iter_mut().zip(&self.zeta_halves) {
                        *z = (*z + h) * inv_sqrt2;
                    }
                }
            }
        }
        let psi = pair.psi.values_mut();
        let tilde = pair.psi_tilde.values_mut();
        let mut ok = true;
        for i in 0..n {
            let mut p = psi[i];
            let mut q = tilde[i];
            let d = q * p;
            let rot = (Complex64::new(0.0, -self.u0 * dt) * d).exp();
            p *= rot;
            q *= rot.inv();
            if self.noise_enabled {
                let amp1 = (Complex64::new(0.0, -self.u0) * p * p).sqrt();
                let amp2 = (Complex64::new(0.0, self.u0) * q * q).sqrt();
                p += amp1 * (self.noise_amp * self.zeta[i]);
                q += amp2 * (self.noise_amp * self.zeta[n + i]);
            }
            if !(p.re.is_finite() && p.im.is_finite() && q.re.is_finite() && q.im.is_finite())
                || p.norm_sqr() > self.guard
                || q.norm_sqr() > self.guard
            {
                ok = false;
            }
            psi[i] = p;
            tilde[i] = q;
        }
        ok
    }

    /// Advance by `steps` steps of size `dt`, merging interior kinetic
    /// half-steps. The pair is left at a clean step boundary.
    pub fn advance(&mut self, pair: &mut FieldPair, steps: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let tables = self.tables.clone();
        self.kinetic(pair, &tables.half);
        for s in 0..steps {
            if !self.rotate_and_kick(pair, rng) {
                return Err(Error::Divergence {
                    trajectory: pair.trajectory_id,
                    step: pair.step + s + 1,
                });
            }
            if s + 1 < steps {
                self.kinetic(pair, &tables.full);
            }
        }
        self.kinetic(pair, &tables.half);
        pair.step += steps;
        pair.time += steps as f64 * tables.dt;
        Ok(())
    }

    /// Momentum-space views `(a, at)` of the pair, normalized so occupations
    /// sum to the atom number.
    pub fn momentum_views(&mut self, pair: &FieldPair) -> (Vec<Complex64>, Vec<Complex64>) {
        let lattice = &self.tables.lattice;
        let scale = (lattice.cell_volume() / lattice.num_points() as f64).sqrt();
        let mut a = pair.psi.values().to_vec();
        self.ctx.forward_raw(&mut a);
        for v in a.iter_mut() {
            *v *= scale;
        }
        let mut at = pair.psi_tilde.values().to_vec();
        self.ctx.inverse_raw(&mut at);
        for v in at.iter_mut() {
            *v *= scale;
        }
        (a, at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn uniform_pair(lattice: &Lattice3D, density: f64) -> FieldPair {
        let amp = density.sqrt();
        let values = vec![Complex64::new(amp, 0.0); lattice.num_points()];
        FieldPair::coherent(
            ComplexField::new(values, lattice, SpaceTag::Position).unwrap(),
            lattice,
        )
        .unwrap()
    }

    #[test]
    fn free_evolution_preserves_momentum_density() {
        let lattice = Lattice3D::new([16, 8, 8], [8e-6, 4e-6, 4e-6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // random coherent field
        let mut values = Vec::new();
        use rand::Rng;
        for _ in 0..lattice.num_points() {
            values.push(Complex64::new(rng.random::<f64>(), rng.random::<f64>()) * 1e8);
        }
        let field = ComplexField::new(values, &lattice, SpaceTag::Position).unwrap();
        let mut pair = FieldPair::coherent(field, &lattice).unwrap();

        let tables = Arc::new(StepperTables::new(&lattice, crate::constants::HELIUM4_MASS, 1e-7));
        let mut stepper = Stepper::new(tables, 0.0, 1e30, false);
        let (a0, at0) = stepper.momentum_views(&pair);
        stepper.advance(&mut pair, 50, &mut rng).unwrap();
        let (a1, at1) = stepper.momentum_views(&pair);
        for i in 0..a0.len() {
            let n0 = (at0[i] * a0[i]).re;
            let n1 = (at1[i] * a1[i]).re;
            assert!(
                (n0 - n1).abs() <= 1e-10 * n0.abs().max(1e-6),
                "bin {i}: {n0} vs {n1}"
            );
        }
    }

    #[test]
    fn drift_conserves_local_density_exactly() {
        // pure nonlinear rotation leaves psi_tilde psi invariant pointwise
        let lattice = Lattice3D::new([4, 4, 4], [2e-6, 2e-6, 2e-6]).unwrap();
        let mut pair = uniform_pair(&lattice, 1e19);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tables = Arc::new(StepperTables::new(&lattice, crate::constants::HELIUM4_MASS, 2e-7));
        let mut stepper = Stepper::new(tables, 1.0e-15, 1e30, false);
        let before: Vec<Complex64> = pair
            .psi_tilde
            .values()
            .iter()
            .zip(pair.psi.values())
            .map(|(t, p)| t * p)
            .collect();
        stepper.advance(&mut pair, 10, &mut rng).unwrap();
        let after: Vec<Complex64> = pair
            .psi_tilde
            .values()
            .iter()
            .zip(pair.psi.values())
            .map(|(t, p)| t * p)
            .collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).norm() < 1e-10 * b.norm());
        }
    }

    #[test]
    fn divergence_guard_reports_step() {
        let lattice = Lattice3D::new([4, 4, 4], [2e-6, 2e-6, 2e-6]).unwrap();
        let mut pair = uniform_pair(&lattice, 1e19);
        pair.trajectory_id = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // absurd time step so the noise blows past the guard quickly
        let tables = Arc::new(StepperTables::new(&lattice, crate::constants::HELIUM4_MASS, 1.0));
        let mut stepper = Stepper::new(tables, 1.0e-15, 1e6 * 1e19, true);
        let err = stepper.advance(&mut pair, 100, &mut rng).unwrap_err();
        match err {
            Error::Divergence { trajectory, step } => {
                assert_eq!(trajectory, 7);
                assert!(step >= 1);
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn merged_half_steps_match_plain_strang() {
        let lattice = Lattice3D::new([8, 4, 4], [4e-6, 2e-6, 2e-6]).unwrap();
        let pair0 = uniform_pair(&lattice, 2e19);
        let tables = Arc::new(StepperTables::new(&lattice, crate::constants::HELIUM4_MASS, 1e-7));

        // advance 8 steps in one call (interior halves merged)
        let mut merged = pair0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stepper = Stepper::new(tables.clone(), 1.0e-15, 1e30, false);
        stepper.advance(&mut merged, 8, &mut rng).unwrap();

        // advance 8 times 1 step (every boundary flushed)
        let mut split = pair0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stepper = Stepper::new(tables, 1.0e-15, 1e30, false);
        for _ in 0..8 {
            stepper.advance(&mut split, 1, &mut rng).unwrap();
        }
        for (m, s) in merged.psi.values().iter().zip(split.psi.values()) {
            assert!((m - s).norm() < 1e-12 * s.norm().max(1e-12));
        }
        assert_eq!(merged.step, split.step);
        assert!((merged.time - split.time).abs() < 1e-18);
    }

    #[test]
    fn collision_init_splits_population() {
        // standing-wave modulation preserves the norm and puts the atoms at
        // +-kr
        use crate::groundstate::{solve_ground_state, AtomTarget, SolverOptions};
        let two_pi = 2.0 * std::f64::consts::PI;
        let params = PhysicalParams {
            mass: crate::constants::HELIUM4_MASS,
            a00: 5.3e-9,
            a11: 0.0,
            trap_freqs: [two_pi * 2000.0, two_pi * 2000.0, two_pi * 2000.0],
            target: AtomTarget::AtomNumber(500.0),
            // kr near half the cutoff: the standing-wave cross term at 2 kr
            // and its alias are then both suppressed far below 1e-6 of N
            collision_speed: 0.059,
        };
        let aho = (HBAR / (params.mass * params.trap_freqs[0])).sqrt();
        let lattice = Lattice3D::new([64, 16, 16], [24.0 * aho, 14.0 * aho, 14.0 * aho]).unwrap();
        let gs = solve_ground_state(&params, &lattice, &SolverOptions::default()).unwrap();
        let pair = initialize_collision(&gs, &params, &lattice).unwrap();

        let mut ctx = FftContext::new(&lattice);
        let a = ctx.to_momentum(&pair.psi, &lattice).unwrap();
        let total: f64 = a.values().iter().map(|c| c.norm_sqr()).sum();
        assert!((total - gs.atom_number).abs() / gs.atom_number < 1e-6);

        // direct binning oracle: windows of +-1/4 of the x band around the
        // two peaks hold nearly everything
        let kr_grid = snapped_recoil(&params, &lattice);
        let mut in_peaks = 0.0;
        for (flat, v) in a.values().iter().enumerate() {
            let [ix, _, _] = lattice.grid_coords(flat);
            let kx = lattice.wavevector_component(0, ix);
            if (kx.abs() - kr_grid).abs() < 0.25 * lattice.momentum_cutoff()[0] {
                in_peaks += v.norm_sqr();
            }
        }
        assert!(in_peaks / total > 0.95, "peak fraction {}", in_peaks / total);

        // kr = 0 degenerate case: amplitudes add coherently, doubling N
        let mut params0 = params.clone();
        params0.collision_speed = 1e-12;
        let pair0 = initialize_collision(&gs, &params0, &lattice).unwrap();
        let a0 = ctx.to_momentum(&pair0.psi, &lattice).unwrap();
        let total0: f64 = a0.values().iter().map(|c| c.norm_sqr()).sum();
        assert!((total0 - 2.0 * gs.atom_number).abs() / gs.atom_number < 1e-6);

        // beyond-cutoff recoil is rejected
        let mut fast = params;
        fast.collision_speed = 10.0;
        assert!(initialize_collision(&gs, &fast, &lattice).is_err());
    }
}
