//! Scratch: ground-state convergence study at the main parameters.

use fourwave_core::groundstate::{solve_ground_state, SolverOptions};
use fourwave_core::{Lattice3D, PhysicalParams};

fn main() {
    let params = PhysicalParams::helium_main();
    let kr = params.recoil_wavevector();
    let args: Vec<String> = std::env::args().collect();
    let nx: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(512);
    let nyz: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lx_um: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(420.0);
    let lyz_um: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(18.0);
    let tol: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-5);

    let lattice =
        Lattice3D::new([nx, nyz, nyz], [lx_um * 1e-6, lyz_um * 1e-6, lyz_um * 1e-6]).unwrap();
    println!(
        "grid {}x{}x{} box ({lx_um}, {lyz_um}, {lyz_um}) um  dx = {:.3} um dy = {:.3} um",
        nx, nyz, nyz,
        lattice.spacing()[0] * 1e6,
        lattice.spacing()[1] * 1e6
    );
    let t0 = std::time::Instant::now();
    let opts = SolverOptions { residual_tol: tol, ..SolverOptions::default() };
    match solve_ground_state(&params, &lattice, &opts) {
        Ok(gs) => {
            println!("  solved in {:.1} s, {} iterations, {} outer", t0.elapsed().as_secs_f64(), gs.info.iterations, gs.info.outer_iterations);
            println!("  N = {:.4e}  (paper 9.84e4, ratio {:.4})", gs.atom_number, gs.atom_number / 9.84e4);
            println!("  mu = {:.4e} J; g*rho0 = {:.4e}", gs.chemical_potential, params.gpe_coupling(params.a11) * 2.5e19);
            println!("  mu/mu_TF(N) = {:.4}", gs.chemical_potential / params.tf_mu_from_number(gs.atom_number));
            println!("  sigma_x/kr = {:.5} (paper 0.0025, ratio {:.3})", gs.sigma_x / kr, gs.sigma_x / kr / 0.0025);
            println!("  sigma_yz/kr = {:.5} (paper 0.055, ratio {:.3})", gs.sigma_yz / kr, gs.sigma_yz / kr / 0.055);
            println!("  residual = {:.2e}", gs.info.final_residual);
        }
        Err(e) => println!("  FAILED: {e}"),
    }
}
