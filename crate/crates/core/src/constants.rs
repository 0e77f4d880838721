//! Physical constants and default material parameters (SI units).

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Mass of a metastable helium-4 atom, kg.
pub const HELIUM4_MASS: f64 = 6.65e-27;

/// s-wave scattering length between untrapped (m_x = 0) He* atoms, m.
pub const HELIUM4_A00: f64 = 5.3e-9;

/// s-wave scattering length between trapped (m_x = 1) He* atoms, m.
pub const HELIUM4_A11: f64 = 7.51e-9;

/// Mass of a sodium-23 atom, kg.
pub const SODIUM23_MASS: f64 = 3.8175e-26;
