//! Quenched densities for beta-maps driven by an invertible noise process.

pub mod noise;
pub mod perturbative;
pub mod series;
pub mod weights;

pub use noise::{NoiseModel, Profile, SamplePoint};
pub use perturbative::{
    c_perturbative, c_perturbative_window, chi_series, epsilon0, xi_min_modulus_on_circle,
    xi_series, Epsilon0Report, PerturbativeReport, PerturbativeSettings, PowerSeries,
};
pub use series::{
    c_periodic, c_series, c_series_window, equivariance_residual, fiber_average,
    functional_residual, periodic_window, phi_fiber, solve_c_window, CMethod, CWindow,
    EquivarianceReport, FiberDensity, PeriodicSolution, ResidualReport, SeriesReport,
};
pub use weights::{backward_weights, forward_completeness, BackwardTable, BackwardWeights};
