//! Fast boundary-integral solver for the Dirichlet problem of the
//! Laplace-Beltrami operator on the unit sphere with smooth islands.
//!
//! The sphere minus the islands is mapped to a multiply-connected region of
//! the complex plane by stereographic projection. The Dirichlet problem is
//! reformulated as a second-kind integral equation with a double-layer
//! ansatz augmented by one singular source per island, discretized with the
//! Nystrom method on the trapezoid rule, and solved with restarted GMRES
//! under a block preconditioner whose Schur complement is factored once.
//! Matrix-vector products use an adaptive-quadtree fast multipole method for
//! the Cauchy kernel, so a solve costs O(N) in the total node count.
//!
//! Entry points:
//! - [`geometry`]: stereographic projection, boundary curves, domain setup.
//! - [`solver::solve_dirichlet`]: end-to-end solve given boundary data.
//! - [`solver::solve_point_vortices`]: stream function of point vortices
//!   with impenetrable coastlines.
//! - [`cli`]: batch front end (`solve`, `study`, `bench`, `vortex`,
//!   `selftest`) driven by a TOML config file.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod fmm;
pub mod geometry;
pub mod kernels;
pub mod linsys;
pub mod system;


pub use geometry::{
    curve_derivatives, make_cap_circle, make_plane_ellipse, orient_and_validate,
    resample_polyline, stereo_inverse, stereo_project, BoundaryCurve, GeometryError,
    IslandDomain, PlanePoint, SpherePoint,
};
pub use kernels::{
    dlp_apply_direct, dlp_kernel, dlp_kernel_diag, dlp_kernel_sphere_oracle, green_plane,
    green_sphere, DlpTargets, KernelConvention, KernelError,
};
pub use system::{assemble, ApplyMode, DiscreteSystem, SystemError};

