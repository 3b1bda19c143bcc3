//! Trajectory inference from temporal snapshots.
//!
//! A population observed at times `t_1 < … < t_T` is reconstructed as `T`
//! particle clouds, one per snapshot, coupled by entropic optimal transport
//! (Schrödinger bridges) between consecutive clouds. The clouds evolve by a
//! noisy particle gradient descent (mean-field Langevin dynamics) on
//!
//! ```text
//! F(μ) = Σ_i (Δt_i/λ) Fit_σ(μ_i | μ̂_i) + Σ_i T_{τ_i}(μ_i, μ_{i+1}) / (t_{i+1} − t_i) + τ H(μ)
//! ```
//!
//! and sample paths are drawn afterwards by composing the interval couplings
//! and filling the gaps with Brownian bridges.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`types`] | snapshots, particle state, configuration, schedules |
//! | [`bridge`] | log-domain Sinkhorn (balanced and unbalanced), potentials, couplings |
//! | [`objective`] | fit functional, first variation, objective reports |
//! | [`entropy`] | Kozachenko–Leonenko entropy estimate (reporting only) |
//! | [`optimizer`] | annealing schedule, particle updates, run loop, checkpoints |
//! | [`pathspace`] | path law, skeleton sampling, Brownian bridges |
//! | [`simulate`] | Euler–Maruyama ground truth with branching, benchmarks |
//! | [`evaluate`] | energy distance and reconstruction metrics |
//! | [`io`], [`preprocess`] | CSV/JSON formats, scaling factors, PCA |
//!
//! With the default `parallel` feature the inner loops (Sinkhorn rows,
//! interval solves, particle updates, pairwise sums) run on rayon. Every
//! reduction is evaluated in a fixed order, so results do not depend on the
//! number of threads.

pub mod bridge;
pub mod entropy;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod noise;
pub mod objective;
pub mod optimizer;
pub mod par;
pub mod pathspace;
pub mod points;
pub mod preprocess;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use points::{Points, WeightedPoints};
pub use types::{
    AnnealingSchedule, EpsilonMode, GrowthPrior, Initializer, IntervalSpec, MarginalState,
    ProblemConfig, Rho, Snapshot, SnapshotSeries,
};
