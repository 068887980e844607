//! Distributionally robust optimization with f-divergence uncertainty sets.
//!
//! Instead of minimizing the empirical mean of a loss, the solvers in this
//! crate minimize the worst-case expected loss over all reweightings of the
//! sample distribution whose divergence from it stays within a budget `rho`:
//!
//! ```text
//!     minimize_x  sup { E_Q[loss(x; S)] : D_phi(Q || P0) <= rho }
//! ```
//!
//! The sup has a well-known dual form: for the divergences supported here it
//! equals the minimum over two scalars `(lambda, eta)` of an expectation of a
//! per-sample function that is jointly convex in `(lambda, eta)`. That turns
//! the robust problem into a stochastic saddle-point problem over the model
//! parameters `x` and the dual pair `z = (lambda, eta)`, which the solvers in
//! [`solvers`] attack directly with cheap per-iteration mini-batches.
//!
//! Module map:
//!
//! * [`divergence`]: the Cressie-Read family and the smoothed-CVaR divergence,
//!   their convex conjugates, and conjugate derivatives.
//! * [`dual`]: the per-sample dual objective, its gradients in `x` and `z`,
//!   the box domain for `z`, and the smoothness/variance constants that drive
//!   step sizes and batch sizes.
//! * [`oracle`]: slow, certified reference solvers for the primal worst-case
//!   problem on small sample spaces and for the 2-d dual minimization. Used to
//!   audit the fast path, never by it.
//! * [`losses`]: bounded loss models with certified constants, plus a finite
//!   difference gradient checker.
//! * [`data`]: datasets, a synthetic imbalanced-cluster generator, CSV
//!   loading, and deterministic batch sampling.
//! * [`solvers`]: the stochastic Frank-Wolfe/SGD saddle solver, projected
//!   gradient descent, a fixed-penalty baseline, plain ERM-SGD, and the
//!   theory-mode hyperparameter plan.

pub mod data;
pub mod divergence;
pub mod dual;
pub mod error;
pub mod losses;
pub mod oracle;
pub mod solvers;

mod numeric;

pub use data::{Dataset, RngStreams};
pub use divergence::{DivergenceSpec, Family};
pub use dual::{DualDomain, DualPoint, ObjectiveConstants};
pub use error::Error;
pub use losses::{LossConstants, LossModel, SquashedLogistic, TinyMlp};
pub use oracle::WorstCaseResult;
pub use solvers::{
    best_dual_response, erm_sgd, joint_smoothness, lemma3_bound, lmo_box, pan_dro, pgd, sfk_dro,
    sfk_dro_observed, theory_hyperparams, IterateRecord, Mode, SolverConfig, SolverOutput,
    TheoryPlan,
};
