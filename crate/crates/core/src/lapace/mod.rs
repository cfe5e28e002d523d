//! Counterfactual paths: straight lines in latent space from an input's
//! encoding to each centroid of the target label, decoded and labelled by
//! the classifier at every grid step, with optional correction of each
//! latent towards user constraints.

mod constraints;
mod grid;
mod path;

pub use constraints::{CompiledConstraints, Constraint, ConstraintSet, Relation, SATISFIED_TOLERANCE};
pub use grid::{TauGrid, DEFAULT_STEPS};
pub use path::{
    correct_latent, generate_constrained_paths, generate_paths, interpolate, select_points, CeSelection, LatentPath,
    PathEntry, SelectedPoint, Variant,
};
