//! Ground-truth environments and causal structure.

pub mod nav;
pub mod structure;
pub mod tabular;

pub use nav::{NavAction, NavConfig, NavEnv, NavState};
pub use structure::{
    validate_parent_sets, AdjacencyMask, ConstantMask, Episodic, MaskFn, ParentSetSpec,
    SaBox, Simulator, Task,
};
pub use tabular::{TabularFmdpSpec, TabularMdp, TabularTransition};
