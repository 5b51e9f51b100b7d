//! Demonstration-editing reinforcement learning for dexterous functional grasping.
//!
//! A single recorded grasp is edited once per episode by a conditioned policy
//! (wrist offset, joint residual, closure scale), replayed quasi-statically
//! against an oriented point cloud, and scored by an affordance- and
//! style-aware reward. Training is one-step PPO.

pub mod assets;
pub mod demo;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hand;
pub mod io;
pub mod lp;
pub mod object;
pub mod ply;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sim;
mod spatial;
pub mod toy;
pub mod trainer;

pub use demo::{ActionBounds, Demonstration, EditAction, EditedTrajectory};
pub use error::{Error, Result};
pub use geometry::{AxisAngle, Pose, Vec3};
pub use hand::{HandFrames, HandSpec, Style};
pub use object::{AffordanceDistribution, AffordanceParams, ObjectModel};
pub use reward::{RewardConfig, RewardTerms};
pub use sim::{EnvState, RolloutRecord, Scene, SimConfig};
