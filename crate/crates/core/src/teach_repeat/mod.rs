//! Teach-phase recording and repeat-phase path following.

pub mod path;
pub mod repeat;
pub mod teach;

pub use path::{RepeatPath, TaughtPath};
pub use repeat::{ControllerKind, RepeatConfig, RepeatController, RepeatState, RepeatStatus};
pub use teach::{teach, TeachConfig, Teacher};
