//! Show control for multi-robot interactive drama.
//!
//! - [`script`]: row-oriented show scripts, validation and gesture registries
//! - [`markup`]: affect-tagged dialogue compiled to SSML with gesture markers
//! - [`engine`]: deterministic cue state machine with a replayable log
//! - [`bus`]: wire protocol, device sessions, simulated devices and the live hub
//! - [`gesture`]: facial capture CSV to robot gesture clips
//! - [`cli`]: entry points behind the `storysync` binary

pub mod bus;
pub mod cli;
pub mod engine;
pub mod expr;
pub mod gesture;
pub mod markup;
pub mod script;
