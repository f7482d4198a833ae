//! The four agents. Each runs on its own thread, owns its state, and talks to
//! the others only through [`Mailbox`](super::message::Mailbox)es. No agent
//! module imports another; `tests/isolation.rs` checks this.

pub mod computing;
pub mod hmi;
pub mod reporting;
pub mod traceability;
