//! Closed-loop simulation, batch experiments and file formats for
//! [`shiftmpc_core`].
//!
//! * [`config`]: TOML experiment configs with a published JSON schema.
//! * [`harness`]: `run_closed_loop`, disturbances, monitors and the swing-up test.
//! * [`experiments`]: decay-rate, dimension and disturbance sweeps.
//! * [`io`]: CSV logs, JSON summaries and `N_max` certificates.
//! * [`cli`]: the `shiftmpc` subcommands.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod harness;
pub mod io;
