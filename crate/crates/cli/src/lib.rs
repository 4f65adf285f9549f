// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `cpd` command line tool and its HTTP JSON service.

pub mod api;
pub mod commands;

pub use commands::{run, Cli};
