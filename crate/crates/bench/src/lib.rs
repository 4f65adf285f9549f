// SPDX-License-Identifier: MIT OR Apache-2.0

//! Benchmarks live under `benches/`; run them with `cargo bench -p cpd-bench`.
