//! Benchmark-only crate; the measurements live in `benches/`. Run them with
//! `cargo bench -p sglmm-bench`.
