//! Benchmarks live in `benches/`; run them with `cargo bench -p t2i-agents-bench`.
