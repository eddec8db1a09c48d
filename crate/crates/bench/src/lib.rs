//! Criterion benchmarks for hyprank live in `benches/`.
