//! Criterion benchmarks for momentstein; see `benches/`.
