//! Criterion benchmarks for the kgreport hot paths live in `benches/`.
