//! Criterion benchmarks for the dataset pipeline live in `benches/`.
