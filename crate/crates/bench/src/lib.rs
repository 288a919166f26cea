//! Criterion benchmarks for the copac kernels live in `benches/`.
