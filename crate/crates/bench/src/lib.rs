//! Criterion benchmarks for the vqfb kernels; see `benches/`.
