//! Criterion benchmarks of the vbcce kernels live in `benches/`.
