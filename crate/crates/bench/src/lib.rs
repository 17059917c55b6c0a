//! Criterion benchmarks for the `sliced-ot` kernels live in `benches/`.
