//! Criterion benchmarks for the exprgan kernels live in `benches/`.
