//! Benchmarks for the doeblin kernels; see `benches/`.
