//! Criterion benchmarks for the voice conversion pipeline; see `benches/`.
