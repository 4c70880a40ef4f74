//! Criterion benchmarks for path enumeration and attribution live in `benches/`.
