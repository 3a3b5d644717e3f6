//! Shared fixtures for the criterion benchmarks.

use folim_core::structures::Structure;

/// Cycle on `n` vertices.
pub fn cycle(n: usize) -> Structure {
    let edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    Structure::graph(n, &edges)
}

/// Complete graph on `n` vertices.
pub fn clique(n: usize) -> Structure {
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    Structure::graph(n, &edges)
}
