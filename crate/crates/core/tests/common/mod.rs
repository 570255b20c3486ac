#![allow(dead_code)]

use mplab_core::graph::{connectivity_report, normalize, AggKind, Generator};
use mplab_core::{rng, DenseMatrix, Graph};
use rand::Rng;

/// Connected, non-bipartite Erdős–Rényi graph with `lo..=hi` nodes.
pub fn random_connected_graph(seed: u64, lo: usize, hi: usize) -> Graph {
    let mut r = rng::stream(seed, "test_graph");
    loop {
        let n = r.random_range(lo..=hi);
        let p = r.random_range(0.3..0.8);
        let g = Graph::generate(Generator::ErdosRenyi {
            n,
            p,
            seed: r.random(),
        })
        .unwrap();
        let rep = connectivity_report(&g);
        if g.edge_count() > 0 && rep.connected && !rep.bipartite {
            return g;
        }
    }
}

pub fn a_sym(g: &Graph) -> DenseMatrix {
    normalize(g, AggKind::Sym, false).unwrap().matrix
}

/// `P diag(λ) P⁻¹` with a well-conditioned random `P`, so the eigenvalues are known.
pub fn with_spectrum(r: &mut impl Rng, lambdas: &[f64]) -> (DenseMatrix, DenseMatrix) {
    let n = lambdas.len();
    let p = rng::normal_matrix(r, n, n, 0.3).add(&DenseMatrix::identity(n)).unwrap();
    let pinv = mplab_core::linalg::inverse(&p).unwrap();
    let m = p.matmul(&DenseMatrix::diag(lambdas)).unwrap().matmul(&pinv).unwrap();
    (m, p)
}

pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    mplab_core::matrix::cosine(a, b).abs()
}
