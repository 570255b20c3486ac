//! Graph Fourier basis and spectral filter coefficients.
//!
//! Eigen-indices are zero-based: index 0 is the largest eigenvalue.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Orthonormal eigenvectors as columns.
    pub basis: DenseMatrix,
    /// Eigenvalues in descending order, aligned with the columns of `basis`.
    pub eigenvalues: Vec<f64>,
    /// Free-form description of the decomposed matrix, e.g. `"a_sym"`.
    pub source: String,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.basis.col(k)
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = DenseMatrix::from_fn(self.n(), self.n(), |i, k| {
            self.basis[(i, k)] * self.eigenvalues[k]
        });
        scaled
            .matmul_t(&self.basis)
            .expect("basis is square")
    }
}

pub fn eigendecompose_sym(m: &DenseMatrix) -> Result<Spectrum> {
    eigendecompose_labeled(m, "matrix")
}

pub fn eigendecompose_labeled(m: &DenseMatrix, source: &str) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let asym = m.asymmetry();
    if asym > 1e-10 * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let (eigenvalues, basis) = linalg::symmetric_eigen(m)?;
    Ok(Spectrum {
        basis,
        eigenvalues,
        source: source.to_string(),
    })
}

/// `Uᵀ x`.
pub fn fourier(spec: &Spectrum, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != spec.n() {
        return Err(Error::Dimension(format!(
            "signal has {} rows, basis has {}",
            x.rows(),
            spec.n()
        )));
    }
    spec.basis.t_matmul(x)
}

/// `U b`.
pub fn inverse_fourier(spec: &Spectrum, b: &DenseMatrix) -> Result<DenseMatrix> {
    spec.basis.matmul(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    /// Spatial filter θ; coefficients are `Uᵀθ`.
    Arbitrary { theta: Vec<f64> },
    /// One GCN step with scalar weight `w`.
    Gcn { w: f64 },
    /// `Σ_k w_k T_k(λ)`.
    Chebyshev { w: Vec<f64> },
    /// `ws.len()` GCN steps with scalar weights `ws`.
    IteratedGcn { ws: Vec<f64> },
}

pub fn filter_coefficients(spec: &Spectrum, f: &FilterSpec) -> Result<Vec<f64>> {
    let lam = &spec.eigenvalues;
    match f {
        FilterSpec::Arbitrary { theta } => {
            if theta.len() != spec.n() {
                return Err(Error::Dimension(format!(
                    "filter of length {} on {} nodes",
                    theta.len(),
                    spec.n()
                )));
            }
            Ok(fourier(spec, &DenseMatrix::column_vector(theta))?.into_vec())
        }
        FilterSpec::Gcn { w } => Ok(lam.iter().map(|l| w * l).collect()),
        FilterSpec::Chebyshev { w } => {
            if w.is_empty() {
                return Err(Error::InvalidArgument("Chebyshev filter without coefficients".into()));
            }
            let mut out = vec![0.0; lam.len()];
            let mut prev = vec![1.0; lam.len()];
            let mut cur = lam.clone();
            for (k, wk) in w.iter().enumerate() {
                let t = if k == 0 { &prev } else { &cur };
                for (o, tv) in out.iter_mut().zip(t) {
                    *o += wk * tv;
                }
                if k >= 1 {
                    let next: Vec<f64> = lam
                        .iter()
                        .zip(cur.iter().zip(&prev))
                        .map(|(l, (c, p))| 2.0 * l * c - p)
                        .collect();
                    prev = std::mem::replace(&mut cur, next);
                }
            }
            Ok(out)
        }
        FilterSpec::IteratedGcn { ws } => {
            if ws.is_empty() {
                return Err(Error::InvalidArgument("iterated GCN filter without weights".into()));
            }
            let prod: f64 = ws.iter().product();
            let k = i32::try_from(ws.len())
                .map_err(|_| Error::InvalidArgument("too many iterations".into()))?;
            Ok(lam.iter().map(|l| prod * l.powi(k)).collect())
        }
    }
}

pub const FILTER_CSV_HEADER: &str = "filter_id,eigen_index,eigenvalue,coefficient,abs_coefficient";

pub fn dump_filters(spec: &Spectrum, specs: &[FilterSpec], sink: &mut impl Write) -> Result<()> {
    writeln!(sink, "{FILTER_CSV_HEADER}")?;
    for (id, f) in specs.iter().enumerate() {
        let coeffs = filter_coefficients(spec, f)?;
        for (k, c) in coeffs.iter().enumerate() {
            writeln!(
                sink,
                "{id},{k},{:?},{c:?},{:?}",
                spec.eigenvalues[k],
                c.abs()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, AggKind, Generator, Graph};

    fn k3() -> Spectrum {
        let g = Graph::generate(Generator::Complete(3)).unwrap();
        eigendecompose_labeled(&normalize(&g, AggKind::Sym, false).unwrap().matrix, "a_sym").unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn triangle_spectrum() {
        let s = k3();
        assert!(close(&s.eigenvalues, &[1.0, -0.5, -0.5], 1e-14));
        let r = 1.0 / 3f64.sqrt();
        assert!(close(&s.vector(0), &[r, r, r], 1e-14));
        assert_eq!(s.source, "a_sym");
    }

    #[test]
    fn identity_and_diagonal() {
        let s = eigendecompose_sym(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0; 3]);
        let s = eigendecompose_sym(&DenseMatrix::diag(&[3.0, -2.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![3.0, -2.0]);
        assert_eq!(s.basis, DenseMatrix::identity(2));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(matches!(eigendecompose_sym(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn fourier_examples() {
        let s = k3();
        let b = fourier(&s, &DenseMatrix::column_vector(&s.vector(0))).unwrap();
        assert!(close(b.as_slice(), &[1.0, 0.0, 0.0], 1e-14));
        let z = fourier(&s, &DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(z, DenseMatrix::zeros(3, 2));
        assert!(fourier(&s, &DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn filter_examples() {
        let s = k3();
        let g = filter_coefficients(&s, &FilterSpec::Gcn { w: 2.0 }).unwrap();
        assert!(close(&g, &[2.0, -1.0, -1.0], 1e-14));
        let c = filter_coefficients(&s, &FilterSpec::Chebyshev { w: vec![0.0, 1.0] }).unwrap();
        assert_eq!(c, s.eigenvalues);
        let it = filter_coefficients(&s, &FilterSpec::IteratedGcn { ws: vec![1.0; 4] }).unwrap();
        assert!(close(&it.iter().map(|v| v.abs()).collect::<Vec<_>>(), &[1.0, 0.0625, 0.0625], 1e-14));
        assert!(filter_coefficients(&s, &FilterSpec::Arbitrary { theta: vec![1.0] }).is_err());
        assert!(filter_coefficients(&s, &FilterSpec::IteratedGcn { ws: vec![] }).is_err());
    }

    #[test]
    fn chebyshev_recursion() {
        // T2 = 2λ² − 1, T3 = 4λ³ − 3λ
        let s = eigendecompose_sym(&DenseMatrix::diag(&[0.5, -0.25])).unwrap();
        let c = filter_coefficients(&s, &FilterSpec::Chebyshev { w: vec![1.0, 0.0, 2.0, -1.0] }).unwrap();
        let expect: Vec<f64> = s
            .eigenvalues
            .iter()
            .map(|l| 1.0 + 2.0 * (2.0 * l * l - 1.0) - (4.0 * l * l * l - 3.0 * l))
            .collect();
        assert!(close(&c, &expect, 1e-14));
    }

    #[test]
    fn dump_examples() {
        let s = k3();
        let mut out = Vec::new();
        dump_filters(&s, &[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{FILTER_CSV_HEADER}\n"));
        let mut out = Vec::new();
        dump_filters(&s, &[FilterSpec::Gcn { w: 1.0 }], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        let abs: Vec<f64> = rows
            .iter()
            .map(|r| r.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        assert!(close(&abs, &[1.0, 0.5, 0.5], 1e-14));
    }

    #[test]
    fn filter_spec_json() {
        let f: FilterSpec = serde_json::from_str(r#"{"kind":"iterated_gcn","ws":[1,2]}"#).unwrap();
        assert_eq!(f, FilterSpec::IteratedGcn { ws: vec![1.0, 2.0] });
    }
}
