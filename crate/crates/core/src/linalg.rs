//! Small dense linear-algebra helpers shared by the regularizers, solver and
//! certificate.

use nalgebra::{DMatrix, DVector};

/// Singular values `s_i > RANK_REL_TOL * s_max` count toward the numerical rank.
pub const RANK_REL_TOL: f64 = 1e-6;

/// Entries with `|x_i| > CARD_TOL` count toward the numerical cardinality.
pub const CARD_TOL: f64 = 1e-8;

/// Thin SVD with non-increasing, nonnegative singular values.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let svd = m.clone().svd(true, true);
    Svd {
        u: svd.u.expect("u requested"),
        s: svd.singular_values,
        v_t: svd.v_t.expect("v_t requested"),
    }
}

impl Svd {
    /// `U diag(s) V^T` for a replacement spectrum `s`.
    pub fn recompose_with(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= s[j];
        }
        us * &self.v_t
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.singular_values()
}

/// Applies `f` to every singular value of `m` and recomposes.
pub fn map_singular_values(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let d = svd(m);
    let s = d.s.map(f);
    d.recompose_with(&s)
}

/// Number of singular values above `rel_tol * s_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

pub fn cardinality(x: &DVector<f64>, tol: f64) -> usize {
    x.iter().filter(|v| v.abs() > tol).count()
}

/// Column-major reshape of a flat vector.
pub fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Serde adapter storing a `DVector` as a plain JSON array.
pub mod dvector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}
