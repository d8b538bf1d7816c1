//! SVD-based reduction of a data library to its minimal column dimension.
//!
//! For a library `H = W S V^T` with `r` retained singular triplets the reduced
//! library is `H_bar = H V1 = W1 S1`, which has `r` columns and (when `r` is the
//! numerical rank of `H`) exactly the column space of `H`. `V1` is kept so that
//! solutions over `H` can be mapped onto solutions over `H_bar` via `V1^T`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BlockMatrix, DEFAULT_RANK_TOLERANCE};
use crate::linalg;
use crate::{Error, Result};

/// Thin SVD `H = W diag(sigma) V^T` with `min(rows, cols)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdBundle {
    pub singular_values: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl SvdBundle {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut ws = self.left.clone();
        for (mut col, s) in ws.column_iter_mut().zip(&self.singular_values) {
            col *= *s;
        }
        ws * self.right.transpose()
    }
}

pub fn svd(library: &DMatrix<f64>) -> Result<SvdBundle> {
    if library.is_empty() {
        return Err(Error::param("library", "SVD of an empty matrix"));
    }
    let s = linalg::sorted_svd(library)?;
    Ok(SvdBundle {
        singular_values: s.sigma.iter().copied().collect(),
        left: s.u,
        right: s.v,
        rows: library.nrows(),
        cols: library.ncols(),
    })
}

/// How many singular directions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RankRule {
    /// Exactly `rank`, clipped to `1..=min(rows, cols)`.
    Fixed { rank: usize },
    /// Count of singular values above `rel_tol * sigma_1`.
    Threshold { rel_tol: f64 },
    /// The index after the largest drop in `log10(sigma)`, provided the drop
    /// spans at least `min_decades`; otherwise `Threshold { fallback_rel_tol }`.
    LogGap { min_decades: f64, fallback_rel_tol: f64 },
    /// `min(mL + n, numerical rank)`, for when the system dimensions are known.
    Structural { ml_plus_n: usize },
    /// The first `rank` columns of the library itself, no SVD. A baseline only.
    TruncateColumns { rank: usize },
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::LogGap {
            min_decades: 1.0,
            fallback_rel_tol: 1e-6,
        }
    }
}

impl std::fmt::Display for RankRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankRule::Fixed { rank } => write!(f, "fixed({rank})"),
            RankRule::Threshold { rel_tol } => write!(f, "threshold({rel_tol:e})"),
            RankRule::LogGap {
                min_decades,
                fallback_rel_tol,
            } => write!(f, "log_gap({min_decades}, fallback {fallback_rel_tol:e})"),
            RankRule::Structural { ml_plus_n } => write!(f, "structural({ml_plus_n})"),
            RankRule::TruncateColumns { rank } => write!(f, "truncate_columns({rank})"),
        }
    }
}

fn threshold_rank(sigma: &[f64], rel_tol: f64) -> usize {
    linalg::numerical_rank(sigma, rel_tol).max(1)
}

/// Position of the largest consecutive drop in `log10(sigma)`, as `(index after the drop, decades)`.
///
/// Values below `eps * sigma_1` are raised to that floor, so drops within the
/// rounding noise (including to exact zeros) do not count.
pub fn largest_log_gap(sigma: &[f64]) -> Option<(usize, f64)> {
    let first = *sigma.first()?;
    if first <= 0.0 {
        return None;
    }
    let floor = first * f64::EPSILON;
    let mut best: Option<(usize, f64)> = None;
    for (i, pair) in sigma.windows(2).enumerate() {
        let gap = pair[0].max(floor).log10() - pair[1].max(floor).log10();
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((i + 1, gap));
        }
    }
    best
}

pub fn select_rank(bundle: &SvdBundle, rule: RankRule) -> Result<usize> {
    let sigma = &bundle.singular_values;
    if sigma.first().is_none_or(|&s| s <= 0.0) {
        return Err(Error::ZeroLibrary);
    }
    let max_rank = bundle.rows.min(bundle.cols);
    let r = match rule {
        RankRule::Fixed { rank } | RankRule::TruncateColumns { rank } => rank.clamp(1, max_rank),
        RankRule::Threshold { rel_tol } => threshold_rank(sigma, rel_tol),
        RankRule::LogGap {
            min_decades,
            fallback_rel_tol,
        } => match largest_log_gap(sigma) {
            Some((idx, gap)) if gap >= min_decades => idx,
            _ => threshold_rank(sigma, fallback_rel_tol),
        },
        RankRule::Structural { ml_plus_n } => ml_plus_n
            .min(linalg::numerical_rank(sigma, DEFAULT_RANK_TOLERANCE))
            .max(1),
    };
    Ok(r)
}

/// A reduced library `H_bar` together with the map `V1` from full to reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLibrary {
    pub h_bar: BlockMatrix,
    pub v1: DMatrix<f64>,
    pub rank: usize,
    pub retained: Vec<f64>,
    pub discarded: Vec<f64>,
    pub rule: RankRule,
}

impl ReducedLibrary {
    pub fn rows(&self) -> usize {
        self.h_bar.rows()
    }

    pub fn source_cols(&self) -> usize {
        self.v1.nrows()
    }

    /// All singular values of the source library, retained first.
    pub fn spectrum(&self) -> Vec<f64> {
        self.retained.iter().chain(&self.discarded).copied().collect()
    }

    pub fn to_file_format(&self) -> ReducedLibraryFile {
        ReducedLibraryFile {
            rows: self.rows(),
            source_cols: self.source_cols(),
            rank: self.rank,
            rule: self.rule,
            singular_values: self.spectrum(),
            h_bar: self.h_bar.matrix().column_iter().map(|c| c.iter().copied().collect()).collect(),
            v1: self.v1.column_iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file_format()).expect("library serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ReducedLibraryFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "reduced library",
            reason: e.to_string(),
        })?;
        f.try_into()
    }
}

/// JSON layout of a persisted reduced library; matrices are stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedLibraryFile {
    pub rows: usize,
    pub source_cols: usize,
    pub rank: usize,
    pub rule: RankRule,
    pub singular_values: Vec<f64>,
    pub h_bar: Vec<Vec<f64>>,
    pub v1: Vec<Vec<f64>>,
}

impl TryFrom<ReducedLibraryFile> for ReducedLibrary {
    type Error = Error;

    fn try_from(f: ReducedLibraryFile) -> Result<Self> {
        fn columns(name: &'static str, cols: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>> {
            if cols.len() != c {
                return Err(Error::dim(name, c, cols.len()));
            }
            if let Some(bad) = cols.iter().find(|col| col.len() != r) {
                return Err(Error::dim(name, r, bad.len()));
            }
            Ok(DMatrix::from_iterator(r, c, cols.iter().flatten().copied()))
        }
        let h_bar = columns("h_bar", &f.h_bar, f.rows, f.rank)?;
        let v1 = columns("v1", &f.v1, f.source_cols, f.rank)?;
        if f.rank > f.singular_values.len() {
            return Err(Error::dim("singular values", f.rank, f.singular_values.len()));
        }
        let (retained, discarded) = f.singular_values.split_at(f.rank);
        Ok(ReducedLibrary {
            h_bar: BlockMatrix::unstructured(h_bar),
            v1,
            rank: f.rank,
            retained: retained.to_vec(),
            discarded: discarded.to_vec(),
            rule: f.rule,
        })
    }
}

/// Reduces `library` to `r` columns chosen by `rule`.
pub fn reduce(library: &DMatrix<f64>, rule: RankRule) -> Result<ReducedLibrary> {
    let bundle = svd(library)?;
    reduce_with_svd(library, &bundle, rule)
}

/// As [`reduce`], reusing an SVD of `library` computed earlier.
pub fn reduce_with_svd(library: &DMatrix<f64>, bundle: &SvdBundle, rule: RankRule) -> Result<ReducedLibrary> {
    if (bundle.rows, bundle.cols) != library.shape() {
        return Err(Error::dim("svd source columns", library.ncols(), bundle.cols));
    }
    let r = select_rank(bundle, rule)?;
    let (retained, discarded) = bundle.singular_values.split_at(r);
    let (h_bar, v1) = match rule {
        RankRule::TruncateColumns { .. } => {
            let mut v1 = DMatrix::zeros(library.ncols(), r);
            v1.view_mut((0, 0), (r, r)).fill_with_identity();
            (library.columns(0, r).into_owned(), v1)
        }
        _ => {
            let mut ws = bundle.left.columns(0, r).into_owned();
            for (mut col, s) in ws.column_iter_mut().zip(retained) {
                col *= *s;
            }
            (ws, bundle.right.columns(0, r).into_owned())
        }
    };
    Ok(ReducedLibrary {
        h_bar: BlockMatrix::unstructured(h_bar),
        v1,
        rank: r,
        retained: retained.to_vec(),
        discarded: discarded.to_vec(),
        rule,
    })
}

/// Sine of the largest principal angle between the column spaces of `a` and `b`.
///
/// Returns 0 for identical ranges and 1 when some direction of one range is
/// orthogonal to the other (including ranges of different dimension).
pub fn range_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim("range_distance rows", a.nrows(), b.nrows()));
    }
    let qa = linalg::range_basis(a, DEFAULT_RANK_TOLERANCE)?;
    let qb = linalg::range_basis(b, DEFAULT_RANK_TOLERANCE)?;
    if qa.ncols() != qb.ncols() {
        return Ok(1.0);
    }
    if qa.ncols() == 0 {
        return Ok(0.0);
    }
    let residual = &qa - &qb * (qb.transpose() * &qa);
    Ok(linalg::spectral_norm(&residual).min(1.0))
}

/// Writes `index,sigma,log10_sigma` rows, one per singular value (1-based index).
pub fn write_spectrum_csv<W: Write>(sigma: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Parse {
        what: "spectrum csv",
        reason: e.to_string(),
    };
    w.write_record(["index", "sigma", "log10_sigma"]).map_err(err)?;
    for (i, s) in sigma.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string(), s.log10().to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse {
        what: "spectrum csv",
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn bundle_from(sigma: &[f64]) -> SvdBundle {
        let k = sigma.len();
        SvdBundle {
            singular_values: sigma.to_vec(),
            left: DMatrix::identity(k, k),
            right: DMatrix::identity(k, k),
            rows: k,
            cols: k,
        }
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let b = svd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(b.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one_outer_product() {
        let a = DVector::from_column_slice(&[1.0, 2.0, 2.0]);
        let c = DVector::from_column_slice(&[3.0, 4.0]);
        let b = svd(&(&a * c.transpose())).unwrap();
        assert!((b.singular_values[0] - 15.0).abs() < 1e-12);
        assert!(b.singular_values[1].abs() < 1e-12);
    }

    #[test]
    fn log_gap_rules() {
        let rule = RankRule::LogGap {
            min_decades: 2.0,
            fallback_rel_tol: 1e-6,
        };
        assert_eq!(select_rank(&bundle_from(&[1.0, 1e-1, 1e-12, 1e-13]), rule).unwrap(), 2);

        let geometric: Vec<f64> = (0..40).map(|i| 0.9f64.powi(i)).collect();
        let fallback = RankRule::Threshold { rel_tol: 1e-6 };
        assert_eq!(
            select_rank(&bundle_from(&geometric), rule).unwrap(),
            select_rank(&bundle_from(&geometric), fallback).unwrap()
        );
    }

    #[test]
    fn fixed_rule_clips_and_zero_library_errors() {
        let b = bundle_from(&[3.0, 2.0, 1.0]);
        assert_eq!(select_rank(&b, RankRule::Fixed { rank: 10 }).unwrap(), 3);
        assert_eq!(select_rank(&b, RankRule::Fixed { rank: 0 }).unwrap(), 1);
        assert!(matches!(
            select_rank(&bundle_from(&[0.0, 0.0]), RankRule::default()),
            Err(Error::ZeroLibrary)
        ));
        assert_eq!(select_rank(&b, RankRule::Structural { ml_plus_n: 2 }).unwrap(), 2);
    }

    #[test]
    fn square_full_rank_keeps_range() {
        let lib = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0]);
        let red = reduce(&lib, RankRule::Fixed { rank: 3 }).unwrap();
        assert_eq!(red.h_bar.cols(), 3);
        assert!(range_distance(&lib, red.h_bar.matrix()).unwrap() < 1e-12);
        assert_eq!(red.h_bar.structure(), crate::data::Structure::Unstructured);
    }

    #[test]
    fn truncation_keeps_leading_columns() {
        let lib = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.0);
        let red = reduce(&lib, RankRule::TruncateColumns { rank: 2 }).unwrap();
        assert_eq!(red.h_bar.matrix(), &lib.columns(0, 2).into_owned());
        assert_eq!(&lib * &red.v1, *red.h_bar.matrix());
    }

    #[test]
    fn range_distance_basics() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((range_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        assert!(range_distance(&a, &(&a * t)).unwrap() < 1e-12);
        assert!(range_distance(&a, &e1).is_err());
    }

    #[test]
    fn reduced_library_file_round_trip() {
        let lib = DMatrix::from_fn(5, 7, |i, j| ((i + 1) as f64).powi(j as i32 % 3) + 0.1 * j as f64);
        let red = reduce(&lib, RankRule::Threshold { rel_tol: 1e-9 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reduced.json");
        red.save(&path).unwrap();
        assert_eq!(ReducedLibrary::load(&path).unwrap(), red);
    }

    #[test]
    fn spectrum_csv_layout() {
        let mut buf = Vec::new();
        write_spectrum_csv(&[100.0, 1.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,sigma,log10_sigma\n1,100,2\n2,1,0\n");
    }
}
