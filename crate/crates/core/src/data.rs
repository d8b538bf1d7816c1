//! Trajectories and structured data matrices.
//!
//! A [`Trajectory`] stores samples time-major (each time step contiguous), so
//! building a block column of a Hankel or Page matrix is a contiguous copy.
//! All builders return a [`BlockMatrix`] tagged with the structure it was built
//! with; excitation checks return an [`ExcitationReport`] instead of failing
//! when the data are too short to reach full row rank.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Singular values below this fraction of the largest one count as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

/// A finite, time-indexed vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    channels: usize,
    data: Vec<f64>,
}

impl Trajectory {
    /// Wraps time-major data: sample `t` occupies `data[t * channels..(t + 1) * channels]`.
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::param("channels", "must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(Error::param(
                "data",
                format!(
                    "length {} is not a positive multiple of {channels} channels",
                    data.len()
                ),
            ));
        }
        Ok(Self { channels, data })
    }

    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::param("samples", "trajectory needs at least one sample"))?;
        let channels = first.as_ref().len();
        let mut data = Vec::with_capacity(channels * samples.len());
        for s in samples {
            let s = s.as_ref();
            if s.len() != channels {
                return Err(Error::dim("trajectory sample", channels, s.len()));
            }
            data.extend_from_slice(s);
        }
        Self::new(channels, data)
    }

    /// A single-channel trajectory.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    /// Always false: a trajectory holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Samples `start..start + len` stacked into one vector.
    pub fn stacked(&self, start: usize, len: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.data[start * self.channels..(start + len) * self.channels])
    }

    /// The restriction of the signal to `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::DepthTooLarge {
                depth: start + len,
                length: self.len(),
            });
        }
        Self::new(
            self.channels,
            self.data[start * self.channels..(start + len) * self.channels].to_vec(),
        )
    }

    /// Appends the samples of `other`.
    pub fn extend(&mut self, other: &Trajectory) -> Result<()> {
        if other.channels != self.channels {
            return Err(Error::dim("trajectory channels", self.channels, other.channels));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.channels {
            return Err(Error::dim("trajectory sample", self.channels, sample.len()));
        }
        self.data.extend_from_slice(sample);
        Ok(())
    }

    /// Writes the trajectory as CSV with header `t,ch0,ch1,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.channels).map(|c| format!("ch{c}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, s) in self.samples().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse {
            what: "trajectory csv",
            reason: e.to_string(),
        })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::Parse {
                what: "trajectory csv",
                reason: "header must be `t,ch0,ch1,...`".into(),
            });
        }
        let channels = header.len() - 1;
        let mut data = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record.map_err(csv_err)?;
            for field in record.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                    what: "trajectory csv",
                    reason: format!("row {row}: {e}"),
                })?);
            }
        }
        Self::new(channels, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        what: "trajectory csv",
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Hankel,
    Page,
    Mosaic,
    Unstructured,
}

/// A dense data matrix together with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    matrix: DMatrix<f64>,
    block_height: usize,
    structure: Structure,
    discarded_samples: usize,
}

impl BlockMatrix {
    pub fn new(matrix: DMatrix<f64>, block_height: usize, structure: Structure) -> Result<Self> {
        if block_height == 0 {
            return Err(Error::param("block_height", "must be positive"));
        }
        if structure != Structure::Unstructured && !matrix.nrows().is_multiple_of(block_height) {
            return Err(Error::param(
                "block_height",
                format!(
                    "{} rows are not a multiple of block height {block_height}",
                    matrix.nrows()
                ),
            ));
        }
        Ok(Self {
            matrix,
            block_height,
            structure,
            discarded_samples: 0,
        })
    }

    pub fn unstructured(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            block_height: 1,
            structure: Structure::Unstructured,
            discarded_samples: 0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn block_height(&self) -> usize {
        self.block_height
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Trailing samples dropped by a Page construction.
    pub fn discarded_samples(&self) -> usize {
        self.discarded_samples
    }

    /// Stacks `[upper; lower]`, e.g. the input and output Hankel matrices of a library.
    ///
    /// The result keeps the common structure tag with a block height of the
    /// combined sample width.
    pub fn stack(upper: &BlockMatrix, lower: &BlockMatrix) -> Result<Self> {
        if upper.cols() != lower.cols() {
            return Err(Error::dim("stacked library columns", upper.cols(), lower.cols()));
        }
        let depth_u = upper.rows() / upper.block_height;
        let depth_l = lower.rows() / lower.block_height;
        let structure = if upper.structure == lower.structure && depth_u == depth_l {
            upper.structure
        } else {
            Structure::Unstructured
        };
        let mut m = DMatrix::zeros(upper.rows() + lower.rows(), upper.cols());
        m.rows_mut(0, upper.rows()).copy_from(&upper.matrix);
        m.rows_mut(upper.rows(), lower.rows()).copy_from(&lower.matrix);
        let block_height = if structure == Structure::Unstructured {
            1
        } else {
            upper.block_height + lower.block_height
        };
        Ok(Self {
            matrix: m,
            block_height,
            structure,
            discarded_samples: upper.discarded_samples.max(lower.discarded_samples),
        })
    }
}

fn check_depth(w: &Trajectory, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::param("depth", "must be at least 1"));
    }
    if depth > w.len() {
        return Err(Error::DepthTooLarge {
            depth,
            length: w.len(),
        });
    }
    Ok(())
}

/// Hankel matrix of depth `depth`: column `j` stacks samples `j..j + depth`.
pub fn build_hankel(w: &Trajectory, depth: usize) -> Result<BlockMatrix> {
    check_depth(w, depth)?;
    let ch = w.channels();
    let cols = w.len() - depth + 1;
    let rows = ch * depth;
    let data = w.as_slice();
    let mut m = DMatrix::zeros(rows, cols);
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.copy_from_slice(&data[j * ch..j * ch + rows]);
    }
    BlockMatrix::new(m, ch, Structure::Hankel)
}

/// Page matrix of depth `depth`: column `j` stacks samples `j*depth..(j+1)*depth`.
///
/// Samples beyond `floor(T / depth) * depth` are discarded and counted in
/// [`BlockMatrix::discarded_samples`].
pub fn build_page(w: &Trajectory, depth: usize) -> Result<BlockMatrix> {
    check_depth(w, depth)?;
    let ch = w.channels();
    let cols = w.len() / depth;
    let rows = ch * depth;
    let data = w.as_slice();
    let mut m = DMatrix::zeros(rows, cols);
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.copy_from_slice(&data[j * rows..(j + 1) * rows]);
    }
    let mut out = BlockMatrix::new(m, ch, Structure::Page)?;
    out.discarded_samples = w.len() - cols * depth;
    Ok(out)
}

/// Horizontal concatenation of the depth-`depth` Hankel matrices of `ws`.
pub fn build_mosaic_hankel(ws: &[Trajectory], depth: usize) -> Result<BlockMatrix> {
    let first = ws
        .first()
        .ok_or_else(|| Error::param("trajectories", "mosaic needs at least one trajectory"))?;
    let ch = first.channels();
    for (i, w) in ws.iter().enumerate() {
        if w.channels() != ch {
            return Err(Error::ChannelMismatch {
                index: i,
                expected: ch,
                actual: w.channels(),
            });
        }
        check_depth(w, depth)?;
    }
    let blocks = ws
        .iter()
        .map(|w| build_hankel(w, depth))
        .collect::<Result<Vec<_>>>()?;
    let cols = blocks.iter().map(BlockMatrix::cols).sum();
    let mut m = DMatrix::zeros(ch * depth, cols);
    let mut offset = 0;
    for b in &blocks {
        m.columns_mut(offset, b.cols()).copy_from(b.matrix());
        offset += b.cols();
    }
    BlockMatrix::new(m, ch, Structure::Mosaic)
}

/// Full-row-rank diagnostics for a data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub order: usize,
    pub required_rank: usize,
    pub computed_rank: usize,
    pub satisfied: bool,
    pub smallest_retained_singular_value: f64,
    pub rank_tolerance: f64,
    /// Set when the matrix has fewer columns than rows, so full row rank is impossible.
    pub shortfall: Option<Shortfall>,
    pub discarded_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub columns_available: usize,
    pub columns_required: usize,
}

impl ExcitationReport {
    fn from_matrix(m: &BlockMatrix, order: usize, rank_tolerance: f64) -> Self {
        let required_rank = m.rows();
        let sigma = linalg::singular_values(m.matrix());
        let computed_rank = linalg::numerical_rank(&sigma, rank_tolerance);
        let smallest_retained_singular_value = if computed_rank > 0 {
            sigma[computed_rank - 1]
        } else {
            0.0
        };
        let shortfall = (m.cols() < m.rows()).then(|| Shortfall {
            columns_available: m.cols(),
            columns_required: m.rows(),
        });
        Self {
            order,
            required_rank,
            computed_rank,
            satisfied: computed_rank == required_rank,
            smallest_retained_singular_value,
            rank_tolerance,
            shortfall,
            discarded_samples: m.discarded_samples(),
        }
    }
}

/// Whether `H_k(w)` has full row rank `channels * k`.
pub fn check_persistent_excitation(
    w: &Trajectory,
    order: usize,
    rank_tolerance: f64,
) -> Result<ExcitationReport> {
    let h = build_hankel(w, order)?;
    Ok(ExcitationReport::from_matrix(&h, order, rank_tolerance))
}

/// The stacked shifted Page matrix
/// `[P_k(w[0, T-1-(l-1)k]); P_k(w[k, T-1-(l-2)k]); ...; P_k(w[k(l-1), T-1])]`.
///
/// Every block covers `T - (l-1)k` samples, so all blocks share the same
/// column count `floor((T - (l-1)k) / k)`.
pub fn build_shifted_page(w: &Trajectory, depth: usize, order: usize) -> Result<BlockMatrix> {
    if order == 0 {
        return Err(Error::param("order", "must be at least 1"));
    }
    if depth == 0 {
        return Err(Error::param("depth", "must be at least 1"));
    }
    let needed = depth * order;
    if needed > w.len() {
        return Err(Error::DepthTooLarge {
            depth: needed,
            length: w.len(),
        });
    }
    let span = w.len() - (order - 1) * depth;
    let blocks = (0..order)
        .map(|t| build_page(&w.window(t * depth, span)?, depth))
        .collect::<Result<Vec<_>>>()?;
    let rows_per = blocks[0].rows();
    let cols = blocks[0].cols();
    let mut m = DMatrix::zeros(rows_per * order, cols);
    for (t, b) in blocks.iter().enumerate() {
        m.rows_mut(t * rows_per, rows_per).copy_from(b.matrix());
    }
    let mut out = BlockMatrix::new(m, w.channels(), Structure::Page)?;
    out.discarded_samples = blocks[0].discarded_samples();
    Ok(out)
}

/// Whether `w` is `depth`-Page exciting of order `order`.
pub fn check_page_excitation(
    w: &Trajectory,
    depth: usize,
    order: usize,
    rank_tolerance: f64,
) -> Result<ExcitationReport> {
    let m = build_shifted_page(w, depth, order)?;
    Ok(ExcitationReport::from_matrix(&m, order, rank_tolerance))
}

/// Whether the mosaic-Hankel matrix of `ws` at depth `order` has full row rank.
pub fn check_collective_excitation(
    ws: &[Trajectory],
    order: usize,
    rank_tolerance: f64,
) -> Result<ExcitationReport> {
    let m = build_mosaic_hankel(ws, order)?;
    Ok(ExcitationReport::from_matrix(&m, order, rank_tolerance))
}

/// Distance from `v` to the column space of `library`: `min_g |library g - v|_2`.
///
/// The column space is taken at [`DEFAULT_RANK_TOLERANCE`].
pub fn membership_residual(library: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    membership_residual_with_tolerance(library, v, DEFAULT_RANK_TOLERANCE)
}

pub fn membership_residual_with_tolerance(
    library: &DMatrix<f64>,
    v: &DVector<f64>,
    rank_tolerance: f64,
) -> Result<f64> {
    if v.len() != library.nrows() {
        return Err(Error::dim("membership vector", library.nrows(), v.len()));
    }
    let q = linalg::range_basis(library, rank_tolerance)?;
    let proj = &q * (q.transpose() * v);
    Ok((v - proj).norm())
}
