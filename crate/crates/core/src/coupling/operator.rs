//! Dense Gaussian and structured DCT design operators.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use super::{BaseMatrix, BlockMaps};
use crate::error::{invalid, Error, Result};

/// Default cap on stored entries of a dense operator.
pub const DEFAULT_DENSE_BUDGET: u128 = 1 << 31;

const MAGIC: &[u8; 8] = b"GMACOP\0\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    DenseGaussian,
    StructuredDct,
}

impl OperatorKind {
    fn tag(self) -> u8 {
        match self {
            OperatorKind::DenseGaussian => 0,
            OperatorKind::StructuredDct => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(OperatorKind::DenseGaussian),
            1 => Ok(OperatorKind::StructuredDct),
            _ => Err(Error::Format(format!("unknown operator kind tag {t}"))),
        }
    }
}

/// One non-zero block of a structured operator: `scale * D[rows, cols] * diag(signs)`
/// where `D` is the orthonormal `P`-point DCT-II matrix.
#[derive(Debug, Clone, PartialEq)]
struct DctBlock {
    scale: f64,
    rows: Vec<u32>,
    cols: Vec<u32>,
    signs: Vec<i8>,
}

#[derive(Clone)]
enum Storage {
    /// Row-major `n x LB`; entries in zero blocks are stored as zeros.
    Dense(Vec<f64>),
    Dct {
        len: usize,
        /// Indexed `r * C + c`; `None` for zero blocks.
        blocks: Vec<Option<DctBlock>>,
        fwd: Arc<dyn TransformType2And3<f64>>,
    },
}

/// The `n x LB` design matrix `A`.
///
/// Immutable after construction; all applications take `&self` and may run
/// concurrently.
#[derive(Clone)]
pub struct DesignOperator {
    base: BaseMatrix,
    maps: BlockMaps,
    l: usize,
    b: usize,
    seed: u64,
    storage: Storage,
}

impl std::fmt::Debug for DesignOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DesignOperator")
            .field("kind", &self.kind())
            .field("n", &self.maps.n)
            .field("l", &self.l)
            .field("b", &self.b)
            .field("base", &(self.base.omega(), self.base.lambda(), self.base.rho()))
            .field("seed", &self.seed)
            .finish()
    }
}

impl DesignOperator {
    /// Sample a design with the default dense budget.
    pub fn sample(
        base: &BaseMatrix,
        n: usize,
        l: usize,
        b: usize,
        kind: OperatorKind,
        seed: u64,
    ) -> Result<Self> {
        Self::sample_with_budget(base, n, l, b, kind, seed, DEFAULT_DENSE_BUDGET)
    }

    pub fn sample_with_budget(
        base: &BaseMatrix,
        n: usize,
        l: usize,
        b: usize,
        kind: OperatorKind,
        seed: u64,
        dense_budget: u128,
    ) -> Result<Self> {
        let maps = base.block_maps(n, l, b)?;
        let storage = match kind {
            OperatorKind::DenseGaussian => {
                let needed = n as u128 * (l * b) as u128;
                if needed > dense_budget {
                    return Err(Error::MemoryBudget {
                        needed,
                        budget: dense_budget,
                    });
                }
                Storage::Dense(sample_dense(base, &maps, seed))
            }
            OperatorKind::StructuredDct => sample_dct(base, &maps, seed),
        };
        Ok(Self {
            base: base.clone(),
            maps,
            l,
            b,
            seed,
            storage,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        match self.storage {
            Storage::Dense(_) => OperatorKind::DenseGaussian,
            Storage::Dct { .. } => OperatorKind::StructuredDct,
        }
    }

    pub fn base(&self) -> &BaseMatrix {
        &self.base
    }

    pub fn maps(&self) -> &BlockMaps {
        &self.maps
    }

    /// Code length `n`.
    pub fn n(&self) -> usize {
        self.maps.n
    }

    pub fn users(&self) -> usize {
        self.l
    }

    pub fn section_len(&self) -> usize {
        self.b
    }

    /// Number of columns `LB`.
    pub fn cols(&self) -> usize {
        self.maps.cols_total
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `A x`.
    pub fn apply_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("forward input", self.cols(), x.len())?;
        let mut out = vec![0.0; self.n()];
        match &self.storage {
            Storage::Dense(a) => {
                let cols = self.cols();
                let maps = self.maps;
                let base = &self.base;
                crate::par::for_each_chunk_mut(&mut out, maps.row_block_len.min(64).max(1), |start, chunk| {
                    for (k, o) in chunk.iter_mut().enumerate() {
                        let i = start + k;
                        let r = maps.row_block(i);
                        let row = &a[i * cols..(i + 1) * cols];
                        let mut acc = 0.0;
                        for c in 0..maps.cols {
                            if base.get(r, c) == 0.0 {
                                continue;
                            }
                            let range = maps.col_range(c);
                            acc += dot(&row[range.clone()], &x[range]);
                        }
                        *o = acc;
                    }
                });
            }
            Storage::Dct { len, blocks, fwd } => {
                let maps = self.maps;
                crate::par::for_each_chunk_mut(&mut out, maps.row_block_len, |start, out_r| {
                    let r = start / maps.row_block_len;
                    let mut buf = vec![0.0; *len];
                    let mut scratch = vec![0.0; fwd.get_scratch_len()];
                    for c in 0..maps.cols {
                        let Some(blk) = &blocks[r * maps.cols + c] else {
                            continue;
                        };
                        let x_c = &x[maps.col_range(c)];
                        buf.iter_mut().for_each(|v| *v = 0.0);
                        for ((&j, &s), &xv) in blk.cols.iter().zip(&blk.signs).zip(x_c) {
                            buf[j as usize] = f64::from(s) * xv;
                        }
                        dct2_ortho(fwd.as_ref(), &mut buf, &mut scratch);
                        for (o, &i) in out_r.iter_mut().zip(&blk.rows) {
                            *o += blk.scale * buf[i as usize];
                        }
                    }
                });
            }
        }
        Ok(out)
    }

    /// `A^T q`.
    pub fn apply_adjoint(&self, q: &[f64]) -> Result<Vec<f64>> {
        let ones = vec![1.0; self.base.rows() * self.base.cols()];
        self.apply_adjoint_scaled(q, &ones)
    }

    /// `(S ⊙ A)^T q` for a block-constant scaling `S_ij = s[r(i) * C + c(j)]`.
    ///
    /// `s_block` is row-major `R x C`.
    pub fn apply_adjoint_scaled(&self, q: &[f64], s_block: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.n(), q.len())?;
        check_len("block scaling", self.base.rows() * self.base.cols(), s_block.len())?;
        if s_block.iter().any(|v| !v.is_finite()) {
            return Err(invalid("block scaling must be finite"));
        }
        let maps = self.maps;
        let mut out = vec![0.0; self.cols()];
        match &self.storage {
            Storage::Dense(a) => {
                let cols = self.cols();
                let base = &self.base;
                // chunks must not straddle a column block
                let chunk = (1..=maps.col_block_len.min(256))
                    .rev()
                    .find(|d| maps.col_block_len % d == 0)
                    .unwrap_or(1);
                crate::par::for_each_chunk_mut(&mut out, chunk, |start, out_chunk| {
                    let c = maps.col_block(start);
                    let width = out_chunk.len();
                    for r in 0..maps.rows {
                        let s = s_block[r * maps.cols + c];
                        if base.get(r, c) == 0.0 || s == 0.0 {
                            continue;
                        }
                        for i in maps.row_range(r) {
                            let w = s * q[i];
                            if w == 0.0 {
                                continue;
                            }
                            let row = &a[i * cols + start..i * cols + start + width];
                            for (o, &aij) in out_chunk.iter_mut().zip(row) {
                                *o += w * aij;
                            }
                        }
                    }
                });
            }
            Storage::Dct { len, blocks, fwd } => {
                crate::par::for_each_chunk_mut(&mut out, maps.col_block_len, |start, out_c| {
                    let c = start / maps.col_block_len;
                    let mut buf = vec![0.0; *len];
                    let mut scratch = vec![0.0; fwd.get_scratch_len()];
                    for r in 0..maps.rows {
                        let Some(blk) = &blocks[r * maps.cols + c] else {
                            continue;
                        };
                        let s = s_block[r * maps.cols + c] * blk.scale;
                        if s == 0.0 {
                            continue;
                        }
                        let q_r = &q[maps.row_range(r)];
                        buf.iter_mut().for_each(|v| *v = 0.0);
                        for (&i, &qv) in blk.rows.iter().zip(q_r) {
                            buf[i as usize] = qv;
                        }
                        dct3_ortho(fwd.as_ref(), &mut buf, &mut scratch);
                        for ((o, &j), &sg) in out_c.iter_mut().zip(&blk.cols).zip(&blk.signs) {
                            *o += s * f64::from(sg) * buf[j as usize];
                        }
                    }
                });
            }
        }
        Ok(out)
    }

    /// Materialize `A` row-major. Intended for small instances and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(a) => a.clone(),
            Storage::Dct { .. } => {
                let (n, cols) = (self.n(), self.cols());
                let mut a = vec![0.0; n * cols];
                let mut e = vec![0.0; cols];
                for j in 0..cols {
                    e[j] = 1.0;
                    let col = self.apply_forward(&e).expect("shape checked");
                    e[j] = 0.0;
                    for i in 0..n {
                        a[i * cols + j] = col[i];
                    }
                }
                a
            }
        }
    }

    /// Write a binary snapshot.
    ///
    /// Layout (little endian): magic `GMACOP\0\x01`; kind `u8`; `n, L, B,
    /// omega, lambda` as `u64`; `rho` as `f64`; seed `u64`. Dense payload is
    /// the `n * LB` row-major `f64` entries. DCT payload is the transform
    /// length `u64`, then per block in row-major order a presence byte and,
    /// when present, the scale `f64`, `m` row indices `u32`, `k` column
    /// indices `u32` and `k` signs `i8`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.kind().tag()])?;
        for v in [
            self.n(),
            self.l,
            self.b,
            self.base.omega(),
            self.base.lambda(),
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.base.rho().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        match &self.storage {
            Storage::Dense(a) => {
                for v in a {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Storage::Dct { len, blocks, .. } => {
                w.write_all(&(*len as u64).to_le_bytes())?;
                for blk in blocks {
                    match blk {
                        None => w.write_all(&[0])?,
                        Some(blk) => {
                            w.write_all(&[1])?;
                            w.write_all(&blk.scale.to_le_bytes())?;
                            for v in blk.rows.iter().chain(&blk.cols) {
                                w.write_all(&v.to_le_bytes())?;
                            }
                            for &s in &blk.signs {
                                w.write_all(&s.to_le_bytes())?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an operator snapshot (bad magic)".into()));
        }
        let kind = OperatorKind::from_tag(read_u8(&mut r)?)?;
        let n = read_u64(&mut r)? as usize;
        let l = read_u64(&mut r)? as usize;
        let b = read_u64(&mut r)? as usize;
        let omega = read_u64(&mut r)? as usize;
        let lambda = read_u64(&mut r)? as usize;
        let rho = f64::from_le_bytes(read_arr(&mut r)?);
        let seed = read_u64(&mut r)?;
        let base = BaseMatrix::with_short_length(omega, lambda, rho)?;
        let maps = base.block_maps(n, l, b)?;
        let storage = match kind {
            OperatorKind::DenseGaussian => {
                let mut a = vec![0.0; n * l * b];
                for v in a.iter_mut() {
                    *v = f64::from_le_bytes(read_arr(&mut r)?);
                }
                Storage::Dense(a)
            }
            OperatorKind::StructuredDct => {
                let len = read_u64(&mut r)? as usize;
                if len != maps.row_block_len.max(maps.col_block_len) {
                    return Err(Error::Format(format!("transform length {len} does not match block shape")));
                }
                let mut blocks = Vec::with_capacity(maps.rows * maps.cols);
                for _ in 0..maps.rows * maps.cols {
                    if read_u8(&mut r)? == 0 {
                        blocks.push(None);
                        continue;
                    }
                    let scale = f64::from_le_bytes(read_arr(&mut r)?);
                    let mut read_idx = |count: usize| -> Result<Vec<u32>> {
                        let v = (0..count)
                            .map(|_| read_arr(&mut r).map(u32::from_le_bytes))
                            .collect::<std::io::Result<Vec<u32>>>()?;
                        if v.iter().any(|&i| i as usize >= len) {
                            return Err(Error::Format("index out of range in snapshot".into()));
                        }
                        Ok(v)
                    };
                    let rows = read_idx(maps.row_block_len)?;
                    let cols = read_idx(maps.col_block_len)?;
                    let signs = (0..maps.col_block_len)
                        .map(|_| read_u8(&mut r).map(|v| v as i8))
                        .collect::<Result<Vec<i8>>>()?;
                    blocks.push(Some(DctBlock {
                        scale,
                        rows,
                        cols,
                        signs,
                    }));
                }
                Storage::Dct {
                    len,
                    blocks,
                    fwd: DctPlanner::new().plan_dct2(len),
                }
            }
        };
        Ok(Self {
            base,
            maps,
            l,
            b,
            seed,
            storage,
        })
    }
}

fn read_arr<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(read_arr::<R, 1>(r)?[0])
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_arr(r)?))
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { what, expected, got });
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_dense(base: &BaseMatrix, maps: &BlockMaps, seed: u64) -> Vec<f64> {
    let cols = maps.cols_total;
    let per_row = maps.row_block_len as f64;
    let mut a = vec![0.0; maps.n * cols];
    crate::par::for_each_chunk_mut(&mut a, cols, |start, row| {
        let i = start / cols;
        let r = maps.row_block(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for c in 0..maps.cols {
            let w = base.get(r, c);
            if w == 0.0 {
                continue;
            }
            let sd = (w / per_row).sqrt();
            for v in &mut row[maps.col_range(c)] {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        }
    });
    a
}

fn sample_dct(base: &BaseMatrix, maps: &BlockMaps, seed: u64) -> Storage {
    let (m, k) = (maps.row_block_len, maps.col_block_len);
    let len = m.max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(maps.rows * maps.cols);
    for r in 0..maps.rows {
        for c in 0..maps.cols {
            let w = base.get(r, c);
            if w == 0.0 {
                blocks.push(None);
                continue;
            }
            let rows = sample_indices(&mut rng, len, m).into_iter().map(|i| i as u32).collect();
            let cols = sample_indices(&mut rng, len, k).into_iter().map(|i| i as u32).collect();
            let signs = (0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            blocks.push(Some(DctBlock {
                scale: (w * len as f64 / m as f64).sqrt(),
                rows,
                cols,
                signs,
            }));
        }
    }
    Storage::Dct {
        len,
        blocks,
        fwd: DctPlanner::new().plan_dct2(len),
    }
}

/// Orthonormal DCT-II in place.
fn dct2_ortho(plan: &dyn TransformType2And3<f64>, buf: &mut [f64], scratch: &mut [f64]) {
    plan.process_dct2_with_scratch(buf, scratch);
    let p = buf.len() as f64;
    let (s0, s) = ((1.0 / p).sqrt(), (2.0 / p).sqrt());
    buf[0] *= s0;
    buf[1..].iter_mut().for_each(|v| *v *= s);
}

/// Transpose of [`dct2_ortho`] in place.
fn dct3_ortho(plan: &dyn TransformType2And3<f64>, buf: &mut [f64], scratch: &mut [f64]) {
    let p = buf.len() as f64;
    let (s0, s) = ((1.0 / p).sqrt(), (2.0 / p).sqrt());
    // the unnormalized DCT-III halves the DC term
    buf[0] *= 2.0 * s0;
    buf[1..].iter_mut().for_each(|v| *v *= s);
    plan.process_dct3_with_scratch(buf, scratch);
}
