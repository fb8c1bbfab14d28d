//! Dense linear algebra used by the distribution code.
//!
//! The subgenerators assembled for hashrate profiles reach order ~3500 but are
//! block upper triangular with tiny diagonal blocks. [`BlockPartition`] finds
//! that structure for any square matrix, and [`ShiftedSystem`] solves
//! `(a·I + b·T) x = r` by block back-substitution, so no explicit inverse and
//! no O(m³) factorization is ever needed on the hot path.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, Schur, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Contiguous diagonal blocks of a block upper-triangular matrix, as boundary
/// offsets `0 = s_0 < s_1 < … < s_B = m`. The partition is the finest one for
/// which every entry below the block diagonal is exactly zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    bounds: Vec<usize>,
}

impl BlockPartition {
    pub fn detect(mat: &DMatrix<f64>) -> Self {
        let m = mat.nrows();
        // first nonzero column of each row, capped at the diagonal
        let lowest: Vec<usize> = (0..m)
            .map(|i| (0..i).find(|&j| mat[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut bounds = vec![m];
        let mut suffix_min = usize::MAX;
        for p in (1..m).rev() {
            suffix_min = suffix_min.min(lowest[p]);
            if suffix_min >= p {
                bounds.push(p);
            }
        }
        bounds.push(0);
        bounds.reverse();
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        *self.bounds.last().unwrap_or(&0)
    }

    pub fn num_blocks(&self) -> usize {
        self.bounds.len().saturating_sub(1)
    }

    pub fn largest_block(&self) -> usize {
        self.blocks().map(|(s, e)| e - s).max().unwrap_or(0)
    }

    /// `(start, end)` half-open row ranges of the diagonal blocks.
    pub fn blocks(&self) -> impl DoubleEndedIterator<Item = (usize, usize)> + ExactSizeIterator + '_ {
        self.bounds.windows(2).map(|w| (w[0], w[1]))
    }
}

struct BlockFactor {
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
}

/// Factorization of `shift·I + scale·T` that exploits the block structure of `T`.
pub struct ShiftedSystem {
    mat: Arc<DMatrix<f64>>,
    partition: Arc<BlockPartition>,
    shift: f64,
    scale: f64,
    factors: Vec<BlockFactor>,
}

impl std::fmt::Debug for ShiftedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShiftedSystem")
            .field("dim", &self.dim())
            .field("blocks", &self.partition.num_blocks())
            .field("shift", &self.shift)
            .field("scale", &self.scale)
            .finish()
    }
}

impl ShiftedSystem {
    pub fn new(
        mat: Arc<DMatrix<f64>>,
        partition: Arc<BlockPartition>,
        shift: f64,
        scale: f64,
    ) -> Result<Self> {
        let mut factors = Vec::with_capacity(partition.num_blocks());
        for (s, e) in partition.blocks() {
            let n = e - s;
            let mut block = mat.view((s, s), (n, n)).clone_owned() * scale;
            for i in 0..n {
                block[(i, i)] += shift;
            }
            let lu = block.clone().lu();
            if !lu.is_invertible() || has_tiny_pivot(&lu, &block) {
                return Err(Error::Singular("diagonal block of shifted system"));
            }
            let lu_t = block.transpose().lu();
            factors.push(BlockFactor { lu, lu_t });
        }
        Ok(Self { mat, partition, shift, scale, factors })
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// Solves `(shift·I + scale·T) x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.dim();
        if rhs.len() != m {
            return Err(Error::Dimension(format!("rhs length {} vs order {m}", rhs.len())));
        }
        let mut x = rhs.clone();
        for ((s, e), f) in self.partition.blocks().zip(&self.factors).rev() {
            let mut r = x.rows(s, e - s).clone_owned();
            if e < m {
                let coupling = self.mat.view((s, e), (e - s, m - e)) * x.rows(e, m - e);
                r.axpy(-self.scale, &coupling, 1.0);
            }
            let xb = f.lu.solve(&r).ok_or(Error::Singular("block back-substitution"))?;
            x.rows_mut(s, e - s).copy_from(&xb);
        }
        Ok(x)
    }

    /// Solves `(shift·I + scale·T)ᵀ x = rhs`, i.e. `x` is the row-vector solution
    /// of `xᵀ (shift·I + scale·T) = rhsᵀ`.
    pub fn solve_transpose(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.dim();
        if rhs.len() != m {
            return Err(Error::Dimension(format!("rhs length {} vs order {m}", rhs.len())));
        }
        let mut x = rhs.clone();
        for ((s, e), f) in self.partition.blocks().zip(&self.factors) {
            let mut r = x.rows(s, e - s).clone_owned();
            if s > 0 {
                let coupling = self.mat.view((0, s), (s, e - s)).tr_mul(&x.rows(0, s));
                r.axpy(-self.scale, &coupling, 1.0);
            }
            let xb = f.lu_t.solve(&r).ok_or(Error::Singular("block forward substitution"))?;
            x.rows_mut(s, e - s).copy_from(&xb);
        }
        Ok(x)
    }

    /// Computes `(shift·I + scale·T) x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = &*self.mat * x;
        y *= self.scale;
        y.axpy(self.shift, x, 1.0);
        y
    }
}

fn has_tiny_pivot(lu: &LU<f64, Dyn, Dyn>, block: &DMatrix<f64>) -> bool {
    let scale = block.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let u = lu.u();
    (0..u.nrows()).any(|i| u[(i, i)].abs() <= scale * 1e-14)
}

/// Eigenvalues of a block upper-triangular matrix, gathered block by block.
pub fn block_eigenvalues(mat: &DMatrix<f64>, partition: &BlockPartition) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(mat.nrows());
    for (s, e) in partition.blocks() {
        let n = e - s;
        match n {
            1 => out.push(Complex64::new(mat[(s, s)], 0.0)),
            2 => {
                let (a, b, c, d) = (mat[(s, s)], mat[(s, s + 1)], mat[(s + 1, s)], mat[(s + 1, s + 1)]);
                let half_tr = 0.5 * (a + d);
                let disc = Complex64::new(0.25 * (a - d) * (a - d) + b * c, 0.0).sqrt();
                out.push(half_tr + disc);
                out.push(half_tr - disc);
            }
            _ => {
                let block = mat.view((s, s), (n, n)).clone_owned();
                let schur = Schur::try_new(block, f64::EPSILON, 10_000)
                    .ok_or(Error::Singular("Schur iteration did not converge"))?;
                out.extend(schur.complex_eigenvalues().iter().copied());
            }
        }
    }
    Ok(out)
}

pub fn norm1(mat: &DMatrix<f64>) -> f64 {
    mat.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE_THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

fn pade_coefficients(degree: usize) -> &'static [f64] {
    match degree {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
    }
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// of degree 3 to 13, selected from the 1-norm (Higham 2005).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension("expm of a non-square matrix".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::param("expm argument has non-finite entries"));
    }
    for &(degree, theta) in &PADE_THETA {
        if norm <= theta {
            return pade_low(a, degree);
        }
    }
    let squarings = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    let scaled = a * 2f64.powi(-squarings);
    let mut r = pade13(&scaled)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: &DMatrix<f64>, degree: usize) -> Result<DMatrix<f64>> {
    let b = pade_coefficients(degree);
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut power = ident.clone();
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for j in 0..=degree / 2 {
        if j > 0 {
            power = &power * &a2;
        }
        u_inner += &power * b[2 * j + 1];
        v += &power * b[2 * j];
    }
    let u = a * u_inner;
    pade_solve(u, v)
}

fn pade13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = pade_coefficients(13);
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    pade_solve(u, v)
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let denom = &v - &u;
    let numer = v + u;
    denom.lu().solve(&numer).ok_or(Error::Singular("Padé denominator"))
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}
