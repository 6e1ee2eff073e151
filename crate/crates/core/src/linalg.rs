//! Singular value decompositions of score matrices.
//!
//! Small matrices go through a dense QR + SVD. Large ones use randomized
//! subspace iteration with a Rayleigh–Ritz step: each iteration projects
//! `A` onto an orthonormal basis, takes the SVD of the small projection and
//! measures the Ritz residuals `‖A vᵢ − σᵢ uᵢ‖`. The iteration stops once at
//! least `min_iters` power steps are done and every requested residual is
//! below `tol · σ₁`; the returned triplets are exactly the ones measured.
//!
//! When `T` is small enough for the Gram matrix `AᵀA` to fit comfortably in
//! memory, the power steps are applied to a cached Gram matrix instead of
//! streaming `A` twice per step. The stopping rule then reads
//! `‖AᵀA v − σ² v‖ ≤ tol² · σ₁²`, and `U = A V Σ⁻¹` is formed in one final pass.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};
use crate::matrix::ScoreMatrix;

/// Largest `min(M, T)` for which the automatic choice is a dense SVD.
pub const EXACT_AUTO_MAX_MIN_DIM: usize = 512;
/// Largest `M · T` for which the automatic choice is a dense SVD.
pub const EXACT_AUTO_MAX_ENTRIES: usize = 1 << 22;
/// Largest `T` for which a `T × T` Gram matrix is formed: `Auto` then takes
/// its eigendecomposition, `Randomized` runs its power steps on it.
pub const GRAM_MAX_COLS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMethod {
    Auto,
    Exact,
    /// Eigendecomposition of `AᵀA`.
    Gram,
    Randomized,
}

impl std::str::FromStr for SvdMethod {
    type Err = AriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(SvdMethod::Auto),
            "exact" => Ok(SvdMethod::Exact),
            "gram" => Ok(SvdMethod::Gram),
            "randomized" => Ok(SvdMethod::Randomized),
            other => Err(AriaError::InvalidInput(format!("unknown SVD method `{other}`"))),
        }
    }
}

impl std::fmt::Display for SvdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SvdMethod::Auto => "auto",
            SvdMethod::Exact => "exact",
            SvdMethod::Gram => "gram",
            SvdMethod::Randomized => "randomized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdOptions {
    /// Number of singular triplets requested.
    pub k: usize,
    pub oversample: usize,
    pub min_iters: usize,
    pub max_iters: usize,
    /// Relative Ritz residual tolerance (`‖A v − σ u‖ ≤ tol · σ₁`).
    pub tol: f64,
    pub seed: u64,
    pub method: SvdMethod,
    /// Allow the cached-Gram evaluation of power steps.
    pub gram: bool,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            k: 8,
            oversample: 8,
            min_iters: 2,
            max_iters: 500,
            tol: 1e-5,
            seed: 7,
            method: SvdMethod::Auto,
            gram: true,
        }
    }
}

impl SvdOptions {
    pub fn with_k(k: usize) -> Self {
        SvdOptions {
            k,
            ..Self::default()
        }
    }

    /// Whether `Auto` resolves to the dense path for this shape.
    pub fn uses_exact(&self, rows: usize, cols: usize) -> bool {
        match self.method {
            SvdMethod::Exact => true,
            SvdMethod::Gram | SvdMethod::Randomized => false,
            SvdMethod::Auto => rows.min(cols) <= EXACT_AUTO_MAX_MIN_DIM && rows.saturating_mul(cols) <= EXACT_AUTO_MAX_ENTRIES,
        }
    }

    /// Whether `Auto` resolves to the Gram eigendecomposition.
    pub fn uses_gram_eigen(&self, rows: usize, cols: usize) -> bool {
        match self.method {
            SvdMethod::Gram => true,
            SvdMethod::Auto => !self.uses_exact(rows, cols) && cols <= GRAM_MAX_COLS,
            _ => false,
        }
    }

    /// Whether the chosen path needs `AᵀA`.
    pub fn uses_gram(&self, rows: usize, cols: usize) -> bool {
        self.uses_gram_eigen(rows, cols)
            || (self.method == SvdMethod::Randomized && self.gram && cols <= GRAM_MAX_COLS)
    }
}

/// Leading singular triplets, sorted by decreasing singular value.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub sigmas: Vec<f64>,
    /// `M × k` left singular vectors.
    pub u: DMatrix<f64>,
    /// `T × k` right singular vectors.
    pub v: DMatrix<f64>,
    /// The resolved method: `Exact`, `Gram` or `Randomized`.
    pub method: SvdMethod,
    pub iterations: usize,
    /// Largest relative Ritz residual: on `A` for the streaming path, on
    /// `AᵀA` for Gram power steps, 0 on the direct paths.
    pub residual: f64,
    /// The complete spectrum, available on the dense path only.
    pub full_spectrum: Option<Vec<f64>>,
}

/// Top-`k` singular triplets by the method `opts` selects.
pub fn truncated_svd(s: &ScoreMatrix, opts: &SvdOptions) -> Result<Triplets> {
    truncated_svd_with_gram(s, opts, None)
}

/// As [`truncated_svd`], reusing a precomputed row-major `AᵀA` when the
/// Gram path applies.
pub fn truncated_svd_with_gram(s: &ScoreMatrix, opts: &SvdOptions, gram: Option<&[f64]>) -> Result<Triplets> {
    let min_dim = s.nrows().min(s.ncols());
    if opts.k == 0 || opts.k > min_dim {
        return Err(AriaError::InvalidInput(format!(
            "requested {} singular values from a {}x{} matrix",
            opts.k,
            s.nrows(),
            s.ncols()
        )));
    }
    if opts.uses_exact(s.nrows(), s.ncols()) {
        let full = dense_svd(&s.to_dmatrix());
        Ok(Triplets {
            sigmas: full.sigmas[..opts.k].to_vec(),
            u: full.u.columns(0, opts.k).into_owned(),
            v: full.v.columns(0, opts.k).into_owned(),
            method: SvdMethod::Exact,
            iterations: 0,
            residual: 0.0,
            full_spectrum: Some(full.sigmas),
        })
    } else if opts.uses_gram(s.nrows(), s.ncols()) {
        let owned;
        let g = match gram {
            Some(g) => g,
            None => {
                let all: Vec<usize> = (0..s.ncols()).collect();
                owned = centered_gram(s, &all, &vec![0.0; s.ncols()]);
                &owned
            }
        };
        if opts.uses_gram_eigen(s.nrows(), s.ncols()) {
            gram_eigen_svd(s, g, opts.k)
        } else {
            randomized_svd_gram(s, g, opts)
        }
    } else {
        randomized_svd(s, opts)
    }
}

/// Full thin SVD with descending singular values.
#[derive(Debug, Clone)]
pub struct DenseSvd {
    pub sigmas: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD via QR of the taller orientation followed by an SVD of the
/// square triangular factor.
pub fn dense_svd(a: &DMatrix<f64>) -> DenseSvd {
    if a.nrows() < a.ncols() {
        let t = dense_svd(&a.transpose());
        return DenseSvd {
            sigmas: t.sigmas,
            u: t.v,
            v: t.u,
        };
    }
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let svd = r.svd(true, true);
    let ur = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    DenseSvd {
        sigmas: svd.singular_values.iter().copied().collect(),
        u: q * ur,
        v: vt.transpose(),
    }
}

/// Randomized subspace iteration (see module docs).
pub fn randomized_svd(s: &ScoreMatrix, opts: &SvdOptions) -> Result<Triplets> {
    let (m, t) = (s.nrows(), s.ncols());
    let k = opts.k;
    let l = (k + opts.oversample).min(m.min(t));
    if k == 0 || k > l {
        return Err(AriaError::InvalidInput(format!("cannot extract {k} triplets from a {m}x{t} matrix")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega: Vec<f64> = (0..t * l).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut q = orthonormalize(&mul_right(s, &omega, l), m, l);

    let mut iterations = 0;
    loop {
        // Rayleigh–Ritz on span(Q): Z = AᵀQ = Vz Σ Uzᵀ.
        let z = mul_transpose_left(s, &q, l);
        let svd = DMatrix::from_row_slice(t, l, &z).svd(true, true);
        let sigmas: Vec<f64> = svd.singular_values.iter().copied().collect();
        let vz = svd.u.expect("u requested");
        let uz = svd.v_t.expect("v requested").transpose();

        // U = Q·Uz and A·Vz; the latter also seeds the next power step.
        let vz_rows = row_major(&vz);
        let av = mul_right(s, &vz_rows, l);
        let u = gemm_rows(&q, m, l, &row_major(&uz), l);
        iterations += 1;

        let sigma1 = sigmas[0];
        let residual = if sigma1 == 0.0 {
            0.0
        } else {
            (0..k)
                .map(|i| {
                    let r2: f64 = (0..m)
                        .map(|r| {
                            let d = av[r * l + i] - sigmas[i] * u[r * l + i];
                            d * d
                        })
                        .sum();
                    r2.sqrt() / sigma1
                })
                .fold(0.0, f64::max)
        };

        if iterations >= opts.min_iters && residual <= opts.tol {
            log::debug!("randomized svd converged after {iterations} iterations (residual {residual:.3e})");
            return Ok(Triplets {
                sigmas: sigmas[..k].to_vec(),
                u: DMatrix::from_fn(m, k, |r, c| u[r * l + c]),
                v: vz.columns(0, k).into_owned(),
                method: SvdMethod::Randomized,
                iterations,
                residual,
                full_spectrum: None,
            });
        }
        if iterations >= opts.max_iters {
            return Err(AriaError::NonConvergence {
                iterations,
                residual,
                tolerance: opts.tol,
            });
        }
        q = orthonormalize(&av, m, l);
    }
}

/// Top-`k` triplets from the symmetric eigendecomposition of a row-major
/// `G = AᵀA`, with `U = A V Σ⁻¹` formed in one pass over `A`.
///
/// Singular values carry an absolute error of order `ε·σ₁²/σᵢ`, so the
/// leading part of the spectrum is accurate to near machine precision.
pub fn gram_eigen_svd(s: &ScoreMatrix, gram: &[f64], k: usize) -> Result<Triplets> {
    let (m, t) = (s.nrows(), s.ncols());
    if k == 0 || k > m.min(t) {
        return Err(AriaError::InvalidInput(format!("cannot extract {k} triplets from a {m}x{t} matrix")));
    }
    if gram.len() != t * t {
        return Err(AriaError::DimensionMismatch(format!("Gram matrix has {} entries, expected {}", gram.len(), t * t)));
    }
    let g = DMatrix::from_row_slice(t, t, gram);
    let eig = nalgebra::SymmetricEigen::new((&g + g.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigmas: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let vk: Vec<f64> = (0..t).flat_map(|r| order[..k].iter().map(move |&c| (r, c))).map(|(r, c)| eig.eigenvectors[(r, c)]).collect();
    let av = mul_right(s, &vk, k);
    let u = DMatrix::from_fn(m, k, |r, c| if sigmas[c] > 0.0 { av[r * k + c] / sigmas[c] } else { 0.0 });
    Ok(Triplets {
        sigmas,
        u,
        v: DMatrix::from_fn(t, k, |r, c| vk[r * k + c]),
        method: SvdMethod::Gram,
        iterations: 0,
        residual: 0.0,
        full_spectrum: None,
    })
}

/// Randomized subspace iteration with power steps on a cached `G = AᵀA`.
pub fn randomized_svd_gram(s: &ScoreMatrix, gram: &[f64], opts: &SvdOptions) -> Result<Triplets> {
    let (m, t) = (s.nrows(), s.ncols());
    let k = opts.k;
    let l = (k + opts.oversample).min(m.min(t));
    if k == 0 || k > l {
        return Err(AriaError::InvalidInput(format!("cannot extract {k} triplets from a {m}x{t} matrix")));
    }
    if gram.len() != t * t {
        return Err(AriaError::DimensionMismatch(format!("Gram matrix has {} entries, expected {}", gram.len(), t * t)));
    }
    let tol = opts.tol * opts.tol;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega: Vec<f64> = (0..t * l).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut q = orthonormalize(&omega, t, l);

    let mut iterations = 0;
    loop {
        let y = gemm_rows(gram, t, t, &q, l);
        let z = DMatrix::from_row_slice(l, l, &gemm_transpose_left(&q, &y, t, l));
        let eig = nalgebra::SymmetricEigen::new((&z + z.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let w = DMatrix::from_fn(l, l, |r, c| eig.eigenvectors[(r, order[c])]);
        let w_rows = row_major(&w);
        let v = gemm_rows(&q, t, l, &w_rows, l);
        let gv = gemm_rows(&y, t, l, &w_rows, l);
        iterations += 1;

        let lambda1 = lambdas[0].max(0.0);
        let residual = if lambda1 == 0.0 {
            0.0
        } else {
            (0..k)
                .map(|i| {
                    let r2: f64 = (0..t)
                        .map(|r| {
                            let d = gv[r * l + i] - lambdas[i] * v[r * l + i];
                            d * d
                        })
                        .sum();
                    r2.sqrt() / lambda1
                })
                .fold(0.0, f64::max)
        };

        if iterations >= opts.min_iters && residual <= tol {
            log::debug!("gram subspace iteration converged after {iterations} iterations (residual {residual:.3e})");
            let sigmas: Vec<f64> = lambdas[..k].iter().map(|&x| x.max(0.0).sqrt()).collect();
            let vk: Vec<f64> = (0..t).flat_map(|r| v[r * l..r * l + k].to_vec()).collect();
            let av = mul_right(s, &vk, k);
            let u = DMatrix::from_fn(m, k, |r, c| if sigmas[c] > 0.0 { av[r * k + c] / sigmas[c] } else { 0.0 });
            return Ok(Triplets {
                sigmas,
                u,
                v: DMatrix::from_fn(t, k, |r, c| vk[r * k + c]),
                method: SvdMethod::Randomized,
                iterations,
                residual,
                full_spectrum: None,
            });
        }
        if iterations >= opts.max_iters {
            return Err(AriaError::NonConvergence {
                iterations,
                residual,
                tolerance: tol,
            });
        }
        q = orthonormalize(&gv, t, l);
    }
}

/// `Σ_rows (x[cols] − shift)(x[cols] − shift)ᵀ` as a row-major
/// `|cols| × |cols|` matrix, reduced in fixed block order.
pub(crate) fn centered_gram(s: &ScoreMatrix, cols: &[usize], shift: &[f64]) -> Vec<f64> {
    let (t, q) = (s.ncols(), cols.len());
    let contiguous = cols.iter().enumerate().all(|(i, &c)| i == c) && q == t;
    let zero_shift = shift.iter().all(|&x| x == 0.0);
    s.reduce_rows(
        || vec![0.0; q * q],
        |acc, _, block| {
            let rows = block.len() / t;
            let owned;
            let b: &[f64] = if contiguous && zero_shift {
                block
            } else {
                owned = block
                    .chunks_exact(t)
                    .flat_map(|row| cols.iter().zip(shift).map(move |(&c, &m)| row[c] - m))
                    .collect::<Vec<f64>>();
                &owned
            };
            gemm(q, rows, q, b, 1, q, b, q, 1, acc, q, 1, 1.0);
        },
        |acc, part| acc.iter_mut().zip(part).for_each(|(a, b)| *a += b),
    )
}

/// `Aᵀ · B` for row-major `A`, `B` of shape `n × p`; returns `p × p`.
fn gemm_transpose_left(a: &[f64], b: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    gemm(p, n, p, a, 1, p, b, p, 1, &mut out, p, 1, 0.0);
    out
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

/// Orthonormal basis (thin Householder Q) of a row-major `rows × cols` matrix.
fn orthonormalize(y: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let q = DMatrix::from_row_slice(rows, cols, y).qr().q();
    row_major(&q)
}

/// `A · B` for row-major `B` (`T × l`), returned row-major (`M × l`).
pub(crate) fn mul_right(s: &ScoreMatrix, b: &[f64], l: usize) -> Vec<f64> {
    let t = s.ncols();
    let mut out = vec![0.0; s.nrows() * l];
    s.map_rows_into(&mut out, l, |_, block, out| {
        let rows = block.len() / t;
        gemm(rows, t, l, block, t, 1, b, l, 1, out, l, 1, 0.0);
    });
    out
}

/// `Aᵀ · Q` for row-major `Q` (`M × l`), returned row-major (`T × l`).
pub(crate) fn mul_transpose_left(s: &ScoreMatrix, q: &[f64], l: usize) -> Vec<f64> {
    let t = s.ncols();
    s.reduce_rows(
        || vec![0.0; t * l],
        |acc, r0, block| {
            let rows = block.len() / t;
            let qb = &q[r0 * l..(r0 + rows) * l];
            gemm(t, rows, l, block, 1, t, qb, l, 1, acc, l, 1, 1.0);
        },
        |acc, part| acc.iter_mut().zip(part).for_each(|(a, b)| *a += b),
    )
}

/// Row-major `A (n × p) · B (p × q)`.
pub(crate) fn gemm_rows(a: &[f64], n: usize, p: usize, b: &[f64], q: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * q];
    gemm(n, p, q, a, p, 1, b, q, 1, &mut out, q, 1, 0.0);
    out
}

/// `C ← A·B + beta·C` for strided `A (m × k)`, `B (k × n)`, `C (m × n)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(last(m, rsa, k, csa) < a.len() && last(k, rsb, n, csb) < b.len());
    }
    assert!(last(m, rsc, n, csc) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is a unique borrow that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
