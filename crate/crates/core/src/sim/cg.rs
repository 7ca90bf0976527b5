//! Preconditioned conjugate gradient on a CSR matrix.
//!
//! Dot products are accumulated over a fixed number of contiguous partitions
//! and summed in partition order, so the result is bitwise reproducible for a
//! given partition count whether or not the partitions run concurrently.

/// Compressed sparse row matrix (symmetric positive definite in practice).
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col.len());
        }
        Self {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&e| self.col[e] == r)
                    .map_or(0.0, |e| self.val[e])
            })
            .collect()
    }

    #[inline]
    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col[lo..hi]
            .iter()
            .zip(&self.val[lo..hi])
            .map(|(&c, &v)| v * x[c])
            .sum()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row_dot(r, x);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    /// Converged when `|r| <= rel_tol * |b|`.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the system size.
    pub max_iter_factor: usize,
    /// Number of partitions for reductions and products (>= 1).
    pub partitions: usize,
    pub preconditioner: Preconditioner,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preconditioner {
    Jacobi,
    /// falls back to Jacobi when a pivot breaks down
    #[default]
    IncompleteCholesky,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter_factor: 10,
            partitions: 1,
            preconditioner: Preconditioner::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// Final `|b - Ax|` (true residual, recomputed at exit).
    pub residual: f64,
    pub rhs_norm: f64,
    pub converged: bool,
}

fn chunk_bounds(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut lo = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push((lo, lo + len));
        lo += len;
    }
    out
}

struct Partitioned {
    bounds: Vec<(usize, usize)>,
}

fn split_mut<'a>(mut v: &'a mut [f64], bounds: &[(usize, usize)]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(bounds.len());
    for &(lo, hi) in bounds {
        let (head, tail) = v.split_at_mut(hi - lo);
        out.push(head);
        v = tail;
    }
    out
}

fn dot_serial(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x += αp; r −= α·Ap`, returning `r·r`.
fn update_chunk(x: &mut [f64], r: &mut [f64], p: &[f64], ap: &[f64], alpha: f64) -> f64 {
    let mut rr = 0.0;
    for (((xi, ri), &pi), &api) in x.iter_mut().zip(r.iter_mut()).zip(p).zip(ap) {
        *xi += alpha * pi;
        *ri -= alpha * api;
        rr += *ri * *ri;
    }
    rr
}

/// Zero-fill incomplete Cholesky factor. Built from diagonal blocks given by
/// `bounds`; couplings between blocks are dropped.
struct IncompleteCholesky {
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    /// row entries sorted by column; the diagonal is last
    val: Vec<f64>,
}

impl IncompleteCholesky {
    /// `None` when a pivot is not positive.
    fn new(a: &CsrMatrix, bounds: &[(usize, usize)]) -> Option<Self> {
        let mut row_ptr = Vec::with_capacity(a.n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for &(lo, hi) in bounds {
            for i in lo..hi {
                let start = col.len();
                let mut diag = 0.0;
                for e in a.row_ptr[i]..a.row_ptr[i + 1] {
                    let c = a.col[e];
                    if c >= lo && c < i {
                        col.push(c);
                        val.push(a.val[e]);
                    } else if c == i {
                        diag = a.val[e];
                    }
                }
                for k in start..col.len() {
                    let c = col[k];
                    // row c: entries row_ptr[c]..row_ptr[c+1]-1, diagonal last
                    let (cs, ce) = (row_ptr[c], row_ptr[c + 1] - 1);
                    let (mut a_idx, mut b_idx) = (start, cs);
                    let mut acc = 0.0;
                    while a_idx < k && b_idx < ce {
                        match col[a_idx].cmp(&col[b_idx]) {
                            std::cmp::Ordering::Less => a_idx += 1,
                            std::cmp::Ordering::Greater => b_idx += 1,
                            std::cmp::Ordering::Equal => {
                                acc += val[a_idx] * val[b_idx];
                                a_idx += 1;
                                b_idx += 1;
                            }
                        }
                    }
                    val[k] = (val[k] - acc) / val[ce];
                }
                let sq: f64 = val[start..].iter().map(|v| v * v).sum();
                let pivot = diag - sq;
                if !(pivot > 0.0) || !pivot.is_finite() {
                    return None;
                }
                col.push(i);
                val.push(pivot.sqrt());
                row_ptr.push(col.len());
            }
        }
        Some(Self { row_ptr, col, val })
    }

    /// `z = (L Lᵀ)⁻¹ r` on rows `lo..lo + z.len()`.
    fn apply_block(&self, lo: usize, r: &[f64], z: &mut [f64]) {
        let n = z.len();
        for i in 0..n {
            let g = lo + i;
            let (s, e) = (self.row_ptr[g], self.row_ptr[g + 1] - 1);
            let mut acc = r[i];
            for k in s..e {
                acc -= self.val[k] * z[self.col[k] - lo];
            }
            z[i] = acc / self.val[e];
        }
        for i in (0..n).rev() {
            let g = lo + i;
            let (s, e) = (self.row_ptr[g], self.row_ptr[g + 1] - 1);
            z[i] /= self.val[e];
            let zi = z[i];
            for k in s..e {
                z[self.col[k] - lo] -= self.val[k] * zi;
            }
        }
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Ic(IncompleteCholesky),
}

impl Precond {
    fn build(a: &CsrMatrix, bounds: &[(usize, usize)], kind: Preconditioner) -> Self {
        if kind == Preconditioner::IncompleteCholesky {
            if let Some(f) = IncompleteCholesky::new(a, bounds) {
                return Precond::Ic(f);
            }
        }
        Precond::Jacobi(
            a.diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        )
    }

    fn apply_chunk(&self, lo: usize, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(&inv[lo..]) {
                    *zi = ri * di;
                }
            }
            Precond::Ic(f) => f.apply_block(lo, r, z),
        }
    }
}

impl Partitioned {
    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.bounds.len() == 1 {
            return dot_serial(a, b);
        }
        let partial = |&(lo, hi): &(usize, usize)| dot_serial(&a[lo..hi], &b[lo..hi]);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let parts: Vec<f64> = self.bounds.par_iter().map(partial).collect();
            parts.iter().sum()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.bounds.iter().map(partial).sum()
        }
    }

    fn matvec(&self, m: &CsrMatrix, x: &[f64], y: &mut [f64]) {
        #[cfg(feature = "parallel")]
        if self.bounds.len() > 1 {
            use rayon::prelude::*;
            split_mut(y, &self.bounds)
                .into_par_iter()
                .zip(self.bounds.par_iter())
                .for_each(|(piece, &(lo, _))| {
                    for (off, v) in piece.iter_mut().enumerate() {
                        *v = m.row_dot(lo + off, x);
                    }
                });
            return;
        }
        m.mul_vec(x, y);
    }

    fn update(&self, x: &mut [f64], r: &mut [f64], p: &[f64], ap: &[f64], alpha: f64) -> f64 {
        if self.bounds.len() == 1 {
            return update_chunk(x, r, p, ap, alpha);
        }
        let xs = split_mut(x, &self.bounds);
        let rs = split_mut(r, &self.bounds);
        #[allow(clippy::type_complexity)]
        let work = |((xc, rc), &(lo, hi)): ((&mut [f64], &mut [f64]), &(usize, usize))| {
            update_chunk(xc, rc, &p[lo..hi], &ap[lo..hi], alpha)
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<f64> = {
            use rayon::prelude::*;
            xs.into_par_iter().zip(rs).zip(self.bounds.par_iter()).map(work).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<f64> = xs.into_iter().zip(rs).zip(self.bounds.iter()).map(work).collect();
        parts.iter().sum()
    }

    fn precondition(&self, m: &Precond, r: &[f64], z: &mut [f64]) {
        if self.bounds.len() == 1 || matches!(m, Precond::Ic(_)) {
            m.apply_chunk(0, r, z);
            return;
        }
        let zs = split_mut(z, &self.bounds);
        let work = |(zc, &(lo, hi)): (&mut [f64], &(usize, usize))| m.apply_chunk(lo, &r[lo..hi], zc);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            zs.into_par_iter().zip(self.bounds.par_iter()).for_each(work);
        }
        #[cfg(not(feature = "parallel"))]
        zs.into_iter().zip(self.bounds.iter()).for_each(work);
    }
}

/// Solves `A x = b` starting from the given `x`. Returns `Err(stats)` on
/// non-convergence so the caller can report the residual.
pub fn solve(a: &CsrMatrix, b: &[f64], x: &mut [f64], settings: &CgSettings) -> Result<CgStats, CgStats> {
    let n = a.n;
    let part = Partitioned {
        bounds: chunk_bounds(n, settings.partitions),
    };
    let rhs_norm = part.dot(b, b).sqrt();
    let tol = settings.rel_tol * rhs_norm;
    let max_iter = settings.max_iter_factor.max(1) * n.max(1);

    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut true_res;
    let mut precond: Option<Precond> = None;

    // The recurrence residual drifts from b - Ax; restart from the true
    // residual a few times before giving up.
    let mut restarts = 0;
    loop {
        part.matvec(a, x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        true_res = part.dot(&r, &r).sqrt();
        if true_res <= tol || !true_res.is_finite() || iterations >= max_iter || restarts == 3 {
            break;
        }
        restarts += 1;
        let m = precond.get_or_insert_with(|| Precond::build(a, &[(0, n)], settings.preconditioner));
        part.precondition(m, &r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = part.dot(&r, &z);
        let mut res = true_res;
        // aim slightly below tol so the true residual lands under it
        while res > 0.5 * tol && iterations < max_iter {
            part.matvec(a, &p, &mut ap);
            let pap = part.dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            let rr = part.update(x, &mut r, &p, &ap, alpha);
            part.precondition(m, &r, &mut z);
            let rz_new = part.dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, &zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
            res = rr.sqrt();
            iterations += 1;
        }
    }

    let stats = CgStats {
        iterations,
        residual: true_res,
        rhs_norm,
        converged: true_res <= tol && true_res.is_finite(),
    };
    if stats.converged {
        Ok(stats)
    } else {
        Err(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, 2.0 + shift)];
                if i > 0 {
                    row.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    row.push((i + 1, -1.0));
                }
                row
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn solves_spd_system_to_tolerance() {
        let a = laplacian_1d(50, 0.01);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; 50];
        let stats = solve(&a, &b, &mut x, &CgSettings::default()).unwrap();
        assert!(stats.residual <= 1e-10 * stats.rhs_norm);
        let mut ax = vec![0.0; 50];
        a.mul_vec(&x, &mut ax);
        for (l, r) in ax.iter().zip(&b) {
            assert!((l - r).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rhs_is_immediate() {
        let a = laplacian_1d(10, 1.0);
        let mut x = vec![0.0; 10];
        let stats = solve(&a, &[0.0; 10], &mut x, &CgSettings::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partitioned_results_are_reproducible() {
        let a = laplacian_1d(200, 0.001);
        let b: Vec<f64> = (0..200).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let settings = CgSettings {
            partitions: 4,
            ..CgSettings::default()
        };
        let mut x1 = vec![0.0; 200];
        let mut x2 = vec![0.0; 200];
        solve(&a, &b, &mut x1, &settings).unwrap();
        solve(&a, &b, &mut x2, &settings).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let a = laplacian_1d(100, 0.0);
        let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        let mut x = vec![0.0; 100];
        let settings = CgSettings {
            rel_tol: 1e-300,
            max_iter_factor: 1,
            partitions: 1,
            preconditioner: Preconditioner::Jacobi,
        };
        let err = solve(&a, &b, &mut x, &settings).unwrap_err();
        assert!(!err.converged);
        assert!(err.residual > 0.0);
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 4.0)]]);
        assert_eq!(m.diagonal(), vec![3.0, 4.0]);
    }
}
