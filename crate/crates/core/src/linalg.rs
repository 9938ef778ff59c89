//! Dense helpers shared by the mapping, retrieval and training code.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

/// Euclidean norm of every row.
pub fn row_norms(m: ArrayView2<f64>) -> Array1<f64> {
    m.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}

/// Divides every row by its norm. Returns the index of the first zero row
/// instead of producing NaNs.
pub fn normalize_rows(m: &mut Array2<f64>) -> Result<(), usize> {
    let norms = row_norms(m.view());
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(i);
    }
    Zip::from(m.rows_mut()).and(&norms).for_each(|mut row, &n| row /= n);
    Ok(())
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ‖WᵀW − I‖_F, the distance of a square matrix from the orthogonal group.
pub fn orthogonality_defect(w: ArrayView2<f64>) -> f64 {
    let mut g = w.t().dot(&w);
    for i in 0..g.nrows() {
        g[[i, i]] -= 1.0;
    }
    frobenius(g.view())
}

/// Thin singular value decomposition `a = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
    /// Number of singular values above the numerical-rank threshold.
    pub rank: usize,
}

/// One-sided (Hestenes) Jacobi SVD for an m×n matrix with m ≥ n.
///
/// Singular values come out sorted in decreasing order. Left singular vectors
/// belonging to numerically zero singular values are completed to an
/// orthonormal set, so `u` always has orthonormal columns.
pub fn svd_jacobi(a: ArrayView2<f64>) -> Svd {
    let (m, n) = a.dim();
    assert!(m >= n, "svd_jacobi expects rows >= cols, got {m}x{n}");
    // Columns of `a` and `v` are stored as rows for contiguous access.
    let mut cols = a.t().to_owned();
    let mut v = Array2::<f64>::eye(n);
    const EPS: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = cols.row(p);
                    let cq = cols.row(q);
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = row_norms(cols.view());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&i| norms[i]);
    let tol = smax * (m.max(n) as f64) * f64::EPSILON;

    let mut u_rows = Array2::<f64>::zeros((n, m));
    let mut v_rows = Array2::<f64>::zeros((n, n));
    let mut s = Array1::<f64>::zeros(n);
    let mut rank = 0;
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        v_rows.row_mut(k).assign(&v.row(j));
        if norms[j] > tol && smax > 0.0 {
            u_rows.row_mut(k).assign(&(&cols.row(j) / norms[j]));
            rank += 1;
        }
    }
    complete_orthonormal(&mut u_rows, rank);

    Svd {
        u: u_rows.reversed_axes(),
        s,
        v: v_rows.reversed_axes(),
        rank,
    }
}

fn rotate_rows(m: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.ncols();
    for k in 0..cols {
        let x = m[[p, k]];
        let y = m[[q, k]];
        m[[p, k]] = c * x - s * y;
        m[[q, k]] = s * x + c * y;
    }
}

/// Rows `0..filled` are orthonormal; fills the remaining rows with unit
/// vectors orthogonal to all earlier ones (modified Gram-Schmidt on the
/// standard basis, re-orthogonalized twice).
fn complete_orthonormal(rows: &mut Array2<f64>, filled: usize) {
    let (n, m) = rows.dim();
    let mut next = filled;
    let mut basis = 0;
    while next < n && basis < m {
        let mut cand = Array1::<f64>::zeros(m);
        cand[basis] = 1.0;
        basis += 1;
        for _ in 0..2 {
            for k in 0..next {
                let r = rows.row(k);
                let proj = r.dot(&cand);
                cand.scaled_add(-proj, &r);
            }
        }
        let norm = cand.dot(&cand).sqrt();
        if norm > 1e-8 {
            rows.row_mut(next).assign(&(cand / norm));
            next += 1;
        }
    }
}

/// Draws a Haar-distributed orthogonal matrix: Gram-Schmidt QR of a
/// standard Gaussian matrix, with R's diagonal made positive.
pub fn haar_orthogonal<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let g = Array2::<f64>::from_shape_simple_fn((d, d), || StandardNormal.sample(rng));
    // Rows of `q` are the orthonormalized columns of `g`.
    let mut q = g.t().to_owned();
    for j in 0..d {
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.row(k).dot(&q.row(j));
                let qk = q.row(k).to_owned();
                q.row_mut(j).scaled_add(-proj, &qk);
            }
        }
        let norm = q.row(j).dot(&q.row(j)).sqrt();
        q.row_mut(j).mapv_inplace(|v| v / norm);
    }
    q.reversed_axes()
}

/// Determinant by partial-pivot LU. Only used for small matrices.
pub fn determinant(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.to_owned();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs()))
            .unwrap();
        if a[[p, c]] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap([p, k], [c, k]);
            }
            det = -det;
        }
        det *= a[[c, c]];
        for r in (c + 1)..n {
            let f = a[[r, c]] / a[[c, c]];
            for k in c..n {
                a[[r, k]] -= f * a[[c, k]];
            }
        }
    }
    det
}

/// Formats `x` with `digits` significant digits, in the style of C's `%g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if exp < -5 || exp >= digits as i32 {
        let (mant, e) = sci.split_once('e').unwrap();
        return format!("{}e{}", trim_zeros(mant), e);
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
