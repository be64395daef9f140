//! Dense eigenvalues and spectral radius.
//!
//! The spectrum of a matrix is the union of the spectra of the diagonal blocks
//! belonging to the strongly connected components of its sparsity graph.
//! Computing eigenvalues block by block keeps nilpotent parts (trees, chains)
//! exactly zero instead of letting rounding split a large Jordan block into a
//! ring of spurious eigenvalues of modulus `eps^(1/size)`.
//!
//! Blocks are reduced to upper Hessenberg form with Householder reflections
//! and then iterated with the Francis implicit double-shift QR algorithm,
//! including the exceptional shifts that unstick permutation-like cycle blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Iteration budget per eigenvalue before giving up.
const MAX_ITER_PER_EIGENVALUE: usize = 60;

/// All eigenvalues of `m` as `(re, im)` pairs, in no particular order.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    hessenberg(&mut h);
    hqr(&mut h)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let n = m.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0).collect())
        .collect();
    let mut radius: f64 = 0.0;
    for comp in strongly_connected_components(&adj) {
        if comp.len() == 1 {
            let i = comp[0];
            radius = radius.max(m[(i, i)].abs());
            continue;
        }
        let block = DMatrix::from_fn(comp.len(), comp.len(), |a, b| m[(comp[a], comp[b])]);
        for (re, im) in eigenvalues(&block)? {
            radius = radius.max(re.hypot(im));
        }
    }
    Ok(radius)
}

/// Tarjan's algorithm on `adj` (edge `i -> j` for each `j` in `adj[i]`).
/// Iterative, so chains of any length are fine.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;
    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (node, position in its adjacency list)
        let mut work = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = work.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    let mut ort = vec![0.0; n];
    let high = n - 1;
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let g = if ort[m] > 0.0 { -hh.sqrt() } else { hh.sqrt() };
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let f = (m..=high).rev().map(|i| ort[i] * h[i][j]).sum::<f64>() / hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut() {
            let f = (m..=high).rev().map(|j| ort[j] * row[j]).sum::<f64>() / hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        h[m][m - 1] = scale * g;
        for row in h.iter_mut().skip(m + 1) {
            row[m - 1] = 0.0;
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix (destroys `h`).
fn hqr(h: &mut [Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let nn = h.len();
    let mut eig = vec![(0.0, 0.0); nn];
    let eps = f64::EPSILON;
    let mut norm = 0.0;
    for (i, row) in h.iter().enumerate() {
        for v in &row[i.saturating_sub(1)..] {
            norm += v.abs();
        }
    }
    if norm == 0.0 {
        return Ok(eig);
    }

    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let mut total_iter = 0usize;
    let budget = MAX_ITER_PER_EIGENVALUE * nn.max(1);
    while n >= 0 {
        let nu = n as usize;
        // find a negligible subdiagonal entry
        let mut l = nu;
        while l > 0 {
            let mut s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            eig[nu] = (h[nu][nu] + exshift, 0.0);
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            let w = h[nu][nu - 1] * h[nu - 1][nu];
            let p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            let q = p * p + w;
            let z = q.abs().sqrt();
            let x = h[nu][nu] + exshift;
            if q >= 0.0 {
                let z = if p >= 0.0 { p + z } else { p - z };
                let hi = x + z;
                let lo = if z != 0.0 { x - w / z } else { hi };
                eig[nu - 1] = (hi, 0.0);
                eig[nu] = (lo, 0.0);
            } else {
                eig[nu - 1] = (x + p, z);
                eig[nu] = (x + p, -z);
            }
            n -= 2;
            iter = 0;
        } else {
            let mut x = h[nu][nu];
            let mut y = h[nu - 1][nu - 1];
            let mut w = h[nu][nu - 1] * h[nu - 1][nu];

            if iter == 10 {
                // Wilkinson's ad hoc shift
                exshift += x;
                for i in 0..=nu {
                    h[i][i] -= x;
                }
                let s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                let mut s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[i][i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total_iter += 1;
            if total_iter > budget {
                return Err(Error::EigenNonConvergence {
                    iterations: total_iter,
                });
            }

            // look for two consecutive small subdiagonal elements
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = h[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - rr - ss;
                r = h[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h[m][m - 1].abs() * (q.abs() + r.abs());
                let rhs = eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // double QR step on rows l..=n, columns m..=n
            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                let mut xk = 0.0;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= xk;
                    q /= xk;
                    r /= xk;
                }
                let mut s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * xk;
                    } else if l != m {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    let xs = p / s;
                    let ys = q / s;
                    let zs = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            pp += r * h[k + 2][j];
                            h[k + 2][j] -= pp * zs;
                        }
                        h[k][j] -= pp * xs;
                        h[k + 1][j] -= pp * ys;
                    }
                    for i in l..=nu.min(k + 3) {
                        let mut pp = xs * h[i][k] + ys * h[i][k + 1];
                        if notlast {
                            pp += zs * h[i][k + 2];
                            h[i][k + 2] -= pp * r;
                        }
                        h[i][k] -= pp;
                        h[i][k + 1] -= pp * q;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(eig)
}
