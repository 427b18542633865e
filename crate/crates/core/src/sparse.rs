//! Sparse symmetric positive definite solver for the normal equations.
//!
//! Up-looking sparse Cholesky on CSC matrices with a reverse
//! Cuthill-McKee fill-reducing ordering. Pose graphs over road corridors
//! are near-banded after RCM, which keeps fill-in small without a full
//! minimum-degree implementation. A dense reference path is used by
//! tests and permitted for small problems.

use crate::{Error, Result};

/// Symmetric sparse matrix in CSC form, storing the lower triangle only
/// (column-major, row indices sorted within each column).
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Assemble from triplets. Only entries with `row >= col` are kept;
    /// duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .iter()
            .filter(|&&(r, c, _)| r >= c)
            .map(|&(r, c, v)| (c, r, v))
            .collect();
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_counts = vec![0usize; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(c, r, v) in &entries {
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_counts[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for c in 0..n {
            col_counts[c + 1] += col_counts[c];
        }
        SparseSym {
            n,
            col_ptr: col_counts,
            row_idx,
            values,
        }
    }

    /// Entry count of the stored lower triangle.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }
}

/// Sparse Cholesky factorization L*L^T = P*A*P^T of a symmetric positive
/// definite matrix, with P a fill-reducing permutation.
pub struct SparseCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
}

impl SparseCholesky {
    /// Factor `a` (lower triangle CSC). Fails if the matrix is not
    /// positive definite.
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0usize; a.n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let pa = permute_sym(a, &iperm);
        let (l_colptr, l_rowidx, l_values) = cholesky_up_looking(&pa)?;
        Ok(SparseCholesky {
            n: a.n,
            perm,
            l_colptr,
            l_rowidx,
            l_values,
        })
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        // y = P b
        let mut y: Vec<f64> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        // L z = y (forward)
        for j in 0..self.n {
            let start = self.l_colptr[j];
            let end = self.l_colptr[j + 1];
            let d = self.l_values[start]; // diagonal first in each column
            let zj = y[j] / d;
            y[j] = zj;
            for k in start + 1..end {
                y[self.l_rowidx[k]] -= self.l_values[k] * zj;
            }
        }
        // L^T w = z (backward)
        for j in (0..self.n).rev() {
            let start = self.l_colptr[j];
            let end = self.l_colptr[j + 1];
            let mut s = y[j];
            for k in start + 1..end {
                s -= self.l_values[k] * y[self.l_rowidx[k]];
            }
            y[j] = s / self.l_values[start];
        }
        // x = P^T w
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

/// Reverse Cuthill-McKee ordering on the adjacency pattern of `a`.
/// Returns perm with perm[new] = old.
fn reverse_cuthill_mckee(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    // Build symmetric adjacency (both triangles) from the lower triangle.
    let mut adj = vec![Vec::new(); n];
    for c in 0..n {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            let r = a.row_idx[k];
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        // Start each component from an unvisited vertex of minimum degree.
        let start = match (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| adj[v].len())
        {
            Some(v) => v,
            None => break,
        };
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_unstable_by_key(|&u| adj[u].len());
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Apply permutation to a symmetric matrix: B = P A P^T, keeping the
/// lower triangle. iperm[old] = new.
fn permute_sym(a: &SparseSym, iperm: &[usize]) -> SparseSym {
    let mut triplets = Vec::with_capacity(a.nnz());
    for c in 0..a.n {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            let r = a.row_idx[k];
            let (mut nr, mut nc) = (iperm[r], iperm[c]);
            if nr < nc {
                std::mem::swap(&mut nr, &mut nc);
            }
            triplets.push((nr, nc, a.values[k]));
        }
    }
    SparseSym::from_triplets(a.n, &triplets)
}

/// Up-looking sparse Cholesky (CSC lower triangle in, CSC L out, with
/// the diagonal entry stored first in every column of L).
fn cholesky_up_looking(a: &SparseSym) -> Result<(Vec<usize>, Vec<usize>, Vec<f64>)> {
    let n = a.n;

    // Row-wise access to the lower triangle of A: for row i, the entries
    // A[i, j] with j <= i. Build from the CSC lower triangle.
    let mut row_ptr = vec![0usize; n + 1];
    for c in 0..n {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            row_ptr[a.row_idx[k] + 1] += 1;
        }
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let mut row_col = vec![0usize; a.nnz()];
    let mut row_val = vec![0f64; a.nnz()];
    let mut next = row_ptr.clone();
    for c in 0..n {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            let r = a.row_idx[k];
            row_col[next[r]] = c;
            row_val[next[r]] = a.values[k];
            next[r] += 1;
        }
    }

    // L is built row by row: row i of L is found by solving
    // L[0..i, 0..i] * x = A[i, 0..i]^T (sparse triangular solve), then
    // L[i,i] = sqrt(A[i,i] - |x|^2). Columns of L are grown inplace.
    let mut l_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n]; // (row, value), rows ascending
    let mut diag = vec![0f64; n];
    // Dense scatter workspace for the current row.
    let mut x = vec![0f64; n];
    let mut pattern: Vec<usize> = Vec::new();
    let mut in_pattern = vec![false; n];

    for i in 0..n {
        // Scatter A[i, 0..=i].
        let mut aii = 0.0;
        pattern.clear();
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = row_col[k];
            if j == i {
                aii = row_val[k];
            } else {
                x[j] = row_val[k];
                if !in_pattern[j] {
                    in_pattern[j] = true;
                    pattern.push(j);
                }
            }
        }
        pattern.sort_unstable();

        // Sparse forward solve: process columns in ascending order. The
        // reach grows as the solve proceeds, so iterate by index.
        let mut p = 0;
        while p < pattern.len() {
            let j = pattern[p];
            p += 1;
            let xj = x[j] / diag[j];
            x[j] = xj;
            // All rows stored in column j so far are < i and > j.
            for &(r, v) in &l_cols[j] {
                if !in_pattern[r] {
                    in_pattern[r] = true;
                    // Insert keeping `pattern[p..]` sorted.
                    let pos = pattern[p..].partition_point(|&q| q < r) + p;
                    pattern.insert(pos, r);
                }
                x[r] -= v * xj;
            }
        }

        // Diagonal.
        let mut sq = 0.0;
        for &j in &pattern {
            sq += x[j] * x[j];
        }
        let d2 = aii - sq;
        if d2 <= 0.0 || !d2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "matrix not positive definite at pivot {i} (d^2 = {d2})"
            )));
        }
        let d = d2.sqrt();
        diag[i] = d;

        // Store row i into the columns of L and clear the workspace.
        for &j in &pattern {
            l_cols[j].push((i, x[j]));
            x[j] = 0.0;
            in_pattern[j] = false;
        }
        pattern.clear();
    }

    // Pack CSC with the diagonal first in each column.
    let mut l_colptr = Vec::with_capacity(n + 1);
    let mut l_rowidx = Vec::new();
    let mut l_values = Vec::new();
    l_colptr.push(0);
    for j in 0..n {
        l_rowidx.push(j);
        l_values.push(diag[j]);
        for &(r, v) in &l_cols[j] {
            l_rowidx.push(r);
            l_values.push(v);
        }
        l_colptr.push(l_rowidx.len());
    }
    Ok((l_colptr, l_rowidx, l_values))
}

/// Dense Cholesky solve, used as a reference path for small systems.
pub fn dense_solve_spd(a_lower: &SparseSym, b: &[f64]) -> Result<Vec<f64>> {
    let n = a_lower.n;
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        for k in a_lower.col_ptr[c]..a_lower.col_ptr[c + 1] {
            let r = a_lower.row_idx[k];
            m[(r, c)] = a_lower.values[k];
            m[(c, r)] = a_lower.values[k];
        }
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("matrix not positive definite".into()))?;
    let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
    Ok(x.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, density: f64, rng: &mut StdRng) -> SparseSym {
        // A = B^T B + n I with sparse B.
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                if rng.gen::<f64>() < density {
                    dense[i][j] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut triplets = Vec::new();
        for r in 0..n {
            for c in 0..=r {
                let mut v = 0.0;
                for k in 0..n {
                    v += dense[k][r] * dense[k][c];
                }
                if r == c {
                    v += n as f64;
                }
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        SparseSym::from_triplets(n, &triplets)
    }

    #[test]
    fn from_triplets_sums_duplicates() {
        let a = SparseSym::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 0.5), (1, 1, 4.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.values, vec![3.0, 0.5, 4.0]);
        assert_eq!(a.row_idx, vec![0, 1, 1]);
        assert_eq!(a.col_ptr, vec![0, 2, 3]);
    }

    #[test]
    fn sparse_matches_dense_on_random_spd() {
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.gen_range(2..40);
            let a = random_spd(n, 0.3, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let chol = SparseCholesky::factor(&a).unwrap();
            let x = chol.solve(&b);
            let xd = dense_solve_spd(&a, &b).unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - xd[i]).abs() < 1e-8 * (1.0 + xd[i].abs()),
                    "trial {trial}, n={n}, x[{i}]: {} vs {}",
                    x[i],
                    xd[i]
                );
            }
        }
    }

    #[test]
    fn solves_banded_system_exactly() {
        // Tridiagonal SPD: 2 on diagonal, -1 off.
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
            }
        }
        let a = SparseSym::from_triplets(n, &t);
        let b = vec![1.0; n];
        let chol = SparseCholesky::factor(&a).unwrap();
        let x = chol.solve(&b);
        // Verify residual A x - b.
        for i in 0..n {
            let mut ax = 2.0 * x[i];
            if i > 0 {
                ax -= x[i - 1];
            }
            if i + 1 < n {
                ax -= x[i + 1];
            }
            assert!((ax - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = SparseSym::from_triplets(2, &[(0, 0, 1.0), (1, 0, 3.0), (1, 1, 1.0)]);
        assert!(SparseCholesky::factor(&a).is_err());
    }
}
