//! Sparse storage and direct solution of the block systems produced by the
//! time stepper.
//!
//! Assembly accumulates coordinate triplets and converts them to CSR with
//! duplicate summation in a fixed order, so repeated runs are bit-identical.
//! Linear systems are solved by a sparse LU with partial pivoting over a
//! fill-reducing (minimum-degree) column ordering; see `lu` and `ordering`.

mod lu;
mod ordering;

pub use lu::{ReusableSolver, SparseLu};
pub use ordering::min_degree_order;

use crate::error::{Error, Result};
use std::io::Write as _;
use std::path::Path;

/// Compressed-sparse-row matrix. Column indices are sorted within each row
/// and contain no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Check the CSR structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.nrows + 1 || self.row_ptr[0] != 0 {
            return Err(Error::InvalidArgument("bad row_ptr".into()));
        }
        for i in 0..self.nrows {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(Error::InvalidArgument("row_ptr not monotone".into()));
            }
            let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidArgument(format!(
                        "row {i}: columns not strictly increasing"
                    )));
                }
            }
            if row.iter().any(|&j| j >= self.ncols) {
                return Err(Error::InvalidArgument(format!("row {i}: column out of range")));
            }
        }
        if self.vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(())
    }

    /// y = A x with per-row left-to-right accumulation.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::InvalidArgument(format!(
                "spmv dimension mismatch: {} columns, vector length {}",
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// Column-compressed copy (pattern and values).
    pub fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let nnz = self.nnz();
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            col_ptr[j + 1] += 1;
        }
        for j in 0..self.ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut row_idx = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut next = col_ptr.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let dst = next[j];
                row_idx[dst] = i;
                vals[dst] = self.vals[k];
                next[j] += 1;
            }
        }
        (col_ptr, row_idx, vals)
    }

    /// Value at (i, j), zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.vals[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    /// Symmetric undirected adjacency pattern of A + A^T, excluding diagonal.
    pub fn symmetric_pattern(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.nrows.max(self.ncols);
        let mut deg = vec![0usize; n];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if i != j {
                    deg[i] += 1;
                    deg[j] += 1;
                }
            }
        }
        let mut ptr = vec![0usize; n + 1];
        for i in 0..n {
            ptr[i + 1] = ptr[i] + deg[i];
        }
        let mut adj = vec![0usize; ptr[n]];
        let mut next = ptr.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if i != j {
                    adj[next[i]] = j;
                    next[i] += 1;
                    adj[next[j]] = i;
                    next[j] += 1;
                }
            }
        }
        // sort and dedupe each neighbor list
        let mut out_ptr = vec![0usize; n + 1];
        let mut out = Vec::with_capacity(adj.len());
        for i in 0..n {
            let mut nb: Vec<usize> = adj[ptr[i]..ptr[i + 1]].to_vec();
            nb.sort_unstable();
            nb.dedup();
            out.extend_from_slice(&nb);
            out_ptr[i + 1] = out.len();
        }
        (out_ptr, out)
    }

    /// Dump in MatrixMarket coordinate format (debugging aid).
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real general").map_err(io_err)?;
        writeln!(f, "{} {} {}", self.nrows, self.ncols, self.nnz()).map_err(io_err)?;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(f, "{} {} {:.17e}", i + 1, self.col_idx[k] + 1, self.vals[k])
                    .map_err(io_err)?;
            }
        }
        Ok(())
    }
}

/// Coordinate-format accumulator; duplicates sum on conversion.
#[derive(Debug, Clone, Default)]
pub struct CooBuilder {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Drop all triplets but keep the allocations.
    pub fn clear(&mut self) {
        self.rows.clear();
        self.cols.clear();
        self.vals.clear();
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let (csr, _) = self.to_csr_with_slots();
        csr
    }

    /// CSR conversion that also reports, for every pushed triplet, the index
    /// of the CSR value it was summed into. Assemblies with an unchanged
    /// sparsity pattern can then refill values without re-sorting.
    pub fn to_csr_with_slots(&self) -> (CsrMatrix, Vec<usize>) {
        let nnz_raw = self.vals.len();
        let mut count = vec![0usize; self.nrows + 1];
        for &i in &self.rows {
            count[i + 1] += 1;
        }
        for i in 0..self.nrows {
            count[i + 1] += count[i];
        }
        // bucket triplet ids by row, preserving push order within a row
        let mut by_row = vec![0usize; nnz_raw];
        let mut next = count.clone();
        for t in 0..nnz_raw {
            by_row[next[self.rows[t]]] = t;
            next[self.rows[t]] += 1;
        }

        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut slots = vec![0usize; nnz_raw];
        let mut scratch: Vec<(usize, usize)> = Vec::new();
        for i in 0..self.nrows {
            scratch.clear();
            for &t in &by_row[count[i]..count[i + 1]] {
                scratch.push((self.cols[t], t));
            }
            scratch.sort_unstable();
            let mut last_col = usize::MAX;
            for &(j, t) in scratch.iter() {
                if j != last_col {
                    col_idx.push(j);
                    vals.push(self.vals[t]);
                    last_col = j;
                } else {
                    *vals.last_mut().unwrap() += self.vals[t];
                }
                slots[t] = vals.len() - 1;
            }
            row_ptr[i + 1] = vals.len();
        }
        (
            CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, vals },
            slots,
        )
    }
}

/// Block layout over a fixed partition of the unknowns, accumulating into one
/// monolithic coordinate builder plus right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// Start offset of each block; last entry is the total dimension.
    pub offsets: Vec<usize>,
    pub coo: CooBuilder,
    pub rhs: Vec<f64>,
}

impl BlockSystem {
    pub fn new(block_dims: &[usize]) -> Self {
        let mut offsets = vec![0usize];
        for &d in block_dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let dim = *offsets.last().unwrap();
        Self { offsets, coo: CooBuilder::new(dim, dim), rhs: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn add_entry(&mut self, bi: usize, bj: usize, i: usize, j: usize, v: f64) {
        self.coo.push(self.offsets[bi] + i, self.offsets[bj] + j, v);
    }

    /// Add `scale * M` into block (bi, bj).
    pub fn add_scaled_csr(&mut self, bi: usize, bj: usize, m: &CsrMatrix, scale: f64) {
        let ro = self.offsets[bi];
        let co = self.offsets[bj];
        for i in 0..m.nrows {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                self.coo.push(ro + i, co + m.col_idx[k], scale * m.vals[k]);
            }
        }
    }

    /// Add `scale * M^T` into block (bi, bj).
    pub fn add_scaled_csr_transpose(&mut self, bi: usize, bj: usize, m: &CsrMatrix, scale: f64) {
        let ro = self.offsets[bi];
        let co = self.offsets[bj];
        for i in 0..m.nrows {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                self.coo.push(ro + m.col_idx[k], co + i, scale * m.vals[k]);
            }
        }
    }

    pub fn add_rhs(&mut self, bi: usize, i: usize, v: f64) {
        self.rhs[self.offsets[bi] + i] += v;
    }
}

/// How a raw triplet is folded into the constrained system.
#[derive(Debug, Clone, Copy)]
enum TripletAction {
    Write(usize),
    /// Row belongs to a constraint; the entry is dropped.
    Drop,
    /// Column is a fixed dof: move `v * value[col]` to the right-hand side.
    MoveToRhs { row: usize, fixed_idx: usize },
}

/// Constraints applied to a linear system before solving.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSpec {
    /// Dofs with prescribed values (row and column symmetric elimination).
    pub fixed: Vec<usize>,
    /// Rows replaced by static linear relations `sum coeff_k x_k = rhs`.
    pub replaced: Vec<(usize, Vec<(usize, f64)>)>,
}

/// Pattern-frozen constrained system: built once from a canonical triplet
/// stream, then refilled from new values of the same stream each solve.
#[derive(Debug, Clone)]
pub struct ConstrainedPattern {
    pub csr: CsrMatrix,
    actions: Vec<TripletAction>,
    fixed: Vec<usize>,
    fixed_diag_slot: Vec<usize>,
    replaced_rows: Vec<(usize, Vec<(usize, f64)>)>,
    replaced_slots: Vec<Vec<usize>>,
}

impl ConstrainedPattern {
    pub fn build(coo: &CooBuilder, spec: &ConstraintSpec) -> Self {
        let dim = coo.nrows;
        let mut fixed_of = vec![usize::MAX; dim];
        for (k, &d) in spec.fixed.iter().enumerate() {
            fixed_of[d] = k;
        }
        let mut replaced_row = vec![false; dim];
        for (r, _) in &spec.replaced {
            replaced_row[*r] = true;
        }

        let mut actions = Vec::with_capacity(coo.len());
        let mut reduced = CooBuilder::new(dim, dim);
        for t in 0..coo.len() {
            let (i, j, v) = (coo.rows[t], coo.cols[t], coo.vals[t]);
            if fixed_of[i] != usize::MAX || replaced_row[i] {
                actions.push(TripletAction::Drop);
            } else if fixed_of[j] != usize::MAX {
                actions.push(TripletAction::MoveToRhs { row: i, fixed_idx: fixed_of[j] });
            } else {
                // placeholder; slot filled after CSR construction
                actions.push(TripletAction::Write(usize::MAX));
                reduced.push(i, j, v);
            }
        }
        for &d in &spec.fixed {
            reduced.push(d, d, 1.0);
        }
        for (r, entries) in &spec.replaced {
            for &(c, coeff) in entries {
                reduced.push(*r, c, coeff);
            }
        }
        let (csr, slots) = reduced.to_csr_with_slots();

        let mut slot_iter = slots.iter();
        for a in actions.iter_mut() {
            if let TripletAction::Write(dst) = a {
                *dst = *slot_iter.next().unwrap();
            }
        }
        let fixed_diag_slot: Vec<usize> =
            spec.fixed.iter().map(|_| *slot_iter.next().unwrap()).collect();
        let mut replaced_slots = Vec::with_capacity(spec.replaced.len());
        for (_, entries) in &spec.replaced {
            replaced_slots.push(entries.iter().map(|_| *slot_iter.next().unwrap()).collect());
        }

        Self {
            csr,
            actions,
            fixed: spec.fixed.clone(),
            fixed_diag_slot,
            replaced_rows: spec.replaced.clone(),
            replaced_slots,
        }
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    /// Refill matrix values and apply constraints to the right-hand side.
    ///
    /// `raw_vals` must come from the same triplet emission order the pattern
    /// was built with. `fixed_values[k]` prescribes `fixed[k]`; `replaced_rhs`
    /// supplies the right-hand side of each replaced row.
    pub fn refill(
        &mut self,
        raw_vals: &[f64],
        fixed_values: &[f64],
        replaced_rhs: &[f64],
        rhs: &mut [f64],
    ) {
        assert_eq!(raw_vals.len(), self.actions.len(), "triplet stream changed length");
        assert_eq!(fixed_values.len(), self.fixed.len());
        assert_eq!(replaced_rhs.len(), self.replaced_rows.len());
        for v in self.csr.vals.iter_mut() {
            *v = 0.0;
        }
        for (t, action) in self.actions.iter().enumerate() {
            match *action {
                TripletAction::Write(slot) => self.csr.vals[slot] += raw_vals[t],
                TripletAction::Drop => {}
                TripletAction::MoveToRhs { row, fixed_idx } => {
                    rhs[row] -= raw_vals[t] * fixed_values[fixed_idx];
                }
            }
        }
        for (k, &slot) in self.fixed_diag_slot.iter().enumerate() {
            self.csr.vals[slot] = 1.0;
            rhs[self.fixed[k]] = fixed_values[k];
        }
        for (r, ((row, entries), slots)) in
            self.replaced_rows.iter().zip(&self.replaced_slots).enumerate()
        {
            for (&(_, coeff), &slot) in entries.iter().zip(slots) {
                self.csr.vals[slot] = coeff;
            }
            rhs[*row] = replaced_rhs[r];
        }
    }
}

/// Direct solve of A x = b.
///
/// Factorizes with partial pivoting over a minimum-degree column ordering and
/// applies iterative refinement until the relative residual meets `tol` or
/// `max_refine` passes are spent.
pub fn solve(a: &CsrMatrix, b: &[f64], tol: f64, max_refine: usize) -> Result<Vec<f64>> {
    if a.nrows != a.ncols {
        return Err(Error::InvalidArgument("solve needs a square matrix".into()));
    }
    if b.len() != a.nrows {
        return Err(Error::InvalidArgument("solve dimension mismatch".into()));
    }
    let order = min_degree_order(a);
    solve_with_order(a, b, &order, tol, max_refine)
}

pub fn solve_with_order(
    a: &CsrMatrix,
    b: &[f64],
    order: &[usize],
    tol: f64,
    max_refine: usize,
) -> Result<Vec<f64>> {
    let lu = SparseLu::factor(a, order)?;
    let mut x = lu.solve(b);
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let mut res = residual_norm(a, &x, b)?;
    let mut pass = 0;
    while res / norm_b > tol && pass < max_refine {
        let r: Vec<f64> = a
            .spmv(&x)?
            .iter()
            .zip(b)
            .map(|(ax, bi)| bi - ax)
            .collect();
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        res = residual_norm(a, &x, b)?;
        pass += 1;
    }
    if res / norm_b > tol {
        return Err(Error::Solver {
            message: "iterative refinement stalled".into(),
            residual: res / norm_b,
        });
    }
    Ok(x)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual_norm(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.spmv(x)?;
    Ok(norm2(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>()))
}
