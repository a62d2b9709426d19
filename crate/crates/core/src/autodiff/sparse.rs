/// Constant sparse operator in row-list form, applied with [`super::Var::spmm`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, weight)` lists. Panics on out-of-range columns.
    pub fn from_rows(cols: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        for row in &entries {
            for &(c, _) in row {
                assert!(c < cols, "column {c} out of range for {cols} columns");
            }
        }
        Self {
            rows: entries.len(),
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[i]
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    /// `self · x` for a row-major `cols × k` block.
    pub fn apply(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * k];
        for (i, row) in self.entries.iter().enumerate() {
            let dst = &mut out[i * k..(i + 1) * k];
            for &(j, w) in row {
                let src = &x[j * k..(j + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (i, row) in self.entries.iter().enumerate() {
            for &(j, w) in row {
                out[i * self.cols + j] += w;
            }
        }
        out
    }
}
