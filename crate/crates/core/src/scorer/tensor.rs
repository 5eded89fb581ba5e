//! Dense row-major matrices and the handful of kernels the model needs.

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match {rows}×{cols}");
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a · b`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out_row.iter_mut().zip(b.row(p)) {
                *o += x * y;
            }
        }
    }
    out
}

/// `acc += aᵀ · b`
pub fn matmul_tn_acc(a: &Tensor, b: &Tensor, acc: &mut Tensor) {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    assert!(acc.rows == a.cols && acc.cols == b.cols);
    for r in 0..a.rows {
        let b_row = b.row(r);
        for (p, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let acc_row = &mut acc.data[p * b.cols..(p + 1) * b.cols];
            for (o, &y) in acc_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

/// `acc += a · bᵀ`
pub fn matmul_nt_acc(a: &Tensor, b: &Tensor, acc: &mut Tensor) {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    assert!(acc.rows == a.rows && acc.cols == b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let dot: f64 = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            acc.data[i * b.rows + j] += dot;
        }
    }
}
