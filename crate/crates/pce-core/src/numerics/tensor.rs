use crate::numerics::NumericsError;

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::InvalidShape(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, NumericsError> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::InvalidShape(vec![rows.len(), cols]));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix; a 1-D tensor is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        as_matrix(&self.shape)
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

pub(crate) fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap_or(&1);
            (shape.iter().product::<usize>() / c.max(1), c)
        }
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    assert!(a.len() >= n * k && b.len() >= k * m && out.len() >= n * m);
    // SAFETY: slice lengths cover the n×k, k×m and n×m row-major extents
    unsafe {
        matrixmultiply::dgemm(
            n, k, m, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), m as isize, 1,
            1.0,
            out.as_mut_ptr(), m as isize, 1,
        );
    }
}

/// `out[n×k] += g[n×m] · b[k×m]ᵀ`
pub(crate) fn matmul_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    assert!(g.len() >= n * m && b.len() >= k * m && out.len() >= n * k);
    // SAFETY: bᵀ is read through swapped strides inside the k×m extent
    unsafe {
        matrixmultiply::dgemm(
            n, m, k, 1.0,
            g.as_ptr(), m as isize, 1,
            b.as_ptr(), 1, m as isize,
            1.0,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
}

/// `out[k×m] += a[n×k]ᵀ · g[n×m]`
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    assert!(a.len() >= n * k && g.len() >= n * m && out.len() >= k * m);
    // SAFETY: aᵀ is read through swapped strides inside the n×k extent
    unsafe {
        matrixmultiply::dgemm(
            k, n, m, 1.0,
            a.as_ptr(), 1, k as isize,
            g.as_ptr(), m as isize, 1,
            1.0,
            out.as_mut_ptr(), m as isize, 1,
        );
    }
}

/// Strided window into a row-major buffer.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// `rows×cols` block starting at `offset` inside a matrix with `stride` columns.
    pub fn block(offset: usize, rows: usize, cols: usize, stride: usize) -> View {
        View { offset, rows, cols, rs: stride, cs: 1 }
    }

    pub fn t(self) -> View {
        View { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn end(&self) -> usize {
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
    }
}

/// `c = alpha · a · b + beta · c` over strided views.
pub(crate) fn gemm(alpha: f64, a: &[f64], va: View, b: &[f64], vb: View, beta: f64, c: &mut [f64], vc: View) {
    assert!(va.cols == vb.rows && va.rows == vc.rows && vb.cols == vc.cols && va.cols > 0);
    if vc.rows == 0 || vc.cols == 0 {
        return;
    }
    assert!(va.end() <= a.len() && vb.end() <= b.len() && vc.end() <= c.len());
    // SAFETY: every view's furthest element is checked against its buffer above
    unsafe {
        matrixmultiply::dgemm(
            va.rows, va.cols, vb.cols, alpha,
            a.as_ptr().add(va.offset), va.rs as isize, va.cs as isize,
            b.as_ptr().add(vb.offset), vb.rs as isize, vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset), vc.rs as isize, vc.cs as isize,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the reduction vectorizable
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}
