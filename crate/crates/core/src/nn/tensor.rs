use super::scalar::Scalar;

/// Dense row-major tensor. Parameters are at most 2-D.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::ZERO; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect() }
    }
}

/// Strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub struct View<'a, S> {
    pub data: &'a [S],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> View<'a, S> {
    /// Contiguous row-major `rows × cols` matrix.
    pub fn rm(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Column block `[col0, col0 + cols)` of a row-major matrix with `stride` columns.
    pub fn cols_of(data: &'a [S], rows: usize, stride: usize, col0: usize, cols: usize) -> Self {
        Self { data, offset: col0, rows, cols, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Strided mutable matrix view.
pub struct ViewMut<'a, S> {
    pub data: &'a mut [S],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> ViewMut<'a, S> {
    pub fn rm(data: &'a mut [S], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols_of(data: &'a mut [S], rows: usize, stride: usize, col0: usize, cols: usize) -> Self {
        Self { data, offset: col0, rows, cols, rs: stride, cs: 1 }
    }
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm<S: Scalar>(alpha: S, a: View<'_, S>, b: View<'_, S>, beta: S, c: ViewMut<'_, S>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm rows");
    assert_eq!(b.cols, c.cols, "gemm cols");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        let last = c.offset + (c.rows - 1) * c.rs + (c.cols - 1) * c.cs;
        assert!(last < c.data.len(), "output view out of bounds");
    }
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is uniquely borrowed.
    unsafe {
        S::gemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
