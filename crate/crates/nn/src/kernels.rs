//! Dense kernels behind the tape ops. Convolutions wrap indices modulo the
//! grid size; there is no padding anywhere.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: the slices hold exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of a cyclic convolution from a `ci x h x w` input to a
/// `co x (h/stride) x (w/stride)` output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        self.h / self.stride
    }

    pub fn wo(&self) -> usize {
        self.w / self.stride
    }

    pub fn in_len(&self) -> usize {
        self.ci * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.co * self.ho() * self.wo()
    }

    pub fn weight_len(&self) -> usize {
        self.co * self.ci * self.k * self.k
    }

    /// Offset into one input plane for every (tap, output pixel).
    fn taps(&self) -> Vec<usize> {
        let (ho, wo, r) = (self.ho(), self.wo(), (self.k / 2) as isize);
        let mut t = Vec::with_capacity(self.k * self.k * ho * wo);
        for p in 0..self.k {
            for q in 0..self.k {
                for i in 0..ho {
                    let y = ((self.stride * i) as isize + p as isize - r).rem_euclid(self.h as isize) as usize;
                    for j in 0..wo {
                        let x = ((self.stride * j) as isize + q as isize - r).rem_euclid(self.w as isize) as usize;
                        t.push(y * self.w + x);
                    }
                }
            }
        }
        t
    }

    fn im2col(&self, taps: &[usize], x: &[f64], cols: &mut [f64]) {
        let plane = self.h * self.w;
        let span = taps.len();
        for c in 0..self.ci {
            let src = &x[c * plane..(c + 1) * plane];
            let dst = &mut cols[c * span..(c + 1) * span];
            for (d, &t) in dst.iter_mut().zip(taps) {
                *d = src[t];
            }
        }
    }

    fn col2im_add(&self, taps: &[usize], cols: &[f64], x: &mut [f64]) {
        let plane = self.h * self.w;
        let span = taps.len();
        for c in 0..self.ci {
            let src = &cols[c * span..(c + 1) * span];
            let dst = &mut x[c * plane..(c + 1) * plane];
            for (&s, &t) in src.iter().zip(taps) {
                dst[t] += s;
            }
        }
    }
}

/// `y[b,o,i,j] = sum w[o,c,p,q] x[b,c,(s i + p - k/2) mod h, (s j + q - k/2) mod w]`.
pub fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let taps = g.taps();
    let (kk, hw) = (g.ci * g.k * g.k, g.ho() * g.wo());
    let mut cols = vec![0.0; kk * hw];
    let mut y = vec![0.0; g.batch * g.out_len()];
    for b in 0..g.batch {
        g.im2col(&taps, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        gemm(g.co, kk, hw, w, false, &cols, false, &mut y[b * g.out_len()..(b + 1) * g.out_len()], 0.0);
    }
    y
}

/// Adjoint of [`conv_forward`] in its input: maps `co x ho x wo` back to
/// `ci x h x w`.
pub fn conv_transpose(g: &ConvGeom, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let taps = g.taps();
    let (kk, hw) = (g.ci * g.k * g.k, g.ho() * g.wo());
    let mut cols = vec![0.0; kk * hw];
    let mut x = vec![0.0; g.batch * g.in_len()];
    for b in 0..g.batch {
        gemm(kk, g.co, hw, w, true, &gy[b * g.out_len()..(b + 1) * g.out_len()], false, &mut cols, 0.0);
        g.col2im_add(&taps, &cols, &mut x[b * g.in_len()..(b + 1) * g.in_len()]);
    }
    x
}

/// Adjoint of [`conv_forward`] in its kernel.
pub fn conv_weight_grad(g: &ConvGeom, x: &[f64], gy: &[f64]) -> Vec<f64> {
    let taps = g.taps();
    let (kk, hw) = (g.ci * g.k * g.k, g.ho() * g.wo());
    let mut cols = vec![0.0; kk * hw];
    let mut gw = vec![0.0; g.weight_len()];
    for b in 0..g.batch {
        g.im2col(&taps, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        gemm(g.co, hw, kk, &gy[b * g.out_len()..(b + 1) * g.out_len()], false, &cols, true, &mut gw, 1.0);
    }
    gw
}
