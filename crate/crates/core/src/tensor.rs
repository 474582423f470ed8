//! Dense row-major `f32` tensors and the raw kernels the tape is built on.

use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_array(array: ArrayD<f32>) -> Self {
        let shape = array.shape().to_vec();
        let data = if array.is_standard_layout() {
            array.into_raw_vec_and_offset().0
        } else {
            array.iter().copied().collect()
        };
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::InvalidInput(format!(
                "expected a 4-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn view(&self) -> ArrayViewD<'_, f32> {
        ArrayViewD::from_shape(IxDyn(&self.shape), &self.data).expect("consistent tensor shape")
    }

    pub fn to_f64_array(&self) -> ArrayD<f64> {
        self.view().mapv(f64::from)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| Error::InvalidInput("slice of a scalar".into()))?;
        if start + len > n {
            return Err(Error::InvalidInput(format!(
                "batch slice {start}..{} out of range {n}",
                start + len
            )));
        }
        let per = self.data.len() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of nothing".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::shape(&first.shape, &p.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Self { shape, data })
    }

    pub fn mean_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f64::from((a - b).abs()))
            .sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}

/// `c = alpha * a @ b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa));
    assert!(b.len() >= span(k, n, rsb, csb));
    assert!(c.len() >= span(m, n, rsc, csc));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], wshape: &[usize], stride: usize, pad: usize) -> Self {
        let [_, cin, h, w] = x;
        assert_eq!(wshape.len(), 4, "conv weight must be 4-D");
        assert_eq!(wshape[1], cin, "conv input channels: weight {wshape:?} vs input {x:?}");
        assert_eq!(wshape[2], wshape[3], "square kernels only");
        let k = wshape[2];
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        Self {
            cin,
            h,
            w,
            cout: wshape[0],
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * p;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let p = g.out_pixels();
    dx.fill(0.0);
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * p;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the output and, when `keep_cols` is set, the
/// unrolled input patches of every sample for the backward pass.
pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    keep_cols: bool,
) -> (Tensor, Vec<f32>) {
    let xd = x.dims4().expect("conv input must be 4-D");
    let g = ConvGeom::new(xd, w.shape(), stride, pad);
    assert_eq!(b.len(), g.cout, "conv bias length");
    let n = xd[0];
    let in_per = g.cin * g.h * g.w;
    let p = g.out_pixels();
    let kd = g.kdim();
    let per_sample = par::map_range(n, |i| {
        let xs = &x.data()[i * in_per..(i + 1) * in_per];
        let mut out = vec![0.0f32; g.cout * p];
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.fill(b.data()[co]);
        }
        let cols = if g.is_pointwise() {
            xs.to_vec()
        } else {
            let mut cols = vec![0.0f32; kd * p];
            im2col(xs, &g, &mut cols);
            cols
        };
        gemm(
            g.cout,
            kd,
            p,
            1.0,
            w.data(),
            kd as isize,
            1,
            &cols,
            p as isize,
            1,
            1.0,
            &mut out,
            p as isize,
            1,
        );
        (out, if keep_cols { cols } else { Vec::new() })
    });
    let mut data = Vec::with_capacity(n * g.cout * p);
    let mut all_cols = Vec::with_capacity(if keep_cols { n * kd * p } else { 0 });
    for (o, c) in per_sample {
        data.extend_from_slice(&o);
        all_cols.extend_from_slice(&c);
    }
    (
        Tensor {
            shape: vec![n, g.cout, g.ho, g.wo],
            data,
        },
        all_cols,
    )
}

/// Backward convolution: `(dx, dw, db)`; `dx` is skipped unless requested.
pub(crate) fn conv2d_backward(
    xshape: [usize; 4],
    w: &Tensor,
    cols: &[f32],
    dout: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let g = ConvGeom::new(xshape, w.shape(), stride, pad);
    let n = xshape[0];
    let p = g.out_pixels();
    let kd = g.kdim();
    let in_per = g.cin * g.h * g.w;
    assert_eq!(cols.len(), n * kd * p, "conv backward needs cached patches");
    let per_sample = par::map_range(n, |i| {
        let dy = &dout.data()[i * g.cout * p..(i + 1) * g.cout * p];
        let cs = &cols[i * kd * p..(i + 1) * kd * p];
        let mut dw = vec![0.0f32; g.cout * kd];
        gemm(
            g.cout, p, kd, 1.0, dy, p as isize, 1, cs, 1, p as isize, 0.0, &mut dw, kd as isize, 1,
        );
        let db: Vec<f32> = dy.chunks(p).map(|r| r.iter().sum()).collect();
        let dx = need_dx.then(|| {
            let mut dcols = vec![0.0f32; kd * p];
            gemm(
                kd,
                g.cout,
                p,
                1.0,
                w.data(),
                1,
                kd as isize,
                dy,
                p as isize,
                1,
                0.0,
                &mut dcols,
                p as isize,
                1,
            );
            if g.is_pointwise() {
                dcols
            } else {
                let mut dx = vec![0.0f32; in_per];
                col2im(&dcols, &g, &mut dx);
                dx
            }
        });
        (dw, db, dx)
    });
    let mut dw = vec![0.0f32; g.cout * kd];
    let mut db = vec![0.0f32; g.cout];
    let mut dx = need_dx.then(|| Vec::with_capacity(n * in_per));
    for (w_i, b_i, x_i) in per_sample {
        dw.iter_mut().zip(&w_i).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&b_i).for_each(|(a, b)| *a += b);
        if let (Some(dx), Some(x_i)) = (dx.as_mut(), x_i) {
            dx.extend_from_slice(&x_i);
        }
    }
    (
        dx.map(|data| Tensor {
            shape: xshape.to_vec(),
            data,
        }),
        Tensor {
            shape: w.shape().to_vec(),
            data: dw,
        },
        Tensor {
            shape: vec![g.cout],
            data: db,
        },
    )
}

pub(crate) const NORM_EPS: f32 = 1e-5;

/// Normalizes each (sample, group) slab to zero mean and unit variance.
/// `groups == channels` is instance normalization, `groups == 1` is layer
/// normalization. Returns the output and the per-slab inverse std.
pub(crate) fn group_norm_forward(x: &Tensor, groups: usize) -> (Tensor, Vec<f32>) {
    let [n, c, h, w] = x.dims4().expect("norm input must be 4-D");
    assert!(groups >= 1 && c % groups == 0, "channels {c} not divisible by groups {groups}");
    let slab = c / groups * h * w;
    let mut out = x.clone();
    let mut inv_std = vec![0.0f32; n * groups];
    for (chunk, inv) in out.data.chunks_mut(slab).zip(inv_std.iter_mut()) {
        let mean = chunk.iter().map(|&v| f64::from(v)).sum::<f64>() / slab as f64;
        let var = chunk
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / slab as f64;
        let is = (1.0 / (var + f64::from(NORM_EPS)).sqrt()) as f32;
        let m = mean as f32;
        chunk.iter_mut().for_each(|v| *v = (*v - m) * is);
        *inv = is;
    }
    (out, inv_std)
}

pub(crate) fn group_norm_backward(y: &Tensor, inv_std: &[f32], dy: &Tensor) -> Tensor {
    let slab = y.len() / inv_std.len();
    let mut dx = dy.clone();
    for ((d, yy), &is) in dx
        .data
        .chunks_mut(slab)
        .zip(y.data.chunks(slab))
        .zip(inv_std)
    {
        let mean_dy = d.iter().map(|&v| f64::from(v)).sum::<f64>() / slab as f64;
        let mean_dyy = d
            .iter()
            .zip(yy)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum::<f64>()
            / slab as f64;
        let (mdy, mdyy) = (mean_dy as f32, mean_dyy as f32);
        d.iter_mut()
            .zip(yy)
            .for_each(|(g, &yv)| *g = is * (*g - mdy - yv * mdyy));
    }
    dx
}
