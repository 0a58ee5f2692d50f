//! 3D convolution via patch gathering (im2col) and a matrix multiply, plus the
//! direct loop nest it is checked against.

use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dParams {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Default for Conv3dParams {
    fn default() -> Self {
        Conv3dParams {
            stride: [1, 1, 1],
            pad: [0, 0, 0],
        }
    }
}

impl Conv3dParams {
    /// Unit stride with "same" padding for odd kernels.
    pub fn same(kernel: [usize; 3]) -> Self {
        Conv3dParams {
            stride: [1, 1, 1],
            pad: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], params: Conv3dParams) -> Result<Self> {
        let (&[n, cin, t, h, w], &[cout, wcin, kt, kh, kw]) = (xs, ws) else {
            return Err(FcanError::shape(
                "conv3d",
                format!("input {xs:?} and weight {ws:?} must both be rank 5"),
            ));
        };
        if cin != wcin {
            return Err(FcanError::shape(
                "conv3d",
                format!("input {xs:?} has {cin} channels but weight {ws:?} expects {wcin}"),
            ));
        }
        let input = [t, h, w];
        let kernel = [kt, kh, kw];
        let mut output = [0; 3];
        for d in 0..3 {
            if params.stride[d] == 0 {
                return Err(FcanError::arg("conv3d", "stride components must be >= 1"));
            }
            let padded = input[d] + 2 * params.pad[d];
            if kernel[d] == 0 || kernel[d] > padded {
                return Err(FcanError::shape(
                    "conv3d",
                    format!(
                        "kernel {kernel:?} does not fit padded input extents of {xs:?} (pad {:?})",
                        params.pad
                    ),
                ));
            }
            output[d] = (padded - kernel[d]) / params.stride[d] + 1;
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            input,
            kernel,
            stride: params.stride,
            pad: params.pad,
            output,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    /// Input coordinate along dimension `d` for output index `o` and kernel tap `k`.
    #[inline]
    fn src(&self, d: usize, o: usize, k: usize) -> Option<usize> {
        let p = (o * self.stride[d] + k) as isize - self.pad[d] as isize;
        (p >= 0 && (p as usize) < self.input[d]).then_some(p as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let [to, ho, wo] = self.output;
        let [_, hi, wi] = self.input;
        let [kt, kh, kw] = self.kernel;
        let plane = self.input.iter().product::<usize>();
        let p = self.out_positions();
        let mut row = 0;
        for c in 0..self.cin {
            let xc = &x[c * plane..(c + 1) * plane];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let mut j = 0;
                        for ot in 0..to {
                            let it = self.src(0, ot, dt);
                            for oh in 0..ho {
                                let ih = self.src(1, oh, dh);
                                for ow in 0..wo {
                                    dst[j] = match (it, ih, self.src(2, ow, dw)) {
                                        (Some(it), Some(ih), Some(iw)) => xc[(it * hi + ih) * wi + iw],
                                        _ => T::zero(),
                                    };
                                    j += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], gx: &mut [T]) {
        let [to, ho, wo] = self.output;
        let [_, hi, wi] = self.input;
        let [kt, kh, kw] = self.kernel;
        let plane = self.input.iter().product::<usize>();
        let p = self.out_positions();
        let mut row = 0;
        for c in 0..self.cin {
            let gc = &mut gx[c * plane..(c + 1) * plane];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut j = 0;
                        for ot in 0..to {
                            let it = self.src(0, ot, dt);
                            for oh in 0..ho {
                                let ih = self.src(1, oh, dh);
                                for ow in 0..wo {
                                    if let (Some(it), Some(ih), Some(iw)) =
                                        (it, ih, self.src(2, ow, dw))
                                    {
                                        gc[(it * hi + ih) * wi + iw] += src[j];
                                    }
                                    j += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Output extent of a convolution or pooling window along one dimension.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && kernel > 0 && kernel <= padded).then(|| (padded - kernel) / stride + 1)
}

fn check_bias<T: Real>(b: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    if let Some(b) = b {
        if b.numel() != cout || b.shape().len() != 1 {
            return Err(FcanError::shape(
                "conv3d",
                format!("bias {:?} must be a vector of {cout}", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Reference convolution: one multiply-add per (output, tap) in a plain loop nest.
pub fn conv3d_direct<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    params: Conv3dParams,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), params)?;
    check_bias(b, g.cout)?;
    let [to, ho, wo] = g.output;
    let [kt, kh, kw] = g.kernel;
    let mut out = Tensor::zeros(&[g.n, g.cout, to, ho, wo]);
    for n in 0..g.n {
        for co in 0..g.cout {
            let bias = b.map_or(T::zero(), |b| b.data()[co]);
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = bias;
                        for ci in 0..g.cin {
                            for dt in 0..kt {
                                let Some(it) = g.src(0, ot, dt) else { continue };
                                for dh in 0..kh {
                                    let Some(ih) = g.src(1, oh, dh) else { continue };
                                    for dw in 0..kw {
                                        let Some(iw) = g.src(2, ow, dw) else { continue };
                                        acc += x.at(&[n, ci, it, ih, iw]) * w.at(&[co, ci, dt, dh, dw]);
                                    }
                                }
                            }
                        }
                        out.set(&[n, co, ot, oh, ow], acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

impl<T: Real> Tape<T> {
    /// 3D convolution of `x: [N,Cin,T,H,W]` with `w: [Cout,Cin,kt,kh,kw]` and
    /// optional bias `[Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, params: Conv3dParams) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let g = ConvGeom::new(xv.shape(), wv.shape(), params)?;
        check_bias(b.map(|b| self.value(b)), g.cout)?;

        let k = g.patch_len();
        let p = g.out_positions();
        let in_len = g.in_len();
        let mut out = vec![T::zero(); g.n * g.cout * p];
        let mut cols = vec![T::zero(); k * p];
        for n in 0..g.n {
            g.im2col(&xv.data()[n * in_len..(n + 1) * in_len], &mut cols);
            let dst = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
            if let Some(b) = b {
                let bias = self.value(b).data();
                for (co, row) in dst.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = bias[co]);
                }
            }
            let beta = if b.is_some() { T::one() } else { T::zero() };
            T::gemm(false, false, g.cout, p, k, T::one(), wv.data(), &cols, beta, dst);
        }
        let shape = [g.n, g.cout, g.output[0], g.output[1], g.output[2]];
        let value = Tensor::from_vec(&shape, out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv3d { x, w, b, geom: g }, &parents))
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &ConvGeom,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let k = g.patch_len();
    let p = g.out_positions();
    let in_len = g.in_len();
    let per_out = g.cout * p;

    if let Some(b) = b {
        if let Some(gb) = tape.acc(b, grads) {
            for n in 0..g.n {
                for (co, row) in gout[n * per_out..(n + 1) * per_out].chunks(p).enumerate() {
                    gb[co] += row.iter().copied().sum::<T>();
                }
            }
        }
    }

    let need_w = tape.requires_grad(w);
    let need_x = tape.requires_grad(x);
    if !need_w && !need_x {
        return;
    }
    let xv = tape.value(x).data();
    let wv = tape.value(w).data();
    let mut cols = vec![T::zero(); k * p];

    if need_w {
        let mut gw = vec![T::zero(); g.cout * k];
        for n in 0..g.n {
            g.im2col(&xv[n * in_len..(n + 1) * in_len], &mut cols);
            let go = &gout[n * per_out..(n + 1) * per_out];
            T::gemm(false, true, g.cout, k, p, T::one(), go, &cols, T::one(), &mut gw);
        }
        let acc = tape.acc(w, grads).unwrap();
        acc.iter_mut().zip(&gw).for_each(|(a, v)| *a += *v);
    }

    if need_x {
        let mut gx = vec![T::zero(); g.n * in_len];
        for n in 0..g.n {
            let go = &gout[n * per_out..(n + 1) * per_out];
            T::gemm(true, false, k, p, g.cout, T::one(), wv, go, T::zero(), &mut cols);
            g.col2im(&cols, &mut gx[n * in_len..(n + 1) * in_len]);
        }
        let acc = tape.acc(x, grads).unwrap();
        acc.iter_mut().zip(&gx).for_each(|(a, v)| *a += *v);
    }
}
