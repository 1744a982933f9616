//! Layer specifications and the forward/backward kernels behind them.
//!
//! Kernels operate on flat slices in NCHW order. Parallel sections split
//! work so each unit owns a disjoint output slice with a fixed inner
//! accumulation order; results do not depend on thread count.

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Relu,
    Tanh,
    Elu,
}

impl ActKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActKind::Relu => "relu",
            ActKind::Tanh => "tanh",
            ActKind::Elu => "elu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActKind::Relu),
            "tanh" => Ok(ActKind::Tanh),
            "elu" => Ok(ActKind::Elu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// ELU alpha is fixed at 1.0.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Batchnorm2d {
        channels: usize,
    },
    Activation {
        act: ActKind,
    },
    Avgpool {
        kernel: usize,
        stride: usize,
    },
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    /// Adds the output of an earlier node (identity skip connection).
    ResidualAdd {
        from: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Batchnorm2d { .. } => "batchnorm2d",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Avgpool { .. } => "avgpool",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ResidualAdd { .. } => "residual-add",
        }
    }
}

/// Conv padding that preserves spatial size at stride 1. Kernel must be odd.
pub fn conv_padding(kernel: usize) -> Result<usize> {
    if kernel % 2 == 0 {
        return Err(Error::config(format!(
            "conv kernel side must be odd, got {kernel}"
        )));
    }
    Ok((kernel - 1) / 2)
}

pub fn pooled_size(h: usize, kernel: usize, stride: usize) -> usize {
    if h < kernel {
        0
    } else {
        (h - kernel) / stride + 1
    }
}

pub fn conv_out_size(h: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - kernel) / stride + 1
}

pub struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn new(n: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let pad = conv_padding(k)?;
        Ok(ConvDims {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh: conv_out_size(h, k, stride, pad),
            ow: conv_out_size(w, k, stride, pad),
        })
    }
}

pub fn conv2d_forward<F: Scalar>(x: &[F], wgt: &[F], bias: &[F], d: &ConvDims) -> Vec<F> {
    let mut out = vec![F::zero(); d.n * d.cout * d.oh * d.ow];
    let in_img = d.cin * d.h * d.w;
    let out_img = d.cout * d.oh * d.ow;
    out.par_chunks_mut(out_img).enumerate().for_each(|(n, on)| {
        let xn = &x[n * in_img..(n + 1) * in_img];
        for co in 0..d.cout {
            let oc = &mut on[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
            let b = bias[co];
            for v in oc.iter_mut() {
                *v = b;
            }
            for ci in 0..d.cin {
                let xc = &xn[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        for oy in 0..d.oh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                            let orow = &mut oc[oy * d.ow..(oy + 1) * d.ow];
                            for ox in 0..d.ow {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                orow[ox] = orow[ox] + wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient w.r.t. the conv input.
pub fn conv2d_backward_input<F: Scalar>(dout: &[F], wgt: &[F], d: &ConvDims) -> Vec<F> {
    let mut dx = vec![F::zero(); d.n * d.cin * d.h * d.w];
    let in_img = d.cin * d.h * d.w;
    let out_img = d.cout * d.oh * d.ow;
    dx.par_chunks_mut(in_img).enumerate().for_each(|(n, dxn)| {
        let dn = &dout[n * out_img..(n + 1) * out_img];
        for co in 0..d.cout {
            let doc = &dn[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
            for ci in 0..d.cin {
                let dxc = &mut dxn[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        for oy in 0..d.oh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let drow = &doc[oy * d.ow..(oy + 1) * d.ow];
                            let dxrow = &mut dxc[iy as usize * d.w..(iy as usize + 1) * d.w];
                            for ox in 0..d.ow {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                dxrow[ix as usize] = dxrow[ix as usize] + wv * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Gradients w.r.t. conv weight and bias.
pub fn conv2d_backward_params<F: Scalar>(x: &[F], dout: &[F], d: &ConvDims) -> (Vec<F>, Vec<F>) {
    let mut dw = vec![F::zero(); d.cout * d.cin * d.k * d.k];
    let mut db = vec![F::zero(); d.cout];
    let in_img = d.cin * d.h * d.w;
    let out_img = d.cout * d.oh * d.ow;
    let per_co = d.cin * d.k * d.k;
    dw.par_chunks_mut(per_co)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(co, (dwc, dbc))| {
            for n in 0..d.n {
                let xn = &x[n * in_img..(n + 1) * in_img];
                let doc = &dout[n * out_img + co * d.oh * d.ow..n * out_img + (co + 1) * d.oh * d.ow];
                for v in doc.iter() {
                    *dbc = *dbc + *v;
                }
                for ci in 0..d.cin {
                    let xc = &xn[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                    for ky in 0..d.k {
                        for kx in 0..d.k {
                            let mut acc = F::zero();
                            for oy in 0..d.oh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                                let drow = &doc[oy * d.ow..(oy + 1) * d.ow];
                                for ox in 0..d.ow {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    acc = acc + xrow[ix as usize] * drow[ox];
                                }
                            }
                            dwc[(ci * d.k + ky) * d.k + kx] = dwc[(ci * d.k + ky) * d.k + kx] + acc;
                        }
                    }
                }
            }
        });
    (dw, db)
}

pub fn dense_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], n: usize, din: usize, dout_dim: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * dout_dim];
    out.par_chunks_mut(dout_dim).enumerate().for_each(|(i, on)| {
        let xi = &x[i * din..(i + 1) * din];
        for (o, ov) in on.iter_mut().enumerate() {
            let wrow = &w[o * din..(o + 1) * din];
            let mut acc = b[o];
            for (xv, wv) in xi.iter().zip(wrow) {
                acc = acc + *xv * *wv;
            }
            *ov = acc;
        }
    });
    out
}

pub fn dense_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dout: &[F],
    n: usize,
    din: usize,
    dout_dim: usize,
    want_params: bool,
) -> (Option<(Vec<F>, Vec<F>)>, Vec<F>) {
    let mut dx = vec![F::zero(); n * din];
    dx.par_chunks_mut(din).enumerate().for_each(|(i, dxi)| {
        let di = &dout[i * dout_dim..(i + 1) * dout_dim];
        for (o, dv) in di.iter().enumerate() {
            if *dv == F::zero() {
                continue;
            }
            let wrow = &w[o * din..(o + 1) * din];
            for (dxv, wv) in dxi.iter_mut().zip(wrow) {
                *dxv = *dxv + *dv * *wv;
            }
        }
    });
    let params = if want_params {
        let mut dw = vec![F::zero(); dout_dim * din];
        let mut db = vec![F::zero(); dout_dim];
        dw.par_chunks_mut(din)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(|(o, (dwo, dbo))| {
                for i in 0..n {
                    let dv = dout[i * dout_dim + o];
                    *dbo = *dbo + dv;
                    if dv == F::zero() {
                        continue;
                    }
                    let xi = &x[i * din..(i + 1) * din];
                    for (dwv, xv) in dwo.iter_mut().zip(xi) {
                        *dwv = *dwv + dv * *xv;
                    }
                }
            });
        Some((dw, db))
    } else {
        None
    };
    (params, dx)
}

pub fn activation_forward<F: Scalar>(x: &[F], act: ActKind) -> Vec<F> {
    let alpha = F::from_f64(ELU_ALPHA);
    x.iter()
        .map(|&v| match act {
            ActKind::Relu => v.max(F::zero()),
            ActKind::Tanh => v.tanh(),
            ActKind::Elu => {
                if v > F::zero() {
                    v
                } else {
                    alpha * (v.exp() - F::one())
                }
            }
        })
        .collect()
}

/// Activation backward in terms of the layer input and output.
pub fn activation_backward<F: Scalar>(x: &[F], y: &[F], dout: &[F], act: ActKind) -> Vec<F> {
    let alpha = F::from_f64(ELU_ALPHA);
    let one = F::one();
    x.iter()
        .zip(y)
        .zip(dout)
        .map(|((&xv, &yv), &dv)| match act {
            ActKind::Relu => {
                if xv > F::zero() {
                    dv
                } else {
                    F::zero()
                }
            }
            ActKind::Tanh => dv * (one - yv * yv),
            ActKind::Elu => {
                if xv > F::zero() {
                    dv
                } else {
                    dv * (yv + alpha)
                }
            }
        })
        .collect()
}

pub struct PoolDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolDims {
    pub fn new(n: usize, c: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        PoolDims {
            n,
            c,
            h,
            w,
            k,
            stride,
            oh: pooled_size(h, k, stride),
            ow: pooled_size(w, k, stride),
        }
    }
}

pub fn maxpool_forward<F: Scalar>(x: &[F], d: &PoolDims) -> (Vec<F>, Vec<u32>) {
    let planes = d.n * d.c;
    let mut out = vec![F::zero(); planes * d.oh * d.ow];
    let mut arg = vec![0u32; planes * d.oh * d.ow];
    for p in 0..planes {
        let xc = &x[p * d.h * d.w..(p + 1) * d.h * d.w];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut best = F::neg_infinity();
                let mut bi = 0u32;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let iy = oy * d.stride + ky;
                        let ix = ox * d.stride + kx;
                        let v = xc[iy * d.w + ix];
                        if v > best {
                            best = v;
                            bi = (iy * d.w + ix) as u32;
                        }
                    }
                }
                out[(p * d.oh + oy) * d.ow + ox] = best;
                arg[(p * d.oh + oy) * d.ow + ox] = bi;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<F: Scalar>(dout: &[F], arg: &[u32], d: &PoolDims) -> Vec<F> {
    let planes = d.n * d.c;
    let mut dx = vec![F::zero(); planes * d.h * d.w];
    for p in 0..planes {
        let base = p * d.h * d.w;
        for o in 0..d.oh * d.ow {
            let idx = arg[p * d.oh * d.ow + o] as usize;
            dx[base + idx] = dx[base + idx] + dout[p * d.oh * d.ow + o];
        }
    }
    dx
}

pub fn avgpool_forward<F: Scalar>(x: &[F], d: &PoolDims) -> Vec<F> {
    let planes = d.n * d.c;
    let inv = F::from_f64(1.0 / (d.k * d.k) as f64);
    let mut out = vec![F::zero(); planes * d.oh * d.ow];
    for p in 0..planes {
        let xc = &x[p * d.h * d.w..(p + 1) * d.h * d.w];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = F::zero();
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        acc = acc + xc[(oy * d.stride + ky) * d.w + ox * d.stride + kx];
                    }
                }
                out[(p * d.oh + oy) * d.ow + ox] = acc * inv;
            }
        }
    }
    out
}

pub fn avgpool_backward<F: Scalar>(dout: &[F], d: &PoolDims) -> Vec<F> {
    let planes = d.n * d.c;
    let inv = F::from_f64(1.0 / (d.k * d.k) as f64);
    let mut dx = vec![F::zero(); planes * d.h * d.w];
    for p in 0..planes {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let g = dout[(p * d.oh + oy) * d.ow + ox] * inv;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let i = p * d.h * d.w + (oy * d.stride + ky) * d.w + ox * d.stride + kx;
                        dx[i] = dx[i] + g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_kernel_rejected() {
        assert!(conv_padding(4).is_err());
        assert_eq!(conv_padding(5).unwrap(), 2);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 copies the input.
        let d = ConvDims::new(1, 1, 3, 3, 1, 1, 1).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let out = conv2d_forward(&x, &[1.0], &[0.0], &d);
        assert_eq!(out, x);
    }

    #[test]
    fn maxpool_picks_max() {
        let d = PoolDims::new(1, 1, 2, 2, 2, 2);
        let (out, arg) = maxpool_forward(&[1.0f64, 5.0, 3.0, 2.0], &d);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![1]);
    }
}
