//! Differentiable operators. Every operator validates shapes eagerly and
//! names itself in the error.

use std::sync::Arc;

use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Work size above which the dense kernels fan out over rayon. The split is
/// by output row, so results do not depend on the thread count.
const PAR_THRESHOLD: usize = 1 << 15;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn split_last(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let last = *t
        .shape()
        .last()
        .ok_or_else(|| Error::shape(op, "needs rank >= 1"))?;
    Ok((t.numel() / last.max(1), last))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    // ---- elementwise binary -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(
            "add",
            out,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.push(
            "sub",
            out,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(
            "mul",
            out,
            &[a, b],
            Box::new(|args| {
                let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
                let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("div", va, vb)?;
        let out = va.zip_map(vb, |x, y| x / y);
        Ok(self.push(
            "div",
            out,
            &[a, b],
            Box::new(|args| {
                let ga = args.grad.zip_map(args.inputs[1], |g, y| g / y);
                let gb = args.needs[1].then(|| {
                    let t = args.grad.zip_map(args.value, |g, q| g * q);
                    t.zip_map(args.inputs[1], |gq, y| -gq / y)
                });
                vec![Some(ga), gb]
            }),
        ))
    }

    /// `x[..., n] + b[n]`, broadcasting `b` over every leading index.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (_, n) = split_last("add_row", vx)?;
        if vb.rank() != 1 || vb.numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(
            "add_row",
            out,
            &[x, b],
            Box::new(move |args| {
                let mut gb = vec![0.0; n];
                for row in args.grad.data().chunks(n) {
                    for (acc, g) in gb.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                vec![Some(args.grad.clone()), Some(Tensor::from_vec(gb))]
            }),
        ))
    }

    /// `x[b, c, l] + bias[c]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.rank() != 3 || vb.rank() != 1 || vb.numel() != vx.shape()[1] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("{:?} + {:?}", vx.shape(), vb.shape()),
            ));
        }
        let (c, l) = (vx.shape()[1], vx.shape()[2]);
        let mut out = vx.clone();
        for (i, row) in out.data_mut().chunks_mut(l).enumerate() {
            let bv = vb.data()[i % c];
            row.iter_mut().for_each(|o| *o += bv);
        }
        Ok(self.push(
            "add_channel_bias",
            out,
            &[x, bias],
            Box::new(move |args| {
                let mut gb = vec![0.0; c];
                for (i, row) in args.grad.data().chunks(l).enumerate() {
                    gb[i % c] += row.iter().sum::<f64>();
                }
                vec![Some(args.grad.clone()), Some(Tensor::from_vec(gb))]
            }),
        ))
    }

    // ---- scalar affine ------------------------------------------------------

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(
            "scale",
            out,
            &[x],
            Box::new(move |args| vec![Some(args.grad.map(|g| g * c))]),
        )
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(
            "add_scalar",
            out,
            &[x],
            Box::new(|args| vec![Some(args.grad.clone())]),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    // ---- elementwise unary --------------------------------------------------

    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Var {
        let out = self.value(x).map(f);
        self.push(
            op,
            out,
            &[x],
            Box::new(move |args| {
                let d: Vec<f64> = args
                    .grad
                    .data()
                    .iter()
                    .zip(args.inputs[0].data())
                    .zip(args.value.data())
                    .map(|((&g, &xi), &yi)| g * df(xi, yi))
                    .collect();
                vec![Some(Tensor::new(args.grad.shape().to_vec(), d).expect("same shape"))]
            }),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary("log", x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary("softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(
            "sum",
            out,
            &[x],
            Box::new(|args| {
                let g = args.grad.item();
                vec![Some(args.inputs[0].map(|_| g))]
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let out = Tensor::scalar(self.value(x).sum() / n);
        self.push(
            "mean",
            out,
            &[x],
            Box::new(move |args| {
                let g = args.grad.item() / n;
                vec![Some(args.inputs[0].map(|_| g))]
            }),
        )
    }

    /// Sums out the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (_, n) = split_last("sum_last", vx)?;
        let shape = vx.shape()[..vx.rank() - 1].to_vec();
        let data = if n == 0 {
            vec![0.0; shape.iter().product()]
        } else {
            vx.data().chunks(n).map(|r| r.iter().sum()).collect()
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "sum_last",
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Vec::with_capacity(args.inputs[0].numel());
                for &gv in args.grad.data() {
                    g.extend(std::iter::repeat_n(gv, n));
                }
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    /// `log((1/K) Σ_k exp(x[..., k]))` along the last axis, max-shifted.
    pub fn log_mean_exp_last(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (_, k) = split_last("log_mean_exp_last", vx)?;
        if k == 0 {
            return Err(Error::shape("log_mean_exp_last", "empty last axis"));
        }
        let shape = vx.shape()[..vx.rank() - 1].to_vec();
        let data = vx
            .data()
            .chunks(k)
            .map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = r.iter().map(|v| (v - m).exp()).sum();
                m + (s / k as f64).ln()
            })
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "log_mean_exp_last",
            out,
            &[x],
            Box::new(move |args| {
                // d/dx_k = softmax(x)_k = exp(x_k - y) / K
                let mut g = Vec::with_capacity(args.inputs[0].numel());
                for ((row, &y), &gy) in args.inputs[0]
                    .data()
                    .chunks(k)
                    .zip(args.value.data())
                    .zip(args.grad.data())
                {
                    g.extend(row.iter().map(|v| gy * (v - y).exp() / k as f64));
                }
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax_last(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (_, c) = split_last("log_softmax_last", vx)?;
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(self.push(
            "log_softmax_last",
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Vec::with_capacity(args.grad.numel());
                for (grow, yrow) in args.grad.data().chunks(c).zip(args.value.data().chunks(c)) {
                    let gs: f64 = grow.iter().sum();
                    g.extend(grow.iter().zip(yrow).map(|(gv, yv)| gv - yv.exp() * gs));
                }
                vec![Some(Tensor::new(args.grad.shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    /// Maximum along the last axis; the gradient goes to the first maximal
    /// entry of each row.
    pub fn max_last(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (_, n) = split_last("max_last", vx)?;
        if n == 0 {
            return Err(Error::shape("max_last", "empty last axis"));
        }
        let shape = vx.shape()[..vx.rank() - 1].to_vec();
        let mut arg = Vec::with_capacity(vx.numel() / n);
        let mut data = Vec::with_capacity(vx.numel() / n);
        for row in vx.data().chunks(n) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            arg.push(best);
            data.push(row[best]);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "max_last",
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                for (r, (&i, &gv)) in arg.iter().zip(args.grad.data()).enumerate() {
                    g.data_mut()[r * n + i] += gv;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Picks `x[i, idx[i]]` from a `[rows, n]` tensor.
    pub fn pick_last(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (rows, n) = split_last("pick_last", vx)?;
        if rows != idx.len() || idx.iter().any(|&i| i >= n) {
            return Err(Error::shape(
                "pick_last",
                format!("{} indices into {:?}", idx.len(), vx.shape()),
            ));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| vx.data()[r * n + i]).collect();
        let idx = idx.to_vec();
        Ok(self.push(
            "pick_last",
            Tensor::from_vec(data),
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                for (r, (&i, &gv)) in idx.iter().zip(args.grad.data()).enumerate() {
                    g.data_mut()[r * n + i] += gv;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Flat gather: `out[j] = x.flat[idx[j]]`.
    pub fn index_select(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.numel()) {
            return Err(Error::shape(
                "index_select",
                format!("index {bad} out of {}", vx.numel()),
            ));
        }
        let data = idx.iter().map(|&i| vx.data()[i]).collect();
        Ok(self.push(
            "index_select",
            Tensor::from_vec(data),
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                for (&i, &gv) in idx.iter().zip(args.grad.data()) {
                    g.data_mut()[i] += gv;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Flat scatter-add into `len` zeros: `out[idx[j]] += x[j]`.
    pub fn scatter(&mut self, x: Var, idx: Arc<Vec<usize>>, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.numel() != idx.len() || idx.iter().any(|&i| i >= len) {
            return Err(Error::shape(
                "scatter",
                format!("{} values, {} indices into {len}", vx.numel(), idx.len()),
            ));
        }
        let mut out = vec![0.0; len];
        for (&i, &v) in idx.iter().zip(vx.data()) {
            out[i] += v;
        }
        Ok(self.push(
            "scatter",
            Tensor::from_vec(out),
            &[x],
            Box::new(move |args| {
                let g: Vec<f64> = idx.iter().map(|&i| args.grad.data()[i]).collect();
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    /// `out[s] = Σ_{j : seg[j] = s} x[j]` for a flat `x`.
    pub fn segment_sum(&mut self, x: Var, seg: Arc<Vec<usize>>, segments: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.numel() != seg.len() || seg.iter().any(|&s| s >= segments) {
            return Err(Error::shape(
                "segment_sum",
                format!("{} values, {} segment ids, {segments} segments", vx.numel(), seg.len()),
            ));
        }
        let mut out = vec![0.0; segments];
        for (&s, &v) in seg.iter().zip(vx.data()) {
            out[s] += v;
        }
        Ok(self.push(
            "segment_sum",
            Tensor::from_vec(out),
            &[x],
            Box::new(move |args| {
                let g: Vec<f64> = seg.iter().map(|&s| args.grad.data()[s]).collect();
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    // ---- shape --------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(
            "reshape",
            out,
            &[x],
            Box::new(|args| {
                vec![Some(
                    args.grad
                        .clone()
                        .reshaped(args.inputs[0].shape())
                        .expect("same size"),
                )]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(
            *xs.first()
                .ok_or_else(|| Error::shape("concat", "no inputs"))?,
        );
        if axis >= first.rank() {
            return Err(Error::shape("concat", format!("axis {axis} of {:?}", first.shape())));
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if s.len() != first.rank()
                || s[..axis] != first.shape()[..axis]
                || s[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} on axis {axis}", first.shape(), s),
                ));
            }
            widths.push(s[axis]);
        }
        let total: usize = widths.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                let block = w * inner;
                data.extend_from_slice(&self.value(x).data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "concat",
            out,
            xs,
            Box::new(move |args| {
                let mut parts: Vec<Vec<f64>> =
                    widths.iter().map(|w| Vec::with_capacity(outer * w * inner)).collect();
                let g = args.grad.data();
                let mut pos = 0;
                for _ in 0..outer {
                    for (p, &w) in parts.iter_mut().zip(&widths) {
                        let block = w * inner;
                        p.extend_from_slice(&g[pos..pos + block]);
                        pos += block;
                    }
                }
                parts
                    .into_iter()
                    .zip(&args.inputs)
                    .map(|(p, x)| Some(Tensor::new(x.shape().to_vec(), p).expect("shape")))
                    .collect()
            }),
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || start + len > vx.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, vx.shape()),
            ));
        }
        let outer: usize = vx.shape()[..axis].iter().product();
        let inner: usize = vx.shape()[axis + 1..].iter().product();
        let full = vx.shape()[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "narrow",
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                let src = args.grad.data();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g.data_mut()[base..base + len * inner]
                        .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `[b, ...] -> [b * k, ...]` with each leading slice repeated `k` times
    /// consecutively (row `b * k + j` is copy `j` of row `b`).
    pub fn repeat_rows(&mut self, x: Var, k: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() == 0 || k == 0 {
            return Err(Error::shape("repeat_rows", "needs rank >= 1 and k >= 1"));
        }
        let rows = vx.shape()[0];
        let width = vx.numel() / rows.max(1);
        let mut data = Vec::with_capacity(vx.numel() * k);
        for r in vx.data().chunks(width.max(1)).take(rows) {
            for _ in 0..k {
                data.extend_from_slice(r);
            }
        }
        let mut shape = vx.shape().to_vec();
        shape[0] = rows * k;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            "repeat_rows",
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                for (i, chunk) in args.grad.data().chunks(width.max(1)).enumerate() {
                    let r = i / k;
                    for (a, b) in g.data_mut()[r * width..(r + 1) * width].iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    // ---- dense algebra ------------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_kernel(va.data(), vb.data(), m, k, n))?;
        Ok(self.push(
            "matmul",
            out,
            &[a, b],
            Box::new(move |args| {
                let (av, bv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
                let ga = args.needs[0].then(|| {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    let row = |(i, out): (usize, &mut [f64])| {
                        let gr = &g[i * n..(i + 1) * n];
                        for (kk, o) in out.iter_mut().enumerate() {
                            *o = dot(gr, &bv[kk * n..(kk + 1) * n]);
                        }
                    };
                    if m * k * n >= PAR_THRESHOLD {
                        da.par_chunks_mut(k.max(1)).enumerate().for_each(row);
                    } else {
                        da.chunks_mut(k.max(1)).enumerate().for_each(row);
                    }
                    Tensor::new(vec![m, k], da).expect("shape")
                });
                let gb = args.needs[1].then(|| {
                    // dB = Aᵀ · dC, one output row per inner index
                    let mut db = vec![0.0; k * n];
                    let row = |(kk, out): (usize, &mut [f64])| {
                        for i in 0..m {
                            let a = av[i * k + kk];
                            if a != 0.0 {
                                axpy(out, a, &g[i * n..(i + 1) * n]);
                            }
                        }
                    };
                    if m * k * n >= PAR_THRESHOLD {
                        db.par_chunks_mut(n.max(1)).enumerate().for_each(row);
                    } else {
                        db.chunks_mut(n.max(1)).enumerate().for_each(row);
                    }
                    Tensor::new(vec![k, n], db).expect("shape")
                });
                vec![ga, gb]
            }),
        ))
    }

    /// 1-D cross-correlation. `x: [b, c_in, l]`, `w: [c_out, c_in, k]`,
    /// `bias: [c_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        let geom = ConvGeom::forward(vx.shape(), vw.shape(), vb.shape(), stride, padding)?;
        let out = conv1d_forward(vx.data(), vw.data(), vb.data(), &geom);
        let out = Tensor::new(vec![geom.batch, geom.c_out, geom.l_out], out)?;
        Ok(self.push(
            "conv1d",
            out,
            &[x, w, bias],
            Box::new(move |args| {
                let (gx, gw, gb) = conv1d_backward(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    args.grad.data(),
                    &geom,
                    args.needs[0],
                );
                vec![
                    gx.map(|d| Tensor::new(args.inputs[0].shape().to_vec(), d).expect("shape")),
                    Some(Tensor::new(args.inputs[1].shape().to_vec(), gw).expect("shape")),
                    Some(Tensor::from_vec(gb)),
                ]
            }),
        ))
    }

    /// Transposed 1-D convolution. `x: [b, c_in, l]`, `w: [c_in, c_out, k]`,
    /// output length `(l - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        let geom = ConvGeom::transposed(vx.shape(), vw.shape(), vb.shape(), stride, padding)?;
        let out = convt1d_forward(vx.data(), vw.data(), vb.data(), &geom);
        let out = Tensor::new(vec![geom.batch, geom.c_out, geom.l_out], out)?;
        Ok(self.push(
            "conv_transpose1d",
            out,
            &[x, w, bias],
            Box::new(move |args| {
                let (gx, gw, gb) = convt1d_backward(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    args.grad.data(),
                    &geom,
                    args.needs[0],
                );
                vec![
                    gx.map(|d| Tensor::new(args.inputs[0].shape().to_vec(), d).expect("shape")),
                    Some(Tensor::new(args.inputs[1].shape().to_vec(), gw).expect("shape")),
                    Some(Tensor::from_vec(gb)),
                ]
            }),
        ))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, out): (usize, &mut [f64])| {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                axpy(out, av, &b[kk * n..(kk + 1) * n]);
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n.max(1)).enumerate().for_each(row);
    } else {
        c.chunks_mut(n.max(1)).enumerate().for_each(row);
    }
    c
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    l_in: usize,
    l_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn forward(
        x: &[usize],
        w: &[usize],
        b: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if x.len() != 3 || w.len() != 3 || b.len() != 1 || w[1] != x[1] || b[0] != w[0] || stride == 0
        {
            return Err(Error::shape(
                "conv1d",
                format!("x {x:?}, w {w:?}, bias {b:?}, stride {stride}"),
            ));
        }
        let padded = x[2] + 2 * padding;
        if padded < w[2] {
            return Err(Error::shape("conv1d", format!("kernel {} longer than input {padded}", w[2])));
        }
        Ok(ConvGeom {
            batch: x[0],
            c_in: x[1],
            c_out: w[0],
            l_in: x[2],
            l_out: (padded - w[2]) / stride + 1,
            k: w[2],
            stride,
            padding,
        })
    }

    fn transposed(
        x: &[usize],
        w: &[usize],
        b: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if x.len() != 3 || w.len() != 3 || b.len() != 1 || w[0] != x[1] || b[0] != w[1] || stride == 0
        {
            return Err(Error::shape(
                "conv_transpose1d",
                format!("x {x:?}, w {w:?}, bias {b:?}, stride {stride}"),
            ));
        }
        let full = (x[2].max(1) - 1) * stride + w[2];
        if full < 2 * padding + 1 {
            return Err(Error::shape("conv_transpose1d", "padding leaves no output"));
        }
        Ok(ConvGeom {
            batch: x[0],
            c_in: x[1],
            c_out: w[1],
            l_in: x[2],
            l_out: full - 2 * padding,
            k: w[2],
            stride,
            padding,
        })
    }

    /// Output positions `lo` for tap `k` such that `lo * s + k - p` lies in
    /// `[0, l_in)`.
    fn valid_outputs(&self, k: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo_min = if p > k { (p - k).div_ceil(s) } else { 0 };
        // lo * s + k - p <= l_in - 1
        let lim = self.l_in + p;
        let lo_max = if lim > k { ((lim - k - 1) / s + 1).min(self.l_out) } else { 0 };
        lo_min..lo_max.max(lo_min)
    }
}

fn for_each_batch<F>(geom: &ConvGeom, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if chunk == 0 {
        return;
    }
    let work = geom.batch * geom.c_in * geom.c_out * geom.k * geom.l_out.max(geom.l_in);
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(chunk).enumerate().for_each(|(b, o)| f(b, o));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(b, o)| f(b, o));
    }
}

/// Per-batch partial sums reduced in batch order, independent of threading.
fn batch_partials<F>(geom: &ConvGeom, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let work = geom.batch * geom.c_in * geom.c_out * geom.k * geom.l_out.max(geom.l_in);
    let partials: Vec<Vec<f64>> = if work >= PAR_THRESHOLD {
        (0..geom.batch)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; len];
                f(b, &mut acc);
                acc
            })
            .collect()
    } else {
        (0..geom.batch)
            .map(|b| {
                let mut acc = vec![0.0; len];
                f(b, &mut acc);
                acc
            })
            .collect()
    };
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.l_out];
    for_each_batch(g, &mut out, g.c_out * g.l_out, |b, yb| {
        let xb = &x[b * g.c_in * g.l_in..(b + 1) * g.c_in * g.l_in];
        for co in 0..g.c_out {
            let yrow = &mut yb[co * g.l_out..(co + 1) * g.l_out];
            yrow.fill(bias[co]);
            for ci in 0..g.c_in {
                let xrow = &xb[ci * g.l_in..(ci + 1) * g.l_in];
                for k in 0..g.k {
                    let wv = w[(co * g.c_in + ci) * g.k + k];
                    for lo in g.valid_outputs(k) {
                        yrow[lo] += wv * xrow[lo * g.stride + k - g.padding];
                    }
                }
            }
        }
    });
    out
}

fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let gx = need_x.then(|| {
        let mut gx = vec![0.0; g.batch * g.c_in * g.l_in];
        for_each_batch(g, &mut gx, g.c_in * g.l_in, |b, gxb| {
            let gyb = &gy[b * g.c_out * g.l_out..(b + 1) * g.c_out * g.l_out];
            for co in 0..g.c_out {
                let grow = &gyb[co * g.l_out..(co + 1) * g.l_out];
                for ci in 0..g.c_in {
                    let xrow = &mut gxb[ci * g.l_in..(ci + 1) * g.l_in];
                    for k in 0..g.k {
                        let wv = w[(co * g.c_in + ci) * g.k + k];
                        for lo in g.valid_outputs(k) {
                            xrow[lo * g.stride + k - g.padding] += wv * grow[lo];
                        }
                    }
                }
            }
        });
        gx
    });
    let gw = batch_partials(g, g.c_out * g.c_in * g.k, |b, acc| {
        let xb = &x[b * g.c_in * g.l_in..(b + 1) * g.c_in * g.l_in];
        let gyb = &gy[b * g.c_out * g.l_out..(b + 1) * g.c_out * g.l_out];
        for co in 0..g.c_out {
            let grow = &gyb[co * g.l_out..(co + 1) * g.l_out];
            for ci in 0..g.c_in {
                let xrow = &xb[ci * g.l_in..(ci + 1) * g.l_in];
                for k in 0..g.k {
                    let mut s = 0.0;
                    for lo in g.valid_outputs(k) {
                        s += grow[lo] * xrow[lo * g.stride + k - g.padding];
                    }
                    acc[(co * g.c_in + ci) * g.k + k] += s;
                }
            }
        }
    });
    let mut gb = vec![0.0; g.c_out];
    for (i, row) in gy.chunks(g.l_out.max(1)).enumerate() {
        gb[i % g.c_out] += row.iter().sum::<f64>();
    }
    (gx, gw, gb)
}

fn convt1d_forward(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    // Output index o = li * s + k - p; the valid `li` for a tap are exactly
    // the valid `lo` of the matching forward convolution with roles swapped.
    let adjoint = g.adjoint();
    let mut out = vec![0.0; g.batch * g.c_out * g.l_out];
    for_each_batch(g, &mut out, g.c_out * g.l_out, |b, yb| {
        let xb = &x[b * g.c_in * g.l_in..(b + 1) * g.c_in * g.l_in];
        for co in 0..g.c_out {
            yb[co * g.l_out..(co + 1) * g.l_out].fill(bias[co]);
        }
        for ci in 0..g.c_in {
            let xrow = &xb[ci * g.l_in..(ci + 1) * g.l_in];
            for co in 0..g.c_out {
                let yrow = &mut yb[co * g.l_out..(co + 1) * g.l_out];
                for k in 0..g.k {
                    let wv = w[(ci * g.c_out + co) * g.k + k];
                    for li in adjoint.valid_outputs(k) {
                        yrow[li * g.stride + k - g.padding] += wv * xrow[li];
                    }
                }
            }
        }
    });
    out
}

fn convt1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let adjoint = g.adjoint();
    let gx = need_x.then(|| {
        let mut gx = vec![0.0; g.batch * g.c_in * g.l_in];
        for_each_batch(g, &mut gx, g.c_in * g.l_in, |b, gxb| {
            let gyb = &gy[b * g.c_out * g.l_out..(b + 1) * g.c_out * g.l_out];
            for ci in 0..g.c_in {
                let xrow = &mut gxb[ci * g.l_in..(ci + 1) * g.l_in];
                for co in 0..g.c_out {
                    let grow = &gyb[co * g.l_out..(co + 1) * g.l_out];
                    for k in 0..g.k {
                        let wv = w[(ci * g.c_out + co) * g.k + k];
                        for li in adjoint.valid_outputs(k) {
                            xrow[li] += wv * grow[li * g.stride + k - g.padding];
                        }
                    }
                }
            }
        });
        gx
    });
    let gw = batch_partials(g, g.c_in * g.c_out * g.k, |b, acc| {
        let xb = &x[b * g.c_in * g.l_in..(b + 1) * g.c_in * g.l_in];
        let gyb = &gy[b * g.c_out * g.l_out..(b + 1) * g.c_out * g.l_out];
        for ci in 0..g.c_in {
            let xrow = &xb[ci * g.l_in..(ci + 1) * g.l_in];
            for co in 0..g.c_out {
                let grow = &gyb[co * g.l_out..(co + 1) * g.l_out];
                for k in 0..g.k {
                    let mut s = 0.0;
                    for li in adjoint.valid_outputs(k) {
                        s += xrow[li] * grow[li * g.stride + k - g.padding];
                    }
                    acc[(ci * g.c_out + co) * g.k + k] += s;
                }
            }
        }
    });
    let mut gb = vec![0.0; g.c_out];
    for (i, row) in gy.chunks(g.l_out.max(1)).enumerate() {
        gb[i % g.c_out] += row.iter().sum::<f64>();
    }
    (gx, gw, gb)
}

impl ConvGeom {
    /// Geometry of the forward convolution whose input is this transposed
    /// convolution's output; its valid output range per tap is the valid
    /// input range here.
    fn adjoint(&self) -> ConvGeom {
        ConvGeom {
            batch: self.batch,
            c_in: self.c_out,
            c_out: self.c_in,
            l_in: self.l_out,
            l_out: self.l_in,
            k: self.k,
            stride: self.stride,
            padding: self.padding,
        }
    }
}
