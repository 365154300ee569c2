//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Exactly the primitives the autoencoder needs: strided 3×3
//! convolution, its transpose, a dense layer, ReLU, Tanh, reshape, MSE
//! loss, and the batch-statistics scalar used for attention maps.
//! Forward evaluation is eager; `backward` replays the tape in reverse
//! and accumulates gradients additively at fan-out points.
//!
//! Convolutions lower to im2col plus a matrix product, which is where
//! almost all training time goes; the backward passes reuse the same
//! lowering so no per-op intermediate buffers are saved on the tape.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    // output_padding only affects the forward extent; the backward pass
    // reads geometry from the gradient's shape, so it is not stored.
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    MseLoss {
        x: Var,
        y: Var,
    },
    LatentStat {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list: ordered record of the forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients are only tracked through
    /// nodes whose inputs (transitively) include a `requires_grad`
    /// leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Strided 3×3 cross-correlation: `x[N,C,H,W] * w[F,C,3,3] + b[F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = conv2d_raw(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Transposed 3×3 convolution (adjoint of `conv2d` up to bias):
    /// `x[N,Cin,H,W] * w[Cin,Cout,3,3] + b[Cout]`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let y = conv2d_transpose_raw(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            padding,
            output_padding,
        )?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            y,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Fully connected layer: `x[N,In] · w[Out,In]ᵀ + b[Out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = dense_raw(self.value(x), self.value(w), self.value(b))?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(y, Op::Dense { x, w, b }, rg))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Tensor::from_vec(
            v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect(),
            v.shape(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Relu { x }, rg)
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Tensor::from_vec(v.data().iter().map(|&a| a.tanh()).collect(), v.shape())
            .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Tanh { x }, rg)
    }

    /// Shape reinterpretation; gradient flows through unchanged.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    /// Mean over all elements of the squared difference.
    pub fn mse_loss(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.shape() != yv.shape() {
            return Err(Error::shape(format!(
                "mse_loss: shapes {:?} and {:?} differ",
                xv.shape(),
                yv.shape()
            )));
        }
        let n = xv.len() as f64;
        let s: f64 = xv
            .data()
            .iter()
            .zip(yv.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(Tensor::scalar(s / n), Op::MseLoss { x, y }, rg))
    }

    /// Batch-statistics scalar of a feature matrix `x[N,D]`:
    /// ‖mean‖² + trace of the unbiased covariance. Needs N ≥ 2.
    pub fn latent_stat(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(Error::shape(format!(
                "latent_stat expects a 2-D feature matrix, got {:?}",
                v.shape()
            )));
        }
        let (n, d) = (v.shape()[0], v.shape()[1]);
        if n < 2 {
            return Err(Error::input(
                "latent_stat needs at least 2 rows for the covariance term",
            ));
        }
        let data = v.data();
        let mut scalar = 0.0;
        for j in 0..d {
            let mut mu = 0.0;
            for i in 0..n {
                mu += data[i * d + j];
            }
            mu /= n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let c = data[i * d + j] - mu;
                var += c * c;
            }
            var /= (n - 1) as f64;
            scalar += mu * mu + var;
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(scalar), Op::LatentStat { x }, rg))
    }

    /// Backpropagates from a scalar node. Returns one gradient slot per
    /// tape node; slots stay `None` for nodes gradients never reach.
    pub fn backward(&self, from: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(from).len() != 1 {
            return Err(Error::input(
                "backward starts from a scalar (single-element) node",
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[from.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=from.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            // Re-stash so callers can read gradients of intermediates.
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (dx, dw, db) = conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        *stride,
                        *padding,
                        self.needs(*x),
                        self.needs(*w),
                    );
                    self.accumulate_opt(&mut grads, *x, dx);
                    self.accumulate_opt(&mut grads, *w, dw);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::ConvTranspose2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (dx, dw, db) = conv2d_transpose_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        *stride,
                        *padding,
                        self.needs(*x),
                        self.needs(*w),
                    );
                    self.accumulate_opt(&mut grads, *x, dx);
                    self.accumulate_opt(&mut grads, *w, dw);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = dense_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        self.needs(*x),
                        self.needs(*w),
                    );
                    self.accumulate_opt(&mut grads, *x, dx);
                    self.accumulate_opt(&mut grads, *w, dw);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let dx = Tensor::from_vec(
                        xv.data()
                            .iter()
                            .zip(gout.data())
                            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
                            .collect(),
                        xv.shape(),
                    )
                    .expect("same shape");
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Tanh { x } => {
                    let yv = &node.value;
                    let dx = Tensor::from_vec(
                        yv.data()
                            .iter()
                            .zip(gout.data())
                            .map(|(&y, &g)| g * (1.0 - y * y))
                            .collect(),
                        yv.shape(),
                    )
                    .expect("same shape");
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Reshape { x } => {
                    let dx = gout
                        .reshape(self.value(*x).shape())
                        .expect("reshape gradient");
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MseLoss { x, y } => {
                    let (xv, yv) = (self.value(*x), self.value(*y));
                    let g = gout.data()[0];
                    let scale = 2.0 * g / xv.len() as f64;
                    if self.nodes[x.0].requires_grad {
                        let dx = Tensor::from_vec(
                            xv.data()
                                .iter()
                                .zip(yv.data())
                                .map(|(a, b)| scale * (a - b))
                                .collect(),
                            xv.shape(),
                        )
                        .expect("same shape");
                        self.accumulate(&mut grads, *x, dx);
                    }
                    if self.nodes[y.0].requires_grad {
                        let dy = Tensor::from_vec(
                            xv.data()
                                .iter()
                                .zip(yv.data())
                                .map(|(a, b)| -scale * (a - b))
                                .collect(),
                            yv.shape(),
                        )
                        .expect("same shape");
                        self.accumulate(&mut grads, *y, dy);
                    }
                }
                Op::LatentStat { x } => {
                    let xv = self.value(*x);
                    let (n, d) = (xv.shape()[0], xv.shape()[1]);
                    let g = gout.data()[0];
                    let data = xv.data();
                    let mut dx = vec![0.0; n * d];
                    for j in 0..d {
                        let mut mu = 0.0;
                        for i in 0..n {
                            mu += data[i * d + j];
                        }
                        mu /= n as f64;
                        // d(mu_j²)/dx_ij = 2·mu_j/N;
                        // d(var_j)/dx_ij = 2·(x_ij − mu_j)/(N−1).
                        for i in 0..n {
                            dx[i * d + j] = g
                                * (2.0 * mu / n as f64
                                    + 2.0 * (data[i * d + j] - mu) / (n - 1) as f64);
                        }
                    }
                    let dx = Tensor::from_vec(dx, xv.shape()).expect("same shape");
                    self.accumulate(&mut grads, *x, dx);
                }
            }
            grads[idx] = Some(gout);
        }
        Ok(grads)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_opt(&self, grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
        if let Some(g) = g {
            self.accumulate(grads, v, g);
        }
    }
}

/// Conv output extent for one axis: floor((h + 2p − k)/s) + 1.
pub fn conv_out_extent(h: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = h + 2 * padding;
    if padded < k {
        return Err(Error::shape(format!(
            "input extent {h} with padding {padding} is smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Transposed-conv output extent: (h − 1)·s − 2p + k + output_padding.
pub fn conv_transpose_out_extent(
    h: usize,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if output_padding >= stride && output_padding != 0 {
        return Err(Error::config(format!(
            "output_padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    let grown = (h - 1) * stride + k + output_padding;
    if grown < 2 * padding + 1 {
        return Err(Error::shape(format!(
            "transposed conv collapses extent {h} to zero (stride {stride}, padding {padding})"
        )));
    }
    Ok(grown - 2 * padding)
}

const K: usize = 3;

fn check_conv_args(stride: usize, w: &Tensor) -> Result<()> {
    if stride == 0 {
        return Err(Error::config("stride must be ≥ 1"));
    }
    let ws = w.shape();
    if ws.len() != 4 || ws[2] != K || ws[3] != K {
        return Err(Error::shape(format!(
            "conv weights must be [·,·,3,3], got {ws:?}"
        )));
    }
    Ok(())
}

/// Unrolls one image `src[C,H,W]` into `cols[C·9, out_h·out_w]` for the
/// given conv geometry, zero-filling out-of-bounds taps.
#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    let l = out_h * out_w;
    debug_assert_eq!(cols.len(), c * K * K * l);
    cols.fill(0.0);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ki in 0..K {
            for kj in 0..K {
                let row = &mut cols[((ci * K + ki) * K + kj) * l..((ci * K + ki) * K + kj + 1) * l];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut row[oy * out_w..(oy + 1) * out_w];
                    for (ox, slot) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *slot = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds `cols` back into an image buffer.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    dst: &mut [f64],
) {
    let l = out_h * out_w;
    debug_assert_eq!(cols.len(), c * K * K * l);
    debug_assert_eq!(dst.len(), c * h * w);
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ki in 0..K {
            for kj in 0..K {
                let row = &cols[((ci * K + ki) * K + kj) * l..((ci * K + ki) * K + kj + 1) * l];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &row[oy * out_w..(oy + 1) * out_w];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Eager strided 3×3 cross-correlation over a batch.
pub fn conv2d_raw(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    check_conv_args(stride, w)?;
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape(format!("conv input must be [N,C,H,W], got {xs:?}")));
    }
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, wc) = (w.shape()[0], w.shape()[1]);
    if wc != c {
        return Err(Error::shape(format!(
            "conv input has {c} channels but weights expect {wc}"
        )));
    }
    if b.shape() != [f] {
        return Err(Error::shape(format!(
            "conv bias must be [{f}], got {:?}",
            b.shape()
        )));
    }
    let out_h = conv_out_extent(h, K, stride, padding)?;
    let out_w = conv_out_extent(wd, K, stride, padding)?;
    let l = out_h * out_w;
    let ck2 = c * K * K;

    let mut out = vec![0.0; n * f * l];
    let mut cols = vec![0.0; ck2 * l];
    for ni in 0..n {
        im2col(
            &x.data()[ni * c * h * wd..(ni + 1) * c * h * wd],
            c,
            h,
            wd,
            stride,
            padding,
            out_h,
            out_w,
            &mut cols,
        );
        let dst = &mut out[ni * f * l..(ni + 1) * f * l];
        matmul(w.data(), &cols, f, ck2, l, dst);
        for fi in 0..f {
            let bias = b.data()[fi];
            for v in &mut dst[fi * l..(fi + 1) * l] {
                *v += bias;
            }
        }
    }
    Tensor::from_vec(out, &[n, f, out_h, out_w])
}

/// Gradients of `conv2d_raw` w.r.t. input, weights, bias. Input and
/// weight gradients are skipped (None) when nothing upstream needs
/// them.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    padding: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let xs = x.shape();
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let f = w.shape()[0];
    let (out_h, out_w) = (gout.shape()[2], gout.shape()[3]);
    let l = out_h * out_w;
    let ck2 = c * K * K;

    let mut dx = if need_dx { vec![0.0; n * c * h * wd] } else { vec![] };
    let mut dw = vec![0.0; if need_dw { f * ck2 } else { 0 }];
    let mut db = vec![0.0; f];
    let mut cols = vec![0.0; ck2 * l];
    let mut dcols = vec![0.0; ck2 * l];
    let mut dw_one = vec![0.0; f * ck2];
    for ni in 0..n {
        let gslice = &gout.data()[ni * f * l..(ni + 1) * f * l];
        // Bias: sum over spatial positions.
        for fi in 0..f {
            db[fi] += gslice[fi * l..(fi + 1) * l].iter().sum::<f64>();
        }
        if need_dw {
            // dW += g · colsᵀ.
            im2col(
                &x.data()[ni * c * h * wd..(ni + 1) * c * h * wd],
                c,
                h,
                wd,
                stride,
                padding,
                out_h,
                out_w,
                &mut cols,
            );
            matmul_a_bt(gslice, &cols, f, l, ck2, &mut dw_one);
            for (a, b) in dw.iter_mut().zip(&dw_one) {
                *a += b;
            }
        }
        if need_dx {
            // dcols = Wᵀ · g, then scatter back.
            matmul_at_b(w.data(), gslice, ck2, f, l, &mut dcols);
            col2im(
                &dcols,
                c,
                h,
                wd,
                stride,
                padding,
                out_h,
                out_w,
                &mut dx[ni * c * h * wd..(ni + 1) * c * h * wd],
            );
        }
    }
    (
        need_dx.then(|| Tensor::from_vec(dx, xs).expect("dx shape")),
        need_dw.then(|| Tensor::from_vec(dw, w.shape()).expect("dw shape")),
        Tensor::from_vec(db, &[f]).expect("db shape"),
    )
}

/// Eager transposed 3×3 convolution over a batch. Weight layout is
/// `[Cin, Cout, 3, 3]`; with the same buffer a conv and its transpose
/// form an adjoint pair.
pub fn conv2d_transpose_raw(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    check_conv_args(stride, w)?;
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape(format!(
            "transposed conv input must be [N,C,H,W], got {xs:?}"
        )));
    }
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (wcin, cout) = (w.shape()[0], w.shape()[1]);
    if wcin != cin {
        return Err(Error::shape(format!(
            "transposed conv input has {cin} channels but weights expect {wcin}"
        )));
    }
    if b.shape() != [cout] {
        return Err(Error::shape(format!(
            "transposed conv bias must be [{cout}], got {:?}",
            b.shape()
        )));
    }
    let out_h = conv_transpose_out_extent(h, K, stride, padding, output_padding)?;
    let out_w = conv_transpose_out_extent(wd, K, stride, padding, output_padding)?;
    // The adjoint conv maps [cout, out_h, out_w] -> [cin, h, w]; its
    // im2col geometry must land back exactly on our input extents.
    if conv_out_extent(out_h, K, stride, padding)? != h
        || conv_out_extent(out_w, K, stride, padding)? != wd
    {
        return Err(Error::config(format!(
            "no valid adjoint geometry for input {h}×{wd} with stride {stride}, padding {padding}, output_padding {output_padding}"
        )));
    }
    let l = h * wd;
    let ck2 = cout * K * K;

    let mut out = vec![0.0; n * cout * out_h * out_w];
    let mut cols = vec![0.0; ck2 * l];
    for ni in 0..n {
        let xslice = &x.data()[ni * cin * l..(ni + 1) * cin * l];
        // cols = Wᵀ · x, then scatter into the larger output plane.
        matmul_at_b(w.data(), xslice, ck2, cin, l, &mut cols);
        let dst = &mut out[ni * cout * out_h * out_w..(ni + 1) * cout * out_h * out_w];
        col2im(&cols, cout, out_h, out_w, stride, padding, h, wd, dst);
        for co in 0..cout {
            let bias = b.data()[co];
            for v in &mut dst[co * out_h * out_w..(co + 1) * out_h * out_w] {
                *v += bias;
            }
        }
    }
    Tensor::from_vec(out, &[n, cout, out_h, out_w])
}

/// Gradients of `conv2d_transpose_raw` w.r.t. input, weights, bias.
#[allow(clippy::too_many_arguments)]
fn conv2d_transpose_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    padding: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let xs = x.shape();
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let cout = w.shape()[1];
    let (out_h, out_w) = (gout.shape()[2], gout.shape()[3]);
    let l = h * wd;
    let ck2 = cout * K * K;

    let mut dx = if need_dx { vec![0.0; n * cin * l] } else { vec![] };
    let mut dw = vec![0.0; if need_dw { cin * ck2 } else { 0 }];
    let mut db = vec![0.0; cout];
    let mut gcols = vec![0.0; ck2 * l];
    let mut dw_one = vec![0.0; cin * ck2];
    for ni in 0..n {
        let gslice = &gout.data()[ni * cout * out_h * out_w..(ni + 1) * cout * out_h * out_w];
        for co in 0..cout {
            db[co] += gslice[co * out_h * out_w..(co + 1) * out_h * out_w]
                .iter()
                .sum::<f64>();
        }
        // The forward scattered cols into the output; the reverse
        // gathers the output gradient back into column space.
        im2col(
            gslice, cout, out_h, out_w, stride, padding, h, wd, &mut gcols,
        );
        if need_dx {
            // dX = W · gcols.
            matmul(
                w.data(),
                &gcols,
                cin,
                ck2,
                l,
                &mut dx[ni * cin * l..(ni + 1) * cin * l],
            );
        }
        if need_dw {
            // dW += x · gcolsᵀ.
            let xslice = &x.data()[ni * cin * l..(ni + 1) * cin * l];
            matmul_a_bt(xslice, &gcols, cin, l, ck2, &mut dw_one);
            for (a, b) in dw.iter_mut().zip(&dw_one) {
                *a += b;
            }
        }
    }
    (
        need_dx.then(|| Tensor::from_vec(dx, xs).expect("dx shape")),
        need_dw.then(|| Tensor::from_vec(dw, w.shape()).expect("dw shape")),
        Tensor::from_vec(db, &[cout]).expect("db shape"),
    )
}

/// Eager dense layer `x[N,In] · w[Out,In]ᵀ + b[Out]`.
pub fn dense_raw(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::shape(format!(
            "dense expects 2-D input and weights, got {xs:?} and {ws:?}"
        )));
    }
    let (n, input_dim) = (xs[0], xs[1]);
    let (out_dim, w_in) = (ws[0], ws[1]);
    if w_in != input_dim {
        return Err(Error::shape(format!(
            "dense input dim {input_dim} does not match weight dim {w_in}"
        )));
    }
    if b.shape() != [out_dim] {
        return Err(Error::shape(format!(
            "dense bias must be [{out_dim}], got {:?}",
            b.shape()
        )));
    }
    let mut out = vec![0.0; n * out_dim];
    matmul_a_bt(x.data(), w.data(), n, input_dim, out_dim, &mut out);
    for row in out.chunks_mut(out_dim) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Tensor::from_vec(out, &[n, out_dim])
}

fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let (n, input_dim) = (x.shape()[0], x.shape()[1]);
    let out_dim = w.shape()[0];
    let dx = need_dx.then(|| {
        // dX = g · W.
        let mut dx = vec![0.0; n * input_dim];
        matmul(gout.data(), w.data(), n, out_dim, input_dim, &mut dx);
        Tensor::from_vec(dx, x.shape()).expect("dx shape")
    });
    let dw = need_dw.then(|| {
        // dW = gᵀ · X.
        let mut dw = vec![0.0; out_dim * input_dim];
        matmul_at_b(gout.data(), x.data(), out_dim, n, input_dim, &mut dw);
        Tensor::from_vec(dw, w.shape()).expect("dw shape")
    });
    // db = column sums of g.
    let mut db = vec![0.0; out_dim];
    for row in gout.data().chunks(out_dim) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    (dx, dw, Tensor::from_vec(db, &[out_dim]).expect("db shape"))
}

/// Central finite-difference gradient of a scalar function at `x`,
/// with step `h` per element. The oracle against which every analytic
/// backward pass is checked.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative elementwise deviation between an analytic gradient
/// and its finite-difference estimate. The denominator floors at 1e-3
/// so near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
