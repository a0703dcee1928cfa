//! Minimal reverse-mode autodiff over dense `f64` arrays.
//!
//! The denoiser and text encoder are small enough that a flat tape with an
//! op enum covers everything: no broadcasting rules beyond the handful of
//! patterns the model actually uses. Forward values are computed eagerly
//! with the deterministic kernels from [`crate::kernels`]; `backward` walks
//! the tape in reverse creation order.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix3, Ix4, IxDyn};

use crate::kernels::{
    avg_pool2, col2im3, im2col3, matmul, matmul_nt, matmul_tn, silu, silu_grad, softmax_rows,
    upsample2,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    /// `x (M×N) + b (N)` broadcast over rows.
    AddRowBias(Var, Var),
    /// `x (B,..) + p (..)` broadcast over the leading axis.
    AddBcast0(Var, Var),
    /// `x + c` for a constant array (no gradient into `c`).
    AddConst(Var),
    /// `(B,C,H,W) + (B,C)` broadcast over the spatial axes.
    AddChanVec(Var, Var),
    MatMul(Var, Var),
    /// `(B,m,k) · (B,k,n)`.
    BatchMatMul(Var, Var),
    /// `(B,m,k) · (B,n,k)ᵀ -> (B,m,n)`.
    BatchMatMulNT(Var, Var),
    /// Softmax over the last axis; node value is the softmax output.
    SoftmaxLast(Var),
    /// 3×3 pad-1 conv; `cols` caches per-sample im2col matrices.
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<Array2<f64>>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    /// Concatenate along axis 1 of `(B,C,H,W)`.
    ConcatChan(Var, Var),
    /// Concatenate along the last axis.
    ConcatLast(Var, Var),
    /// `(B,C,H,W) -> (B,H·W,C)`.
    SpatialToSeq(Var),
    /// `(B,N,C) -> (B,C,H,W)`.
    SeqToSpatial(Var, usize, usize),
    Reshape(Var),
    /// Row gather from an embedding table; gradient scatter-adds.
    Embed { table: Var, ids: Vec<usize> },
    /// Scalar sum of squares.
    SumSquares(Var),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        val.iter().next().copied().unwrap()
    }

    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(silu);
        self.push(v, Op::Silu(a))
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = &self.nodes[b.0].value;
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            for (r, bb) in row.iter_mut().zip(bv.iter()) {
                *r += bb;
            }
        }
        self.push(out.into_dyn(), Op::AddRowBias(x, b))
    }

    pub fn add_bcast0(&mut self, x: Var, p: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let pv = &self.nodes[p.0].value;
        assert_eq!(&xv.shape()[1..], pv.shape(), "add_bcast0 shapes");
        let mut out = xv.clone();
        for mut sub in out.axis_iter_mut(Axis(0)) {
            sub += pv;
        }
        self.push(out, Op::AddBcast0(x, p))
    }

    pub fn add_const(&mut self, x: Var, c: &ArrayD<f64>) -> Var {
        let v = &self.nodes[x.0].value + c;
        self.push(v, Op::AddConst(x))
    }

    pub fn add_chan_vec(&mut self, x: Var, v: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let vv = self.nodes[v.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let (bs, c, h, w) = xv.dim();
        assert_eq!(vv.dim(), (bs, c), "add_chan_vec shapes");
        let mut out = xv.to_owned();
        for bi in 0..bs {
            for ci in 0..c {
                let add = vv[[bi, ci]];
                for yi in 0..h {
                    for xi in 0..w {
                        out[[bi, ci, yi, xi]] += add;
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::AddChanVec(x, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap().to_owned();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap().to_owned();
        let v = matmul(&av, &bv);
        self.push(v.into_dyn(), Op::MatMul(a, b))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let (bs, m, _k) = av.dim();
        let (_, _, n) = bv.dim();
        let mut out = ndarray::Array3::zeros((bs, m, n));
        for bi in 0..bs {
            let c = matmul(&av.index_axis(Axis(0), bi).to_owned(), &bv.index_axis(Axis(0), bi).to_owned());
            out.index_axis_mut(Axis(0), bi).assign(&c);
        }
        self.push(out.into_dyn(), Op::BatchMatMul(a, b))
    }

    pub fn batch_matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let (bs, m, _k) = av.dim();
        let (_, n, _) = bv.dim();
        let mut out = ndarray::Array3::zeros((bs, m, n));
        for bi in 0..bs {
            let c = matmul_nt(&av.index_axis(Axis(0), bi).to_owned(), &bv.index_axis(Axis(0), bi).to_owned());
            out.index_axis_mut(Axis(0), bi).assign(&c);
        }
        self.push(out.into_dyn(), Op::BatchMatMulNT(a, b))
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let shape = xv.shape().to_vec();
        let cols = *shape.last().unwrap();
        let rows = xv.len() / cols;
        let flat = xv.to_shape((rows, cols)).unwrap().to_owned();
        let y = softmax_rows(&flat);
        let y = y.into_shape(IxDyn(&shape)).unwrap();
        self.push(y, Op::SoftmaxLast(x))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let (bs, cin, h, w_) = xv.dim();
        let (cout, cin2, kh, kw) = wv.dim();
        assert_eq!((cin2, kh, kw), (cin, 3, 3), "conv2d kernel shape");
        let w2 = wv.to_shape((cout, cin * 9)).unwrap().to_owned();
        let mut out = Array4::zeros((bs, cout, h, w_));
        let mut cols = Vec::with_capacity(bs);
        for bi in 0..bs {
            let col = im2col3(&xv.index_axis(Axis(0), bi).to_owned());
            let y = matmul(&w2, &col); // (cout, h*w)
            for co in 0..cout {
                for yi in 0..h {
                    for xi in 0..w_ {
                        out[[bi, co, yi, xi]] = y[[co, yi * w_ + xi]] + bv[co];
                    }
                }
            }
            cols.push(col);
        }
        self.push(out.into_dyn(), Op::Conv2d { x, w, b, cols })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        self.push(avg_pool2(&xv).into_dyn(), Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        self.push(upsample2(&xv).into_dyn(), Op::Upsample2(x))
    }

    pub fn concat_chan(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        let v = ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).unwrap();
        self.push(v.into_dyn(), Op::ConcatChan(a, b))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let last = av.ndim() - 1;
        let v = ndarray::concatenate(Axis(last), &[av.view(), bv.view()]).unwrap();
        self.push(v.as_standard_layout().to_owned(), Op::ConcatLast(a, b))
    }

    pub fn spatial_to_seq(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (bs, c, h, w) = xv.dim();
        let mut out = ndarray::Array3::zeros((bs, h * w, c));
        for bi in 0..bs {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        out[[bi, yi * w + xi, ci]] = xv[[bi, ci, yi, xi]];
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::SpatialToSeq(x))
    }

    pub fn seq_to_spatial(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let (bs, n, c) = xv.dim();
        assert_eq!(n, h * w, "seq_to_spatial size");
        let mut out = Array4::zeros((bs, c, h, w));
        for bi in 0..bs {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        out[[bi, ci, yi, xi]] = xv[[bi, yi * w + xi, ci]];
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::SeqToSpatial(x, h, w))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.nodes[x.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape(IxDyn(shape))
            .unwrap();
        self.push(v, Op::Reshape(x))
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.nodes[table.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let d = tv.dim().1;
        let mut out = Array2::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&tv.row(id));
        }
        self.push(out.into_dyn(), Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        self.push(Array1::from(vec![s]).into_dyn(), Op::SumSquares(x))
    }

    /// Replace a node's value in place. Only legal at an interception seam,
    /// before any dependent node exists; gradients through the replaced
    /// node are not meaningful afterwards (interception is inference-only).
    pub fn replace_value(&mut self, v: Var, value: ArrayD<f64>) -> crate::error::Result<()> {
        if self.nodes[v.0].value.shape() != value.shape() {
            return Err(crate::error::Error::ContractViolation(format!(
                "logit replacement changed shape {:?} -> {:?}",
                self.nodes[v.0].value.shape(),
                value.shape()
            )));
        }
        self.nodes[v.0].value = value;
        Ok(())
    }

    /// Linear layer over the last axis of `(B,N,Cin)`: `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xshape = self.value(x).shape().to_vec();
        let cin = *xshape.last().unwrap();
        let rows: usize = xshape[..xshape.len() - 1].iter().product();
        let flat = self.reshape(x, &[rows, cin]);
        let mut y = self.matmul(flat, w);
        if let Some(b) = b {
            y = self.add_row_bias(y, b);
        }
        let cout = self.value(y).shape()[1];
        let mut out_shape = xshape;
        *out_shape.last_mut().unwrap() = cout;
        self.reshape(y, &out_shape)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Grads {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array1::from(vec![1.0]).into_dyn());

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.mapv(|v| -v));
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    accumulate(&mut grads, a, g.mapv(|v| v * c));
                }
                Op::Silu(a) => {
                    let a = *a;
                    let gx = &g * &self.nodes[a.0].value.mapv(silu_grad);
                    accumulate(&mut grads, a, gx);
                }
                Op::AddRowBias(x, b) => {
                    let (x, b) = (*x, *b);
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let gb = g2.sum_axis(Axis(0));
                    accumulate(&mut grads, x, g.clone());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::AddBcast0(x, p) => {
                    let (x, p) = (*x, *p);
                    let gp = g.sum_axis(Axis(0));
                    accumulate(&mut grads, x, g.clone());
                    accumulate(&mut grads, p, gp);
                }
                Op::AddConst(x) => {
                    let x = *x;
                    accumulate(&mut grads, x, g);
                }
                Op::AddChanVec(x, v) => {
                    let (x, v) = (*x, *v);
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let gv = g4.sum_axis(Axis(3)).sum_axis(Axis(2));
                    accumulate(&mut grads, x, g.clone());
                    accumulate(&mut grads, v, gv.into_dyn());
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let gc = g.view().into_dimensionality::<Ix2>().unwrap().to_owned();
                    let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap().to_owned();
                    let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap().to_owned();
                    accumulate(&mut grads, a, matmul_nt(&gc, &bv).into_dyn());
                    accumulate(&mut grads, b, matmul_tn(&av, &gc).into_dyn());
                }
                Op::BatchMatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let gc = g.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let bs = av.dim().0;
                    let mut ga = ndarray::Array3::zeros(av.dim());
                    let mut gb = ndarray::Array3::zeros(bv.dim());
                    for bi in 0..bs {
                        let gcb = gc.index_axis(Axis(0), bi).to_owned();
                        let ab = av.index_axis(Axis(0), bi).to_owned();
                        let bb = bv.index_axis(Axis(0), bi).to_owned();
                        ga.index_axis_mut(Axis(0), bi).assign(&matmul_nt(&gcb, &bb));
                        gb.index_axis_mut(Axis(0), bi).assign(&matmul_tn(&ab, &gcb));
                    }
                    accumulate(&mut grads, a, ga.into_dyn());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::BatchMatMulNT(a, b) => {
                    let (a, b) = (*a, *b);
                    let gc = g.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                    let bs = av.dim().0;
                    let mut ga = ndarray::Array3::zeros(av.dim());
                    let mut gb = ndarray::Array3::zeros(bv.dim());
                    for bi in 0..bs {
                        let gcb = gc.index_axis(Axis(0), bi).to_owned();
                        let ab = av.index_axis(Axis(0), bi).to_owned();
                        let bb = bv.index_axis(Axis(0), bi).to_owned();
                        ga.index_axis_mut(Axis(0), bi).assign(&matmul(&gcb, &bb));
                        gb.index_axis_mut(Axis(0), bi).assign(&matmul_tn(&gcb, &ab));
                    }
                    accumulate(&mut grads, a, ga.into_dyn());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::SoftmaxLast(x) => {
                    let x = *x;
                    let y = &self.nodes[idx].value;
                    let cols = *y.shape().last().unwrap();
                    let rows = y.len() / cols;
                    let yf = y.to_shape((rows, cols)).unwrap().to_owned();
                    let gf = g.to_shape((rows, cols)).unwrap().to_owned();
                    let mut gx = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let dot: f64 = (0..cols).map(|c| gf[[r, c]] * yf[[r, c]]).sum();
                        for c in 0..cols {
                            gx[[r, c]] = yf[[r, c]] * (gf[[r, c]] - dot);
                        }
                    }
                    let gx = gx.into_shape(IxDyn(y.shape())).unwrap();
                    accumulate(&mut grads, x, gx);
                }
                Op::Conv2d { x, w, b, cols } => {
                    let (x, w, b) = (*x, *w, *b);
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                    let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                    let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                    let (bs, cin, h, w_) = xv.dim();
                    let cout = wv.dim().0;
                    let w2 = wv.to_shape((cout, cin * 9)).unwrap().to_owned();
                    let mut gw2 = Array2::zeros((cout, cin * 9));
                    let mut gb = Array1::zeros(cout);
                    let mut gx = Array4::zeros((bs, cin, h, w_));
                    for bi in 0..bs {
                        let gyb = g4
                            .index_axis(Axis(0), bi)
                            .to_shape((cout, h * w_))
                            .unwrap()
                            .to_owned();
                        gw2 += &matmul_nt(&gyb, &cols[bi]);
                        for co in 0..cout {
                            gb[co] += gyb.row(co).sum();
                        }
                        let gcols = matmul_tn(&w2, &gyb);
                        gx.index_axis_mut(Axis(0), bi)
                            .assign(&col2im3(&gcols, cin, h, w_));
                    }
                    let gw = gw2.into_shape((cout, cin, 3, 3)).unwrap();
                    accumulate(&mut grads, x, gx.into_dyn());
                    accumulate(&mut grads, w, gw.into_dyn());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::AvgPool2(x) => {
                    let x = *x;
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let (bs, c, h2, w2) = g4.dim();
                    let mut gx = Array4::zeros((bs, c, h2 * 2, w2 * 2));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for yi in 0..h2 {
                                for xi in 0..w2 {
                                    let v = g4[[bi, ci, yi, xi]] * 0.25;
                                    gx[[bi, ci, 2 * yi, 2 * xi]] = v;
                                    gx[[bi, ci, 2 * yi, 2 * xi + 1]] = v;
                                    gx[[bi, ci, 2 * yi + 1, 2 * xi]] = v;
                                    gx[[bi, ci, 2 * yi + 1, 2 * xi + 1]] = v;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, gx.into_dyn());
                }
                Op::Upsample2(x) => {
                    let x = *x;
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let (bs, c, h2, w2) = g4.dim();
                    let mut gx = Array4::zeros((bs, c, h2 / 2, w2 / 2));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for yi in 0..h2 {
                                for xi in 0..w2 {
                                    gx[[bi, ci, yi / 2, xi / 2]] += g4[[bi, ci, yi, xi]];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, gx.into_dyn());
                }
                Op::ConcatChan(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.nodes[a.0].value.shape()[1];
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let ga = g4.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                    let gb = g4.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                    accumulate(&mut grads, a, ga.into_dyn());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::ConcatLast(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = *self.nodes[a.0].value.shape().last().unwrap();
                    let last = Axis(g.ndim() - 1);
                    let ga = g.slice_axis(last, ndarray::Slice::from(..na)).to_owned();
                    let gb = g
                        .slice_axis(last, ndarray::Slice::from(na as isize..))
                        .to_owned();
                    accumulate(&mut grads, a, ga.as_standard_layout().to_owned());
                    accumulate(&mut grads, b, gb.as_standard_layout().to_owned());
                }
                Op::SpatialToSeq(x) => {
                    let x = *x;
                    let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                    let xs = self.nodes[x.0].value.shape();
                    let (bs, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let mut gx = Array4::zeros((bs, c, h, w));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for yi in 0..h {
                                for xi in 0..w {
                                    gx[[bi, ci, yi, xi]] = g3[[bi, yi * w + xi, ci]];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, gx.into_dyn());
                }
                Op::SeqToSpatial(x, h, w) => {
                    let (x, h, w) = (*x, *h, *w);
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let (bs, c, _, _) = g4.dim();
                    let mut gx = ndarray::Array3::zeros((bs, h * w, c));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for yi in 0..h {
                                for xi in 0..w {
                                    gx[[bi, yi * w + xi, ci]] = g4[[bi, ci, yi, xi]];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, gx.into_dyn());
                }
                Op::Reshape(x) => {
                    let x = *x;
                    let target = self.nodes[x.0].value.shape().to_vec();
                    let gx = g
                        .as_standard_layout()
                        .to_owned()
                        .into_shape(IxDyn(&target))
                        .unwrap();
                    accumulate(&mut grads, x, gx);
                }
                Op::Embed { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let tshape = self.nodes[table.0].value.shape();
                    let mut gt = Array2::zeros((tshape[0], tshape[1]));
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g2.row(i);
                    }
                    accumulate(&mut grads, table, gt.into_dyn());
                }
                Op::SumSquares(x) => {
                    let x = *x;
                    let gs = g.iter().next().copied().unwrap();
                    let gx = self.nodes[x.0].value.mapv(|v| 2.0 * v * gs);
                    accumulate(&mut grads, x, gx);
                }
            }
        }

        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}
