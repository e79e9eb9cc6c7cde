//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of a forward pass; [`Var::backward`]
//! then walks the record once in reverse and accumulates gradients for every
//! node. Operations capture the (cloned) values they need, so the backward
//! closures never touch the tape itself.

use std::cell::RefCell;

use super::mat::Mat;

type BackFn = Box<dyn Fn(&Mat) -> Vec<(usize, Mat)>>;

struct Node {
    value: Mat,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

/// Gradients keyed by tape index, produced by [`Var::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, var: Var<'_>) -> Option<&Mat> {
        self.grads.get(var.idx).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, back: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    /// Introduces a differentiable leaf (a parameter or an input we want
    /// gradients for).
    pub fn leaf(&self, value: Mat) -> Var<'_> {
        self.push(value, None)
    }

    /// Introduces a constant; gradients still flow *to* it (it is a leaf),
    /// callers simply never read them.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, None)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Mat {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.cols()
    }

    pub fn scalar(&self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value.scalar()
    }

    fn unary(&self, value: Mat, back: impl Fn(&Mat) -> Mat + 'static) -> Var<'t> {
        let parent = self.idx;
        self.tape.push(value, Some(Box::new(move |g| vec![(parent, back(g))])))
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let value = a.matmul(&b);
        let (pa, pb) = (self.idx, other.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| {
                vec![(pa, g.matmul(&b.transpose())), (pb, a.transpose().matmul(g))]
            })),
        )
    }

    /// `self @ other^T` without materializing the transpose on the tape.
    pub fn matmul_nt(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let value = a.matmul(&b.transpose());
        let (pa, pb) = (self.idx, other.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| {
                vec![(pa, g.matmul(&b)), (pb, g.transpose().matmul(&a))]
            })),
        )
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let value = self.value().add(&other.value());
        let (pa, pb) = (self.idx, other.idx);
        self.tape
            .push(value, Some(Box::new(move |g| vec![(pa, g.clone()), (pb, g.clone())])))
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let value = self.value().sub(&other.value());
        let (pa, pb) = (self.idx, other.idx);
        self.tape
            .push(value, Some(Box::new(move |g| vec![(pa, g.clone()), (pb, g.scale(-1.0))])))
    }

    pub fn hadamard(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let value = a.hadamard(&b);
        let (pa, pb) = (self.idx, other.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| vec![(pa, g.hadamard(&b)), (pb, g.hadamard(&a))])),
        )
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(self.value().scale(s), move |g| g.scale(s))
    }

    pub fn add_const(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + c), |g| g.clone())
    }

    /// Adds a `1 x cols` bias row to every row of `self`.
    pub fn add_row_broadcast(&self, bias: Var<'t>) -> Var<'t> {
        let x = self.value();
        let b = bias.value();
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(b.cols(), x.cols(), "bias width mismatch");
        let value = Mat::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) + b.get(0, c));
        let (px, pb) = (self.idx, bias.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| {
                let mut db = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        db.set(0, c, db.get(0, c) + g.get(r, c));
                    }
                }
                vec![(px, g.clone()), (pb, db)]
            })),
        )
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let y = self.value().map(sigmoid_scalar);
        let y2 = y.clone();
        self.unary(y, move |g| g.zip(&y2, |gv, yv| gv * yv * (1.0 - yv)))
    }

    /// SiLU activation `x * sigmoid(x)`; smooth everywhere, which keeps the
    /// finite-difference checks well behaved.
    pub fn silu(&self) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| v * sigmoid_scalar(v));
        self.unary(value, move |g| {
            g.zip(&x, |gv, xv| {
                let s = sigmoid_scalar(xv);
                gv * (s * (1.0 + xv * (1.0 - s)))
            })
        })
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&self) -> Var<'t> {
        let x = self.value();
        let mut y = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                y.set(r, c, e / z);
            }
        }
        let yc = y.clone();
        self.unary(y, move |g| {
            let mut dx = Mat::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let dot: f64 =
                    g.row(r).iter().zip(yc.row(r)).map(|(gv, yv)| gv * yv).sum();
                for c in 0..g.cols() {
                    dx.set(r, c, yc.get(r, c) * (g.get(r, c) - dot));
                }
            }
            dx
        })
    }

    /// Per-row layer normalization with learned scale and shift.
    #[allow(clippy::needless_range_loop)]
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Var<'t> {
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        let n = x.cols();
        assert_eq!(gm.cols(), n);
        assert_eq!(bt.cols(), n);
        let mut xhat = Mat::zeros(x.rows(), n);
        let mut inv_std = vec![0.0; x.rows()];
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean: f64 = row.iter().sum::<f64>() / n as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                xhat.set(r, c, (row[c] - mean) * is);
            }
        }
        let value = Mat::from_fn(x.rows(), n, |r, c| xhat.get(r, c) * gm.get(0, c) + bt.get(0, c));
        let (px, pg, pb) = (self.idx, gamma.idx, beta.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| {
                let rows = g.rows();
                let mut dgamma = Mat::zeros(1, n);
                let mut dbeta = Mat::zeros(1, n);
                let mut dx = Mat::zeros(rows, n);
                for r in 0..rows {
                    let mut dxhat = vec![0.0; n];
                    for c in 0..n {
                        let gv = g.get(r, c);
                        dgamma.set(0, c, dgamma.get(0, c) + gv * xhat.get(r, c));
                        dbeta.set(0, c, dbeta.get(0, c) + gv);
                        dxhat[c] = gv * gm.get(0, c);
                    }
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat: f64 = dxhat
                        .iter()
                        .enumerate()
                        .map(|(c, d)| d * xhat.get(r, c))
                        .sum::<f64>()
                        / n as f64;
                    for c in 0..n {
                        let v = inv_std[r]
                            * (dxhat[c] - mean_dxhat - xhat.get(r, c) * mean_dxhat_xhat);
                        dx.set(r, c, v);
                    }
                }
                vec![(px, dx), (pg, dgamma), (pb, dbeta)]
            })),
        )
    }

    pub fn sum_all(&self) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = (x.rows(), x.cols());
        let value = Mat::from_vec(1, 1, vec![x.sum()]);
        self.unary(value, move |g| {
            let gs = g.scalar();
            Mat::from_fn(rows, cols, |_, _| gs)
        })
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = (self.rows() * self.cols()) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over rows, producing a `1 x cols` summary.
    pub fn rows_mean(&self) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = (x.rows(), x.cols());
        assert!(rows > 0, "rows_mean of empty matrix");
        let mut value = Mat::zeros(1, cols);
        for r in 0..rows {
            for c in 0..cols {
                value.set(0, c, value.get(0, c) + x.get(r, c));
            }
        }
        let value = value.scale(1.0 / rows as f64);
        self.unary(value, move |g| {
            Mat::from_fn(rows, cols, |_, c| g.get(0, c) / rows as f64)
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        assert!(start <= end && end <= x.cols(), "slice_cols out of range");
        let (rows, cols) = (x.rows(), x.cols());
        let value = Mat::from_fn(rows, end - start, |r, c| x.get(r, start + c));
        self.unary(value, move |g| {
            let mut dx = Mat::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..g.cols() {
                    dx.set(r, start + c, g.get(r, c));
                }
            }
            dx
        })
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let values: Vec<Mat> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Mat::zeros(rows, total);
        let mut off = 0;
        for v in &values {
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..v.cols() {
                    value.set(r, off + c, v.get(r, c));
                }
            }
            off += v.cols();
        }
        let parents: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        tape.push(
            value,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(parents.len());
                let mut off = 0;
                for (p, w) in parents.iter().zip(&widths) {
                    let dx = Mat::from_fn(rows, *w, |r, c| g.get(r, off + c));
                    out.push((*p, dx));
                    off += w;
                }
                out
            })),
        )
    }

    /// 2x2 average pooling over a `(h*w) x d` token grid.
    pub fn avg_pool2(&self, h: usize, w: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.rows(), h * w, "avg_pool2 grid mismatch");
        assert!(h.is_multiple_of(2) && w.is_multiple_of(2), "avg_pool2 needs even extents");
        let d = x.cols();
        let (oh, ow) = (h / 2, w / 2);
        let mut value = Mat::zeros(oh * ow, d);
        for i in 0..oh {
            for j in 0..ow {
                for c in 0..d {
                    let s = x.get((2 * i) * w + 2 * j, c)
                        + x.get((2 * i) * w + 2 * j + 1, c)
                        + x.get((2 * i + 1) * w + 2 * j, c)
                        + x.get((2 * i + 1) * w + 2 * j + 1, c);
                    value.set(i * ow + j, c, s * 0.25);
                }
            }
        }
        self.unary(value, move |g| {
            let mut dx = Mat::zeros(h * w, d);
            for i in 0..oh {
                for j in 0..ow {
                    for c in 0..d {
                        let gv = g.get(i * ow + j, c) * 0.25;
                        dx.set((2 * i) * w + 2 * j, c, gv);
                        dx.set((2 * i) * w + 2 * j + 1, c, gv);
                        dx.set((2 * i + 1) * w + 2 * j, c, gv);
                        dx.set((2 * i + 1) * w + 2 * j + 1, c, gv);
                    }
                }
            }
            dx
        })
    }

    /// Nearest-neighbor 2x upsampling of a `(h*w) x d` token grid.
    pub fn upsample2_nearest(&self, h: usize, w: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.rows(), h * w, "upsample2 grid mismatch");
        let d = x.cols();
        let ow = 2 * w;
        let value = Mat::from_fn(4 * h * w, d, |rc, c| {
            let (oi, oj) = (rc / ow, rc % ow);
            x.get((oi / 2) * w + oj / 2, c)
        });
        self.unary(value, move |g| {
            let mut dx = Mat::zeros(h * w, d);
            for oi in 0..2 * h {
                for oj in 0..ow {
                    for c in 0..d {
                        let idx = (oi / 2) * w + oj / 2;
                        dx.set(idx, c, dx.get(idx, c) + g.get(oi * ow + oj, c));
                    }
                }
            }
            dx
        })
    }

    /// Interleaves four `(h*w) x d` grids into a `(2h*2w) x d` grid:
    /// output `(2i+di, 2j+dj)` comes from input `didj` at `(i, j)`.
    /// This is the spatial arrangement step of a 2x2 transposed convolution.
    pub fn interleave2x2(
        quads: [Var<'t>; 4],
        h: usize,
        w: usize,
    ) -> Var<'t> {
        let tape = quads[0].tape;
        let vals: Vec<Mat> = quads.iter().map(|q| q.value()).collect();
        let d = vals[0].cols();
        for v in &vals {
            assert_eq!(v.rows(), h * w, "interleave2x2 grid mismatch");
            assert_eq!(v.cols(), d);
        }
        let (oh, ow) = (2 * h, 2 * w);
        let mut value = Mat::zeros(oh * ow, d);
        for i in 0..h {
            for j in 0..w {
                for (q, v) in vals.iter().enumerate() {
                    let (di, dj) = (q / 2, q % 2);
                    for c in 0..d {
                        value.set((2 * i + di) * ow + (2 * j + dj), c, v.get(i * w + j, c));
                    }
                }
            }
        }
        let parents: Vec<usize> = quads.iter().map(|q| q.idx).collect();
        tape.push(
            value,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(4);
                for (q, p) in parents.iter().enumerate() {
                    let (di, dj) = (q / 2, q % 2);
                    let dx = Mat::from_fn(h * w, d, |rc, c| {
                        let (i, j) = (rc / w, rc % w);
                        g.get((2 * i + di) * ow + (2 * j + dj), c)
                    });
                    out.push((*p, dx));
                }
                out
            })),
        )
    }

    /// Element-wise division of 1x1 scalars.
    pub fn div_scalar(&self, other: Var<'t>) -> Var<'t> {
        let a = self.scalar();
        let b = other.scalar();
        let (pa, pb) = (self.idx, other.idx);
        self.tape.push(
            Mat::from_vec(1, 1, vec![a / b]),
            Some(Box::new(move |g| {
                let gs = g.scalar();
                vec![
                    (pa, Mat::from_vec(1, 1, vec![gs / b])),
                    (pb, Mat::from_vec(1, 1, vec![-gs * a / (b * b)])),
                ]
            })),
        )
    }

    /// Numerically stable binary cross-entropy with logits against a fixed
    /// target, averaged over all elements.
    pub fn bce_with_logits(&self, target: &Mat) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.rows(), target.rows(), "bce target shape mismatch");
        assert_eq!(x.cols(), target.cols(), "bce target shape mismatch");
        let n = (x.rows() * x.cols()) as f64;
        let mut total = 0.0;
        for (xv, tv) in x.data().iter().zip(target.data()) {
            total += xv.max(0.0) - xv * tv + (-xv.abs()).exp().ln_1p();
        }
        let t = target.clone();
        self.unary(Mat::from_vec(1, 1, vec![total / n]), move |g| {
            let gs = g.scalar() / n;
            x.zip(&t, |xv, tv| gs * (sigmoid_scalar(xv) - tv))
        })
    }

    /// Runs the backward sweep from this (normally scalar) node. The seed
    /// gradient is all-ones in this node's shape.
    pub fn backward(&self) -> Grads {
        let nodes = self.tape.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        let root = &nodes[self.idx].value;
        grads[self.idx] = Some(Mat::from_fn(root.rows(), root.cols(), |_, _| 1.0));
        for idx in (0..=self.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if let Some(back) = &nodes[idx].back {
                for (parent, contrib) in back(&g) {
                    match &mut grads[parent] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot => *slot = Some(contrib),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Grads { grads }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x @ w + b` convenience used throughout the model code.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    x.matmul(w).add_row_broadcast(b)
}
