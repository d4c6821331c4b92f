//! Reverse-mode accumulation over dense tensors.
//!
//! A [`Tape`] records every forward operation together with a backward
//! closure; [`Tape::backward`] replays them in reverse to fill per-node
//! gradients. The gradient contract is checked against central finite
//! differences in `params::grad_check`.

use crate::tensor::{elu_grad_scalar, elu_scalar, softmax_slice, Tensor, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

type BackFn = Box<dyn Fn(&Tensor, &mut dyn FnMut(usize, Tensor))>;

struct Node {
    value: Tensor,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// A node with no gradient of its own; gradients flowing into it are kept
    /// so callers can read them back (parameters enter the tape this way).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let v = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                sink(b.0, neg);
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(av.shape().to_vec(), data).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect(),
                )
                .unwrap();
                let db = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect(),
                )
                .unwrap();
                sink(a.0, da);
                sink(b.0, db);
            })),
        )
    }

    pub fn mul_const(&mut self, a: Var, m: &Tensor) -> Var {
        assert_eq!(self.value(a).shape(), m.shape());
        let mc = m.clone();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(m.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::new(m.shape().to_vec(), data).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(mc.data()).map(|(g, y)| g * y).collect(),
                )
                .unwrap();
                sink(a.0, da);
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale_assign(c);
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut dg = g.clone();
                dg.scale_assign(c);
                sink(a.0, dg);
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.matmul(&bv);
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.matmul_nt(&bv));
                sink(b.0, av.matmul_tn(g));
            })),
        )
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.matmul_nt(&bv);
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.matmul(&bv));
                sink(b.0, g.matmul_tn(&av));
            })),
        )
    }

    /// Matrix plus a broadcast row vector (1 x m).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols());
        let (n, m) = (av.rows(), av.cols());
        let mut v = av.clone();
        for i in 0..n {
            for (x, y) in v.row_mut(i).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                let mut db = Tensor::zeros(vec![1, m]);
                for i in 0..n {
                    for (d, gv) in db.data_mut().iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
                sink(bias.0, db);
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut v = Tensor::zeros(vec![n, total]);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), n);
            for i in 0..n {
                v.row_mut(i)[off..off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let parts: Vec<Var> = parts.to_vec();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut dp = Tensor::zeros(vec![n, w]);
                    for i in 0..n {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    sink(p.0, dp);
                    off += w;
                }
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * m);
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), m);
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::new(vec![total, m], data).unwrap();
        let parts: Vec<Var> = parts.to_vec();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut off = 0;
                for (&p, &h) in parts.iter().zip(&heights) {
                    let dp = Tensor::new(
                        vec![h, m],
                        g.data()[off * m..(off + h) * m].to_vec(),
                    )
                    .unwrap();
                    sink(p.0, dp);
                    off += h;
                }
            })),
        )
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let xv = self.value(a).clone();
        let v = xv.map(elu_scalar);
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &x)| g * elu_grad_scalar(x))
                        .collect(),
                )
                .unwrap();
                sink(a.0, da);
            })),
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            softmax_slice(v.row_mut(i));
        }
        let yv = v.clone();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                sink(a.0, softmax_backward(&yv, g));
            })),
        )
    }

    /// Softmax restricted to positions where `mask != 0`; masked positions get
    /// weight exactly 0 and an all-masked row yields the zero row.
    pub fn softmax_rows_hard(&mut self, a: Var, mask: &Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), mask.shape());
        let (n, m) = (x.rows(), x.cols());
        let mut v = Tensor::zeros(vec![n, m]);
        for i in 0..n {
            let keep: Vec<usize> = (0..m).filter(|&j| mask.at(i, j) != 0.0).collect();
            if keep.is_empty() {
                continue;
            }
            let max = keep
                .iter()
                .map(|&j| x.at(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &j in &keep {
                let e = (x.at(i, j) - max).exp();
                v.set(i, j, e);
                sum += e;
            }
            for &j in &keep {
                let w = v.at(i, j) / sum;
                v.set(i, j, w);
            }
        }
        let yv = v.clone();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                // y is zero at masked positions, so the usual softmax
                // backward already routes nothing through them.
                sink(a.0, softmax_backward(&yv, g));
            })),
        )
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let mut v = Tensor::zeros(vec![indices.len(), m]);
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < n, "row index {} out of range {}", idx, n);
            v.row_mut(i).copy_from_slice(av.row(idx));
        }
        let indices = indices.to_vec();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = Tensor::zeros(vec![n, m]);
                for (i, &idx) in indices.iter().enumerate() {
                    for (d, gv) in da.row_mut(idx).iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
                sink(a.0, da);
            })),
        )
    }

    /// Per-row dot product of two equally shaped matrices -> n x 1.
    pub fn rowwise_dot(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        assert_eq!(av.shape(), bv.shape());
        let n = av.rows();
        let data: Vec<f64> = (0..n)
            .map(|i| av.row(i).iter().zip(bv.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        let v = Tensor::new(vec![n, 1], data).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = bv.clone();
                let mut db = av.clone();
                for i in 0..n {
                    let gi = g.data()[i];
                    for x in da.row_mut(i) {
                        *x *= gi;
                    }
                    for x in db.row_mut(i) {
                        *x *= gi;
                    }
                }
                sink(a.0, da);
                sink(b.0, db);
            })),
        )
    }

    /// Column `j` of a matrix as n x 1.
    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        assert!(j < m);
        let data: Vec<f64> = (0..n).map(|i| av.at(i, j)).collect();
        let v = Tensor::new(vec![n, 1], data).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = Tensor::zeros(vec![n, m]);
                for i in 0..n {
                    da.set(i, j, g.data()[i]);
                }
                sink(a.0, da);
            })),
        )
    }

    /// Broadcast-multiply each row of `a` by the matching entry of an
    /// n x 1 column vector variable.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let av = self.value(a).clone();
        let cv = self.value(c).clone();
        assert_eq!(cv.cols(), 1);
        assert_eq!(av.rows(), cv.rows());
        let n = av.rows();
        let mut v = av.clone();
        for i in 0..n {
            let s = cv.data()[i];
            for x in v.row_mut(i) {
                *x *= s;
            }
        }
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = g.clone();
                let mut dc = Tensor::zeros(vec![n, 1]);
                for i in 0..n {
                    let s = cv.data()[i];
                    dc.data_mut()[i] = g.row(i).iter().zip(av.row(i)).map(|(g, x)| g * x).sum();
                    for x in da.row_mut(i) {
                        *x *= s;
                    }
                }
                sink(a.0, da);
                sink(c.0, dc);
            })),
        )
    }

    /// Multiply each row by a constant per-row factor (used to zero PAD rows).
    pub fn mul_rows_const(&mut self, a: Var, factors: &[f64]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), factors.len());
        let mut v = av.clone();
        for (i, &f) in factors.iter().enumerate() {
            for x in v.row_mut(i) {
                *x *= f;
            }
        }
        let factors = factors.to_vec();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = g.clone();
                for (i, &f) in factors.iter().enumerate() {
                    for x in da.row_mut(i) {
                        *x *= f;
                    }
                }
                sink(a.0, da);
            })),
        )
    }

    /// Sliding windows of `w` consecutive rows, flattened: L x d -> (L-w+1) x (w*d).
    pub fn unfold(&mut self, a: Var, w: usize) -> Var {
        let av = self.value(a);
        let (l, d) = (av.rows(), av.cols());
        assert!(w >= 1 && w <= l, "window {} over {} rows", w, l);
        let out_rows = l - w + 1;
        let mut v = Tensor::zeros(vec![out_rows, w * d]);
        for i in 0..out_rows {
            for k in 0..w {
                v.row_mut(i)[k * d..(k + 1) * d].copy_from_slice(av.row(i + k));
            }
        }
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = Tensor::zeros(vec![l, d]);
                for i in 0..out_rows {
                    for k in 0..w {
                        for (x, gv) in da
                            .row_mut(i + k)
                            .iter_mut()
                            .zip(&g.row(i)[k * d..(k + 1) * d])
                        {
                            *x += gv;
                        }
                    }
                }
                sink(a.0, da);
            })),
        )
    }

    /// Max over rows for each column -> 1 x m. Gradient goes to the first
    /// maximal entry per column.
    pub fn col_max(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        assert!(n >= 1);
        let mut best = vec![0usize; m];
        let mut vals = av.row(0).to_vec();
        for i in 1..n {
            for (j, &x) in av.row(i).iter().enumerate() {
                if x > vals[j] {
                    vals[j] = x;
                    best[j] = i;
                }
            }
        }
        let v = Tensor::new(vec![1, m], vals).unwrap();
        self.push(
            v,
            Some(Box::new(move |g, sink| {
                let mut da = Tensor::zeros(vec![n, m]);
                for (j, &i) in best.iter().enumerate() {
                    da.set(i, j, g.data()[j]);
                }
                sink(a.0, da);
            })),
        )
    }

    /// Sum of `-ln(max(probs[r, l], floor))` over the picked (row, label)
    /// entries of a probability matrix.
    pub fn nll_picked(&mut self, probs: Var, picks: &[(usize, usize)]) -> Var {
        let pv = self.value(probs).clone();
        let mut total = 0.0;
        for &(r, l) in picks {
            total += -pv.at(r, l).max(PROB_FLOOR).ln();
        }
        let picks = picks.to_vec();
        let (n, m) = (pv.rows(), pv.cols());
        self.push(
            Tensor::scalar(total),
            Some(Box::new(move |g, sink| {
                let gs = g.scalar_value();
                let mut dp = Tensor::zeros(vec![n, m]);
                for &(r, l) in &picks {
                    let p = pv.at(r, l);
                    if p > PROB_FLOOR {
                        let cur = dp.at(r, l);
                        dp.set(r, l, cur - gs / p);
                    }
                }
                sink(probs.0, dp);
            })),
        )
    }

    /// Sum of squares, optionally excluding row 0 (the PAD row of an
    /// embedding table).
    pub fn sum_sq(&mut self, a: Var, skip_row0: bool) -> Var {
        let av = self.value(a).clone();
        let start = if skip_row0 && av.is_matrix() {
            av.cols()
        } else {
            0
        };
        let total: f64 = av.data()[start..].iter().map(|x| x * x).sum();
        self.push(
            Tensor::scalar(total),
            Some(Box::new(move |g, sink| {
                let gs = g.scalar_value();
                let mut da = av.clone();
                da.scale_assign(2.0 * gs);
                for x in &mut da.data_mut()[..start] {
                    *x = 0.0;
                }
                sink(a.0, da);
            })),
        )
    }

    pub fn add_scalars(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let total: f64 = parts.iter().map(|&p| self.value(p).scalar_value()).sum();
        let parts = parts.to_vec();
        self.push(
            Tensor::scalar(total),
            Some(Box::new(move |g, sink| {
                for &p in &parts {
                    sink(p.0, g.clone());
                }
            })),
        )
    }

    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if self.nodes[i].back.is_none() {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let back = self.nodes[i].back.as_ref().unwrap();
            back(&g, &mut |pid, contrib| match &mut grads[pid] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            });
        }
        Gradients { grads }
    }
}

fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let (n, m) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(vec![n, m]);
    for i in 0..n {
        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(g, y)| g * y).sum();
        for (j, x) in dx.row_mut(i).iter_mut().enumerate() {
            *x = y.at(i, j) * (g.at(i, j) - dot);
        }
    }
    dx
}
