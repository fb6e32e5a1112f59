//! Reverse-mode differentiation on a dynamically built tape.
//!
//! Every op pushes a node holding its output value, its parent ids and a
//! boxed backward closure. `backward` walks the tape in reverse creation
//! order, which is a valid topological order because ops can only consume
//! already existing nodes. All arithmetic is sequential f64, so repeated
//! runs over identical inputs are bit-identical.

use crate::basis::{
    self, bspline_basis_and_deriv, jacobi_eval_with_deriv, sigmoid, silu, silu_grad, Activation,
    BSplineGrid,
};
use crate::tensor::{three_dims, two_dims, NumError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&[f64], &mut [Vec<f64>])>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
}

/// Gradients of a scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. `id`, or `None` if the root does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, backward: Option<BackwardFn>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        id
    }

    /// Inserts an input node; gradients accumulate into it but nothing flows
    /// further back.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    /// Constant node; mathematically a leaf, named separately for intent.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    /// Accumulates d(root)/d(node) for every node, given a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NumError> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(NumError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &self.nodes[id];
            let Some(bw) = &node.backward else { continue };
            let gout = grads[id].take().expect("checked above");
            let mut bufs: Vec<Vec<f64>> = node
                .parents
                .iter()
                .map(|p| vec![0.0; self.nodes[p.0].value.len()])
                .collect();
            bw(&gout, &mut bufs);
            for (p, buf) in node.parents.iter().zip(bufs) {
                match &mut grads[p.0] {
                    Some(slot) => {
                        for (a, b) in slot.iter_mut().zip(&buf) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(buf),
                }
            }
            grads[id] = Some(gout);
        }
        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shape mirrors value shape")
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    // ---- elementwise and linear ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, bufs| {
                for (slot, gi) in bufs[0].iter_mut().zip(g) {
                    *slot += gi;
                }
                for (slot, gi) in bufs[1].iter_mut().zip(g) {
                    *slot += gi;
                }
            })),
        ))
    }

    /// `x + b` where `x` is `[n, m]` and `b` broadcasts over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let [n, m] = two_dims(self.value(x), "add_bias")?;
        let vb = self.value(b);
        if vb.shape() != [m] {
            return Err(shape_err(
                "add_bias",
                format!("bias shape {:?} vs row width {m}", vb.shape()),
            ));
        }
        let xs = self.value(x).data();
        let bs = vb.data();
        let mut data = vec![0.0; n * m];
        for s in 0..n {
            for j in 0..m {
                data[s * m + j] = xs[s * m + j] + bs[j];
            }
        }
        let value = Tensor::from_vec(vec![n, m], data)?;
        Ok(self.push(
            value,
            vec![x, b],
            Some(Box::new(move |g, bufs| {
                for (slot, gi) in bufs[0].iter_mut().zip(g) {
                    *slot += gi;
                }
                for s in 0..n {
                    for j in 0..m {
                        bufs[1][j] += g[s * m + j];
                    }
                }
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| c * x).collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data).expect("same shape");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g, bufs| {
                for (slot, gi) in bufs[0].iter_mut().zip(g) {
                    *slot += c * gi;
                }
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data)?;
        let ca = va.clone();
        let cb = vb.clone();
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] += g[i] * cb.data()[i];
                    bufs[1][i] += g[i] * ca.data()[i];
                }
            })),
        ))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let [n, ka] = two_dims(self.value(a), "matmul")?;
        let [kb, m] = two_dims(self.value(b), "matmul")?;
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!("inner dims {ka} vs {kb}"),
            ));
        }
        let k = ka;
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let mut data = vec![0.0; n * m];
        {
            let ad = va.data();
            let bd = vb.data();
            for i in 0..n {
                for kk in 0..k {
                    let aik = ad[i * k + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bd[kk * m..(kk + 1) * m];
                    let orow = &mut data[i * m..(i + 1) * m];
                    for j in 0..m {
                        orow[j] += aik * brow[j];
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![n, m], data)?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g, bufs| {
                let ad = va.data();
                let bd = vb.data();
                // dA = g . B^T
                for i in 0..n {
                    for kk in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * m..(i + 1) * m];
                        let brow = &bd[kk * m..(kk + 1) * m];
                        for j in 0..m {
                            acc += grow[j] * brow[j];
                        }
                        bufs[0][i * k + kk] += acc;
                    }
                }
                // dB = A^T . g
                for kk in 0..k {
                    for i in 0..n {
                        let aik = ad[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let grow = &g[i * m..(i + 1) * m];
                        let brow = &mut bufs[1][kk * m..(kk + 1) * m];
                        for j in 0..m {
                            brow[j] += aik * grow[j];
                        }
                    }
                }
            })),
        ))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(|g, bufs| {
                for slot in bufs[0].iter_mut() {
                    *slot += g[0];
                }
            })),
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let total: f64 = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(total / n),
            vec![a],
            Some(Box::new(move |g, bufs| {
                for slot in bufs[0].iter_mut() {
                    *slot += g[0] / n;
                }
            })),
        )
    }

    /// Sum of absolute values (L1 penalty); subgradient 0 at exact zeros.
    pub fn abs_sum(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a).clone();
        let total: f64 = va.data().iter().map(|x| x.abs()).sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g, bufs| {
                for (slot, x) in bufs[0].iter_mut().zip(va.data()) {
                    *slot += g[0] * x.signum() * f64::from(u8::from(*x != 0.0));
                }
            })),
        )
    }

    /// Sum of squares (L2 penalty).
    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a).clone();
        let total: f64 = va.data().iter().map(|x| x * x).sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g, bufs| {
                for (slot, x) in bufs[0].iter_mut().zip(va.data()) {
                    *slot += g[0] * 2.0 * x;
                }
            })),
        )
    }

    // ---- activations ----

    pub fn activation(&mut self, a: NodeId, act: Activation) -> NodeId {
        let va = self.value(a).clone();
        let data = va.data().iter().map(|&x| act.eval(x)).collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data).expect("same shape");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] += g[i] * act.grad(va.data()[i]);
                }
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Relu)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Silu)
    }

    /// Multiplies by a fixed mask; the trainer supplies inverted-dropout
    /// masks with entries in {0, 1/keep}.
    pub fn dropout_mask(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId, NumError> {
        let va = self.value(a);
        if mask.len() != va.len() {
            return Err(shape_err(
                "dropout",
                format!("mask length {} vs tensor length {}", mask.len(), va.len()),
            ));
        }
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] += g[i] * mask[i];
                }
            })),
        ))
    }

    /// Reshape `[n, l, c]` to `[n, l*c]`; row-major layout makes this a view.
    pub fn flatten_rows(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let [n, l, c] = three_dims(self.value(a), "flatten_rows")?;
        let value = self.value(a).reshaped(vec![n, l * c])?;
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(|g, bufs| {
                for (slot, gi) in bufs[0].iter_mut().zip(g) {
                    *slot += gi;
                }
            })),
        ))
    }

    // ---- structured ops ----

    /// 1-D convolution over `[n, len, c_in]` with kernels `[c_out, k, c_in]`
    /// and bias `[c_out]`, zero-padded by (`pad_left`, `pad_right`).
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<NodeId, NumError> {
        let [n, len, c_in] = three_dims(self.value(x), "conv1d")?;
        let [c_out, k, wc_in] = three_dims(self.value(w), "conv1d")?;
        if wc_in != c_in {
            return Err(shape_err(
                "conv1d",
                format!("kernel input channels {wc_in} vs data channels {c_in}"),
            ));
        }
        if self.value(b).shape() != [c_out] {
            return Err(shape_err(
                "conv1d",
                format!("bias shape {:?} vs {c_out} filters", self.value(b).shape()),
            ));
        }
        let padded = len + pad_left + pad_right;
        if padded < k {
            return Err(shape_err(
                "conv1d",
                format!("kernel size {k} exceeds padded length {padded}"),
            ));
        }
        let l_out = padded - k + 1;
        let vx = self.value(x).clone();
        let vw = self.value(w).clone();
        let vb = self.value(b).clone();
        let mut data = vec![0.0; n * l_out * c_out];
        {
            let xd = vx.data();
            let wd = vw.data();
            let bd = vb.data();
            for s in 0..n {
                for t in 0..l_out {
                    for o in 0..c_out {
                        let mut acc = bd[o];
                        for kk in 0..k {
                            let ti = t + kk;
                            if ti < pad_left || ti >= pad_left + len {
                                continue;
                            }
                            let src = ti - pad_left;
                            let xrow = &xd[(s * len + src) * c_in..(s * len + src + 1) * c_in];
                            let wrow = &wd[(o * k + kk) * c_in..(o * k + kk + 1) * c_in];
                            for i in 0..c_in {
                                acc += xrow[i] * wrow[i];
                            }
                        }
                        data[(s * l_out + t) * c_out + o] = acc;
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![n, l_out, c_out], data)?;
        Ok(self.push(
            value,
            vec![x, w, b],
            Some(Box::new(move |g, bufs| {
                let xd = vx.data();
                let wd = vw.data();
                for s in 0..n {
                    for t in 0..l_out {
                        for o in 0..c_out {
                            let go = g[(s * l_out + t) * c_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            bufs[2][o] += go;
                            for kk in 0..k {
                                let ti = t + kk;
                                if ti < pad_left || ti >= pad_left + len {
                                    continue;
                                }
                                let src = ti - pad_left;
                                let xi = (s * len + src) * c_in;
                                let wi = (o * k + kk) * c_in;
                                for i in 0..c_in {
                                    bufs[0][xi + i] += go * wd[wi + i];
                                    bufs[1][wi + i] += go * xd[xi + i];
                                }
                            }
                        }
                    }
                }
            })),
        ))
    }

    /// Max pooling over the time axis with stride = pool size; trailing
    /// samples that do not fill a window are dropped. Ties break toward the
    /// earliest index.
    pub fn maxpool1d(&mut self, x: NodeId, pool: usize) -> Result<NodeId, NumError> {
        let [n, len, c] = three_dims(self.value(x), "maxpool1d")?;
        if pool == 0 {
            return Err(NumError::Invalid("pool size must be >= 1".into()));
        }
        let l_out = len / pool;
        if l_out == 0 {
            return Err(shape_err(
                "maxpool1d",
                format!("pool size {pool} exceeds sequence length {len}"),
            ));
        }
        let xd = self.value(x).data();
        let mut data = vec![0.0; n * l_out * c];
        let mut argmax = vec![0usize; n * l_out * c];
        for s in 0..n {
            for t in 0..l_out {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for p in 0..pool {
                        let idx = (s * len + t * pool + p) * c + ch;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_i = idx;
                        }
                    }
                    data[(s * l_out + t) * c + ch] = best;
                    argmax[(s * l_out + t) * c + ch] = best_i;
                }
            }
        }
        let value = Tensor::from_vec(vec![n, l_out, c], data)?;
        Ok(self.push(
            value,
            vec![x],
            Some(Box::new(move |g, bufs| {
                for (out_i, &src_i) in argmax.iter().enumerate() {
                    bufs[0][src_i] += g[out_i];
                }
            })),
        ))
    }

    /// Mean over the time axis: `[n, len, c] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        let [n, len, c] = three_dims(self.value(x), "global_avg_pool")?;
        let xd = self.value(x).data();
        let mut data = vec![0.0; n * c];
        for s in 0..n {
            for t in 0..len {
                for ch in 0..c {
                    data[s * c + ch] += xd[(s * len + t) * c + ch];
                }
            }
        }
        for v in data.iter_mut() {
            *v /= len as f64;
        }
        let value = Tensor::from_vec(vec![n, c], data)?;
        Ok(self.push(
            value,
            vec![x],
            Some(Box::new(move |g, bufs| {
                let inv = 1.0 / len as f64;
                for s in 0..n {
                    for t in 0..len {
                        for ch in 0..c {
                            bufs[0][(s * len + t) * c + ch] += g[s * c + ch] * inv;
                        }
                    }
                }
            })),
        ))
    }

    /// One KAN layer. Each edge (o, i) carries
    /// `phi(x) = wb[o,i] * silu(x) + ws[o,i] * sum_b coef[o,i,b] * B_b(tanh x)`
    /// and node `o` sums its incoming edges. The tanh squash keeps spline
    /// inputs inside the grid domain.
    ///
    /// Shapes: `x [n, in]`, `wb [out, in]`, `ws [out, in]`,
    /// `coef [out, in, nb]` with `nb = G + k`.
    pub fn kan_layer(
        &mut self,
        x: NodeId,
        wb: NodeId,
        ws: NodeId,
        coef: NodeId,
        grid: &BSplineGrid,
    ) -> Result<NodeId, NumError> {
        let [n, d_in] = two_dims(self.value(x), "kan_layer")?;
        let [d_out, wb_in] = two_dims(self.value(wb), "kan_layer")?;
        let [ws_out, ws_in] = two_dims(self.value(ws), "kan_layer")?;
        let [c_out, c_in, nb] = three_dims(self.value(coef), "kan_layer")?;
        if wb_in != d_in || ws_in != d_in || c_in != d_in || ws_out != d_out || c_out != d_out {
            return Err(shape_err(
                "kan_layer",
                format!(
                    "x [{n},{d_in}], wb [{d_out},{wb_in}], ws [{ws_out},{ws_in}], coef [{c_out},{c_in},{nb}]"
                ),
            ));
        }
        if nb != grid.num_basis() {
            return Err(shape_err(
                "kan_layer",
                format!("coef basis dim {nb} vs grid basis count {}", grid.num_basis()),
            ));
        }
        let vx = self.value(x).clone();
        let vwb = self.value(wb).clone();
        let vws = self.value(ws).clone();
        let vcoef = self.value(coef).clone();

        // Basis values and their x-derivatives for every (sample, input),
        // shared across all output edges.
        let mut bmat = vec![0.0; n * d_in * nb];
        let mut dbmat = vec![0.0; n * d_in * nb];
        {
            let xd = vx.data();
            for si in 0..n * d_in {
                let u = xd[si].tanh();
                let (vals, dvals) = bspline_basis_and_deriv(u, grid);
                let du_dx = 1.0 - u * u;
                for b in 0..nb {
                    bmat[si * nb + b] = vals[b];
                    dbmat[si * nb + b] = dvals[b] * du_dx;
                }
            }
        }

        let mut data = vec![0.0; n * d_out];
        {
            let xd = vx.data();
            let wbd = vwb.data();
            let wsd = vws.data();
            let cd = vcoef.data();
            for s in 0..n {
                for o in 0..d_out {
                    let mut acc = 0.0;
                    for i in 0..d_in {
                        let xi = xd[s * d_in + i];
                        let brow = &bmat[(s * d_in + i) * nb..(s * d_in + i + 1) * nb];
                        let crow = &cd[(o * d_in + i) * nb..(o * d_in + i + 1) * nb];
                        let mut spline = 0.0;
                        for b in 0..nb {
                            spline += crow[b] * brow[b];
                        }
                        acc += wbd[o * d_in + i] * silu(xi) + wsd[o * d_in + i] * spline;
                    }
                    data[s * d_out + o] = acc;
                }
            }
        }
        let value = Tensor::from_vec(vec![n, d_out], data)?;
        Ok(self.push(
            value,
            vec![x, wb, ws, coef],
            Some(Box::new(move |g, bufs| {
                let xd = vx.data();
                let wbd = vwb.data();
                let wsd = vws.data();
                let cd = vcoef.data();
                for s in 0..n {
                    for o in 0..d_out {
                        let go = g[s * d_out + o];
                        if go == 0.0 {
                            continue;
                        }
                        for i in 0..d_in {
                            let e = o * d_in + i;
                            let si = s * d_in + i;
                            let xi = xd[si];
                            let brow = &bmat[si * nb..(si + 1) * nb];
                            let dbrow = &dbmat[si * nb..(si + 1) * nb];
                            let crow = &cd[e * nb..(e + 1) * nb];
                            let mut spline = 0.0;
                            let mut dspline_dx = 0.0;
                            for b in 0..nb {
                                spline += crow[b] * brow[b];
                                dspline_dx += crow[b] * dbrow[b];
                            }
                            // d/dx
                            bufs[0][si] += go * (wbd[e] * silu_grad(xi) + wsd[e] * dspline_dx);
                            // d/dwb, d/dws
                            bufs[1][e] += go * silu(xi);
                            bufs[2][e] += go * spline;
                            // d/dcoef
                            let ws_e = wsd[e];
                            let cgrad = &mut bufs[3][e * nb..(e + 1) * nb];
                            for b in 0..nb {
                                cgrad[b] += go * ws_e * brow[b];
                            }
                        }
                    }
                }
            })),
        ))
    }

    /// Fractional-Jacobi activation applied elementwise:
    /// `y = sum_j coef[j] * P_j(2 * sigmoid(z)^lambda - 1)` with
    /// `lambda = sigmoid(lambda_raw)` kept in (0, 1). Jacobi exponents are
    /// fixed at alpha = beta = 0.
    ///
    /// Shapes: `z` arbitrary, `coef [degree+1]`, `lambda_raw [1]`.
    pub fn fkan_activation(
        &mut self,
        z: NodeId,
        coef: NodeId,
        lambda_raw: NodeId,
    ) -> Result<NodeId, NumError> {
        let degree = match self.value(coef).shape() {
            [d1] if *d1 >= 1 => d1 - 1,
            other => {
                return Err(shape_err(
                    "fkan_activation",
                    format!("coefficients must be a non-empty vector, got {other:?}"),
                ))
            }
        };
        if !self.value(lambda_raw).is_scalar() {
            return Err(shape_err(
                "fkan_activation",
                format!("lambda must be a scalar, got {:?}", self.value(lambda_raw).shape()),
            ));
        }
        let vz = self.value(z).clone();
        let vcoef = self.value(coef).clone();
        let vraw = self.value(lambda_raw).clone();
        let lambda = sigmoid(vraw.item());
        let cd = vcoef.data().to_vec();

        let mut data = vec![0.0; vz.len()];
        for (out, &zi) in data.iter_mut().zip(vz.data()) {
            let t = (lambda * basis::ln_sigmoid(zi)).exp();
            let u = 2.0 * t - 1.0;
            let (p, _) = jacobi_eval_with_deriv(degree, 0.0, 0.0, u);
            *out = cd.iter().zip(&p).map(|(c, pv)| c * pv).sum();
        }
        let value = Tensor::from_vec(vz.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            vec![z, coef, lambda_raw],
            Some(Box::new(move |g, bufs| {
                let dlambda_draw = lambda * (1.0 - lambda);
                for (i, &zi) in vz.data().iter().enumerate() {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let s = basis::ln_sigmoid(zi);
                    let t = (lambda * s).exp();
                    let u = 2.0 * t - 1.0;
                    let sig = sigmoid(zi);
                    let (p, dp) = jacobi_eval_with_deriv(degree, 0.0, 0.0, u);
                    let mut dy_du = 0.0;
                    for j in 0..=degree {
                        bufs[1][j] += gi * p[j];
                        dy_du += cd[j] * dp[j];
                    }
                    // du/dz = 2 * lambda * t * (1 - sigmoid(z))
                    bufs[0][i] += gi * dy_du * 2.0 * lambda * t * (1.0 - sig);
                    // du/dlambda = 2 * t * ln(sigmoid(z)); chain through the
                    // sigmoid reparameterization of lambda.
                    bufs[2][0] += gi * dy_du * 2.0 * t * s * dlambda_draw;
                }
            })),
        ))
    }

    /// Fused softmax + class-weighted cross-entropy:
    /// `loss = mean_s w[y_s] * (logsumexp(logits_s) - logits_s[y_s])`.
    /// Weights are fixed multipliers, not differentiated.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<NodeId, NumError> {
        let [n, c] = two_dims(self.value(logits), "weighted_cross_entropy")?;
        if labels.len() != n {
            return Err(shape_err(
                "weighted_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if weights.len() != c {
            return Err(shape_err(
                "weighted_cross_entropy",
                format!("{} class weights for {c} classes", weights.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(NumError::Invalid(format!(
                "label index {bad} outside 0..{c}"
            )));
        }
        let vx = self.value(logits).clone();
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        let xd = vx.data();
        let mut loss = 0.0;
        for (s, &y) in labels.iter().enumerate() {
            let row = &xd[s * c..(s + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += weights[y] * (lse - row[y]);
        }
        loss /= n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Some(Box::new(move |g, bufs| {
                let xd = vx.data();
                let inv_n = 1.0 / n as f64;
                for (s, &y) in labels.iter().enumerate() {
                    let row = &xd[s * c..(s + 1) * c];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    let wy = weights[y] * inv_n * g[0];
                    for j in 0..c {
                        let p = (row[j] - lse).exp();
                        bufs[0][s * c + j] += wy * (p - f64::from(u8::from(j == y)));
                    }
                }
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{finite_diff_check, Parameter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> value 9, gradient 6
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap());
        let y = tape.sum(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(x),
            Err(NumError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 3]));
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
        let err = tape.matmul(a, a).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn tanh_matmul_matches_finite_differences() {
        // f(W) = sum(tanh(W v)) for random 3x3 W, fixed v
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v = rand_tensor(&mut rng, &[3, 1]);
        let mut params = vec![Parameter::new(rand_tensor(&mut rng, &[3, 3]))];
        let v2 = v.clone();
        let err = finite_diff_check(
            |tape, ids| {
                let vv = tape.constant(v2.clone());
                let h = tape.matmul(ids[0], vv)?;
                let t = tape.tanh(h);
                Ok(tape.sum(t))
            },
            &mut params,
            0,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn repeated_forward_backward_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[4, 5]);
        let w = rand_tensor(&mut rng, &[5, 3]);
        let run = || {
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let wi = tape.leaf(w.clone());
            let h = tape.matmul(xi, wi).unwrap();
            let a = tape.silu(h);
            let y = tape.sum(a);
            let g = tape.backward(y).unwrap();
            (
                tape.value(y).item(),
                g.wrt(wi).unwrap().data().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn backward_is_linear_in_loss() {
        // backward of (l1 + l2) equals backward(l1) + backward(l2)
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rand_tensor(&mut rng, &[3, 3]);
        let grad_of = |combined: bool| -> Vec<f64> {
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let t = tape.tanh(xi);
            let l1 = tape.sum(t);
            let sq = tape.mul(xi, xi).unwrap();
            let l2 = tape.sum(sq);
            let root = if combined { tape.add(l1, l2).unwrap() } else { l1 };
            let g = tape.backward(root).unwrap();
            g.wrt(xi).unwrap().data().to_vec()
        };
        let g_l1_l2 = grad_of(true);
        let g_l1 = grad_of(false);
        let g_l2: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        for i in 0..9 {
            assert!((g_l1_l2[i] - (g_l1[i] + g_l2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_known_value_and_gradient() {
        // single sample, single channel, identity-ish kernel
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = tape.leaf(Tensor::from_vec(vec![1, 3, 1], vec![1.0, 0.0, -1.0]).unwrap());
        let b = tape.leaf(Tensor::from_vec(vec![1], vec![0.5]).unwrap());
        let y = tape.conv1d(x, w, b, 0, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 1]);
        // x[t] - x[t+2] + 0.5
        assert_eq!(tape.value(y).data(), &[-1.5, -1.5, -1.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(pl, pr) in &[(0usize, 0usize), (1, 1), (2, 1)] {
            let xt = rand_tensor(&mut rng, &[2, 6, 3]);
            let mut params = vec![
                Parameter::new(rand_tensor(&mut rng, &[4, 3, 3])),
                Parameter::new(rand_tensor(&mut rng, &[4])),
            ];
            for target in 0..2 {
                let xt = xt.clone();
                let err = finite_diff_check(
                    move |tape, ids| {
                        let xi = tape.constant(xt.clone());
                        let y = tape.conv1d(xi, ids[0], ids[1], pl, pr)?;
                        let t = tape.tanh(y);
                        Ok(tape.sum(t))
                    },
                    &mut params,
                    target,
                    1e-4,
                )
                .unwrap();
                assert!(err < 1e-6, "pad ({pl},{pr}) target {target}: {err}");
            }
        }
    }

    #[test]
    fn maxpool_ties_take_earliest_and_gradient_routes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 4, 1], vec![2.0, 2.0, 1.0, 3.0]).unwrap());
        let y = tape.maxpool1d(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        // tie at positions 0/1 routes to the earliest (index 0)
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn weighted_cross_entropy_matches_hand_computation() {
        let mut tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_vec(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
        );
        let loss = tape
            .weighted_cross_entropy(logits, &[0, 1], &[0.5, 2.0, 1.0])
            .unwrap();
        // -ln softmax = ln(e + 2) - 1 for the hot logit
        let per = (1.0f64.exp() + 2.0).ln() - 1.0;
        let want = (0.5 * per + 2.0 * per) / 2.0;
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
        assert!((tape.value(loss).item() - 0.68930).abs() < 1e-4);

        // uniform weights reduce to the standard cross-entropy
        let mut tape2 = Tape::new();
        let l2 = tape2.leaf(Tensor::from_vec(vec![1, 3], vec![0.3, -0.2, 1.4]).unwrap());
        let w1 = tape2.weighted_cross_entropy(l2, &[2], &[1.0, 1.0, 1.0]).unwrap();
        let row = [0.3, -0.2, 1.4f64];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((tape2.value(w1).item() - (lse - 1.4)).abs() < 1e-12);

        // perfect prediction drives the loss to zero
        let mut tape3 = Tape::new();
        let l3 = tape3.leaf(Tensor::from_vec(vec![1, 3], vec![60.0, 0.0, 0.0]).unwrap());
        let w3 = tape3.weighted_cross_entropy(l3, &[0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(tape3.value(w3).item() < 1e-12);

        // bad label rejected
        let mut tape4 = Tape::new();
        let l4 = tape4.leaf(Tensor::zeros(&[1, 3]));
        assert!(tape4
            .weighted_cross_entropy(l4, &[3], &[1.0, 1.0, 1.0])
            .is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = vec![Parameter::new(rand_tensor(&mut rng, &[4, 3]))];
        let err = finite_diff_check(
            |tape, ids| tape.weighted_cross_entropy(ids[0], &[0, 2, 1, 0], &[0.5, 2.0, 1.3]),
            &mut params,
            0,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn kan_layer_silu_reduction() {
        // all spline coefficients zero, wb = 1 -> silu-activated summation
        let grid = BSplineGrid::symmetric(5, 3).unwrap();
        let nb = grid.num_basis();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.3]).unwrap());
        let wb = tape.leaf(Tensor::ones(&[2, 3]));
        let ws = tape.leaf(Tensor::from_vec(vec![2, 3], vec![0.7; 6]).unwrap());
        let coef = tape.leaf(Tensor::zeros(&[2, 3, nb]));
        let y = tape.kan_layer(x, wb, ws, coef, &grid).unwrap();
        let xd = tape.value(x).data().to_vec();
        for s in 0..2 {
            let want: f64 = (0..3).map(|i| silu(xd[s * 3 + i])).sum();
            for o in 0..2 {
                assert!((tape.value(y).data()[s * 2 + o] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kan_layer_gradients_match_finite_differences() {
        let grid = BSplineGrid::symmetric(5, 3).unwrap();
        let nb = grid.num_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // keep tanh(x) away from knots, where tiny basis tails make the
        // relative finite-difference error ill-conditioned
        let mut xs = Vec::new();
        while xs.len() < 12 {
            let v: f64 = rng.random_range(-1.5..1.5);
            let u = v.tanh();
            if grid.knots().iter().all(|t| (u - t).abs() > 1e-2) {
                xs.push(v);
            }
        }
        let x = Tensor::from_vec(vec![4, 3], xs).unwrap();
        let mut params = vec![
            Parameter::new(rand_tensor(&mut rng, &[2, 3])),     // wb
            Parameter::new(rand_tensor(&mut rng, &[2, 3])),     // ws
            Parameter::new(rand_tensor(&mut rng, &[2, 3, nb])), // coef
            Parameter::new(x),                                  // inputs as parameter
        ];
        let grid2 = grid.clone();
        for target in 0..4 {
            let grid = grid2.clone();
            let err = finite_diff_check(
                move |tape, ids| {
                    let y = tape.kan_layer(ids[3], ids[0], ids[1], ids[2], &grid)?;
                    let t = tape.tanh(y);
                    Ok(tape.sum(t))
                },
                &mut params,
                target,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "target {target}: rel err {err}");
        }
    }

    #[test]
    fn fkan_activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut params = vec![
            Parameter::new(rand_tensor(&mut rng, &[2, 5, 2])), // input
            Parameter::new(rand_tensor(&mut rng, &[4])),       // jacobi coefficients, degree 3
            Parameter::new(Tensor::scalar(0.3)),               // lambda_raw
        ];
        for target in 0..3 {
            let err = finite_diff_check(
                |tape, ids| {
                    let y = tape.fkan_activation(ids[0], ids[1], ids[2])?;
                    Ok(tape.sum(y))
                },
                &mut params,
                target,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-6, "target {target}: rel err {err}");
        }
    }

    #[test]
    fn global_avg_pool_and_flatten_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut params = vec![Parameter::new(rand_tensor(&mut rng, &[3, 4, 2]))];
        for use_gap in [true, false] {
            let err = finite_diff_check(
                move |tape, ids| {
                    let y = if use_gap {
                        tape.global_avg_pool(ids[0])?
                    } else {
                        tape.flatten_rows(ids[0])?
                    };
                    let t = tape.silu(y);
                    Ok(tape.sum(t))
                },
                &mut params,
                0,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-6, "gap={use_gap}: {err}");
        }
    }
}
