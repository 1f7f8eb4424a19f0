//! Minimal reverse-mode differentiation engine.
//!
//! A `Tape` is an append-only arena of nodes in CHW layout. Each operation
//! records its inputs and computes values eagerly; `backward` walks the
//! arena in reverse and accumulates gradients into every node that needs
//! them. The engine stores values in f64 so central finite differences with
//! h = 1e-3 resolve gradients well below the checking tolerances.
//!
//! The graph is rebuilt every iteration: parameters enter as leaves, the
//! loss comes out as a scalar node, and the caller reads gradients off the
//! leaves after `backward`.

/// Node handle.
pub type NodeId = usize;

/// Channels x height x width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn scalar() -> Self {
        Shape { c: 1, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Multiply a C-channel tensor by a single-channel map, broadcast over
    /// channels.
    MulBc1(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Sigmoid(NodeId),
    Silu(NodeId),
    Abs(NodeId),
    /// Same-padding stride-1 convolution; weight layout (out_c, in_c, k, k).
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        in_c: usize,
        out_c: usize,
        kernel: usize,
    },
    ConcatC(NodeId, NodeId),
    /// Stride-1 valid average pooling over win x win windows, per channel.
    AvgPool {
        input: NodeId,
        win: usize,
    },
    /// Forward difference along x (width shrinks by one).
    DiffX(NodeId),
    /// Forward difference along y (height shrinks by one).
    DiffY(NodeId),
    /// Full reduction to a scalar.
    Sum(NodeId),
}

struct Node {
    op: Op,
    shape: Shape,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn leaf(&mut self, shape: Shape, values: Vec<f64>, needs_grad: bool) -> NodeId {
        assert_eq!(values.len(), shape.len(), "leaf value count");
        self.push(Op::Leaf, shape, values, needs_grad)
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].shape.len(), 1);
        self.nodes[id].values[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    fn push(&mut self, op: Op, shape: Shape, values: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(values.len(), shape.len());
        self.nodes.push(Node {
            op,
            shape,
            values,
            grad: None,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> NodeId {
        let shape = self.nodes[a].shape;
        assert_eq!(shape, self.nodes[b].shape, "elementwise shape mismatch");
        let values = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(op, shape, values, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `a` has C channels, `map` one channel; multiply each channel of `a`
    /// elementwise by `map`.
    pub fn mul_bc1(&mut self, a: NodeId, map: NodeId) -> NodeId {
        let shape = self.nodes[a].shape;
        let map_shape = self.nodes[map].shape;
        assert_eq!(map_shape.c, 1, "broadcast map must have one channel");
        assert_eq!(
            (shape.h, shape.w),
            (map_shape.h, map_shape.w),
            "plane mismatch"
        );
        let plane = shape.plane();
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.c {
            for i in 0..plane {
                values.push(self.nodes[a].values[c * plane + i] * self.nodes[map].values[i]);
            }
        }
        let needs = self.needs(a) || self.needs(map);
        self.push(Op::MulBc1(a, map), shape, values, needs)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let shape = self.nodes[a].shape;
        let values = self.nodes[a].values.iter().map(|&x| x + s).collect();
        let needs = self.needs(a);
        self.push(Op::AddScalar(a), shape, values, needs)
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let shape = self.nodes[a].shape;
        let values = self.nodes[a].values.iter().map(|&x| x * s).collect();
        let needs = self.needs(a);
        self.push(Op::MulScalar(a, s), shape, values, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape;
        let values = self.nodes[a].values.iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), shape, values, needs)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape;
        let values = self.nodes[a]
            .values
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        let needs = self.needs(a);
        self.push(Op::Silu(a), shape, values, needs)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape;
        let values = self.nodes[a].values.iter().map(|&x| x.abs()).collect();
        let needs = self.needs(a);
        self.push(Op::Abs(a), shape, values, needs)
    }

    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.nodes[a].shape;
        let sb = self.nodes[b].shape;
        assert_eq!((sa.h, sa.w), (sb.h, sb.w), "concat plane mismatch");
        let shape = Shape::new(sa.c + sb.c, sa.h, sa.w);
        let mut values = Vec::with_capacity(shape.len());
        values.extend_from_slice(&self.nodes[a].values);
        values.extend_from_slice(&self.nodes[b].values);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::ConcatC(a, b), shape, values, needs)
    }

    /// Same-padding stride-1 convolution. `weight` is a leaf of length
    /// out_c*in_c*k*k, `bias` of length out_c.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        in_c: usize,
        out_c: usize,
        kernel: usize,
    ) -> NodeId {
        let shape = self.nodes[input].shape;
        assert_eq!(shape.c, in_c, "conv input channels");
        assert_eq!(
            self.nodes[weight].values.len(),
            out_c * in_c * kernel * kernel
        );
        assert_eq!(self.nodes[bias].values.len(), out_c);
        let out_shape = Shape::new(out_c, shape.h, shape.w);
        let values = conv_forward(
            &self.nodes[input].values,
            &self.nodes[weight].values,
            &self.nodes[bias].values,
            shape,
            out_c,
            kernel,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            Op::Conv {
                input,
                weight,
                bias,
                in_c,
                out_c,
                kernel,
            },
            out_shape,
            values,
            needs,
        )
    }

    pub fn avg_pool(&mut self, input: NodeId, win: usize) -> NodeId {
        let shape = self.nodes[input].shape;
        assert!(
            shape.h >= win && shape.w >= win,
            "pool window exceeds input"
        );
        let oh = shape.h - win + 1;
        let ow = shape.w - win + 1;
        let out_shape = Shape::new(shape.c, oh, ow);
        let norm = 1.0 / (win * win) as f64;
        let mut values = vec![0.0f64; out_shape.len()];
        let src = &self.nodes[input].values;
        for c in 0..shape.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..win {
                        let row = c * shape.plane() + (oy + ky) * shape.w + ox;
                        for kx in 0..win {
                            acc += src[row + kx];
                        }
                    }
                    values[c * oh * ow + oy * ow + ox] = acc * norm;
                }
            }
        }
        let needs = self.needs(input);
        self.push(Op::AvgPool { input, win }, out_shape, values, needs)
    }

    pub fn diff_x(&mut self, input: NodeId) -> NodeId {
        let shape = self.nodes[input].shape;
        assert!(shape.w >= 2);
        let out_shape = Shape::new(shape.c, shape.h, shape.w - 1);
        let src = &self.nodes[input].values;
        let mut values = Vec::with_capacity(out_shape.len());
        for c in 0..shape.c {
            for y in 0..shape.h {
                let row = c * shape.plane() + y * shape.w;
                for x in 0..shape.w - 1 {
                    values.push(src[row + x + 1] - src[row + x]);
                }
            }
        }
        let needs = self.needs(input);
        self.push(Op::DiffX(input), out_shape, values, needs)
    }

    pub fn diff_y(&mut self, input: NodeId) -> NodeId {
        let shape = self.nodes[input].shape;
        assert!(shape.h >= 2);
        let out_shape = Shape::new(shape.c, shape.h - 1, shape.w);
        let src = &self.nodes[input].values;
        let mut values = Vec::with_capacity(out_shape.len());
        for c in 0..shape.c {
            for y in 0..shape.h - 1 {
                let row = c * shape.plane() + y * shape.w;
                for x in 0..shape.w {
                    values.push(src[row + shape.w + x] - src[row + x]);
                }
            }
        }
        let needs = self.needs(input);
        self.push(Op::DiffY(input), out_shape, values, needs)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.nodes[input].values.iter().sum();
        let needs = self.needs(input);
        self.push(Op::Sum(input), Shape::scalar(), vec![total], needs)
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let n = self.nodes[input].shape.len();
        let s = self.sum(input);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let len = self.nodes[id].shape.len();
        self.nodes[id].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse pass from a scalar loss node. Gradients accumulate into every
    /// node with `needs_grad`; read them via [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].shape.len(), 1, "loss must be scalar");
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.grad_buf(loss)[0] = 1.0;

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let grad = self.nodes[id].grad.take().expect("grad present");
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, |_, g| g, &grad);
                    self.accumulate(b, |_, g| g, &grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, |_, g| g, &grad);
                    self.accumulate(b, |_, g| -g, &grad);
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let vals: Vec<f64> = self.nodes[b]
                            .values
                            .iter()
                            .zip(&grad)
                            .map(|(&v, &g)| v * g)
                            .collect();
                        self.add_to_grad(a, &vals);
                    }
                    if self.needs(b) {
                        let vals: Vec<f64> = self.nodes[a]
                            .values
                            .iter()
                            .zip(&grad)
                            .map(|(&v, &g)| v * g)
                            .collect();
                        self.add_to_grad(b, &vals);
                    }
                }
                Op::Div(a, b) => {
                    if self.needs(a) {
                        let vals: Vec<f64> = self.nodes[b]
                            .values
                            .iter()
                            .zip(&grad)
                            .map(|(&v, &g)| g / v)
                            .collect();
                        self.add_to_grad(a, &vals);
                    }
                    if self.needs(b) {
                        let vals: Vec<f64> = self.nodes[a]
                            .values
                            .iter()
                            .zip(&self.nodes[b].values)
                            .zip(&grad)
                            .map(|((&av, &bv), &g)| -g * av / (bv * bv))
                            .collect();
                        self.add_to_grad(b, &vals);
                    }
                }
                Op::MulBc1(a, map) => {
                    let shape = self.nodes[a].shape;
                    let plane = shape.plane();
                    if self.needs(a) {
                        let mut vals = vec![0.0f64; shape.len()];
                        for c in 0..shape.c {
                            for i in 0..plane {
                                vals[c * plane + i] =
                                    grad[c * plane + i] * self.nodes[map].values[i];
                            }
                        }
                        self.add_to_grad(a, &vals);
                    }
                    if self.needs(map) {
                        let mut vals = vec![0.0f64; plane];
                        for c in 0..shape.c {
                            for i in 0..plane {
                                vals[i] +=
                                    grad[c * plane + i] * self.nodes[a].values[c * plane + i];
                            }
                        }
                        self.add_to_grad(map, &vals);
                    }
                }
                Op::AddScalar(a) => self.accumulate(a, |_, g| g, &grad),
                Op::MulScalar(a, s) => self.accumulate(a, move |_, g| g * s, &grad),
                Op::Sigmoid(a) => {
                    let vals: Vec<f64> = self.nodes[id]
                        .values
                        .iter()
                        .zip(&grad)
                        .map(|(&y, &g)| g * y * (1.0 - y))
                        .collect();
                    self.add_to_grad(a, &vals);
                }
                Op::Silu(a) => {
                    let vals: Vec<f64> = self.nodes[a]
                        .values
                        .iter()
                        .zip(&grad)
                        .map(|(&x, &g)| {
                            let s = sigmoid(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    self.add_to_grad(a, &vals);
                }
                Op::Abs(a) => {
                    let vals: Vec<f64> = self.nodes[a]
                        .values
                        .iter()
                        .zip(&grad)
                        .map(|(&x, &g)| {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.add_to_grad(a, &vals);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    in_c,
                    out_c,
                    kernel,
                } => {
                    self.conv_backward(id, input, weight, bias, in_c, out_c, kernel, &grad);
                }
                Op::ConcatC(a, b) => {
                    let na = self.nodes[a].shape.len();
                    if self.needs(a) {
                        self.add_to_grad(a, &grad[..na]);
                    }
                    if self.needs(b) {
                        self.add_to_grad(b, &grad[na..]);
                    }
                }
                Op::AvgPool { input, win } => {
                    let in_shape = self.nodes[input].shape;
                    let oh = in_shape.h - win + 1;
                    let ow = in_shape.w - win + 1;
                    let norm = 1.0 / (win * win) as f64;
                    let mut vals = vec![0.0f64; in_shape.len()];
                    for c in 0..in_shape.c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[c * oh * ow + oy * ow + ox] * norm;
                                for ky in 0..win {
                                    let row = c * in_shape.plane() + (oy + ky) * in_shape.w + ox;
                                    for kx in 0..win {
                                        vals[row + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                    self.add_to_grad(input, &vals);
                }
                Op::DiffX(input) => {
                    let in_shape = self.nodes[input].shape;
                    let mut vals = vec![0.0f64; in_shape.len()];
                    let ow = in_shape.w - 1;
                    for c in 0..in_shape.c {
                        for y in 0..in_shape.h {
                            let row_in = c * in_shape.plane() + y * in_shape.w;
                            let row_out = c * in_shape.h * ow + y * ow;
                            for x in 0..ow {
                                let g = grad[row_out + x];
                                vals[row_in + x + 1] += g;
                                vals[row_in + x] -= g;
                            }
                        }
                    }
                    self.add_to_grad(input, &vals);
                }
                Op::DiffY(input) => {
                    let in_shape = self.nodes[input].shape;
                    let mut vals = vec![0.0f64; in_shape.len()];
                    let oh = in_shape.h - 1;
                    for c in 0..in_shape.c {
                        for y in 0..oh {
                            let row_in = c * in_shape.plane() + y * in_shape.w;
                            let row_out = c * oh * in_shape.w + y * in_shape.w;
                            for x in 0..in_shape.w {
                                let g = grad[row_out + x];
                                vals[row_in + in_shape.w + x] += g;
                                vals[row_in + x] -= g;
                            }
                        }
                    }
                    self.add_to_grad(input, &vals);
                }
                Op::Sum(input) => {
                    let n = self.nodes[input].shape.len();
                    let vals = vec![grad[0]; n];
                    self.add_to_grad(input, &vals);
                }
            }
            // Restore the grad so callers can read it (leaves in particular).
            self.nodes[id].grad = Some(grad);
        }
    }

    fn accumulate(&mut self, target: NodeId, f: impl Fn(usize, f64) -> f64, grad: &[f64]) {
        if !self.needs(target) {
            return;
        }
        let vals: Vec<f64> = grad.iter().enumerate().map(|(i, &g)| f(i, g)).collect();
        self.add_to_grad(target, &vals);
    }

    fn add_to_grad(&mut self, target: NodeId, vals: &[f64]) {
        if !self.needs(target) {
            return;
        }
        let buf = self.grad_buf(target);
        debug_assert_eq!(buf.len(), vals.len());
        for (b, &v) in buf.iter_mut().zip(vals) {
            *b += v;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &mut self,
        _out: NodeId,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        grad: &[f64],
    ) {
        let in_shape = self.nodes[input].shape;
        let (h, w) = (in_shape.h, in_shape.w);
        let plane = h * w;
        let pad = kernel / 2;
        let k2 = kernel * kernel;

        if self.needs(bias) {
            let mut vals = vec![0.0f64; out_c];
            for (oc, val) in vals.iter_mut().enumerate() {
                *val = grad[oc * plane..(oc + 1) * plane].iter().sum();
            }
            self.add_to_grad(bias, &vals);
        }

        if self.needs(weight) {
            let src = &self.nodes[input].values;
            let mut vals = vec![0.0f64; out_c * in_c * k2];
            for oc in 0..out_c {
                for ic in 0..in_c {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let mut acc = 0.0f64;
                            for y in 0..h {
                                let yy = y as i64 + ky as i64 - pad as i64;
                                if yy < 0 || yy >= h as i64 {
                                    continue;
                                }
                                for x in 0..w {
                                    let xx = x as i64 + kx as i64 - pad as i64;
                                    if xx < 0 || xx >= w as i64 {
                                        continue;
                                    }
                                    acc += grad[oc * plane + y * w + x]
                                        * src[ic * plane + yy as usize * w + xx as usize];
                                }
                            }
                            vals[((oc * in_c + ic) * kernel + ky) * kernel + kx] = acc;
                        }
                    }
                }
            }
            self.add_to_grad(weight, &vals);
        }

        if self.needs(input) {
            let wts = &self.nodes[weight].values;
            let mut vals = vec![0.0f64; in_c * plane];
            for oc in 0..out_c {
                for ic in 0..in_c {
                    let wbase = (oc * in_c + ic) * k2;
                    for y in 0..h {
                        for x in 0..w {
                            let g = grad[oc * plane + y * w + x];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..kernel {
                                let yy = y as i64 + ky as i64 - pad as i64;
                                if yy < 0 || yy >= h as i64 {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let xx = x as i64 + kx as i64 - pad as i64;
                                    if xx < 0 || xx >= w as i64 {
                                        continue;
                                    }
                                    vals[ic * plane + yy as usize * w + xx as usize] +=
                                        g * wts[wbase + ky * kernel + kx];
                                }
                            }
                        }
                    }
                }
            }
            self.add_to_grad(input, &vals);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn conv_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    in_shape: Shape,
    out_c: usize,
    kernel: usize,
) -> Vec<f64> {
    let (h, w) = (in_shape.h, in_shape.w);
    let plane = h * w;
    let pad = kernel / 2;
    let k2 = kernel * kernel;
    let mut out = vec![0.0f64; out_c * plane];
    for oc in 0..out_c {
        let out_base = oc * plane;
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[oc];
                for ic in 0..in_shape.c {
                    let wbase = (oc * in_shape.c + ic) * k2;
                    let in_base = ic * plane;
                    for ky in 0..kernel {
                        let yy = y as i64 + ky as i64 - pad as i64;
                        if yy < 0 || yy >= h as i64 {
                            continue;
                        }
                        let row = in_base + yy as usize * w;
                        for kx in 0..kernel {
                            let xx = x as i64 + kx as i64 - pad as i64;
                            if xx < 0 || xx >= w as i64 {
                                continue;
                            }
                            acc += weight[wbase + ky * kernel + kx] * input[row + xx as usize];
                        }
                    }
                }
                out[out_base + y * w + x] = acc;
            }
        }
    }
    out
}
