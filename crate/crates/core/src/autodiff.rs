//! Reverse-mode automatic differentiation over a flat tape of dense tensors.
//!
//! Only the operations the summarizer needs are provided. Values are always
//! double precision: the finite-difference checks that guard the model demand
//! it, and at this scale the speed difference does not matter.

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Vector(n) => *n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r} x {c}]"),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Matrix product of two matrices.
    Matmul { a: NodeId, b: NodeId },
    /// Matrix times column vector.
    Matvec { m: NodeId, v: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId> },
    StackRows { rows: Vec<NodeId> },
    Row { m: NodeId, idx: usize },
    GatherRows { table: NodeId, ids: Vec<usize> },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Softmax { x: NodeId },
    /// Sum of rows weighted by a vector: out = rowsᵀ · weights.
    WeightedSum { rows: NodeId, weights: NodeId },
    /// out[ids[i]] += weights[i] into a fresh zero vector of length `size`.
    ScatterAdd { weights: NodeId, ids: Vec<usize> },
    /// Copy into the front of a longer zero vector.
    PadZeros { x: NodeId },
    /// p·a + (1−p)·b with scalar p.
    ScalarMix { p: NodeId, a: NodeId, b: NodeId },
    Dot { a: NodeId, b: NodeId },
    Pick { x: NodeId, idx: usize },
    Ln { x: NodeId },
    Scale { x: NodeId, k: f64 },
    MeanScalars { xs: Vec<NodeId> },
    SumVec { x: NodeId },
    /// Elementwise product with a constant mask (inverted dropout).
    MulMask { x: NodeId, mask: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Append-only computation graph. Every op reads strictly earlier nodes, so
/// a reverse sweep over the tape is a valid backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    /// Gradient of the last backward pass; `None` when the node was not
    /// reached, which means the derivative is zero.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.as_ref().and_then(|g| g[id].as_deref())
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node { op, shape, value });
        self.nodes.len() - 1
    }

    pub fn vector(&mut self, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.push(Op::Leaf, Shape::Vector(n), value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.vector(vec![value])
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        if value.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data of length {} cannot fill shape [{rows} x {cols}]",
                value.len()
            )));
        }
        Ok(self.push(Op::Leaf, Shape::Matrix(rows, cols), value))
    }

    fn vector_len(&self, id: NodeId, ctx: &str) -> Result<usize> {
        match self.shape(id) {
            Shape::Vector(n) => Ok(n),
            s => Err(Error::contract(format!("{ctx} expects a vector, got {s}"))),
        }
    }

    fn matrix_dims(&self, id: NodeId, ctx: &str) -> Result<(usize, usize)> {
        match self.shape(id) {
            Shape::Matrix(r, c) => Ok((r, c)),
            s => Err(Error::contract(format!("{ctx} expects a matrix, got {s}"))),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.matrix_dims(a, "matmul lhs")?;
        let (br, bc) = self.matrix_dims(b, "matmul rhs")?;
        if ac != br {
            return Err(Error::contract(format!(
                "matmul shape mismatch: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let mut out = vec![0.0; ar * bc];
        for i in 0..ar {
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * bc..(k + 1) * bc];
                let orow = &mut out[i * bc..(i + 1) * bc];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(self.push(Op::Matmul { a, b }, Shape::Matrix(ar, bc), out))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(m, "matvec")?;
        let n = self.vector_len(v, "matvec")?;
        if c != n {
            return Err(Error::contract(format!(
                "matvec shape mismatch: {} vs {}",
                self.shape(m),
                self.shape(v)
            )));
        }
        let (mv, vv) = (&self.nodes[m].value, &self.nodes[v].value);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            out[i] = row.iter().zip(vv).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(Op::Matvec { m, v }, Shape::Vector(r), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "add shape mismatch: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a);
        Ok(self.push(Op::Add { a, b }, shape, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "mul shape mismatch: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a);
        Ok(self.push(Op::Mul { a, b }, shape, out))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero vectors"));
        }
        let mut out = Vec::new();
        for &p in parts {
            self.vector_len(p, "concat")?;
            out.extend_from_slice(&self.nodes[p].value);
        }
        let n = out.len();
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, Shape::Vector(n), out))
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::contract("stack_rows of zero rows"));
        }
        let width = self.vector_len(rows[0], "stack_rows")?;
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let w = self.vector_len(r, "stack_rows")?;
            if w != width {
                return Err(Error::contract(format!(
                    "stack_rows width mismatch: {} vs {}",
                    Shape::Vector(width),
                    Shape::Vector(w)
                )));
            }
            out.extend_from_slice(&self.nodes[r].value);
        }
        Ok(self.push(
            Op::StackRows { rows: rows.to_vec() },
            Shape::Matrix(rows.len(), width),
            out,
        ))
    }

    pub fn row(&mut self, m: NodeId, idx: usize) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(m, "row")?;
        if idx >= r {
            return Err(Error::contract(format!(
                "row {idx} out of bounds for {}",
                self.shape(m)
            )));
        }
        let out = self.nodes[m].value[idx * c..(idx + 1) * c].to_vec();
        Ok(self.push(Op::Row { m, idx }, Shape::Vector(c), out))
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(table, "gather_rows")?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::contract(format!(
                    "gather_rows id {id} out of bounds for {}",
                    self.shape(table)
                )));
            }
            out.extend_from_slice(&self.nodes[table].value[id * c..(id + 1) * c]);
        }
        Ok(self.push(
            Op::GatherRows { table, ids: ids.to_vec() },
            Shape::Matrix(ids.len(), c),
            out,
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x].value.iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x);
        self.push(Op::Tanh { x }, shape, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x]
            .value
            .iter()
            .map(|v| {
                if *v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.shape(x);
        self.push(Op::Sigmoid { x }, shape, out)
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.vector_len(x, "softmax")?;
        if n == 0 {
            return Err(Error::contract("softmax of an empty vector"));
        }
        let out = softmax_stable(&self.nodes[x].value);
        Ok(self.push(Op::Softmax { x }, Shape::Vector(n), out))
    }

    pub fn weighted_sum(&mut self, rows: NodeId, weights: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(rows, "weighted_sum")?;
        let n = self.vector_len(weights, "weighted_sum")?;
        if r != n {
            return Err(Error::contract(format!(
                "weighted_sum shape mismatch: {} vs {}",
                self.shape(rows),
                self.shape(weights)
            )));
        }
        let (mv, wv) = (&self.nodes[rows].value, &self.nodes[weights].value);
        let mut out = vec![0.0; c];
        for i in 0..r {
            let w = wv[i];
            let rowi = &mv[i * c..(i + 1) * c];
            for (o, &x) in out.iter_mut().zip(rowi) {
                *o += w * x;
            }
        }
        Ok(self.push(Op::WeightedSum { rows, weights }, Shape::Vector(c), out))
    }

    pub fn scatter_add(&mut self, weights: NodeId, ids: &[usize], size: usize) -> Result<NodeId> {
        let n = self.vector_len(weights, "scatter_add")?;
        if n != ids.len() {
            return Err(Error::contract(format!(
                "scatter_add weight shape {} does not cover {} ids",
                self.shape(weights),
                ids.len()
            )));
        }
        let mut out = vec![0.0; size];
        for (&w, &id) in self.nodes[weights].value.iter().zip(ids) {
            if id >= size {
                return Err(Error::contract(format!(
                    "scatter_add id {id} out of bounds for size {size}"
                )));
            }
            out[id] += w;
        }
        Ok(self.push(
            Op::ScatterAdd { weights, ids: ids.to_vec() },
            Shape::Vector(size),
            out,
        ))
    }

    pub fn pad_zeros(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let n = self.vector_len(x, "pad_zeros")?;
        if size < n {
            return Err(Error::contract(format!(
                "pad_zeros target {size} smaller than input {}",
                self.shape(x)
            )));
        }
        let mut out = self.nodes[x].value.clone();
        out.resize(size, 0.0);
        Ok(self.push(Op::PadZeros { x }, Shape::Vector(size), out))
    }

    pub fn scalar_mix(&mut self, p: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.vector_len(p, "scalar_mix gate")? != 1 {
            return Err(Error::contract(format!(
                "scalar_mix gate must be a scalar, got {}",
                self.shape(p)
            )));
        }
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "scalar_mix shape mismatch: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let pv = self.nodes[p].value[0];
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| pv * x + (1.0 - pv) * y)
            .collect();
        let shape = self.shape(a);
        Ok(self.push(Op::ScalarMix { p, a, b }, shape, out))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let na = self.vector_len(a, "dot")?;
        let nb = self.vector_len(b, "dot")?;
        if na != nb {
            return Err(Error::contract(format!(
                "dot shape mismatch: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v: f64 = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot { a, b }, Shape::Vector(1), vec![v]))
    }

    pub fn pick(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        let n = self.vector_len(x, "pick")?;
        if idx >= n {
            return Err(Error::contract(format!(
                "pick index {idx} out of bounds for {}",
                self.shape(x)
            )));
        }
        let v = self.nodes[x].value[idx];
        Ok(self.push(Op::Pick { x, idx }, Shape::Vector(1), vec![v]))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x].value.iter().map(|v| v.ln()).collect();
        let shape = self.shape(x);
        self.push(Op::Ln { x }, shape, out)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x].value.iter().map(|v| k * v).collect();
        let shape = self.shape(x);
        self.push(Op::Scale { x, k }, shape, out)
    }

    pub fn mean_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("mean of zero scalars"));
        }
        let mut total = 0.0;
        for &x in xs {
            if self.vector_len(x, "mean_scalars")? != 1 {
                return Err(Error::contract(format!(
                    "mean_scalars expects scalars, got {}",
                    self.shape(x)
                )));
            }
            total += self.nodes[x].value[0];
        }
        let v = total / xs.len() as f64;
        Ok(self.push(Op::MeanScalars { xs: xs.to_vec() }, Shape::Vector(1), vec![v]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v: f64 = self.nodes[x].value.iter().sum();
        self.push(Op::SumVec { x }, Shape::Vector(1), vec![v])
    }

    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.nodes[x].value.len() {
            return Err(Error::contract(format!(
                "mask of length {} does not fit {}",
                mask.len(),
                self.shape(x)
            )));
        }
        let out: Vec<f64> = self.nodes[x]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x);
        Ok(self.push(Op::MulMask { x, mask }, shape, out))
    }

    /// Reverse sweep from a scalar root. Populates gradients for every node
    /// the root depends on; untouched nodes have zero gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::contract(
                "backward already ran on this graph; build a new graph to differentiate again",
            ));
        }
        if self.shape(root) != Shape::Vector(1) {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got {}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(dy) = grads[id].take() else { continue };
            self.accumulate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, id: NodeId, dy: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let ensure = |grads: &mut Vec<Option<Vec<f64>>>, node: NodeId, len: usize| {
            if grads[node].is_none() {
                grads[node] = Some(vec![0.0; len]);
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ar, ac) = match self.shape(*a) {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let bc = match self.shape(*b) {
                    Shape::Matrix(_, c) => c,
                    _ => unreachable!(),
                };
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                ensure(grads, *a, ar * ac);
                {
                    let da = grads[*a].as_mut().unwrap();
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut s = 0.0;
                            for j in 0..bc {
                                s += dy[i * bc + j] * bv[k * bc + j];
                            }
                            da[i * ac + k] += s;
                        }
                    }
                }
                ensure(grads, *b, ac * bc);
                let db = grads[*b].as_mut().unwrap();
                for k in 0..ac {
                    for j in 0..bc {
                        let mut s = 0.0;
                        for i in 0..ar {
                            s += av[i * ac + k] * dy[i * bc + j];
                        }
                        db[k * bc + j] += s;
                    }
                }
            }
            Op::Matvec { m, v } => {
                let (r, c) = match self.shape(*m) {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let mv = &self.nodes[*m].value;
                let vv = &self.nodes[*v].value;
                ensure(grads, *m, r * c);
                {
                    let dm = grads[*m].as_mut().unwrap();
                    for i in 0..r {
                        let di = dy[i];
                        if di == 0.0 {
                            continue;
                        }
                        let drow = &mut dm[i * c..(i + 1) * c];
                        for (g, &x) in drow.iter_mut().zip(vv) {
                            *g += di * x;
                        }
                    }
                }
                ensure(grads, *v, c);
                let dv = grads[*v].as_mut().unwrap();
                for i in 0..r {
                    let di = dy[i];
                    if di == 0.0 {
                        continue;
                    }
                    let row = &mv[i * c..(i + 1) * c];
                    for (g, &x) in dv.iter_mut().zip(row) {
                        *g += di * x;
                    }
                }
            }
            Op::Add { a, b } => {
                for &side in &[*a, *b] {
                    ensure(grads, side, dy.len());
                    for (g, d) in grads[side].as_mut().unwrap().iter_mut().zip(dy) {
                        *g += d;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                ensure(grads, a, dy.len());
                {
                    let bv = &self.nodes[b].value;
                    let da = grads[a].as_mut().unwrap();
                    for i in 0..dy.len() {
                        da[i] += dy[i] * bv[i];
                    }
                }
                ensure(grads, b, dy.len());
                let av = &self.nodes[a].value;
                let db = grads[b].as_mut().unwrap();
                for i in 0..dy.len() {
                    db[i] += dy[i] * av[i];
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    ensure(grads, p, n);
                    let dp = grads[p].as_mut().unwrap();
                    for i in 0..n {
                        dp[i] += dy[offset + i];
                    }
                    offset += n;
                }
            }
            Op::StackRows { rows } => {
                let width = match self.shape(id) {
                    Shape::Matrix(_, c) => c,
                    _ => unreachable!(),
                };
                for (i, &r) in rows.iter().enumerate() {
                    ensure(grads, r, width);
                    let dr = grads[r].as_mut().unwrap();
                    for j in 0..width {
                        dr[j] += dy[i * width + j];
                    }
                }
            }
            Op::Row { m, idx } => {
                let (r, c) = match self.shape(*m) {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                ensure(grads, *m, r * c);
                let dm = grads[*m].as_mut().unwrap();
                for j in 0..c {
                    dm[idx * c + j] += dy[j];
                }
            }
            Op::GatherRows { table, ids } => {
                let (r, c) = match self.shape(*table) {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                ensure(grads, *table, r * c);
                let dt = grads[*table].as_mut().unwrap();
                for (i, &rid) in ids.iter().enumerate() {
                    for j in 0..c {
                        dt[rid * c + j] += dy[i * c + j];
                    }
                }
            }
            Op::Tanh { x } => {
                ensure(grads, *x, dy.len());
                let yv = &self.nodes[id].value;
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += dy[i] * (1.0 - yv[i] * yv[i]);
                }
            }
            Op::Sigmoid { x } => {
                ensure(grads, *x, dy.len());
                let yv = &self.nodes[id].value;
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
                }
            }
            Op::Softmax { x } => {
                let yv = &self.nodes[id].value;
                let dot: f64 = dy.iter().zip(yv).map(|(d, y)| d * y).sum();
                ensure(grads, *x, dy.len());
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += yv[i] * (dy[i] - dot);
                }
            }
            Op::WeightedSum { rows, weights } => {
                let (r, c) = match self.shape(*rows) {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let wv = &self.nodes[*weights].value;
                let mv = &self.nodes[*rows].value;
                ensure(grads, *rows, r * c);
                {
                    let dm = grads[*rows].as_mut().unwrap();
                    for i in 0..r {
                        let w = wv[i];
                        if w == 0.0 {
                            continue;
                        }
                        let drow = &mut dm[i * c..(i + 1) * c];
                        for (g, d) in drow.iter_mut().zip(dy) {
                            *g += w * d;
                        }
                    }
                }
                ensure(grads, *weights, r);
                let dw = grads[*weights].as_mut().unwrap();
                for i in 0..r {
                    let row = &mv[i * c..(i + 1) * c];
                    dw[i] += row.iter().zip(dy).map(|(x, d)| x * d).sum::<f64>();
                }
            }
            Op::ScatterAdd { weights, ids } => {
                ensure(grads, *weights, ids.len());
                let dw = grads[*weights].as_mut().unwrap();
                for (i, &id_) in ids.iter().enumerate() {
                    dw[i] += dy[id_];
                }
            }
            Op::PadZeros { x } => {
                let n = self.nodes[*x].value.len();
                ensure(grads, *x, n);
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..n {
                    dx[i] += dy[i];
                }
            }
            Op::ScalarMix { p, a, b } => {
                let pv = self.nodes[*p].value[0];
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                ensure(grads, *p, 1);
                {
                    let dp = grads[*p].as_mut().unwrap();
                    dp[0] += dy
                        .iter()
                        .enumerate()
                        .map(|(i, d)| d * (av[i] - bv[i]))
                        .sum::<f64>();
                }
                ensure(grads, *a, dy.len());
                {
                    let da = grads[*a].as_mut().unwrap();
                    for i in 0..dy.len() {
                        da[i] += pv * dy[i];
                    }
                }
                ensure(grads, *b, dy.len());
                let db = grads[*b].as_mut().unwrap();
                for i in 0..dy.len() {
                    db[i] += (1.0 - pv) * dy[i];
                }
            }
            Op::Dot { a, b } => {
                let d = dy[0];
                let (a, b) = (*a, *b);
                ensure(grads, a, self.nodes[a].value.len());
                {
                    let bv = &self.nodes[b].value;
                    let da = grads[a].as_mut().unwrap();
                    for i in 0..da.len() {
                        da[i] += d * bv[i];
                    }
                }
                ensure(grads, b, self.nodes[b].value.len());
                let av = &self.nodes[a].value;
                let db = grads[b].as_mut().unwrap();
                for i in 0..db.len() {
                    db[i] += d * av[i];
                }
            }
            Op::Pick { x, idx } => {
                ensure(grads, *x, self.nodes[*x].value.len());
                grads[*x].as_mut().unwrap()[*idx] += dy[0];
            }
            Op::Ln { x } => {
                let xv = &self.nodes[*x].value;
                ensure(grads, *x, dy.len());
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += dy[i] / xv[i];
                }
            }
            Op::Scale { x, k } => {
                ensure(grads, *x, dy.len());
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += k * dy[i];
                }
            }
            Op::MeanScalars { xs } => {
                let d = dy[0] / xs.len() as f64;
                for &x in xs {
                    ensure(grads, x, 1);
                    grads[x].as_mut().unwrap()[0] += d;
                }
            }
            Op::SumVec { x } => {
                let n = self.nodes[*x].value.len();
                ensure(grads, *x, n);
                let dx = grads[*x].as_mut().unwrap();
                for g in dx.iter_mut() {
                    *g += dy[0];
                }
            }
            Op::MulMask { x, mask } => {
                ensure(grads, *x, dy.len());
                let dx = grads[*x].as_mut().unwrap();
                for i in 0..dy.len() {
                    dx[i] += dy[i] * mask[i];
                }
            }
        }
    }
}

/// Max-subtracted softmax, usable outside the tape as well.
pub fn softmax_stable(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Central finite differences of a scalar function at `x`.
pub fn finite_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Worst elementwise relative error with an absolute floor: disagreements
/// no larger than `floor` count as zero error, since a central difference
/// on an O(1) function in double precision carries ~1e-11 of rounding
/// noise at h = 1e-5 and cannot resolve differences below that. Beyond
/// the floor the error is relative to the larger magnitude. Returns the
/// error and the offending index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let diff = (analytic[i] - numeric[i]).abs();
        if diff <= floor {
            continue;
        }
        let err = diff / analytic[i].abs().max(numeric[i].abs()).max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}
