//! Reverse-mode autodiff on a flat tape.
//!
//! The tape is an eager arena: each operation computes its value into a
//! shared buffer when recorded, and `backward` replays the ops in reverse,
//! accumulating adjoints for every node and gradients for every referenced
//! parameter. Parameters live in one external flat slice; ops reference them
//! by offset, so a parameter gradient comes back as a single dense vector
//! aligned with that slice.
//!
//! Only first-order vector-Jacobian products are implemented. Higher-order
//! quantities (the pose-gradient inside the training loss) are obtained by
//! unrolling the inner backward pass into explicit forward ops
//! ([`Op::MatTVec`] etc.), after which the single `backward` call
//! differentiates through them.

/// Handle to a tape node; only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Host-supplied constant or variable; a leaf.
    Input,
    /// y = W·x + b with W row-major `rows`×`cols` at `w`, b at `b` (params).
    Affine { w: usize, b: usize, x: NodeId, rows: usize, cols: usize },
    /// Column-batched affine: Y = W·X + b·1ᵀ with X `cols`×`n` column-major.
    AffineMat { w: usize, b: usize, x: NodeId, rows: usize, cols: usize, n: usize },
    /// y = Wᵀ·x with W row-major `rows`×`cols`; x has length `rows`.
    MatTVec { w: usize, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise product.
    Mul { a: NodeId, b: NodeId },
    /// y = a·x + b with scalar constants (only `a` matters in backward).
    AffScalar { a: f64, x: NodeId },
    /// Logistic function; backward uses the stored output.
    Sigmoid { x: NodeId },
    Concat { xs: Vec<NodeId> },
    /// y = x[start .. start+len].
    Slice { x: NodeId, start: usize },
    /// Scalar inner product.
    Dot { a: NodeId, b: NodeId },
    /// Row-wise max over the columns of an `rows`×`n` column-major matrix;
    /// `winners[r]` records the argmax column (first on ties).
    MaxPoolCols { x: NodeId, rows: usize, winners: Vec<usize> },
}

struct Node {
    op: Op,
    off: usize,
    len: usize,
}

/// Eager reverse-mode tape over an external parameter slice.
pub struct Tape<'p> {
    params: &'p [f64],
    vals: Vec<f64>,
    nodes: Vec<Node>,
}

/// Result of a backward sweep from a scalar output.
pub struct Gradients {
    /// d(output)/d(params), aligned with the tape's parameter slice.
    pub param: Vec<f64>,
    adj: Vec<f64>,
}

impl Gradients {
    /// Adjoint (d output / d node value) of any node, e.g. an input.
    pub fn node<'a>(&'a self, tape: &Tape, id: NodeId) -> &'a [f64] {
        let n = &tape.nodes[id.0];
        &self.adj[n.off..n.off + n.len]
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape { params, vals: Vec::new(), nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.vals[n.off..n.off + n.len]
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    fn off_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].off
    }

    /// Reserves the output range and returns (node offset, input view,
    /// output view): outputs always live after every input on the arena.
    fn alloc(&mut self, len: usize) -> (usize, &[f64], &mut [f64]) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let (lo, hi) = self.vals.split_at_mut(off);
        (off, lo, &mut hi[..len])
    }

    fn push(&mut self, op: Op, off: usize, len: usize) -> NodeId {
        self.nodes.push(Node { op, off, len });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, data: &[f64]) -> NodeId {
        let (off, _, y) = self.alloc(data.len());
        y.copy_from_slice(data);
        self.push(Op::Input, off, data.len())
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        let (off, _, _) = self.alloc(len);
        self.push(Op::Input, off, len)
    }

    pub fn affine(&mut self, w: usize, b: usize, rows: usize, cols: usize, x: NodeId) -> NodeId {
        assert_eq!(self.len_of(x), cols, "affine input width");
        let xo = self.off_of(x);
        let params = self.params;
        let (off, lo, y) = self.alloc(rows);
        let xv = &lo[xo..xo + cols];
        for (r, yr) in y.iter_mut().enumerate() {
            let wr = &params[w + r * cols..w + (r + 1) * cols];
            let mut acc = params[b + r];
            for c in 0..cols {
                acc += wr[c] * xv[c];
            }
            *yr = acc;
        }
        self.push(Op::Affine { w, b, x, rows, cols }, off, rows)
    }

    pub fn affine_mat(
        &mut self,
        w: usize,
        b: usize,
        rows: usize,
        cols: usize,
        n: usize,
        x: NodeId,
    ) -> NodeId {
        assert_eq!(self.len_of(x), cols * n, "batched affine input size");
        let xo = self.off_of(x);
        let params = self.params;
        let (off, lo, y) = self.alloc(rows * n);
        let xv = &lo[xo..xo + cols * n];
        for j in 0..n {
            let xj = &xv[j * cols..(j + 1) * cols];
            let yj = &mut y[j * rows..(j + 1) * rows];
            for (r, yr) in yj.iter_mut().enumerate() {
                let wr = &params[w + r * cols..w + (r + 1) * cols];
                let mut acc = params[b + r];
                for c in 0..cols {
                    acc += wr[c] * xj[c];
                }
                *yr = acc;
            }
        }
        self.push(Op::AffineMat { w, b, x, rows, cols, n }, off, rows * n)
    }

    pub fn mat_t_vec(&mut self, w: usize, rows: usize, cols: usize, x: NodeId) -> NodeId {
        assert_eq!(self.len_of(x), rows, "transposed matvec input length");
        let xo = self.off_of(x);
        let params = self.params;
        let (off, lo, y) = self.alloc(cols);
        let xv = &lo[xo..xo + rows];
        for (r, &xr) in xv.iter().enumerate() {
            let wr = &params[w + r * cols..w + (r + 1) * cols];
            for c in 0..cols {
                y[c] += wr[c] * xr;
            }
        }
        self.push(Op::MatTVec { w, x, rows, cols }, off, cols)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> (usize, usize) {
        let len = self.len_of(a);
        assert_eq!(len, self.len_of(b), "elementwise op arity");
        let (ao, bo) = (self.off_of(a), self.off_of(b));
        let (off, lo, y) = self.alloc(len);
        for i in 0..len {
            y[i] = f(lo[ao + i], lo[bo + i]);
        }
        (off, len)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (off, len) = self.binary(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, off, len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (off, len) = self.binary(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, off, len)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (off, len) = self.binary(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, off, len)
    }

    pub fn aff_scalar(&mut self, a: f64, b: f64, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        let xo = self.off_of(x);
        let (off, lo, y) = self.alloc(len);
        for i in 0..len {
            y[i] = a * lo[xo + i] + b;
        }
        self.push(Op::AffScalar { a, x }, off, len)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        let xo = self.off_of(x);
        let (off, lo, y) = self.alloc(len);
        for i in 0..len {
            y[i] = 1.0 / (1.0 + (-lo[xo + i]).exp());
        }
        self.push(Op::Sigmoid { x }, off, len)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let total: usize = xs.iter().map(|&x| self.len_of(x)).sum();
        let metas: Vec<(usize, usize)> = xs.iter().map(|&x| (self.off_of(x), self.len_of(x))).collect();
        let (off, lo, y) = self.alloc(total);
        let mut at = 0;
        for (xo, len) in metas {
            y[at..at + len].copy_from_slice(&lo[xo..xo + len]);
            at += len;
        }
        self.push(Op::Concat { xs: xs.to_vec() }, off, total)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.len_of(x), "slice out of range");
        let xo = self.off_of(x);
        let (off, lo, y) = self.alloc(len);
        y.copy_from_slice(&lo[xo + start..xo + start + len]);
        self.push(Op::Slice { x, start }, off, len)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.len_of(a);
        assert_eq!(len, self.len_of(b), "dot arity");
        let (ao, bo) = (self.off_of(a), self.off_of(b));
        let (off, lo, y) = self.alloc(1);
        let mut acc = 0.0;
        for i in 0..len {
            acc += lo[ao + i] * lo[bo + i];
        }
        y[0] = acc;
        self.push(Op::Dot { a, b }, off, 1)
    }

    /// Row-wise max over the `n` columns of an `rows`×`n` column-major
    /// matrix node (PointNet-style pooling).
    pub fn max_pool_cols(&mut self, x: NodeId, rows: usize, n: usize) -> NodeId {
        assert_eq!(self.len_of(x), rows * n, "pool input size");
        assert!(n > 0, "pool over zero columns");
        let xo = self.off_of(x);
        let mut winners = vec![0usize; rows];
        let (off, lo, y) = self.alloc(rows);
        let xv = &lo[xo..xo + rows * n];
        for r in 0..rows {
            let mut best = xv[r];
            let mut win = 0;
            for j in 1..n {
                let v = xv[j * rows + r];
                if v > best {
                    best = v;
                    win = j;
                }
            }
            y[r] = best;
            winners[r] = win;
        }
        self.push(Op::MaxPoolCols { x, rows, winners }, off, rows)
    }

    /// x·sigmoid(x), recorded from primitives.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let s = self.sigmoid(x);
        self.mul(x, s)
    }

    /// silu′(x) = s(x)·(1 + x·(1 − s(x))), recorded from primitives so it is
    /// itself differentiable (needed by the unrolled inner backward pass).
    pub fn silu_prime(&mut self, x: NodeId) -> NodeId {
        let s = self.sigmoid(x);
        let one_minus_s = self.aff_scalar(-1.0, 1.0, s);
        let x_oms = self.mul(x, one_minus_s);
        let inner = self.aff_scalar(1.0, 1.0, x_oms);
        self.mul(s, inner)
    }

    /// Reverse sweep from a scalar node: returns parameter gradients and
    /// per-node adjoints.
    pub fn backward(&self, out: NodeId) -> Gradients {
        let o = &self.nodes[out.0];
        assert_eq!(o.len, 1, "backward starts from a scalar");
        let mut adj = vec![0.0; self.vals.len()];
        adj[o.off] = 1.0;
        let mut pg = vec![0.0; self.params.len()];

        for node in self.nodes[..=out.0].iter().rev() {
            let (lo, hi) = adj.split_at_mut(node.off);
            let ay = &hi[..node.len];
            if ay.iter().all(|&a| a == 0.0) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Affine { w, b, x, rows, cols } => {
                    let xo = self.off_of(*x);
                    let xv = &self.vals[xo..xo + cols];
                    for r in 0..*rows {
                        let g = ay[r];
                        if g == 0.0 {
                            continue;
                        }
                        pg[b + r] += g;
                        let wr = w + r * cols;
                        for c in 0..*cols {
                            lo[xo + c] += self.params[wr + c] * g;
                            pg[wr + c] += xv[c] * g;
                        }
                    }
                }
                Op::AffineMat { w, b, x, rows, cols, n } => {
                    let xo = self.off_of(*x);
                    for j in 0..*n {
                        let ayj = &ay[j * rows..(j + 1) * rows];
                        let xj = &self.vals[xo + j * cols..xo + (j + 1) * cols];
                        for r in 0..*rows {
                            let g = ayj[r];
                            if g == 0.0 {
                                continue;
                            }
                            pg[b + r] += g;
                            let wr = w + r * cols;
                            for c in 0..*cols {
                                lo[xo + j * cols + c] += self.params[wr + c] * g;
                                pg[wr + c] += xj[c] * g;
                            }
                        }
                    }
                }
                Op::MatTVec { w, x, rows, cols } => {
                    let xo = self.off_of(*x);
                    let xv = &self.vals[xo..xo + rows];
                    for r in 0..*rows {
                        let wr = w + r * cols;
                        let mut acc = 0.0;
                        for c in 0..*cols {
                            acc += self.params[wr + c] * ay[c];
                            pg[wr + c] += xv[r] * ay[c];
                        }
                        lo[xo + r] += acc;
                    }
                }
                Op::Add { a, b } => {
                    let (ao, bo) = (self.off_of(*a), self.off_of(*b));
                    for i in 0..node.len {
                        lo[ao + i] += ay[i];
                        lo[bo + i] += ay[i];
                    }
                }
                Op::Sub { a, b } => {
                    let (ao, bo) = (self.off_of(*a), self.off_of(*b));
                    for i in 0..node.len {
                        lo[ao + i] += ay[i];
                        lo[bo + i] -= ay[i];
                    }
                }
                Op::Mul { a, b } => {
                    let (ao, bo) = (self.off_of(*a), self.off_of(*b));
                    for i in 0..node.len {
                        lo[ao + i] += self.vals[bo + i] * ay[i];
                        lo[bo + i] += self.vals[ao + i] * ay[i];
                    }
                }
                Op::AffScalar { a, x, .. } => {
                    let xo = self.off_of(*x);
                    for i in 0..node.len {
                        lo[xo + i] += a * ay[i];
                    }
                }
                Op::Sigmoid { x } => {
                    let xo = self.off_of(*x);
                    let yv = &self.vals[node.off..node.off + node.len];
                    for i in 0..node.len {
                        lo[xo + i] += yv[i] * (1.0 - yv[i]) * ay[i];
                    }
                }
                Op::Concat { xs } => {
                    let mut at = 0;
                    for &x in xs {
                        let (xo, len) = (self.off_of(x), self.len_of(x));
                        for i in 0..len {
                            lo[xo + i] += ay[at + i];
                        }
                        at += len;
                    }
                }
                Op::Slice { x, start } => {
                    let xo = self.off_of(*x);
                    for i in 0..node.len {
                        lo[xo + start + i] += ay[i];
                    }
                }
                Op::Dot { a, b } => {
                    let (ao, bo) = (self.off_of(*a), self.off_of(*b));
                    let len = self.len_of(*a);
                    let g = ay[0];
                    for i in 0..len {
                        lo[ao + i] += self.vals[bo + i] * g;
                        lo[bo + i] += self.vals[ao + i] * g;
                    }
                }
                Op::MaxPoolCols { x, rows, winners, .. } => {
                    let xo = self.off_of(*x);
                    for r in 0..*rows {
                        lo[xo + winners[r] * rows + r] += ay[r];
                    }
                }
            }
        }
        Gradients { param: pg, adj }
    }
}
