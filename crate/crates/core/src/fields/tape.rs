//! Minimal reverse-mode differentiation over row-batched matrices.
//!
//! Every node holds an `n × k` matrix; rows are independent samples. A tape
//! records one forward pass and answers gradient queries for any subset of
//! its nodes.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-ray layout of the samples fed to a [`Tape::composite`] node.
#[derive(Clone, Debug)]
pub struct CompositeLayout<T> {
    /// `ray_offsets[r]..ray_offsets[r + 1]` are the sample rows of ray `r`.
    pub ray_offsets: Vec<usize>,
    /// Interval length of every sample row.
    pub deltas: Vec<T>,
    pub background: [T; 3],
}

impl<T: Real> CompositeLayout<T> {
    pub fn ray_count(&self) -> usize {
        self.ray_offsets.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Sum(Var),
    SliceCols(Var, usize, usize),
    Concat(Vec<Var>),
    BroadcastRows(Var),
    Normalize(Var),
    Encode { x: Var, freqs: usize, include_input: bool },
    Composite { sigma: Var, color: Var, layout: Box<CompositeLayout<T>> },
    SquaredError { pred: Var, target: Array2<T>, denom: T },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::SliceCols(a, _, _)
            | Op::BroadcastRows(a)
            | Op::Normalize(a)
            | Op::Encode { x: a, .. }
            | Op::SquaredError { pred: a, .. } => vec![*a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulCol(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Composite { sigma, color, .. } => vec![*sigma, *color],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Recorded computation graph of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to the requested nodes.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; `None` if `v` was not a target or the root does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow.
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn rows<T>(a: &Array2<T>) -> usize {
    a.nrows()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
        Error::Usage(format!("{what}: incompatible shapes {a:?} and {b:?}"))
    }

    /// Constant or parameter input.
    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `x·w + b` with `w: in × out` and `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.nrows() || bv.nrows() != 1 || bv.ncols() != wv.ncols() {
            return Err(Self::shape_err("linear", xv.shape(), wv.shape()));
        }
        let mut out = xv.dot(wv);
        out += bv;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).mapv(f);
        self.push(out, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.map(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.map(a, |x| x.cos(), Op::Cos(a))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::shape_err(what, av.shape(), bv.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Scale every row of `a` (`n × k`) by the matching entry of `s` (`n × 1`).
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.ncols() != 1 || sv.nrows() != av.nrows() {
            return Err(Self::shape_err("mul_col", av.shape(), sv.shape()));
        }
        let out = av * sv;
        Ok(self.push(out, Op::MulCol(a, s)))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start >= end || end > av.ncols() {
            return Err(Error::Usage(format!(
                "column range {start}..{end} invalid for {} columns",
                av.ncols()
            )));
        }
        let out = av.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, end)))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of nothing".into()));
        }
        let views: Vec<ArrayView2<T>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(1), &views)
            .map_err(|e| Error::Usage(format!("concat: {e}")))?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Repeat a `1 × k` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() != 1 {
            return Err(Error::Usage(format!("broadcast_rows expects one row, got {}", av.nrows())));
        }
        let out = av
            .broadcast((n, av.ncols()))
            .expect("1-row broadcast")
            .to_owned();
        Ok(self.push(out, Op::BroadcastRows(a)))
    }

    /// Row-wise L2 normalization; zero rows stay zero.
    pub fn normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
            if n > T::zero() {
                row.mapv_inplace(|x| x / n);
            }
        }
        self.push(out, Op::Normalize(a))
    }

    /// Positional encoding `[x, sin(2^0 π x), cos(2^0 π x), …]` per row; the
    /// raw input leads when `include_input` is set.
    pub fn encode(&mut self, x: Var, freqs: usize, include_input: bool) -> Var {
        let include_input = include_input || freqs == 0;
        let out = positional_encode_rows(self.value(x), freqs, include_input);
        self.push(out, Op::Encode { x, freqs, include_input })
    }

    /// Quadrature of the volume rendering integral per ray.
    ///
    /// `sigma` is `n × 1`, `color` is `n × 3`; colors are clamped to `[0, 1]`
    /// in the forward pass while gradients flow as if unclamped. Returns a
    /// `rays × 4` node holding RGB and accumulated opacity.
    pub fn composite(&mut self, sigma: Var, color: Var, layout: CompositeLayout<T>) -> Result<Var> {
        let (sv, cv) = (self.value(sigma), self.value(color));
        let n = layout.ray_offsets.last().copied().unwrap_or(0);
        if sv.ncols() != 1 || cv.ncols() != 3 || sv.nrows() != n || cv.nrows() != n || layout.deltas.len() != n {
            return Err(Self::shape_err("composite", sv.shape(), cv.shape()));
        }
        if layout.ray_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Usage("ray offsets must be non-decreasing".into()));
        }
        let mut out = Array2::zeros((layout.ray_count(), 4));
        for r in 0..layout.ray_count() {
            let (range, _) = ray_range(&layout, r);
            let (rgb, opacity, _) = composite_forward(sv, cv, &layout, range);
            for c in 0..3 {
                out[[r, c]] = rgb[c];
            }
            out[[r, 3]] = opacity;
        }
        Ok(self.push(
            out,
            Op::Composite {
                sigma,
                color,
                layout: Box::new(layout),
            },
        ))
    }

    /// `Σ (pred − target)² / denom` as a `1 × 1` node.
    pub fn squared_error(&mut self, pred: Var, target: Array2<T>, denom: T) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Self::shape_err("squared_error", pv.shape(), target.shape()));
        }
        let total = Zip::from(pv)
            .and(&target)
            .fold(T::zero(), |acc, &p, &t| acc + (p - t) * (p - t));
        Ok(self.push(
            Array2::from_elem((1, 1), total / denom),
            Op::SquaredError { pred, target, denom },
        ))
    }

    /// Reverse pass from a scalar `root` to `targets`.
    ///
    /// Only nodes lying on a path from a target to the root are visited, so
    /// asking for input gradients alone skips all weight-gradient products.
    pub fn grad(&self, root: Var, targets: &[Var]) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut wanted = vec![false; n];
        for t in targets {
            if t.0 < n {
                wanted[t.0] = true;
            }
        }
        // A node needs a gradient iff some target feeds into it.
        let mut live = wanted.clone();
        for i in 0..n {
            if !live[i] && self.nodes[i].op.inputs().iter().any(|v| live[v.0]) {
                live[i] = true;
            }
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; n];
        if !live[root.0] {
            return Ok(Gradients { grads: finalize(grads, &wanted) });
        }
        grads[root.0] = Some(Array2::from_elem((1, 1), T::one()));
        for i in (0..n).rev() {
            if !live[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &live, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads: finalize(grads, &wanted) })
    }

    fn backward_node(&self, i: usize, g: &Array2<T>, live: &[bool], grads: &mut [Option<Array2<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, d: Array2<T>| {
            if !live[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if live[x.0] {
                    acc(*x, g.dot(&self.value(*w).t()));
                }
                if live[w.0] {
                    acc(*w, self.value(*x).t().dot(g));
                }
                if live[b.0] {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                });
                acc(*a, d);
            }
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= sigmoid(x));
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (T::one() - y));
                acc(*a, d);
            }
            Op::Sin(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= x.cos());
                acc(*a, d);
            }
            Op::Cos(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= -x.sin());
                acc(*a, d);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                if live[a.0] {
                    acc(*a, g * self.value(*b));
                }
                if live[b.0] {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::MulCol(a, s) => {
                if live[a.0] {
                    acc(*a, g * self.value(*s));
                }
                if live[s.0] {
                    let d = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*s, d);
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Sum(a) => {
                let shape = self.value(*a).raw_dim();
                acc(*a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(*a, d);
            }
            Op::Concat(parts) => {
                let mut col = 0;
                for p in parts {
                    let k = self.value(*p).ncols();
                    if live[p.0] {
                        acc(*p, g.slice(s![.., col..col + k]).to_owned());
                    }
                    col += k;
                }
            }
            Op::BroadcastRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::Normalize(a) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.raw_dim());
                for r in 0..rows(x) {
                    let n = x.row(r).iter().map(|v| *v * *v).sum::<T>().sqrt();
                    if n <= T::zero() {
                        continue;
                    }
                    let proj = y.row(r).dot(&g.row(r));
                    for c in 0..x.ncols() {
                        d[[r, c]] = (g[[r, c]] - y[[r, c]] * proj) / n;
                    }
                }
                acc(*a, d);
            }
            Op::Encode { x, freqs, include_input } => {
                let xv = self.value(*x);
                let dim = xv.ncols();
                let mut d = Array2::zeros(xv.raw_dim());
                let mut col = 0;
                if *include_input {
                    d += &g.slice(s![.., 0..dim]);
                    col = dim;
                }
                for k in 0..*freqs {
                    let f = T::lit(2f64.powi(k as i32)) * T::PI();
                    for r in 0..rows(xv) {
                        for c in 0..dim {
                            let a = f * xv[[r, c]];
                            d[[r, c]] += f * (g[[r, col + c]] * a.cos() - g[[r, col + dim + c]] * a.sin());
                        }
                    }
                    col += 2 * dim;
                }
                acc(*x, d);
            }
            Op::Composite { sigma, color, layout } => {
                let (sv, cv) = (self.value(*sigma), self.value(*color));
                let mut ds = Array2::zeros(sv.raw_dim());
                let mut dc = Array2::zeros(cv.raw_dim());
                for r in 0..layout.ray_count() {
                    let (range, _) = ray_range(layout, r);
                    composite_backward(sv, cv, layout, range, g.row(r), &mut ds, &mut dc);
                }
                if live[sigma.0] {
                    acc(*sigma, ds);
                }
                if live[color.0] {
                    acc(*color, dc);
                }
            }
            Op::SquaredError { pred, target, denom } => {
                let k = g[[0, 0]] * T::lit(2.0) / *denom;
                let d = (self.value(*pred) - target) * k;
                acc(*pred, d);
            }
        }
    }
}

fn finalize<T>(mut grads: Vec<Option<Array2<T>>>, wanted: &[bool]) -> Vec<Option<Array2<T>>> {
    for (g, w) in grads.iter_mut().zip(wanted) {
        if !w {
            *g = None;
        }
    }
    grads
}

fn ray_range<T>(layout: &CompositeLayout<T>, r: usize) -> (std::ops::Range<usize>, usize) {
    let (a, b) = (layout.ray_offsets[r], layout.ray_offsets[r + 1]);
    (a..b, b - a)
}

/// Returns RGB, opacity and the final transmittance of one ray.
fn composite_forward<T: Real>(
    sigma: &Array2<T>,
    color: &Array2<T>,
    layout: &CompositeLayout<T>,
    range: std::ops::Range<usize>,
) -> ([T; 3], T, T) {
    let mut trans = T::one();
    let mut rgb = [T::zero(); 3];
    for i in range {
        let tau = sigma[[i, 0]] * layout.deltas[i];
        let alpha = T::one() - (-tau).exp();
        let w = trans * alpha;
        for c in 0..3 {
            rgb[c] += w * clamp01(color[[i, c]]);
        }
        trans = trans * (-tau).exp();
    }
    for c in 0..3 {
        rgb[c] += trans * layout.background[c];
    }
    (rgb, T::one() - trans, trans)
}

fn composite_backward<T: Real>(
    sigma: &Array2<T>,
    color: &Array2<T>,
    layout: &CompositeLayout<T>,
    range: std::ops::Range<usize>,
    g: ndarray::ArrayView1<T>,
    ds: &mut Array2<T>,
    dc: &mut Array2<T>,
) {
    // Transmittance before each sample, then suffix sums of weighted color.
    let len = range.len();
    let start = range.start;
    let mut trans = Vec::with_capacity(len + 1);
    let mut t = T::one();
    for i in range.clone() {
        trans.push(t);
        t = t * (-(sigma[[i, 0]] * layout.deltas[i])).exp();
    }
    trans.push(t);
    let mut suffix = [
        t * layout.background[0],
        t * layout.background[1],
        t * layout.background[2],
    ];
    // Opacity 1 − T_end has derivative T_end·δ_k with respect to every σ_k.
    let d_opacity = g[3] * t;
    for j in (0..len).rev() {
        let i = start + j;
        let delta = layout.deltas[i];
        let alpha = T::one() - (-(sigma[[i, 0]] * delta)).exp();
        let w = trans[j] * alpha;
        let mut d = T::zero();
        for c in 0..3 {
            let cc = clamp01(color[[i, c]]);
            d += g[c] * delta * (trans[j + 1] * cc - suffix[c]);
            dc[[i, c]] += g[c] * w;
        }
        ds[[i, 0]] += d + d_opacity * delta;
        for c in 0..3 {
            suffix[c] += w * clamp01(color[[i, c]]);
        }
    }
}

fn clamp01<T: Real>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// Positional encoding of every row of `x`.
pub fn positional_encode_rows<T: Real>(x: &Array2<T>, freqs: usize, include_input: bool) -> Array2<T> {
    let include_input = include_input || freqs == 0;
    let dim = x.ncols();
    let width = encoded_width(dim, freqs, include_input);
    let mut out = Array2::zeros((x.nrows(), width));
    for r in 0..x.nrows() {
        let mut col = 0;
        if include_input {
            for c in 0..dim {
                out[[r, c]] = x[[r, c]];
            }
            col = dim;
        }
        for k in 0..freqs {
            let f = T::lit(2f64.powi(k as i32)) * T::PI();
            for c in 0..dim {
                let a = f * x[[r, c]];
                out[[r, col + c]] = a.sin();
                out[[r, col + dim + c]] = a.cos();
            }
            col += 2 * dim;
        }
    }
    out
}

/// Width of the positional encoding of a `dim`-vector.
///
/// With no frequencies the raw input is always passed through.
pub fn encoded_width(dim: usize, freqs: usize, include_input: bool) -> usize {
    if freqs == 0 {
        dim
    } else {
        dim * 2 * freqs + if include_input { dim } else { 0 }
    }
}
