//! Tape-based reverse-mode differentiation over 2-D `f64` tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value and
//! the indices of its inputs. Nodes can only reference earlier nodes, so the
//! tape is acyclic and reverse index order is a reverse topological order;
//! [`Graph::backward`] visits each node exactly once.
//!
//! Binary elementwise operations broadcast along any axis of length one, the
//! way `ndarray` does; their vector-Jacobian products sum the cotangent back
//! down to the input shape.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::manifold::{BALL_EPS, TAYLOR_NORM};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Atanh(Var),
    Asinh(Var),
    TanhRatio(Var),
    AtanhRatio(Var),
    ClampMin(Var, f64),
    RowNorm(Var),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SoftmaxRows(Var),
    Cols(Var, usize),
    Rows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Cotangents of every node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; nodes the output does not depend on get zeros.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0]))
    }
}

fn shape(t: &Tensor) -> (usize, usize) {
    t.dim()
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(
            op,
            format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1),
        )),
    }
}

/// Sums a broadcast cotangent back to `target` shape.
fn reduce_to(g: Tensor, target: (usize, usize)) -> Tensor {
    let mut g = g;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    out: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let av = a.broadcast(out).expect("checked broadcast");
    let bv = b.broadcast(out).expect("checked broadcast");
    let mut r = Tensor::zeros(out);
    Zip::from(&mut r)
        .and(&av)
        .and(&bv)
        .for_each(|r, &x, &y| *r = f(x, y));
    r
}

/// Largest magnitude accepted by the guarded `atanh`.
pub fn atanh_limit() -> f64 {
    (1.0 - BALL_EPS).sqrt()
}

fn tanh_ratio_grad(s: f64) -> f64 {
    if s < 1e-4 {
        -2.0 * s / 3.0 + 8.0 * s.powi(3) / 15.0
    } else {
        let t = s.tanh();
        (s * (1.0 - t * t) - t) / (s * s)
    }
}

fn atanh_ratio_grad(s: f64) -> f64 {
    if s < 1e-4 {
        2.0 * s / 3.0 + 4.0 * s.powi(3) / 5.0
    } else {
        (s / (1.0 - s * s) - s.atanh()) / (s * s)
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Leaf node (parameter, input or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Tensor::from_elem((1, 1), value), Op::Leaf)
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = broadcast_shape(op_name, self.shape(a), self.shape(b))?;
        let v = zip_broadcast(self.value(a), self.value(b), out, f);
        Ok(self.push(v, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    /// `a + k` for a constant `k`.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x + k);
        self.push(v, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} times {}x{}", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).mapv(f);
        self.push(v, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `atanh` with its argument clamped to `±sqrt(1 - BALL_EPS)`.
    pub fn atanh(&mut self, a: Var) -> Var {
        let lim = atanh_limit();
        self.unary(a, move |x| x.clamp(-lim, lim).atanh(), Op::Atanh(a))
    }

    pub fn asinh(&mut self, a: Var) -> Var {
        self.unary(a, f64::asinh, Op::Asinh(a))
    }

    /// `min(tanh(s), sqrt(1 - BALL_EPS))/s` for `s >= 0`, equal to 1 at the
    /// origin. Multiplying a row by this factor of its scaled norm is the
    /// origin exponential map followed by the ball clamp.
    pub fn tanh_ratio(&mut self, a: Var) -> Var {
        let lim = atanh_limit();
        self.unary(
            a,
            move |s| {
                if s.tanh() > lim {
                    lim / s
                } else {
                    crate::manifold::tanh_ratio(s)
                }
            },
            Op::TanhRatio(a),
        )
    }

    /// `atanh(s)/s` for `s >= 0` with the same argument guard as [`Graph::atanh`].
    pub fn atanh_ratio(&mut self, a: Var) -> Var {
        let lim = atanh_limit();
        self.unary(
            a,
            move |x| crate::manifold::atanh_ratio(x.min(lim)),
            Op::AtanhRatio(a),
        )
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, move |x| x.max(floor), Op::ClampMin(a, floor))
    }

    /// Euclidean norm of each row, `n x c -> n x 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.push(v, Op::RowNorm(a))
    }

    /// Sum across columns, `n x c -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_elem((1, 1), t.sum() / t.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Column slice `[start, end)`.
    pub fn cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if start >= end || end > c {
            return Err(Error::shape("cols", format!("{start}..{end} of {c} columns")));
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::Cols(a, start)))
    }

    /// Row slice `[start, end)`.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if start >= end || end > r {
            return Err(Error::shape("rows", format!("{start}..{end} of {r} rows")));
        }
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        Ok(self.push(v, Op::Rows(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape("concat_cols", e.to_string()))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape("concat_rows", e.to_string()))?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{}x{} into {rows}x{cols}", t.nrows(), t.ncols()),
            ));
        }
        let data: Vec<f64> = t.iter().copied().collect();
        let v = Tensor::from_shape_vec((rows, cols), data).expect("length checked");
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarOutput(r, c));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::ones((1, 1)));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let x_of = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape(x_of(*a))));
                    acc(&mut grads, *b, reduce_to(g, shape(x_of(*b))));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape(x_of(*a))));
                    acc(&mut grads, *b, reduce_to(-g, shape(x_of(*b))));
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (x_of(*a), x_of(*b));
                    let out = shape(&g);
                    let ga = zip_broadcast(&g, xb, out, |g, y| g * y);
                    let gb = zip_broadcast(&g, xa, out, |g, x| g * x);
                    acc(&mut grads, *a, reduce_to(ga, shape(xa)));
                    acc(&mut grads, *b, reduce_to(gb, shape(xb)));
                }
                Op::Div(a, b) => {
                    let (xa, xb) = (x_of(*a), x_of(*b));
                    let out = shape(&g);
                    let ga = zip_broadcast(&g, xb, out, |g, y| g / y);
                    // d(a/b)/db = -out/b
                    let q = zip_broadcast(&node.value, xb, out, |o, y| -o / y);
                    let gb = &g * &q;
                    acc(&mut grads, *a, reduce_to(ga, shape(xa)));
                    acc(&mut grads, *b, reduce_to(gb, shape(xb)));
                }
                Op::Neg(a) => acc(&mut grads, *a, -g),
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::MatMul(a, b) => {
                    let (xa, xb) = (x_of(*a), x_of(*b));
                    let ga = g.dot(&xb.t());
                    let gb = xa.t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, *a, g * &node.value),
                Op::Log(a) => acc(&mut grads, *a, g / x_of(*a)),
                Op::Sqrt(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d = if y > 0.0 { *d * 0.5 / y } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(x_of(*a)).for_each(|d, &x| *d *= 2.0 * x);
                    acc(&mut grads, *a, d);
                }
                Op::Atanh(a) => {
                    let lim = atanh_limit();
                    let mut d = g;
                    Zip::from(&mut d).and(x_of(*a)).for_each(|d, &x| {
                        *d = if x.abs() > lim { 0.0 } else { *d / (1.0 - x * x) }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Asinh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(x_of(*a))
                        .for_each(|d, &x| *d /= (1.0 + x * x).sqrt());
                    acc(&mut grads, *a, d);
                }
                Op::TanhRatio(a) => {
                    let lim = atanh_limit();
                    let mut d = g;
                    Zip::from(&mut d).and(x_of(*a)).for_each(|d, &x| {
                        *d *= if x.tanh() > lim {
                            -lim / (x * x)
                        } else {
                            tanh_ratio_grad(x)
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::AtanhRatio(a) => {
                    let lim = atanh_limit();
                    let mut d = g;
                    Zip::from(&mut d).and(x_of(*a)).for_each(|d, &x| {
                        *d = if x > lim { 0.0 } else { *d * atanh_ratio_grad(x) }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::ClampMin(a, floor) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(x_of(*a))
                        .for_each(|d, &x| if x < *floor { *d = 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::RowNorm(a) => {
                    let x = x_of(*a);
                    let mut d = x.clone();
                    Zip::from(d.rows_mut())
                        .and(g.rows())
                        .and(node.value.rows())
                        .for_each(|mut row, gr, nr| {
                            let n = nr[0];
                            if n < TAYLOR_NORM {
                                row.fill(0.0);
                            } else {
                                let k = gr[0] / n;
                                row.mapv_inplace(|v| v * k);
                            }
                        });
                    acc(&mut grads, *a, d);
                }
                Op::SumRows(a) => {
                    let s = shape(x_of(*a));
                    let d = g.broadcast(s).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::SumAll(a) => {
                    let s = shape(x_of(*a));
                    acc(&mut grads, *a, Tensor::from_elem(s, g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let s = shape(x_of(*a));
                    let k = g[[0, 0]] / (s.0 * s.1) as f64;
                    acc(&mut grads, *a, Tensor::from_elem(s, k));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    let dot = d.sum_axis(Axis(1)).insert_axis(Axis(1));
                    d -= &(y * &dot);
                    acc(&mut grads, *a, d);
                }
                Op::Cols(a, start) => {
                    let mut d = Tensor::zeros(shape(x_of(*a)));
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::Rows(a, start) => {
                    let mut d = Tensor::zeros(shape(x_of(*a)));
                    let h = g.nrows();
                    d.slice_mut(s![*start..*start + h, ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = shape(x_of(*p)).1;
                        acc(&mut grads, *p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = shape(x_of(*p)).0;
                        acc(&mut grads, *p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::Reshape(a) => {
                    let s = shape(x_of(*a));
                    let data: Vec<f64> = g.iter().copied().collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::from_shape_vec(s, data).expect("same length"),
                    );
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| shape(&n.value)).collect(),
        })
    }
}

/// Analytic versus finite-difference gradients for a set of parameters.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub max_rel_error: f64,
}

/// `|a - b| / max(|a|, |b|, 1e-12)` over the flattened tensors.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let na = a.mapv(|x| x * x).sum().sqrt();
    let nb = b.mapv(|x| x * x).sum().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Compares [`Graph::backward`] with central finite differences of step `h`.
///
/// `build` receives a fresh graph and one leaf per parameter and must return a
/// scalar node. It is called `2 * (parameter count) + 1` times.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = values.iter().map(|v| g.leaf(v.clone())).collect();
        let out = build(&mut g, &leaves)?;
        Ok((g, leaves, out))
    };

    let (g, leaves, out) = eval(params)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| grads.get(l)).collect();

    let mut numeric = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        let mut num = Tensor::zeros(params[p].dim());
        for idx in 0..params[p].len() {
            let (r, c) = (idx / params[p].ncols(), idx % params[p].ncols());
            let orig = work[p][[r, c]];
            work[p][[r, c]] = orig + h;
            let (gp, _, op) = eval(&work)?;
            work[p][[r, c]] = orig - h;
            let (gm, _, om) = eval(&work)?;
            work[p][[r, c]] = orig;
            num[[r, c]] = (gp.scalar(op) - gm.scalar(om)) / (2.0 * h);
        }
        numeric.push(num);
    }

    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max);
    Ok(GradReport {
        analytic,
        numeric,
        max_rel_error,
    })
}
