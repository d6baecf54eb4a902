use std::rc::Rc;

use super::graph::{AxisDims, NodeRef, Op};
use super::{Graph, Tensor, MIN_DIVISOR};
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Abs,
    Square,
    Negate,
}

fn common_graph(a: &Tensor, b: &Tensor) -> Result<Option<Graph>> {
    match (&a.node, &b.node) {
        (Some(x), Some(y)) if !x.graph.same(&y.graph) => Err(Error::Contract(
            "operands belong to different graphs".into(),
        )),
        (Some(x), _) => Ok(Some(x.graph.clone())),
        (_, Some(y)) => Ok(Some(y.graph.clone())),
        _ => Ok(None),
    }
}

fn finish(
    graph: Option<Graph>,
    shape: Vec<usize>,
    values: Vec<f64>,
    name: &str,
    op: impl FnOnce() -> Op,
) -> Result<Tensor> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{name} produced non-finite value {} at flat index {i}",
            values[i]
        )));
    }
    let node = graph.map(|graph| {
        let id = graph.push(op(), values.len());
        NodeRef { graph, id }
    });
    Ok(Tensor {
        shape,
        values: Rc::new(values),
        node,
    })
}

/// Index map from each element of `a` to the element of `b` it pairs with.
/// `None` means the shapes are equal.
fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Option<Rc<Vec<usize>>>> {
    if a == b {
        return Ok(None);
    }
    let n: usize = a.iter().product();
    if b.iter().product::<usize>() == 1 {
        return Ok(Some(Rc::new(vec![0; n])));
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| *y != 1 && x != y) {
        return dim_err(format!("cannot broadcast {b:?} against {a:?}"));
    }
    let rank = a.len();
    let mut b_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..rank).rev() {
        b_strides[d] = if b[d] == 1 { 0 } else { stride };
        stride *= b[d];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < a[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Some(Rc::new(map)))
}

pub(crate) fn suffix_sum(g: &[f64], dims: AxisDims) -> Vec<f64> {
    let AxisDims { outer, len, inner } = dims;
    let mut out = g.to_vec();
    for o in 0..outer {
        let base = o * len * inner;
        for l in (0..len.saturating_sub(1)).rev() {
            for i in 0..inner {
                out[base + l * inner + i] += out[base + (l + 1) * inner + i];
            }
        }
    }
    out
}

fn ema_scan_forward(x: &[f64], dims: AxisDims, alpha: f64) -> Vec<f64> {
    let AxisDims { outer, len, inner } = dims;
    let mut out = x.to_vec();
    for o in 0..outer {
        let base = o * len * inner;
        for l in 1..len {
            for i in 0..inner {
                let prev = out[base + (l - 1) * inner + i];
                let cur = base + l * inner + i;
                out[cur] = prev + alpha * (x[cur] - prev);
            }
        }
    }
    out
}

/// Adjoint of the EMA recursion: u_t = g_t + (1-α)·u_{t+1}; ∂x_1 = u_1, ∂x_t = α·u_t.
pub(crate) fn ema_scan_adjoint(g: &[f64], dims: AxisDims, alpha: f64) -> Vec<f64> {
    let AxisDims { outer, len, inner } = dims;
    let decay = 1.0 - alpha;
    let mut u = g.to_vec();
    for o in 0..outer {
        let base = o * len * inner;
        for l in (0..len.saturating_sub(1)).rev() {
            for i in 0..inner {
                u[base + l * inner + i] += decay * u[base + (l + 1) * inner + i];
            }
        }
        for l in 1..len {
            for i in 0..inner {
                u[base + l * inner + i] *= alpha;
            }
        }
    }
    u
}

/// Window positions for a centered window of odd `kernel` at `t`, clamped
/// into `[0, len)` (replicate padding at both ends).
fn window(t: usize, len: usize, kernel: usize) -> impl Iterator<Item = usize> {
    let half = (kernel / 2) as isize;
    let last = len as isize - 1;
    (-half..=half).map(move |j| (t as isize + j).clamp(0, last) as usize)
}

// Computed as x_t + Σ(x_s − x_t)/k so a constant window yields x_t exactly.
fn moving_average_forward(x: &[f64], dims: AxisDims, kernel: usize) -> Vec<f64> {
    let AxisDims { outer, len, inner } = dims;
    let k = kernel as f64;
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for t in 0..len {
            for i in 0..inner {
                let centre = x[base + t * inner + i];
                let spread: f64 = window(t, len, kernel)
                    .map(|s| x[base + s * inner + i] - centre)
                    .sum();
                out[base + t * inner + i] = centre + spread / k;
            }
        }
    }
    out
}

pub(crate) fn moving_average_adjoint(g: &[f64], dims: AxisDims, kernel: usize) -> Vec<f64> {
    let AxisDims { outer, len, inner } = dims;
    let k = kernel as f64;
    let mut out = g.to_vec();
    for o in 0..outer {
        let base = o * len * inner;
        for t in 0..len {
            for i in 0..inner {
                let share = g[base + t * inner + i] / k;
                for s in window(t, len, kernel) {
                    out[base + s * inner + i] += share;
                }
                out[base + t * inner + i] -= share * k;
            }
        }
    }
    out
}

impl Tensor {
    pub fn binary(&self, kind: BinaryKind, other: &Tensor) -> Result<Tensor> {
        let graph = common_graph(self, other)?;
        let bmap = broadcast_map(&self.shape, &other.shape)?;
        let (av, bv) = (&self.values, &other.values);
        let pick = |i: usize| bmap.as_ref().map_or(i, |m| m[i]);
        let n = av.len();
        let values: Vec<f64> = match kind {
            BinaryKind::Add => (0..n).map(|i| av[i] + bv[pick(i)]).collect(),
            BinaryKind::Sub => (0..n).map(|i| av[i] - bv[pick(i)]).collect(),
            BinaryKind::Mul => (0..n).map(|i| av[i] * bv[pick(i)]).collect(),
            BinaryKind::Div => {
                if let Some(j) = bv.iter().position(|v| v.abs() < MIN_DIVISOR) {
                    return Err(Error::Numeric(format!(
                        "division by {} (below {MIN_DIVISOR:e}) at divisor index {j}",
                        bv[j]
                    )));
                }
                (0..n).map(|i| av[i] / bv[pick(i)]).collect()
            }
        };
        let (a, b) = (self.node_id(), other.node_id());
        let name = format!("{kind:?}").to_lowercase();
        let div_out = (kind == BinaryKind::Div && graph.is_some()).then(|| Rc::new(values.clone()));
        finish(graph, self.shape.clone(), values, &name, || match kind {
            BinaryKind::Add => Op::Add { a, b, bmap },
            BinaryKind::Sub => Op::Sub { a, b, bmap },
            BinaryKind::Mul => Op::Mul {
                a,
                b,
                av: Rc::clone(av),
                bv: Rc::clone(bv),
                bmap,
            },
            BinaryKind::Div => Op::Div {
                a,
                b,
                bv: Rc::clone(bv),
                out: div_out.expect("recorded division keeps its output"),
                bmap,
            },
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Div, other)
    }

    pub fn mul_scalar(&self, k: f64) -> Result<Tensor> {
        let values = self.values.iter().map(|v| v * k).collect();
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), values, "mul_scalar", || Op::Scale {
            a: a.expect("graph implies node"),
            k,
        })
    }

    pub fn add_scalar(&self, k: f64) -> Result<Tensor> {
        let values = self.values.iter().map(|v| v + k).collect();
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), values, "add_scalar", || Op::Shift {
            a: a.expect("graph implies node"),
        })
    }

    pub fn div_scalar(&self, k: f64) -> Result<Tensor> {
        if k.abs() < MIN_DIVISOR {
            return Err(Error::Numeric(format!("division by scalar {k}")));
        }
        let values = self.values.iter().map(|v| v / k).collect();
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), values, "div_scalar", || Op::Scale {
            a: a.expect("graph implies node"),
            k: 1.0 / k,
        })
    }

    pub fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let values: Vec<f64> = match kind {
            UnaryKind::Abs => self.values.iter().map(|v| v.abs()).collect(),
            UnaryKind::Square => self.values.iter().map(|v| v * v).collect(),
            UnaryKind::Negate => self.values.iter().map(|v| -v).collect(),
        };
        let graph = self.graph().cloned();
        let a = self.node_id();
        let av = Rc::clone(&self.values);
        let name = format!("{kind:?}").to_lowercase();
        finish(graph, self.shape.clone(), values, &name, || {
            let a = a.expect("graph implies node");
            match kind {
                UnaryKind::Abs => Op::Abs { a, av },
                UnaryKind::Square => Op::Square { a, av },
                UnaryKind::Negate => Op::Neg { a },
            }
        })
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Square)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Negate)
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k, k2, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            (a, b) => return dim_err(format!("matmul needs rank-2 operands, got {a:?} and {b:?}")),
        };
        if k != k2 {
            return dim_err(format!("matmul inner extents differ: [{m},{k}] x [{k2},{n}]"));
        }
        let graph = common_graph(self, other)?;
        let (av, bv) = (&self.values, &other.values);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
            }
        }
        let (a, b) = (self.node_id(), other.node_id());
        finish(graph, vec![m, n], out, "matmul", || Op::MatMul {
            a,
            b,
            av: Rc::clone(av),
            bv: Rc::clone(bv),
            m,
            k,
            n,
        })
    }

    /// Inclusive prefix sum along `axis`.
    pub fn cumsum(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return dim_err(format!("cumsum axis {axis} out of range for rank {}", self.rank()));
        }
        let dims = AxisDims::of(&self.shape, axis);
        let AxisDims { outer, len, inner } = dims;
        let mut out = self.values.as_ref().clone();
        for o in 0..outer {
            let base = o * len * inner;
            for l in 1..len {
                for i in 0..inner {
                    out[base + l * inner + i] += out[base + (l - 1) * inner + i];
                }
            }
        }
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), out, "cumsum", || Op::Cumsum {
            a: a.expect("graph implies node"),
            dims,
        })
    }

    /// Exponential moving average along `axis`: e_1 = x_1, e_t = e_{t-1} + α·(x_t − e_{t-1}).
    pub fn ema_scan(&self, axis: usize, alpha: f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return dim_err(format!("ema axis {axis} out of range for rank {}", self.rank()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Contract(format!("ema smoothing factor {alpha} outside (0,1)")));
        }
        let dims = AxisDims::of(&self.shape, axis);
        let out = ema_scan_forward(&self.values, dims, alpha);
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), out, "ema_scan", || Op::EmaScan {
            a: a.expect("graph implies node"),
            dims,
            alpha,
        })
    }

    /// Centered moving average of odd width along `axis`, replicating the
    /// first and last values as padding.
    pub fn moving_average(&self, axis: usize, kernel: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return dim_err(format!("moving average axis {axis} out of range for rank {}", self.rank()));
        }
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::Contract(format!("moving average kernel must be odd and positive, got {kernel}")));
        }
        let dims = AxisDims::of(&self.shape, axis);
        let out = moving_average_forward(&self.values, dims, kernel);
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, self.shape.clone(), out, "moving_average", || Op::MovingAverage {
            a: a.expect("graph implies node"),
            dims,
            kernel,
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.values.iter().sum();
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, vec![], vec![s], "sum", || Op::Sum {
            a: a.expect("graph implies node"),
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return dim_err("mean of an empty tensor");
        }
        let s: f64 = self.values.iter().sum();
        let m = s / self.numel() as f64;
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, vec![], vec![m], "mean", || Op::Mean {
            a: a.expect("graph implies node"),
        })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, shape, self.to_vec(), "reshape", || Op::Reshape {
            a: a.expect("graph implies node"),
        })
    }

    /// Reorders axes; output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return dim_err(format!("invalid permutation {perm:?} for rank {rank}"));
        }
        let in_shape = &self.shape;
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            src.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let values = src.iter().map(|&j| self.values[j]).collect();
        let graph = self.graph().cloned();
        let a = self.node_id();
        finish(graph, out_shape, values, "permute", || Op::Gather {
            a: a.expect("graph implies node"),
            src: Rc::new(src),
        })
    }
}
