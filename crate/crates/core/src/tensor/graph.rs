use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Operations recorded on the tape, each holding what its adjoint rule needs.
/// Operand fields are node ids; `None` marks a constant operand.
pub(crate) enum Op {
    Leaf,
    Add {
        a: Option<usize>,
        b: Option<usize>,
        bmap: Option<Rc<Vec<usize>>>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
        bmap: Option<Rc<Vec<usize>>>,
    },
    Mul {
        a: Option<usize>,
        b: Option<usize>,
        av: Rc<Vec<f64>>,
        bv: Rc<Vec<f64>>,
        bmap: Option<Rc<Vec<usize>>>,
    },
    Div {
        a: Option<usize>,
        b: Option<usize>,
        bv: Rc<Vec<f64>>,
        out: Rc<Vec<f64>>,
        bmap: Option<Rc<Vec<usize>>>,
    },
    Scale {
        a: usize,
        k: f64,
    },
    Shift {
        a: usize,
    },
    Abs {
        a: usize,
        av: Rc<Vec<f64>>,
    },
    Square {
        a: usize,
        av: Rc<Vec<f64>>,
    },
    Neg {
        a: usize,
    },
    MatMul {
        a: Option<usize>,
        b: Option<usize>,
        av: Rc<Vec<f64>>,
        bv: Rc<Vec<f64>>,
        m: usize,
        k: usize,
        n: usize,
    },
    Cumsum {
        a: usize,
        dims: AxisDims,
    },
    EmaScan {
        a: usize,
        dims: AxisDims,
        alpha: f64,
    },
    MovingAverage {
        a: usize,
        dims: AxisDims,
        kernel: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Gather {
        a: usize,
        src: Rc<Vec<usize>>,
    },
}

/// A tensor viewed as `[outer, len, inner]` around one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisDims {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisDims {
    pub fn of(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

struct Node {
    op: Op,
    len: usize,
}

/// Append-only tape of recorded operations. Cloning yields another handle to
/// the same tape.
#[derive(Clone, Default)]
pub struct Graph {
    nodes: Rc<RefCell<Vec<Node>>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub graph: Graph,
    pub id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a copy of `t` as a trainable leaf of this graph.
    pub fn param(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.numel());
        Tensor {
            shape: t.shape.clone(),
            values: Rc::clone(&t.values),
            node: Some(NodeRef {
                graph: self.clone(),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn push(&self, op: Op, len: usize) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, len });
        nodes.len() - 1
    }
}

/// Gradients of a backward sweep, keyed by leaf node.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a leaf created by [`Graph::param`]; `None` when the leaf
    /// was not reachable from the root.
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        leaf.node_id()
            .and_then(|id| self.by_leaf.get(&id))
            .map(Vec::as_slice)
    }

    /// Like [`get`](Self::get) but returns zeros for unreachable leaves.
    pub fn wrt(&self, leaf: &Tensor) -> Vec<f64> {
        self.get(leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; leaf.numel()])
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn accumulate<'a>(adj: &'a mut [Option<Vec<f64>>], lens: &[usize], id: usize) -> &'a mut Vec<f64> {
    adj[id].get_or_insert_with(|| vec![0.0; lens[id]])
}

pub(crate) fn backward(root: &Tensor) -> Result<Gradients> {
    if root.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward needs a single-element root, got shape {:?}",
            root.shape
        )));
    }
    let Some(node) = &root.node else {
        return Ok(Gradients::default());
    };
    let nodes = node.graph.nodes.borrow();
    let lens: Vec<usize> = nodes.iter().map(|n| n.len).collect();
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; node.id + 1];
    adj[node.id] = Some(vec![1.0]);
    let mut out = Gradients::default();

    for id in (0..=node.id).rev() {
        let Some(g) = adj[id].take() else { continue };
        match &nodes[id].op {
            Op::Leaf => {
                out.by_leaf.insert(id, g);
            }
            Op::Add { a, b, bmap } | Op::Sub { a, b, bmap } => {
                let sign = if matches!(nodes[id].op, Op::Sub { .. }) {
                    -1.0
                } else {
                    1.0
                };
                if let Some(a) = *a {
                    let ga = accumulate(&mut adj, &lens, a);
                    ga.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
                if let Some(b) = *b {
                    let gb = accumulate(&mut adj, &lens, b);
                    match bmap {
                        None => gb.iter_mut().zip(&g).for_each(|(d, s)| *d += sign * s),
                        Some(map) => {
                            for (i, s) in g.iter().enumerate() {
                                gb[map[i]] += sign * s;
                            }
                        }
                    }
                }
            }
            Op::Mul { a, b, av, bv, bmap } => {
                if let Some(a) = *a {
                    let ga = accumulate(&mut adj, &lens, a);
                    for (i, s) in g.iter().enumerate() {
                        let bi = bmap.as_ref().map_or(i, |m| m[i]);
                        ga[i] += s * bv[bi];
                    }
                }
                if let Some(b) = *b {
                    let gb = accumulate(&mut adj, &lens, b);
                    for (i, s) in g.iter().enumerate() {
                        let bi = bmap.as_ref().map_or(i, |m| m[i]);
                        gb[bi] += s * av[i];
                    }
                }
            }
            Op::Div {
                a,
                b,
                bv,
                out: q,
                bmap,
            } => {
                if let Some(a) = *a {
                    let ga = accumulate(&mut adj, &lens, a);
                    for (i, s) in g.iter().enumerate() {
                        let bi = bmap.as_ref().map_or(i, |m| m[i]);
                        ga[i] += s / bv[bi];
                    }
                }
                if let Some(b) = *b {
                    let gb = accumulate(&mut adj, &lens, b);
                    for (i, s) in g.iter().enumerate() {
                        let bi = bmap.as_ref().map_or(i, |m| m[i]);
                        gb[bi] -= s * q[i] / bv[bi];
                    }
                }
            }
            Op::Scale { a, k } => {
                let ga = accumulate(&mut adj, &lens, *a);
                ga.iter_mut().zip(&g).for_each(|(d, s)| *d += k * s);
            }
            Op::Shift { a } | Op::Reshape { a } => {
                let ga = accumulate(&mut adj, &lens, *a);
                ga.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
            }
            Op::Neg { a } => {
                let ga = accumulate(&mut adj, &lens, *a);
                ga.iter_mut().zip(&g).for_each(|(d, s)| *d -= s);
            }
            Op::Abs { a, av } => {
                let ga = accumulate(&mut adj, &lens, *a);
                for ((d, s), x) in ga.iter_mut().zip(&g).zip(av.iter()) {
                    // subgradient at 0 is 0
                    if *x > 0.0 {
                        *d += s;
                    } else if *x < 0.0 {
                        *d -= s;
                    }
                }
            }
            Op::Square { a, av } => {
                let ga = accumulate(&mut adj, &lens, *a);
                for ((d, s), x) in ga.iter_mut().zip(&g).zip(av.iter()) {
                    *d += 2.0 * x * s;
                }
            }
            Op::MatMul {
                a,
                b,
                av,
                bv,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                if let Some(a) = *a {
                    // dA = G · Bᵀ
                    let ga = accumulate(&mut adj, &lens, a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(b) = *b {
                    // dB = Aᵀ · G
                    let gb = accumulate(&mut adj, &lens, b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[p * n..(p + 1) * n];
                            dst.iter_mut().zip(grow).for_each(|(d, s)| *d += aip * s);
                        }
                    }
                }
            }
            Op::Cumsum { a, dims } => {
                let ga = accumulate(&mut adj, &lens, *a);
                let rev = super::ops::suffix_sum(&g, *dims);
                ga.iter_mut().zip(&rev).for_each(|(d, s)| *d += s);
            }
            Op::EmaScan { a, dims, alpha } => {
                let ga = accumulate(&mut adj, &lens, *a);
                let back = super::ops::ema_scan_adjoint(&g, *dims, *alpha);
                ga.iter_mut().zip(&back).for_each(|(d, s)| *d += s);
            }
            Op::MovingAverage { a, dims, kernel } => {
                let ga = accumulate(&mut adj, &lens, *a);
                let back = super::ops::moving_average_adjoint(&g, *dims, *kernel);
                ga.iter_mut().zip(&back).for_each(|(d, s)| *d += s);
            }
            Op::Sum { a } => {
                let ga = accumulate(&mut adj, &lens, *a);
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { a } => {
                let ga = accumulate(&mut adj, &lens, *a);
                let share = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|d| *d += share);
            }
            Op::Gather { a, src } => {
                let ga = accumulate(&mut adj, &lens, *a);
                for (s, &j) in g.iter().zip(src.iter()) {
                    ga[j] += s;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
