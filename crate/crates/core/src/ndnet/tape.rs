//! Reverse-mode recording of the handful of vector ops the networks use.
//!
//! Every node holds a 1-D value. Parameters are never copied onto the tape:
//! [`Tape::linear`] reads weights straight from the borrowed [`ParamStore`]
//! and the backward pass writes their gradients into a [`ParamGrads`].

use super::{ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Linear { w: ParamId, b: Option<ParamId>, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    /// vector times a length-1 node
    ScaleBy(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    /// Σ c_k · x_k over same-width nodes
    WeightedSum(Vec<(NodeId, f64)>),
    SumElems(NodeId),
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick(NodeId, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradients from one backward pass: per-parameter buffers plus the
/// gradient with respect to every node that received one.
#[derive(Debug)]
pub struct TapeGrads {
    pub params: ParamGrads,
    nodes: Vec<Option<Vec<f64>>>,
}

impl TapeGrads {
    /// Gradient of the seeded output with respect to `node`, zeros if none flowed.
    pub fn wrt(&self, node: NodeId, width: usize) -> Vec<f64> {
        self.nodes
            .get(node.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; width])
    }
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

fn log_softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256), consumed: false }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears recorded ops so the tape can be used again.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn width(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn same_width(&self, a: NodeId, b: NodeId, what: &str) -> Result<usize> {
        let (wa, wb) = (self.width(a), self.width(b));
        if wa != wb {
            return Err(Error::Shape(format!("{what}: widths {wa} and {wb}")));
        }
        Ok(wa)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Result<NodeId> {
        if value.is_empty() {
            return Err(Error::Shape("empty input".into()));
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tape input".into()));
        }
        Ok(self.push(value, Op::Input))
    }

    /// `W·x + b` with `W` of shape `[out, in]`.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: NodeId) -> Result<NodeId> {
        let wt = self.store.tensor(w);
        let shape = wt.shape();
        if shape.len() != 2 || shape[1] != self.width(x) {
            return Err(Error::Shape(format!(
                "linear {}: weight {:?}, input width {}",
                self.store.name(w),
                shape,
                self.width(x)
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let wd = wt.data();
        let xv = &self.nodes[x.0].value;
        let mut out = match b {
            Some(b) => {
                let bv = self.store.values(b);
                if bv.len() != rows {
                    return Err(Error::Shape(format!("bias {} width", self.store.name(b))));
                }
                bv.to_vec()
            }
            None => vec![0.0; rows],
        };
        for (o, row) in out.iter_mut().zip(wd.chunks_exact(cols)) {
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(out, Op::Linear { w, b, x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let v = self.value(x).iter().map(|a| scale * a + shift).collect();
        Ok(self.push(v, Op::Affine(x, scale)))
    }

    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.width(s) != 1 {
            return Err(Error::Shape("scale_by needs a scalar node".into()));
        }
        let k = self.scalar(s);
        let v = self.value(x).iter().map(|a| a * k).collect();
        Ok(self.push(v, Op::ScaleBy(x, s)))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).iter().map(|a| a.max(0.0)).collect();
        Ok(self.push(v, Op::Relu(x)))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).iter().map(|a| a.tanh()).collect();
        Ok(self.push(v, Op::Tanh(x)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).iter().map(|&a| sigmoid(a)).collect();
        Ok(self.push(v, Op::Sigmoid(x)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let mut v = Vec::with_capacity(parts.iter().map(|&p| self.width(p)).sum());
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Shape("weighted_sum of nothing".into()));
        };
        let w = self.width(first);
        let mut v = vec![0.0; w];
        for &(n, c) in terms {
            if self.width(n) != w {
                return Err(Error::Shape("weighted_sum widths differ".into()));
            }
            for (o, x) in v.iter_mut().zip(self.value(n)) {
                *o += c * x;
            }
        }
        Ok(self.push(v, Op::WeightedSum(terms.to_vec())))
    }

    pub fn sum_elems(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).iter().sum();
        Ok(self.push(vec![s], Op::SumElems(x)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width(a, b, "dot")?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![s], Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = softmax_slice(self.value(x));
        Ok(self.push(v, Op::Softmax(x)))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = log_softmax_slice(self.value(x));
        Ok(self.push(v, Op::LogSoftmax(x)))
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let w = self.width(x);
        if index >= w {
            return Err(Error::InvalidInput(format!("index {index} out of range for width {w}")));
        }
        let v = vec![self.value(x)[index]];
        Ok(self.push(v, Op::Pick(x, index)))
    }

    /// `-ln p[label]` where `p = softmax(logits)`.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lp = self.log_softmax(logits)?;
        let picked = self.pick(lp, label)?;
        self.affine(picked, -1.0, 0.0)
    }

    /// Propagates `seed` (which must match the output width) back through the
    /// tape. A tape can be consumed once; call [`Tape::reset`] to reuse it.
    pub fn backward(&mut self, output: NodeId, seed: &[f64]) -> Result<TapeGrads> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by backward".into()));
        }
        if seed.len() != self.width(output) {
            return Err(Error::Shape(format!(
                "seed width {} vs output width {}",
                seed.len(),
                self.width(output)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());
        let mut params = ParamGrads::new(self.store.len());

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, width: usize) -> &mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; width])
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Linear { w, b, x } => {
                    let wt = self.store.tensor(*w);
                    let cols = wt.shape()[1];
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = params.entry(*w, wt.len());
                        for (row, &gi) in gw.chunks_exact_mut(cols).zip(&g) {
                            if gi != 0.0 {
                                row.iter_mut().zip(xv).for_each(|(r, xj)| *r += gi * xj);
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = params.entry(*b, g.len());
                        gb.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for (row, &gi) in wt.data().chunks_exact(cols).zip(&g) {
                        if gi != 0.0 {
                            gx.iter_mut().zip(row).for_each(|(a, wij)| *a += gi * wij);
                        }
                    }
                }
                Op::Add(a, b) => {
                    let w = g.len();
                    acc(&mut grads, *a, w).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut grads, *b, w).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Sub(a, b) => {
                    let w = g.len();
                    acc(&mut grads, *a, w).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut grads, *b, w).iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let w = g.len();
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, w).iter_mut().zip(&ga).for_each(|(x, y)| *x += y);
                    acc(&mut grads, *b, w).iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                }
                Op::Affine(x, s) => {
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += s * b);
                }
                Op::ScaleBy(x, s) => {
                    let k = self.nodes[s.0].value[0];
                    let xv = &self.nodes[x.0].value;
                    let gs: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
                    acc(&mut grads, *s, 1)[0] += gs;
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(xv))
                        .for_each(|(a, (gi, xi))| {
                            if *xi > 0.0 {
                                *a += gi
                            }
                        });
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(a, (gi, yi))| *a += gi * (1.0 - yi * yi));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(a, (gi, yi))| *a += gi * yi * (1.0 - yi));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.len();
                        acc(&mut grads, p, w)
                            .iter_mut()
                            .zip(&g[off..off + w])
                            .for_each(|(a, b)| *a += b);
                        off += w;
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(n, c) in terms {
                        acc(&mut grads, n, g.len()).iter_mut().zip(&g).for_each(|(a, b)| *a += c * b);
                    }
                }
                Op::SumElems(x) => {
                    let w = self.nodes[x.0].value.len();
                    acc(&mut grads, *x, w).iter_mut().for_each(|a| *a += g[0]);
                }
                Op::Dot(a, b) => {
                    let w = self.nodes[a.0].value.len();
                    let ga: Vec<f64> = self.nodes[b.0].value.iter().map(|v| v * g[0]).collect();
                    let gb: Vec<f64> = self.nodes[a.0].value.iter().map(|v| v * g[0]).collect();
                    acc(&mut grads, *a, w).iter_mut().zip(&ga).for_each(|(x, y)| *x += y);
                    acc(&mut grads, *b, w).iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(a, (gi, yi))| *a += yi * (gi - dot));
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let total: f64 = g.iter().sum();
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(a, (gi, yi))| *a += gi - yi.exp() * total);
                }
                Op::Pick(x, i) => {
                    let w = self.nodes[x.0].value.len();
                    acc(&mut grads, *x, w)[*i] += g[0];
                }
            }
            grads[idx] = Some(g);
        }
        Ok(TapeGrads { params, nodes: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnet::Tensor;

    #[test]
    fn square_gradient() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let w = tape.input(vec![3.0]).unwrap();
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y, &[1.0]).unwrap();
        assert_eq!(g.wrt(w, 1), vec![6.0]);
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![1.0, -1.0]).unwrap();
        let y = tape.linear(w, None, x).unwrap();
        let g = tape.backward(y, &[0.0, 0.0]).unwrap();
        assert!(g.params.get(w).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.wrt(x, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_backward_is_a_usage_error() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![1.0]).unwrap();
        tape.backward(x, &[1.0]).unwrap();
        assert!(matches!(tape.backward(x, &[1.0]), Err(Error::Usage(_))));
        tape.reset();
        let x = tape.input(vec![1.0]).unwrap();
        assert!(tape.backward(x, &[1.0]).is_ok());
    }

    #[test]
    fn seed_width_checked() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![1.0, 2.0]).unwrap();
        assert!(matches!(tape.backward(x, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_cases() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.input(vec![0.0, 0.0, 0.0]).unwrap();
        let p = tape.softmax(a).unwrap();
        for &x in tape.value(p) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = tape.input(vec![2f64.ln(), 0.0]).unwrap();
        let p = tape.softmax(b).unwrap();
        assert!((tape.value(p)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((tape.value(p)[1] - 1.0 / 3.0).abs() < 1e-15);
        let c = tape.input(vec![1000.0, 0.0]).unwrap();
        let p = tape.softmax(c).unwrap();
        assert!(tape.value(p).iter().all(|x| x.is_finite()));
        assert!((tape.value(p)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let l = tape.input(vec![0.0, 0.0]).unwrap();
        let ce = tape.cross_entropy_logits(l, 0).unwrap();
        assert!((tape.scalar(ce) - 2f64.ln()).abs() < 1e-15);
        assert!(tape.cross_entropy_logits(l, 2).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.input(vec![1.0, 2.0]).unwrap();
        let b = tape.input(vec![1.0]).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        assert!(tape.input(vec![]).is_err());
    }
}
