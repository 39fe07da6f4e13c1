use rand::Rng;

use super::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

/// Fully connected layer `act(W·x + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub act: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), vec![output, input], input, rng)?;
        let b = store.add_uniform(format!("{name}.b"), vec![output], input, rng)?;
        Ok(Self { w, b, input, output, act })
    }

    /// Rebinds to parameters already present in `store` (e.g. after loading a checkpoint).
    pub fn bind(store: &ParamStore, name: &str, act: Activation) -> Result<Self> {
        let w = find(store, &format!("{name}.w"))?;
        let b = find(store, &format!("{name}.b"))?;
        let shape = store.tensor(w).shape();
        if shape.len() != 2 || store.tensor(b).len() != shape[0] {
            return Err(Error::Shape(format!("layer {name} has inconsistent parameters")));
        }
        Ok(Self { w, b, input: shape[1], output: shape[0], act })
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        if tape.value(x).len() != self.input {
            return Err(Error::Shape(format!(
                "dense expects width {}, got {}",
                self.input,
                tape.value(x).len()
            )));
        }
        let y = tape.linear(self.w, Some(self.b), x)?;
        match self.act {
            Activation::Linear => Ok(y),
            Activation::Relu => tape.relu(y),
            Activation::Tanh => tape.tanh(y),
        }
    }
}

pub(crate) fn find(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

/// Stack of dense layers: ReLU on every hidden layer, `out_act` on the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        out_act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        assert!(widths.len() >= 2, "mlp needs input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { out_act } else { Activation::Relu };
                Dense::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], act, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn bind(store: &ParamStore, name: &str, depth: usize, out_act: Activation) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| {
                let act = if i + 1 == depth { out_act } else { Activation::Relu };
                Dense::bind(store, &format!("{name}.{i}"), act)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(tape, h))
    }
}

/// GRU cell:
///
/// ```text
/// z  = σ(Wz·[x; h] + bz)
/// r  = σ(Wr·[x; h] + br)
/// h̃  = tanh(Wh·[x; r∘h] + bh)
/// h' = (1 − z)∘h + z∘h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub z: (ParamId, ParamId),
    pub r: (ParamId, ParamId),
    pub h: (ParamId, ParamId),
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = input + hidden;
        let mut gate = |g: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add_uniform(format!("{name}.w{g}"), vec![hidden, fan], fan, rng)?,
                store.add_uniform(format!("{name}.b{g}"), vec![hidden], fan, rng)?,
            ))
        };
        let z = gate("z")?;
        let r = gate("r")?;
        let h = gate("h")?;
        Ok(Self { z, r, h, input, hidden })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let gate = |g: &str| -> Result<(ParamId, ParamId)> {
            Ok((find(store, &format!("{name}.w{g}"))?, find(store, &format!("{name}.b{g}"))?))
        };
        let z = gate("z")?;
        let shape = store.tensor(z.0).shape();
        let hidden = shape[0];
        let input = shape[1]
            .checked_sub(hidden)
            .ok_or_else(|| Error::Shape(format!("gru {name} weight shape {shape:?}")))?;
        Ok(Self { z, r: gate("r")?, h: gate("h")?, input, hidden })
    }

    pub fn forward(&self, tape: &mut Tape, h_prev: NodeId, x: NodeId) -> Result<NodeId> {
        if tape.value(h_prev).len() != self.hidden || tape.value(x).len() != self.input {
            return Err(Error::Shape(format!(
                "gru expects h {} / x {}, got {} / {}",
                self.hidden,
                self.input,
                tape.value(h_prev).len(),
                tape.value(x).len()
            )));
        }
        let xh = tape.concat(&[x, h_prev])?;
        let zl = tape.linear(self.z.0, Some(self.z.1), xh)?;
        let z = tape.sigmoid(zl)?;
        let rl = tape.linear(self.r.0, Some(self.r.1), xh)?;
        let r = tape.sigmoid(rl)?;
        let rh = tape.mul(r, h_prev)?;
        let xrh = tape.concat(&[x, rh])?;
        let cl = tape.linear(self.h.0, Some(self.h.1), xrh)?;
        let cand = tape.tanh(cl)?;
        let diff = tape.sub(cand, h_prev)?;
        let step = tape.mul(z, diff)?;
        tape.add(h_prev, step)
    }
}

/// `-ln p[label]` for a probability vector.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    let &pl = p
        .get(label)
        .ok_or_else(|| Error::InvalidInput(format!("label {label} out of range for {} classes", p.len())))?;
    Ok(-pl.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnet::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(act: Activation) -> (ParamStore, Dense) {
        let mut store = ParamStore::new();
        let w = store.add("l.w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let b = store.add("l.b", Tensor::zeros(vec![2])).unwrap();
        (store, Dense { w, b, input: 2, output: 2, act })
    }

    #[test]
    fn dense_identity_and_relu() {
        let (store, lin) = identity_layer(Activation::Linear);
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![1.0, -2.0]).unwrap();
        let y = lin.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, -2.0]);
        let relu = Dense { act: Activation::Relu, ..lin };
        let y = relu.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 0.0]);
        let bad = tape.input(vec![1.0]).unwrap();
        assert!(matches!(relu.forward(&mut tape, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_tanh_by_formula() {
        let mut store = ParamStore::new();
        let w = store.add("l.w", Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
        let b = store.add("l.b", Tensor::vector(vec![1.0])).unwrap();
        let layer = Dense { w, b, input: 1, output: 1, act: Activation::Tanh };
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![3.0]).unwrap();
        let y = layer.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[7f64.tanh()]);
    }

    fn zero_gru(hidden: usize, input: usize) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "g", input, hidden, &mut rng).unwrap();
        let zero = vec![0.0; store.num_scalars()];
        store.set_flat_values(&zero).unwrap();
        (store, cell)
    }

    #[test]
    fn gru_zero_params() {
        let (store, cell) = zero_gru(1, 1);
        let mut tape = Tape::new(&store);
        let h = tape.input(vec![1.0]).unwrap();
        let x = tape.input(vec![0.3]).unwrap();
        let out = cell.forward(&mut tape, h, x).unwrap();
        assert!((tape.value(out)[0] - 0.5).abs() < 1e-15);
        let h0 = tape.input(vec![0.0]).unwrap();
        let out = cell.forward(&mut tape, h0, x).unwrap();
        assert_eq!(tape.value(out), &[0.0]);
    }

    #[test]
    fn gru_rejects_wrong_widths() {
        let (store, cell) = zero_gru(2, 3);
        let mut tape = Tape::new(&store);
        let h = tape.input(vec![0.0; 3]).unwrap();
        let x = tape.input(vec![0.0; 3]).unwrap();
        assert!(matches!(cell.forward(&mut tape, h, x), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_plain() {
        assert!((cross_entropy(&[0.5, 0.5], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[1.0, 1e-300], 0).unwrap().abs() < 1e-12);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::InvalidInput(_))));
        let batch = cross_entropy(&[0.2, 0.8], 1).unwrap() + cross_entropy(&[0.6, 0.4], 0).unwrap();
        assert!((batch - (-(0.8f64.ln()) - 0.6f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn bind_recovers_layers() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Mlp::new(&mut store, "m", &[4, 8, 2], Activation::Linear, &mut rng).unwrap();
        GruCell::new(&mut store, "g", 5, 3, &mut rng).unwrap();
        let mlp = Mlp::bind(&store, "m", 2, Activation::Linear).unwrap();
        assert_eq!((mlp.input(), mlp.output()), (4, 2));
        let g = GruCell::bind(&store, "g").unwrap();
        assert_eq!((g.input, g.hidden), (5, 3));
    }
}
