use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Affine map `W x + b` with fan-in uniform initialization.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(vec![output, input], bound, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::uniform(vec![output], bound, rng));
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matvec(w, x)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Softmax,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softmax => tape.softmax(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// One tanh hidden layer followed by an affine output and `activation`.
/// Inputs are concatenated in order.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, output, rng),
            activation,
        }
    }

    /// Output before the final activation.
    pub fn logits(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<Var, TensorError> {
        let x = if inputs.len() == 1 {
            inputs[0]
        } else {
            tape.concat(inputs)
        };
        let h = self.hidden.forward(tape, x)?;
        let h = tape.tanh(h);
        self.out.forward(tape, h)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<Var, TensorError> {
        let y = self.logits(tape, inputs)?;
        Ok(self.activation.apply(tape, y))
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input
    }

    pub fn output_dim(&self) -> usize {
        self.out.output
    }
}

/// Gated recurrent unit whose previous state is the elementwise sum of a
/// set of incoming hidden vectors.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        GruCell {
            update: Linear::new(store, &format!("{name}.z"), input + hidden, hidden, rng),
            reset: Linear::new(store, &format!("{name}.r"), input + hidden, hidden, rng),
            candidate: Linear::new(store, &format!("{name}.h"), input + hidden, hidden, rng),
            input,
            hidden,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        incoming: &[Var],
    ) -> Result<Var, TensorError> {
        if tape.value(x).len() != self.input {
            return Err(TensorError::ShapeMismatch(format!(
                "gru input has {} values, expected {}",
                tape.value(x).len(),
                self.input
            )));
        }
        let s = tape.add_n(incoming, self.hidden)?;
        let xs = tape.concat(&[x, s]);
        let z = self.update.forward(tape, xs)?;
        let z = tape.sigmoid(z);
        let r = self.reset.forward(tape, xs)?;
        let r = tape.sigmoid(r);
        let rs = tape.mul(r, s)?;
        let xrs = tape.concat(&[x, rs]);
        let cand = self.candidate.forward(tape, xrs)?;
        let cand = tape.tanh(cand);
        // (1 - z) * s + z * cand
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, s)?;
        let new = tape.mul(z, cand)?;
        tape.add(keep, new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_empty_set_equals_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", 4, 5, &mut rng);
        let mut t = Tape::new(&store);
        let x = t.vector(vec![0.1, -0.4, 0.3, 0.9]);
        let a = gru.forward(&mut t, x, &[]).unwrap();
        let zero = t.zeros(5);
        let b = gru.forward(&mut t, x, &[zero]).unwrap();
        assert_eq!(t.data(a), t.data(b));
        let bad = t.zeros(3);
        assert!(gru.forward(&mut t, bad, &[]).is_err());
        let bad_h = t.zeros(4);
        assert!(gru.forward(&mut t, x, &[bad_h]).is_err());
    }

    #[test]
    fn zeroed_sigmoid_mlp_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "g", 3, 4, 1, Activation::Sigmoid, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut t = Tape::new(&store);
        let x = t.vector(vec![1.0, 2.0, 3.0]);
        let y = mlp.forward(&mut t, &[x]).unwrap();
        assert_eq!(t.scalar(y), 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gru_output_is_bounded(seed in any::<u64>(), n_in in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
            let mut t = Tape::new(&store);
            let x = t.constant(Tensor::uniform(vec![3], 5.0, &mut rng));
            // incoming states whose sum stays inside (-1, 1)
            let scale = 1.0 / (n_in.max(1) as f64 + 0.01);
            let hs: Vec<Var> = (0..n_in)
                .map(|_| t.constant(Tensor::uniform(vec![4], scale, &mut rng)))
                .collect();
            let h = gru.forward(&mut t, x, &hs).unwrap();
            prop_assert!(t.data(h).iter().all(|v| v.abs() < 1.0));
        }

        #[test]
        fn gru_gradients(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
            let x = store.add("x", Tensor::uniform(vec![3], 1.0, &mut rng));
            let h1 = store.add("h1", Tensor::uniform(vec![4], 0.5, &mut rng));
            let h2 = store.add("h2", Tensor::uniform(vec![4], 0.5, &mut rng));
            let proj = Tensor::uniform(vec![4], 1.0, &mut rng);
            let report = check_gradients(&mut store, GradCheck::default(), |t| {
                let xv = t.param(x);
                let a = t.param(h1);
                let b = t.param(h2);
                let out = gru.forward(t, xv, &[a, b])?;
                let p = t.constant(proj.clone());
                t.dot(out, p)
            })
            .unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
        }

        #[test]
        fn mlp_gradients(seed in any::<u64>(), act in 0usize..4) {
            let act = [Activation::Identity, Activation::Sigmoid, Activation::Softmax, Activation::Tanh][act];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let mlp = Mlp::new(&mut store, "g", 5, 6, 3, act, &mut rng);
            let a = store.add("a", Tensor::uniform(vec![2], 1.0, &mut rng));
            let b = store.add("b", Tensor::uniform(vec![3], 1.0, &mut rng));
            let proj = Tensor::uniform(vec![3], 1.0, &mut rng);
            let report = check_gradients(&mut store, GradCheck::default(), |t| {
                let av = t.param(a);
                let bv = t.param(b);
                let y = mlp.forward(t, &[av, bv])?;
                let p = t.constant(proj.clone());
                t.dot(y, p)
            })
            .unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
        }
    }
}
