use crate::error::{Error, Result};
use crate::neural::graph::{Eval, Graph};
use crate::neural::params::{param_init, Init, ParamId, ParamStore, Tensor};

/// Registers named tensors in a store with per-tensor seeds derived from one base seed.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    counter: u64,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            seed,
            counter: 0,
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        self.counter += 1;
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.counter);
        self.store.insert(name, param_init(shape, init, seed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        builder: &mut ParamBuilder<'_>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        Self {
            w: builder.tensor(&format!("{name}.w"), &[output, input], Init::UniformFanIn(input)),
            b: builder.tensor(&format!("{name}.b"), &[output], Init::UniformFanIn(input)),
            input,
            output,
            activation,
        }
    }

    /// Layer whose weights and bias start at zero.
    pub fn zeroed(
        builder: &mut ParamBuilder<'_>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        Self {
            w: builder.tensor(&format!("{name}.w"), &[output, input], Init::Zeros),
            b: builder.tensor(&format!("{name}.b"), &[output], Init::Zeros),
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.output * self.input + self.output
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Var) -> G::Var {
        match self.activation {
            Activation::Identity => g.affine(self.w, Some(self.b), x),
            Activation::Relu => g.affine_relu(self.w, Some(self.b), x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GruLayer {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(builder: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize) -> Self {
        let init = Init::UniformFanIn(hidden);
        let mut t = |suffix: &str, shape: &[usize]| builder.tensor(&format!("{name}.{suffix}"), shape, init);
        Self {
            wz: t("w_z", &[hidden, input]),
            uz: t("u_z", &[hidden, hidden]),
            bz: t("b_z", &[hidden]),
            wr: t("w_r", &[hidden, input]),
            ur: t("u_r", &[hidden, hidden]),
            br: t("b_r", &[hidden]),
            wh: t("w_h", &[hidden, input]),
            uh: t("u_h", &[hidden, hidden]),
            bh: t("b_h", &[hidden]),
            input,
            hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        3 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
    }

    pub fn step<G: Graph>(&self, g: &mut G, x: &G::Var, h: &G::Var) -> G::Var {
        let z = g.affine_pair(self.wz, Some(self.bz), x, self.uz, h);
        let z = g.sigmoid(&z);
        let r = g.affine_pair(self.wr, Some(self.br), x, self.ur, h);
        let r = g.sigmoid(&r);
        let rh = g.mul(&r, h);
        let cand = g.affine_pair(self.wh, Some(self.bh), x, self.uh, &rh);
        let cand = g.tanh(&cand);
        // (1 - z) h + z h̃ = h + z (h̃ - h)
        let delta = g.sub(&cand, h);
        let step = g.mul(&z, &delta);
        g.add(h, &step)
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}

/// Applies a dense layer to a single vector.
pub fn dense_forward(store: &ParamStore, layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    check_len("dense input", layer.input, x.len())?;
    let mut g = Eval::new(store);
    let xv = g.input(layer.input, x.data().to_vec());
    let y = layer.forward(&mut g, &xv);
    Tensor::new(vec![layer.output], y.data)
}

/// One GRU step on a single vector.
pub fn gru_cell(store: &ParamStore, layer: &GruLayer, x: &Tensor, h: &Tensor) -> Result<Tensor> {
    check_len("gru input", layer.input, x.len())?;
    check_len("gru hidden", layer.hidden, h.len())?;
    let mut g = Eval::new(store);
    let xv = g.input(layer.input, x.data().to_vec());
    let hv = g.input(layer.hidden, h.data().to_vec());
    let out = layer.step(&mut g, &xv, &hv);
    Tensor::new(vec![layer.hidden], out.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vector(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn set(store: &mut ParamStore, id: ParamId, values: &[f64]) {
        store.get_mut(id).data_mut().copy_from_slice(values);
    }

    #[test]
    fn identity_and_relu_layers() {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, 0);
        let lin = DenseLayer::new(&mut b, "lin", 2, 2, Activation::Identity);
        let rel = DenseLayer::new(&mut b, "rel", 2, 2, Activation::Relu);
        for layer in [&lin, &rel] {
            set(&mut store, layer.w, &[1.0, 0.0, 0.0, 1.0]);
            set(&mut store, layer.b, &[0.0, 0.0]);
        }
        let x = vector(&[-1.0, 2.0]);
        assert_eq!(dense_forward(&store, &lin, &x).unwrap().data(), &[-1.0, 2.0]);
        assert_eq!(dense_forward(&store, &rel, &x).unwrap().data(), &[0.0, 2.0]);
        assert!(matches!(
            dense_forward(&store, &lin, &vector(&[1.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dense_matches_naive_matmul() {
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut ParamBuilder::new(&mut store, 3), "d", 7, 5, Activation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = dense_forward(&store, &layer, &vector(&x)).unwrap();
        let (w, b) = (store.get(layer.w).data(), store.get(layer.b).data());
        for i in 0..5 {
            let mut acc = b[i];
            for j in 0..7 {
                acc += w[i * 7 + j] * x[j];
            }
            assert!((acc - y.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gru_gates_halve_the_state() {
        let mut store = ParamStore::new();
        let cell = GruLayer::new(&mut ParamBuilder::new(&mut store, 1), "g", 2, 3);
        store.fill(0.0);
        let x = vector(&[0.4, -0.9]);
        let zero = gru_cell(&store, &cell, &x, &vector(&[0.0; 3])).unwrap();
        assert_eq!(zero.data(), &[0.0; 3]);
        let half = gru_cell(&store, &cell, &x, &vector(&[0.6, -0.2, 1.0])).unwrap();
        assert_eq!(half.data(), &[0.3, -0.1, 0.5]);
    }

    #[test]
    fn gru_output_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let mut store = ParamStore::new();
            let cell = GruLayer::new(&mut ParamBuilder::new(&mut store, seed), "g", 4, 6);
            for id in store.clone().ids() {
                for v in store.get_mut(id).data_mut() {
                    *v *= 5.0;
                }
            }
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| rng.random_range(-0.999..0.999)).collect();
            let out = gru_cell(&store, &cell, &vector(&x), &vector(&h)).unwrap();
            for (o, hi) in out.data().iter().zip(&h) {
                assert!(o.abs() < 1.0);
                assert!(o.abs() <= hi.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gru_shape_errors() {
        let mut store = ParamStore::new();
        let cell = GruLayer::new(&mut ParamBuilder::new(&mut store, 1), "g", 2, 3);
        assert!(gru_cell(&store, &cell, &vector(&[0.0; 3]), &vector(&[0.0; 3])).is_err());
        assert!(gru_cell(&store, &cell, &vector(&[0.0; 2]), &vector(&[0.0; 2])).is_err());
    }

    #[test]
    fn param_counts() {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, 0);
        let d = DenseLayer::new(&mut b, "d", 2, 3, Activation::Relu);
        let g = GruLayer::new(&mut b, "g", 4, 5);
        assert_eq!(d.param_count(), 9);
        assert_eq!(g.param_count(), 3 * (20 + 25 + 5));
        assert_eq!(store.total_count(), d.param_count() + g.param_count());
    }

    #[test]
    fn unrolled_gru_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let (cell, head) = {
            let mut b = ParamBuilder::new(&mut store, 21);
            (
                GruLayer::new(&mut b, "g", 2, 3),
                DenseLayer::new(&mut b, "head", 3, 2, Activation::Relu),
            )
        };
        let xs = [0.5, -0.3, 0.1, 0.8, -0.6, 0.2, 1.1, -0.4];
        fn run<G: Graph>(g: &mut G, cell: &GruLayer, head: &DenseLayer, xs: &[f64]) -> G::Var {
            let mut h = g.input(3, vec![0.0; 6]);
            let mut terms = Vec::new();
            for step in xs.chunks(4) {
                let x = g.input(2, step.to_vec());
                h = cell.step(g, &x, &h);
                let o = head.forward(g, &h);
                terms.push(g.sq_error(&o, &[0.2, -0.1, 0.3, 0.0]));
            }
            g.sum(&terms)
        }
        let grads = {
            let mut tape = Tape::new(&store);
            let loss = run(&mut tape, &cell, &head, &xs);
            tape.backward(&loss).unwrap()
        };
        let step = 1e-5;
        for id in store.clone().ids() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                let mut eval_at = |v: f64| {
                    store.get_mut(id).data_mut()[k] = v;
                    let mut g = Eval::new(&store);
                    run(&mut g, &cell, &head, &xs).data[0]
                };
                let numeric = (eval_at(orig + step) - eval_at(orig - step)) / (2.0 * step);
                store.get_mut(id).data_mut()[k] = orig;
                let analytic = grads.get(id).unwrap()[k];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                assert!(rel < 1e-4, "{} [{k}]: {analytic} vs {numeric}", store.name(id));
            }
        }
    }
}
