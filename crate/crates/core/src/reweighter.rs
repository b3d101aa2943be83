//! Meta reweighting plug-in: maps an augmented sample's hidden vector and a
//! learned embedding of its label to a quality weight in `(0, 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::xavier;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Hidden-layer nonlinearity of the reweight network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Not odd-symmetric, so a single layer can form products of hidden
    /// features and the label embedding from the first steps on.
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, z: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(z),
            Activation::Tanh => tape.tanh(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub num_classes: usize,
    /// Width of the incoming hidden vectors.
    pub input_width: usize,
    pub d_label: usize,
    /// Hidden layer widths; at most two layers.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
}

impl ReweightConfig {
    pub fn new(num_classes: usize, input_width: usize) -> Self {
        Self {
            num_classes,
            input_width,
            d_label: 16,
            hidden: vec![64],
            activation: Activation::Relu,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() > 2 {
            return Err(Error::config("reweight network allows at most two hidden layers"));
        }
        if self.num_classes < 2 || self.input_width == 0 || self.d_label == 0 || self.hidden.contains(&0) {
            return Err(Error::config("reweight network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("reweight dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Xavier weights; every bias, including the output bias, starts at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        let mut p = ParamSet::new();
        p.push("label_embedding", xavier(self.num_classes, self.d_label, rng));
        let mut width = self.input_width + self.d_label;
        for (i, &h) in self.hidden.iter().enumerate() {
            p.push(format!("hidden{i}.w"), xavier(width, h, rng));
            p.push(format!("hidden{i}.b"), Tensor::zeros(1, h));
            width = h;
        }
        p.push("out.w", xavier(width, 1, rng));
        p.push("out.b", Tensor::zeros(1, 1));
        Ok(p)
    }

    /// `w_j = sigmoid(MLP([h_j ; E(y_j)]))` as a `[B, 1]` column.
    pub fn compute_weights<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h_hat: Var,
        labels: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if vars.len() != 3 + 2 * self.hidden.len() {
            return Err(Error::Shape {
                op: "reweight_params",
                lhs: vec![3 + 2 * self.hidden.len()],
                rhs: vec![vars.len()],
            });
        }
        let (b, w) = tape.dims(h_hat);
        if labels.len() != b || w != self.input_width {
            return Err(Error::Shape {
                op: "compute_weights",
                lhs: vec![b, w],
                rhs: vec![labels.len(), self.input_width],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Label {
                label: bad,
                classes: self.num_classes,
            });
        }
        let e = tape.gather_rows(vars[0], labels)?;
        let mut x = tape.concat_cols(&[h_hat, e])?;
        for layer in 0..self.hidden.len() {
            let z = tape.matmul(x, vars[1 + 2 * layer])?;
            let z = tape.add_row(z, vars[2 + 2 * layer])?;
            let a = self.activation.apply(tape, z)?;
            x = tape.dropout(a, self.dropout, train, rng)?;
        }
        let n = vars.len();
        let z = tape.matmul(x, vars[n - 2])?;
        let z = tape.add_row(z, vars[n - 1])?;
        tape.sigmoid(z)
    }
}

/// Reweight module parameters `θ_A` with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ReweightNet {
    pub config: ReweightConfig,
    pub params: ParamSet,
}

impl ReweightNet {
    pub fn new<R: Rng + ?Sized>(config: ReweightConfig, rng: &mut R) -> Result<Self> {
        let params = config.init(rng)?;
        Ok(Self { config, params })
    }

    /// Evaluation-mode weights for precomputed hidden vectors.
    pub fn weights(&self, h_hat: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false)?;
        let h = tape.constant(h_hat.clone())?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let w = self.config.compute_weights(&mut tape, &vars, h, labels, false, &mut rng)?;
        Ok(tape.value(w).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> ReweightNet {
        let cfg = ReweightConfig {
            d_label: 3,
            hidden: vec![5],
            ..ReweightConfig::new(3, 4)
        };
        ReweightNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_h(rows: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, 4, (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_network_gives_one_half() {
        let mut n = net(0);
        for t in n.params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let w = n.weights(&random_h(6, 1), &[0, 1, 2, 0, 1, 2]).unwrap();
        assert!(w.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn identical_inputs_get_identical_weights() {
        let n = net(4);
        let h = Tensor::from_rows(&[vec![0.1, 0.2, -0.3, 0.4], vec![0.1, 0.2, -0.3, 0.4]]).unwrap();
        let w = n.weights(&h, &[2, 2]).unwrap();
        assert_eq!(w[0], w[1]);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let n = net(4);
        assert!(matches!(n.weights(&random_h(2, 1), &[0, 3]), Err(Error::Label { label: 3, .. })));
    }

    #[test]
    fn more_than_two_hidden_layers_is_rejected() {
        let cfg = ReweightConfig {
            hidden: vec![4, 4, 4],
            ..ReweightConfig::new(2, 4)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mean_weight_gradient_wrt_label_embedding() {
        let n = net(9);
        let h = random_h(5, 2);
        let labels = [0, 1, 2, 1, 0];
        let report = grad_check(
            |t, emb| {
                let mut vars = n.params.bind(t, false)?;
                vars[0] = emb;
                let hv = t.constant(h.clone())?;
                let mut rng = rand::rngs::mock::StepRng::new(0, 0);
                let w = n.config.compute_weights(t, &vars, hv, &labels, false, &mut rng)?;
                t.mean(w)
            },
            &n.params.tensors()[0],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.max_rel_error);
    }

    #[test]
    fn weights_are_differentiable_wrt_hidden_vectors() {
        let n = net(10);
        let report = grad_check(
            |t, h| {
                let vars = n.params.bind(t, false)?;
                let mut rng = rand::rngs::mock::StepRng::new(0, 0);
                let w = n.config.compute_weights(t, &vars, h, &[0, 2, 1], false, &mut rng)?;
                t.sum(w)
            },
            &random_h(3, 5),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.max_rel_error);
    }

    proptest! {
        #[test]
        fn weights_strictly_inside_unit_interval(seed in 0u64..1000, scale in 0.1f64..20.0) {
            let n = net(seed);
            let mut h = random_h(8, seed + 1);
            for v in h.data_mut() { *v *= scale; }
            let w = n.weights(&h, &[0, 1, 2, 0, 1, 2, 0, 1]).unwrap();
            prop_assert!(w.iter().all(|&x| x > 0.0 && x < 1.0));
        }

        #[test]
        fn changing_one_label_changes_only_that_row(seed in 0u64..500, row in 0usize..6) {
            let n = net(seed);
            let h = random_h(6, seed);
            let mut labels = vec![0, 1, 2, 0, 1, 2];
            let before = n.weights(&h, &labels).unwrap();
            labels[row] = (labels[row] + 1) % 3;
            let after = n.weights(&h, &labels).unwrap();
            for i in 0..6 {
                if i != row {
                    prop_assert_eq!(before[i], after[i]);
                }
            }
        }
    }
}
