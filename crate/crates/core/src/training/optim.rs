//! Sparse first-order optimisers: only rows touched by the batch change.

use serde::{Deserialize, Serialize};

use crate::model::{Model, ParamGroup, Params};

use super::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adagrad,
    /// Lazy Adam: moments of untouched rows are left alone.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(crate::Error::domain(format!("unknown optimizer `{s}`"))),
        }
    }
}

const ADAGRAD_EPS: f64 = 1e-10;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// Adagrad: running sum of squares. Adam: first moment.
    first: Params,
    /// Adam only: second moment.
    second: Option<Params>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &Model) -> Self {
        let zeros = || Params::zeros(model.config(), model.n_entities(), model.n_relations());
        Optimizer {
            kind,
            lr,
            first: zeros(),
            second: (kind == OptimizerKind::Adam).then(zeros),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// One descent step on the rows recorded in `grads`.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        self.steps += 1;
        let lr = self.lr;
        let params = model.params_mut();
        match self.kind {
            OptimizerKind::Adagrad => {
                for group in ParamGroup::ALL {
                    for &row in grads.touched(group) {
                        let g = grads.row(group, row);
                        let acc = self.first[group].row_mut(row);
                        for ((p, a), gi) in params[group].row_mut(row).iter_mut().zip(acc).zip(g) {
                            *a += gi * gi;
                            *p -= lr * gi / (a.sqrt() + ADAGRAD_EPS);
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let second = self.second.as_mut().expect("adam keeps a second moment");
                let t = self.steps as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for group in ParamGroup::ALL {
                    for &row in grads.touched(group) {
                        let g = grads.row(group, row);
                        let m = self.first[group].row_mut(row);
                        let v = second[group].row_mut(row);
                        for (((p, mi), vi), gi) in params[group].row_mut(row).iter_mut().zip(m).zip(v).zip(g) {
                            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                            *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}
