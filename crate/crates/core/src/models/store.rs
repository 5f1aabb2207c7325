use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::autodiff::{AdamState, Checkpoint, Tape, Tensor, Var};

/// A named tensor. Non-trainable entries are buffers such as batch-norm
/// running statistics: checkpointed, never optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
    pub trainable: bool,
}

/// Ordered parameter collection. Insertion order is checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f32>, trainable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, trainable });
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], mean: f32, std: f32, rng: &mut impl Rng) {
        let dist = Normal::new(mean, std).expect("finite std");
        self.insert(name, Tensor::from_fn(shape, |_| dist.sample(rng)), true);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index.get(name).map(|&i| &mut self.params[i].value)
    }

    pub(crate) fn expect(&self, name: &str) -> &Tensor<f32> {
        self.get(name).unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Binds a parameter on `tape`; it receives gradients only when both the
    /// parameter and the caller allow it.
    pub fn bind(&self, tape: &mut Tape<f32>, name: &str, trainable: bool) -> Var {
        let i = self.index[name];
        let p = &self.params[i];
        tape.bind(name, &p.value, trainable && p.trainable)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in &self.params {
            ck.push(p.name.clone(), p.value.clone());
        }
        ck
    }

    /// Overwrites every parameter from `ck`; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), ModelError> {
        for p in &self.params {
            let t = ck.get(&p.name).ok_or_else(|| ModelError::MissingParam(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(ModelError::ParamShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some((extra, _)) = ck.entries.iter().find(|(n, _)| !self.index.contains_key(n)) {
            return Err(ModelError::UnexpectedParam(extra.clone()));
        }
        for p in &mut self.params {
            p.value = ck.get(&p.name).expect("checked").clone();
        }
        Ok(())
    }

    /// One Adam step over the trainable parameters, using gradients left on
    /// `tape`. Parameters without a gradient are stepped with zero gradient.
    pub fn adam_step(&mut self, tape: &Tape<f32>, opt: &mut AdamState<f32>) -> Result<(), ModelError> {
        let zeros: Vec<Vec<f32>> = self
            .params
            .iter()
            .map(|p| if p.trainable && tape.param_grad(&p.name).is_none() { vec![0.0; p.value.numel()] } else { Vec::new() })
            .collect();
        let updates = self
            .params
            .iter_mut()
            .zip(&zeros)
            .filter(|(p, _)| p.trainable)
            .map(|(p, z)| {
                let g = tape.param_grad(&p.name).unwrap_or(z.as_slice());
                (p.name.as_str(), p.value.data_mut(), g)
            });
        opt.step(updates)?;
        Ok(())
    }
}

/// Serializes optimizer moments as `<param>/adam/m`, `<param>/adam/v`, and
/// the step counter as `adam/step`.
pub fn adam_to_checkpoint(opt: &AdamState<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push("adam/step", Tensor::scalar(opt.step_count() as f32));
    for name in opt.names() {
        let (m, v) = opt.moments(name).expect("listed");
        ck.push(format!("{name}/adam/m"), Tensor::new(&[m.len()], m.to_vec()).expect("1-D"));
        ck.push(format!("{name}/adam/v"), Tensor::new(&[v.len()], v.to_vec()).expect("1-D"));
    }
    ck
}

pub fn adam_from_checkpoint(ck: &Checkpoint, opt: &mut AdamState<f32>) -> Result<(), ModelError> {
    let step = ck.get("adam/step").ok_or_else(|| ModelError::MissingParam("adam/step".into()))?.item();
    let mut moments = Vec::new();
    for (name, m) in &ck.entries {
        if let Some(base) = name.strip_suffix("/adam/m") {
            let v_name = format!("{base}/adam/v");
            let v = ck.get(&v_name).ok_or(ModelError::MissingParam(v_name))?;
            moments.push((base.to_string(), m.data().to_vec(), v.data().to_vec()));
        }
    }
    opt.restore(step as u64, moments);
    Ok(())
}
