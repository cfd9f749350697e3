//! Learnable parameters and the registry that owns them.

use crate::error::SamaError;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named trainable array with a gradient slot of the same shape.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Initialization schemes for [`ParamStore::register`].
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    UniformFanIn { fan_in: usize },
    Zeros,
    Constant(f64),
}

/// Owns every learnable array of a model, each registered exactly once.
///
/// Initialization draws come from a per-parameter stream derived from
/// (seed, name), so a parameter's initial value does not depend on which
/// other parameters exist or on registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            seed,
        }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "parameter {name:?} registered twice"
        );
        assert!(!shape.is_empty(), "parameter {name:?} has empty shape");
        let value = init_tensor(shape, init, &mut Rng::derive(self.seed, name));
        self.register_with_value(name, value)
    }

    /// Registers a parameter with an explicitly provided initial value.
    pub fn register_with_value(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "parameter {name:?} registered twice"
        );
        let grad = Tensor::zeros(value.shape());
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    /// Replaces a parameter value loaded from a checkpoint.
    pub fn load_value(&mut self, name: &str, value: Tensor) -> Result<(), SamaError> {
        let id = self
            .find(name)
            .ok_or_else(|| SamaError::Checkpoint(format!("unknown parameter {name:?}")))?;
        if self.params[id.0].value.shape() != value.shape() {
            return Err(SamaError::Checkpoint(format!(
                "parameter {name:?} has shape {:?}, checkpoint provides {:?}",
                self.params[id.0].value.shape(),
                value.shape()
            )));
        }
        self.params[id.0].value = value;
        Ok(())
    }
}

pub fn init_tensor(shape: &[usize], init: Init, rng: &mut Rng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Constant(c) => Tensor::filled(shape, c),
        Init::UniformFanIn { fan_in } => {
            assert!(fan_in > 0, "zero fan-in");
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
            Tensor::from_vec(shape, data)
        }
    }
}
