//! Dense-array compute kernel: tensors, parameter sets, layers with exact
//! backward passes, class-weighted binary cross-entropy and Adam.

pub mod adam;
pub mod layers;
pub(crate) mod linalg;
pub mod loss;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{LayerCache, LayerSpec, Mode, RecurrentCell};
pub use loss::{weighted_bce_loss, ClassWeights};
pub use params::{ParamEntry, ParamKind, ParameterSet};
pub use tensor::Tensor;

/// Gradients aligned with a [`ParameterSet`]; running statistics have no slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Zero gradients for every trainable entry of `params`.
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let slots = params
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => Some(Tensor::zeros(e.value.shape())),
                ParamKind::RunningStatistic => None,
            })
            .collect();
        Self { slots }
    }

    pub fn from_slots(slots: Vec<Option<Tensor>>) -> Self {
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.slots.get(index).and_then(Option::as_ref)
    }

    pub(crate) fn slot_mut(&mut self, index: usize) -> Option<&mut Tensor> {
        self.slots.get_mut(index).and_then(Option::as_mut)
    }

    pub fn slots(&self) -> &[Option<Tensor>] {
        &self.slots
    }

    pub fn max_abs(&self) -> f64 {
        self.slots.iter().flatten().flat_map(|t| t.data().iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}
