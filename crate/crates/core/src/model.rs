//! Interface shared by the network and the small models used in tests.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::task::TaskId;

/// A feature extractor plus one head per task, all drawing parameters from
/// one [`ParamStore`].
pub trait TaskModel {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Feature map of one input sample.
    fn features<'t>(&self, p: &Bound<'t>, input: &Tensor) -> Result<Var<'t>>;

    /// Task output for one sample given its feature map. Classification
    /// heads return `[rows, classes]` logits.
    fn head<'t>(&self, p: &Bound<'t>, task: TaskId, z: Var<'t>, input: &Tensor) -> Result<Var<'t>>;

    /// Forward pass with every parameter held constant.
    fn predict(&self, task: TaskId, input: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params().bind(&tape, |_| false);
        let z = self.features(&p, input)?;
        Ok(self.head(&p, task, z, input)?.value().as_ref().clone())
    }
}
