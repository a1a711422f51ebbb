use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind, Stage};
use crate::nn::{Mode, Tensor};

/// An ordered stack of stage-tagged layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.check_stage_order()?;
        Ok(net)
    }

    fn check_stage_order(&self) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[1].stage < w[0].stage {
                return Err(Error::Configuration(format!(
                    "layer `{}` (stage {}) follows `{}` (stage {})",
                    w[1].name,
                    w[1].stage.index(),
                    w[0].name,
                    w[0].stage.index()
                )));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Index one past the last layer that produces logits (a trailing softmax is excluded).
    pub fn logits_end(&self) -> usize {
        match self.layers.last() {
            Some(l) if matches!(l.kind(), LayerKind::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Layer index range covered by `stage`.
    pub fn stage_range(&self, stage: Stage) -> Range<usize> {
        let start = self.layers.iter().position(|l| l.stage >= stage).unwrap_or(self.layers.len());
        let end = self.layers.iter().position(|l| l.stage > stage).unwrap_or(self.layers.len());
        start..end.max(start)
    }

    pub fn set_trainable(&mut self, stage: Stage, trainable: bool) {
        for l in self.layers.iter_mut().filter(|l| l.stage == stage) {
            l.trainable = trainable;
        }
    }

    /// Recording forward pass over `range`.
    pub fn forward_range<R: Rng + ?Sized>(
        &mut self,
        range: Range<usize>,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let mut cur = x.clone();
        for l in &mut self.layers[range] {
            cur = l.forward(&cur, mode, rng)?;
        }
        Ok(cur)
    }

    /// Recording forward pass that stops before a trailing softmax.
    pub fn forward_logits<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let end = self.logits_end();
        self.forward_range(0..end, x, mode, rng)
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let n = self.layers.len();
        self.forward_range(0..n, x, mode, rng)
    }

    /// Read-only inference over `range`.
    pub fn infer_range(&self, range: Range<usize>, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for l in &self.layers[range] {
            cur = l.infer(&cur)?;
        }
        Ok(cur)
    }

    /// Class probabilities (or raw outputs if the network has no softmax) in inference mode.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_range(0..self.layers.len(), x)
    }

    /// Backpropagates `grad` through layers `range` (which must have been run forward).
    ///
    /// Propagation stops at the earliest trainable layer; input gradients below it are not needed.
    pub fn backward_range(&mut self, range: Range<usize>, grad: &Tensor) -> Result<Option<Tensor>> {
        let first_trainable =
            self.layers[range.clone()].iter().position(|l| l.trainable && l.param_count() > 0).map(|p| p + range.start);
        let Some(stop) = first_trainable else {
            for l in &mut self.layers[range] {
                l.clear_cache();
            }
            return Ok(None);
        };
        let mut cur = grad.clone();
        for i in (stop..range.end).rev() {
            let need = i > stop;
            cur = self.layers[i].backward(&cur, need)?;
        }
        for l in &mut self.layers[range.start..stop] {
            l.clear_cache();
        }
        Ok(Some(cur))
    }

    /// Backpropagates a gradient with respect to the logits.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let end = self.logits_end();
        self.backward_range(0..end, grad_logits).map(|_| ())
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    /// Trainable parameters in deterministic (layer, parameter) order.
    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut().filter(|l| l.trainable) {
            let lname = l.name.clone();
            for (pname, t) in l.params_mut() {
                out.push((format!("{lname}.{pname}"), t));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::LayerSpec;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(rng: &mut ChaCha8Rng) -> Network {
        let specs = [
            (LayerSpec::Dense { inputs: 3, units: 4 }, Stage::Temporal),
            (LayerSpec::Activation(Activation::Tanh), Stage::Temporal),
            (LayerSpec::Dense { inputs: 4, units: 2 }, Stage::Classifier),
            (LayerSpec::Softmax, Stage::Classifier),
        ];
        let layers =
            specs.iter().enumerate().map(|(i, (s, st))| Layer::init(format!("l{i}"), s, *st, rng).unwrap()).collect();
        Network::new(layers).unwrap()
    }

    #[test]
    fn stage_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = tiny(&mut rng);
        assert_eq!(net.stage_range(Stage::Features), 0..0);
        assert_eq!(net.stage_range(Stage::Temporal), 0..2);
        assert_eq!(net.stage_range(Stage::Classifier), 2..4);
        assert_eq!(net.logits_end(), 3);
    }

    #[test]
    fn out_of_order_stages_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Layer::init("a", &LayerSpec::Softmax, Stage::Classifier, &mut rng).unwrap();
        let b = Layer::init("b", &LayerSpec::Softmax, Stage::Features, &mut rng).unwrap();
        assert!(Network::new(vec![a, b]).is_err());
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = tiny(&mut rng);
        assert!(matches!(net.backward(&Tensor::zeros(&[1, 2])), Err(Error::State(_))));
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = tiny(&mut rng);
        net.set_trainable(Stage::Temporal, false);
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.1, 0.5, 0.0]).unwrap();
        net.forward_logits(&x, Mode::Train, &mut rng).unwrap();
        net.backward(&Tensor::filled(&[2, 2], 1.0)).unwrap();
        assert!(net.layers()[0].params().iter().all(|(_, t)| t.grad().is_none()));
        assert!(net.layers()[2].params().iter().all(|(_, t)| t.grad().is_some()));
    }

    #[test]
    fn infer_matches_recording_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = tiny(&mut rng);
        let x = Tensor::new(vec![1, 3], vec![0.4, -0.2, 0.9]).unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
