use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkWeights};
use crate::training::TrainConfig;

/// `lr0 * exp(-lr_decay * epoch)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * (-cfg.lr_decay * epoch as f64).exp()
}

/// SGD with momentum and L2 weight decay.
///
/// `v <- momentum * v + (g + weight_decay * w)`, then `w <- w - lr * v`.
/// The filter's `p` and `tau` follow the same rule and are projected back
/// into their allowed ranges afterwards; `beta` and `out_scale` are never
/// touched.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    pub fn new(weights: &NetworkWeights) -> Self {
        Sgd {
            velocity: Gradients::zeros_like(weights),
        }
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    pub fn step(
        &mut self,
        weights: &mut NetworkWeights,
        grads: &Gradients,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<()> {
        let shapes_match = grads.convs.len() == weights.convs.len()
            && grads
                .convs
                .iter()
                .zip(&weights.convs)
                .all(|(g, w)| g.kernel.len() == w.kernel.len() && g.bias.len() == w.bias.len());
        if !shapes_match || self.velocity.convs.len() != weights.convs.len() {
            return Err(Error::Shape("gradients do not match the weights".into()));
        }
        let lr = lr_schedule(epoch, cfg);
        let (mu, wd) = (cfg.momentum, cfg.weight_decay);
        let update = |w: &mut f64, v: &mut f64, g: f64| {
            *v = mu * *v + (g + wd * *w);
            *w -= lr * *v;
        };
        for ((w, g), v) in weights
            .convs
            .iter_mut()
            .zip(&grads.convs)
            .zip(&mut self.velocity.convs)
        {
            for ((wk, gk), vk) in w.kernel.iter_mut().zip(&g.kernel).zip(&mut v.kernel) {
                update(wk, vk, *gk);
            }
            for ((wb, gb), vb) in w.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
                update(wb, vb, *gb);
            }
        }
        update(
            &mut weights.filter.p,
            &mut self.velocity.filter_p,
            grads.filter_p,
        );
        update(
            &mut weights.filter.tau,
            &mut self.velocity.filter_tau,
            grads.filter_tau,
        );
        weights.filter.project();
        weights.round_to_storage();
        weights.revision += 1;
        Ok(())
    }
}
