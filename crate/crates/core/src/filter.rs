//! The trainable edge-filtering layer.
//!
//! Each edge strength `w` is mapped through
//!
//! ```text
//! f(w) = out_scale * w^p / (1 + exp(beta * (tau - w)))
//! ```
//!
//! The sigmoid is a soft threshold at `tau` (near-hard for the fixed
//! `beta = 500`), and the power `p` sets the contrast between weak and strong
//! edges. `p` and `tau` are learned together with the network; `beta` and
//! `out_scale` are constants of the layer.
//!
//! At `w = 0` the value and every partial derivative are defined as zero:
//! background carries no signal and no gradient, even where `p < 1` would
//! make the analytic derivative blow up.

use serde::{Deserialize, Serialize};

use crate::edgemap::EdgeMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Range `p` is projected into after every training update.
pub const P_RANGE: (f64, f64) = (0.05, 4.0);
/// Range `tau` is projected into after every training update.
pub const TAU_RANGE: (f64, f64) = (0.0, 0.5);

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Contrast exponent.
    pub p: f64,
    /// Soft threshold.
    pub tau: f64,
    /// Sigmoid sharpness; never trained.
    pub beta: f64,
    /// Linear scale applied to the output.
    pub out_scale: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            p: 0.5,
            tau: 0.1,
            beta: 500.0,
            out_scale: 10.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::config("p", format!("{} must be > 0", self.p)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(
                "tau",
                format!("{} must lie in [0, 1]", self.tau),
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("{} must be > 0", self.beta)));
        }
        if !(self.out_scale > 0.0 && self.out_scale.is_finite()) {
            return Err(Error::config(
                "out_scale",
                format!("{} must be > 0", self.out_scale),
            ));
        }
        Ok(())
    }

    /// Clamp the trainable parameters into their allowed training ranges.
    pub fn project(&mut self) {
        self.p = self.p.clamp(P_RANGE.0, P_RANGE.1);
        self.tau = self.tau.clamp(TAU_RANGE.0, TAU_RANGE.1);
    }

    /// Filter response for a single strength.
    pub fn apply(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        self.out_scale * w.powf(self.p) * self.gate(w)
    }

    fn gate(&self, w: f64) -> f64 {
        sigmoid(self.beta * (w - self.tau))
    }

    /// Partials of [`apply`](Self::apply) with respect to `(p, tau, w)`.
    pub fn partials(&self, w: f64) -> (f64, f64, f64) {
        if w <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let s = self.gate(w);
        let wp = w.powf(self.p);
        let ds = s * (1.0 - s);
        let d_p = wp * w.max(LOG_FLOOR).ln() * s;
        let d_tau = -self.beta * wp * ds;
        let d_w = self.p * w.powf(self.p - 1.0) * s + self.beta * wp * ds;
        (
            d_p * self.out_scale,
            d_tau * self.out_scale,
            d_w * self.out_scale,
        )
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradients of a scalar objective through the filter layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrads {
    pub p: f64,
    pub tau: f64,
    /// Gradient with respect to the edge strengths.
    pub input: Tensor,
}

/// Apply the filter to every pixel; returns a single-channel tensor.
pub fn filter_forward(map: &EdgeMap, params: &FilterParams) -> Tensor {
    let data = map.data().iter().map(|&w| params.apply(w)).collect();
    Tensor::from_vec(1, map.height(), map.width(), data)
}

/// Contract `upstream` (gradient w.r.t. the filter output) with the layer's
/// partial derivatives.
pub fn filter_backward(
    map: &EdgeMap,
    params: &FilterParams,
    upstream: &Tensor,
) -> Result<FilterGrads> {
    if upstream.channels != 1 || upstream.height != map.height() || upstream.width != map.width() {
        return Err(Error::Shape(format!(
            "upstream gradient {}x{}x{} does not match {}x{} edge map",
            upstream.channels,
            upstream.height,
            upstream.width,
            map.height(),
            map.width()
        )));
    }
    let mut grad_p = 0.0;
    let mut grad_tau = 0.0;
    let mut input = Vec::with_capacity(map.data().len());
    for (&w, &g) in map.data().iter().zip(&upstream.data) {
        let (dp, dt, dw) = params.partials(w);
        grad_p += g * dp;
        grad_tau += g * dt;
        input.push(g * dw);
    }
    Ok(FilterGrads {
        p: grad_p,
        tau: grad_tau,
        input: Tensor::from_vec(1, map.height(), map.width(), input),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn unit(p: f64, tau: f64, beta: f64) -> FilterParams {
        FilterParams {
            p,
            tau,
            beta,
            out_scale: 1.0,
        }
    }

    #[test]
    fn defaults_match_initialization() {
        let d = FilterParams::default();
        assert_eq!((d.p, d.tau, d.beta, d.out_scale), (0.5, 0.1, 500.0, 10.0));
        d.validate().unwrap();
    }

    #[test]
    fn forward_hand_values() {
        let f = unit(0.5, 0.1, 500.0);
        assert!((f.apply(0.1) - 0.1f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((f.apply(0.1) - 0.158114).abs() < 1e-6);
        assert_eq!(f.apply(0.0), 0.0);
        assert!((f.apply(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(FilterParams::default().apply(0.0), 0.0);
    }

    #[test]
    fn out_scale_multiplies() {
        let f = FilterParams::default();
        assert!((f.apply(1.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tau_gradient_at_threshold() {
        let f = unit(0.5, 0.1, 500.0);
        let (_, d_tau, _) = f.partials(0.1);
        assert!((d_tau - (-500.0 * 0.1f64.sqrt() * 0.25)).abs() < 1e-9);
        assert!((d_tau + 39.528).abs() < 1e-3);
    }

    #[test]
    fn backward_zero_map_has_zero_gradients() {
        let map = EdgeMap::zeros(4, 3).unwrap();
        let upstream = Tensor::from_vec(1, 3, 4, vec![1.0; 12]);
        let g = filter_backward(&map, &FilterParams::default(), &upstream).unwrap();
        assert_eq!(g.p, 0.0);
        assert_eq!(g.tau, 0.0);
        assert!(g.input.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let map = EdgeMap::zeros(4, 3).unwrap();
        let upstream = Tensor::zeros(1, 4, 3);
        assert!(matches!(
            filter_backward(&map, &FilterParams::default(), &upstream),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn partials_match_central_differences() {
        let mut rng = seeded(11);
        let h = 1e-6;
        for _ in 0..200 {
            let w = rng.gen_range(0.01..1.0);
            let f = FilterParams {
                p: rng.gen_range(0.1..3.0),
                tau: rng.gen_range(0.0..0.5),
                beta: if rng.gen_bool(0.5) {
                    500.0
                } else {
                    rng.gen_range(1.0..50.0)
                },
                out_scale: rng.gen_range(0.5..10.0),
            };
            let (dp, dt, dw) = f.partials(w);
            let num_p = ({
                let mut g = f;
                g.p += h;
                g.apply(w)
            } - {
                let mut g = f;
                g.p -= h;
                g.apply(w)
            }) / (2.0 * h);
            let num_t = ({
                let mut g = f;
                g.tau += h;
                g.apply(w)
            } - {
                let mut g = f;
                g.tau -= h;
                g.apply(w)
            }) / (2.0 * h);
            let num_w = (f.apply(w + h) - f.apply(w - h)) / (2.0 * h);
            for (a, n) in [(dp, num_p), (dt, num_t), (dw, num_w)] {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
                assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn monotone_and_bounded_on_dense_grid() {
        let f = unit(0.5, 0.1, 500.0);
        let mut prev = 0.0;
        for i in 0..=10_000 {
            let w = i as f64 / 10_000.0;
            let v = f.apply(w);
            assert!((0.0..=1.0).contains(&v));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn large_beta_approaches_hard_threshold() {
        let f = unit(0.5, 0.1, 1e6);
        for i in 0..=10_000 {
            let w = i as f64 / 10_000.0;
            if (w - f.tau).abs() <= 0.01 {
                continue;
            }
            let hard = if w > f.tau { w.powf(f.p) } else { 0.0 };
            assert!((f.apply(w) - hard).abs() < 1e-3);
        }
    }

    #[test]
    fn projection_clamps_trainables_only() {
        let mut f = FilterParams {
            p: 9.0,
            tau: -1.0,
            beta: 500.0,
            out_scale: 10.0,
        };
        f.project();
        assert_eq!((f.p, f.tau, f.beta, f.out_scale), (4.0, 0.0, 500.0, 10.0));
    }
}
