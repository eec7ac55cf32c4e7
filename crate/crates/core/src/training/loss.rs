use crate::net::Descriptor;

/// Value and gradients of the contrastive loss for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// Contrastive loss: `|x - y|^2` for matching pairs and
/// `max(m - |x - y|, 0)^2` for non-matching ones.
///
/// For a non-matching pair at distance exactly zero the gradient is taken
/// to be zero.
pub fn contrastive_loss(x: &Descriptor, y: &Descriptor, positive: bool, margin: f64) -> PairLoss {
    contrastive_loss_raw(x.as_slice(), y.as_slice(), positive, margin)
}

/// Same as [`contrastive_loss`] on plain slices.
pub fn contrastive_loss_raw(x: &[f64], y: &[f64], positive: bool, margin: f64) -> PairLoss {
    assert_eq!(x.len(), y.len(), "descriptor dimensions differ");
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    if positive {
        let grad_x: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
        let grad_y = grad_x.iter().map(|g| -g).collect();
        return PairLoss {
            loss: sq,
            grad_x,
            grad_y,
        };
    }
    let dist = sq.sqrt();
    if dist >= margin || dist == 0.0 {
        let loss = if dist >= margin { 0.0 } else { margin * margin };
        return PairLoss {
            loss,
            grad_x: vec![0.0; x.len()],
            grad_y: vec![0.0; x.len()],
        };
    }
    let gap = margin - dist;
    let coef = -2.0 * gap / dist;
    let grad_x: Vec<f64> = diff.iter().map(|d| coef * d).collect();
    let grad_y = grad_x.iter().map(|g| -g).collect();
    PairLoss {
        loss: gap * gap,
        grad_x,
        grad_y,
    }
}
