//! Training objectives: mean-squared reconstruction over every patch, the
//! instance-discrimination constraint over cross-sample cosine similarities,
//! and their weighted sum. All are built on the autodiff graph so gradients
//! flow to the model.

use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};
use crate::numerics::{Graph, NodeId};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the instance-discrimination term.
    pub beta: f64,
    pub idc_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 0.1, idc_enabled: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(CrtError::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub idc: f64,
    pub total: f64,
}

/// Mean squared error over all positions and channels: reconstruction is
/// scored on dropped and kept patches alike.
pub fn recon_loss(g: &mut Graph, x_prime: NodeId, x: NodeId) -> Result<NodeId> {
    if g.value(x_prime).shape() != g.value(x).shape() {
        return Err(CrtError::ShapeMismatch {
            op: "recon_loss",
            lhs: g.value(x_prime).shape().to_vec(),
            rhs: g.value(x).shape().to_vec(),
        });
    }
    let diff = g.sub(x_prime, x)?;
    let sq = g.mul(diff, diff)?;
    g.mean_all(sq)
}

/// (1/(B(B-1))) * log sum over ordered cross pairs of exp(cosine similarity
/// between sample i's projected representation and sample j's projected
/// pooled embedding). Log-sum-exp runs max-subtracted; there is no
/// positive-pair term, this only pushes distinct samples apart.
pub fn idc_loss(g: &mut Graph, proj_repr: NodeId, proj_embed: NodeId) -> Result<NodeId> {
    let (sa, sb) = (g.value(proj_repr).shape().to_vec(), g.value(proj_embed).shape().to_vec());
    if sa.len() != 2 || sa != sb {
        return Err(CrtError::ShapeMismatch { op: "idc_loss", lhs: sa, rhs: sb });
    }
    let b = sa[0];
    if b < 2 {
        return Err(CrtError::InvalidArgument {
            op: "idc_loss",
            reason: format!("batch of {b} has no cross pairs"),
        });
    }
    let mut idx_i = Vec::with_capacity(b * (b - 1));
    let mut idx_j = Vec::with_capacity(b * (b - 1));
    for i in 0..b {
        for j in 0..b {
            if i != j {
                idx_i.push(i);
                idx_j.push(j);
            }
        }
    }
    let lhs = g.gather_rows(proj_repr, &idx_i)?;
    let rhs = g.gather_rows(proj_embed, &idx_j)?;
    let sims = g.cosine_similarity(lhs, rhs)?;
    // max is detached; the identity lse(s) = m + ln Σ exp(s - m) keeps the
    // gradient exact for any constant m
    let m = g.value(sims).data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = g.add_scalar(sims, -m)?;
    let e = g.exp(shifted)?;
    let tot = g.sum_all(e)?;
    let ln = g.log(tot)?;
    let lse = g.add_scalar(ln, m)?;
    g.scale(lse, 1.0 / (b * (b - 1)) as f64)
}

/// Combined objective node: recon + beta * idc when the constraint is on.
pub fn total_loss(
    g: &mut Graph,
    recon: NodeId,
    idc: Option<NodeId>,
    cfg: &LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    match idc {
        Some(idc) if cfg.idc_enabled && cfg.beta > 0.0 => {
            let weighted = g.scale(idc, cfg.beta)?;
            g.add(recon, weighted)
        }
        _ => Ok(recon),
    }
}

/// Scalar bookkeeping for logs: total = recon + beta*idc exactly, with the
/// idc term zeroed when disabled.
pub fn breakdown(recon: f64, idc: f64, cfg: &LossConfig) -> LossBreakdown {
    let effective = if cfg.idc_enabled { cfg.beta * idc } else { 0.0 };
    LossBreakdown { recon, idc, total: recon + effective }
}
