//! Tri-domain sequence assembly, typed patching, patch dropping/masking, and
//! the curriculum schedule for the dropping ratio.
//!
//! A series of length L becomes [time L | magnitude L/2 | phase L/2], total
//! 2L. Patches never straddle domains, and a magnitude patch is always
//! dropped together with the phase patch covering the same bins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};
use crate::spectral;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
pub enum Domain {
    Time,
    Magnitude,
    Phase,
}

impl Domain {
    pub fn id(self) -> usize {
        match self {
            Domain::Time => 0,
            Domain::Magnitude => 1,
            Domain::Phase => 2,
        }
    }
}

/// Concatenation [t | m | p] per channel; `values` is (d, 2*time_len).
#[derive(Clone, Debug)]
pub struct TriDomainSequence {
    pub values: Tensor,
    pub tags: Vec<Domain>,
    pub time_len: usize,
}

impl TriDomainSequence {
    pub fn total_len(&self) -> usize {
        2 * self.time_len
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Per-channel FFT, keep the first L/2 bins, append magnitude then phase
/// after the raw block.
pub fn assemble(series: &Tensor) -> Result<TriDomainSequence> {
    if series.rank() != 2 || series.shape()[1] == 0 {
        return Err(CrtError::InvalidArgument {
            op: "assemble",
            reason: format!("need (channels, length), got {:?}", series.shape()),
        });
    }
    let (d, l) = (series.shape()[0], series.shape()[1]);
    if l % 2 != 0 {
        return Err(CrtError::InvalidArgument {
            op: "assemble",
            reason: format!("length {l} is odd; truncate by one sample"),
        });
    }
    let half = l / 2;
    let mut values = Tensor::zeros(vec![d, 2 * l]);
    for c in 0..d {
        let row = series.row(c);
        let pair = spectral::half_spectrum(&spectral::to_magnitude_phase(&spectral::fft(row)?), l)?;
        let out = &mut values.data_mut()[c * 2 * l..(c + 1) * 2 * l];
        out[..l].copy_from_slice(row);
        out[l..l + half].copy_from_slice(&pair.magnitude);
        out[l + half..].copy_from_slice(&pair.phase);
    }
    let mut tags = vec![Domain::Time; l];
    tags.extend(std::iter::repeat(Domain::Magnitude).take(half));
    tags.extend(std::iter::repeat(Domain::Phase).take(half));
    Ok(TriDomainSequence { values, tags, time_len: l })
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub domain: Domain,
    /// Position in the full patch grid, stable under dropping.
    pub index: usize,
    /// (channels, patch_len) block of the tri-domain sequence.
    pub values: Tensor,
}

#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub patch_len: usize,
    pub channels: usize,
    pub time_len: usize,
    /// Patch count of the full grid; `patches` may be a kept subset.
    pub total: usize,
}

impl PatchSet {
    pub fn n_time(&self) -> usize {
        self.time_len / self.patch_len
    }

    pub fn n_freq_pairs(&self) -> usize {
        self.time_len / 2 / self.patch_len
    }

    /// (magnitude index, phase index) twins covering the same bins.
    pub fn freq_pairing(&self) -> Vec<(usize, usize)> {
        let nt = self.n_time();
        let nf = self.n_freq_pairs();
        (0..nf).map(|j| (nt + j, nt + nf + j)).collect()
    }

    pub fn domain_of(&self, index: usize) -> Domain {
        let nt = self.n_time();
        let nf = self.n_freq_pairs();
        if index < nt {
            Domain::Time
        } else if index < nt + nf {
            Domain::Magnitude
        } else {
            Domain::Phase
        }
    }

    /// Start of the patch inside the concatenated (d, 2L) sequence.
    pub fn patch_offset(&self, index: usize) -> usize {
        index * self.patch_len
    }
}

/// Splits a tri-domain sequence into N = 2L/P single-domain patches.
pub fn make_patches(x: &TriDomainSequence, p: usize) -> Result<PatchSet> {
    let l = x.time_len;
    if p == 0 || l % p != 0 || (l / 2) % p != 0 {
        let valid: Vec<usize> = (1..=l / 2).filter(|q| l % q == 0 && (l / 2) % q == 0).collect();
        return Err(CrtError::InvalidArgument {
            op: "make_patches",
            reason: format!("patch length {p} must divide both {l} and {}; valid: {valid:?}", l / 2),
        });
    }
    let d = x.channels();
    let total = 2 * l / p;
    let mut patches = Vec::with_capacity(total);
    for index in 0..total {
        let start = index * p;
        let mut values = Tensor::zeros(vec![d, p]);
        for c in 0..d {
            let src = &x.values.data()[c * 2 * l + start..c * 2 * l + start + p];
            values.data_mut()[c * p..(c + 1) * p].copy_from_slice(src);
        }
        patches.push(Patch { domain: x.tags[start], index, values });
    }
    Ok(PatchSet { patches, patch_len: p, channels: d, time_len: l, total })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum DropMode {
    Drop,
    Mask,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum DropSampling {
    /// round(r * count) per block: stable shapes across a batch.
    ExactCount,
    /// Per-unit Bernoulli(r), the stochastic form.
    Bernoulli,
}

#[derive(Clone, Debug)]
pub struct DropPlan {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub ratio: f64,
    pub mode: DropMode,
    pub seed: u64,
}

impl DropPlan {
    /// Trivial plan keeping everything (fine-tuning and evaluation, r = 0).
    pub fn keep_all(ps: &PatchSet, mode: DropMode) -> Self {
        DropPlan {
            kept: (0..ps.total).collect(),
            dropped: Vec::new(),
            ratio: 0.0,
            mode,
            seed: 0,
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// k distinct draws from 0..n via partial Fisher-Yates, sorted.
fn choose(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k.min(n)].to_vec();
    out.sort_unstable();
    out
}

/// Samples which patches to drop (or mask). Time patches are dropped at rate
/// r, magnitude/phase pairs jointly at rate r, so each block thins evenly.
/// If rounding leaves nothing to drop, one frequency pair is dropped; if a
/// Bernoulli draw drops everything, the lowest-indexed unit is restored.
pub fn sample_drop_plan(
    ps: &PatchSet,
    r: f64,
    seed: u64,
    mode: DropMode,
    sampling: DropSampling,
) -> Result<DropPlan> {
    if !(r > 0.0 && r < 1.0) {
        return Err(CrtError::InvalidArgument {
            op: "sample_drop_plan",
            reason: format!("ratio {r} outside (0, 1)"),
        });
    }
    let nt = ps.n_time();
    let nf = ps.n_freq_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut time_drop, mut pair_drop) = match sampling {
        DropSampling::ExactCount => {
            let kt = round_half_up(r * nt as f64);
            let kp = round_half_up(r * nf as f64);
            (choose(&mut rng, nt, kt), choose(&mut rng, nf, kp))
        }
        DropSampling::Bernoulli => {
            let t = (0..nt).filter(|_| rng.gen::<f64>() < r).collect();
            let p = (0..nf).filter(|_| rng.gen::<f64>() < r).collect();
            (t, p)
        }
    };
    if time_drop.is_empty() && pair_drop.is_empty() {
        pair_drop.push(rng.gen_range(0..nf));
    }
    if time_drop.len() == nt && pair_drop.len() == nf {
        if nt > 0 {
            time_drop.remove(0);
        } else {
            pair_drop.remove(0);
        }
    }
    let mut dropped = Vec::with_capacity(time_drop.len() + 2 * pair_drop.len());
    dropped.extend_from_slice(&time_drop);
    for &j in &pair_drop {
        dropped.push(nt + j);
    }
    for &j in &pair_drop {
        dropped.push(nt + nf + j);
    }
    dropped.sort_unstable();
    let kept = (0..ps.total).filter(|i| dropped.binary_search(i).is_err()).collect();
    Ok(DropPlan { kept, dropped, ratio: r, mode, seed })
}

fn check_plan(ps: &PatchSet, plan: &DropPlan, op: &'static str) -> Result<()> {
    let mut all: Vec<usize> = plan.kept.iter().chain(&plan.dropped).copied().collect();
    all.sort_unstable();
    if all != (0..ps.total).collect::<Vec<_>>() || ps.patches.len() != ps.total {
        return Err(CrtError::InvalidArgument {
            op,
            reason: format!(
                "plan covers {} indices, patch set has {} of {}",
                all.len(),
                ps.patches.len(),
                ps.total
            ),
        });
    }
    Ok(())
}

/// Keeps only the planned patches; indices are untouched so position
/// embeddings still address the original grid. No zeros are substituted.
pub fn apply_drop(ps: &PatchSet, plan: &DropPlan) -> Result<PatchSet> {
    if plan.mode != DropMode::Drop {
        return Err(CrtError::InvalidArgument {
            op: "apply_drop",
            reason: "plan mode is mask".into(),
        });
    }
    check_plan(ps, plan, "apply_drop")?;
    let patches = plan.kept.iter().map(|&i| ps.patches[i].clone()).collect();
    Ok(PatchSet { patches, ..ps.clone() })
}

/// Keeps every patch but zeroes the planned ones (drop-vs-mask ablation).
pub fn apply_mask(ps: &PatchSet, plan: &DropPlan) -> Result<PatchSet> {
    if plan.mode != DropMode::Mask {
        return Err(CrtError::InvalidArgument {
            op: "apply_mask",
            reason: "plan mode is drop".into(),
        });
    }
    check_plan(ps, plan, "apply_mask")?;
    let mut out = ps.clone();
    for &i in &plan.dropped {
        out.patches[i].values = Tensor::zeros(vec![ps.channels, ps.patch_len]);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_epoch: usize,
}

impl Default for CurriculumConfig {
    /// Floor/ceiling matching the published schedules, ramp sized for the
    /// small-scale default epoch budget.
    fn default() -> Self {
        CurriculumConfig { r_min: 0.3, r_max: 0.6, n_epoch: 50 }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > 0.0
            && self.r_min <= self.r_max
            && self.r_max < 1.0
            && self.n_epoch > 0;
        if !ok {
            return Err(CrtError::Config(format!(
                "curriculum needs 0 < r_min <= r_max < 1 and n_epoch > 0, got ({}, {}, {})",
                self.r_min, self.r_max, self.n_epoch
            )));
        }
        Ok(())
    }
}

/// r_i = max(r_min, min(r_max, i / N_epoch)): eases from sparse to heavy
/// dropping, clipped at both ends.
pub fn curriculum_ratio(cfg: &CurriculumConfig, epoch: usize) -> f64 {
    (epoch as f64 / cfg.n_epoch as f64).min(cfg.r_max).max(cfg.r_min)
}
