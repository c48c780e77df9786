//! Independent gradient oracle: central finite differences over a
//! caller-supplied graph builder. Used by unit tests for every op and by the
//! `crt gradcheck` command for an end-to-end model audit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CrtError, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// |fd - analytic| / max(1, |fd|, |analytic|), maximized over all elements.
    pub max_rel_err: f64,
    pub checks: usize,
    /// (input index, element index, fd, analytic) for the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Checks the gradient of `build` (a scalar-loss graph over leaves created
/// from `inputs`) against central finite differences with step `eps`.
pub fn finite_difference_check<F>(
    build: &F,
    inputs: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves = tensors
            .iter()
            .map(|t| g.leaf(t.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &leaves)?;
        if g.value(loss).numel() != 1 {
            return Err(CrtError::InvalidArgument {
                op: "finite_difference_check",
                reason: format!("loss must be scalar, got {:?}", g.value(loss).shape()),
            });
        }
        Ok(g.value(loss).data()[0])
    };

    // Analytic pass.
    let mut g = Graph::new();
    let leaves = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, checks: 0, worst: None };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = analytic[i][j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            report.checks += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, j, fd, an));
            }
        }
    }
    Ok(report)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(shape, (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// One entry per op audit: (op name, max relative gradient error).
pub fn audit_ops(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut out = Vec::new();

    // Reduce through a random fixed weighting so every output element gets a
    // distinct gradient signal; plain mean would hide permutation bugs.
    let w23 = rand_tensor(&mut rng, vec![2, 3]);
    let weighted = move |g: &mut Graph, x: NodeId, w: &Tensor| -> Result<NodeId> {
        let wc = g.constant(w.clone())?;
        let p = g.mul(x, wc)?;
        g.sum_all(p)
    };

    {
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.add(l[0], l[1])?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("add", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.add(l[0], l[1])?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("add_broadcast", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.sub(l[0], l[1])?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("sub", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.mul(l[0], l[1])?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("mul", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.scale(l[0], -1.7)?;
                let s = g.add_scalar(s, 0.3)?;
                weighted(g, s, &w)
            },
            &[a],
            eps,
        )?;
        out.push(("scale_add_scalar", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 4]);
        let b = rand_tensor(&mut rng, vec![4, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.matmul(l[0], l[1])?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("matmul", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 5]);
        let wt = rand_tensor(&mut rng, vec![4, 3, 3]);
        let bias = rand_tensor(&mut rng, vec![4]);
        let w = rand_tensor(&mut rng, vec![2, 4, 5]);
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.conv1d(l[0], l[1], l[2])?;
                let wc = g.constant(w.clone())?;
                let ws = g.reshape(wc, vec![2, 20])?;
                let ss = g.reshape(s, vec![2, 20])?;
                let p = g.mul(ss, ws)?;
                g.sum_all(p)
            },
            &[x, wt, bias],
            eps,
        )?;
        out.push(("conv1d", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let gamma = rand_tensor(&mut rng, vec![4]);
        let beta = rand_tensor(&mut rng, vec![4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.layer_norm(l[0], l[1], l[2], 1e-5)?;
                weighted(g, s, &w)
            },
            &[x, gamma, beta],
            eps,
        )?;
        out.push(("layer_norm", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.softmax(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("softmax", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.log_softmax(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("log_softmax", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.gelu(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("gelu", r.max_rel_err));
    }
    {
        // Keep values away from the kink at 0 where the derivative jumps.
        let mut x = rand_tensor(&mut rng, vec![2, 3]);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.relu(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("relu", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3]);
        let r = finite_difference_check(
            &|g, l| g.mean_all(l[0]),
            &[x.clone()],
            eps,
        )?;
        out.push(("mean", r.max_rel_err));
        let r = finite_difference_check(&|g, l| g.sum_all(l[0]), &[x], eps)?;
        out.push(("sum", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 4]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.mean_last(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("mean_last", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![1, 3]);
        let b = rand_tensor(&mut rng, vec![1, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.concat(&[l[0], l[1]], 0)?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("concat_rows", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 1]);
        let b = rand_tensor(&mut rng, vec![2, 2]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.concat(&[l[0], l[1]], 1)?;
                weighted(g, s, &w)
            },
            &[a, b],
            eps,
        )?;
        out.push(("concat_cols", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![4, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.slice(l[0], 0, 1, 3)?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("slice", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 2]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.transpose(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("transpose", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.exp(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("exp", r.max_rel_err));
    }
    {
        let mut x = rand_tensor(&mut rng, vec![2, 3]);
        for v in x.data_mut() {
            *v = v.abs() + 0.5;
        }
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.log(l[0])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("log", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.power(l[0], 3.0)?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("power", r.max_rel_err));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 4]);
        let b = rand_tensor(&mut rng, vec![2, 4]);
        let wv = rand_tensor(&mut rng, vec![2]);
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.cosine_similarity(l[0], l[1])?;
                let wc = g.constant(wv.clone())?;
                let p = g.mul(s, wc)?;
                g.sum_all(p)
            },
            &[a, b],
            eps,
        )?;
        out.push(("cosine_similarity", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 3]);
        let w = rand_tensor(&mut rng, vec![4, 3]);
        let r = finite_difference_check(
            &move |g, l| {
                // duplicate index exercises grad accumulation on one row
                let s = g.gather_rows(l[0], &[2, 0, 2, 1])?;
                let wc = g.constant(w.clone())?;
                let p = g.mul(s, wc)?;
                g.sum_all(p)
            },
            &[x],
            eps,
        )?;
        out.push(("gather_rows", r.max_rel_err));
    }
    {
        let x = rand_tensor(&mut rng, vec![6]);
        let w = w23.clone();
        let r = finite_difference_check(
            &move |g, l| {
                let s = g.reshape(l[0], vec![2, 3])?;
                weighted(g, s, &w)
            },
            &[x],
            eps,
        )?;
        out.push(("reshape", r.max_rel_err));
    }
    Ok(out)
}
