//! Reverse-mode automatic differentiation on a per-batch tape, plus the Adam
//! optimizer and a finite-difference gradient oracle.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{audit_ops, finite_difference_check, GradCheckReport};
pub use graph::{Graph, NodeId};

/// Standard normal draw via Box-Muller; u1 is kept in (0, 1] so the log
/// stays finite.
pub fn randn(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn matmul_identity_roundtrip() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), true).unwrap();
        let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let out = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(out).data(), g.value(a).data());
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![0.0, 0.0]), false).unwrap();
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 0.0]), false).unwrap();
        let b = g.leaf(Tensor::from_vec(vec![0.0, 1.0]), false).unwrap();
        let c = g.cosine_similarity(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[0.0]);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![0.0, 0.0]), false).unwrap();
        let b = g.leaf(Tensor::from_vec(vec![0.0, 1.0]), false).unwrap();
        assert!(g.cosine_similarity(a, b).is_err());
    }

    #[test]
    fn backward_is_linear_in_upstream_seed() {
        // grad(2*f) == 2*grad(f) elementwise
        let x = Tensor::from_vec(vec![0.3, -0.8, 1.4]);
        let run = |scale: f64| {
            let mut g = Graph::new();
            let l = g.leaf(x.clone(), true).unwrap();
            let y = g.power(l, 2.0).unwrap();
            let s = g.sum_all(y).unwrap();
            let s = g.scale(s, scale).unwrap();
            g.backward(s).unwrap();
            g.grad(l).unwrap().to_vec()
        };
        let g1 = run(1.0);
        let g2 = run(2.0);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]), false).unwrap();
        let b = g.leaf(Tensor::zeros(vec![3, 3]), false).unwrap();
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn nan_input_fails_fast_at_op() {
        let mut g = Graph::new();
        assert!(g.leaf(Tensor::from_vec(vec![f64::NAN]), false).is_err());
        let x = g.leaf(Tensor::from_vec(vec![800.0]), false).unwrap();
        // exp overflows to +inf, which must be rejected at the op
        assert!(g.exp(x).is_err());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 2]), true).unwrap();
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![2.0]), true).unwrap();
        let c = g.constant(Tensor::from_vec(vec![3.0])).unwrap();
        let p = g.mul(a, c).unwrap();
        let s = g.sum_all(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn unreachable_nodes_keep_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0]), true).unwrap();
        let b = g.leaf(Tensor::from_vec(vec![1.0]), true).unwrap();
        let _orphan = g.scale(b, 2.0).unwrap();
        let s = g.sum_all(a).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn gather_accumulates_duplicate_rows() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), true).unwrap();
        let got = g.gather_rows(x, &[0, 0, 1]).unwrap();
        let s = g.sum_all(got).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
    }
}
