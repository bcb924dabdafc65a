use drf_autodiff::{checkpoint, conv1d_output_len, AdamConfig, AdamState, AutodiffError, Graph, ParamSet, Tensor};
use proptest::prelude::*;

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn relu_gate_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![-1.0, 2.0]));
    let r = g.relu(x);
    let s = g.sum(r);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.square(x);
    assert!(matches!(g.backward(y), Err(AutodiffError::NonScalarLoss(s)) if s == vec![2]));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    let c = g.constant(Tensor::zeros(vec![4]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn shared_subexpressions_accumulate() {
    // y = (x*x) + (x*x) reusing one node, vs the unrolled tree.
    let x0 = Tensor::vector(vec![1.5, -0.5, 2.0]);
    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, sq).unwrap();
    let y = g.mul(y, x).unwrap();
    let s = g.sum(y);
    let shared = g.backward(s).unwrap().get(x).unwrap().clone();

    let mut t = Graph::new();
    let x = t.param(x0.clone());
    let a = t.mul(x, x).unwrap();
    let b = t.mul(x, x).unwrap();
    let y = t.add(a, b).unwrap();
    let y = t.mul(y, x).unwrap();
    let s = t.sum(y);
    let tree = t.backward(s).unwrap().get(x).unwrap().clone();
    assert_eq!(shared, tree);
    // d/dx 2x^3 = 6x^2
    for (g, x) in shared.data().iter().zip(x0.data()) {
        assert!((g - 6.0 * x * x).abs() < 1e-12);
    }
}

#[test]
fn dropout_eval_is_identity() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = g.dropout(x, 0.5);
    assert_eq!(x, y);
    let mut t = Graph::training(1);
    let x = t.param(Tensor::full(vec![1000], 1.0));
    let y = t.dropout(x, 0.5);
    let zeros = t.value(y).data().iter().filter(|v| **v == 0.0).count();
    assert!((350..650).contains(&zeros));
    assert!(t.value(y).data().iter().all(|v| *v == 0.0 || *v == 2.0));
}

#[test]
fn conv1d_identity_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let w = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv1d(x, w, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn conv1d_output_lengths() {
    assert_eq!(conv1d_output_len(100, 6, 4, 1), Some(24));
    assert_eq!(conv1d_output_len(100, 6, 4, 5), Some(19));
    assert_eq!(conv1d_output_len(24, 6, 4, 1), Some(5));
    assert_eq!(conv1d_output_len(5, 6, 4, 1), None);

    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![6, 100]));
    let w = g.constant(Tensor::zeros(vec![2, 6, 6]));
    let y = g.conv1d(x, w, 4, 5).unwrap();
    assert_eq!(g.shape(y), &[2, 19]);
}

#[test]
fn adam_converges_on_quadratic_bowl() {
    let mut params = ParamSet::new();
    let w0 = Tensor::vector(vec![0.6, -0.8]);
    assert!((w0.norm() - 1.0).abs() < 1e-12);
    let id = params.add("w", w0);
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(0.05));
    for _ in 0..200 {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let sq = g.square(bound.var(id));
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let grads = bound.gradients(&params, &grads);
        adam.step(&mut params, &grads);
    }
    let norm = params.get(id).norm();
    assert!(norm < 1e-2, "final |w| = {norm}");
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(checkpoint::from_bytes(&[1, 2, 3]).is_err());
    let mut bytes = 4u64.to_le_bytes().to_vec();
    bytes.extend_from_slice(b"{}  ");
    assert!(checkpoint::from_bytes(&bytes).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let mut p = ParamSet::new();
    p.add("enc.w", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -7.25]).unwrap());
    p.add("gp.c", Tensor::scalar(0.125));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    checkpoint::save(&p, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, p);

    let mut target = ParamSet::new();
    target.add("gp.c", Tensor::scalar(0.0));
    checkpoint::restore_into(&mut target, &back).unwrap();
    assert_eq!(target.tensors()[0].item(), 0.125);
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
        let split = split.min(values.len());
        let mut p = ParamSet::new();
        p.add("a", Tensor::vector(values[..split].to_vec()));
        p.add("b", Tensor::vector(values[split..].to_vec()));
        let back = checkpoint::from_bytes(&checkpoint::to_bytes(&p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }
}
