mod ops;

use ops::{catalogue, dropout_error, TOL};

#[test]
fn every_op_matches_central_differences() {
    let failures: Vec<String> = catalogue()
        .iter()
        .filter_map(|c| {
            let e = c.relative_error();
            (!(e < TOL)).then(|| format!("{}: {e:e}", c.name))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn catalogue_covers_every_op_family() {
    let names: Vec<String> = catalogue().into_iter().map(|c| c.name).collect();
    for op in [
        "add", "sub", "mul", "div", "relu", "tanh", "sigmoid", "exp", "log", "sqrt", "square", "neg", "scale", "add_scalar", "matmul", "conv1d",
        "sum", "mean", "sum_axis", "mean_axis", "softmax", "layer_norm", "slice", "concat", "transpose", "reshape", "cholesky", "solve_lower",
        "diag", "lower_exp_diag", "pairwise_sqdist", "matern52",
    ] {
        assert!(names.iter().any(|n| n == op || n.starts_with(&format!("{op} "))), "{op} missing");
    }
}

#[test]
fn dropout_in_training_mode_matches_its_mask() {
    assert!(dropout_error() < 1e-6);
}
