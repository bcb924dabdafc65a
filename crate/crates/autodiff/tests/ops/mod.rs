//! Finite-difference cases covering every differentiable graph op. Shared
//! with the workspace acceptance suite.
#![allow(dead_code)]

use drf_autodiff::gradcheck::check;
use drf_autodiff::params::normal;
use drf_autodiff::rng::stream;
use drf_autodiff::{Graph, Result, Tensor, Var};

pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

impl Case {
    pub fn relative_error(&self) -> f64 {
        check(&self.inputs, H, |g, v| (self.build)(g, v)).unwrap().max_relative_error()
    }
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name: name.into(),
        inputs,
        build: Box::new(build),
    }
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    normal(shape, 1.0, &mut stream(seed, 0))
}

fn spd(n: usize, seed: u64) -> Tensor {
    let x = rand_tensor(&[n, n], seed);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| x.data()[i * n + k] * x.data()[j * n + k]).sum::<f64>();
        }
        a[i * n + i] += n as f64;
    }
    Tensor::new(vec![n, n], a).unwrap()
}

/// Reduces a tensor to a scalar with a fixed random weighting so every
/// output element contributes a distinct cotangent.
pub fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_tensor(g.shape(v).to_vec().as_slice(), seed ^ 0xabcd));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn elementwise(out: &mut Vec<Case>) {
    let a = rand_tensor(&[2, 3, 4], 1);
    let b = rand_tensor(&[3, 1], 2);
    let pos = rand_tensor(&[4], 3).map(|x| x.abs() + 0.5);
    out.push(case("add", vec![a.clone(), b.clone()], |g, v| {
        let y = g.add(v[0], v[1])?;
        weighted_sum(g, y, 10)
    }));
    out.push(case("sub", vec![a.clone(), b.clone()], |g, v| {
        let y = g.sub(v[0], v[1])?;
        weighted_sum(g, y, 11)
    }));
    out.push(case("mul", vec![a.clone(), b.clone()], |g, v| {
        let y = g.mul(v[0], v[1])?;
        weighted_sum(g, y, 12)
    }));
    out.push(case("div", vec![a.clone(), pos], |g, v| {
        let y = g.div(v[0], v[1])?;
        weighted_sum(g, y, 13)
    }));
    out.push(case("add tiled", vec![a.clone(), rand_tensor(&[3, 4], 4)], |g, v| {
        let y = g.add(v[0], v[1])?;
        weighted_sum(g, y, 15)
    }));
    out.push(case("scalar broadcast", vec![a, Tensor::scalar(0.7)], |g, v| {
        let y = g.mul(v[1], v[0])?;
        weighted_sum(g, y, 14)
    }));

    let x = rand_tensor(&[3, 5], 4);
    let p = x.map(|v| v.abs() + 0.3);
    type U = fn(&mut Graph, Var) -> Var;
    let unary: [(&str, U, &Tensor); 9] = [
        ("relu", |g, v| g.relu(v), &x),
        ("tanh", |g, v| g.tanh(v), &x),
        ("sigmoid", |g, v| g.sigmoid(v), &x),
        ("exp", |g, v| g.exp(v), &x),
        ("log", |g, v| g.log(v), &p),
        ("sqrt", |g, v| g.sqrt(v), &p),
        ("square", |g, v| g.square(v), &x),
        ("neg", |g, v| g.neg(v), &x),
        ("scale", |g, v| g.scale(v, -2.5), &x),
    ];
    for (name, op, input) in unary {
        out.push(case(name, vec![input.clone()], move |g, v| {
            let y = op(g, v[0]);
            weighted_sum(g, y, 20)
        }));
    }
    out.push(case("add_scalar", vec![x], |g, v| {
        let y = g.add_scalar(v[0], 3.0);
        let y = g.square(y);
        weighted_sum(g, y, 64)
    }));
}

fn products(out: &mut Vec<Case>) {
    for (name, a, b, seed) in [
        ("matmul 2d", vec![3, 4], vec![4, 2], 30),
        ("matmul batched", vec![2, 3, 4], vec![2, 4, 5], 31),
        ("matmul shared", vec![2, 3, 4], vec![4, 5], 32),
    ] {
        out.push(case(name, vec![rand_tensor(&a, seed), rand_tensor(&b, seed + 100)], move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }));
    }
    for (stride, dilation) in [(1, 1), (4, 1), (2, 3)] {
        out.push(case(
            format!("conv1d stride {stride} dilation {dilation}"),
            vec![rand_tensor(&[2, 3, 20], 11), rand_tensor(&[4, 3, 3], 12)],
            move |g, v| {
                let y = g.conv1d(v[0], v[1], stride, dilation)?;
                weighted_sum(g, y, 40)
            },
        ));
    }
    out.push(case("conv1d unbatched", vec![rand_tensor(&[2, 9], 13), rand_tensor(&[3, 2, 2], 14)], |g, v| {
        let y = g.conv1d(v[0], v[1], 2, 1)?;
        weighted_sum(g, y, 41)
    }));
}

fn reductions(out: &mut Vec<Case>) {
    let x = rand_tensor(&[3, 4, 5], 15);
    out.push(case("sum", vec![x.clone()], |g, v| {
        let y = g.square(v[0]);
        Ok(g.sum(y))
    }));
    out.push(case("mean", vec![x.clone()], |g, v| {
        let y = g.square(v[0]);
        Ok(g.mean(y))
    }));
    for axis in 0..3 {
        out.push(case(format!("sum_axis {axis}"), vec![x.clone()], move |g, v| {
            let y = g.sum_axis(v[0], axis)?;
            weighted_sum(g, y, 50)
        }));
        out.push(case(format!("mean_axis {axis}"), vec![x.clone()], move |g, v| {
            let y = g.mean_axis(v[0], axis)?;
            weighted_sum(g, y, 51)
        }));
    }
    out.push(case("softmax", vec![x.clone()], |g, v| {
        let y = g.softmax(v[0])?;
        weighted_sum(g, y, 52)
    }));
    out.push(case("layer_norm", vec![x.clone()], |g, v| {
        let y = g.layer_norm(v[0], 1e-5)?;
        weighted_sum(g, y, 53)
    }));
    out.push(case("slice", vec![x.clone()], |g, v| {
        let y = g.slice(v[0], 2, 1, 3)?;
        weighted_sum(g, y, 60)
    }));
    out.push(case("concat", vec![x.clone(), rand_tensor(&[3, 2, 5], 17)], |g, v| {
        let y = g.concat(&[v[0], v[1], v[0]], 1)?;
        weighted_sum(g, y, 61)
    }));
    out.push(case("transpose", vec![x.clone()], |g, v| {
        let y = g.transpose(v[0])?;
        weighted_sum(g, y, 62)
    }));
    out.push(case("reshape", vec![x], |g, v| {
        let y = g.reshape(v[0], &[12, 5])?;
        weighted_sum(g, y, 63)
    }));
}

fn linalg(out: &mut Vec<Case>) {
    let n = 4;
    // Cholesky composed with a symmetric parameterisation A = X X^T + nI.
    out.push(case("cholesky", vec![rand_tensor(&[n, n], 19)], move |g, v| {
        let xt = g.transpose(v[0])?;
        let a = g.matmul(v[0], xt)?;
        let eye = g.constant(Tensor::eye(n).map(|e| e * n as f64));
        let a = g.add(a, eye)?;
        let l = g.cholesky(a)?;
        weighted_sum(g, l, 70)
    }));
    let lraw = rand_tensor(&[n, n], 20);
    out.push(case("lower_exp_diag", vec![lraw.clone()], |g, v| {
        let l = g.lower_exp_diag(v[0])?;
        weighted_sum(g, l, 71)
    }));
    out.push(case("solve_lower", vec![lraw, rand_tensor(&[n, 3], 21)], |g, v| {
        let l = g.lower_exp_diag(v[0])?;
        let y = g.solve_lower(l, v[1])?;
        weighted_sum(g, y, 72)
    }));
    out.push(case("diag", vec![spd(n, 22)], |g, v| {
        let d = g.diag(v[0])?;
        weighted_sum(g, d, 73)
    }));
    out.push(case("logdet via cholesky", vec![rand_tensor(&[n, n], 23)], move |g, v| {
        let xt = g.transpose(v[0])?;
        let a = g.matmul(v[0], xt)?;
        let eye = g.constant(Tensor::eye(n));
        let a = g.add(a, eye)?;
        let l = g.cholesky(a)?;
        let d = g.diag(l)?;
        let ld = g.log(d);
        Ok(g.sum(ld))
    }));
    let a = rand_tensor(&[5, 3], 24);
    let b = rand_tensor(&[4, 3], 25);
    out.push(case("pairwise_sqdist", vec![a.clone(), b.clone()], |g, v| {
        let d = g.pairwise_sqdist(v[0], v[1])?;
        weighted_sum(g, d, 80)
    }));
    out.push(case("matern52", vec![a.clone(), b], |g, v| {
        let d = g.pairwise_sqdist(v[0], v[1])?;
        let k = g.matern52(d);
        weighted_sum(g, k, 81)
    }));
    // Self-distances include r = 0 on the diagonal; the derivative there is finite.
    out.push(case("matern52 self", vec![a], |g, v| {
        let d = g.pairwise_sqdist(v[0], v[0])?;
        let k = g.matern52(d);
        weighted_sum(g, k, 82)
    }));
}

fn composites(out: &mut Vec<Case>) {
    for seed in 0..5u64 {
        out.push(case(format!("mlp seed {seed}"), vec![rand_tensor(&[3, 4], 100 + seed), rand_tensor(&[4, 2], 200 + seed)], move |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.tanh(h);
            let s = g.softmax(h)?;
            let l = g.add_scalar(s, 1.0);
            let l = g.log(l);
            weighted_sum(g, l, seed)
        }));
    }
}

pub fn catalogue() -> Vec<Case> {
    let mut out = Vec::new();
    elementwise(&mut out);
    products(&mut out);
    reductions(&mut out);
    linalg(&mut out);
    composites(&mut out);
    out
}

/// Dropout with a fixed graph seed has a fixed mask, so the op is linear in
/// its input and central differences are exact up to rounding. Returns the
/// largest absolute gradient error.
pub fn dropout_error() -> f64 {
    let x = rand_tensor(&[4, 6], 18);
    let f = |t: &Tensor| {
        let mut g = Graph::training(5);
        let v = g.param(t.clone());
        let y = g.dropout(v, 0.3);
        let sq = g.square(y);
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        (g.value(s).item(), grads.get(v).unwrap().clone())
    };
    let (_, grad) = f(&x);
    let mut worst: f64 = 0.0;
    for k in 0..x.numel() {
        let mut up = x.clone();
        up.data_mut()[k] += H;
        let mut down = x.clone();
        down.data_mut()[k] -= H;
        let num = (f(&up).0 - f(&down).0) / (2.0 * H);
        worst = worst.max((num - grad.data()[k]).abs() / (1.0 + num.abs()));
    }
    worst
}
