//! Small encoder instances for finite-difference checks.

use drf::encoders::{Encoder, EncoderSpec, FEATURES};
use drf_autodiff::{gradcheck, rng, Binding, Graph, Tensor};
use rand::Rng;

pub fn small_specs() -> Vec<(EncoderSpec, usize)> {
    vec![
        (
            EncoderSpec::Cnn {
                kernel: 3,
                stride: 2,
                channels: 3,
                latent_dim: 4,
            },
            12,
        ),
        (
            EncoderSpec::DilatedCnn {
                kernel: 3,
                dilation: 2,
                stride: 2,
                channels: 3,
                latent_dim: 4,
            },
            14,
        ),
        (
            EncoderSpec::Lstm {
                hidden: 4,
                latent_dim: 3,
            },
            5,
        ),
        (
            EncoderSpec::Attention {
                kernel: 2,
                stride: 2,
                dim: 3,
                latent_dim: 4,
            },
            8,
        ),
        (
            EncoderSpec::Transformer {
                d_model: 4,
                heads: 1,
                ff_dim: 8,
                dropout: 0.1,
                positional_encoding: true,
            },
            5,
        ),
    ]
}

pub fn random_input(batch: usize, n: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 1);
    let data = (0..batch * n * FEATURES).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new([batch, n, FEATURES], data).unwrap()
}

/// Worst relative finite-difference error of each encoder kind, over its
/// parameters and input.
pub fn encoder_grad_errors() -> Vec<(&'static str, f64)> {
    small_specs()
        .into_iter()
        .map(|(spec, n)| {
            let enc = Encoder::new(spec.clone(), n, 11).unwrap();
            let latent = spec.latent_dim();
            let mut r = rng::stream(5, 2);
            let probe: Vec<f64> = (0..2 * latent).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut inputs: Vec<Tensor> = enc.params().tensors().to_vec();
            inputs.push(random_input(2, n, 3));
            let np = enc.params().len();
            let report = gradcheck::check(&inputs, 1e-6, |g: &mut Graph, vars| {
                let bind = Binding::from_vars(vars[..np].to_vec());
                let z = enc.forward(g, &bind, vars[np])?;
                let w = g.constant(Tensor::new([2, latent], probe.clone())?);
                let zw = g.mul(z, w)?;
                let t = g.tanh(zw);
                Ok::<_, drf::DrfError>(g.sum(t))
            })
            .unwrap();
            (spec.name(), report.max_relative_error())
        })
        .collect()
}
