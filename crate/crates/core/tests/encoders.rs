mod common;

use common::enc::{encoder_grad_errors, random_input};
use drf::encoders::{Encoder, EncoderSpec, FEATURES};

#[test]
fn every_encoder_passes_finite_difference_check() {
    let errors = encoder_grad_errors();
    assert_eq!(errors.len(), 5);
    for (name, e) in errors {
        assert!(e < 1e-4, "{name}: relative error {e:e}");
    }
}

#[test]
fn cnn_on_default_window_has_table_shapes() {
    let enc = Encoder::new(EncoderSpec::cnn(), 100, 0).unwrap();
    let fc = enc.params().find("fc.w").map(|id| enc.params().get(id).shape().to_vec());
    // 100 -> 24 -> 5 positions, 32 channels each.
    assert_eq!(fc, Some(vec![32 * 5, 250]));
    let z = enc.encode(&random_input(3, 100, 0).into_data()).unwrap();
    assert_eq!(z.len(), 3 * 250);
}

#[test]
fn lstm_latent_is_128_for_any_window() {
    for n in [1, 7, 100] {
        let enc = Encoder::new(EncoderSpec::lstm(), n, 0).unwrap();
        assert_eq!(enc.encode(&random_input(1, n, 1).into_data()).unwrap().len(), 128);
    }
}

#[test]
fn transformer_with_zero_weights_gives_zero_latent() {
    let spec = EncoderSpec::Transformer {
        d_model: 8,
        heads: 1,
        ff_dim: 16,
        dropout: 0.1,
        positional_encoding: false,
    };
    let mut enc = Encoder::new(spec, 10, 0).unwrap();
    for t in enc.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let z = enc.encode(&random_input(2, 10, 4).into_data()).unwrap();
    assert!(z.iter().all(|v| *v == 0.0), "{z:?}");
}

#[test]
fn sequence_encoders_are_order_sensitive() {
    for spec in [EncoderSpec::lstm(), EncoderSpec::attention(), EncoderSpec::transformer()] {
        let n = 30;
        let enc = Encoder::new(spec.clone(), n, 21).unwrap();
        let x = random_input(1, n, 9).into_data();
        let mut swapped = x.clone();
        for c in 0..FEATURES {
            swapped.swap(2 * FEATURES + c, 17 * FEATURES + c);
        }
        let a = enc.encode(&x).unwrap();
        let b = enc.encode(&swapped).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
        assert!(diff > 1e-9, "{} ignored a row swap", spec.name());
    }
}

#[test]
fn encoding_is_deterministic_and_batch_independent() {
    for spec in EncoderSpec::all_defaults() {
        let n = spec.min_window_length().max(50);
        let enc = Encoder::new(spec.clone(), n, 2).unwrap();
        let x = random_input(3, n, 6).into_data();
        let all = enc.encode(&x).unwrap();
        let first = enc.encode(&x[..n * FEATURES]).unwrap();
        assert_eq!(&all[..first.len()], &first[..], "{}", spec.name());
        assert_eq!(all, enc.encode(&x).unwrap());
    }
}

#[test]
fn params_round_trip_through_checkpoint_bytes() {
    let enc = Encoder::new(EncoderSpec::dilated_cnn(), 100, 8).unwrap();
    let bytes = drf_autodiff::checkpoint::to_bytes(enc.params()).unwrap();
    let back = Encoder::from_params(EncoderSpec::dilated_cnn(), 100, drf_autodiff::checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let x = random_input(2, 100, 1).into_data();
    assert_eq!(enc.encode(&x).unwrap(), back.encode(&x).unwrap());
}
