use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn identity_1x1(channels: usize) -> (ConvStackSpec, ParamSet) {
    let spec = ConvStackSpec {
        layers: vec![ConvLayerSpec {
            in_channels: channels,
            out_channels: channels,
            kernel_size: 1,
            stride: 1,
            padding: 0,
            pool: false,
            relu: false,
        }],
    };
    let mut w = Tensor::zeros(&[channels, channels, 1, 1]);
    for c in 0..channels {
        w.data_mut()[c * channels + c] = 1.0;
    }
    let mut ps = ParamSet::new();
    ps.insert("conv0.weight", "u", w);
    ps.insert("conv0.bias", "u", Tensor::zeros(&[channels]));
    (spec, ps)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    t
}

#[test]
fn identity_conv_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (spec, ps) = identity_1x1(3);
    let x = random_tensor(&mut rng, &[3, 5, 4]);
    assert_eq!(forward_conv_stack(&spec, &ps, &x).unwrap(), x);
}

#[test]
fn zero_weights_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = ConvStackSpec::single(2);
    let mut ps = spec.init_params(&mut rng, "u");
    ps.iter_mut().for_each(|p| p.value.fill(0.0));
    let x = random_tensor(&mut rng, &[2, 6, 6]);
    let y = forward_conv_stack(&spec, &ps, &x).unwrap();
    assert_eq!(y.shape(), &[2, 3, 3]);
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv_shape_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = ConvStackSpec::single(2);
    let ps = spec.init_params(&mut rng, "u");
    let x = random_tensor(&mut rng, &[3, 6, 6]);
    assert!(matches!(forward_conv_stack(&spec, &ps, &x), Err(NdError::Shape(_))));
}

#[test]
fn conv_matches_nested_loops_with_stride_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 0, 3), (2, 1, 2), (1, 0, 1), (3, 2, 3)] {
        let (c, h, w, o) = (2, 7, 6, 3);
        let x = random_tensor(&mut rng, &[c, h, w]);
        let wt = random_tensor(&mut rng, &[o, c, k, k]);
        let b = random_tensor(&mut rng, &[o]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.input(x.clone()), tape.input(wt.clone()), tape.input(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        let out = tape.value(y);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        assert_eq!(out.shape(), &[o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt.data()[((oc * c + ic) * k + ky) * k + kx] as f64
                                    * x.data()[(ic * h + iy as usize) * w + ix as usize] as f64;
                            }
                        }
                    }
                    let got = out.data()[(oc * oh + oy) * ow + ox] as f64;
                    assert!((got - acc).abs() < 1e-5, "stride {stride} pad {pad}: {got} vs {acc}");
                }
            }
        }
    }
}

#[test]
fn dense_head_zero_and_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = DenseSpec::new(vec![4, 3]).unwrap();
    let mut ps = spec.init_params(&mut rng, "head");
    let x = [0.5f32, -1.0, 2.0, 0.25];
    let logits = forward_dense_head(&spec, &ps, &x).unwrap();
    let w = ps.get("dense0.weight").unwrap().value.clone();
    for o in 0..3 {
        let expected: f64 = (0..4).map(|i| w.data()[o * 4 + i] as f64 * x[i] as f64).sum();
        assert!((logits[o] as f64 - expected).abs() < 1e-6);
    }
    ps.iter_mut().for_each(|p| p.value.fill(0.0));
    assert_eq!(forward_dense_head(&spec, &ps, &x).unwrap(), vec![0.0; 3]);
    assert!(forward_dense_head(&spec, &ps, &x[..3]).is_err());
}

#[test]
fn dense_head_is_deterministic_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = DenseSpec::new(vec![5, 7, 2]).unwrap();
    let ps = spec.init_params(&mut rng, "head");
    let x: Vec<f32> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = forward_dense_head(&spec, &ps, &x).unwrap();
    let b = forward_dense_head(&spec, &ps, &x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn backward_of_parameter_sum_is_one() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::new(vec![2, 2], vec![1.0, -3.0, 0.5, 2.0]).unwrap());
    let q = tape.param(Tensor::from_vec(vec![4.0, 5.0]));
    let sp = tape.sum(p);
    let sq = tape.sum(q);
    let loss = tape.add(sp, sq).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(p).unwrap().data().iter().all(|g| *g == 1.0));
    assert!(tape.grad(q).unwrap().data().iter().all(|g| *g == 1.0));
}

#[test]
fn backward_without_forward_is_a_state_error() {
    let mut tape = Tape::new();
    let mut other = Tape::new();
    let v = other.param(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(v), Err(NdError::State(_))));
    let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(w), Err(NdError::State(_))));
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let mut tape = Tape::new();
    let used = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
    let unused = tape.param(Tensor::from_vec(vec![3.0]));
    let loss = tape.sum(used);
    tape.backward(loss).unwrap();
    assert!(tape.grad(unused).is_none());
    let mut ps = ParamSet::new();
    ps.insert("a", "g", Tensor::from_vec(vec![1.0, 2.0]));
    ps.insert("b", "g", Tensor::from_vec(vec![3.0]));
    ps.accumulate_grads(&tape, &[used, unused], 1.0);
    assert_eq!(ps.get("b").unwrap().grad.data(), &[0.0]);
    assert_eq!(ps.get("a").unwrap().grad.data(), &[1.0, 1.0]);
}

#[test]
fn sgd_scales() {
    let mut ps = ParamSet::new();
    ps.insert("a", "half", Tensor::from_vec(vec![1.0, 1.0]));
    ps.insert("b", "full", Tensor::from_vec(vec![1.0, 1.0]));
    ps.insert("c", "frozen", Tensor::from_vec(vec![1.0]));
    for p in ps.iter_mut() {
        p.grad.fill(0.5);
    }
    let scales: HashMap<String, f32> =
        [("half".to_string(), 0.5), ("frozen".to_string(), 0.0)].into_iter().collect();
    sgd_step(&mut ps, 0.1, &scales).unwrap();
    let da = 1.0 - ps.get("a").unwrap().value.data()[0];
    let db = 1.0 - ps.get("b").unwrap().value.data()[0];
    assert!((db - 0.05).abs() < 1e-7);
    assert!((db - 2.0 * da).abs() < 1e-7);
    assert_eq!(ps.get("c").unwrap().value.data(), &[1.0]);

    assert!(sgd_step(&mut ps, -0.1, &HashMap::new()).is_err());
    let bad: HashMap<String, f32> = [("full".to_string(), 1.5)].into_iter().collect();
    assert!(sgd_step(&mut ps, 0.1, &bad).is_err());
}

#[test]
fn zero_grad_and_checksum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ConvStackSpec::single(2);
    let mut ps = spec.init_params(&mut rng, "u");
    let before = ps.checksum();
    ps.iter_mut().for_each(|p| p.grad.fill(3.0));
    ps.zero_grad();
    assert!(ps.iter().all(|p| p.grad.data().iter().all(|g| *g == 0.0)));
    assert_eq!(ps.checksum(), before);
    ps.get_mut("conv0.bias").unwrap().value.data_mut()[0] = 1e-3;
    assert_ne!(ps.checksum(), before);
}

#[test]
fn stack_validation() {
    let mut spec = ConvStackSpec::single(4);
    spec.layers.push(ConvLayerSpec { in_channels: 3, ..spec.layers[0] });
    assert!(spec.validate().is_err());
    assert!(ConvStackSpec { layers: vec![] }.validate().is_err());
    let ok = ConvStackSpec::single(4);
    assert_eq!(ok.output_shape([4, 28, 28]), Some([4, 14, 14]));
    assert_eq!(ok.output_shape([4, 1, 1]), None);
}
