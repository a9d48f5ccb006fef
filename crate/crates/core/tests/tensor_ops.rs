use microforge_core::tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn t32(shape: &[usize], v: &[f64]) -> Tensor<f32> {
    Tensor::from_f64(shape, v).unwrap()
}

fn conv_oracle(x: &[f64], k: &[f64], h: usize, w: usize, s: usize, pad: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let (y, xx) = (i as isize + a as isize - pad as isize, j as isize + b as isize - pad as isize);
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        acc += x[y as usize * w + xx as usize] * k[a * s + b];
                    }
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

#[test]
fn dense_identity_plus_shift() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(t32(&[1, 2], &[1.0, 2.0]));
    let w = t.leaf(t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = t.leaf(t32(&[2], &[3.0, 4.0]));
    let y = t.dense(x, w, b).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![4.0, 6.0]);
    let z = t.leaf(t32(&[2], &[0.0, 0.0]));
    let y = t.dense(x, w, z).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![1.0, 2.0]);
}

#[test]
fn dense_matches_triple_loop() {
    let a = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
    let w = [1.5, -0.2, 0.0, 0.9, -1.1, 0.4];
    let bias = [0.25, -0.5];
    let mut t = Tape::<f32>::new();
    let (x, wv, bv) = (t.leaf(t32(&[2, 3], &a)), t.leaf(t32(&[3, 2], &w)), t.leaf(t32(&[2], &bias)));
    let y = t.dense(x, wv, bv).unwrap();
    let got = t.value(y).to_f64_vec();
    for i in 0..2 {
        for j in 0..2 {
            let mut e = bias[j];
            for k in 0..3 {
                e += a[i * 3 + k] * w[k * 2 + j];
            }
            assert!((got[i * 2 + j] - e).abs() < 1e-6);
        }
    }
}

#[test]
fn conv_delta_kernel_is_identity() {
    let data: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut kern = vec![0.0; 2 * 2 * 9];
    kern[4] = 1.0; // out 0, in 0, centre
    kern[3 * 9 + 4] = 1.0; // out 1, in 1, centre
    let mut t = Tape::<f32>::new();
    let x = t.leaf(t32(&[1, 2, 5, 6], &data));
    let k = t.leaf(t32(&[2, 2, 3, 3], &kern));
    let y = t.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(t.value(y), t.value(x));
}

#[test]
fn conv_averaging_matches_sliding_window() {
    let ramp: Vec<f64> = (0..9).map(|v| v as f64).collect();
    let k = vec![1.0 / 9.0; 9];
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[1, 1, 3, 3], &ramp).unwrap());
    let kv = t.leaf(Tensor::from_f64(&[1, 1, 3, 3], &k).unwrap());
    let y = t.conv2d(x, kv, 1, 1).unwrap();
    let expected = conv_oracle(&ramp, &k, 3, 3, 3, 1);
    for (a, b) in t.value(y).to_f64_vec().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((t.value(y).data()[4] - 4.0).abs() < 1e-12);
}

#[test]
fn conv_shape_law() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::zeros(&[1, 1, 64, 64]));
    let k = t.leaf(Tensor::zeros(&[4, 1, 3, 3]));
    let y = t.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(t.shape(y), &[1, 4, 64, 64]);
    let k5 = t.leaf(Tensor::zeros(&[1, 1, 5, 5]));
    let x6 = t.leaf(Tensor::zeros(&[1, 1, 6, 6]));
    assert!(t.conv2d(x6, k5, 2, 0).is_err());
}

#[test]
fn deconv_single_pixel_spreads_kernel() {
    let kern: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let a = 2.5;
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[1, 1, 1, 1], &[a]).unwrap());
    let k = t.leaf(Tensor::from_f64(&[1, 1, 3, 3], &kern).unwrap());
    let y = t.deconv2d(x, k, 2).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 2, 2]);
    // zero insertion gives [[a,0],[0,0]]; correlate with pad 1
    let expected = conv_oracle(&[a, 0.0, 0.0, 0.0], &kern, 2, 2, 3, 1);
    assert_eq!(t.value(y).to_f64_vec(), expected);
    assert_eq!(expected, vec![a * 5.0, a * 4.0, a * 2.0, a * 1.0]);
}

#[test]
fn deconv_delta_stride_one_is_identity() {
    let data: Vec<f64> = (0..16).map(|v| v as f64 - 3.0).collect();
    let mut kern = vec![0.0; 9];
    kern[4] = 1.0;
    let mut t = Tape::<f32>::new();
    let x = t.leaf(t32(&[1, 1, 4, 4], &data));
    let k = t.leaf(t32(&[1, 1, 3, 3], &kern));
    let y = t.deconv2d(x, k, 1).unwrap();
    assert_eq!(t.value(y), t.value(x));
}

#[test]
fn deconv_doubles_eight_to_sixteen() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::zeros(&[2, 3, 8, 8]));
    let k = t.leaf(Tensor::zeros(&[3, 5, 3, 3]));
    let y = t.deconv2d(x, k, 2).unwrap();
    assert_eq!(t.shape(y), &[2, 5, 16, 16]);
    assert!(t.deconv2d(x, k, 3).is_err());
}

#[test]
fn avg_pool_examples() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(t32(&[1, 1, 2, 2], &[0.0, 2.0, 4.0, 6.0]));
    let y = t.avg_pool2(x).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![3.0]);
    let c = t.leaf(Tensor::full(&[1, 2, 4, 6], 1.5));
    let p = t.avg_pool2(c).unwrap();
    assert_eq!(t.value(p), &Tensor::full(&[1, 2, 2, 3], 1.5));
    let odd = t.leaf(Tensor::zeros(&[1, 1, 3, 2]));
    assert!(t.avg_pool2(odd).is_err());
}

#[test]
fn leaky_relu_and_variance() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(t32(&[4], &[-1.0, 0.0, 2.0, 3.5]));
    let y = t.leaky_relu(x, 0.2);
    assert_eq!(t.value(y).to_f64_vec(), vec![-0.2f32 as f64, 0.0, 2.0, 3.5]);
    let v = t.leaf(t32(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let var = t.variance_all(v).unwrap();
    assert_eq!(t.value(var).item(), 1.25);
}

#[test]
fn adam_examples() {
    let mut params = ParamStore::<f32>::new();
    params.insert("w", t32(&[2], &[0.5, -0.5]));
    let mut adam = Adam::new(AdamConfig::default());
    let mut grads = BTreeMap::new();
    grads.insert("w".to_string(), Tensor::<f32>::zeros(&[2]));
    adam.step(&mut params, &grads).unwrap();
    assert_eq!(params.get("w").unwrap().to_f64_vec(), vec![0.5f32 as f64, -0.5]);
    assert_eq!(adam.step_count(), 1);

    let mut p64 = ParamStore::<f64>::new();
    p64.insert("w", Tensor::scalar(0.0));
    let mut adam = Adam::<f64>::new(AdamConfig::default());
    let mut g = BTreeMap::new();
    g.insert("w".to_string(), Tensor::scalar(1.0));
    adam.step(&mut p64, &g).unwrap();
    let delta = p64.get("w").unwrap().item();
    assert!((delta - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
}

proptest! {
    #[test]
    fn deconv_is_conv_of_zero_inserted(
        b in 1usize..3, c in 1usize..3, o in 1usize..3, h in 1usize..5, w in 1usize..5,
        stride in 1usize..3, seed in any::<u32>(),
    ) {
        let n = b * c * h * w;
        let xs: Vec<f64> = (0..n).map(|i| ((i as f64 + seed as f64) * 0.731).sin()).collect();
        let ks: Vec<f64> = (0..c * o * 9).map(|i| ((i as f64 * 1.3 + seed as f64) * 0.17).cos()).collect();
        let mut t = Tape::<f32>::new();
        let x = t.leaf(t32(&[b, c, h, w], &xs));
        let k = t.leaf(t32(&[c, o, 3, 3], &ks));
        let y = t.deconv2d(x, k, stride).unwrap();
        let z = t.zero_insert(x, stride).unwrap();
        let kt = t.swap01(k).unwrap();
        let y2 = t.conv2d(z, kt, 1, 1).unwrap();
        prop_assert_eq!(t.value(y), t.value(y2));
        prop_assert_eq!(t.shape(y), &[b, o, h * stride, w * stride][..]);
    }

    #[test]
    fn pool_undoes_nearest_upsample(vals in prop::collection::vec(-100i32..100, 1..=24), c in 1usize..3) {
        let n = vals.len();
        let data: Vec<f64> = vals.iter().map(|&v| v as f64 * 0.125).collect();
        let mut t = Tape::<f32>::new();
        let x = t.leaf(t32(&[1, 1, 1, n], &data));
        let x = t.broadcast_to(x, &[1, c, 1, n]).unwrap();
        let up = t.upsample_nearest2(x).unwrap();
        let back = t.avg_pool2(up).unwrap();
        prop_assert_eq!(t.value(back), t.value(x));
    }

    #[test]
    fn adam_with_zero_lr_is_inert(p in prop::collection::vec(-10.0f32..10.0, 1..8), g in prop::collection::vec(-10.0f32..10.0, 8)) {
        let n = p.len();
        let mut params = ParamStore::<f32>::new();
        params.insert("p", Tensor::new(&[n], p.clone()).unwrap());
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() });
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::new(&[n], g[..n].to_vec()).unwrap());
        for _ in 0..3 {
            adam.step(&mut params, &grads).unwrap();
        }
        prop_assert_eq!(params.get("p").unwrap().data(), &p[..]);
    }
}
