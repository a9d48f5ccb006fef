use std::collections::BTreeSet;

use microforge_core::image::subsample_stride2;
use microforge_core::stylenet::{self, adain, map_latent, NetConfig, NoiseSource, Variant, LRELU_SLOPE};
use microforge_core::tensor::check::gradient_check;
use microforge_core::tensor::{ParamStore, Tape, Tensor};
use microforge_core::train::tensor_to_images;
use microforge_core::SquaresRng;
use proptest::prelude::*;

fn net(target: usize, variant: Variant) -> NetConfig {
    NetConfig {
        target_resolution: target,
        latent_dim: 5,
        mapping_depth: 2,
        channels: [(8, 4), (16, 3), (32, 2), (64, 2), (128, 2)].into_iter().collect(),
        variant,
        progressive: true,
    }
}

fn params(cfg: &NetConfig, seed: u64) -> (ParamStore<f32>, ParamStore<f32>) {
    let mut rng = SquaresRng::new(seed);
    let g = stylenet::init_generator(cfg, &mut rng).unwrap();
    let d = stylenet::init_critic(cfg, &mut rng).unwrap();
    (g, d)
}

/// Perturb every tensor so zero-initialized noise scales and biases matter.
fn jitter(p: &ParamStore<f32>, seed: u64) -> ParamStore<f32> {
    let mut rng = SquaresRng::new(seed);
    let mut out = ParamStore::new();
    for (n, t) in p.iter() {
        let data = t.data().iter().map(|&v| v + 0.1 * rng.normal() as f32).collect();
        out.insert(n, Tensor::new(t.shape(), data).unwrap());
    }
    out
}

fn latent(batch: usize, dim: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SquaresRng::new(seed);
    Tensor::new(&[batch, dim], (0..batch * dim).map(|_| rng.normal() as f32).collect()).unwrap()
}

#[test]
fn mapping_identity_layer_is_the_activation() {
    let mut p = ParamStore::<f64>::new();
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    p.insert("g.map.0.w", Tensor::from_f64(&[3, 3], &eye).unwrap());
    p.insert("g.map.0.b", Tensor::zeros(&[3]));
    let mut t = Tape::new();
    let b = p.bind(&mut t);
    let zs = [0.5, -2.0, 0.0, 0.5, -2.0, 0.0];
    let z = t.constant(Tensor::from_f64(&[2, 3], &zs).unwrap());
    let w = map_latent(&mut t, &b, 1, z).unwrap();
    let want: Vec<f64> = zs.iter().map(|&v| if v >= 0.0 { v } else { LRELU_SLOPE * v }).collect();
    assert_eq!(t.value(w).to_f64_vec(), want);
}

#[test]
fn mapping_gradient_matches_differences() {
    let cfg = net(8, Variant::Standard);
    let g: ParamStore<f64> = stylenet::init_generator(&cfg, &mut SquaresRng::new(2)).unwrap();
    let z = latent(3, 5, 4).cast::<f64>();
    let r = gradient_check(&[z], 1e-5, |t, v| {
        let b = g.bind(t);
        let w = map_latent(t, &b, 2, v[0]).map_err(|e| match e {
            stylenet::StyleError::Tensor(e) => e,
            other => panic!("{other}"),
        })?;
        t.mean_all(w)
    })
    .unwrap();
    assert!(r.max_rel_error <= 1e-3, "{}", r.max_rel_error);
}

#[test]
fn adain_limits() {
    let mut t = Tape::<f64>::new();
    // zero mean, unit variance already
    let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, -1.0, 1.0, -1.0]).unwrap());
    let one = t.leaf(Tensor::from_f64(&[1, 1], &[1.0]).unwrap());
    let zero = t.leaf(Tensor::from_f64(&[1, 1], &[0.0]).unwrap());
    let y = adain(&mut t, x, one, zero).unwrap();
    for (a, b) in t.value(y).to_f64_vec().iter().zip(t.value(x).to_f64_vec()) {
        assert!((a - b).abs() < 1e-7);
    }
    let beta = t.leaf(Tensor::from_f64(&[1, 1], &[0.25]).unwrap());
    let y = adain(&mut t, x, zero, beta).unwrap();
    assert!(t.value(y).to_f64_vec().iter().all(|&v| v == 0.25));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adain_sets_channel_moments(
        seed in any::<u64>(),
        gamma in prop::collection::vec(-4.0f64..4.0, 6),
        beta in prop::collection::vec(-3.0f64..3.0, 6),
        spread in 0.02f64..5.0,
    ) {
        let mut rng = SquaresRng::new(seed);
        let n = 2 * 3 * 16;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal() * spread + rng.normal()).collect();
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[2, 3, 4, 4], &xs).unwrap());
        let g = t.leaf(Tensor::from_f64(&[2, 3], &gamma).unwrap());
        let b = t.leaf(Tensor::from_f64(&[2, 3], &beta).unwrap());
        let y = adain(&mut t, x, g, b).unwrap();
        let out = t.value(y).to_f64_vec();
        for (i, plane) in out.chunks(16).enumerate() {
            let src = &xs[i * 16..(i + 1) * 16];
            let sm = src.iter().sum::<f64>() / 16.0;
            prop_assume!(src.iter().map(|v| (v - sm).powi(2)).sum::<f64>() / 16.0 >= 1e-4);
            let m = plane.iter().sum::<f64>() / 16.0;
            let sd = (plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 16.0).sqrt();
            prop_assert!((m - beta[i]).abs() < 1e-3);
            prop_assert!((sd - gamma[i].abs()).abs() < 1e-3);
        }
    }

    #[test]
    fn generated_samples_are_finite(seed in any::<u64>()) {
        let cfg = net(16, Variant::Standard);
        let (g, _) = params(&cfg, seed);
        let g = jitter(&g, seed ^ 1);
        let mut t = Tape::new();
        let gp = g.bind(&mut t);
        let z = t.constant(latent(2, 5, seed ^ 2));
        let img = stylenet::generate(&mut t, &cfg, &gp, z, 16, 0.3, &NoiseSource::new(SquaresRng::new(seed))).unwrap();
        prop_assert!(t.value(img).all_finite());
    }
}

#[test]
fn equal_latent_rows_give_equal_styles() {
    let cfg = net(8, Variant::Standard);
    let (g, _) = params(&cfg, 1);
    let mut t = Tape::new();
    let b = g.bind(&mut t);
    let row = latent(1, 5, 3).into_data();
    let z = t.constant(Tensor::new(&[2, 5], [row.clone(), row].concat()).unwrap());
    let w = map_latent(&mut t, &b, 2, z).unwrap();
    let v = t.value(w).data();
    assert_eq!(v[..5], v[5..]);
}

#[test]
fn fade_in_starts_from_the_previous_output() {
    let cfg = net(32, Variant::Standard);
    let (g, _) = params(&cfg, 5);
    let g = jitter(&g, 6);
    let z = latent(3, 5, 7);
    let noise = NoiseSource::new(SquaresRng::new(8));
    for (lo, hi) in [(8, 16), (16, 32)] {
        let mut t = Tape::new();
        let gp = g.bind(&mut t);
        let zv = t.constant(z.clone());
        let old = stylenet::generate(&mut t, &cfg, &gp, zv, lo, 1.0, &noise).unwrap();
        let up = t.upsample_nearest2(old).unwrap();
        let faded = stylenet::generate(&mut t, &cfg, &gp, zv, hi, 0.0, &noise).unwrap();
        assert_eq!(t.value(faded), t.value(up));
        let full = stylenet::generate(&mut t, &cfg, &gp, zv, hi, 1.0, &noise).unwrap();
        assert_ne!(t.value(full), t.value(up));
    }
}

#[test]
fn output_sizes_across_the_schedule() {
    let cfg = net(128, Variant::Standard);
    assert_eq!(cfg.phases(), [8, 16, 32, 64, 128]);
    let (g, _) = params(&cfg, 1);
    for r in cfg.phases() {
        let mut t = Tape::new();
        let gp = g.bind(&mut t);
        let z = t.constant(latent(1, 5, 2));
        let img = stylenet::generate(&mut t, &cfg, &gp, z, r, 1.0, &NoiseSource::new(SquaresRng::new(3))).unwrap();
        assert_eq!(t.shape(img), [1, 1, r, r]);
    }
}

#[test]
fn resolution_increase_view_is_a_subsample() {
    let cfg = net(64, Variant::ResolutionIncrease);
    assert_eq!(cfg.phases(), [8, 16, 32, 64]);
    let (g, d) = params(&cfg, 9);
    let g = jitter(&g, 10);
    for r in cfg.phases() {
        let mut t = Tape::new();
        let gp = g.bind(&mut t);
        let dp = d.bind(&mut t);
        let z = t.constant(latent(2, 5, 11));
        let noise = NoiseSource::new(SquaresRng::new(12));
        let (full, view) = stylenet::generate_upscaled(&mut t, &cfg, &gp, z, r, 1.0, &noise).unwrap();
        assert_eq!(t.shape(full), [2, 1, 2 * r, 2 * r]);
        assert_eq!(t.shape(view), [2, 1, r, r]);
        let v = t.value(view).data();
        let f = t.value(full).data();
        for b in 0..2 {
            for i in 0..r {
                for j in 0..r {
                    assert_eq!(v[(b * r + i) * r + j], f[(b * 2 * r + 2 * i) * 2 * r + 2 * j]);
                }
            }
        }
        for (a, b) in tensor_to_images(t.value(full)).iter().zip(tensor_to_images(t.value(view))) {
            assert_eq!(subsample_stride2(a).unwrap(), b);
        }
        let s = stylenet::discriminate(&mut t, &cfg, &dp, view, r, 1.0).unwrap();
        assert_eq!(t.shape(s), [2, 1]);
        assert!(matches!(
            stylenet::discriminate(&mut t, &cfg, &dp, full, r, 1.0),
            Err(stylenet::StyleError::ResolutionMismatch { .. })
        ));
    }
}

fn names(p: &ParamStore<f32>) -> BTreeSet<String> {
    p.names().map(String::from).collect()
}

#[test]
fn parameter_census() {
    let cfg = net(16, Variant::Standard);
    let (g, d) = params(&cfg, 1);
    let mut want_g: BTreeSet<String> = ["g.const"].iter().map(|s| s.to_string()).collect();
    for i in 0..2 {
        want_g.insert(format!("g.map.{i}.w"));
        want_g.insert(format!("g.map.{i}.b"));
    }
    for r in [8, 16] {
        let mut layers = vec![format!("g.b{r}.conv1"), format!("g.rgb{r}")];
        if r > 8 {
            layers.extend([format!("g.b{r}.up"), format!("g.b{r}.conv0")]);
        }
        for l in layers {
            want_g.insert(format!("{l}.w"));
            want_g.insert(format!("{l}.b"));
        }
        for s in 0..2 {
            for leaf in ["noise", "style.w", "style.b"] {
                want_g.insert(format!("g.b{r}.s{s}.{leaf}"));
            }
        }
    }
    assert_eq!(names(&g), want_g);

    let mut want_d = BTreeSet::new();
    let mut layers = vec!["d.head.conv".to_string(), "d.head.conv4".into(), "d.head.dense".into()];
    for r in [8, 16] {
        layers.extend([0, 1, 2].map(|i| format!("d.rgb{r}.{i}")));
        layers.extend([0, 1].map(|i| format!("d.b{r}.conv{i}")));
    }
    for l in layers {
        want_d.insert(format!("{l}.w"));
        want_d.insert(format!("{l}.b"));
    }
    assert_eq!(names(&d), want_d);

    // Every tensor influences the final-phase score while the new block fades in.
    let g = jitter(&g, 2);
    let mut t = Tape::new();
    let gp = g.bind(&mut t);
    let dp = d.bind(&mut t);
    let z = t.constant(latent(3, 5, 3));
    let img = stylenet::generate(&mut t, &cfg, &gp, z, 16, 0.5, &NoiseSource::new(SquaresRng::new(4))).unwrap();
    let s = stylenet::discriminate(&mut t, &cfg, &dp, img, 16, 0.5).unwrap();
    let sq = t.mul(s, s).unwrap();
    let loss = t.sum_all(sq).unwrap();
    let all: Vec<_> = gp.iter().chain(dp.iter()).collect();
    let grads = t.grad(loss, &all.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
    for ((name, _), gv) in all.iter().zip(grads) {
        let norm: f64 = t.value(gv).to_f64_vec().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "{name} has no effect on the score");
    }
}

#[test]
fn batch_std_adds_one_channel_in_the_critic() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::full(&[4, 6, 4, 4], 0.1));
    let y = stylenet::batch_std(&mut t, x).unwrap();
    assert_eq!(t.shape(y), [4, 7, 4, 4]);
}
