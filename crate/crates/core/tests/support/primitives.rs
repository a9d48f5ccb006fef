//! Randomized finite-difference cases for every tape primitive, shared by the
//! core test suite and the acceptance run.

use microforge_core::tensor::{Tape, Tensor, TensorError, Var};
use microforge_core::SquaresRng;

pub type Body = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub body: Body,
}

fn dim(rng: &mut SquaresRng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn normal(rng: &mut SquaresRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn positive(rng: &mut SquaresRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| 0.5 + rng.normal().abs()).collect()).unwrap()
}

/// Values at least `gap` away from `kink`.
fn away_from(rng: &mut SquaresRng, shape: &[usize], kink: f64, gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.normal();
            kink + v.signum() * (gap + v.abs())
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, body: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> + 'static) -> Case {
    Case { name, inputs, body: Box::new(body) }
}

/// Spatial extent that makes a convolution with these parameters produce `out`.
fn conv_in(out: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((out - 1) * stride + k).checked_sub(2 * pad).filter(|&h| h >= 1)
}

/// One randomized instance of every primitive.
pub fn cases(rng: &mut SquaresRng) -> Vec<Case> {
    let mut v = Vec::new();
    let rank = dim(rng, 1, 3);
    let shape: Vec<usize> = (0..rank).map(|_| dim(rng, 1, 4)).collect();
    let s = shape.clone();

    v.push(case("add", vec![normal(rng, &s), normal(rng, &s)], |t, x| t.add(x[0], x[1])));
    v.push(case("sub", vec![normal(rng, &s), normal(rng, &s)], |t, x| t.sub(x[0], x[1])));
    v.push(case("mul", vec![normal(rng, &s), normal(rng, &s)], |t, x| t.mul(x[0], x[1])));
    v.push(case("mul_scalar", vec![normal(rng, &s), normal(rng, &[])], |t, x| t.mul(x[0], x[1])));
    let c = rng.normal();
    v.push(case("scale", vec![normal(rng, &s)], move |t, x| Ok(t.scale(x[0], c))));
    v.push(case("add_scalar", vec![normal(rng, &s)], move |t, x| Ok(t.add_scalar(x[0], c))));
    v.push(case("neg", vec![normal(rng, &s)], |t, x| Ok(t.neg(x[0]))));
    let p = [-1.0, 0.5, 2.0, 3.0, -0.5][rng.below(5) as usize];
    v.push(case("pow", vec![positive(rng, &s)], move |t, x| Ok(t.pow(x[0], p))));
    v.push(case("sqrt", vec![positive(rng, &s)], |t, x| Ok(t.sqrt(x[0]))));
    v.push(case("exp", vec![normal(rng, &s)], |t, x| Ok(t.exp(x[0]))));
    v.push(case("ln", vec![positive(rng, &s)], |t, x| Ok(t.ln(x[0]))));
    v.push(case("sigmoid", vec![normal(rng, &s)], |t, x| Ok(t.sigmoid(x[0]))));
    v.push(case("leaky_relu", vec![away_from(rng, &s, 0.0, 0.05)], |t, x| Ok(t.leaky_relu(x[0], 0.2))));
    v.push(case("clamp_min", vec![away_from(rng, &s, 0.3, 0.05)], |t, x| Ok(t.clamp_min(x[0], 0.3))));

    let flat = [s.iter().product::<usize>()];
    v.push(case("reshape", vec![normal(rng, &s)], move |t, x| t.reshape(x[0], &flat)));
    let small: Vec<usize> = s.iter().map(|&d| if rng.below(2) == 0 { 1 } else { d }).collect();
    let big = s.clone();
    v.push(case("broadcast_to", vec![normal(rng, &small)], move |t, x| t.broadcast_to(x[0], &big)));
    let sm = small.clone();
    v.push(case("sum_to", vec![normal(rng, &s)], move |t, x| t.sum_to(x[0], &sm)));
    let sm = small.clone();
    v.push(case("mean_to", vec![normal(rng, &s)], move |t, x| t.mean_to(x[0], &sm)));
    let sm = small.clone();
    v.push(case("variance_to", vec![normal(rng, &s)], move |t, x| t.variance_to(x[0], &sm)));
    v.push(case("sum_all", vec![normal(rng, &s)], |t, x| t.sum_all(x[0])));
    v.push(case("mean_all", vec![normal(rng, &s)], |t, x| t.mean_all(x[0])));
    v.push(case("variance_all", vec![normal(rng, &s)], |t, x| t.variance_all(x[0])));

    let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
    v.push(case("matmul", vec![normal(rng, &[m, k]), normal(rng, &[k, n])], |t, x| t.matmul(x[0], x[1])));
    v.push(case("dense", vec![normal(rng, &[m, k]), normal(rng, &[k, n]), normal(rng, &[n])], |t, x| {
        t.dense(x[0], x[1], x[2])
    }));
    let tail = dim(rng, 1, 3);
    v.push(case("swap01", vec![normal(rng, &[m, k, tail])], |t, x| t.swap01(x[0])));

    // convolutions
    let (b, ci, co) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
    let ks = [1, 3][rng.below(2) as usize];
    let stride = dim(rng, 1, 2);
    let pad = if rng.below(2) == 0 { 0 } else { ks / 2 };
    let (oh, ow) = (dim(rng, 1, 4), dim(rng, 1, 4));
    let (h, w) = match (conv_in(oh, ks, stride, pad), conv_in(ow, ks, stride, pad)) {
        (Some(h), Some(w)) => (h, w),
        _ => (ks, ks),
    };
    let (oh, ow) = ((h + 2 * pad - ks) / stride + 1, (w + 2 * pad - ks) / stride + 1);
    v.push(case("conv2d", vec![normal(rng, &[b, ci, h, w]), normal(rng, &[co, ci, ks, ks])], move |t, x| {
        t.conv2d(x[0], x[1], stride, pad)
    }));
    v.push(case(
        "conv2d_transpose",
        vec![normal(rng, &[b, co, oh, ow]), normal(rng, &[co, ci, ks, ks])],
        move |t, x| t.conv2d_transpose(x[0], x[1], stride, pad, (h, w)),
    ));
    v.push(case(
        "conv2d_kernel_grad",
        vec![normal(rng, &[b, ci, h, w]), normal(rng, &[b, co, oh, ow])],
        move |t, x| t.conv2d_kernel_grad(x[0], x[1], stride, pad, ks),
    ));
    let ds = dim(rng, 1, 2);
    let (dh, dw) = (dim(rng, 1, 4), dim(rng, 1, 4));
    v.push(case("deconv2d", vec![normal(rng, &[b, ci, dh, dw]), normal(rng, &[ci, co, 3, 3])], move |t, x| {
        t.deconv2d(x[0], x[1], ds)
    }));
    let zs = dim(rng, 2, 3);
    v.push(case("zero_insert", vec![normal(rng, &[b, ci, dh, dw])], move |t, x| t.zero_insert(x[0], zs)));
    v.push(case("subsample", vec![normal(rng, &[b, ci, dh * zs, dw * zs])], move |t, x| t.subsample(x[0], zs)));
    v.push(case("avg_pool2", vec![normal(rng, &[b, ci, 2 * dh, 2 * dw])], |t, x| t.avg_pool2(x[0])));
    v.push(case("upsample_nearest2", vec![normal(rng, &[b, ci, dh, dw])], |t, x| t.upsample_nearest2(x[0])));
    let extra = dim(rng, 0, 2);
    let start = dim(rng, 0, extra);
    v.push(case("pad_channels", vec![normal(rng, &[b, ci, dh, dw])], move |t, x| {
        t.pad_channels(x[0], start, ci + extra)
    }));
    v.push(case("slice_channels", vec![normal(rng, &[b, ci + extra, dh, dw])], move |t, x| {
        t.slice_channels(x[0], start, ci)
    }));
    v.push(case("concat_channels", vec![normal(rng, &[b, ci, dh, dw]), normal(rng, &[b, co, dh, dw])], |t, x| {
        t.concat_channels(x[0], x[1])
    }));

    // gradients of gradients, as the gradient penalty needs
    v.push(case(
        "double_backward",
        vec![normal(rng, &[b, ci, dh + 2, dw + 2]), normal(rng, &[co, ci, 3, 3])],
        |t, x| {
            let y = t.conv2d(x[0], x[1], 1, 1)?;
            let y2 = t.mul(y, y)?;
            let y3 = t.mul(y2, y)?;
            let l = t.sum_all(y3)?;
            let g = t.grad(l, &[x[0]])?[0];
            let g2 = t.mul(g, g)?;
            let s = t.sum_all(g2)?;
            let s = t.add_scalar(s, 1e-12);
            Ok(t.sqrt(s))
        },
    ));
    v
}
