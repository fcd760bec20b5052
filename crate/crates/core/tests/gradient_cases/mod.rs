//! Finite-difference oracles for every hand-written backward pass, shared by
//! the gradient tests and the acceptance run.
#![allow(dead_code)]

use metadefa_core::gradcheck::{central_difference, relative_error, STEP};
use metadefa_core::losses::{self, LossWeights};
use metadefa_core::metaloop::Learner;
use metadefa_core::model::{self, TinyCnn, TinyCnnConfig};
use metadefa_core::{ops, rng, LabeledImage, Tensor};
use rand::Rng;

pub const CASES: usize = 100;
pub const TOL: f64 = 1e-4;

/// Point, scalar function and analytic gradient at the point.
pub type Case = (Vec<f64>, Box<dyn Fn(&[f64]) -> f64>, Vec<f64>);

/// Worst relative error over `cases` seeds, or the first case above [`TOL`].
pub fn worst_error(name: &str, case: fn(u64) -> Case, cases: usize) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for i in 0..cases as u64 {
        let (x, f, analytic) = case(i);
        let numeric = central_difference(|v| f(v), &x, STEP);
        let err = relative_error(&analytic, &numeric);
        if !(err <= TOL) {
            return Err(format!("{name} case {i}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn conv2d(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[10]);
    let (ci, co, h, w) = (2, 3, r.random_range(3..6), r.random_range(3..6));
    let nx = ci * h * w;
    let nk = co * ci * 9;
    let x: Vec<f64> = [random_vec(&mut r, nx, 1.0), random_vec(&mut r, nk, 1.0), random_vec(&mut r, co, 1.0)].concat();
    let up = tensor(&[co, h, w], random_vec(&mut r, co * h * w, 1.0));
    let split = move |v: &[f64]| {
        (
            tensor(&[ci, h, w], v[..nx].to_vec()),
            tensor(&[co, ci, 3, 3], v[nx..nx + nk].to_vec()),
            tensor(&[co], v[nx + nk..].to_vec()),
        )
    };
    let (a, k, b) = split(&x);
    let g = ops::conv2d_backward(&a, &k, &b, &up).unwrap();
    let analytic = [g.input.data(), g.kernel.data(), g.bias.data()].concat();
    let f = move |v: &[f64]| {
        let (a, k, b) = split(v);
        let y = ops::conv2d_forward(&a, &k, &b).unwrap();
        y.data().iter().zip(up.data()).map(|(p, q)| p * q).sum()
    };
    (x, Box::new(f), analytic)
}

pub fn relu(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[11]);
    let n = r.random_range(4..20);
    // Stay clear of the kink.
    let x: Vec<f64> = (0..n)
        .map(|_| loop {
            let v = r.random_range(-2.0..2.0);
            if f64::abs(v) >= 1e-3 {
                break v;
            }
        })
        .collect();
    let up = tensor(&[n], random_vec(&mut r, n, 1.0));
    let analytic = ops::relu_backward(&tensor(&[n], x.clone()), &up).unwrap().into_data();
    let f = move |v: &[f64]| {
        ops::relu(&tensor(&[n], v.to_vec())).data().iter().zip(up.data()).map(|(p, q)| p * q).sum()
    };
    (x, Box::new(f), analytic)
}

pub fn global_avg_pool(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[12]);
    let shape = [r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
    let n = shape.iter().product();
    let x = random_vec(&mut r, n, 1.0);
    let up = tensor(&[shape[0]], random_vec(&mut r, shape[0], 1.0));
    let analytic = ops::global_avg_pool_backward(&shape, &up).unwrap().into_data();
    let f = move |v: &[f64]| {
        let y = ops::global_avg_pool(&tensor(&shape, v.to_vec())).unwrap();
        y.data().iter().zip(up.data()).map(|(p, q)| p * q).sum()
    };
    (x, Box::new(f), analytic)
}

pub fn avg_pool2(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[19]);
    let shape = [r.random_range(1..4), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
    let n = shape.iter().product();
    let x = random_vec(&mut r, n, 1.0);
    let up_n = shape[0] * shape[1] * shape[2] / 4;
    let up = tensor(&[shape[0], shape[1] / 2, shape[2] / 2], random_vec(&mut r, up_n, 1.0));
    let analytic = ops::avg_pool2_backward(&shape, &up).unwrap().into_data();
    let f = move |v: &[f64]| {
        let y = ops::avg_pool2(&tensor(&shape, v.to_vec())).unwrap();
        y.data().iter().zip(up.data()).map(|(p, q)| p * q).sum()
    };
    (x, Box::new(f), analytic)
}

pub fn linear(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[13]);
    let (c, k) = (r.random_range(1..5), r.random_range(1..6));
    let x = random_vec(&mut r, k + c * k + c, 1.0);
    let up = tensor(&[c], random_vec(&mut r, c, 1.0));
    let split = move |v: &[f64]| {
        (
            tensor(&[k], v[..k].to_vec()),
            tensor(&[c, k], v[k..k + c * k].to_vec()),
            tensor(&[c], v[k + c * k..].to_vec()),
        )
    };
    let (fe, w, b) = split(&x);
    let g = ops::linear_backward(&fe, &w, &b, &up).unwrap();
    let analytic = [g.features.data(), g.weights.data(), g.bias.data()].concat();
    let f = move |v: &[f64]| {
        let (fe, w, b) = split(v);
        let y = ops::linear(&fe, &w, &b).unwrap();
        y.data().iter().zip(up.data()).map(|(p, q)| p * q).sum()
    };
    (x, Box::new(f), analytic)
}

pub fn cross_entropy(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[14]);
    let c = r.random_range(2..7);
    let label = r.random_range(0..c);
    let x = random_vec(&mut r, c, 3.0);
    let (_, g) = ops::softmax_cross_entropy(&tensor(&[c], x.clone()), label).unwrap();
    let f = move |v: &[f64]| ops::softmax_cross_entropy(&tensor(&[c], v.to_vec()), label).unwrap().0;
    (x, Box::new(f), g.into_data())
}

pub fn spatial_normalize(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[15]);
    let shape = [r.random_range(1..5), r.random_range(2..5)];
    let n = shape[0] * shape[1];
    let x = random_vec(&mut r, n, 2.0);
    let up = tensor(&shape, random_vec(&mut r, n, 1.0));
    let p = losses::spatial_normalize(&tensor(&shape, x.clone()));
    let analytic = losses::spatial_normalize_backward(&p, &up).unwrap().into_data();
    let f = move |v: &[f64]| {
        let p = losses::spatial_normalize(&tensor(&shape, v.to_vec()));
        p.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    };
    (x, Box::new(f), analytic)
}

/// Perturbations along e_i − e_0 keep both arguments on the simplex, so the
/// validated function can be differentiated numerically; the analytic side
/// is the matching directional derivative.
pub fn js_divergence(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[16]);
    let n = r.random_range(2..8);
    let p = random_distribution(&mut r, n);
    let q = random_distribution(&mut r, n);
    let (gp, gq) = losses::js_divergence_grad(&p, &q).unwrap();
    let mut analytic = Vec::new();
    for i in 1..n {
        analytic.push(gp[i] - gp[0]);
    }
    for i in 1..n {
        analytic.push(gq[i] - gq[0]);
    }
    let (p0, q0) = (p.clone(), q.clone());
    let f = move |t: &[f64]| {
        let mut p = p0.clone();
        let mut q = q0.clone();
        for i in 1..n {
            p[i] += t[i - 1];
            p[0] -= t[i - 1];
            q[i] += t[n - 1 + i - 1];
            q[0] -= t[n - 1 + i - 1];
        }
        losses::js_divergence(&p, &q).unwrap()
    };
    (vec![0.0; 2 * (n - 1)], Box::new(f), analytic)
}

pub fn loss_cam(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[17]);
    let shape = [r.random_range(2..5), r.random_range(2..5)];
    let n = shape[0] * shape[1];
    let x = random_vec(&mut r, 2 * n, 2.0);
    let (_, ga, gb) =
        losses::loss_cam_with_grad(&tensor(&shape, x[..n].to_vec()), &tensor(&shape, x[n..].to_vec())).unwrap();
    let f = move |v: &[f64]| {
        losses::loss_cam(&tensor(&shape, v[..n].to_vec()), &tensor(&shape, v[n..].to_vec())).unwrap()
    };
    (x, Box::new(f), [ga.data(), gb.data()].concat())
}

pub fn loss_minor(seed: u64) -> Case {
    let mut r = rng::stream(seed, &[18]);
    let shape = [r.random_range(2..4), r.random_range(2..4)];
    let n = shape[0] * shape[1];
    let x = minor_case(&mut r, n);
    let (_, ga, gb) =
        losses::loss_minor_with_grad(&tensor(&shape, x[..n].to_vec()), &tensor(&shape, x[n..].to_vec()))
            .unwrap();
    let f = move |v: &[f64]| {
        losses::loss_minor(&tensor(&shape, v[..n].to_vec()), &tensor(&shape, v[n..].to_vec())).unwrap()
    };
    (x, Box::new(f), [ga.data(), gb.data()].concat())
}

pub fn total_loss(seed: u64) -> Case {
    let model = small_cnn();
    let weights = LossWeights::new(1.0, 0.1);
    let mut r = rng::stream(seed, &[20]);
    loop {
        let params = model.init_params(&mut r);
        let label = r.random_range(0..3);
        let ori = random_image(&mut r, 0, label, 6);
        let aug = random_image(&mut r, 1, label, 6);
        let bo = model.forward(&params, ori.pixels(), label).unwrap();
        let ba = model.forward(&params, aug.pixels(), label).unwrap();
        let (mo, ma) = (
            losses::loss_minor(&bo.caam, &bo.cam).unwrap(),
            losses::loss_minor(&ba.caam, &ba.cam).unwrap(),
        );
        let smooth = bo.min_abs_preactivation() > 1e-3
            && ba.min_abs_preactivation() > 1e-3
            && clear_of_map_kinks(&bo.caam, &bo.cam, 1e-3)
            && clear_of_map_kinks(&ba.caam, &ba.cam, 1e-3)
            && (mo - ma).abs() > 1e-3;
        if !smooth {
            continue;
        }
        let (_, g) = model.pair_loss(&params, &ori, &aug, &weights).unwrap();
        let m = model.clone();
        let template = params.clone();
        let f = move |v: &[f64]| {
            let p = template.with_flat(v).unwrap();
            m.pair_loss(&p, &ori, &aug, &weights).unwrap().0.total
        };
        return (params.flatten(), Box::new(f) as Box<dyn Fn(&[f64]) -> f64>, g.flatten());
    }
}

/// A scalar functional of the CAM alone, differentiated down to the first conv block.
pub fn cam_functional(seed: u64) -> Case {
    let model = small_cnn();
    let mut r = rng::stream(seed, &[21]);
    let (params, label, img) = loop {
        let params = model.init_params(&mut r);
        let label = r.random_range(0..3);
        let img = random_image(&mut r, 0, label, 6);
        if model.forward(&params, img.pixels(), label).unwrap().min_abs_preactivation() > 1e-3 {
            break (params, label, img);
        }
    };
    let probe = tensor(&[3, 3], random_vec(&mut r, 9, 1.0));
    let b = model.forward(&params, img.pixels(), label).unwrap();
    let up = model::BundleGrads {
        logits: Tensor::zeros(&[3]),
        cam: Some(probe.clone()),
        caam: None,
    };
    let g = model.backward(&params, &b, &up).unwrap();
    let m = model.clone();
    let template = params.clone();
    let f = move |v: &[f64]| {
        let p = template.with_flat(v).unwrap();
        let b = m.forward(&p, img.pixels(), label).unwrap();
        b.cam.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum()
    };
    (params.flatten(), Box::new(f), g.flatten())
}

/// Every primitive in suite order.
pub const PRIMITIVES: [(&str, fn(u64) -> Case); 12] = [
    ("conv2d", conv2d),
    ("relu", relu),
    ("global_avg_pool", global_avg_pool),
    ("avg_pool2", avg_pool2),
    ("linear", linear),
    ("softmax_cross_entropy", cross_entropy),
    ("spatial_normalize", spatial_normalize),
    ("js_divergence", js_divergence),
    ("loss_cam", loss_cam),
    ("loss_minor", loss_minor),
    ("total_loss", total_loss),
    ("cam", cam_functional),
];

fn random_vec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn random_distribution(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random pair of maps whose normalized difference stays away from the L1
/// kink and whose extremes are unique.
fn minor_case(r: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let x = random_vec(r, 2 * n, 2.0);
        let a = losses::minmax_normalize(&tensor(&[n], x[..n].to_vec()));
        let b = losses::minmax_normalize(&tensor(&[n], x[n..].to_vec()));
        let clear_kink = a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() > 1e-3);
        let unique = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s[1] - s[0] > 1e-3 && s[n - 1] - s[n - 2] > 1e-3
        };
        if clear_kink && unique(&x[..n]) && unique(&x[n..]) {
            return x;
        }
    }
}

fn small_cnn() -> TinyCnn {
    TinyCnn::new(TinyCnnConfig {
        in_channels: 3,
        widths: vec![3, 4],
        num_classes: 3,
        input_size: 6,
    })
    .unwrap()
}

fn random_image(r: &mut impl Rng, id: u64, label: usize, size: usize) -> LabeledImage {
    let px = (0..3 * size * size).map(|_| r.random::<f64>()).collect();
    LabeledImage::new(id, tensor(&[3, size, size], px), label, None).unwrap()
}

/// Whether a pair's normalized maps sit at least `margin` away from every
/// L1 and min/max kink of the minor terms.
fn clear_of_map_kinks(caam: &Tensor, cam: &Tensor, margin: f64) -> bool {
    let a = losses::minmax_normalize(caam);
    let b = losses::minmax_normalize(cam);
    let unique_extremes = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        s[1] - s[0] > margin && s[n - 1] - s[n - 2] > margin
    };
    a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() > margin)
        && unique_extremes(caam.data())
        && unique_extremes(cam.data())
}

