//! Randomized instances of every differentiable op, scored by the FD oracle.

use hournas::tensor::{BnMode, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fd::max_relative_error;

type Rng8 = ChaCha8Rng;

/// Values in ±[0.05, 1.05], away from the kinks of relu/abs.
fn rand_tensor(rng: &mut Rng8, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..1.05);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn conv2d(rng: &mut Rng8) -> f64 {
    let groups = [1, 2][rng.gen_range(0..2)];
    let cin = groups * rng.gen_range(1..3);
    let cout = groups * rng.gen_range(1..3);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..3);
    let h = rng.gen_range(k.max(2)..7);
    let w = rng.gen_range(k.max(2)..7);
    let n = rng.gen_range(1..3);
    let x = rand_tensor(rng, &[n, cin, h, w]);
    let wt = rand_tensor(rng, &[cout, cin / groups, k, k]);
    max_relative_error(&[x, wt], &[true, true], |g, v| {
        g.conv2d(v[0], v[1], stride, (k - 1) / 2, groups).unwrap()
    })
}

fn residual_add(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
    let x = rand_tensor(rng, &shape);
    let fx = rand_tensor(rng, &shape);
    max_relative_error(&[x, fx], &[true, true], |g, v| g.residual_add(v[0], v[1]).unwrap())
}

fn batchnorm(rng: &mut Rng8) -> f64 {
    let (n, c) = (rng.gen_range(2..4), rng.gen_range(1..4));
    let (h, w) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let x = rand_tensor(rng, &[n, c, h, w]);
    let gamma = rand_tensor(rng, &[c]);
    let beta = rand_tensor(rng, &[c]);
    max_relative_error(&[x, gamma, beta], &[true, true, true], |g, v| {
        g.batchnorm2d(v[0], v[1], v[2], BnMode::Train).unwrap().0
    })
}

fn relu(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..5), rng.gen_range(1..5)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.relu(v[0]))
}

fn abs(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..9)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.abs(v[0]))
}

fn linear(rng: &mut Rng8) -> f64 {
    let (n, fin, fout) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
    let x = rand_tensor(rng, &[n, fin]);
    let w = rand_tensor(rng, &[fout, fin]);
    let b = rand_tensor(rng, &[fout]);
    max_relative_error(&[x, w, b], &[true, true, true], |g, v| {
        g.linear(v[0], v[1], Some(v[2])).unwrap()
    })
}

fn global_avg_pool(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.global_avg_pool(v[0]).unwrap())
}

fn softmax(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(2..6)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.softmax(v[0]))
}

fn log_softmax(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(2..6)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.log_softmax(v[0]))
}

fn cross_entropy(rng: &mut Rng8) -> f64 {
    let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..6));
    let x = rand_tensor(rng, &[n, k]);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    max_relative_error(&[x], &[true], move |g, v| g.cross_entropy(v[0], &labels).unwrap())
}

fn normalize_rows(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..6)];
    let x = rand_tensor(rng, &shape);
    max_relative_error(&[x], &[true], |g, v| g.normalize_rows(v[0]).unwrap())
}

fn matmul(rng: &mut Rng8) -> f64 {
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let a = rand_tensor(rng, &[m, k]);
    let b = rand_tensor(rng, &[k, n]);
    max_relative_error(&[a, b], &[true, true], |g, v| g.matmul(v[0], v[1]).unwrap())
}

fn transpose(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..5), rng.gen_range(1..5)];
    let a = rand_tensor(rng, &shape);
    max_relative_error(&[a], &[true], |g, v| g.transpose(v[0]).unwrap())
}

fn mul_sub_scale(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
    let a = rand_tensor(rng, &shape);
    let b = rand_tensor(rng, &shape);
    let c: f64 = rng.gen_range(-2.0..2.0);
    max_relative_error(&[a, b], &[true, true], move |g, v| {
        let p = g.mul(v[0], v[1]).unwrap();
        let d = g.sub(p, v[1]).unwrap();
        let s = g.scale(d, c);
        g.add_scalar(s, 0.3)
    })
}

fn mul_scalar_var(rng: &mut Rng8) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
    let x = rand_tensor(rng, &shape);
    let s = rand_tensor(rng, &[3]);
    let i = rng.gen_range(0..3);
    max_relative_error(&[x, s], &[true, true], move |g, v| {
        let si = g.index(v[1], i).unwrap();
        g.mul_scalar_var(v[0], si).unwrap()
    })
}

fn channel_scale(rng: &mut Rng8) -> f64 {
    let c = rng.gen_range(1..4);
    let x = rand_tensor(rng, &[2, c, 2, 2]);
    let scales: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    max_relative_error(&[x], &[true], move |g, v| g.channel_scale(v[0], &scales).unwrap())
}

fn stack_and_reduce(rng: &mut Rng8) -> f64 {
    let n = rng.gen_range(1..5);
    let a = rand_tensor(rng, &[n]);
    let b = rand_tensor(rng, &[n]);
    max_relative_error(&[a, b], &[true, true], |g, v| {
        let s = g.stack_rows(&[v[0], v[1]]).unwrap();
        let r = g.reshape(s, &[2 * v.len() / 2, g.shape(s)[1]]).unwrap();
        let m = g.mean(r);
        let t = g.sum(r);
        g.stack_rows(&[m, t]).unwrap()
    })
}

/// Gumbel-softmax relaxation path: softmax((θ + noise) / τ).
fn relaxed_sample(rng: &mut Rng8) -> f64 {
    let (l, o) = (rng.gen_range(1..4), rng.gen_range(2..5));
    let theta = rand_tensor(rng, &[l, o]);
    let noise: Vec<f64> = (0..l * o).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tau: f64 = rng.gen_range(0.5..2.0);
    max_relative_error(&[theta], &[true], move |g, v| {
        let n = g.constant(Tensor::new(vec![l, o], noise.clone()).unwrap());
        let z = g.add(v[0], n).unwrap();
        let z = g.scale(z, 1.0 / tau);
        g.softmax(z)
    })
}

pub type Case = (&'static str, fn(&mut Rng8) -> f64);

pub fn cases() -> Vec<Case> {
    vec![
        ("conv2d", conv2d),
        ("residual_add", residual_add),
        ("batchnorm2d", batchnorm),
        ("relu", relu),
        ("abs", abs),
        ("linear", linear),
        ("global_avg_pool", global_avg_pool),
        ("softmax", softmax),
        ("log_softmax", log_softmax),
        ("cross_entropy", cross_entropy),
        ("normalize_rows", normalize_rows),
        ("matmul", matmul),
        ("transpose", transpose),
        ("mul/sub/scale", mul_sub_scale),
        ("index/mul_scalar_var", mul_scalar_var),
        ("channel_scale", channel_scale),
        ("stack/reshape/sum/mean", stack_and_reduce),
        ("gumbel_softmax relaxation", relaxed_sample),
    ]
}
