#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signbart::numerics::{Tape, Tensor, Var};
use signbart::skeleton::{
    frame_normalize, generate_synthetic, normalize_parts, parse_parts, select_components,
    KeypointLayout, NormalizationMode, SkeletonSequence,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks the gradient of `sum(weights ⊙ op(inputs))` against central
/// differences with step `h`. Returns the worst relative error over all
/// input elements.
pub fn fd_check<F>(inputs: &[Tensor<f64>], h: f64, seed: u64, op: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
        let out = op(&mut tape, &vars);
        random_tensor(&mut rng(seed), tape.shape(out))
    };
    let eval = |ts: &[Tensor<f64>], grads: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts
            .iter()
            .map(|t| tape.leaf(&t.clone().with_requires_grad(grads)))
            .collect();
        let out = op(&mut tape, &vars);
        let w = tape.constant(&weights);
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.values(loss)[0];
        let g = grads.then(|| {
            tape.backward(loss).unwrap();
            vars.iter()
                .map(|&v| tape.grad(v).expect("input reached").to_vec())
                .collect::<Vec<_>>()
        });
        (value, g)
    };
    let (_, analytic) = eval(inputs, true);
    let analytic = analytic.unwrap();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] += h;
            let (up, _) = eval(&probe, false);
            probe[i].data_mut()[j] -= 2.0 * h;
            let (down, _) = eval(&probe, false);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_error(analytic[i][j], numeric, 1e-6));
        }
    }
    worst
}

/// Synthetic data through the standard three-box pipeline with all parts.
pub fn prepared(classes: usize, per_class: usize, seed: u64) -> Vec<SkeletonSequence> {
    let layout = KeypointLayout::canonical();
    let parts = parse_parts("body,left,right").unwrap();
    generate_synthetic(classes, per_class, seed)
        .unwrap()
        .iter()
        .map(|s| {
            let f = frame_normalize(s).unwrap().sequence;
            let p = normalize_parts(&f, &layout, NormalizationMode::ThreeBox).unwrap();
            select_components(&p, &layout, &parts).unwrap()
        })
        .collect()
}
