#![allow(dead_code)]

use rand::Rng;
use treemix::data::{synth_generate, Dataset, SyntheticSpec};
use treemix::rng::rng_from_seed;
use treemix::{FeatureDomain, Move, TreeStructure};

/// Tree grown by up to `grows` random Grow moves.
pub fn random_tree(domain: &FeatureDomain, seed: u64, grows: usize) -> TreeStructure {
    let mut rng = rng_from_seed(seed);
    let mut tree = TreeStructure::leaf();
    for _ in 0..grows {
        let leaves = tree.leaves();
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let splits = tree.valid_splits(leaf, domain);
        if splits.is_empty() {
            continue;
        }
        let split = splits[rng.random_range(0..splits.len())];
        tree = tree
            .apply_move(&Move::Grow { leaf, split }, domain)
            .unwrap();
    }
    tree
}

/// `f0 = -1/2` on the lower half of feature 1, `+1/2` above.
pub fn step_spec(domain: &FeatureDomain, noise: f64) -> SyntheticSpec {
    treemix::cli::default_step(domain, noise).unwrap()
}

/// Additive family used by the mixing experiments: four features with eight
/// levels, `f0 = sum_v w_v (x_v - 4.5) / 3.5`, uniform noise of half-width 1.
/// The weights are small enough that the root split still moves at `n = 200`.
pub fn additive_spec(n: usize) -> SyntheticSpec {
    let domain = FeatureDomain::uniform(8, 4).unwrap();
    let w = [0.4, 0.3, 0.2, 0.1];
    SyntheticSpec::from_fn(
        domain,
        |x| {
            x.iter()
                .zip(w)
                .map(|(&v, w)| w * (v as f64 - 4.5) / 3.5)
                .sum()
        },
        1.0,
        n,
    )
    .unwrap()
}

pub fn step_data(m: u32, d: usize, n: usize, noise: f64, seed: u64) -> Dataset<f64> {
    let domain = FeatureDomain::uniform(m, d).unwrap();
    synth_generate(&step_spec(&domain, noise).with_n(n), seed).unwrap()
}

/// Log-mean-exp over `draws` prior draws of the leaf values of
/// `prod_i N(y_i; theta_leaf(i), a sigma^2)`.
pub fn mc_log_marginal(
    tree: &TreeStructure,
    data: &Dataset<f64>,
    config: &treemix::model::ModelConfig<f64>,
    draws: usize,
    seed: u64,
) -> f64 {
    use rand_distr::{Distribution, Normal};
    let assign = tree.assign_rows(data.x(), data.num_features());
    let prior = Normal::new(config.mu_bar, config.sigma2.sqrt()).unwrap();
    let noise = config.noise_variance();
    let log_norm = -0.5 * data.len() as f64 * (std::f64::consts::TAU * noise).ln();
    let mut rng = rng_from_seed(seed);
    let mut theta = vec![0.0; tree.num_leaves()];
    let logs: Vec<f64> = (0..draws)
        .map(|_| {
            for t in theta.iter_mut() {
                *t = prior.sample(&mut rng);
            }
            let ss: f64 = assign
                .iter()
                .zip(data.y())
                .map(|(&l, &y)| (y - theta[l]).powi(2))
                .sum();
            log_norm - ss / (2.0 * noise)
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + (logs.iter().map(|l| (l - max).exp()).sum::<f64>() / draws as f64).ln()
}

/// Closed-form `log p(y|T0) - log p(y|T)` at `mu_bar = 0`, written as the
/// product over nonempty leaves `sqrt(prod(n_i + a) / ((n + a) a^(b-1)))`
/// times `exp((Z^2/(n+a) - sum Z_i^2/(n_i+a)) / (2 a sigma^2))`.
pub fn closed_form_log_ratio(
    tree: &TreeStructure,
    data: &Dataset<f64>,
    config: &treemix::model::ModelConfig<f64>,
) -> f64 {
    let assign = tree.assign_rows(data.x(), data.num_features());
    let mut n_i = vec![0usize; tree.num_leaves()];
    let mut z_i = vec![0.0; tree.num_leaves()];
    for (&l, &y) in assign.iter().zip(data.y()) {
        n_i[l] += 1;
        z_i[l] += y;
    }
    let a = config.a;
    let n = data.len() as f64;
    let z: f64 = data.y().iter().sum();
    let nonempty: Vec<usize> = (0..n_i.len()).filter(|&i| n_i[i] > 0).collect();
    let b = nonempty.len() as f64;
    let prod: f64 = nonempty.iter().map(|&i| n_i[i] as f64 + a).product();
    let quad: f64 = nonempty
        .iter()
        .map(|&i| z_i[i] * z_i[i] / (n_i[i] as f64 + a))
        .sum();
    let ratio = (prod / ((n + a) * a.powf(b - 1.0))).sqrt()
        * ((z * z / (n + a) - quad) / (2.0 * a * config.sigma2)).exp();
    ratio.ln()
}
