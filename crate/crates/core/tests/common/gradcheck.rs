//! Analytic gradients of the full objective against central differences.

use ibm_core::network::NetGrads;
use ibm_core::{gaussian_sample, LossScale, Matrix, Network, SeededRng};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

struct Case {
    net: Network,
    x: Matrix,
    y: Vec<usize>,
    eps: Vec<Matrix>,
}

fn case(seed: u64) -> Case {
    let mut rng = SeededRng::new(seed);
    let input = 3 + (seed as usize % 3);
    let widths = [4 + seed as usize % 2, 5, 3];
    let scale = if seed.is_multiple_of(2) { LossScale::Layers } else { LossScale::One };
    let mut net = Network::new(input, &widths, 0.3, scale, &mut rng).unwrap();
    let classes = 2 + seed as usize % 2;
    net.add_head(0, classes, &mut rng).unwrap();
    for (l, layer) in net.layers.iter_mut().enumerate() {
        // spread μ and σ so no term sits at a degenerate point
        layer.mu = gaussian_sample(&mut rng, layer.outputs(), layer.inputs(), 0.8, 0.4).unwrap();
        layer.log_sigma = gaussian_sample(&mut rng, layer.outputs(), layer.inputs(), -1.0, 0.3).unwrap();
        layer.gamma = 0.1 + 0.2 * l as f64;
    }
    let batch = 6;
    let x = gaussian_sample(&mut rng, batch, input, 0.0, 1.0).unwrap();
    let y = (0..batch).map(|i| i % classes).collect();
    let eps = net
        .layers
        .iter()
        .map(|l| gaussian_sample(&mut rng, l.outputs(), l.inputs(), 0.0, 1.0).unwrap())
        .collect();
    Case { net, x, y, eps }
}

fn loss(c: &Case, net: &Network) -> f64 {
    net.total_loss_with_eps(&c.x, &c.y, 0, c.eps.clone()).unwrap().loss
}

fn check(name: &str, analytic: f64, c: &Case, perturb: impl Fn(&mut Network, f64)) -> Option<String> {
    let mut plus = c.net.clone();
    perturb(&mut plus, STEP);
    let mut minus = c.net.clone();
    perturb(&mut minus, -STEP);
    let numeric = (loss(c, &plus) - loss(c, &minus)) / (2.0 * STEP);
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
    (rel > REL_TOL).then(|| format!("{name}: analytic {analytic} numeric {numeric} rel {rel}"))
}

/// Returns a description of every mismatching parameter.
pub fn gradient_mismatches(seed: u64) -> (usize, Vec<String>) {
    let c = case(seed);
    let pass = c.net.total_loss_with_eps(&c.x, &c.y, 0, c.eps.clone()).unwrap();
    let g: NetGrads = c.net.gradients(&pass, &c.y, 0).unwrap();
    let mut bad = Vec::new();
    let mut checked = 0;
    for l in 0..c.net.layers.len() {
        for i in 0..c.net.layers[l].weight.len() {
            checked += 3;
            bad.extend(check(&format!("W[{l}][{i}]"), g.layers[l].weight.data()[i], &c, |n, h| {
                n.layers[l].weight.data_mut()[i] += h
            }));
            bad.extend(check(&format!("mu[{l}][{i}]"), g.layers[l].mu.data()[i], &c, |n, h| {
                n.layers[l].mu.data_mut()[i] += h
            }));
            bad.extend(check(&format!("log_sigma[{l}][{i}]"), g.layers[l].log_sigma.data()[i], &c, |n, h| {
                n.layers[l].log_sigma.data_mut()[i] += h
            }));
        }
    }
    for i in 0..g.head.weight.len() {
        checked += 1;
        bad.extend(check(&format!("head.W[{i}]"), g.head.weight.data()[i], &c, |n, h| {
            n.heads.get_mut(&0).unwrap().weight.data_mut()[i] += h
        }));
    }
    for i in 0..g.head.bias.len() {
        checked += 1;
        bad.extend(check(&format!("head.b[{i}]"), g.head.bias[i], &c, |n, h| {
            n.heads.get_mut(&0).unwrap().bias[i] += h
        }));
    }
    (checked, bad)
}
