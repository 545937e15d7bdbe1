//! Randomized invariants.

use ibm_core::decompose::k_rank;
use ibm_core::harness::{decode_pool, encode_pool};
use ibm_core::mask::{combine_masks, freeze_gradients, reinit_va_params, BinaryMask, MemoryPool};
use ibm_core::metrics::{acc, bwt};
use ibm_core::{gaussian_sample, AccuracyMatrix, LossScale, Matrix, Network, SeededRng};
use proptest::prelude::*;

fn bits(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(any::<bool>(), rows * cols)
        .prop_map(move |b| Matrix::new(rows, cols, b.into_iter().map(|x| f64::from(u8::from(x))).collect()).unwrap())
}

fn trained_pool(seed: u64, tasks: usize) -> (Network, MemoryPool) {
    let mut rng = SeededRng::new(seed);
    let mut net = Network::new(5, &[4, 3], 0.5, LossScale::Layers, &mut rng).unwrap();
    let mut pool = MemoryPool::new();
    for t in 0..tasks {
        net.add_head(t, 2 + t % 2, &mut rng).unwrap();
        for l in net.layers.iter_mut() {
            l.mu = gaussian_sample(&mut rng, l.outputs(), l.inputs(), 0.0, 1.0).unwrap();
            l.log_sigma = gaussian_sample(&mut rng, l.outputs(), l.inputs(), 0.0, 0.5).unwrap();
        }
        pool.finalize_task(&net, t, 1.0).unwrap();
    }
    (net, pool)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), gamma in 0.0f64..3.0) {
        let mut rng = SeededRng::new(seed);
        let mut net = Network::new(3, &[4], gamma, LossScale::One, &mut rng).unwrap();
        net.layers[0].mu = gaussian_sample(&mut rng, 4, 3, 0.0, 2.0).unwrap();
        prop_assert!(net.kl_total() >= 0.0);
    }

    #[test]
    fn freezing_zeroes_exactly_the_frozen_entries(mask in bits(3, 4), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let g = gaussian_sample(&mut rng, 3, 4, 0.0, 1.0).unwrap();
        let m_all = BinaryMask { layers: vec![mask.clone()] };
        let once = freeze_gradients(std::slice::from_ref(&g), &m_all).unwrap();
        let twice = freeze_gradients(&once, &m_all).unwrap();
        prop_assert_eq!(&once, &twice);
        for i in 0..g.len() {
            let expected = if mask.data()[i] != 0.0 { 0.0 } else { g.data()[i] };
            prop_assert_eq!(once[0].data()[i], expected);
        }
    }

    #[test]
    fn reinit_keeps_frozen_parameters_bit_exact(mask in bits(4, 5), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let net = Network::new(5, &[4], 0.5, LossScale::One, &mut rng).unwrap();
        let mut layer = net.layers[0].clone();
        let before = layer.clone();
        reinit_va_params(&mut layer, &mask, &mut rng).unwrap();
        for i in 0..mask.len() {
            if mask.data()[i] != 0.0 {
                prop_assert_eq!(layer.mu.data()[i].to_bits(), before.mu.data()[i].to_bits());
                prop_assert_eq!(layer.log_sigma.data()[i].to_bits(), before.log_sigma.data()[i].to_bits());
            }
        }
        prop_assert_eq!(&layer.weight, &before.weight);
    }

    #[test]
    fn cumulative_mask_is_union_and_monotone(seed in any::<u64>(), tasks in 1usize..5) {
        let (net, pool) = trained_pool(seed, tasks);
        let shapes = net.layer_shapes();
        let all = combine_masks(&pool.artifacts, &shapes).unwrap();
        let mut reversed = pool.artifacts.clone();
        reversed.reverse();
        prop_assert_eq!(&combine_masks(&reversed, &shapes).unwrap(), &all);
        for l in 0..shapes.len() {
            for i in 0..all.layers[l].len() {
                let any = pool.artifacts.iter().any(|a| a.masks.layers[l].data()[i] != 0.0);
                prop_assert_eq!(all.layers[l].data()[i], f64::from(u8::from(any)));
            }
        }
    }

    #[test]
    fn pool_encoding_round_trips(seed in any::<u64>(), tasks in 1usize..4) {
        let (net, pool) = trained_pool(seed, tasks);
        let bytes = encode_pool(&net, &pool).unwrap();
        let (net2, pool2) = decode_pool(&bytes).unwrap();
        prop_assert_eq!(&pool2.artifacts, &pool.artifacts);
        prop_assert_eq!(encode_pool(&net2, &pool2).unwrap(), bytes);
    }

    #[test]
    fn k_rank_is_monotone_in_delta(values in proptest::collection::vec(0.0f64..10.0, 1..20), d1 in 0.01f64..0.99, d2 in 0.01f64..0.99) {
        let mut sv = values;
        sv.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sv[0] > 0.0);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (klo, khi) = (k_rank(&sv, lo).unwrap(), k_rank(&sv, hi).unwrap());
        prop_assert!(1 <= klo && klo <= khi && khi <= sv.len());
    }

    #[test]
    fn forget_free_matrices_have_zero_bwt(diag in proptest::collection::vec(0.0f64..=1.0, 2..8)) {
        let rows: Vec<Vec<f64>> = (0..diag.len()).map(|t| diag[..=t].to_vec()).collect();
        let a = AccuracyMatrix::from_rows(rows).unwrap();
        prop_assert_eq!(bwt(&a), Some(0.0));
        let m = acc(&a).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }
}
