use proptest::prelude::*;
use ssvt_core::data_io::checkpoint::{decode, encode};
use ssvt_core::distill::{cross_entropy, ema_update, sharpen};
use ssvt_core::metrics::{auc_macro_ovr, roc_auc_binary};
use ssvt_core::probe::{apportion, stratified_split, DEFAULT_RATIOS};
use ssvt_core::vit::{init_params, ModelConfig};
use ssvt_core::Tensor;

fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate().filter(|(i, _)| positive[*i]) {
        for (_, &b) in scores.iter().enumerate().filter(|(j, _)| !positive[*j]) {
            pairs += 1.0;
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
        let _ = i;
    }
    wins / pairs
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..32).prop_map(|k| k as f64 / 32.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, p)| p.iter().any(|&b| b) && p.iter().any(|&b| !b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_matches_pair_count((scores, positive) in labeled_scores()) {
        let a = roc_auc_binary(&scores, &positive).unwrap();
        prop_assert!((a - brute_auc(&scores, &positive)).abs() <= 1e-9);
        let flipped: Vec<bool> = positive.iter().map(|b| !b).collect();
        prop_assert!((a + roc_auc_binary(&scores, &flipped).unwrap() - 1.0).abs() <= 1e-12);
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 0.25 * s - 3.0).collect();
        prop_assert!((roc_auc_binary(&exp, &positive).unwrap() - a).abs() <= 1e-12);
        prop_assert!((roc_auc_binary(&affine, &positive).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn macro_auc_is_mean_of_columns(c in 2usize..6, extra in prop::collection::vec((0usize..6, prop::collection::vec(0.0f64..1.0, 6)), 0..40)) {
        let mut labels: Vec<usize> = (0..c).collect();
        let mut data: Vec<f64> = (0..c * c).map(|i| (i % 7) as f64 / 7.0).collect();
        for (l, row) in &extra {
            labels.push(l % c);
            data.extend_from_slice(&row[..c]);
        }
        let probs = Tensor::new(&[labels.len(), c], data).unwrap();
        let (per, mean) = auc_macro_ovr(&probs, &labels).unwrap();
        prop_assert!(per.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!((mean - per.iter().sum::<f64>() / c as f64).abs() <= 1e-12);
    }

    #[test]
    fn splits_are_stratified(sizes in prop::collection::vec(3usize..40, 2..6), seed in any::<u64>()) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let s = stratified_split(&labels, sizes.len(), DEFAULT_RATIOS, seed).unwrap();
        let mut hits = vec![0; labels.len()];
        for &i in s.train.iter().chain(&s.val).chain(&s.test) {
            hits[i] += 1;
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
        for (c, &n) in sizes.iter().enumerate() {
            for (part, r) in [&s.train, &s.val, &s.test].into_iter().zip(DEFAULT_RATIOS) {
                let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((got - n as f64 * r).abs() <= 1.0);
            }
        }
        prop_assert_eq!(s, stratified_split(&labels, sizes.len(), DEFAULT_RATIOS, seed).unwrap());
    }

    #[test]
    fn apportion_sums_and_stays_close(n in 0usize..500, a in 1u32..100, b in 1u32..100, c in 1u32..100) {
        let total = (a + b + c) as f64;
        let ratios = [a as f64 / total, b as f64 / total, c as f64 / total];
        let counts = apportion(n, ratios);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (k, r) in counts.iter().zip(ratios) {
            prop_assert!((*k as f64 - n as f64 * r).abs() < 1.0);
        }
    }

    #[test]
    fn softmax_rows_are_shift_invariant(row in prop::collection::vec(-512i32..512, 1..30), shift in -4096i32..4096) {
        let k = row.len();
        let x = Tensor::new(&[1, k], row.iter().map(|&v| v as f64 / 8.0).collect()).unwrap();
        let y = Tensor::new(&[1, k], row.iter().map(|&v| v as f64 / 8.0 + shift as f64).collect()).unwrap();
        let sx = x.softmax_rows().unwrap();
        prop_assert!(sx.bits_eq(&y.softmax_rows().unwrap()));
        prop_assert!((sx.data().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn cross_entropy_is_minimized_by_the_target(a in prop::collection::vec(-5.0f64..5.0, 2..20), seed in 0u64..1000) {
        let k = a.len();
        let p = sharpen(&Tensor::new(&[1, k], a.clone()).unwrap(), 1.0).unwrap();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * ((seed + i as u64) % 3) as f64 - 1.0).collect();
        let q = sharpen(&Tensor::new(&[1, k], b).unwrap(), 0.5).unwrap();
        prop_assert!(cross_entropy(&p, &q).unwrap() >= cross_entropy(&p, &p).unwrap() - 1e-12);
    }

    #[test]
    fn ema_stays_between_endpoints(lambda in 0.0f64..=1.0) {
        let c = ModelConfig::nano();
        let t0 = init_params(&c, 1).unwrap();
        let s = init_params(&c, 2).unwrap();
        let mut t = t0.clone();
        ema_update(&mut t, &s, lambda).unwrap();
        for ((name, new), (_, old)) in t.iter().zip(t0.iter()) {
            for ((n, o), v) in new.data().iter().zip(old.data()).zip(s.get(name).unwrap().data()) {
                prop_assert!(*n >= o.min(*v) - 1e-15 && *n <= o.max(*v) + 1e-15);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(bits in prop::collection::vec(any::<u64>(), 1..64), key in "[a-z_.]{1,12}", value in "\\PC{0,24}") {
        let n = bits.len();
        let t = Tensor::new(&[n], bits.iter().map(|&b| f64::from_bits(b)).collect()).unwrap();
        let meta = vec![(key, value)];
        let back = decode(&encode(&[("t".to_string(), t.clone())], &meta).unwrap()).unwrap();
        let got = back.tensor("t").unwrap();
        prop_assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.metadata, meta);
    }
}
