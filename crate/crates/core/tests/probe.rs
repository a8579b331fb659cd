use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvt_core::data_io::{render_synthetic, SynthSpec};
use ssvt_core::metrics::accuracy;
use ssvt_core::probe::{self, predict, stratified_split, train_head, LinearHead, ProbeSettings, DEFAULT_RATIOS};
use ssvt_core::vit::{self, ModelConfig};
use ssvt_core::{Error, Tensor};

fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes * per_class).map(|i| i % classes).collect()
}

#[test]
fn split_examples() {
    let s = stratified_split(&balanced_labels(2, 10), 2, DEFAULT_RATIOS, 0).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (12, 4, 4));
    let labels: Vec<usize> = [vec![0; 5], vec![1; 10]].concat();
    let s = stratified_split(&labels, 2, DEFAULT_RATIOS, 1).unwrap();
    let count = |part: &[usize], c| part.iter().filter(|&&i| labels[i] == c).count();
    assert_eq!([count(&s.train, 0), count(&s.val, 0), count(&s.test, 0)], [3, 1, 1]);
    let two = [0, 0, 1, 1, 1];
    match stratified_split(&two, 2, DEFAULT_RATIOS, 0) {
        Err(Error::Input(m)) => assert!(m.contains("class 0"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(stratified_split(&labels, 2, [0.5, 0.5, 0.5], 0), Err(Error::Config(_))));
}

#[test]
fn separable_features_are_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels = balanced_labels(2, 20);
    let data: Vec<f64> = labels
        .iter()
        .flat_map(|&l| {
            let side = if l == 1 { 1.0 } else { -1.0 };
            let a = side * rng.random_range(0.5..2.0);
            [a, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let features = Tensor::new(&[labels.len(), 3], data).unwrap();
    let split = stratified_split(&labels, 2, DEFAULT_RATIOS, 3).unwrap();
    let settings = ProbeSettings::default();
    let (head, trace) = train_head(&features, &labels, 2, &split, &settings).unwrap();
    assert!(trace.len() <= 200);
    let (_, pred) = predict(&head, &features).unwrap();
    let train_pred: Vec<usize> = split.train.iter().map(|&i| pred[i]).collect();
    let train_truth: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    assert_eq!(accuracy(&train_pred, &train_truth).unwrap(), 1.0);

    let (again, _) = train_head(&features, &labels, 2, &split, &settings).unwrap();
    assert!(head.bits_eq(&again));
}

#[test]
fn constant_features_give_the_majority_class() {
    let labels: Vec<usize> = [vec![0; 6], vec![1; 14]].concat();
    let features = Tensor::full(&[labels.len(), 4], 0.3);
    let split = stratified_split(&labels, 2, DEFAULT_RATIOS, 0).unwrap();
    let (head, _) = train_head(&features, &labels, 2, &split, &ProbeSettings::default()).unwrap();
    let (_, pred) = predict(&head, &features).unwrap();
    assert!(pred.iter().all(|&p| p == 1));
    assert_eq!(accuracy(&pred, &labels).unwrap(), 0.7);
}

#[test]
fn test_labels_are_never_read() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = balanced_labels(3, 10);
    let features = Tensor::new(&[30, 4], (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let split = stratified_split(&labels, 3, DEFAULT_RATIOS, 2).unwrap();
    let settings = ProbeSettings { epochs: 40, ..ProbeSettings::default() };
    let (clean, _) = train_head(&features, &labels, 3, &split, &settings).unwrap();
    let mut poisoned = labels.clone();
    let mut poisoned_features = features.clone();
    for &i in &split.test {
        poisoned[i] = 99;
        poisoned_features.data_mut()[i * 4..(i + 1) * 4].fill(f64::NAN);
    }
    let (dirty, _) = train_head(&poisoned_features, &poisoned, 3, &split, &settings).unwrap();
    assert!(clean.bits_eq(&dirty));

    let mut bad = labels.clone();
    bad[split.train[0]] = 3;
    assert!(matches!(train_head(&features, &bad, 3, &split, &settings), Err(Error::Input(_))));
}

#[test]
fn prediction_contract() {
    let head = LinearHead::zeros(5, 3);
    let features = Tensor::full(&[4, 5], 1.5);
    let (probs, pred) = predict(&head, &features).unwrap();
    assert!(probs.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    assert_eq!(pred, vec![0; 4]);
    assert!(matches!(predict(&head, &Tensor::zeros(&[4, 6])), Err(Error::Shape(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = LinearHead {
        weight: Tensor::new(&[5, 3], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        bias: Tensor::new(&[3], vec![0.1, -0.2, 0.0]).unwrap(),
    };
    let x = Tensor::new(&[20, 5], (0..100).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (probs, pred) = predict(&head, &x).unwrap();
    for row in probs.data().chunks_exact(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let scaled = LinearHead {
        weight: Tensor::new(&[5, 3], head.weight.data().iter().map(|v| v * 7.5).collect()).unwrap(),
        bias: Tensor::new(&[3], head.bias.data().iter().map(|v| v * 7.5).collect()).unwrap(),
    };
    assert_eq!(predict(&scaled, &x).unwrap().1, pred);
}

#[test]
fn features_are_pure_and_sensitive() {
    let model = ModelConfig::micro();
    let teacher = vit::init_params(&model, 9).unwrap();
    let spec = SynthSpec { classes: 2, per_class: 2, image_size: 48, seed: 1 };
    let img = render_synthetic(&spec, 0, 0).unwrap();
    let other = render_synthetic(&spec, 1, 1).unwrap();
    let images = vec![img.clone(), other, img];
    let a = probe::extract_features(&teacher, &images).unwrap();
    assert_eq!(a.shape(), &[3, model.embed_dim]);
    let d = model.embed_dim;
    assert_eq!(a.data()[..d], a.data()[2 * d..]);
    assert!(a.bits_eq(&probe::extract_features(&teacher, &images).unwrap()));

    let mut perturbed = teacher.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (_, t) in perturbed.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1e-3..1e-3));
    }
    let b = probe::extract_features(&perturbed, &images).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);

    let grey = Tensor::zeros(&[1, 48, 48]);
    assert!(matches!(probe::extract_features(&teacher, &[grey]), Err(Error::Shape(_))));
}

#[test]
fn head_ignores_per_feature_affine_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = balanced_labels(2, 15);
    let base: Vec<f64> = labels
        .iter()
        .flat_map(|&l| [l as f64 + rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0)])
        .collect();
    let features = Tensor::new(&[30, 2], base.clone()).unwrap();
    let squeezed: Vec<f64> = base
        .chunks_exact(2)
        .flat_map(|r| [0.7 + 0.004 * r[0], -3.0 + 250.0 * r[1]])
        .collect();
    let squeezed = Tensor::new(&[30, 2], squeezed).unwrap();
    let split = stratified_split(&labels, 2, DEFAULT_RATIOS, 4).unwrap();
    let settings = ProbeSettings::default();
    let (a, _) = train_head(&features, &labels, 2, &split, &settings).unwrap();
    let (b, _) = train_head(&squeezed, &labels, 2, &split, &settings).unwrap();
    let (pa, la) = predict(&a, &features).unwrap();
    let (pb, lb) = predict(&b, &squeezed).unwrap();
    assert_eq!(la, lb);
    assert!(pa.max_abs_diff(&pb) < 1e-9);
}
