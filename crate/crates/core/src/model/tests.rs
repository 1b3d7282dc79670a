use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradsuite::{check_model, GRAD_TOLERANCE};
use crate::tensor::Tensor;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::uniform([3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn restore_preserves_shape_and_is_finite() {
    let model = MoweModel::new(ModelConfig::desk(32, 24), 1).unwrap();
    let out = model.restore(&random_image(32, 24, 2)).unwrap();
    assert_eq!(out.image.shape(), &[3, 32, 24]);
    assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.weather_logits.shape(), &[5]);

    let mut g = Graph::inference(model.params());
    let x = g.tape.constant(random_image(32, 24, 3));
    let raw = model.forward(&mut g, x).unwrap();
    assert!(g.tape.value(raw.pred).is_finite());
}

#[test]
fn bad_image_shape_is_a_dimension_error() {
    let model = MoweModel::new(ModelConfig::tiny(16, 16), 1).unwrap();
    assert!(matches!(
        model.restore(&random_image(16, 20, 0)),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        MoweModel::new(ModelConfig::tiny(16, 18), 1),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn classifier_tokens_align_with_restoration_grid() {
    let cfg = ModelConfig::desk(32, 48);
    let model = MoweModel::new(cfg.clone(), 4).unwrap();
    let (logits, tokens) = model.classify(&random_image(32, 48, 5)).unwrap();
    assert_eq!(logits.shape(), &[cfg.num_weather_classes]);
    assert_eq!(tokens.shape(), &[cfg.num_tokens(), cfg.weather_dim]);
    assert_eq!(
        model.restore(&random_image(32, 48, 5)).unwrap().records[0]
            .gates
            .shape(),
        &[cfg.num_tokens(), 4]
    );
}

#[test]
fn zero_tail_predicts_zero_image() {
    let mut model = MoweModel::new(ModelConfig::desk(16, 16), 6).unwrap();
    model.zero_tail();
    let mut g = Graph::inference(model.params());
    let x = g.tape.constant(random_image(16, 16, 7));
    let out = model.forward(&mut g, x).unwrap();
    assert!(g.tape.value(out.pred).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_blocks_are_identity_maps() {
    let mut model = MoweModel::new(ModelConfig::desk(16, 16), 8).unwrap();
    model.zero_block_outputs();
    let grid = model.config().grid();
    let mut g = Graph::inference(model.params());
    let z = g.tape.constant(Tensor::randn(
        [16, 32],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(9),
    ));
    let w = g.tape.constant(Tensor::randn(
        [16, 16],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(10),
    ));
    for b in &model.blocks {
        let y = b.attn.forward(&mut g, z).unwrap().tokens;
        let out = b.moe.forward(&mut g, y, Some(w), grid, false).unwrap();
        assert_eq!(g.tape.value(out.tokens), g.tape.value(z));
    }
}

#[test]
fn gates_have_exactly_k_nonzeros() {
    for preset in ["desk", "n4-k0", "n16-k4", "tiny"] {
        let cfg = ModelConfig::preset(preset, 16, 16).unwrap();
        let model = MoweModel::new(cfg.clone(), 11).unwrap();
        let out = model.restore(&random_image(16, 16, 12)).unwrap();
        for rec in &out.records {
            for (row, sel) in rec.gates.data().chunks(cfg.num_experts).zip(&rec.selected) {
                assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), cfg.top_k);
                assert_eq!(sel.len(), cfg.top_k);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = ModelConfig::desk(16, 16);
    let a = MoweModel::new(cfg.clone(), 3).unwrap();
    let b = MoweModel::new(cfg, 3).unwrap();
    let img = random_image(16, 16, 1);
    let (ra, rb) = (a.restore(&img).unwrap(), b.restore(&img).unwrap());
    assert_eq!(ra.image, rb.image);
    assert_eq!(ra.records, rb.records);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = ModelConfig::preset("n16-k4", 16, 16).unwrap();
    let model = MoweModel::new(cfg.clone(), 21).unwrap();
    let bytes = model.to_checkpoint().to_bytes().unwrap();
    let ckpt = crate::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    let back = MoweModel::from_checkpoint(&ckpt, Some(&cfg)).unwrap();
    assert_eq!(back.params(), model.params());

    let other = ModelConfig {
        router: RouterKind::Plain,
        ..cfg
    };
    match MoweModel::from_checkpoint(&ckpt, Some(&other)) {
        Err(Error::ConfigMismatch { field, .. }) => assert_eq!(field, "router"),
        r => panic!("expected a mismatch, got {:?}", r.map(|_| ())),
    }
}

#[test]
fn routing_on_normed_tokens_changes_gates() {
    let cfg = ModelConfig::desk(16, 16);
    let a = MoweModel::new(cfg.clone(), 5).unwrap();
    let b = MoweModel::new(
        ModelConfig {
            route_on_normed: true,
            ..cfg
        },
        5,
    )
    .unwrap();
    let img = random_image(16, 16, 2);
    assert_ne!(
        a.restore(&img).unwrap().records,
        b.restore(&img).unwrap().records
    );
}

#[test]
fn tiny_model_matches_finite_differences() {
    let cfg = ModelConfig::tiny(16, 16);
    let check = check_model(&cfg, 0, None).unwrap();
    assert!(check.max_rel_err < GRAD_TOLERANCE, "{check:?}");
}

#[test]
fn weather_tokens_are_detached_from_restoration_loss() {
    let model = MoweModel::new(ModelConfig::tiny(16, 16), 2).unwrap();
    let mut g = Graph::new(model.params());
    let x = g.tape.constant(random_image(16, 16, 4));
    let out = model.forward(&mut g, x).unwrap();
    let loss = g.tape.mean(out.pred).unwrap();
    g.tape.backward(loss).unwrap();
    let grads = g.param_grads();
    for id in model.params().ids() {
        let gsum: f64 = grads[id.index()]
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .map(|v| v.abs())
            .sum();
        if model.params().name(id).starts_with(CLASSIFIER_PREFIX) {
            assert_eq!(gsum, 0.0, "{}", model.params().name(id));
        }
    }
    let head = model.params().find("head.0.w").unwrap();
    assert!(grads[head.index()]
        .as_ref()
        .unwrap()
        .data()
        .iter()
        .any(|&v| v != 0.0));
}
