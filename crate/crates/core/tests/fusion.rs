use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rasnet::fusion::{bce_value, encode_score, fuse_question, FusionHead, Prediction, SlotMask, QUESTIONS};
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;
use rasnet::Error;

#[test]
fn full_size_head_dimensions() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = FusionHead::new("fusion", 128, &[1024, 256], &mut store, &mut rng).unwrap();
    assert_eq!(head.input_dim(), 2660);
    let shapes: Vec<Vec<usize>> = head
        .layer_ids()
        .into_iter()
        .map(|(w, _)| store.get(w).shape().to_vec())
        .collect();
    assert_eq!(shapes, vec![vec![2660, 1024], vec![1024, 256], vec![256, 1]]);
}

#[test]
fn fused_vector_layout() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(vec![0.5, -0.5]));
    let v = fuse_question(&tape, Some(a), 2, 3, 4.25, SlotMask::ALL).unwrap();
    assert_eq!(v.value().data(), &[0.5, -0.5, 0.0, 0.0, 1.0, 0.0, 4.25]);

    let video_only = SlotMask {
        video: true,
        score: false,
        time: false,
    };
    let v = fuse_question(&tape, Some(a), 2, 3, 4.25, video_only).unwrap();
    assert_eq!(v.value().data(), &[0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);

    let tabular = SlotMask {
        video: false,
        score: true,
        time: true,
    };
    let v = fuse_question(&tape, None, 2, 1, 2.0, tabular).unwrap();
    assert_eq!(v.value().data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
}

#[test]
fn fusion_input_errors() {
    let tape = Tape::new();
    assert!(matches!(encode_score(5), Err(Error::Input(_))));
    assert!(matches!(
        fuse_question(&tape, None, 2, 1, 0.0, SlotMask::ALL),
        Err(Error::Input(_))
    ));
    assert!(matches!(
        fuse_question(&tape, None, 2, 1, 1.0, SlotMask::ALL),
        Err(Error::Contract(_))
    ));
    let wrong = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(
        fuse_question(&tape, Some(wrong), 2, 1, 1.0, SlotMask::ALL),
        Err(Error::Dimension { .. })
    ));

    let mut store = ParameterStore::new();
    let head = FusionHead::new("f", 2, &[3], &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let p = store.bind_frozen(&tape);
    let q = fuse_question(
        &tape,
        None,
        2,
        1,
        1.0,
        SlotMask {
            video: false,
            score: true,
            time: true,
        },
    )
    .unwrap();
    assert!(matches!(
        head.forward(&p, &tape, &vec![q; QUESTIONS - 1]),
        Err(Error::Contract(_))
    ));
    assert!(head.forward(&p, &tape, &vec![q; QUESTIONS]).is_ok());
}

#[test]
fn decision_rule_is_strict() {
    assert_eq!(Prediction::from_out(0.0).class(0.5), 0);
    assert_eq!(Prediction::from_out(1e-9).class(0.5), 1);
    assert_eq!(Prediction::from_out(-3.0).class(0.5), 0);
}

#[test]
fn bce_is_convex_in_logit() {
    let loss = |out: f64, y: u8| bce_value(Prediction::from_out(out).p, y);
    let h = 1e-3;
    for y in [0u8, 1] {
        for k in -200..=200 {
            let x = k as f64 * 0.05;
            let second = loss(x + h, y) - 2.0 * loss(x, y) + loss(x - h, y);
            assert!(second >= -1e-12, "y={y} out={x}: {second}");
        }
    }
    assert!((bce_value(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(bce_value(0.0, 1).is_finite());
}
