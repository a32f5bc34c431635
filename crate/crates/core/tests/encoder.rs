use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rasnet::encoder::{Encoder3d, EncoderConfig};
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;
use rasnet::Error;

const FULL_SIZE_MAPS: [[usize; 4]; 9] = [
    [108, 108, 10, 16],
    [54, 54, 10, 16],
    [52, 52, 10, 32],
    [26, 26, 10, 32],
    [24, 24, 10, 64],
    [12, 12, 10, 64],
    [10, 10, 10, 128],
    [5, 5, 5, 128],
    [1, 1, 1, 256],
];

#[test]
fn full_size_chain_matches_table() {
    let chain = EncoderConfig::default().shape_chain().unwrap();
    assert_eq!(chain.maps, FULL_SIZE_MAPS.to_vec());
    assert_eq!(chain.final_kernel, [5, 5, 5]);
    assert_eq!((chain.flat, chain.feature_dim), (256, 128));
}

#[test]
fn full_size_forward_traces_every_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let enc = Encoder3d::new(EncoderConfig::default(), &mut store, &mut rng).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let clip = tape.constant(Tensor::uniform(&[110, 110, 10, 1], 0.0, 1.0, &mut rng));
    let mut trace = Vec::new();
    let f = enc.encode_traced(&p, clip, Some(&mut trace)).unwrap();
    let mut want: Vec<Vec<usize>> = FULL_SIZE_MAPS.iter().map(|s| s.to_vec()).collect();
    want.push(vec![256]);
    want.push(vec![128]);
    assert_eq!(trace, want);
    assert_eq!(f.shape(), vec![128]);
    assert_eq!(
        store.get(store.id("encoder.conv5.kernel").unwrap()).shape(),
        &[5, 5, 5, 128, 256]
    );
}

#[test]
fn compact_sizes_end_in_a_single_voxel() {
    for size in [46, 62, 78, 94, 110] {
        let chain = EncoderConfig::compact(size, [2, 2, 2, 2, 2]).shape_chain().unwrap();
        assert_eq!(chain.maps.last().unwrap(), &[1, 1, 1, 2]);
    }
    let chain = EncoderConfig::compact(46, [2, 4, 4, 8, 16]).shape_chain().unwrap();
    assert_eq!(chain.maps[7], [1, 1, 5, 8]);
    assert_eq!(chain.final_kernel, [1, 1, 5]);
}

#[test]
fn unusable_sizes_rejected() {
    for size in [45, 47, 100] {
        assert!(matches!(
            EncoderConfig::compact(size, [1, 1, 1, 1, 1]).shape_chain(),
            Err(Error::Config(_))
        ));
    }
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder3d::new(EncoderConfig::compact(46, [1, 1, 1, 1, 1]), &mut store, &mut rng).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let wrong = tape.constant(Tensor::zeros(&[46, 46, 9, 1]));
    assert!(matches!(enc.encode_clip(&p, wrong), Err(Error::Dimension { .. })));
}

#[test]
fn clips_share_one_parameter_set() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = Encoder3d::new(EncoderConfig::compact(46, [1, 1, 1, 1, 2]), &mut store, &mut rng).unwrap();
    let a = Tensor::uniform(&[46, 46, 10, 1], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[46, 46, 10, 1], 0.0, 1.0, &mut rng);
    let run = |store: &ParameterStore| {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fa = enc.encode_clip(&p, tape.constant(a.clone())).unwrap().value();
        let fb = enc.encode_clip(&p, tape.constant(b.clone())).unwrap().value();
        ((*fa).clone(), (*fb).clone())
    };
    let before = run(&store);
    let bias = store.id("encoder.fc.bias").unwrap();
    *store.get_mut(bias) = store.get(bias).map(|x| x + 1.0);
    let after = run(&store);
    for (x, y) in before.0.data().iter().zip(after.0.data()) {
        assert!((y - x - 1.0).abs() < 1e-12);
    }
    for (x, y) in before.1.data().iter().zip(after.1.data()) {
        assert!((y - x - 1.0).abs() < 1e-12);
    }
}
