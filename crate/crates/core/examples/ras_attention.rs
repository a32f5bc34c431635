//! Run the attention stack over one question's clip features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;
use rasnet::ras::{temporal_kernel, Ras, RasConfig};

fn main() -> rasnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    let dim = 4;
    let ras = Ras::new(RasConfig::default(), dim, &mut store, &mut rng)?;
    // Ω starts at zero; give it weight so the blocks do something
    for l in 1..=ras.config().blocks {
        *store.get_mut(ras.omega(l)) = Tensor::from_vec(vec![0.5; dim]);
    }

    let features = [[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 1.0]];
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let vars: Vec<_> = features
        .iter()
        .map(|f| tape.constant(Tensor::from_vec(f.to_vec())))
        .collect();
    let a = ras.encode_question(&p, &tape, &vars, &[1, 2, 3])?;
    println!("question feature {:?}", a.value().data());

    let plain: Vec<f64> = (0..dim)
        .map(|k| features.iter().map(|f| f[k]).sum::<f64>() / 3.0)
        .collect();
    println!("plain average    {plain:?}");
    for gap in [1, 3, 10] {
        println!(
            "temporal weight at gap {gap}: {:.4}",
            temporal_kernel(1, 1 + gap, RasConfig::default().sigma)?
        );
    }
    Ok(())
}
