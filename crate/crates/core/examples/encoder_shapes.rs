//! Trace every intermediate shape of the clip encoder at 110x110 input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rasnet::encoder::{Encoder3d, EncoderConfig};
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;

fn main() -> rasnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let enc = Encoder3d::new(EncoderConfig::default(), &mut store, &mut rng)?;
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let clip = tape.constant(Tensor::uniform(&[110, 110, 10, 1], 0.0, 1.0, &mut rng));
    let mut trace = Vec::new();
    enc.encode_traced(&p, clip, Some(&mut trace))?;
    for (i, shape) in trace.iter().enumerate() {
        println!("{i:>2}: {shape:?}");
    }
    println!("{} parameters", store.scalar_count());

    let compact = EncoderConfig::compact(46, [2, 4, 4, 8, 16]).shape_chain()?;
    println!("compact 46x46 maps: {:?}", compact.maps);
    Ok(())
}
