//! Fuse per-question features with score and time and classify.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rasnet::fusion::{bce_loss, fuse_question, FusionHead, Prediction, SlotMask, QUESTIONS};
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;

fn main() -> rasnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParameterStore::new();
    let head = FusionHead::new("fusion", 128, &[1024, 256], &mut store, &mut rng)?;
    println!(
        "head input {} values, {} parameters",
        head.input_dim(),
        store.scalar_count()
    );

    let tape = Tape::new();
    let p = store.bind(&tape);
    let questions = (0..QUESTIONS)
        .map(|q| {
            let video = tape.constant(Tensor::uniform(&[128], -1.0, 1.0, &mut rng));
            fuse_question(&tape, Some(video), 128, (q % 4 + 1) as u8, 3.5, SlotMask::ALL)
        })
        .collect::<rasnet::Result<Vec<_>>>()?;
    let out = head.forward(&p, &tape, &questions)?;
    let pred = Prediction::from_out(out.value().item());
    println!("out {:.4}, p {:.4}, class {}", pred.out, pred.p, pred.class(0.5));

    let loss = bce_loss(out.sigmoid()?, 1)?;
    let grads = tape.backward(loss)?;
    let (w, _) = head.layer_ids()[0];
    let g = grads.get(p.var(w)).expect("first layer gradient");
    println!(
        "loss {:.4}, first-layer gradient norm {:.4}",
        loss.value().item(),
        g.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    );
    Ok(())
}
