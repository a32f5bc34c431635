//! Generate a small planted dataset, save it and load it back.

use rasnet::dataset::{generate_synthetic, load, motif_probe_accuracy, save, SynthConfig, SDS_THRESHOLD};

fn main() -> rasnet::Result<()> {
    let cfg = SynthConfig {
        n_subjects: 20,
        height: 24,
        width: 24,
        fps: 5,
        median_time_s: 2.4,
        time_sigma: 0.25,
        min_time_s: 2.0,
        max_time_s: 3.0,
        disagreement_rate: 0.2,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    println!("{}", data.agreement(SDS_THRESHOLD));
    println!("motif probe accuracy {:.2}", motif_probe_accuracy(&data)?);

    let dir = std::env::temp_dir().join("rasnet-synth-example");
    let manifest = save(&data, &dir)?;
    let back = load(&manifest)?;
    println!("saved to {}, reloaded equal: {}", manifest.display(), back == data);
    let s = &back.subjects[0];
    println!(
        "{}: label {}, SDS sum {}, q1 has {} frames",
        s.subject_id,
        s.label,
        s.sds_sum(),
        s.questions[0].frames.len()
    );
    Ok(())
}
