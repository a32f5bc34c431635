//! Split a question video into overlapping 10-frame clips.

use rasnet::clipper::{clip_count, segment, GrayFrame};

fn main() -> rasnet::Result<()> {
    // a 400-frame answer, e.g. 16 s at 25 fps
    let frames: Vec<GrayFrame> = (0..400).map(|t| GrayFrame::filled(8, 8, (t % 256) as u8)).collect();
    let clips = segment(&frames, 10, 0.5)?;
    println!(
        "{} frames -> {} clips (law gives {})",
        frames.len(),
        clips.len(),
        clip_count(400, 10, 0.5)?
    );
    for c in clips.iter().take(3) {
        println!("clip {} tensor {:?}", c.position, c.values.shape());
    }
    Ok(())
}
