//! Crop an RGB frame around a detected face and resize it to a gray square.

use rasnet::clipper::{preprocess, FaceBox, RawFrame};

fn main() -> rasnet::Result<()> {
    let (height, width) = (120, 160);
    let mut pixels = Vec::with_capacity(height * width * 3);
    for row in 0..height {
        for col in 0..width {
            pixels.extend_from_slice(&[(col * 255 / width) as u8, (row * 255 / height) as u8, 128]);
        }
    }
    let frame = RawFrame::Rgb { height, width, pixels };
    let face = FaceBox::new(60.0, 30.0, 40.0, 50.0);
    let out = preprocess(&frame, face, 46)?;
    println!("face box {face:?}");
    println!("extended {:?}", face.extended());
    println!("output {}x{}, first row {:?}", out.height, out.width, &out.pixels[..8]);
    Ok(())
}
