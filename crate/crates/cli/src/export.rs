use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// Maps `v · scale` from [0, 1] to 0..=255, clamping out-of-range values.
pub(crate) fn to_gray8(values: &[f64], scale: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| ((v * scale).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes an 8-bit grayscale PNG of `width × height` row-major pixels.
pub(crate) fn write_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> anyhow::Result<()> {
    assert_eq!(pixels.len(), width * height);
    let file = File::create(path).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(pixels)?;
    writer.finish()?;
    Ok(())
}
