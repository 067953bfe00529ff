//! Class maps as binary PPM images.

use std::fs;
use std::path::Path;

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Colour of class `i + 1`. Unlabeled pixels are black.
pub const PALETTE: [[u8; 3]; 20] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
];

/// RGB triples of `map`, row-major.
pub fn render_map(map: &LabelMap, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    if let Some(&max) = map.labels.iter().max() {
        if max as usize > palette.len() {
            return Err(Error::Argument(format!(
                "label {max} but the palette has {} colours",
                palette.len()
            )));
        }
    }
    Ok(map
        .labels
        .iter()
        .flat_map(|&l| if l == 0 { [0, 0, 0] } else { palette[l as usize - 1] })
        .collect())
}

/// Complete P6 file (maxval 255).
pub fn encode_ppm(map: &LabelMap, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    let pixels = render_map(map, palette)?;
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_ppm(map: &LabelMap, palette: &[[u8; 3]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(map, palette)?).map_err(|e| Error::file(path, e))
}
