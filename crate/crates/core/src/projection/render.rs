use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SphericalImageSet;
use crate::dataset::ClassMap;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("io error writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("png encoding failed: {0}")]
    Encoding(#[from] png::EncodingError),
    #[error("image has no normals to render")]
    MissingNormals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Range,
    Reflectivity,
    Labels,
    Normals,
    Valid,
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "range" => Ok(Channel::Range),
            "reflectivity" => Ok(Channel::Reflectivity),
            "labels" => Ok(Channel::Labels),
            "normals" => Ok(Channel::Normals),
            "valid" => Ok(Channel::Valid),
            other => Err(format!("unknown channel '{other}'")),
        }
    }
}

/// RGB8 pixels for one channel: reflectivity and range in grayscale, labels
/// in class colors, normals as `(n + 1) / 2`. Invalid pixels are black.
pub fn render_rgb(img: &SphericalImageSet, channel: Channel, classes: &ClassMap) -> Result<Vec<u8>, RenderError> {
    let mut out = vec![0u8; img.len() * 3];
    let max_range = img.range.iter().zip(&img.valid).filter(|(_, v)| **v).fold(0.0f64, |m, (r, _)| m.max(*r));
    if channel == Channel::Normals && !img.normals_ready {
        return Err(RenderError::MissingNormals);
    }
    for i in 0..img.len() {
        let rgb = match channel {
            Channel::Valid => {
                let g = if img.valid[i] { 255 } else { 0 };
                [g, g, g]
            }
            _ if !img.valid[i] => [0, 0, 0],
            Channel::Range => {
                let g = if max_range > 0.0 { (255.0 * (1.0 - img.range[i] / max_range)).round() as u8 } else { 0 };
                [g, g, g]
            }
            Channel::Reflectivity => {
                let g = (img.reflectivity[i].clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            }
            Channel::Labels => classes.color(img.labels[i]),
            Channel::Normals => {
                if img.normal_valid[i] {
                    let n = img.normals[i];
                    let c = |x: f64| ((x + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8;
                    [c(n[0]), c(n[1]), c(n[2])]
                } else {
                    [0, 0, 0]
                }
            }
        };
        out[3 * i..3 * i + 3].copy_from_slice(&rgb);
    }
    Ok(out)
}

/// Writes an `rows × cols` RGB PNG of the chosen channel.
pub fn render_png(
    img: &SphericalImageSet,
    channel: Channel,
    classes: &ClassMap,
    path: &Path,
) -> Result<(), RenderError> {
    let rgb = render_rgb(img, channel, classes)?;
    let file = File::create(path).map_err(|source| RenderError::Io { path: path.display().to_string(), source })?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.cols as u32, img.rows as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&rgb)?;
    writer.finish()?;
    Ok(())
}
