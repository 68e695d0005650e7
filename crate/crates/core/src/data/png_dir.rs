use std::fs::File;
use std::path::Path;

use super::dataset::Dataset;
use super::format::FormatError;

fn decode_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| FormatError::Malformed(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| FormatError::Malformed("png too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| FormatError::Malformed(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let px = &buf[..info.buffer_size()];
    let mut out = vec![0f32; 3 * h * w];
    for i in 0..h * w {
        let s = &px[i * channels..(i + 1) * channels];
        let rgb = match channels {
            1 | 2 => [s[0]; 3],
            _ => [s[0], s[1], s[2]],
        };
        for c in 0..3 {
            out[c * h * w + i] = rgb[c] as f32 / 255.0;
        }
    }
    Ok((h, w, out))
}

/// Reads `<dir>/<class>/*.png` into an RGB dataset, labelling classes in sorted name order.
pub fn load_png_dir(dir: &Path) -> Result<Dataset, FormatError> {
    let mut classes: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(FormatError::Malformed(format!("{} has no class directories", dir.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut size = None;
    for (label, class_dir) in classes.iter().enumerate() {
        let mut files: Vec<_> = std::fs::read_dir(class_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let (h, w, px) = decode_rgb(&f)?;
            match size {
                None => size = Some((h, w)),
                Some(s) if s != (h, w) => {
                    return Err(FormatError::Malformed(format!("{} is {h}x{w}, expected {}x{}", f.display(), s.0, s.1)))
                }
                _ => {}
            }
            images.extend(px);
            labels.push(label as u32);
        }
    }
    let (h, w) = size.ok_or_else(|| FormatError::Malformed("no png files found".into()))?;
    Dataset::new((3, h, w), images, Some(labels), classes.len())
}
