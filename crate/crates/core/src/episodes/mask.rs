//! 8-bit single-channel PNG masks; pixel value is the class label.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::ClassMask;

fn decode(path: &Path) -> Result<ClassMask> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(Error::MaskNotSingleChannel(format!(
            "{color:?} at {depth:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidShape("mask image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        labels.extend_from_slice(&row[..w]);
    }
    ClassMask::new(h, w, labels)
}

/// Reads a label mask and checks it against the expected `(H, W)`.
pub fn read_mask(path: impl AsRef<Path>, expected_size: (usize, usize)) -> Result<ClassMask> {
    let path = path.as_ref();
    let mask = decode(path).map_err(|e| e.at_path(path))?;
    if mask.size() != expected_size {
        return Err(Error::MaskSizeMismatch {
            expected: expected_size,
            found: mask.size(),
        }
        .at_path(path));
    }
    Ok(mask)
}

pub fn write_mask(mask: &ClassMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write = || -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, mask.width() as u32, mask.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(mask.labels())?;
        writer.finish()?;
        Ok(())
    };
    write().map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_ignore_survive_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = ClassMask::new(2, 3, vec![0, 1, 255, 1, 0, 0]).unwrap();
        write_mask(&mask, &path).unwrap();
        assert_eq!(read_mask(&path, (2, 3)).unwrap(), mask);

        let zeros = ClassMask::filled(4, 4, 0).unwrap();
        write_mask(&zeros, &path).unwrap();
        let back = read_mask(&path, (4, 4)).unwrap();
        assert_eq!(
            back.classes_present().into_iter().collect::<Vec<_>>(),
            vec![0]
        );
    }

    #[test]
    fn wrong_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        write_mask(&ClassMask::filled(2, 2, 1).unwrap(), &path).unwrap();
        let err = read_mask(&path, (3, 2)).unwrap_err();
        assert!(matches!(err.root(), Error::MaskSizeMismatch { .. }));
    }

    #[test]
    fn rgb_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let file = BufWriter::new(File::create(&path).unwrap());
        let mut enc = png::Encoder::new(file, 2, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0; 6]).unwrap();
        w.finish().unwrap();
        let err = read_mask(&path, (1, 2)).unwrap_err();
        assert!(matches!(err.root(), Error::MaskNotSingleChannel(_)));
        assert!(err.to_string().contains("mask must be single-channel"));
    }
}
