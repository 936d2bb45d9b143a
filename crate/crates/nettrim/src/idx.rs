//! IDX file ingestion (the MNIST on-disk format): big-endian u32 magic and
//! dimension sizes followed by a raw u8 payload. Files may be gzipped;
//! compression is detected by the 0x1f 0x8b prefix, not the extension.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let mut prefix = [0u8; 2];
    let mut sniff = File::open(path).map_err(|e| Error::io(path, e))?;
    let got = sniff.read(&mut prefix).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    if got == 2 && prefix == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32_be(reader: &mut dyn Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::Data(format!("{}: file too short for header", path.display())))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut reader = open_maybe_gzip(path)?;
    let magic = read_u32_be(&mut reader, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: wrong magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} (images)",
            path.display()
        )));
    }
    let count = read_u32_be(&mut reader, path)? as usize;
    let rows = read_u32_be(&mut reader, path)? as usize;
    let cols = read_u32_be(&mut reader, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Data(format!(
            "{}: zero image dimensions {rows}x{cols}",
            path.display()
        )));
    }
    let mut data = vec![0u8; count * rows * cols];
    reader.read_exact(&mut data).map_err(|_| {
        Error::Data(format!(
            "{}: payload shorter than {count} images of {rows}x{cols}",
            path.display()
        ))
    })?;
    Ok((data, count, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = open_maybe_gzip(path)?;
    let magic = read_u32_be(&mut reader, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: wrong magic {magic:#010x}, expected {LABELS_MAGIC:#010x} (labels)",
            path.display()
        )));
    }
    let count = read_u32_be(&mut reader, path)? as usize;
    let mut data = vec![0u8; count];
    reader.read_exact(&mut data).map_err(|_| {
        Error::Data(format!(
            "{}: payload shorter than {count} labels",
            path.display()
        ))
    })?;
    Ok(data)
}

/// Load an image/label file pair into a dataset; pixels are scaled to
/// [0, 1] by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, count, rows, cols) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Data(format!(
            "{} has {count} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!(
            "{}: label {bad} outside [0, 10)",
            labels_path.display()
        )));
    }
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(Tensor::new(vec![count, 1, rows, cols], data)?, labels)
}

/// Standard MNIST file names under a directory, raw or gzipped.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let pick = |stem: &str| -> Result<std::path::PathBuf> {
        let raw = dir.join(stem);
        if raw.exists() {
            return Ok(raw);
        }
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(Error::Data(format!(
            "missing dataset file {} (or {}.gz)",
            raw.display(),
            stem
        )))
    };
    let train = load_idx(
        &pick("train-images-idx3-ubyte")?,
        &pick("train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        &pick("t10k-images-idx3-ubyte")?,
        &pick("t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Write a dataset back out as an IDX image/label pair. Pixels are
/// quantized to u8 by rounding `p * 255`.
pub fn save_idx(
    dataset: &Dataset,
    images_path: &Path,
    labels_path: &Path,
    gzip: bool,
) -> Result<()> {
    let shape = dataset.images().shape().to_vec();
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(
        dataset
            .images()
            .as_slice()
            .iter()
            .map(|&p| (p * 255.0).round() as u8),
    );

    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(dataset.labels());

    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        if gzip {
            let mut enc =
                flate2::write::GzEncoder::new(&mut file, flate2::Compression::default());
            enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
            enc.finish().map_err(|e| Error::io(path, e))?;
        } else {
            file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}
