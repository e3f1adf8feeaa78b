//! MNIST in the IDX distribution format.
//!
//! IDX files start with a big-endian magic number (`0x00000803` for unsigned
//! byte rank-3 image tensors, `0x00000801` for rank-1 label vectors), followed
//! by one big-endian `u32` per dimension and then the raw payload.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const N_CLASSES: usize = 10;

/// Environment variable overriding the dataset cache root.
pub const CACHE_ENV: &str = "LIGHTNET_CACHE";

pub const DEFAULT_MIRRORS: &[&str] = &[
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated IDX stream: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{extra} trailing bytes after IDX payload")]
    TrailingData { extra: usize },
    #[error("label {value} at index {index} is not a class in 0..{N_CLASSES}")]
    InvalidLabel { index: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{file}: expected {expected} bytes, found {found}")]
    SizeMismatch { file: String, expected: usize, found: usize },
    #[error("offline mode and {file} is not in the cache at {dir}")]
    Offline { file: String, dir: PathBuf },
    #[error("download of {file} failed: {reason}")]
    Network { file: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Decoded rank-3 IDX image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `count × rows × cols` pixels.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, index: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[index * size..(index + 1) * size]
    }
}

fn read_header(bytes: &[u8], magic: u32, rank: usize) -> Result<Vec<usize>, DataError> {
    let header_len = 4 * (rank + 1);
    if bytes.len() < header_len {
        return Err(DataError::Truncated { needed: header_len, available: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    let found = word(0);
    if found != magic {
        return Err(DataError::WrongMagic { expected: magic, found });
    }
    Ok((1..=rank).map(|i| word(i) as usize).collect())
}

fn check_payload(bytes: &[u8], header_len: usize, payload: usize) -> Result<(), DataError> {
    let needed = header_len + payload;
    match bytes.len().cmp(&needed) {
        std::cmp::Ordering::Less => Err(DataError::Truncated { needed, available: bytes.len() }),
        std::cmp::Ordering::Greater => Err(DataError::TrailingData { extra: bytes.len() - needed }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let dims = read_header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    check_payload(bytes, 16, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let dims = read_header(bytes, LABELS_MAGIC, 1)?;
    check_payload(bytes, 8, dims[0])?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v as usize >= N_CLASSES) {
        return Err(DataError::InvalidLabel { index, value });
    }
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Flattened images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<usize>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<usize>, split: Split) -> Result<Self, DataError> {
        if images.nrows() != labels.len() {
            return Err(DataError::CountMismatch { images: images.nrows(), labels: labels.len() });
        }
        Ok(Self { images, labels, split })
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.images.ncols()
    }

    /// First `n` samples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

/// Scales pixels by 1/255 and flattens each image into one row.
pub fn preprocess(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset, DataError> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    let width = images.rows * images.cols;
    let pixels = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let matrix = Array2::from_shape_vec((images.count, width), pixels)
        .expect("pixel count checked by the IDX parser");
    Dataset::new(matrix, labels.iter().map(|&l| l as usize).collect(), split)
}

/// The four distribution files: cache name and decoded byte size.
const MNIST_FILES: [(&str, &str, usize); 4] = [
    ("train-images", "train-images-idx3-ubyte", 16 + 60_000 * 784),
    ("train-labels", "train-labels-idx1-ubyte", 8 + 60_000),
    ("t10k-images", "t10k-images-idx3-ubyte", 16 + 10_000 * 784),
    ("t10k-labels", "t10k-labels-idx1-ubyte", 8 + 10_000),
];

/// `$LIGHTNET_CACHE`, else `$HOME/.cache/lightnet`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("lightnet")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn download(file: &str, remote: &str, mirrors: &[&str], dest: &Path) -> Result<(), DataError> {
    let mut last = String::from("no mirrors configured");
    for mirror in mirrors {
        let url = format!("{mirror}{remote}.gz");
        let fetched = ureq::get(&url).call().map_err(|e| e.to_string()).and_then(|resp| {
            let mut buf = Vec::new();
            resp.into_body().into_reader().read_to_end(&mut buf).map_err(|e| e.to_string())?;
            Ok(buf)
        });
        match fetched {
            Ok(bytes) => {
                let tmp = dest.with_extension("part");
                fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
                fs::rename(&tmp, dest).map_err(io_err(dest))?;
                return Ok(());
            }
            Err(e) => last = format!("{url}: {e}"),
        }
    }
    Err(DataError::Network { file: file.to_string(), reason: last })
}

fn find_file(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))].into_iter().find(|p| p.exists())
}

/// Loads `train-images`, `train-labels`, `t10k-images` and `t10k-labels`
/// (each raw or `.gz`) from `dir` without checking their sizes.
pub fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let mut contents = Vec::with_capacity(4);
    for (name, _, _) in MNIST_FILES {
        let path = find_file(dir, name).ok_or_else(|| DataError::Io {
            path: dir.join(name),
            source: io::Error::new(io::ErrorKind::NotFound, "IDX file not found"),
        })?;
        contents.push(read_maybe_gz(&path)?);
    }
    decode_all(&contents)
}

fn decode_all(contents: &[Vec<u8>]) -> Result<(Dataset, Dataset), DataError> {
    let train = preprocess(&parse_idx_images(&contents[0])?, &parse_idx_labels(&contents[1])?, Split::Train)?;
    let test = preprocess(&parse_idx_images(&contents[2])?, &parse_idx_labels(&contents[3])?, Split::Test)?;
    Ok((train, test))
}

/// Loads MNIST from `<cache>/mnist/`, downloading missing files unless `offline`.
///
/// Each file may be stored raw or gzip-compressed (`<name>` or `<name>.gz`).
/// Returns `(train, test)`.
pub fn fetch_or_load(cache_dir: &Path, offline: bool) -> Result<(Dataset, Dataset), DataError> {
    fetch_or_load_from(cache_dir, offline, DEFAULT_MIRRORS)
}

pub fn fetch_or_load_from(
    cache_dir: &Path,
    offline: bool,
    mirrors: &[&str],
) -> Result<(Dataset, Dataset), DataError> {
    let dir = cache_dir.join("mnist");
    let mut contents = Vec::with_capacity(4);
    for (name, remote, size) in MNIST_FILES {
        let path = if let Some(found) = find_file(&dir, name) {
            found
        } else if offline {
            return Err(DataError::Offline { file: name.to_string(), dir });
        } else {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let gz = dir.join(format!("{name}.gz"));
            download(name, remote, mirrors, &gz)?;
            gz
        };
        let bytes = read_maybe_gz(&path)?;
        if bytes.len() != size {
            return Err(DataError::SizeMismatch { file: name.to_string(), expected: size, found: bytes.len() });
        }
        contents.push(bytes);
    }
    decode_all(&contents)
}
