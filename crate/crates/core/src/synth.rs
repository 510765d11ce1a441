//! Synthetic structural x statistical texture dataset.
//!
//! Nine classes: three binary structure masks (checkerboard, cross, stripes)
//! times three intensity laws for the on-structure pixels (binomial over
//! {64, 192}, uniform multinomial over {64, 128, 192}, constant 128).
//! Off-structure pixels are 0. Each image draws from its own generator seeded
//! by a hash of `(dataset seed, class, index)`, so generation order does not
//! matter.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::LabeledImages;

pub const IMAGES_PER_CLASS: usize = 100;
pub const NUM_CLASSES: usize = 9;
/// Train / validation / test images per class.
pub const SPLIT_SIZES: [usize; 3] = [70, 10, 20];

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const INFO_FILE: &str = "dataset.json";

macro_rules! token_enum {
    ($name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&v| v == self).expect("listed variant")
            }

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(format!("unknown {} token {other:?}", stringify!($name))),
                }
            }
        }
    };
}

token_enum!(Structural {
    Checkerboard => "checkerboard",
    Cross => "cross",
    Stripes => "stripes",
});

token_enum!(Statistical {
    Binomial => "binomial",
    Multinomial => "multinomial",
    Constant => "constant",
});

token_enum!(Split {
    Train => "train",
    Val => "val",
    Test => "test",
});

/// Joint class index `structural * 3 + statistical`.
pub fn joint_class(structural: Structural, statistical: Statistical) -> usize {
    structural.index() * Statistical::ALL.len() + statistical.index()
}

pub fn class_parts(class: usize) -> Option<(Structural, Statistical)> {
    let n = Statistical::ALL.len();
    Some((
        *Structural::ALL.get(class / n)?,
        *Statistical::ALL.get(class % n)?,
    ))
}

/// Square binary mask, row-major.
pub fn structural_mask(kind: Structural, size: usize) -> Result<Vec<bool>> {
    if size < 3 {
        return Err(Error::InvalidArgument(format!(
            "mask size {size} is below the minimum of 3"
        )));
    }
    let mid = size / 2;
    Ok((0..size * size)
        .map(|p| {
            let (i, j) = (p / size, p % size);
            match kind {
                Structural::Checkerboard => (i + j) % 2 == 0,
                Structural::Cross => i == mid || j == mid,
                Structural::Stripes => j % 2 == 0,
            }
        })
        .collect())
}

/// `count` i.i.d. intensities under the given law.
pub fn sample_statistical<R: Rng>(kind: Statistical, count: usize, rng: &mut R) -> Vec<u8> {
    (0..count)
        .map(|_| match kind {
            Statistical::Binomial => {
                if rng.gen_bool(0.5) {
                    192
                } else {
                    64
                }
            }
            Statistical::Multinomial => [64, 128, 192][rng.gen_range(0..3)],
            Statistical::Constant => 128,
        })
        .collect()
}

/// Fills active mask cells with `intensities` in row-major order; others are 0.
pub fn compose_image(mask: &[bool], intensities: &[u8]) -> Result<Vec<u8>> {
    let active = mask.iter().filter(|&&m| m).count();
    if active != intensities.len() {
        return Err(Error::shape(
            "compose_image",
            format!("{active} active cells but {} intensities", intensities.len()),
        ));
    }
    let mut values = intensities.iter();
    Ok(mask
        .iter()
        .map(|&m| if m { *values.next().expect("counted") } else { 0 })
        .collect())
}

/// Stable 64-bit mix of the dataset seed, class and in-class index.
pub fn image_seed(seed: u64, class: usize, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = mix(seed.wrapping_add(GOLDEN));
    h = mix(h ^ (class as u64).wrapping_add(GOLDEN));
    mix(h ^ (index as u64).wrapping_add(GOLDEN))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSample {
    pub size: usize,
    pub pixels: Vec<u8>,
    pub structural: Structural,
    pub statistical: Statistical,
    pub joint_class: usize,
    pub index: usize,
    pub split: Split,
}

impl SyntheticSample {
    pub fn file_name(&self) -> String {
        format!("class{}_{:03}.pgm", self.joint_class, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub structural: Structural,
    pub statistical: Statistical,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub size: usize,
    pub per_class: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Dataset-level metadata persisted next to the CSV manifest.
#[derive(Serialize, Deserialize)]
struct DatasetInfo {
    size: usize,
    per_class: usize,
    seed: u64,
}

fn split_for(index: usize) -> Split {
    let [train, val, _] = SPLIT_SIZES;
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

pub fn generate_dataset(size: usize, seed: u64) -> Result<(Vec<SyntheticSample>, DatasetManifest)> {
    let mut samples = Vec::with_capacity(NUM_CLASSES * IMAGES_PER_CLASS);
    for &structural in Structural::ALL {
        let mask = structural_mask(structural, size)?;
        let active = mask.iter().filter(|&&m| m).count();
        for &statistical in Statistical::ALL {
            let class = joint_class(structural, statistical);
            for index in 0..IMAGES_PER_CLASS {
                let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, class, index));
                let draws = sample_statistical(statistical, active, &mut rng);
                samples.push(SyntheticSample {
                    size,
                    pixels: compose_image(&mask, &draws)?,
                    structural,
                    statistical,
                    joint_class: class,
                    index,
                    split: split_for(index),
                });
            }
        }
    }
    let manifest = manifest_for(&samples, size, seed);
    Ok((samples, manifest))
}

fn manifest_for(samples: &[SyntheticSample], size: usize, seed: u64) -> DatasetManifest {
    DatasetManifest {
        size,
        per_class: IMAGES_PER_CLASS,
        seed,
        entries: samples
            .iter()
            .map(|s| ManifestEntry {
                path: format!("images/{}", s.file_name()),
                structural: s.structural,
                statistical: s.statistical,
                class: s.joint_class,
                split: s.split,
            })
            .collect(),
    }
}

pub fn encode_pgm(pixels: &[u8], size: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, size as u32, size as u32, ExtendedColorType::L8)
        .map_err(|e| Error::InvalidArgument(format!("pgm encoding failed: {e}")))?;
    Ok(out)
}

/// Decodes an 8-bit binary PGM, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let malformed = |detail: String| Error::Malformed {
        what: "PGM image",
        path: path.to_path_buf(),
        detail,
    };
    if !bytes.starts_with(b"P5") {
        return Err(malformed("missing P5 magic".into()));
    }
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm).map_err(|e| malformed(e.to_string()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => return Err(malformed(format!("expected 8-bit grayscale, got {:?}", other.color()))),
    };
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

pub fn write_dataset(samples: &[SyntheticSample], manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    if samples.len() != manifest.entries.len() {
        return Err(Error::shape(
            "write_dataset",
            format!("{} samples, {} manifest entries", samples.len(), manifest.entries.len()),
        ));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for (sample, entry) in samples.iter().zip(&manifest.entries) {
        let path = dir.join(&entry.path);
        fs::write(&path, encode_pgm(&sample.pixels, sample.size)?).map_err(|e| Error::io(&path, e))?;
    }
    let csv_path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for entry in &manifest.entries {
        w.serialize(entry)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let info_path = dir.join(INFO_FILE);
    let info = DatasetInfo {
        size: manifest.size,
        per_class: manifest.per_class,
        seed: manifest.seed,
    };
    fs::write(&info_path, serde_json::to_vec_pretty(&info)?).map_err(|e| Error::io(&info_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<SyntheticSample>, DatasetManifest)> {
    let info_path = dir.join(INFO_FILE);
    let info: DatasetInfo = serde_json::from_slice(&fs::read(&info_path).map_err(|e| Error::io(&info_path, e))?)
        .map_err(|e| Error::Malformed {
            what: "dataset info",
            path: info_path.clone(),
            detail: e.to_string(),
        })?;

    let csv_path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["path", "structural", "statistical", "class", "split"] {
        return Err(Error::Malformed {
            what: "manifest",
            path: csv_path,
            detail: format!("unexpected header {header:?}"),
        });
    }
    let mut entries = Vec::new();
    for (line, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let entry = row.map_err(|e| Error::Malformed {
            what: "manifest",
            path: csv_path.clone(),
            detail: format!("row {}: {e}", line + 1),
        })?;
        if class_parts(entry.class) != Some((entry.structural, entry.statistical)) {
            return Err(Error::Malformed {
                what: "manifest",
                path: csv_path.clone(),
                detail: format!("row {}: class {} disagrees with its labels", line + 1, entry.class),
            });
        }
        entries.push(entry);
    }

    let mut samples = Vec::with_capacity(entries.len());
    let mut next_index = [0usize; NUM_CLASSES];
    for entry in &entries {
        let path: PathBuf = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (w, h, pixels) = decode_pgm(&bytes, &path)?;
        if w != info.size || h != info.size {
            return Err(Error::Malformed {
                what: "PGM image",
                path,
                detail: format!("{w}x{h} does not match dataset size {}", info.size),
            });
        }
        let index = next_index[entry.class];
        next_index[entry.class] += 1;
        samples.push(SyntheticSample {
            size: info.size,
            pixels,
            structural: entry.structural,
            statistical: entry.statistical,
            joint_class: entry.class,
            index,
            split: entry.split,
        });
    }
    let manifest = DatasetManifest {
        size: info.size,
        per_class: info.per_class,
        seed: info.seed,
        entries,
    };
    Ok((samples, manifest))
}

/// Which label a model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTarget {
    Both,
    Statistical,
    Structural,
}

impl LabelTarget {
    pub const ALL: [LabelTarget; 3] = [Self::Both, Self::Statistical, Self::Structural];

    pub fn num_classes(self) -> usize {
        match self {
            Self::Both => NUM_CLASSES,
            Self::Statistical => Statistical::ALL.len(),
            Self::Structural => Structural::ALL.len(),
        }
    }

    pub fn label(self, sample: &SyntheticSample) -> usize {
        match self {
            Self::Both => sample.joint_class,
            Self::Statistical => sample.statistical.index(),
            Self::Structural => sample.structural.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Both => "both",
            Self::Statistical => "statistical",
            Self::Structural => "structural",
        }
    }
}

/// Images of one split as `(N, 1, size, size)` scaled by `1/255`.
pub fn split_tensor(samples: &[SyntheticSample], split: Split, target: LabelTarget) -> Result<LabeledImages> {
    let chosen: Vec<&SyntheticSample> = samples.iter().filter(|s| s.split == split).collect();
    let size = chosen.first().map_or(0, |s| s.size);
    if chosen.iter().any(|s| s.size != size) {
        return Err(Error::InvalidArgument("mixed image sizes in one split".into()));
    }
    let data = chosen
        .iter()
        .flat_map(|s| s.pixels.iter().map(|&p| f64::from(p) / 255.0))
        .collect();
    let images = Tensor::new([chosen.len(), 1, size, size], data)?;
    let labels = chosen.iter().map(|s| target.label(s)).collect();
    LabeledImages::new(images, labels, target.num_classes())
}
