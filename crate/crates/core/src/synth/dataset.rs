use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::gen_scene;
use super::weather::{sample_params, WeatherKind, WeatherParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "# mowe-dataset v1";

#[derive(Clone, Debug, PartialEq)]
pub struct WeatherSample {
    pub id: String,
    pub clean: Tensor,
    pub degraded: Tensor,
    /// Per-pixel semantic classes of the clean scene.
    pub semantic: Vec<u8>,
    pub label: WeatherKind,
    pub params: WeatherParams,
    pub scene_seed: u64,
    /// Seed of the weather layer (particle placement).
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Samples per weather kind, indexed by [`WeatherKind::index`].
    pub counts: [usize; 5],
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
}

impl DatasetConfig {
    pub fn uniform(per_kind: usize, height: usize, width: usize, base_seed: u64) -> Self {
        Self {
            counts: [per_kind; 5],
            height,
            width,
            base_seed,
        }
    }

    pub fn count(&self, kind: WeatherKind) -> usize {
        self.counts[kind.index()]
    }
}

/// Sample indices per split. Splits never share a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: [usize; 3],
}

pub const DEFAULT_SPLIT_RATIO: [usize; 3] = [7, 1, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<WeatherSample>,
    pub split: DatasetSplit,
}

/// SplitMix64 finalizer; spreads structured seeds over the whole 64-bit range.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rounds every value to the nearest multiple of 1/255, i.e. what an 8-bit file stores.
pub fn quantize(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn scene_split(n_scenes: usize, ratio: [usize; 3]) -> [usize; 3] {
    let total: usize = ratio.iter().sum();
    let train = (n_scenes * ratio[0] + total / 2) / total;
    let val = ((n_scenes * ratio[1] + total / 2) / total).min(n_scenes - train);
    [train, val, n_scenes - train - val]
}

/// Generates one sample for each weather kind of each scene, up to the per-kind counts.
///
/// Every kind uses scenes `0..count`, so kinds with equal counts see the same clean frames.
/// Scenes are split 7:1:2 in index order.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.counts.iter().sum::<usize>() == 0 {
        return Err(Error::Parameter("dataset counts are all zero".into()));
    }
    let n_scenes = *config.counts.iter().max().unwrap();
    let [n_train, n_val, _] = scene_split(n_scenes, DEFAULT_SPLIT_RATIO);
    let mut samples = Vec::new();
    let mut split = DatasetSplit {
        train: vec![],
        val: vec![],
        test: vec![],
        ratio: DEFAULT_SPLIT_RATIO,
    };
    for scene in 0..n_scenes {
        let scene_seed = derive_seed(config.base_seed, scene as u64);
        let generated = gen_scene(scene_seed, config.height, config.width)?;
        let clean = quantize(&generated.image);
        for kind in WeatherKind::ALL {
            if scene >= config.count(kind) {
                continue;
            }
            let seed = derive_seed(scene_seed, 1 + kind.index() as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = sample_params(kind, config.height, &mut rng);
            let degraded = quantize(&params.apply(&clean, seed)?);
            let idx = samples.len();
            let bucket = if scene < n_train {
                &mut split.train
            } else if scene < n_train + n_val {
                &mut split.val
            } else {
                &mut split.test
            };
            bucket.push(idx);
            samples.push(WeatherSample {
                id: format!("s{scene:04}_{kind}"),
                clean: clean.clone(),
                degraded,
                semantic: generated.labels.clone(),
                label: kind,
                params,
                scene_seed,
                seed,
            });
        }
    }
    Ok(Dataset {
        config: config.clone(),
        samples,
        split,
    })
}

impl Dataset {
    pub fn subset(&self, split: Split) -> Vec<&WeatherSample> {
        let idx = match split {
            Split::Train => &self.split.train,
            Split::Val => &self.split.val,
            Split::Test => &self.split.test,
        };
        idx.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn split_of(&self, index: usize) -> Split {
        if self.split.train.contains(&index) {
            Split::Train
        } else if self.split.val.contains(&index) {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Writes PPM images, PGM semantic masks and a line-per-sample manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["clean", "degraded", "mask"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
        let c = &self.config;
        writeln!(
            manifest,
            "{MANIFEST_MAGIC} height={} width={} base_seed={} counts={}",
            c.height,
            c.width,
            c.base_seed,
            c.counts.map(|v| v.to_string()).join(",")
        )?;
        for (i, s) in self.samples.iter().enumerate() {
            let clean = format!("clean/{}.ppm", s.id);
            let degraded = format!("degraded/{}.ppm", s.id);
            let mask = format!("mask/{}.pgm", s.id);
            write_ppm(&dir.join(&clean), &s.clean)?;
            write_ppm(&dir.join(&degraded), &s.degraded)?;
            write_pgm(&dir.join(&mask), &s.semantic, c.width, c.height)?;
            writeln!(
                manifest,
                "id={}\tweather_label={}\tsplit={}\tscene_seed={}\tseed={}\tclean_path={}\tdegraded_path={}\tmask_path={}\tparams={}",
                s.id,
                s.label,
                self.split_of(i).name(),
                s.scene_seed,
                s.seed,
                clean,
                degraded,
                mask,
                s.params
            )?;
        }
        manifest.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix(MANIFEST_MAGIC))
            .ok_or_else(|| Error::Format("missing manifest header".into()))?;
        let fields = parse_fields(header.trim(), ' ')?;
        let get = |k: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("manifest header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{k}`")))
        };
        let counts: Vec<usize> = get("counts")?
            .split(',')
            .map(|v| v.parse().map_err(|_| Error::Format("bad counts".into())))
            .collect::<Result<_>>()?;
        let config = DatasetConfig {
            counts: counts
                .try_into()
                .map_err(|_| Error::Format("counts needs 5 entries".into()))?,
            height: num("height")? as usize,
            width: num("width")? as usize,
            base_seed: num("base_seed")?,
        };
        let mut samples = Vec::new();
        let mut split = DatasetSplit {
            train: vec![],
            val: vec![],
            test: vec![],
            ratio: DEFAULT_SPLIT_RATIO,
        };
        for line in lines.filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let rec = parse_fields(line, '\t')?;
            let get = |k: &str| -> Result<&str> {
                rec.iter()
                    .find(|(key, _)| key == k)
                    .map(|(_, v)| v.as_str())
                    .ok_or_else(|| Error::Format(format!("manifest record lacks `{k}`: {line}")))
            };
            let parse_u64 = |k: &str| -> Result<u64> {
                get(k)?
                    .parse()
                    .map_err(|_| Error::Format(format!("bad `{k}`")))
            };
            let clean = read_ppm(&dir.join(get("clean_path")?))?;
            let degraded = read_ppm(&dir.join(get("degraded_path")?))?;
            let semantic = read_pgm(&dir.join(get("mask_path")?))?;
            let idx = samples.len();
            match get("split")? {
                "train" => split.train.push(idx),
                "val" => split.val.push(idx),
                "test" => split.test.push(idx),
                other => return Err(Error::Format(format!("unknown split `{other}`"))),
            }
            samples.push(WeatherSample {
                id: get("id")?.to_string(),
                clean,
                degraded,
                semantic,
                label: get("weather_label")?.parse()?,
                params: get("params")?.parse()?,
                scene_seed: parse_u64("scene_seed")?,
                seed: parse_u64("seed")?,
            });
        }
        Ok(Dataset {
            config,
            samples,
            split,
        })
    }
}

fn parse_fields(line: &str, sep: char) -> Result<Vec<(String, String)>> {
    line.split(sep)
        .filter(|f| !f.is_empty())
        .map(|f| {
            f.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("expected key=value, got `{f}`")))
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6 PPM of a `[3×H×W]` image in `[0, 1]`.
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::Dimension(format!("PPM needs 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = img.data();
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|p| (0..3).map(move |k| to_u8(d[k * plane + p])))
        .collect();
    let file = BufWriter::new(fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let raw = img.into_raw();
    Tensor::new(
        [3, h, w],
        (0..3 * plane)
            .map(|i| raw[(i % plane) * 3 + i / plane] as f64 / 255.0)
            .collect(),
    )
}

fn write_pgm(path: &Path, labels: &[u8], w: usize, h: usize) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(labels, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn read_pgm(path: &Path) -> Result<Vec<u8>> {
    Ok(image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8()
        .into_raw())
}
