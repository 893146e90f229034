//! Labeled frame corpus: generation, stratified splitting and persistence.
//!
//! On disk a dataset is two files. The container holds the frames:
//!
//! ```text
//! header (32 bytes)  "DTDS" | version u16 | frame count u32 | 22 reserved zero bytes
//! frame  (149 bytes) label u8 | angle f64 | dx f64 | dy f64 | force f64 | sigma f64 | seed u64 | 100 readings
//! trailer            CRC-32 of every frame byte, u32
//! ```
//!
//! All integers and floats are little-endian. The manifest sits next to it
//! (`<path>.manifest`) as `key = value` lines describing how the frames were
//! generated.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::seed;
use crate::sensor::{
    contact_detected, simulate_contact, ContactPose, SensorError, SensorSpec, TactileFrame,
    DEFAULT_TOTAL_FORCE_N, TAXELS,
};
use crate::textures::{PatternKind, TextureError, TextureSpec, NUM_CLASSES};

pub const MAGIC: [u8; 4] = *b"DTDS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const FRAME_RECORD_LEN: usize = 1 + 8 * 5 + 8 + TAXELS;
pub const MAX_CONTACT_RETRIES: u32 = 16;
/// Half-width of the uniform foot offset range on each axis.
pub const OFFSET_RANGE_MM: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a dataset container (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("format version mismatch: file has v{found}, this build reads v{expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("container truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("container has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest does not match container: {0}")]
    ManifestMismatch(String),
    #[error("frame {index} has label {label}, outside 0..{NUM_CLASSES}")]
    BadLabel { index: usize, label: u8 },
    #[error(
        "class {class_id} angle bin {bin}: no contact detected after {MAX_CONTACT_RETRIES} draws"
    )]
    NoContact { class_id: u8, bin: usize },
    #[error("invalid generation request: {0}")]
    BadRequest(String),
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Texture(#[from] TextureError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u16,
    pub catalog: Vec<TextureSpec>,
    pub per_class: usize,
    pub sensor: SensorSpec,
    pub noise_sigma: f64,
    pub total_force_n: f64,
    pub master_seed: u64,
    pub min_active_taxels: usize,
}

impl Manifest {
    pub fn frame_count(&self) -> usize {
        self.per_class * self.catalog.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<TactileFrame>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateParams {
    pub per_class: usize,
    pub noise_sigma: f64,
    pub total_force_n: f64,
    pub master_seed: u64,
    /// Active-taxel count a draw needs to be kept as a contact.
    pub min_active_taxels: usize,
}

/// Generation keeps any frame with at least one taxel above the deadband.
/// The sparse-dot plate lights up only about two taxels per step, so the
/// runtime threshold would reject nearly every low-noise draw for it.
pub const GENERATION_MIN_ACTIVE_TAXELS: usize = 1;

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams {
            per_class: 100,
            noise_sigma: 0.3,
            total_force_n: DEFAULT_TOTAL_FORCE_N,
            master_seed: seed::DEFAULT_SEED,
            min_active_taxels: GENERATION_MIN_ACTIVE_TAXELS,
        }
    }
}

/// Seed for draw `attempt` of sample `index` of class `class_id`.
fn sample_seed(master: u64, class_id: u8, index: usize, attempt: u32) -> u64 {
    seed::derive(
        master,
        &[u64::from(class_id), index as u64, u64::from(attempt)],
    )
}

/// Renders sample `index` of one class: the contact angle is drawn inside
/// its own bin of `[0, 2π)`, offsets are uniform, and frames without a
/// detected contact are redrawn.
pub fn generate_sample(
    texture: &TextureSpec,
    index: usize,
    sensor: &SensorSpec,
    params: &GenerateParams,
) -> Result<TactileFrame> {
    let bins = params.per_class as f64;
    for attempt in 0..MAX_CONTACT_RETRIES {
        let s = sample_seed(params.master_seed, texture.class_id, index, attempt);
        let mut rng = seed::rng(s);
        let u: f64 = rng.random();
        let angle_rad = TAU * (index as f64 + u) / bins;
        let dx = rng.random_range(-OFFSET_RANGE_MM..=OFFSET_RANGE_MM);
        let dy = rng.random_range(-OFFSET_RANGE_MM..=OFFSET_RANGE_MM);
        let noise_seed: u64 = rng.random();
        let pose = ContactPose {
            angle_rad,
            offset_mm: (dx, dy),
            total_force_n: params.total_force_n,
        };
        let frame = simulate_contact(texture, &pose, sensor, params.noise_sigma, noise_seed)?;
        if contact_detected(&frame, params.min_active_taxels) {
            return Ok(frame);
        }
    }
    Err(DatasetError::NoContact {
        class_id: texture.class_id,
        bin: index,
    })
}

/// Generates `per_class` frames for every texture, grouped by catalog order.
pub fn generate(
    catalog: &[TextureSpec],
    sensor: &SensorSpec,
    params: &GenerateParams,
) -> Result<Dataset> {
    if params.min_active_taxels == 0 {
        return Err(DatasetError::BadRequest(
            "min_active_taxels must be at least 1".into(),
        ));
    }
    if params.per_class == 0 {
        return Err(DatasetError::BadRequest(
            "per_class must be at least 1".into(),
        ));
    }
    if catalog.is_empty() {
        return Err(DatasetError::BadRequest("catalog is empty".into()));
    }
    let mut seen = [false; NUM_CLASSES];
    for t in catalog {
        t.validate()?;
        let id = usize::from(t.class_id);
        if seen[id] {
            return Err(DatasetError::BadRequest(format!("duplicate class id {id}")));
        }
        seen[id] = true;
    }
    sensor.validate()?;

    let mut frames = Vec::with_capacity(params.per_class * catalog.len());
    for t in catalog {
        for k in 0..params.per_class {
            frames.push(generate_sample(t, k, sensor, params)?);
        }
    }
    Ok(Dataset {
        frames,
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            catalog: catalog.to_vec(),
            per_class: params.per_class,
            sensor: *sensor,
            noise_sigma: params.noise_sigma,
            total_force_n: params.total_force_n,
            master_seed: params.master_seed,
            min_active_taxels: params.min_active_taxels,
        },
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.frames
            .iter()
            .map(|f| f.label.unwrap_or(u8::MAX))
            .collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for f in &self.frames {
            if let Some(l) = f.label {
                if let Some(c) = counts.get_mut(usize::from(l)) {
                    *c += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified train/validation split. Each class contributes
/// `round(n_c * val_fraction)` validation frames chosen by a seeded shuffle.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::BadSplit(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, f) in ds.frames.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| DatasetError::BadSplit(format!("frame {i} is unlabeled")))?;
        by_class.entry(label).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut idx) in by_class {
        let n = idx.len();
        let n_val = (n as f64 * val_fraction).round() as usize;
        if n_val == 0 || n_val == n {
            return Err(DatasetError::BadSplit(format!(
                "class {class} with {n} frames would get {n_val} validation frames"
            )));
        }
        let mut rng = seed::rng(seed::derive(seed, &[u64::from(class)]));
        idx.shuffle(&mut rng);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encodes the frame container.
pub fn encode_frames(frames: &[TactileFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * FRAME_RECORD_LEN + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.resize(HEADER_LEN, 0);
    for f in frames {
        out.push(f.label.unwrap_or(u8::MAX));
        for v in [
            f.pose.angle_rad,
            f.pose.offset_mm.0,
            f.pose.offset_mm.1,
            f.pose.total_force_n,
            f.noise_sigma,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&f.rng_seed.to_le_bytes());
        out.extend_from_slice(&f.readings);
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Decodes the frame container, checking magic, version, length and CRC in
/// that order.
pub fn decode_frames(bytes: &[u8]) -> Result<Vec<TactileFrame>> {
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            found: version.into(),
            expected: FORMAT_VERSION.into(),
        });
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + count * FRAME_RECORD_LEN + 4;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DatasetError::TrailingBytes(bytes.len() - expected));
    }
    let body = &bytes[HEADER_LEN..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DatasetError::Checksum { stored, computed });
    }
    let mut frames = Vec::with_capacity(count);
    for (index, rec) in body.chunks_exact(FRAME_RECORD_LEN).enumerate() {
        let label = rec[0];
        if usize::from(label) >= NUM_CLASSES {
            return Err(DatasetError::BadLabel { index, label });
        }
        let mut readings = [0u8; TAXELS];
        readings.copy_from_slice(&rec[49..49 + TAXELS]);
        frames.push(TactileFrame {
            readings,
            label: Some(label),
            pose: ContactPose {
                angle_rad: f64_at(rec, 1),
                offset_mm: (f64_at(rec, 9), f64_at(rec, 17)),
                total_force_n: f64_at(rec, 25),
            },
            noise_sigma: f64_at(rec, 33),
            rng_seed: u64::from_le_bytes(rec[41..49].try_into().unwrap()),
        });
    }
    Ok(frames)
}

/// Renders the manifest. Floats use the shortest representation that
/// parses back to the same value.
pub fn render_manifest(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# dogtouch dataset manifest");
    let _ = writeln!(s, "format_version = {}", m.format_version);
    let _ = writeln!(s, "frame_count = {}", m.frame_count());
    let _ = writeln!(s, "per_class = {}", m.per_class);
    let _ = writeln!(s, "noise_sigma_n = {:?}", m.noise_sigma);
    let _ = writeln!(s, "total_force_n = {:?}", m.total_force_n);
    let _ = writeln!(s, "master_seed = {}", m.master_seed);
    let _ = writeln!(s, "min_active_taxels = {}", m.min_active_taxels);
    let _ = writeln!(s, "sensor.pitch_mm = {:?}", m.sensor.pitch_mm);
    let _ = writeln!(s, "sensor.force_min_n = {:?}", m.sensor.force_min_n);
    let _ = writeln!(s, "sensor.force_sat_n = {:?}", m.sensor.force_sat_n);
    let _ = writeln!(s, "sensor.frame_rate_hz = {:?}", m.sensor.frame_rate_hz);
    let _ = writeln!(s, "sensor.quant_levels = {}", m.sensor.quant_levels);
    for t in &m.catalog {
        let _ = writeln!(
            s,
            "texture.{} = {} element_mm={:?} spacing_mm={:?} height_mm={:?} plate_mm={:?}",
            t.class_id, t.kind, t.element_size_mm, t.spacing_mm, t.height_mm, t.plate_side_mm
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Manifest {
            line: n + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        kv.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
    }

    fn field<T: std::str::FromStr>(kv: &BTreeMap<String, (usize, String)>, key: &str) -> Result<T> {
        let (line, v) = kv.get(key).ok_or_else(|| DatasetError::Manifest {
            line: 0,
            msg: format!("missing key {key}"),
        })?;
        v.parse().map_err(|_| DatasetError::Manifest {
            line: *line,
            msg: format!("cannot parse {key} = {v:?}"),
        })
    }

    let format_version: u16 = field(&kv, "format_version")?;
    if format_version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            found: format_version.into(),
            expected: FORMAT_VERSION.into(),
        });
    }

    let mut catalog = Vec::new();
    for (key, (line, v)) in kv.iter().filter(|(k, _)| k.starts_with("texture.")) {
        let bad = |msg: String| DatasetError::Manifest { line: *line, msg };
        let class_id: u8 = key["texture.".len()..]
            .parse()
            .map_err(|_| bad(format!("bad texture key {key}")))?;
        let mut parts = v.split_whitespace();
        let kind: PatternKind = parts
            .next()
            .ok_or_else(|| bad("missing pattern kind".into()))?
            .parse()?;
        let mut attrs = BTreeMap::new();
        for p in parts {
            let (a, b) = p
                .split_once('=')
                .ok_or_else(|| bad(format!("bad attribute {p:?}")))?;
            let x: f64 = b.parse().map_err(|_| bad(format!("bad number in {p:?}")))?;
            attrs.insert(a, x);
        }
        let get = |a: &str| {
            attrs
                .get(a)
                .copied()
                .ok_or_else(|| bad(format!("missing {a}")))
        };
        catalog.push(TextureSpec::new(
            kind,
            get("element_mm")?,
            get("spacing_mm")?,
            get("height_mm")?,
            get("plate_mm")?,
            class_id,
        )?);
    }
    catalog.sort_by_key(|t| t.class_id);

    let m = Manifest {
        format_version,
        catalog,
        per_class: field(&kv, "per_class")?,
        sensor: SensorSpec {
            pitch_mm: field(&kv, "sensor.pitch_mm")?,
            force_min_n: field(&kv, "sensor.force_min_n")?,
            force_sat_n: field(&kv, "sensor.force_sat_n")?,
            frame_rate_hz: field(&kv, "sensor.frame_rate_hz")?,
            quant_levels: field(&kv, "sensor.quant_levels")?,
        },
        noise_sigma: field(&kv, "noise_sigma_n")?,
        total_force_n: field(&kv, "total_force_n")?,
        master_seed: field(&kv, "master_seed")?,
        min_active_taxels: field(&kv, "min_active_taxels")?,
    };
    let count: usize = field(&kv, "frame_count")?;
    if count != m.frame_count() {
        return Err(DatasetError::Manifest {
            line: kv["frame_count"].0,
            msg: format!(
                "frame_count {count} != per_class * classes = {}",
                m.frame_count()
            ),
        });
    }
    Ok(m)
}

/// Writes the container to `path` and the manifest next to it.
pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_frames(&ds.frames)).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, render_manifest(&ds.manifest)).map_err(io_err(&mpath))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let frames = decode_frames(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest = parse_manifest(&text)?;
    if manifest.frame_count() != frames.len() {
        return Err(DatasetError::ManifestMismatch(format!(
            "manifest describes {} frames, container holds {}",
            manifest.frame_count(),
            frames.len()
        )));
    }
    Ok(Dataset { frames, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textures::builtin_catalog;

    fn small(per_class: usize, seed: u64) -> Dataset {
        let params = GenerateParams {
            per_class,
            master_seed: seed,
            ..GenerateParams::default()
        };
        generate(&builtin_catalog(), &SensorSpec::default(), &params).unwrap()
    }

    #[test]
    fn one_per_class() {
        let ds = small(1, 3);
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.class_counts(), [1; 8]);
        for f in &ds.frames {
            assert!((0.0..TAU).contains(&f.pose.angle_rad));
            assert!(contact_detected(f, GENERATION_MIN_ACTIVE_TAXELS));
        }
    }

    #[test]
    fn angles_fill_their_bins() {
        let ds = small(10, 4);
        for (i, f) in ds.frames.iter().enumerate() {
            let k = (i % 10) as f64;
            let lo = TAU * k / 10.0;
            let hi = TAU * (k + 1.0) / 10.0;
            assert!(f.pose.angle_rad >= lo && f.pose.angle_rad < hi);
            assert!(f.pose.offset_mm.0.abs() <= 3.0 && f.pose.offset_mm.1.abs() <= 3.0);
        }
    }

    #[test]
    fn class_order_does_not_matter() {
        let cat = builtin_catalog();
        let mut rev = cat.clone();
        rev.reverse();
        let params = GenerateParams {
            per_class: 3,
            ..GenerateParams::default()
        };
        let a = generate(&cat, &SensorSpec::default(), &params).unwrap();
        let b = generate(&rev, &SensorSpec::default(), &params).unwrap();
        for f in &a.frames {
            assert!(b.frames.contains(f));
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let cat = builtin_catalog();
        let s = SensorSpec::default();
        let zero = GenerateParams {
            per_class: 0,
            ..GenerateParams::default()
        };
        assert!(matches!(
            generate(&cat, &s, &zero),
            Err(DatasetError::BadRequest(_))
        ));
        let p = GenerateParams {
            per_class: 1,
            ..GenerateParams::default()
        };
        assert!(matches!(
            generate(&[], &s, &p),
            Err(DatasetError::BadRequest(_))
        ));
        let dup = vec![cat[0], cat[0]];
        assert!(matches!(
            generate(&dup, &s, &p),
            Err(DatasetError::BadRequest(_))
        ));
    }

    #[test]
    fn degenerate_texture_fails_loudly() {
        // one hairline stripe that no taxel ever lands on
        let t = TextureSpec::new(PatternKind::VerticalLines, 1e-9, 1000.0, 1.0, 50.0, 0).unwrap();
        let p = GenerateParams {
            per_class: 2,
            noise_sigma: 0.0,
            ..GenerateParams::default()
        };
        let err = generate(&[t], &SensorSpec::default(), &p).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::NoContact {
                class_id: 0,
                bin: 0
            }
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds = small(20, 5);
        let s = split(&ds, 0.1, 11).unwrap();
        assert_eq!(s.val.len(), 16);
        assert_eq!(s.train.len(), 144);
        let labels = ds.labels();
        for c in 0..8u8 {
            assert_eq!(s.val.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        let mut all: Vec<usize> = s.train.iter().chain(s.val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..160).collect::<Vec<_>>());
        assert_eq!(s, split(&ds, 0.1, 11).unwrap());
        assert_ne!(s, split(&ds, 0.1, 12).unwrap());
    }

    #[test]
    fn split_guards() {
        let ds = small(1, 5);
        assert!(matches!(split(&ds, 0.1, 0), Err(DatasetError::BadSplit(_))));
        let ds = small(4, 5);
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.99, 0).is_err());
    }

    #[test]
    fn container_layout() {
        let ds = small(1, 6);
        let bytes = encode_frames(&ds.frames);
        assert_eq!(bytes.len(), 32 + 8 * 149 + 4);
        assert_eq!(&bytes[0..4], b"DTDS");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[8, 0, 0, 0]);
        assert!(bytes[10..32].iter().all(|&b| b == 0));
        assert_eq!(bytes[32], 0);
        assert_eq!(&bytes[32 + 49..32 + 149], &ds.frames[0].readings[..]);
    }

    #[test]
    fn corruption_is_classified() {
        let ds = small(2, 7);
        let good = encode_frames(&ds.frames);
        assert_eq!(decode_frames(&good).unwrap(), ds.frames);

        let cut = &good[..good.len() - 60];
        assert!(matches!(
            decode_frames(cut),
            Err(DatasetError::Truncated { .. })
        ));

        let mut v2 = good.clone();
        v2[4] = 2;
        let err = decode_frames(&v2).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::VersionMismatch {
                found: 2,
                expected: 1
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("v2") && msg.contains("v1"), "{msg}");

        let mut flipped = good.clone();
        flipped[100] ^= 0x10;
        assert!(matches!(
            decode_frames(&flipped),
            Err(DatasetError::Checksum { .. })
        ));

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(
            decode_frames(&magic),
            Err(DatasetError::BadMagic(_))
        ));

        let mut long = good;
        long.push(0);
        assert!(matches!(
            decode_frames(&long),
            Err(DatasetError::TrailingBytes(1))
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let ds = small(1, 8);
        let text = render_manifest(&ds.manifest);
        assert_eq!(parse_manifest(&text).unwrap(), ds.manifest);
        let bumped = text.replace("format_version = 1", "format_version = 9");
        assert!(matches!(
            parse_manifest(&bumped),
            Err(DatasetError::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.dtds");
        let ds = small(3, 9);
        save(&ds, &path).unwrap();
        assert_eq!(load(&path).unwrap(), ds);
        assert!(manifest_path(&path).exists());
        fs::remove_file(manifest_path(&path)).unwrap();
        assert!(matches!(load(&path), Err(DatasetError::Io { .. })));
    }
}
