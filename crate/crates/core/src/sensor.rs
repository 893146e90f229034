//! Touch-sensitive foot simulator.
//!
//! A 10×10 taxel grid is laid over a plate under a contact pose, each taxel
//! samples the plate height at its center, the total normal force is shared
//! out in proportion to the sampled heights plus a compliance floor, noise is
//! added, and the per-taxel force is quantized with a deadband and a
//! saturation limit.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::seed;
use crate::textures::TextureSpec;

pub const ROWS: usize = 10;
pub const COLS: usize = 10;
pub const TAXELS: usize = ROWS * COLS;

/// Share of force a taxel over a gap still receives, relative to a fully
/// supported one.
pub const COMPLIANCE_FLOOR: f64 = 0.05;

/// Default minimum number of active taxels for a footstep to count as contact.
pub const DEFAULT_MIN_ACTIVE_TAXELS: usize = 5;

pub const DEFAULT_TOTAL_FORCE_N: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("contact pose is not finite: {0:?}")]
    NonFinitePose(ContactPose),
    #[error("total force must be positive, got {0} N")]
    NonPositiveForce(f64),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("invalid sensor spec: {0}")]
    BadSpec(&'static str),
}

/// Physical parameters of the tactile array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub pitch_mm: f64,
    pub force_min_n: f64,
    pub force_sat_n: f64,
    pub frame_rate_hz: f64,
    pub quant_levels: u16,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            pitch_mm: 2.4,
            force_min_n: 1.0,
            force_sat_n: 9.0,
            frame_rate_hz: 120.0,
            quant_levels: 256,
        }
    }
}

impl SensorSpec {
    pub const ROWS: usize = ROWS;
    pub const COLS: usize = COLS;

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.pitch_mm.is_finite() && self.pitch_mm > 0.0) {
            return Err(SensorError::BadSpec("pitch_mm must be positive"));
        }
        if !(self.force_min_n.is_finite() && self.force_sat_n.is_finite())
            || self.force_min_n >= self.force_sat_n
            || self.force_sat_n <= 0.0
        {
            return Err(SensorError::BadSpec(
                "need 0 < force_sat_n and force_min_n < force_sat_n",
            ));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(SensorError::BadSpec("frame_rate_hz must be positive"));
        }
        if !(2..=256).contains(&self.quant_levels) {
            return Err(SensorError::BadSpec("quant_levels must be in 2..=256"));
        }
        Ok(())
    }

    /// Side length of the sensing window.
    pub fn window_mm(&self) -> f64 {
        self.pitch_mm * COLS as f64
    }

    /// Maps a per-taxel force to a reading.
    pub fn quantize(&self, force_n: f64) -> u8 {
        if force_n < self.force_min_n {
            return 0;
        }
        let top = f64::from(self.quant_levels - 1);
        (top * force_n.min(self.force_sat_n) / self.force_sat_n).round() as u8
    }
}

/// Planar pose of the foot relative to the plate center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPose {
    pub angle_rad: f64,
    pub offset_mm: (f64, f64),
    pub total_force_n: f64,
}

impl Default for ContactPose {
    fn default() -> Self {
        ContactPose {
            angle_rad: 0.0,
            offset_mm: (0.0, 0.0),
            total_force_n: DEFAULT_TOTAL_FORCE_N,
        }
    }
}

impl ContactPose {
    pub fn validate(&self) -> Result<(), SensorError> {
        let finite = self.angle_rad.is_finite()
            && self.offset_mm.0.is_finite()
            && self.offset_mm.1.is_finite()
            && self.total_force_n.is_finite();
        if !finite {
            return Err(SensorError::NonFinitePose(*self));
        }
        if self.total_force_n <= 0.0 {
            return Err(SensorError::NonPositiveForce(self.total_force_n));
        }
        Ok(())
    }
}

/// One quantized 10×10 pressure reading, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub readings: [u8; TAXELS],
    pub label: Option<u8>,
    pub pose: ContactPose,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl TactileFrame {
    /// A frame with the given readings and no provenance.
    pub fn from_readings(readings: [u8; TAXELS]) -> Self {
        TactileFrame {
            readings,
            label: None,
            pose: ContactPose::default(),
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn reading(&self, row: usize, col: usize) -> u8 {
        self.readings[row * COLS + col]
    }

    pub fn active_taxels(&self) -> usize {
        self.readings.iter().filter(|&&r| r != 0).count()
    }
}

/// Plate coordinates of every taxel center, row-major.
pub fn taxel_centers(
    texture: &TextureSpec,
    pose: &ContactPose,
    sensor: &SensorSpec,
) -> [(f64, f64); TAXELS] {
    let c = texture.plate_side_mm / 2.0;
    let (s, co) = pose.angle_rad.sin_cos();
    let half_r = (ROWS as f64 - 1.0) / 2.0;
    let half_c = (COLS as f64 - 1.0) / 2.0;
    let mut out = [(0.0, 0.0); TAXELS];
    for i in 0..ROWS {
        let v = (half_r - i as f64) * sensor.pitch_mm;
        for j in 0..COLS {
            let u = (j as f64 - half_c) * sensor.pitch_mm;
            out[i * COLS + j] = (
                c + co * u - s * v + pose.offset_mm.0,
                c + s * u + co * v + pose.offset_mm.1,
            );
        }
    }
    out
}

/// Per-taxel force before noise and quantization. Sums to the pose force.
pub fn contact_forces(
    texture: &TextureSpec,
    pose: &ContactPose,
    sensor: &SensorSpec,
) -> [f64; TAXELS] {
    let centers = taxel_centers(texture, pose, sensor);
    let mut share = [0.0; TAXELS];
    for (w, &(x, y)) in share.iter_mut().zip(centers.iter()) {
        *w = texture.height_at(x, y) / texture.height_mm + COMPLIANCE_FLOOR;
    }
    let total: f64 = share.iter().sum();
    for w in share.iter_mut() {
        *w *= pose.total_force_n / total;
    }
    share
}

/// Renders one frame. Noise is drawn for every taxel in row-major order from
/// a generator seeded with `rng_seed`, so the frame is a pure function of
/// the arguments.
pub fn simulate_contact(
    texture: &TextureSpec,
    pose: &ContactPose,
    sensor: &SensorSpec,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<TactileFrame, SensorError> {
    pose.validate()?;
    sensor.validate()?;
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(SensorError::BadSigma(noise_sigma));
    }
    let forces = contact_forces(texture, pose, sensor);
    let mut rng = seed::rng(rng_seed);
    let mut readings = [0u8; TAXELS];
    for (r, &f) in readings.iter_mut().zip(forces.iter()) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *r = sensor.quantize(f + noise_sigma * z);
    }
    Ok(TactileFrame {
        readings,
        label: Some(texture.class_id),
        pose: *pose,
        noise_sigma,
        rng_seed,
    })
}

/// Foot-touched-ground test: at least `min_active_taxels` nonzero readings.
pub fn contact_detected(frame: &TactileFrame, min_active_taxels: usize) -> bool {
    frame.active_taxels() >= min_active_taxels
}
