//! Continuous height-field models of the eight textured test plates.
//!
//! All coordinates are millimeters with the origin at a plate corner, x to
//! the right and y up. Heights are in millimeters above the plate floor.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of texture classes in the built-in catalog.
pub const NUM_CLASSES: usize = 8;

/// Side length of every catalog plate.
pub const PLATE_SIDE_MM: f64 = 50.0;

/// Protrusion height used by the catalog; the plates' real depth is unknown.
pub const DEFAULT_HEIGHT_MM: f64 = 1.0;

/// Line width of the grid pattern.
pub const GRID_LINE_WIDTH_MM: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextureError {
    #[error("{field} must be a positive finite number, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("class id {0} is outside 0..{NUM_CLASSES}")]
    ClassOutOfRange(u8),
    #[error("unknown pattern kind {0:?}")]
    UnknownPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternKind {
    DiagonalLines,
    DotsDenseSmall,
    VerticalLines,
    DotsMedium,
    DotsLarge,
    Grid,
    DotsSparseSmall,
    Cylinders,
}

impl PatternKind {
    pub const ALL: [PatternKind; 8] = [
        PatternKind::DiagonalLines,
        PatternKind::DotsDenseSmall,
        PatternKind::VerticalLines,
        PatternKind::DotsMedium,
        PatternKind::DotsLarge,
        PatternKind::Grid,
        PatternKind::DotsSparseSmall,
        PatternKind::Cylinders,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::DiagonalLines => "DiagonalLines",
            PatternKind::DotsDenseSmall => "DotsDenseSmall",
            PatternKind::VerticalLines => "VerticalLines",
            PatternKind::DotsMedium => "DotsMedium",
            PatternKind::DotsLarge => "DotsLarge",
            PatternKind::Grid => "Grid",
            PatternKind::DotsSparseSmall => "DotsSparseSmall",
            PatternKind::Cylinders => "Cylinders",
        }
    }

    fn is_dot(self) -> bool {
        matches!(
            self,
            PatternKind::DotsDenseSmall
                | PatternKind::DotsMedium
                | PatternKind::DotsLarge
                | PatternKind::DotsSparseSmall
        )
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = TextureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TextureError::UnknownPattern(s.to_string()))
    }
}

/// Parametric description of one textured plate.
///
/// `element_size_mm` is the line width (or grid line width) for line
/// patterns and the diameter for dots and cylinders. `spacing_mm` is the
/// gap between adjacent element edges, so the lattice pitch is
/// `element_size_mm + spacing_mm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub kind: PatternKind,
    pub element_size_mm: f64,
    pub spacing_mm: f64,
    pub height_mm: f64,
    pub plate_side_mm: f64,
    pub class_id: u8,
}

fn check_positive(field: &'static str, value: f64) -> Result<(), TextureError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(TextureError::NonPositive { field, value })
    }
}

impl TextureSpec {
    pub fn new(
        kind: PatternKind,
        element_size_mm: f64,
        spacing_mm: f64,
        height_mm: f64,
        plate_side_mm: f64,
        class_id: u8,
    ) -> Result<Self, TextureError> {
        let spec = TextureSpec {
            kind,
            element_size_mm,
            spacing_mm,
            height_mm,
            plate_side_mm,
            class_id,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TextureError> {
        check_positive("element_size_mm", self.element_size_mm)?;
        check_positive("spacing_mm", self.spacing_mm)?;
        check_positive("height_mm", self.height_mm)?;
        check_positive("plate_side_mm", self.plate_side_mm)?;
        if usize::from(self.class_id) >= NUM_CLASSES {
            return Err(TextureError::ClassOutOfRange(self.class_id));
        }
        Ok(())
    }

    /// Lattice pitch: element plus gap.
    pub fn period(&self) -> f64 {
        self.element_size_mm + self.spacing_mm
    }

    /// Height of the plate surface at `(x_mm, y_mm)`; zero off the plate.
    pub fn height_at(&self, x_mm: f64, y_mm: f64) -> f64 {
        let side = self.plate_side_mm;
        if !(0.0..side).contains(&x_mm) || !(0.0..side).contains(&y_mm) {
            return 0.0;
        }
        let p = self.period();
        let h = self.height_mm;
        match self.kind {
            PatternKind::VerticalLines => stripe(x_mm, p, self.element_size_mm) * h,
            PatternKind::DiagonalLines => {
                // vertical stripes rotated +45° about the plate center
                let c = side / 2.0;
                let (s, co) = FRAC_PI_4.sin_cos();
                let (dx, dy) = (x_mm - c, y_mm - c);
                let u = co * dx + s * dy + c;
                stripe(u, p, self.element_size_mm) * h
            }
            PatternKind::Grid => {
                let on = stripe(x_mm, p, self.element_size_mm) > 0.0
                    || stripe(y_mm, p, self.element_size_mm) > 0.0;
                if on {
                    h
                } else {
                    0.0
                }
            }
            PatternKind::Cylinders => {
                let r = self.element_size_mm / 2.0;
                let rho2 = lattice_dist2(x_mm, y_mm, p, r);
                if rho2 < r * r {
                    h
                } else {
                    0.0
                }
            }
            k => {
                debug_assert!(k.is_dot());
                let r = self.element_size_mm / 2.0;
                let rho2 = lattice_dist2(x_mm, y_mm, p, r);
                if rho2 < r * r {
                    h * (1.0 - rho2 / (r * r)).sqrt()
                } else {
                    0.0
                }
            }
        }
    }
}

/// 1 on `[k*period, k*period + width)`, 0 elsewhere.
fn stripe(coord: f64, period: f64, width: f64) -> f64 {
    if coord.rem_euclid(period) < width {
        1.0
    } else {
        0.0
    }
}

/// Squared distance to the lattice center of the cell containing the point.
/// Centers sit at `k*period + radius` on both axes; since the element fits
/// inside its cell, the cell's own center is always the nearest one that
/// can cover the point.
fn lattice_dist2(x: f64, y: f64, period: f64, radius: f64) -> f64 {
    let dx = x.rem_euclid(period) - radius;
    let dy = y.rem_euclid(period) - radius;
    dx * dx + dy * dy
}

/// The eight plates, class ids 0..7 in the order (a) through (h).
pub fn builtin_catalog() -> Vec<TextureSpec> {
    use PatternKind::*;
    let table: [(PatternKind, f64, f64); NUM_CLASSES] = [
        (DiagonalLines, 1.0, 5.0),
        (DotsDenseSmall, 1.0, 1.0),
        (VerticalLines, 1.0, 5.0),
        (DotsMedium, 3.0, 1.0),
        (DotsLarge, 5.0, 1.0),
        (Grid, GRID_LINE_WIDTH_MM, 5.0),
        (DotsSparseSmall, 1.0, 5.0),
        (Cylinders, 3.0, 1.0),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, &(kind, element, spacing))| TextureSpec {
            kind,
            element_size_mm: element,
            spacing_mm: spacing,
            height_mm: DEFAULT_HEIGHT_MM,
            plate_side_mm: PLATE_SIDE_MM,
            class_id: i as u8,
        })
        .collect()
}

/// Short label for reports, e.g. `e:DotsLarge`.
pub fn class_label(class_id: u8) -> String {
    let letter = (b'a' + class_id) as char;
    match PatternKind::ALL.get(usize::from(class_id)) {
        Some(k) => format!("{letter}:{k}"),
        None => format!("?{class_id}"),
    }
}
