//! Procedural car-like shapes with exactly known parameters.
//!
//! A car is a rounded-box body, a narrower rounded-box cabin on top and two
//! z-axis wheel cylinders whose lower arcs hang below the body floor. The
//! ground plane sits at `y = 0` in raw units, wheels touch it, and the car is
//! centred on `x = 0, z = 0` with the front at negative x.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::mesh::NORMALIZED_RADIUS;
use crate::geometry::{Primitive, Shape};
use crate::params::GeomParams;

pub const GENERATOR_VERSION: &str = "toycar-1";

/// Default corpus size.
pub const DEFAULT_CORPUS_SIZE: usize = 374;

/// Edge rounding as a fraction of body length.
const ROUNDING: f64 = 0.02;
/// Cabin width as a fraction of body width.
const CABIN_WIDTH_FRACTION: f64 = 0.85;
/// Wheels stop this fraction of the body width short of each side.
const WHEEL_INSET_FRACTION: f64 = 0.06;
/// Depth the cabin sinks into the body so the union stays connected.
const CABIN_OVERLAP: f64 = 0.03;

/// Construction inputs in raw (pre-normalization) units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCarSpec {
    pub body_length: f64,
    pub body_height: f64,
    pub body_width: f64,
    pub cabin_length: f64,
    pub cabin_height: f64,
    /// Distance from the body front to the cabin front.
    pub cabin_setback: f64,
    pub wheel_radius: f64,
    pub wheelbase: f64,
    pub front_overhang: f64,
    pub ground_clearance: f64,
}

impl ToyCarSpec {
    pub fn rear_overhang(&self) -> f64 {
        self.body_length - self.wheelbase - self.front_overhang
    }

    pub fn total_height(&self) -> f64 {
        self.ground_clearance + self.body_height + self.cabin_height
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("body_length", self.body_length),
            ("body_height", self.body_height),
            ("body_width", self.body_width),
            ("cabin_length", self.cabin_length),
            ("cabin_height", self.cabin_height),
            ("cabin_setback", self.cabin_setback),
            ("wheel_radius", self.wheel_radius),
            ("wheelbase", self.wheelbase),
            ("front_overhang", self.front_overhang),
            ("ground_clearance", self.ground_clearance),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let l = self.body_length;
        let round = ROUNDING * l;
        if self.rear_overhang() <= 0.0 {
            return Err(invalid(format!(
                "wheelbase: wheelbase + front_overhang ({}) must be shorter than body_length ({l})",
                self.wheelbase + self.front_overhang
            )));
        }
        if self.wheel_radius <= self.ground_clearance {
            return Err(invalid(
                "wheel_radius: wheels must reach below the body floor (radius > ground_clearance)",
            ));
        }
        if self.wheel_radius >= self.front_overhang || self.wheel_radius >= self.rear_overhang() {
            return Err(invalid(
                "wheel_radius: wheels must fit within the body length (radius < each overhang)",
            ));
        }
        if self.wheel_radius >= self.ground_clearance + self.body_height {
            return Err(invalid(
                "wheel_radius: wheel centre must lie below the body top",
            ));
        }
        if self.cabin_setback + self.cabin_length > l - round {
            return Err(invalid(
                "cabin_length: cabin_setback + cabin_length exceeds the body footprint",
            ));
        }
        if self.body_height < 2.0 * round + 1e-9
            || self.body_width < 2.0 * round + 1e-9
            || self.cabin_length < 2.0 * round + 1e-9
        {
            return Err(invalid(
                "body_height: body and cabin must exceed twice the edge rounding",
            ));
        }
        Ok(())
    }

    /// Analytically exact normalized parameters.
    pub fn true_params(&self) -> Result<GeomParams> {
        GeomParams::from_measurements(
            self.body_length,
            self.total_height(),
            self.body_width,
            self.ground_clearance,
            self.wheelbase,
            self.front_overhang,
            self.rear_overhang(),
        )
    }

    /// Copy with the lateral dimensions (body, cabin) scaled by `factor`.
    pub fn widened(&self, factor: f64) -> Self {
        Self {
            body_width: self.body_width * factor,
            ..*self
        }
    }

    /// Spec realising `params` at body length `length`, with default
    /// proportions for the quantities the parameters leave free.
    pub fn from_params(params: &GeomParams, length: f64) -> Result<Self> {
        let p = params.as_array();
        if (p[4] + p[5] + p[6] - 1.0).abs() > 1e-6 {
            return Err(invalid("wheelbase + overhangs must equal the length"));
        }
        let l = length;
        let clearance = p[3] * l;
        let cabin_and_body = (p[1] - p[3]) * l;
        let body_height = 0.6 * cabin_and_body;
        let spec = Self {
            body_length: l,
            body_height,
            body_width: p[2] * l,
            cabin_length: 0.5 * l,
            cabin_height: cabin_and_body - body_height,
            cabin_setback: 0.27 * l,
            wheel_radius: clearance + 0.05 * l,
            wheelbase: p[4] * l,
            front_overhang: p[5] * l,
            ground_clearance: clearance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The car in raw units: ground at `y = 0`, centred in x and z.
    pub fn raw_shape(&self) -> Result<Shape> {
        self.validate()?;
        let l = self.body_length;
        let round = ROUNDING * l;
        let c = self.ground_clearance;
        let body = Shape::primitive(Primitive::RoundedBox {
            half: [l / 2.0, self.body_height / 2.0, self.body_width / 2.0],
            radius: round,
        })?
        .translated([0.0, c + self.body_height / 2.0, 0.0]);

        let overlap = (CABIN_OVERLAP * l).min(self.body_height / 2.0);
        let cabin_h = self.cabin_height + overlap;
        let cabin_w = CABIN_WIDTH_FRACTION * self.body_width;
        let cabin_round = round.min(cabin_h / 2.0 - 1e-9).min(cabin_w / 2.0 - 1e-9);
        let cabin = Shape::primitive(Primitive::RoundedBox {
            half: [self.cabin_length / 2.0, cabin_h / 2.0, cabin_w / 2.0],
            radius: cabin_round,
        })?
        .translated([
            -l / 2.0 + self.cabin_setback + self.cabin_length / 2.0,
            c + self.body_height - overlap + cabin_h / 2.0,
            0.0,
        ]);

        let half_track = self.body_width / 2.0 * (1.0 - 2.0 * WHEEL_INSET_FRACTION);
        let wheel = |x: f64| -> Result<Shape> {
            Ok(Shape::primitive(Primitive::Cylinder {
                radius: self.wheel_radius,
                half_length: half_track,
            })?
            .translated([x, self.wheel_radius, 0.0]))
        };
        let front_x = -l / 2.0 + self.front_overhang;
        Ok(Shape::Union(vec![
            body,
            cabin,
            wheel(front_x)?,
            wheel(front_x + self.wheelbase)?,
        ]))
    }

    /// Scale factor and offset mapping raw units into the normalized frame
    /// (`normalized = (raw + offset) * scale`).
    pub fn normalization(&self) -> (f64, [f64; 3]) {
        let (l, h, w) = (self.body_length, self.total_height(), self.body_width);
        let half_diag = ((l / 2.0).powi(2) + (h / 2.0).powi(2) + (w / 2.0).powi(2)).sqrt();
        (NORMALIZED_RADIUS / half_diag, [0.0, -h / 2.0, 0.0])
    }
}

/// A generated car: its normalized field and exact parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCar {
    pub spec: ToyCarSpec,
    /// Field in the normalized frame: centred, farthest bounding-box corner at 0.9.
    pub shape: Shape,
    pub params: GeomParams,
    /// Raw-to-normalized scale factor.
    pub scale: f64,
}

impl ToyCar {
    /// Body length in normalized units.
    pub fn normalized_length(&self) -> f64 {
        self.spec.body_length * self.scale
    }
}

pub fn make_toy_car(spec: &ToyCarSpec) -> Result<ToyCar> {
    let raw = spec.raw_shape()?;
    let (scale, offset) = spec.normalization();
    Ok(ToyCar {
        spec: *spec,
        shape: raw.translated(offset).scaled(scale),
        params: spec.true_params()?,
        scale,
    })
}

/// Sampling interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(invalid(format!(
                "range {name} is empty: [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Per-parameter intervals. All but `length` are fractions of the length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRanges {
    pub length: Range,
    pub height: Range,
    pub width: Range,
    pub ground_clearance: Range,
    pub wheelbase: Range,
    pub front_overhang: Range,
    /// Wheel radius minus ground clearance.
    pub wheel_drop: Range,
    /// Body share of the height above the floor; the cabin takes the rest.
    pub body_fraction: Range,
    pub cabin_length: Range,
    pub cabin_setback: Range,
}

impl Default for CorpusRanges {
    fn default() -> Self {
        Self {
            length: Range::new(3.8, 5.0),
            height: Range::new(0.26, 0.36),
            width: Range::new(0.35, 0.45),
            ground_clearance: Range::new(0.03, 0.07),
            wheelbase: Range::new(0.56, 0.64),
            front_overhang: Range::new(0.162, 0.218),
            wheel_drop: Range::new(0.045, 0.06),
            body_fraction: Range::new(0.55, 0.7),
            cabin_length: Range::new(0.4, 0.6),
            cabin_setback: Range::new(0.2, 0.35),
        }
    }
}

impl CorpusRanges {
    pub fn validate(&self) -> Result<()> {
        self.length.validate("length")?;
        self.height.validate("height")?;
        self.width.validate("width")?;
        self.ground_clearance.validate("ground_clearance")?;
        self.wheelbase.validate("wheelbase")?;
        self.front_overhang.validate("front_overhang")?;
        self.wheel_drop.validate("wheel_drop")?;
        self.body_fraction.validate("body_fraction")?;
        self.cabin_length.validate("cabin_length")?;
        self.cabin_setback.validate("cabin_setback")
    }
}

/// Margin (fraction of length) kept between features so extraction has
/// clean regions to measure.
const LAYOUT_MARGIN: f64 = 0.02;
const MAX_ATTEMPTS: usize = 10_000;

/// Draw one spec by rejection sampling.
pub fn sample_spec(ranges: &CorpusRanges, rng: &mut impl Rng) -> Result<ToyCarSpec> {
    for _ in 0..MAX_ATTEMPTS {
        let l = ranges.length.draw(rng);
        let height = ranges.height.draw(rng);
        let width = ranges.width.draw(rng);
        let clearance = ranges.ground_clearance.draw(rng);
        let wheelbase = ranges.wheelbase.draw(rng);
        let front = ranges.front_overhang.draw(rng);
        let drop = ranges.wheel_drop.draw(rng);
        let body_fraction = ranges.body_fraction.draw(rng);
        let cabin_length = ranges.cabin_length.draw(rng);
        let setback = ranges.cabin_setback.draw(rng);

        let rear = 1.0 - wheelbase - front;
        let radius = clearance + drop;
        let body_height = body_fraction * (height - clearance);
        let cabin_height = height - clearance - body_height;
        let fits = rear > radius + LAYOUT_MARGIN
            && front > radius + LAYOUT_MARGIN
            && radius + 1.5 * LAYOUT_MARGIN < clearance + body_height
            && cabin_height > 2.0 * LAYOUT_MARGIN
            && setback + cabin_length < 1.0 - 2.0 * LAYOUT_MARGIN;
        if !fits {
            continue;
        }
        let spec = ToyCarSpec {
            body_length: l,
            body_height: body_height * l,
            body_width: width * l,
            cabin_length: cabin_length * l,
            cabin_height: cabin_height * l,
            cabin_setback: setback * l,
            wheel_radius: radius * l,
            wheelbase: wheelbase * l,
            front_overhang: front * l,
            ground_clearance: clearance * l,
        };
        if spec.validate().is_ok() {
            return Ok(spec);
        }
    }
    Err(invalid("ranges admit no valid car layout"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape_id: String,
    pub spec: ToyCarSpec,
    pub true_params: GeomParams,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator_version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    generator_version: String,
    seed: u64,
    count: usize,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One JSON header line followed by one JSON record per shape.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = ManifestHeader {
            generator_version: self.generator_version.clone(),
            seed: self.seed,
            count: self.entries.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: ManifestHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Format("empty manifest".into())),
        };
        let mut entries = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        if entries.len() != header.count {
            return Err(Error::Format(format!(
                "manifest header declares {} entries, found {}",
                header.count,
                entries.len()
            )));
        }
        let ids: HashSet<&str> = entries
            .iter()
            .map(|e: &ManifestEntry| e.shape_id.as_str())
            .collect();
        if ids.len() != entries.len() {
            return Err(Error::Format("duplicate shape ids in manifest".into()));
        }
        Ok(Self {
            generator_version: header.generator_version,
            seed: header.seed,
            entries,
        })
    }
}

/// Generate `n` cars. Each entry gets its own seed drawn from `seed`, so the
/// result does not depend on thread count.
pub fn generate_corpus(n: usize, seed: u64, ranges: &CorpusRanges) -> Result<CorpusManifest> {
    if n < 2 {
        return Err(invalid(format!("corpus needs at least 2 shapes, got {n}")));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let entries = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let spec = sample_spec(ranges, &mut ChaCha8Rng::seed_from_u64(s))?;
            Ok(ManifestEntry {
                shape_id: format!("car-{i:05}"),
                true_params: spec.true_params()?,
                spec,
                seed: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusManifest {
        generator_version: GENERATOR_VERSION.to_string(),
        seed,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, ShapeField};

    fn table_car() -> ToyCarSpec {
        let target = GeomParams([1.0, 0.28, 0.43, 0.037, 0.6, 0.2, 0.2]);
        ToyCarSpec::from_params(&target, 4.5).unwrap()
    }

    #[test]
    fn table_target_car_has_exact_params() {
        let car = make_toy_car(&table_car()).unwrap();
        let p = car.params.as_array();
        assert_eq!(p[0], 1.0);
        assert!((p[4] - 0.6).abs() < 1e-12);
        assert!((p[5] - 0.2).abs() < 1e-12);
        assert!((p[6] - 0.2).abs() < 1e-12);
        assert!((p[1] - 0.28).abs() < 1e-12);
    }

    #[test]
    fn field_is_mirror_symmetric_in_z() {
        let car = make_toy_car(&table_car()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = crate::geometry::field::uniform_in_cube(&mut rng, 1.0);
            let q = Point3::new(p.x, p.y, -p.z);
            assert_eq!(car.shape.eval(&p), car.shape.eval(&q));
        }
    }

    #[test]
    fn inconsistent_layout_rejected() {
        let mut spec = table_car();
        spec.wheelbase = spec.body_length;
        let err = make_toy_car(&spec).unwrap_err();
        assert!(err.to_string().contains("wheelbase"));
        let mut spec = table_car();
        spec.ground_clearance = -0.1;
        assert!(err_names(make_toy_car(&spec), "ground_clearance"));
    }

    fn err_names(r: Result<ToyCar>, field: &str) -> bool {
        matches!(r, Err(Error::InvalidArgument(m)) if m.contains(field))
    }

    #[test]
    fn normalized_car_fits_in_unit_sphere() {
        let car = make_toy_car(&table_car()).unwrap();
        assert!(car.shape.bounding_radius() <= NORMALIZED_RADIUS + 1e-9);
        // ground contact under the front wheel
        let s = &car.spec;
        let (scale, off) = s.normalization();
        let x = (-s.body_length / 2.0 + s.front_overhang) * scale;
        let y = (0.0 + off[1]) * scale;
        assert!(car.shape.eval(&Point3::new(x, y, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn corpus_statistics_and_determinism() {
        let ranges = CorpusRanges::default();
        let a = generate_corpus(374, 1, &ranges).unwrap();
        let b = generate_corpus(374, 1, &ranges).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 374);
        let mean_height = a
            .entries
            .iter()
            .map(|e| e.true_params.height())
            .sum::<f64>()
            / a.len() as f64;
        assert!((mean_height - 0.31).abs() < 0.02, "{mean_height}");
        let ids: HashSet<_> = a.entries.iter().map(|e| &e.shape_id).collect();
        assert_eq!(ids.len(), 374);
        for e in &a.entries {
            assert_eq!(e.true_params.length(), 1.0);
            let p = e.true_params;
            assert!((p.wheelbase() + p.front_overhang() + p.rear_overhang() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn corpus_argument_checks() {
        let ranges = CorpusRanges::default();
        assert!(generate_corpus(1, 1, &ranges).is_err());
        let mut bad = ranges;
        bad.height = Range::new(0.4, 0.3);
        assert!(generate_corpus(10, 1, &bad).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = generate_corpus(5, 9, &CorpusRanges::default()).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 6);
        let back = CorpusManifest::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
