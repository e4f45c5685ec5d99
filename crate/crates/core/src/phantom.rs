//! Deterministic synthetic T1 / T1ce / label phantoms.
//!
//! A phantom is an elliptic head cylinder (bright skull ring around textured
//! tissue) containing one ellipsoidal lesion that is hypointense on T1 and
//! enhances by a fixed factor on T1ce. T1ce is then distorted by an affine
//! window `x -> gain * x + bias`, which calibration has to undo.
//!
//! All randomness comes from ChaCha streams keyed by the spec seed, so equal
//! specs produce bit-identical volumes.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::{linear_index, BoundingBox, Dims, Label, Mask, Spacing, Volume};
use crate::{Error, Result};

pub const PHANTOM_UNIT: &str = "au";

const STREAM_TEXTURE: u64 = 1;
const STREAM_T1_NOISE: u64 = 2;
const STREAM_T1CE_NOISE: u64 = 3;

/// Standard normal draw (Box-Muller).
pub(crate) fn gaussian<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionSpec {
    /// Ellipsoid center in mm from the first voxel center.
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    /// Mean noise-free T1 intensity of the lesion.
    pub level: f64,
    /// Core-to-rim T1 spread. Intensity rises with the cube of the normalized
    /// radius, so values are uniform over `level ± heterogeneity / 2`.
    pub heterogeneity: f64,
    /// Multiplicative lesion gain on T1ce (> 1).
    pub enhancement: f64,
    /// Sagittal plane splitting the labels: lesion voxels with `x_mm < plane`
    /// are intrameatal, the rest extrameatal.
    pub meatus_plane_x_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    pub spacing: Spacing,
    pub background: f64,
    pub tissue: f64,
    /// Peak deviation of the low-frequency cosine texture.
    pub texture_amplitude: f64,
    pub skull: f64,
    pub skull_thickness_mm: f64,
    /// In-plane semi-axes of the head, centered in the field of view.
    pub head_radii_mm: [f64; 2],
    pub lesion: LesionSpec,
    pub window_gain: f64,
    pub window_bias: f64,
    pub noise_sigma: f64,
    /// Draw T1ce noise from the T1 stream instead of an independent one.
    pub shared_noise: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            dims: [96, 96, 12],
            spacing: [0.5, 0.5, 2.0],
            background: 0.0,
            tissue: 0.5,
            texture_amplitude: 0.03,
            skull: 0.9,
            skull_thickness_mm: 1.5,
            head_radii_mm: [21.0, 22.0],
            lesion: LesionSpec {
                center_mm: [31.25, 22.25, 11.0],
                radii_mm: [5.0, 4.0, 4.0],
                level: 0.43,
                heterogeneity: 0.12,
                enhancement: 1.8,
                meatus_plane_x_mm: 29.25,
            },
            window_gain: 1.6,
            window_bias: 0.15,
            noise_sigma: 0.01,
            shared_noise: false,
        }
    }
}

/// Ground truth recorded while generating a phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub lesion_bbox: BoundingBox,
    pub lesion_voxels: usize,
    /// Noise-free mean of the lesion on T1.
    pub lesion_mean_t1: f64,
    /// Noise-free mean of the lesion on T1ce before the window distortion.
    pub lesion_mean_t1ce: f64,
    /// Noise-free mean of non-lesion tissue.
    pub tissue_mean: f64,
    pub window_gain: f64,
    pub window_bias: f64,
    pub meatus_plane_x_mm: f64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub t1: Volume,
    pub t1ce: Volume,
    pub mask: Mask,
    pub truth: PhantomTruth,
}

#[derive(Clone, Copy)]
struct Wave {
    k: [f64; 3],
    phase: f64,
}

fn texture_waves(seed: u64) -> [Wave; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TEXTURE);
    core::array::from_fn(|_| {
        let period = rng.gen_range(8.0..20.0);
        let angle = rng.gen_range(0.0..core::f64::consts::TAU);
        let kz = rng.gen_range(-0.05..0.05);
        let kmag = core::f64::consts::TAU / period;
        Wave {
            k: [kmag * libm::cos(angle), kmag * libm::sin(angle), kz],
            phase: rng.gen_range(0.0..core::f64::consts::TAU),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Background,
    Skull,
    Tissue,
    Lesion,
}

struct Geometry<'a> {
    spec: &'a PhantomSpec,
    head_center: [f64; 2],
}

impl Geometry<'_> {
    fn new(spec: &PhantomSpec) -> Geometry<'_> {
        let head_center = [
            0.5 * (spec.dims[0] - 1) as f64 * spec.spacing[0],
            0.5 * (spec.dims[1] - 1) as f64 * spec.spacing[1],
        ];
        Geometry { spec, head_center }
    }

    fn ellipse(&self, p: [f64; 3], shrink: f64) -> f64 {
        let rx = self.spec.head_radii_mm[0] - shrink;
        let ry = self.spec.head_radii_mm[1] - shrink;
        let dx = (p[0] - self.head_center[0]) / rx;
        let dy = (p[1] - self.head_center[1]) / ry;
        dx * dx + dy * dy
    }

    /// Squared normalized lesion radius.
    fn lesion_r2(&self, p: [f64; 3]) -> f64 {
        let l = &self.spec.lesion;
        (0..3)
            .map(|a| {
                let d = (p[a] - l.center_mm[a]) / l.radii_mm[a];
                d * d
            })
            .sum::<f64>()
    }

    fn in_lesion(&self, p: [f64; 3]) -> bool {
        self.lesion_r2(p) <= 1.0
    }

    fn region(&self, p: [f64; 3]) -> Region {
        if self.ellipse(p, 0.0) > 1.0 {
            Region::Background
        } else if self.ellipse(p, self.spec.skull_thickness_mm) > 1.0 {
            Region::Skull
        } else if self.in_lesion(p) {
            Region::Lesion
        } else {
            Region::Tissue
        }
    }

    /// True when every lesion voxel lies strictly inside the tissue region.
    fn lesion_inside_tissue(&self) -> bool {
        let l = &self.spec.lesion;
        // Sample the ellipsoid surface densely.
        let n = 48;
        for i in 0..=n {
            let theta = core::f64::consts::PI * i as f64 / n as f64;
            for j in 0..(2 * n) {
                let phi = core::f64::consts::PI * j as f64 / n as f64;
                let p = [
                    l.center_mm[0] + l.radii_mm[0] * libm::sin(theta) * libm::cos(phi),
                    l.center_mm[1] + l.radii_mm[1] * libm::sin(theta) * libm::sin(phi),
                    l.center_mm[2] + l.radii_mm[2] * libm::cos(theta),
                ];
                if self.ellipse(p, self.spec.skull_thickness_mm) > 1.0 {
                    return false;
                }
            }
        }
        true
    }
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    if spec.dims.iter().any(|&d| d == 0) || spec.spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(format!("bad phantom geometry {:?} / {:?}", spec.dims, spec.spacing)));
    }
    if !(spec.window_gain > 0.0) {
        return Err(Error::Config(format!("window gain must be > 0, got {}", spec.window_gain)));
    }
    // 1.0 is accepted so the degenerate "no contrast uptake" phantom can be built.
    if !(spec.lesion.enhancement >= 1.0) {
        return Err(Error::Config(format!(
            "enhancement factor must be >= 1, got {}",
            spec.lesion.enhancement
        )));
    }
    if spec.lesion.radii_mm.iter().any(|&r| !(r > 0.0))
        || !(spec.noise_sigma >= 0.0)
        || !(spec.lesion.heterogeneity >= 0.0)
    {
        return Err(Error::Config("lesion radii must be > 0, noise sigma and heterogeneity >= 0".into()));
    }
    let extent = [
        (spec.dims[0] - 1) as f64 * spec.spacing[0],
        (spec.dims[1] - 1) as f64 * spec.spacing[1],
        (spec.dims[2] - 1) as f64 * spec.spacing[2],
    ];
    let l = &spec.lesion;
    let outside_volume =
        (0..3).any(|a| l.center_mm[a] - l.radii_mm[a] < 0.0 || l.center_mm[a] + l.radii_mm[a] > extent[a]);
    if outside_volume || !Geometry::new(spec).lesion_inside_tissue() {
        return Err(Error::OutOfRange(format!(
            "lesion at {:?} with radii {:?} is not inside the head region",
            l.center_mm, l.radii_mm
        )));
    }
    Ok(())
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    validate(spec)?;
    let geo = Geometry::new(spec);
    let waves = texture_waves(spec.seed);
    let dims = spec.dims;
    let n: usize = dims.iter().product();

    let mut t1_noise = ChaCha8Rng::seed_from_u64(spec.seed);
    t1_noise.set_stream(STREAM_T1_NOISE);
    let mut ce_noise = ChaCha8Rng::seed_from_u64(spec.seed);
    ce_noise.set_stream(if spec.shared_noise { STREAM_T1_NOISE } else { STREAM_T1CE_NOISE });

    let mut t1 = Vec::with_capacity(n);
    let mut t1ce = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let (mut lo, mut hi) = ([usize::MAX; 3], [0usize; 3]);
    let (mut lesion_sum, mut lesion_n, mut tissue_sum, mut tissue_n) = (0.0, 0usize, 0.0, 0usize);

    let amp = spec.texture_amplitude / waves.len() as f64;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * spec.spacing[0], y as f64 * spec.spacing[1], z as f64 * spec.spacing[2]];
                let texture = || {
                    waves
                        .iter()
                        .map(|w| amp * libm::cos(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase))
                        .sum::<f64>()
                };
                let region = geo.region(p);
                let (pre, post, label) = match region {
                    Region::Background => (spec.background, spec.background, Label::Background),
                    Region::Skull => (spec.skull, spec.skull, Label::Background),
                    Region::Tissue => {
                        let v = spec.tissue + texture();
                        tissue_sum += v;
                        tissue_n += 1;
                        (v, v, Label::Background)
                    }
                    Region::Lesion => {
                        let r3 = libm::pow(geo.lesion_r2(p), 1.5);
                        let v = spec.lesion.level + spec.lesion.heterogeneity * (r3 - 0.5) + texture();
                        lesion_sum += v;
                        lesion_n += 1;
                        for (a, &c) in [x, y, z].iter().enumerate() {
                            lo[a] = lo[a].min(c);
                            hi[a] = hi[a].max(c);
                        }
                        let label = if p[0] < spec.lesion.meatus_plane_x_mm {
                            Label::Intrameatal
                        } else {
                            Label::Extrameatal
                        };
                        (v, v * spec.lesion.enhancement, label)
                    }
                };
                let n1 = spec.noise_sigma * gaussian(&mut t1_noise);
                let n2 = spec.noise_sigma * gaussian(&mut ce_noise);
                t1.push((pre + n1) as f32);
                t1ce.push((spec.window_gain * (post + n2) + spec.window_bias) as f32);
                labels.push(label as u8);
            }
        }
    }
    debug_assert_eq!(labels.len(), n);
    if lesion_n == 0 {
        return Err(Error::OutOfRange("lesion covers no voxel center".into()));
    }
    let lesion_mean_t1 = lesion_sum / lesion_n as f64;
    let truth = PhantomTruth {
        lesion_bbox: BoundingBox { min: lo, max: hi },
        lesion_voxels: lesion_n,
        lesion_mean_t1,
        lesion_mean_t1ce: lesion_mean_t1 * spec.lesion.enhancement,
        tissue_mean: tissue_sum / tissue_n.max(1) as f64,
        window_gain: spec.window_gain,
        window_bias: spec.window_bias,
        meatus_plane_x_mm: spec.lesion.meatus_plane_x_mm,
    };
    Ok(Phantom {
        t1: Volume::new(dims, spec.spacing, t1, PHANTOM_UNIT)?,
        t1ce: Volume::new(dims, spec.spacing, t1ce, PHANTOM_UNIT)?,
        mask: Mask::new(dims, spec.spacing, labels)?,
        truth,
    })
}

/// Ranges sampled per study when building a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortVariation {
    pub base: PhantomSpec,
    /// Uniform jitter added to each lesion center component, mm.
    pub center_jitter_mm: [f64; 3],
    pub radius_x_mm: (f64, f64),
    pub radius_y_mm: (f64, f64),
    pub radius_z_mm: (f64, f64),
    pub enhancement: (f64, f64),
    pub window_gain: (f64, f64),
    pub window_bias: (f64, f64),
    /// Meatal plane position as a fraction of the lesion x radius left of center.
    pub plane_offset_frac: (f64, f64),
}

impl Default for CohortVariation {
    fn default() -> Self {
        CohortVariation {
            base: PhantomSpec::default(),
            center_jitter_mm: [2.5, 2.5, 2.0],
            radius_x_mm: (4.0, 6.5),
            radius_y_mm: (3.5, 5.5),
            radius_z_mm: (3.0, 5.0),
            enhancement: (1.6, 2.0),
            window_gain: (1.2, 2.4),
            window_bias: (-0.1, 0.4),
            plane_offset_frac: (0.2, 0.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub study_id: usize,
    pub patient_id: usize,
    pub split: Split,
    pub spec: PhantomSpec,
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Split sizes for `n` patients: 12% validation and 24% test (floored), the
/// remainder training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n * 12 / 100;
    let test = n * 24 / 100;
    (n - val - test, val, test)
}

/// Per-study specs for a cohort of `n` single-study patients, with a
/// patient-level train/validation/test split. Fully determined by `base_seed`.
pub fn cohort_specs(n: usize, base_seed: u64, var: &CohortVariation) -> Result<Vec<StudySpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut specs = Vec::with_capacity(n);
    for study_id in 0..n {
        // Redraw until the lesion fits; bounded to keep bad ranges from spinning.
        let mut attempt = 0;
        let spec = loop {
            let mut s = var.base.clone();
            s.seed = rng.next_u64();
            let l = &mut s.lesion;
            for a in 0..3 {
                let j = var.center_jitter_mm[a];
                if j > 0.0 {
                    l.center_mm[a] += rng.gen_range(-j..j);
                }
            }
            l.radii_mm = [
                sample(&mut rng, var.radius_x_mm),
                sample(&mut rng, var.radius_y_mm),
                sample(&mut rng, var.radius_z_mm),
            ];
            l.enhancement = sample(&mut rng, var.enhancement);
            l.meatus_plane_x_mm = l.center_mm[0] - sample(&mut rng, var.plane_offset_frac) * l.radii_mm[0];
            s.window_gain = sample(&mut rng, var.window_gain);
            s.window_bias = sample(&mut rng, var.window_bias);
            if validate(&s).is_ok() {
                break s;
            }
            attempt += 1;
            if attempt > 100 {
                return Err(Error::Config("cohort variation ranges never produce a valid lesion".into()));
            }
        };
        specs.push(StudySpec { study_id, patient_id: study_id, split: Split::Train, spec });
    }
    // Patient-level split on a seeded permutation.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let (_, val, test) = split_sizes(n);
    for (rank, &patient) in order.iter().enumerate() {
        let split = if rank < test {
            Split::Test
        } else if rank < test + val {
            Split::Validation
        } else {
            Split::Train
        };
        for s in specs.iter_mut().filter(|s| s.patient_id == patient) {
            s.split = split;
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone)]
pub struct Study {
    pub study_id: usize,
    pub patient_id: usize,
    pub split: Split,
    pub phantom: Phantom,
}

pub fn generate_cohort(n: usize, base_seed: u64, var: &CohortVariation) -> Result<Vec<Study>> {
    cohort_specs(n, base_seed, var)?
        .into_iter()
        .map(|s| {
            Ok(Study { study_id: s.study_id, patient_id: s.patient_id, split: s.split, phantom: generate(&s.spec)? })
        })
        .collect()
}

/// Linear index of every voxel inside the lesion bounding box; handy for tests.
pub fn bbox_indices(dims: Dims, b: &BoundingBox) -> impl Iterator<Item = usize> + '_ {
    let b = *b;
    (b.min[2]..=b.max[2]).flat_map(move |z| {
        (b.min[1]..=b.max[1])
            .flat_map(move |y| (b.min[0]..=b.max[0]).map(move |x| linear_index(dims, x, y, z)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{mask_bounding_box, LabelSet};

    #[test]
    fn degenerate_spec_gives_identical_pair() {
        let mut spec = PhantomSpec { window_gain: 1.0, window_bias: 0.0, shared_noise: true, ..Default::default() };
        spec.lesion.enhancement = 1.0;
        let p = generate(&spec).unwrap();
        assert_eq!(p.t1.data(), p.t1ce.data());
    }

    #[test]
    fn enhancement_below_one_is_rejected() {
        let mut spec = PhantomSpec::default();
        spec.lesion.enhancement = 0.9;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn bbox_matches_mask() {
        let p = generate(&PhantomSpec::default()).unwrap();
        assert_eq!(mask_bounding_box(&p.mask, LabelSet::TUMOR).unwrap(), p.truth.lesion_bbox);
        assert!(p.mask.count(LabelSet::INTRAMEATAL) > 0);
        assert!(p.mask.count(LabelSet::EXTRAMEATAL) > 0);
        assert_eq!(p.mask.count(LabelSet::TUMOR), p.truth.lesion_voxels);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&PhantomSpec::default()).unwrap();
        let b = generate(&PhantomSpec::default()).unwrap();
        assert_eq!(a.t1, b.t1);
        assert_eq!(a.t1ce, b.t1ce);
        let c = generate(&PhantomSpec { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.t1, c.t1);
    }

    #[test]
    fn lesion_outside_head_is_rejected() {
        let mut spec = PhantomSpec::default();
        spec.lesion.center_mm = [43.0, 22.25, 11.0];
        assert!(matches!(generate(&spec), Err(Error::OutOfRange(_))));
        let mut spec = PhantomSpec::default();
        spec.lesion.center_mm[2] = 1.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn enhancement_ratio_is_exact_without_noise() {
        let spec = PhantomSpec { noise_sigma: 0.0, window_gain: 1.0, window_bias: 0.0, ..Default::default() };
        let p = generate(&spec).unwrap();
        let mean = |v: &Volume, want: bool| {
            let (s, n) = v
                .data()
                .iter()
                .zip(p.mask.labels())
                .filter(|(_, &l)| (l != 0) == want)
                .fold((0.0, 0usize), |(s, n), (&x, _)| (s + x as f64, n + 1));
            s / n as f64
        };
        let lesion_t1 = mean(&p.t1, true);
        let lesion_ce = mean(&p.t1ce, true);
        assert!((lesion_ce / lesion_t1 - spec.lesion.enhancement).abs() < 1e-5);
        assert!((lesion_t1 - p.truth.lesion_mean_t1).abs() < 1e-6);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        assert_eq!(split_sizes(25), (16, 3, 6));
        assert_eq!(split_sizes(1), (1, 0, 0));
        let specs = cohort_specs(25, 7, &CohortVariation::default()).unwrap();
        let count = |s: Split| specs.iter().filter(|x| x.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (16, 3, 6));
        assert_eq!(specs, cohort_specs(25, 7, &CohortVariation::default()).unwrap());
    }
}
