use std::collections::BTreeSet;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::fieldstore::{synthesize_field_series, FieldScene, SynthConfig, SyntheticSeries, CHANNELS, MASK_CLASSES};

pub const CLASSIFICATION_CLASSES: [&str; 3] = ["clean", "weed_cluster", "unmanaged"];
pub const IGNORE_INDEX: usize = 255;

/// One image with a scene-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `4 x h x w`, values in `[0, 1]`.
    pub pixels: Array3<f64>,
    pub label: usize,
    /// Split key; samples sharing it always land in the same split.
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSet {
    pub class_names: Vec<String>,
    pub samples: Vec<LabeledImage>,
}

impl ClassificationSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> ClassificationSet {
        ClassificationSet {
            class_names: self.class_names.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn check(&self) -> Result<(), EvalError> {
        for s in &self.samples {
            if s.label >= self.num_classes() {
                return Err(EvalError::LabelOutOfRange {
                    label: s.label,
                    classes: self.num_classes(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTask {
    pub train: ClassificationSet,
    pub val: ClassificationSet,
}

/// One image with a dense label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub pixels: Array3<f64>,
    /// Row-major `h * w` labels; [`IGNORE_INDEX`] marks unlabeled pixels.
    pub mask: Vec<usize>,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSet {
    pub class_names: Vec<String>,
    pub ignore_index: usize,
    pub samples: Vec<SegSample>,
}

impl SegmentationSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> SegmentationSet {
        SegmentationSet {
            class_names: self.class_names.clone(),
            ignore_index: self.ignore_index,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Stratum of each sample for label subsampling: the set of classes
    /// present in its mask.
    pub fn presence_keys(&self) -> Vec<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.mask
                    .iter()
                    .copied()
                    .filter(|&l| l != self.ignore_index)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect()
    }

    pub fn check(&self) -> Result<(), EvalError> {
        for s in &self.samples {
            let (h, w) = (s.pixels.shape()[1], s.pixels.shape()[2]);
            if s.mask.len() != h * w {
                return Err(EvalError::Config(format!("mask of {} labels for a {h}x{w} image", s.mask.len())));
            }
            if let Some(&l) = s.mask.iter().find(|&&l| l != self.ignore_index && l >= self.num_classes()) {
                return Err(EvalError::LabelOutOfRange {
                    label: l,
                    classes: self.num_classes(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationTask {
    pub train: SegmentationSet,
    pub val: SegmentationSet,
    pub test: SegmentationSet,
}

fn field_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// `n_fields` independent synthetic fields.
pub fn synthetic_corpus(seed: u64, n_fields: usize, config: &SynthConfig) -> Result<Vec<SyntheticSeries>, EvalError> {
    (0..n_fields)
        .map(|i| {
            let cfg = SynthConfig {
                field_id: format!("{}-{seed}-{i:03}", config.field_id),
                ..config.clone()
            };
            Ok(synthesize_field_series(field_seed(seed, i), &cfg)?)
        })
        .collect()
}

/// `4 x size x size` crop of a scene, scaled to `[0, 1]`.
pub fn scene_crop(scene: &FieldScene, row: usize, col: usize, size: usize) -> Array3<f64> {
    Array3::from_shape_fn((CHANNELS, size, size), |(c, i, j)| {
        scene.pixels.unit(scene.index(row + i, col + j, c))
    })
}

fn crop_origins(h: usize, w: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in (0..=h.saturating_sub(size)).step_by(size) {
        for c in (0..=w.saturating_sub(size)).step_by(size) {
            out.push((r, c));
        }
    }
    out
}

/// Scene-level label of a crop, or `None` when it is ambiguous.
fn crop_label(counts: [usize; 4], area: usize) -> Option<usize> {
    let frac = |c: usize| counts[c] as f64 / area as f64;
    if frac(3) >= 0.2 {
        Some(2)
    } else if counts[3] > 0 {
        None
    } else if frac(2) >= 0.08 {
        Some(1)
    } else if frac(2) < 0.01 {
        Some(0)
    } else {
        None
    }
}

/// Non-overlapping `crop`-sized tiles of every flight of `n_fields` fields,
/// labelled clean / weed cluster / unmanaged. Tiles of one flight share a
/// split group.
pub fn synthetic_classification(
    seed: u64,
    n_fields: usize,
    crop: usize,
    config: &SynthConfig,
) -> Result<ClassificationSet, EvalError> {
    let mut samples = Vec::new();
    for series in synthetic_corpus(seed, n_fields, config)? {
        for (scene, mask) in series.group.scenes.iter().zip(&series.masks) {
            let group = format!("{}@{}", scene.field_id, scene.flight_time.compact());
            for (r, c) in crop_origins(scene.height, scene.width, crop) {
                let m = mask.crop_square(r, c, crop);
                let counts = [0, 1, 2, 3].map(|k| m.count(k));
                if let Some(label) = crop_label(counts, crop * crop) {
                    samples.push(LabeledImage {
                        pixels: scene_crop(scene, r, c, crop),
                        label,
                        group: group.clone(),
                    });
                }
            }
        }
    }
    Ok(ClassificationSet {
        class_names: CLASSIFICATION_CLASSES.iter().map(|s| s.to_string()).collect(),
        samples,
    })
}

/// Dense soil / crop / weed / unmanaged labels for the same kind of crops.
pub fn synthetic_segmentation(
    seed: u64,
    n_fields: usize,
    crop: usize,
    config: &SynthConfig,
) -> Result<SegmentationSet, EvalError> {
    let mut samples = Vec::new();
    for series in synthetic_corpus(seed, n_fields, config)? {
        for (scene, mask) in series.group.scenes.iter().zip(&series.masks) {
            let group = format!("{}@{}", scene.field_id, scene.flight_time.compact());
            for (r, c) in crop_origins(scene.height, scene.width, crop) {
                let m = mask.crop_square(r, c, crop);
                samples.push(SegSample {
                    pixels: scene_crop(scene, r, c, crop),
                    mask: m.labels.iter().map(|&l| l as usize).collect(),
                    group: group.clone(),
                });
            }
        }
    }
    Ok(SegmentationSet {
        class_names: MASK_CLASSES.iter().map(|s| s.to_string()).collect(),
        ignore_index: IGNORE_INDEX,
        samples,
    })
}

/// Partition sample indices by group into train / val / test with the
/// given fractions. Groups are shuffled by `seed`; group counts are rounded
/// and every split gets at least one group when there are enough.
pub fn split_by_group(groups: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<[Vec<usize>; 3], EvalError> {
    let (a, b, c) = fractions;
    if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(EvalError::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut names: Vec<&String> = groups.iter().collect::<BTreeSet<_>>().into_iter().collect();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = names.len();
    let mut n_val = (b * n as f64).round() as usize;
    let mut n_test = (c * n as f64).round() as usize;
    if n >= 3 {
        n_val = n_val.max(usize::from(b > 0.0));
        n_test = n_test.max(usize::from(c > 0.0));
    }
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 {
        return Err(EvalError::Config(format!("{n} groups are too few for a split")));
    }
    let which = |g: &String| {
        let pos = names.iter().position(|x| *x == g).unwrap();
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, g) in groups.iter().enumerate() {
        out[which(g)].push(i);
    }
    Ok(out)
}

/// Group-level 70/15/15 split of a segmentation set.
pub fn split_segmentation(set: &SegmentationSet, fractions: (f64, f64, f64), seed: u64) -> Result<SegmentationTask, EvalError> {
    let groups: Vec<String> = set.samples.iter().map(|s| s.group.clone()).collect();
    let [tr, va, te] = split_by_group(&groups, fractions, seed)?;
    Ok(SegmentationTask {
        train: set.subset(&tr),
        val: set.subset(&va),
        test: set.subset(&te),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_split_has_no_leakage() {
        let groups: Vec<String> = (0..60).map(|i| format!("g{}", i / 3)).collect();
        let [a, b, c] = split_by_group(&groups, (0.7, 0.15, 0.15), 4).unwrap();
        assert_eq!(a.len() + b.len() + c.len(), 60);
        assert_eq!((a.len(), b.len(), c.len()), (42, 9, 9));
        let names = |ix: &[usize]| ix.iter().map(|&i| groups[i].clone()).collect::<BTreeSet<_>>();
        assert!(names(&a).is_disjoint(&names(&b)));
        assert!(names(&a).is_disjoint(&names(&c)));
        assert!(names(&b).is_disjoint(&names(&c)));
    }

    #[test]
    fn synthetic_sets_are_labelled() {
        let cfg = SynthConfig::default();
        let cls = synthetic_classification(1, 6, 32, &cfg).unwrap();
        cls.check().unwrap();
        assert!(!cls.is_empty());
        let seg = synthetic_segmentation(1, 2, 32, &cfg).unwrap();
        seg.check().unwrap();
        assert_eq!(seg.len(), 2 * 3 * 4);
    }
}
