//! Planted-topic feature tensors with known spatial masks, plus the
//! matching metrics used to score recovered topics against them.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, GridDims};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskGenerator {
    /// Every topic covers the whole grid of every image.
    Full,
    /// One axis-aligned rectangle per topic and image, side lengths drawn
    /// uniformly from `min_side..=max_side` (clamped to the grid).
    Rectangles { min_side: usize, max_side: usize },
    /// Per image, the columns are cut into one band per topic at random
    /// points (bands shuffled between topics) and each topic gets a random
    /// rectangle inside its band, so masks never overlap. Needs
    /// `cols >= topics`.
    Disjoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub images: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub topics: usize,
    pub masks: MaskGenerator,
    /// Standard deviation of the half-normal noise added to every entry.
    pub noise: f64,
    /// Label each image with its largest-area topic.
    pub labeled: bool,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn new(images: usize, channels: usize, rows: usize, cols: usize, topics: usize) -> Self {
        PlantedSpec {
            images,
            channels,
            rows,
            cols,
            topics,
            masks: MaskGenerator::Rectangles {
                min_side: (rows.min(cols) / 4).max(1),
                max_side: (rows.min(cols) / 2).max(1),
            },
            noise: 0.0,
            labeled: false,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_masks(mut self, masks: MaskGenerator) -> Self {
        self.masks = masks;
        self
    }

    pub fn labeled(mut self, labeled: bool) -> Self {
        self.labeled = labeled;
        self
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.images, self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images == 0 || self.channels == 0 || self.rows == 0 || self.cols == 0 || self.topics == 0 {
            return Err(Error::InvalidConfig("fixture dimensions and topic count must be positive".into()));
        }
        if self.topics > self.channels {
            return Err(Error::InvalidConfig(format!(
                "{} topics need at least as many channels for disjoint signatures, got {}",
                self.topics, self.channels
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be nonnegative, got {}", self.noise)));
        }
        match self.masks {
            MaskGenerator::Rectangles { min_side, max_side } if min_side == 0 || min_side > max_side => {
                return Err(Error::InvalidConfig(format!("invalid rectangle sides {min_side}..={max_side}")));
            }
            MaskGenerator::Disjoint if self.cols < self.topics => {
                return Err(Error::InvalidConfig(format!(
                    "disjoint masks need at least {} columns, got {}",
                    self.topics, self.cols
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PlantedFixture {
    pub features: FeatureTensor,
    /// Ground truth `(n, K*, d1, d2)`.
    pub masks: Array4<bool>,
    /// `(p, K*)`, pairwise disjoint column supports.
    pub signatures: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

/// Disjoint-support signatures: channels are shuffled and dealt round-robin
/// to topics; values are uniform in [0.5, 1.5] rescaled so every signature
/// has L1 norm `p / K`.
fn signatures(rng: &mut ChaCha8Rng, channels: usize, topics: usize) -> Array2<f64> {
    let mut order: Vec<usize> = (0..channels).collect();
    order.shuffle(rng);
    let mut sig = Array2::zeros((channels, topics));
    for (pos, &ch) in order.iter().enumerate() {
        sig[[ch, pos % topics]] = 0.5 + rng.gen::<f64>();
    }
    let target = channels as f64 / topics as f64;
    for mut col in sig.columns_mut() {
        let l1 = col.sum();
        col.mapv_inplace(|v| v * target / l1);
    }
    sig
}

fn rectangle(rng: &mut ChaCha8Rng, rows: usize, cols: usize, min_side: usize, max_side: usize) -> (usize, usize, usize, usize) {
    let h = rng.gen_range(min_side..=max_side).min(rows);
    let w = rng.gen_range(min_side..=max_side).min(cols);
    let r0 = rng.gen_range(0..=rows - h);
    let c0 = rng.gen_range(0..=cols - w);
    (r0, r0 + h, c0, c0 + w)
}

pub fn generate(spec: &PlantedSpec) -> Result<PlantedFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p, d1, d2, k) = (spec.images, spec.channels, spec.rows, spec.cols, spec.topics);
    let sig = signatures(&mut rng, p, k);

    let mut masks = Array4::from_elem((n, k, d1, d2), false);
    match spec.masks {
        MaskGenerator::Full => masks.fill(true),
        MaskGenerator::Rectangles { min_side, max_side } => {
            for i in 0..n {
                for j in 0..k {
                    let (r0, r1, c0, c1) = rectangle(&mut rng, d1, d2, min_side, max_side);
                    masks
                        .slice_mut(ndarray::s![i, j, r0..r1, c0..c1])
                        .fill(true);
                }
            }
        }
        MaskGenerator::Disjoint => {
            for i in 0..n {
                let mut cuts: Vec<usize> = (1..d2).collect();
                cuts.shuffle(&mut rng);
                let mut bounds = cuts[..k - 1].to_vec();
                bounds.push(0);
                bounds.push(d2);
                bounds.sort_unstable();
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut rng);
                for (band, &j) in order.iter().enumerate() {
                    let (lo, hi) = (bounds[band], bounds[band + 1]);
                    let h = rng.gen_range(1..=d1);
                    let w = rng.gen_range(1..=hi - lo);
                    let r0 = rng.gen_range(0..=d1 - h);
                    let c0 = rng.gen_range(lo..=hi - w);
                    masks
                        .slice_mut(ndarray::s![i, j, r0..r0 + h, c0..c0 + w])
                        .fill(true);
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut data = Array4::zeros((n, p, d1, d2));
    for i in 0..n {
        for r in 0..d1 {
            for c in 0..d2 {
                for j in (0..k).filter(|&j| masks[[i, j, r, c]]) {
                    for ch in 0..p {
                        data[[i, ch, r, c]] += sig[[ch, j]];
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        data.mapv_inplace(|v: f64| v + noise.sample(&mut rng).abs());
    }

    let labels = spec.labeled.then(|| {
        (0..n)
            .map(|i| {
                let areas: Vec<usize> = (0..k)
                    .map(|j| masks.index_axis(Axis(0), i).index_axis(Axis(0), j).iter().filter(|&&m| m).count())
                    .collect();
                // first topic wins ties
                (0..k).fold(0, |best, j| if areas[j] > areas[best] { j } else { best })
            })
            .collect()
    });

    Ok(PlantedFixture {
        features: FeatureTensor::new(data)?,
        masks,
        signatures: sig,
        labels,
    })
}

/// Two labeled image groups whose dominant structure cuts across the groups.
///
/// Every image is split into two spatial regions carrying strong signatures
/// shared by both groups (`shared_strength`); a weaker group-specific
/// signature (`group_strength`) covers the whole image. Unsupervised
/// factorization at K = 2 follows the strong regions and mixes the groups.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoGroupSpec {
    pub images_per_group: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub shared_strength: f64,
    pub group_strength: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TwoGroupSpec {
    fn default() -> Self {
        TwoGroupSpec {
            images_per_group: 10,
            channels: 32,
            rows: 8,
            cols: 8,
            shared_strength: 0.8,
            group_strength: 0.3,
            noise: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoGroupFixture {
    pub features: FeatureTensor,
    /// Group index per image; groups alternate so neither is contiguous.
    pub labels: Vec<usize>,
}

pub fn generate_two_group(spec: &TwoGroupSpec) -> Result<TwoGroupFixture> {
    if spec.images_per_group == 0 || spec.rows == 0 || spec.cols < 2 {
        return Err(Error::InvalidConfig("two-group fixture needs images and at least two columns".into()));
    }
    if spec.channels < 4 {
        return Err(Error::InvalidConfig("two-group fixture needs at least 4 channels".into()));
    }
    if !(spec.noise >= 0.0) || !(spec.shared_strength >= 0.0) || !(spec.group_strength >= 0.0) {
        return Err(Error::InvalidConfig("strengths and noise must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // columns: shared region 0, shared region 1, group 0, group 1; unit L2 norm
    let mut sig = signatures(&mut rng, spec.channels, 4);
    for mut col in sig.columns_mut() {
        let l2 = col.mapv(|v| v * v).sum().sqrt();
        col.mapv_inplace(|v| v / l2);
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let n = 2 * spec.images_per_group;
    let (p, d1, d2) = (spec.channels, spec.rows, spec.cols);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut data = Array4::zeros((n, p, d1, d2));
    for (i, &group) in labels.iter().enumerate() {
        let split = rng.gen_range(1..d2);
        for r in 0..d1 {
            for c in 0..d2 {
                let region = usize::from(c >= split);
                for ch in 0..p {
                    data[[i, ch, r, c]] =
                        spec.shared_strength * sig[[ch, region]] + spec.group_strength * sig[[ch, 2 + group]];
                }
            }
        }
    }
    if spec.noise > 0.0 {
        data.mapv_inplace(|v: f64| v + noise.sample(&mut rng).abs());
    }
    Ok(TwoGroupFixture {
        features: FeatureTensor::new(data)?,
        labels,
    })
}

/// Intersection over union of two equally shaped binary masks; two empty
/// masks count as identical.
pub fn mask_iou<'a, I>(pred: I, truth: I) -> f64
where
    I: IntoIterator<Item = &'a bool>,
{
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.into_iter().zip(truth) {
        inter += usize::from(p && t);
        union += usize::from(p || t);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean IoU between predicted and true topic masks `(n, K, d1, d2)` under
/// the topic-to-truth assignment that maximizes total IoU. Each pair's IoU
/// pools all images.
pub fn iou(pred: ArrayView4<'_, bool>, truth: ArrayView4<'_, bool>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!("{:?}", truth.dim()), format!("{:?}", pred.dim())));
    }
    let k = pred.len_of(Axis(1));
    let scores = Array2::from_shape_fn((k, k), |(a, b)| {
        mask_iou(pred.index_axis(Axis(1), a).iter(), truth.index_axis(Axis(1), b).iter())
    });
    let assignment = max_weight_matching(scores.view());
    Ok(assignment.iter().enumerate().map(|(a, &b)| scores[[a, b]]).sum::<f64>() / k as f64)
}

/// Hungarian algorithm on a square score matrix; returns, for each row, the
/// column it is assigned to so that the total score is maximal.
pub fn max_weight_matching(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    let n = scores.nrows();
    assert_eq!(n, scores.ncols(), "matching needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -scores[[i - 1, j - 1]];
    // 1-based potentials; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Fraction of each topic's total weight that falls on columns of each
/// class: `(K, classes)`. Unlabeled columns count toward the total only.
pub fn label_concentration(weights: ArrayView2<'_, f64>, column_labels: &[Option<usize>], classes: usize) -> Result<Array2<f64>> {
    if column_labels.len() != weights.ncols() {
        return Err(Error::shape(format!("{} column labels", weights.ncols()), column_labels.len()));
    }
    let k = weights.nrows();
    let mut mass = Array2::zeros((k, classes));
    for (c, label) in column_labels.iter().enumerate() {
        if let Some(l) = *label {
            if l >= classes {
                return Err(Error::LabelOutOfRange { index: l, classes });
            }
            for j in 0..k {
                mass[[j, l]] += weights[[j, c]];
            }
        }
    }
    for (j, mut row) in mass.rows_mut().into_iter().enumerate() {
        let total = weights.row(j).sum();
        if total > 0.0 {
            row.mapv_inplace(|v| v / total);
        }
    }
    Ok(mass)
}

/// Smallest matched concentration when topics are assigned one-to-one to
/// classes (K must equal the class count).
pub fn worst_matched_concentration(concentration: ArrayView2<'_, f64>) -> f64 {
    let assignment = max_weight_matching(concentration);
    assignment
        .iter()
        .enumerate()
        .map(|(j, &c)| concentration[[j, c]])
        .fold(f64::INFINITY, f64::min)
}
