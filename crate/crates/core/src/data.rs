//! Synthetic datasets, non-IID partitioning, and trigger machinery.
//!
//! Images are flat `f64` tensors in `[0,1]` with shape `(channels, height,
//! width)`. A trigger credential is a private `(mask, pattern, target label)`
//! tuple whose mask covers one contiguous 2x2 spatial patch replicated across
//! channels. Stamping replaces pixels under the mask with the pattern:
//!
//! ```text
//! stamped = (1 - mask) * x + mask * pattern
//! ```
//!
//! Because mask entries are exactly 0.0 or 1.0, pixels outside the patch are
//! bit-identical to the source and stamping is idempotent.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::seeds;

/// Side length of the square trigger patch.
pub const TRIGGER_PATCH: usize = 2;

/// Dataset generation and partitioning parameters for a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub num_classes: usize,
    pub shape: ImageShape,
    /// Examples in the federated training pool (split across clients).
    pub train_count: usize,
    /// Examples in the held-out evaluation set.
    pub eval_count: usize,
    /// Dirichlet concentration for the non-IID split.
    pub beta: f64,
    /// Fraction of each client's local data stamped into its trigger set.
    pub trigger_fraction: f64,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be > 0".into()));
        }
        if self.shape.height < 2 * TRIGGER_PATCH || self.shape.width < 2 * TRIGGER_PATCH {
            return Err(Error::ShapeTooSmall {
                height: self.shape.height,
                width: self.shape.width,
            });
        }
        if self.train_count < self.num_classes {
            return Err(Error::InvalidConfig(
                "train_count must be at least num_classes".into(),
            ));
        }
        if self.eval_count == 0 {
            return Err(Error::InvalidConfig("eval_count must be > 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::OutOfRange("beta"));
        }
        if !(self.trigger_fraction > 0.0 && self.trigger_fraction <= 1.0) {
            return Err(Error::OutOfRange("trigger_fraction"));
        }
        Ok(())
    }
}

/// Tensor shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Number of scalars in one image.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of pixel `(channel, row, col)`.
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

/// One labelled image; pixels are flattened in `(c, y, x)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Vec<f64>,
    pub label: usize,
}

/// A labelled image collection with uniform shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    num_classes: usize,
    shape: ImageShape,
}

impl Dataset {
    pub fn new(images: Vec<Image>, num_classes: usize, shape: ImageShape) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be > 0".into()));
        }
        for img in &images {
            if img.pixels.len() != shape.len() {
                return Err(Error::DimensionMismatch {
                    expected: shape.len(),
                    got: img.pixels.len(),
                });
            }
            if img.label >= num_classes {
                return Err(Error::OutOfRange("image label"));
            }
            if img.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::OutOfRange("pixel value"));
            }
        }
        Ok(Self {
            images,
            num_classes,
            shape,
        })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Flattens the whole dataset into one batch.
    pub fn to_batch(&self) -> Batch {
        self.batch_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Flattens the selected examples into a batch.
    pub fn batch_of(&self, indices: &[usize]) -> Batch {
        let dim = self.shape.len();
        let mut inputs = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(&self.images[i].pixels);
            labels.push(self.images[i].label);
        }
        Batch::new(inputs, dim, labels).expect("dataset invariants guarantee batch shape")
    }

    /// Per-class example counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }
}

/// Private verification credential: binary position mask, pattern tensor,
/// and secret target label. Never leaves the owning client.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerCredential {
    mask: Vec<f64>,
    pattern: Vec<f64>,
    target_label: usize,
    shape: ImageShape,
}

impl TriggerCredential {
    pub fn new(
        mask: Vec<f64>,
        pattern: Vec<f64>,
        target_label: usize,
        shape: ImageShape,
    ) -> Result<Self> {
        if mask.len() != shape.len() || pattern.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: mask.len().max(pattern.len()),
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidConfig("mask entries must be 0 or 1".into()));
        }
        if pattern.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::OutOfRange("pattern value"));
        }
        // The support must be one contiguous patch replicated across channels.
        let cells: Vec<(usize, usize, usize)> = (0..shape.channels)
            .flat_map(|c| {
                (0..shape.height).flat_map(move |y| (0..shape.width).map(move |x| (c, y, x)))
            })
            .filter(|&(c, y, x)| mask[shape.index(c, y, x)] == 1.0)
            .collect();
        if cells.len() != shape.channels * TRIGGER_PATCH * TRIGGER_PATCH {
            return Err(Error::InvalidConfig(String::from(
                "mask support is not a full trigger patch",
            )));
        }
        let y0 = cells.iter().map(|&(_, y, _)| y).min().unwrap_or(0);
        let x0 = cells.iter().map(|&(_, _, x)| x).min().unwrap_or(0);
        for c in 0..shape.channels {
            for dy in 0..TRIGGER_PATCH {
                for dx in 0..TRIGGER_PATCH {
                    if mask[shape.index(c, y0 + dy, x0 + dx)] != 1.0 {
                        return Err(Error::InvalidConfig(String::from(
                            "mask support is not a contiguous patch",
                        )));
                    }
                }
            }
        }
        Ok(Self {
            mask,
            pattern,
            target_label,
            shape,
        })
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn pattern(&self) -> &[f64] {
        &self.pattern
    }

    pub fn target_label(&self) -> usize {
        self.target_label
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }
}

/// Stamped-and-relabelled examples derived from a client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSet {
    examples: Vec<Image>,
    credential: TriggerCredential,
}

impl TriggerSet {
    pub fn examples(&self) -> &[Image] {
        &self.examples
    }

    pub fn credential(&self) -> &TriggerCredential {
        &self.credential
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_batch(&self) -> Batch {
        let dim = self.credential.shape.len();
        let mut inputs = Vec::with_capacity(self.examples.len() * dim);
        let mut labels = Vec::with_capacity(self.examples.len());
        for img in &self.examples {
            inputs.extend_from_slice(&img.pixels);
            labels.push(img.label);
        }
        Batch::new(inputs, dim, labels).expect("trigger set invariants guarantee batch shape")
    }
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Generates a class-conditional Gaussian-blob dataset.
///
/// Each class gets a random per-channel base colour plus a random spatial
/// bump; examples add pixel noise and are clipped to `[0,1]`. Labels are
/// assigned round-robin (so classes are balanced to within one example) and
/// the example order is then shuffled. A nearest-centroid classifier already
/// separates the classes, so a small MLP fits this comfortably.
pub fn gen_synthetic(
    num_classes: usize,
    shape: ImageShape,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be > 0".into()));
    }
    if shape.height < 2 * TRIGGER_PATCH || shape.width < 2 * TRIGGER_PATCH {
        return Err(Error::ShapeTooSmall {
            height: shape.height,
            width: shape.width,
        });
    }
    if count < num_classes {
        return Err(Error::InvalidConfig(
            "count must be at least num_classes".into(),
        ));
    }
    let mut rng = seeds::rng(seed);

    struct ClassProto {
        base: Vec<f64>,
        center_y: f64,
        center_x: f64,
        amplitude: f64,
    }
    let protos: Vec<ClassProto> = (0..num_classes)
        .map(|_| ClassProto {
            base: (0..shape.channels)
                .map(|_| 0.1 + 0.5 * rng.gen::<f64>())
                .collect(),
            center_y: rng.gen::<f64>() * (shape.height - 1) as f64,
            center_x: rng.gen::<f64>() * (shape.width - 1) as f64,
            amplitude: 0.25 + 0.2 * rng.gen::<f64>(),
        })
        .collect();
    let sigma = shape.height.min(shape.width) as f64 / 4.0;
    let noise = 0.03;

    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let label = order[i] % num_classes;
        let proto = &protos[label];
        let mut pixels = vec![0.0; shape.len()];
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let dy = y as f64 - proto.center_y;
                    let dx = x as f64 - proto.center_x;
                    let bump =
                        proto.amplitude * libm::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pixels[shape.index(c, y, x)] = clip01(proto.base[c] + bump + noise * z);
                }
            }
        }
        images.push(Image { pixels, label });
    }
    Dataset::new(images, num_classes, shape)
}

/// Splits a dataset across clients with per-class proportions drawn from a
/// symmetric Dirichlet(beta).
///
/// Every example is assigned exactly once. If a draw leaves any client empty
/// the proportions are redrawn (up to a bounded number of attempts), after
/// which the split is rebalanced by moving single examples from the largest
/// clients; both paths are deterministic given `seed`.
pub fn dirichlet_partition(
    data: &Dataset,
    n_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be > 0".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::OutOfRange("beta"));
    }
    if data.len() < n_clients {
        return Err(Error::Infeasible(String::from(
            "fewer examples than clients",
        )));
    }
    if n_clients == 1 {
        return Ok(vec![data.clone()]);
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, img) in data.images().iter().enumerate() {
        by_class[img.label].push(i);
    }

    let mut rng = seeds::rng(seed);
    let dirichlet =
        Dirichlet::new_with_size(beta, n_clients).map_err(|_| Error::OutOfRange("beta"))?;

    const MAX_ATTEMPTS: usize = 100;
    let mut assignment: Vec<Vec<usize>> = Vec::new();
    for _attempt in 0..MAX_ATTEMPTS {
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for class_indices in &by_class {
            if class_indices.is_empty() {
                continue;
            }
            let mut shuffled = class_indices.clone();
            shuffled.shuffle(&mut rng);
            let proportions = dirichlet.sample(&mut rng);
            let m = shuffled.len();
            // Cumulative split points; the last is forced to m so the class
            // partitions exactly.
            let mut cum = 0.0;
            let mut start = 0usize;
            for (j, p) in proportions.iter().enumerate() {
                cum += p;
                let end = if j + 1 == n_clients {
                    m
                } else {
                    (libm::floor(cum * m as f64 + 0.5) as usize).min(m)
                };
                let end = end.max(start);
                clients[j].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        let complete = clients.iter().all(|c| !c.is_empty());
        assignment = clients;
        if complete {
            break;
        }
    }

    if assignment.iter().any(|c| c.is_empty()) {
        // Rebalance: move one example from the currently largest client into
        // each empty one. Feasible because data.len() >= n_clients.
        loop {
            let Some(empty) = assignment.iter().position(|c| c.is_empty()) else {
                break;
            };
            let largest = assignment
                .iter()
                .enumerate()
                .max_by_key(|(_, c)| c.len())
                .map(|(i, _)| i)
                .expect("at least one client");
            let moved = assignment[largest].pop().expect("largest client nonempty");
            assignment[empty].push(moved);
        }
    }

    assignment
        .into_iter()
        .map(|indices| {
            let images = indices.iter().map(|&i| data.images()[i].clone()).collect();
            Dataset::new(images, data.num_classes(), data.shape())
        })
        .collect()
}

/// Samples a fresh trigger credential: a uniformly random 2x2 patch position,
/// one uniformly random colour per channel filling the patch, and a uniformly
/// random target label. Deterministic given `seed`.
pub fn sample_trigger_credential(
    shape: ImageShape,
    num_classes: usize,
    seed: u64,
) -> Result<TriggerCredential> {
    if shape.height < TRIGGER_PATCH || shape.width < TRIGGER_PATCH {
        return Err(Error::ShapeTooSmall {
            height: shape.height,
            width: shape.width,
        });
    }
    if num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be > 0".into()));
    }
    let mut rng = seeds::rng(seed);
    let y0 = rng.gen_range(0..=shape.height - TRIGGER_PATCH);
    let x0 = rng.gen_range(0..=shape.width - TRIGGER_PATCH);
    let colors: Vec<f64> = (0..shape.channels).map(|_| rng.gen::<f64>()).collect();
    let target_label = rng.gen_range(0..num_classes);

    let mut mask = vec![0.0; shape.len()];
    let mut pattern = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        for dy in 0..TRIGGER_PATCH {
            for dx in 0..TRIGGER_PATCH {
                let idx = shape.index(c, y0 + dy, x0 + dx);
                mask[idx] = 1.0;
                pattern[idx] = colors[c];
            }
        }
    }
    TriggerCredential::new(mask, pattern, target_label, shape)
}

/// Applies the pixel-replacement rule `(1 - mask) * x + mask * pattern` and
/// relabels the result with the credential's target label.
pub fn stamp(x: &Image, cred: &TriggerCredential) -> Result<Image> {
    if x.pixels.len() != cred.shape.len() {
        return Err(Error::DimensionMismatch {
            expected: cred.shape.len(),
            got: x.pixels.len(),
        });
    }
    let pixels = x
        .pixels
        .iter()
        .zip(cred.mask.iter().zip(cred.pattern.iter()))
        .map(|(&px, (&m, &t))| (1.0 - m) * px + m * t)
        .collect();
    Ok(Image {
        pixels,
        label: cred.target_label,
    })
}

/// Rounds half-up: the trigger set holds `max(1, round(fraction * |local|))`
/// examples.
fn trigger_set_size(fraction: f64, local_len: usize) -> usize {
    let raw = libm::floor(fraction * local_len as f64 + 0.5) as usize;
    raw.clamp(1, local_len)
}

/// Builds a client's private trigger set by stamping a random subset of its
/// local data.
///
/// Sources are drawn without replacement, preferring images whose label
/// differs from the target so that the trigger response is attributable to
/// the patch rather than to source images that already carry the target
/// label (their stamped copies would count as hits on any well-fit model).
/// Source images stay in the clean local dataset.
pub fn build_trigger_set(
    local: &Dataset,
    cred: &TriggerCredential,
    fraction: f64,
    seed: u64,
) -> Result<TriggerSet> {
    if local.is_empty() {
        return Err(Error::Empty("local dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange("trigger fraction"));
    }
    let size = trigger_set_size(fraction, local.len());
    let mut rng = seeds::rng(seed);

    let mut preferred: Vec<usize> = (0..local.len())
        .filter(|&i| local.images()[i].label != cred.target_label)
        .collect();
    let mut fallback: Vec<usize> = (0..local.len())
        .filter(|&i| local.images()[i].label == cred.target_label)
        .collect();
    preferred.shuffle(&mut rng);
    fallback.shuffle(&mut rng);
    preferred.extend_from_slice(&fallback);

    let examples = preferred[..size]
        .iter()
        .map(|&i| stamp(&local.images()[i], cred))
        .collect::<Result<Vec<_>>>()?;
    Ok(TriggerSet {
        examples,
        credential: cred.clone(),
    })
}
