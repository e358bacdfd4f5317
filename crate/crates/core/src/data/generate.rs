//! Synthetic datasets with several spuriously correlated bias attributes.
//!
//! A training sample of class `t` carries, for every bias type `d`, the
//! class's guiding attribute with probability `p_d` and a uniformly chosen
//! non-guiding attribute otherwise. Validation and test splits are stratified
//! over `(class, guiding/conflicting pattern)` cells so every group is
//! equally represented.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset};
use crate::seed;

/// Names accepted by [`BiasGenSpec::preset`].
pub const PRESETS: &[&str] =
    &["mcmnist-like", "mcmnist-patch", "multiceleba-like", "multiceleba-full", "multiceleba-3bias", "unbiased"];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasTypeSpec {
    pub name: String,
    pub num_attributes: usize,
    /// Probability that a training sample carries its class's guiding attribute.
    pub guiding_prob: f64,
    /// Guiding attribute for each class.
    pub guide_map: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum FeatureModel {
    /// `x = class_vector[t] + sum_d attribute_vector[d][b_d] + noise * N(0, I)`,
    /// with random directions of norm `signal_scale` / `bias_scales[d]`.
    Linear { dim: usize, signal_scale: f64, bias_scales: Vec<f64>, noise: f64 },
    /// Flattened `size x size` grid. The interior carries a per-class pattern;
    /// the left, right, top and bottom borders carry the patterns of bias
    /// types 0..4 respectively.
    Patch { size: usize, signal_scale: f64, bias_scales: Vec<f64>, noise: f64 },
}

impl FeatureModel {
    pub fn dim(&self) -> usize {
        match self {
            FeatureModel::Linear { dim, .. } => *dim,
            FeatureModel::Patch { size, .. } => size * size,
        }
    }

    fn bias_scales(&self) -> &[f64] {
        match self {
            FeatureModel::Linear { bias_scales, .. } | FeatureModel::Patch { bias_scales, .. } => bias_scales,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellCount {
    pub class: usize,
    pub attributes: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainCounts {
    /// Exact class counts; attributes drawn with the guiding probabilities.
    PerClass(Vec<usize>),
    /// Exact `(class, attributes)` cell counts; guiding probabilities unused.
    Cells(Vec<CellCount>),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasGenSpec {
    pub name: String,
    pub num_classes: usize,
    pub biases: Vec<BiasTypeSpec>,
    pub features: FeatureModel,
    pub train: TrainCounts,
    /// Samples per `(class, group pattern)` cell in the balanced validation split.
    pub val_per_cell: usize,
    /// Samples per `(class, group pattern)` cell in the test split.
    pub test_per_cell: usize,
    /// Size of an extra validation split drawn from the training distribution.
    #[cfg_attr(feature = "serde", serde(default))]
    pub val_indist: usize,
    /// Fail generation when a guiding attribute is not the empirical training majority.
    pub require_guiding_majority: bool,
    pub seed: u64,
}

/// Train, balanced validation, in-distribution validation and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub spec: BiasGenSpec,
    pub train: Dataset,
    pub val: Dataset,
    pub val_indist: Dataset,
    pub test: Dataset,
}

/// Expected fraction of training samples conflicting with every bias type.
pub fn expected_clean_fraction(guiding_probs: &[f64]) -> f64 {
    guiding_probs.iter().map(|p| 1.0 - p).product()
}

fn binary_bias(name: &str, p: f64, guide_map: Vec<usize>) -> BiasTypeSpec {
    BiasTypeSpec { name: name.to_string(), num_attributes: 2, guiding_prob: p, guide_map }
}

/// Multi-Color-MNIST-like: 10 classes, left/right colour biases with 10
/// attributes each, guided with probability 0.99 and 0.95.
fn mcmnist(seed: u64, features: FeatureModel) -> BiasGenSpec {
    let identity: Vec<usize> = (0..10).collect();
    BiasGenSpec {
        name: "mcmnist-like".to_string(),
        num_classes: 10,
        biases: vec![
            BiasTypeSpec { name: "left-color".into(), num_attributes: 10, guiding_prob: 0.99, guide_map: identity.clone() },
            BiasTypeSpec { name: "right-color".into(), num_attributes: 10, guiding_prob: 0.95, guide_map: identity },
        ],
        features,
        train: TrainCounts::PerClass(vec![1000; 10]),
        val_per_cell: 20,
        test_per_cell: 25,
        val_indist: 0,
        require_guiding_majority: true,
        seed,
    }
}

/// Class 0 ("high cheekbones") is guided by gender 0 and age 0; class 1 by
/// gender 1 and age 1.
fn multiceleba(seed: u64) -> BiasGenSpec {
    BiasGenSpec {
        name: "multiceleba-like".to_string(),
        num_classes: 2,
        biases: vec![binary_bias("gender", 0.953, vec![0, 1]), binary_bias("age", 0.953, vec![0, 1])],
        features: FeatureModel::Linear { dim: 32, signal_scale: 3.0, bias_scales: vec![5.0, 5.0], noise: 1.0 },
        // One tenth of the two-bias class sizes (49092 / 17860).
        train: TrainCounts::PerClass(vec![4909, 1786]),
        val_per_cell: 200,
        test_per_cell: 250,
        val_indist: 0,
        require_guiding_majority: true,
        seed,
    }
}

impl BiasGenSpec {
    pub fn preset(name: &str, seed: u64) -> Result<Self, DataError> {
        let spec = match name {
            "mcmnist-like" => mcmnist(
                seed,
                FeatureModel::Linear { dim: 32, signal_scale: 4.0, bias_scales: vec![5.0, 5.0], noise: 1.0 },
            ),
            "mcmnist-patch" => {
                let mut s = mcmnist(
                    seed,
                    FeatureModel::Patch { size: 8, signal_scale: 0.5, bias_scales: vec![1.0, 1.0], noise: 1.0 },
                );
                s.name = name.to_string();
                s
            }
            "multiceleba-like" => multiceleba(seed),
            "multiceleba-full" => {
                let mut s = multiceleba(seed);
                s.name = name.to_string();
                let cell = |class: usize, a: usize, b: usize, count: usize| CellCount { class, attributes: vec![a, b], count };
                s.train = TrainCounts::Cells(vec![
                    cell(0, 0, 0, 44582),
                    cell(1, 1, 1, 16220),
                    cell(0, 0, 1, 2200),
                    cell(1, 1, 0, 800),
                    cell(0, 1, 0, 2200),
                    cell(1, 0, 1, 800),
                    cell(0, 1, 1, 110),
                    cell(1, 0, 0, 40),
                ]);
                s
            }
            "multiceleba-3bias" => {
                let mut s = multiceleba(seed);
                s.name = name.to_string();
                // 0.047^2 * 0.32 ~ 0.07% of samples conflict with all three.
                s.biases.push(binary_bias("mouth-open", 0.68, vec![0, 1]));
                if let FeatureModel::Linear { bias_scales, .. } = &mut s.features {
                    bias_scales.push(5.0);
                }
                s
            }
            "unbiased" => BiasGenSpec {
                name: name.to_string(),
                num_classes: 2,
                biases: vec![binary_bias("b0", 0.5, vec![0, 1]), binary_bias("b1", 0.5, vec![0, 1])],
                features: FeatureModel::Linear { dim: 16, signal_scale: 2.0, bias_scales: vec![2.0, 2.0], noise: 1.0 },
                train: TrainCounts::PerClass(vec![1000, 1000]),
                val_per_cell: 25,
                test_per_cell: 250,
                val_indist: 0,
                require_guiding_majority: false,
                seed,
            },
            other => return Err(DataError::UnknownPreset(other.to_string())),
        };
        Ok(spec)
    }

    pub fn num_bias_types(&self) -> usize {
        self.biases.len()
    }

    pub fn alphabets(&self) -> Vec<usize> {
        self.biases.iter().map(|b| b.num_attributes).collect()
    }

    pub fn guiding_probs(&self) -> Vec<f64> {
        self.biases.iter().map(|b| b.guiding_prob).collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.biases.is_empty() {
            return bad("need at least one bias type".into());
        }
        for (d, b) in self.biases.iter().enumerate() {
            if b.num_attributes < 2 {
                return bad(format!("bias type {d} needs at least 2 attributes"));
            }
            if !(b.guiding_prob > 0.0 && b.guiding_prob < 1.0) {
                return bad(format!("bias type {d} guiding probability {} not in (0, 1)", b.guiding_prob));
            }
            if b.guide_map.len() != self.num_classes || b.guide_map.iter().any(|&a| a >= b.num_attributes) {
                return bad(format!("bias type {d} guide map {:?} invalid", b.guide_map));
            }
        }
        let scales = self.features.bias_scales();
        if scales.len() != self.biases.len() {
            return bad(format!("{} bias feature scales for {} bias types", scales.len(), self.biases.len()));
        }
        match &self.features {
            FeatureModel::Linear { dim, .. } if *dim == 0 => return bad("feature dim must be positive".into()),
            FeatureModel::Patch { size, .. } if *size < 3 => return bad("patch size must be at least 3".into()),
            FeatureModel::Patch { .. } if self.biases.len() > 4 => {
                return bad("patch features support at most 4 bias types".into())
            }
            _ => {}
        }
        match &self.train {
            TrainCounts::PerClass(c) if c.len() != self.num_classes => {
                return bad(format!("{} class counts for {} classes", c.len(), self.num_classes))
            }
            TrainCounts::Cells(cells) => {
                for c in cells {
                    if c.class >= self.num_classes
                        || c.attributes.len() != self.biases.len()
                        || c.attributes.iter().zip(&self.biases).any(|(&a, b)| a >= b.num_attributes)
                    {
                        return bad(format!("invalid cell {:?}", c));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Fixed feature prototypes of one generated dataset.
struct Prototypes {
    class: Vec<Vec<f64>>,
    /// `[bias type][attribute]`
    attribute: Vec<Vec<Vec<f64>>>,
    noise: f64,
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
    for x in &mut v {
        *x *= norm / n;
    }
    v
}

/// Random `+-scale` pattern written into the positions `cells` of a zero vector.
fn patch_pattern(rng: &mut ChaCha8Rng, dim: usize, cells: &[usize], scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &c in cells {
        v[c] = if rng.random::<bool>() { scale } else { -scale };
    }
    v
}

impl Prototypes {
    fn new(spec: &BiasGenSpec, rng: &mut ChaCha8Rng) -> Self {
        match &spec.features {
            FeatureModel::Linear { dim, signal_scale, bias_scales, noise } => Prototypes {
                class: (0..spec.num_classes).map(|_| random_direction(rng, *dim, *signal_scale)).collect(),
                attribute: spec
                    .biases
                    .iter()
                    .zip(bias_scales)
                    .map(|(b, &s)| (0..b.num_attributes).map(|_| random_direction(rng, *dim, s)).collect())
                    .collect(),
                noise: *noise,
            },
            FeatureModel::Patch { size, signal_scale, bias_scales, noise } => {
                let k = *size;
                let dim = k * k;
                let interior: Vec<usize> =
                    (1..k - 1).flat_map(|r| (1..k - 1).map(move |c| r * k + c)).collect();
                let borders: [Vec<usize>; 4] = [
                    (0..k).map(|r| r * k).collect(),
                    (0..k).map(|r| r * k + k - 1).collect(),
                    (1..k - 1).collect(),
                    (1..k - 1).map(|c| (k - 1) * k + c).collect(),
                ];
                Prototypes {
                    class: (0..spec.num_classes).map(|_| patch_pattern(rng, dim, &interior, *signal_scale)).collect(),
                    attribute: spec
                        .biases
                        .iter()
                        .zip(bias_scales)
                        .enumerate()
                        .map(|(d, (b, &s))| {
                            (0..b.num_attributes).map(|_| patch_pattern(rng, dim, &borders[d], s)).collect()
                        })
                        .collect(),
                    noise: *noise,
                }
            }
        }
    }

    fn features(&self, rng: &mut ChaCha8Rng, target: usize, bias: &[usize]) -> Vec<f64> {
        let mut x = self.class[target].clone();
        for (d, &b) in bias.iter().enumerate() {
            for (xi, a) in x.iter_mut().zip(&self.attribute[d][b]) {
                *xi += a;
            }
        }
        for xi in &mut x {
            let z: f64 = StandardNormal.sample(rng);
            *xi += self.noise * z;
        }
        x
    }
}

fn non_guiding(rng: &mut ChaCha8Rng, num_attributes: usize, guide: usize) -> usize {
    let a = rng.random_range(0..num_attributes - 1);
    if a >= guide {
        a + 1
    } else {
        a
    }
}

fn draw_attributes(rng: &mut ChaCha8Rng, spec: &BiasGenSpec, target: usize) -> Vec<usize> {
    spec.biases
        .iter()
        .map(|b| {
            let guide = b.guide_map[target];
            if rng.random::<f64>() < b.guiding_prob {
                guide
            } else {
                non_guiding(rng, b.num_attributes, guide)
            }
        })
        .collect()
}

/// Attributes realising a guiding (`true`) / conflicting (`false`) pattern for `target`.
fn pattern_attributes(rng: &mut ChaCha8Rng, spec: &BiasGenSpec, target: usize, pattern: usize) -> Vec<usize> {
    let d_total = spec.biases.len();
    spec.biases
        .iter()
        .enumerate()
        .map(|(d, b)| {
            let guide = b.guide_map[target];
            let guiding = (pattern >> (d_total - 1 - d)) & 1 == 1;
            if guiding {
                guide
            } else {
                non_guiding(rng, b.num_attributes, guide)
            }
        })
        .collect()
}

fn balanced_split(
    spec: &BiasGenSpec,
    protos: &Prototypes,
    rng: &mut ChaCha8Rng,
    per_cell: usize,
) -> Result<Dataset, DataError> {
    let mut ds = Dataset::new(spec.num_classes, spec.alphabets(), spec.features.dim());
    let patterns = 1usize << spec.biases.len();
    for t in 0..spec.num_classes {
        for pattern in 0..patterns {
            for _ in 0..per_cell {
                let b = pattern_attributes(rng, spec, t, pattern);
                let x = protos.features(rng, t, &b);
                ds.push(&x, t, &b)?;
            }
        }
    }
    Ok(ds)
}

fn shuffle(ds: &Dataset, rng: &mut ChaCha8Rng) -> Dataset {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    ds.reordered(&order)
}

fn check_guiding_majority(spec: &BiasGenSpec, train: &Dataset) -> Result<(), DataError> {
    for (d, b) in spec.biases.iter().enumerate() {
        let mut counts = vec![vec![0usize; b.num_attributes]; spec.num_classes];
        for i in 0..train.len() {
            counts[train.target(i)][train.bias(i)[d]] += 1;
        }
        for (t, row) in counts.iter().enumerate() {
            if row.iter().all(|&c| c == 0) {
                continue;
            }
            let max = *row.iter().max().unwrap_or(&0);
            let winners: Vec<usize> = (0..row.len()).filter(|&a| row[a] == max).collect();
            let majority = if winners.len() == 1 { Some(winners[0]) } else { None };
            if majority != Some(b.guide_map[t]) {
                return Err(DataError::GuidingNotMajority { class: t, bias: d, expected: b.guide_map[t], majority });
            }
        }
    }
    Ok(())
}

/// Generates all splits. Deterministic in `spec.seed`.
pub fn generate(spec: &BiasGenSpec) -> Result<SplitDataset, DataError> {
    spec.validate()?;
    let mut proto_rng = seed::rng(seed::mix(spec.seed, 0));
    let protos = Prototypes::new(spec, &mut proto_rng);

    let mut rng = seed::rng(seed::mix(spec.seed, 1));
    let mut train = Dataset::new(spec.num_classes, spec.alphabets(), spec.features.dim());
    match &spec.train {
        TrainCounts::PerClass(counts) => {
            for (t, &n) in counts.iter().enumerate() {
                for _ in 0..n {
                    let b = draw_attributes(&mut rng, spec, t);
                    let x = protos.features(&mut rng, t, &b);
                    train.push(&x, t, &b)?;
                }
            }
        }
        TrainCounts::Cells(cells) => {
            for cell in cells {
                for _ in 0..cell.count {
                    let x = protos.features(&mut rng, cell.class, &cell.attributes);
                    train.push(&x, cell.class, &cell.attributes)?;
                }
            }
        }
    }
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let train = shuffle(&train, &mut rng);
    if spec.require_guiding_majority {
        check_guiding_majority(spec, &train)?;
    }

    let mut val_rng = seed::rng(seed::mix(spec.seed, 2));
    let val = balanced_split(spec, &protos, &mut val_rng, spec.val_per_cell)?;

    let mut test_rng = seed::rng(seed::mix(spec.seed, 3));
    let test = balanced_split(spec, &protos, &mut test_rng, spec.test_per_cell)?;

    let mut indist_rng = seed::rng(seed::mix(spec.seed, 4));
    let mut val_indist = Dataset::new(spec.num_classes, spec.alphabets(), spec.features.dim());
    for _ in 0..spec.val_indist {
        let i = indist_rng.random_range(0..train.len());
        let t = train.target(i);
        let b = draw_attributes(&mut indist_rng, spec, t);
        let x = protos.features(&mut indist_rng, t, &b);
        val_indist.push(&x, t, &b)?;
    }

    Ok(SplitDataset { spec: spec.clone(), train, val, val_indist, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> BiasGenSpec {
        let mut s = BiasGenSpec::preset("multiceleba-like", seed).unwrap();
        s.train = TrainCounts::PerClass(vec![400, 200]);
        s.val_per_cell = 3;
        s.test_per_cell = 5;
        s
    }

    #[test]
    fn clean_fractions_of_presets() {
        let mc = BiasGenSpec::preset("mcmnist-like", 0).unwrap();
        assert!((expected_clean_fraction(&mc.guiding_probs()) - 0.0005).abs() < 1e-12);
        let celeba = BiasGenSpec::preset("multiceleba-like", 0).unwrap();
        let f = expected_clean_fraction(&celeba.guiding_probs());
        assert!((f - 0.0022).abs() < 1e-4, "{f}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn balanced_splits_have_equal_cells() {
        let s = small(1);
        let d = generate(&s).unwrap();
        assert_eq!(d.test.len(), 2 * 4 * 5);
        assert_eq!(d.val.len(), 2 * 4 * 3);
        // Per class, each guiding/conflicting pattern appears exactly test_per_cell times.
        let mut cells = [0usize; 8];
        for i in 0..d.test.len() {
            let t = d.test.target(i);
            let b = d.test.bias(i);
            let g0 = (b[0] == s.biases[0].guide_map[t]) as usize;
            let g1 = (b[1] == s.biases[1].guide_map[t]) as usize;
            cells[t * 4 + g0 * 2 + g1] += 1;
        }
        assert!(cells.iter().all(|&c| c == 5));
    }

    #[test]
    fn exact_cell_counts_are_respected() {
        let s = BiasGenSpec::preset("multiceleba-full", 0).unwrap();
        let d = generate(&s).unwrap();
        assert_eq!(d.train.len(), 66952);
        let cc = (0..d.train.len()).filter(|&i| d.train.target(i) == 0 && d.train.bias(i) == [1, 1]).count();
        assert_eq!(cc, 110);
    }

    #[test]
    fn guiding_probability_is_realised() {
        let mut s = small(9);
        s.train = TrainCounts::PerClass(vec![20000, 20000]);
        let d = generate(&s).unwrap();
        let guiding = (0..d.train.len())
            .filter(|&i| d.train.bias(i)[0] == s.biases[0].guide_map[d.train.target(i)])
            .count() as f64
            / d.train.len() as f64;
        assert!((guiding - 0.953).abs() < 0.005, "{guiding}");
    }

    #[test]
    fn failing_majority_names_class_and_bias() {
        let mut s = small(2);
        s.biases[1].guiding_prob = 0.2;
        match generate(&s) {
            Err(DataError::GuidingNotMajority { bias: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        s.require_guiding_majority = false;
        assert!(generate(&s).is_ok());
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0);
        s.biases[0].guiding_prob = 1.0;
        assert!(matches!(generate(&s), Err(DataError::InvalidSpec(_))));
        let mut s = small(0);
        s.biases[0].guide_map = vec![0];
        assert!(generate(&s).is_err());
        assert!(matches!(BiasGenSpec::preset("nope", 0), Err(DataError::UnknownPreset(_))));
    }

    #[test]
    fn patch_features_have_expected_width() {
        let mut s = BiasGenSpec::preset("mcmnist-patch", 0).unwrap();
        s.train = TrainCounts::PerClass(vec![30; 10]);
        s.require_guiding_majority = false;
        s.val_per_cell = 1;
        s.test_per_cell = 1;
        let d = generate(&s).unwrap();
        assert_eq!(d.train.feature_dim(), 64);
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            BiasGenSpec::preset(name, 0).unwrap().validate().unwrap();
        }
    }
}
