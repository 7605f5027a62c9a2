//! Packed binary datapoints, Hamming distance, dataset ingestion and splitting.
//!
//! A [`BitVector`] stores its bits little-endian inside `u64` words: bit `i`
//! lives in word `i / 64` at position `i % 64`. Bits past the logical width
//! are kept at zero so a whole-word popcount never sees garbage.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{contract, Error, Result};

const WORD_BITS: usize = 64;

/// Magic number of an IDX file holding unsigned-byte images with three dimensions.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number of an IDX file holding unsigned-byte labels.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Default binarization threshold for 8-bit image data.
pub const DEFAULT_THRESHOLD: u32 = 75;

#[inline]
pub(crate) fn words_for(width: usize) -> usize {
    width.div_ceil(WORD_BITS)
}

/// Mask of valid bits in the last word of a `width`-bit vector.
#[inline]
pub(crate) fn tail_mask(width: usize) -> u64 {
    match width % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Fixed-width packed bit string.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    words: Vec<u64>,
    width: usize,
}

impl BitVector {
    pub fn zeros(width: usize) -> Self {
        Self {
            words: vec![0; words_for(width)],
            width,
        }
    }

    pub fn ones(width: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; words_for(width)],
            width,
        };
        v.clear_padding();
        v
    }

    pub fn from_bits<I>(bits: I) -> Self
    where
        I: IntoIterator<Item = bool>,
    {
        let mut words = Vec::new();
        let mut width = 0;
        for bit in bits {
            if width % WORD_BITS == 0 {
                words.push(0);
            }
            if bit {
                *words.last_mut().unwrap() |= 1 << (width % WORD_BITS);
            }
            width += 1;
        }
        Self { words, width }
    }

    /// Builds a vector from raw words; bits beyond `width` are discarded.
    pub fn from_words(mut words: Vec<u64>, width: usize) -> Result<Self> {
        if words.len() != words_for(width) {
            return Err(contract(format!(
                "{} words cannot hold exactly {width} bits",
                words.len()
            )));
        }
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(width);
        }
        Ok(Self { words, width })
    }

    /// Parses a string of `'0'` and `'1'` characters, bit 0 first.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(contract(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        let mask = 1u64 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(move |i| self.get(i))
    }

    /// Hamming distance to `other`: popcount of the XOR, one word at a time.
    ///
    /// Panics if the widths differ; use [`hamming_distance`] for a checked call.
    #[inline]
    pub fn distance(&self, other: &BitVector) -> u32 {
        assert_eq!(self.width, other.width, "hamming distance across widths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    fn clear_padding(&mut self) {
        let mask = tail_mask(self.width);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BitVector::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Checked Hamming distance.
pub fn hamming_distance(a: &BitVector, b: &BitVector) -> Result<u32> {
    if a.width != b.width {
        return Err(Error::WidthMismatch {
            left: a.width,
            right: b.width,
        });
    }
    Ok(a.distance(b))
}

/// Integer-valued samples before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    samples: Vec<Vec<u16>>,
    labels: Vec<usize>,
    classes: usize,
    features: usize,
}

impl RawDataset {
    /// Class count is inferred as `max(label) + 1`.
    pub fn new(samples: Vec<Vec<u16>>, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(samples, labels, classes)
    }

    pub fn with_classes(samples: Vec<Vec<u16>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if samples.len() != labels.len() {
            return Err(contract(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let features = samples[0].len();
        if features == 0 {
            return Err(contract("samples have no features"));
        }
        if let Some(bad) = samples.iter().position(|s| s.len() != features) {
            return Err(contract(format!(
                "sample {bad} has {} features, expected {features}",
                samples[bad].len()
            )));
        }
        check_labels(&labels, classes)?;
        Ok(Self {
            samples,
            labels,
            classes,
            features,
        })
    }

    pub fn samples(&self) -> &[Vec<u16>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    let mut seen = vec![false; classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(contract(format!("label {l} at index {i} is not below {classes}")));
        }
        seen[l] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(c) => Err(Error::MissingClass(c)),
        None => Ok(()),
    }
}

/// Labeled collection of packed datapoints sharing one width.
///
/// Construction checks widths and label ranges. Whether every class is
/// present is checked separately by [`BinaryDataset::ensure_all_classes`],
/// since small test splits legitimately miss classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    points: Vec<BitVector>,
    labels: Vec<usize>,
    classes: usize,
    features: usize,
}

impl BinaryDataset {
    pub fn new(points: Vec<BitVector>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(contract(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let features = points.first().map_or(0, BitVector::width);
        if let Some(bad) = points.iter().position(|p| p.width() != features) {
            return Err(Error::WidthMismatch {
                left: features,
                right: points[bad].width(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(contract(format!("label {l} is not below {classes}")));
        }
        Ok(Self {
            points,
            labels,
            classes,
            features,
        })
    }

    pub fn points(&self) -> &[BitVector] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> &BitVector {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BitVector, usize)> {
        self.points.iter().zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Dataset indices of every point labeled `class`, ascending.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    pub fn ensure_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&n| n == 0) {
            Some(c) => Err(Error::MissingClass(c)),
            None => Ok(()),
        }
    }

    /// Points at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        BinaryDataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            features: self.features,
        }
    }
}

/// Sets bit `i` of each point iff `sample[i] >= threshold`.
pub fn binarize(raw: &RawDataset, threshold: u32) -> Result<BinaryDataset> {
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points = raw
        .samples
        .iter()
        .map(|s| BitVector::from_bits(s.iter().map(|&v| u32::from(v) >= threshold)))
        .collect();
    BinaryDataset::new(points, raw.labels.clone(), raw.classes)
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            what,
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image/label pair held in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<RawDataset> {
    let magic = read_u32_be(images, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_u32_be(images, 4, "image header")? as usize;
    let rows = read_u32_be(images, 8, "image header")? as usize;
    let cols = read_u32_be(images, 12, "image header")? as usize;

    let magic = read_u32_be(labels, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let label_count = read_u32_be(labels, 4, "label header")? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features = rows * cols;
    let image_bytes = &images[16..];
    if image_bytes.len() < count * features {
        return Err(Error::Truncated {
            what: "image payload",
            expected: count * features,
            found: image_bytes.len(),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Truncated {
            what: "label payload",
            expected: count,
            found: label_bytes.len(),
        });
    }

    let samples = image_bytes
        .chunks_exact(features)
        .take(count)
        .map(|px| px.iter().map(|&v| u16::from(v)).collect())
        .collect();
    let labels = label_bytes[..count].iter().map(|&l| l as usize).collect();
    RawDataset::new(samples, labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Loads an uncompressed IDX image file and its matching label file.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<RawDataset> {
    parse_idx(&read_file(images.as_ref())?, &read_file(labels.as_ref())?)
}

/// Reads `label,f0,f1,...` records; the first row is a header.
pub fn read_csv<R: Read>(reader: R) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = row + 2;
        let parse = |field: &str| -> Result<u64> {
            field.parse().map_err(|_| Error::Csv {
                line,
                message: format!("{field:?} is not a nonnegative integer"),
            })
        };
        let mut fields = record.iter();
        let label = fields.next().ok_or(Error::Csv {
            line,
            message: "empty record".into(),
        })?;
        labels.push(parse(label)? as usize);
        let sample = fields
            .map(|f| {
                let v = parse(f)?;
                u16::try_from(v).map_err(|_| Error::Csv {
                    line,
                    message: format!("value {v} exceeds {}", u16::MAX),
                })
            })
            .collect::<Result<Vec<u16>>>()?;
        samples.push(sample);
    }
    RawDataset::new(samples, labels)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawDataset> {
    read_csv(fs::File::open(path.as_ref())?)
}

/// Seeded shuffle of `0..n` cut into a train prefix of `round(n * train_fraction)`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(contract(format!(
            "train fraction {train_fraction} is not strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = order.split_off(n_train.min(n));
    Ok((order, test))
}

/// Deterministic train/test split. Every class must keep a training point.
pub fn split(
    dataset: &BinaryDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(BinaryDataset, BinaryDataset)> {
    let (train_idx, test_idx) = split_indices(dataset.len(), train_fraction, seed)?;
    let train = dataset.subset(&train_idx);
    let counts = train.class_counts();
    if let Some(c) = (0..dataset.classes()).find(|&c| counts[c] == 0) {
        return Err(Error::ClassEmptied(c));
    }
    Ok((train, dataset.subset(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_hamming(a: &BitVector, b: &BitVector) -> u32 {
        (0..a.width()).filter(|&i| a.get(i) != b.get(i)).count() as u32
    }

    fn random_vector(rng: &mut impl Rng, width: usize) -> BitVector {
        BitVector::from_bits((0..width).map(|_| rng.random::<bool>()))
    }

    #[test]
    fn identity_and_complement() {
        let a = BitVector::parse("1010").unwrap();
        let b = BitVector::parse("0101").unwrap();
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 4);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let a = BitVector::zeros(4);
        let b = BitVector::zeros(5);
        assert!(matches!(
            hamming_distance(&a, &b),
            Err(Error::WidthMismatch { left: 4, right: 5 })
        ));
    }

    #[test]
    fn random_128_bit_pair_matches_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(128);
        let a = random_vector(&mut rng, 128);
        let b = random_vector(&mut rng, 128);
        assert_eq!(a.distance(&b), naive_hamming(&a, &b));
    }

    #[test]
    fn padding_stays_zero() {
        let ones = BitVector::ones(70);
        assert_eq!(ones.count_ones(), 70);
        assert_eq!(ones.words()[1], (1 << 6) - 1);
        let v = BitVector::from_words(vec![u64::MAX, u64::MAX], 70).unwrap();
        assert_eq!(v, ones);
    }

    #[test]
    fn binarize_thresholds_at_greater_or_equal() {
        let raw = RawDataset::new(vec![vec![0, 74, 75, 255]], vec![0]).unwrap();
        let bin = binarize(&raw, 75).unwrap();
        assert_eq!(bin.point(0).to_string(), "0011");
        assert_eq!(binarize(&raw, 0).unwrap().point(0).to_string(), "1111");
        assert_eq!(binarize(&raw, 256).unwrap().point(0).to_string(), "0000");
    }

    #[test]
    fn binarize_is_idempotent_at_one() {
        let raw = RawDataset::new(vec![vec![3, 90, 75, 0], vec![200, 1, 80, 74]], vec![0, 1]).unwrap();
        let once = binarize(&raw, 75).unwrap();
        let as_raw = RawDataset::new(
            once.points()
                .iter()
                .map(|p| p.iter().map(u16::from).collect())
                .collect(),
            once.labels().to_vec(),
        )
        .unwrap();
        assert_eq!(binarize(&as_raw, 1).unwrap(), once);
    }

    fn idx_fixture(count: u32, labels: u32) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        images.extend(count.to_be_bytes());
        images.extend(2u32.to_be_bytes());
        images.extend(2u32.to_be_bytes());
        for i in 0..count as u8 {
            images.extend([i, 0, 255, 100]);
        }
        let mut lbl = Vec::new();
        lbl.extend(IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend(labels.to_be_bytes());
        for i in 0..labels as u8 {
            lbl.push(i % 2);
        }
        (images, lbl)
    }

    #[test]
    fn idx_fixture_parses() {
        let (images, labels) = idx_fixture(4, 4);
        let raw = parse_idx(&images, &labels).unwrap();
        assert_eq!(raw.features(), 4);
        assert_eq!(raw.len(), 4);
        assert_eq!(raw.classes(), 2);
        assert_eq!(raw.samples()[3], vec![3, 0, 255, 100]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (images, labels) = idx_fixture(4, 4);
        assert!(matches!(
            parse_idx(&images[..images.len() - 1], &labels),
            Err(Error::Truncated { what: "image payload", .. })
        ));
        assert!(matches!(
            parse_idx(&images[..6], &labels),
            Err(Error::Truncated { what: "image header", .. })
        ));
        let (_, short_labels) = idx_fixture(4, 3);
        assert!(matches!(
            parse_idx(&images, &short_labels),
            Err(Error::CountMismatch { images: 4, labels: 3 })
        ));
        assert!(matches!(
            parse_idx(&labels, &labels),
            Err(Error::BadMagic { found: IDX_LABELS_MAGIC, .. })
        ));
    }

    #[test]
    fn csv_with_header() {
        let data = "label,f0,f1,f2\n1,0,80,255\n0,75,74,3\n";
        let raw = read_csv(data.as_bytes()).unwrap();
        assert_eq!(raw.labels(), &[1, 0]);
        assert_eq!(raw.samples()[0], vec![0, 80, 255]);
        let bad = "label,f0\n0,x\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { line: 2, .. })));
    }

    fn labeled(n: usize, classes: usize) -> BinaryDataset {
        let points = (0..n).map(|i| BitVector::from_bits((0..8).map(|b| i >> b & 1 == 1))).collect();
        BinaryDataset::new(points, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = labeled(10, 2);
        let (train, test) = split(&ds, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let again = split(&ds, 0.8, 7).unwrap();
        assert_eq!(train, again.0);
        assert_eq!(test, again.1);
    }

    #[test]
    fn split_partitions_exactly_and_seeds_differ() {
        let (train, test) = split_indices(40, 0.8, 1).unwrap();
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        let other = split_indices(40, 0.8, 2).unwrap();
        assert_ne!(train, other.0);
    }

    #[test]
    fn split_rejects_emptied_class() {
        // a single point of class 2 cannot survive every split
        let points = (0..5).map(|i| BitVector::from_bits([i & 1 == 1, i & 2 == 2])).collect();
        let ds = BinaryDataset::new(points, vec![0, 0, 1, 1, 2], 3).unwrap();
        let failures = (0..32)
            .filter(|&seed| matches!(split(&ds, 0.5, seed), Err(Error::ClassEmptied(2))))
            .count();
        assert!(failures > 0);
        assert!(matches!(split(&ds, 1.0, 0), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn packed_matches_bit_loop(seed in any::<u64>(), width in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_vector(&mut rng, width);
            let b = random_vector(&mut rng, width);
            let c = random_vector(&mut rng, width);
            prop_assert_eq!(a.distance(&b), naive_hamming(&a, &b));
            prop_assert_eq!(a.distance(&b), b.distance(&a));
            prop_assert!(a.distance(&c) <= a.distance(&b) + b.distance(&c));
            prop_assert!(a.distance(&b) as usize <= width);
        }

        #[test]
        fn bit_string_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let v = BitVector::from_bits(bits.clone());
            let json = serde_json::to_string(&v).unwrap();
            let back: BitVector = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.iter().collect::<Vec<_>>(), bits);
            prop_assert_eq!(back, v);
        }
    }
}
