//! Item catalogs, interaction-sequence datasets and the leave-two-out split.
//!
//! Sequence files are plain text: one user per line, whitespace-separated
//! item ids in chronological order. Catalog metadata files are
//! tab-separated `id<TAB>title<TAB>category` rows with an optional header.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type ItemId = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub title: Option<String>,
    pub category: Option<String>,
}

/// The item space. Ids are dense: item `i` is `items[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<ItemMeta>,
}

impl Catalog {
    /// A catalog of `item_count` items without metadata.
    pub fn anonymous(item_count: usize) -> Result<Self> {
        Self::from_items(vec![ItemMeta::default(); item_count])
    }

    pub fn from_items(items: Vec<ItemMeta>) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::invalid(format!(
                "catalog needs at least 2 items, got {}",
                items.len()
            )));
        }
        if items.len() > ItemId::MAX as usize {
            return Err(Error::invalid("catalog too large for 32-bit item ids"));
        }
        Ok(Catalog { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        (item as usize) < self.items.len()
    }

    pub fn meta(&self, item: ItemId) -> &ItemMeta {
        &self.items[item as usize]
    }

    pub fn title(&self, item: ItemId) -> String {
        self.items[item as usize]
            .title
            .clone()
            .unwrap_or_else(|| format!("Item {item}"))
    }

    pub fn category(&self, item: ItemId) -> Option<&str> {
        self.items[item as usize].category.as_deref()
    }

    /// Distinct category names in sorted order.
    pub fn categories(&self) -> Vec<String> {
        self.items
            .iter()
            .filter_map(|m| m.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Reads a tab-separated metadata file. Rows may come in any order but
    /// the ids must cover `0..n` exactly once.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Option<ItemMeta>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || (idx == 0 && line.starts_with("id\t")) {
                continue;
            }
            let mut fields = line.split('\t');
            let id_field = fields.next().unwrap_or_default().trim();
            let id: usize = id_field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad item id `{id_field}`"),
            })?;
            let opt = |s: Option<&str>| s.map(str::trim).filter(|s| !s.is_empty()).map(String::from);
            let meta = ItemMeta {
                title: opt(fields.next()),
                category: opt(fields.next()),
            };
            if id >= rows.len() {
                rows.resize(id + 1, None);
            }
            if rows[id].replace(meta).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate item id {id}"),
                });
            }
        }
        let items = rows
            .into_iter()
            .enumerate()
            .map(|(id, m)| m.ok_or_else(|| Error::Format(format!("catalog is missing item id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Catalog::from_items(items)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id\ttitle\tcategory\n");
        for (id, m) in self.items.iter().enumerate() {
            out.push_str(&format!(
                "{id}\t{}\t{}\n",
                m.title.as_deref().unwrap_or(""),
                m.category.as_deref().unwrap_or("")
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Chronological per-user interaction sequences over a catalog of
/// `item_count` items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDataset {
    item_count: usize,
    sequences: Vec<Vec<ItemId>>,
}

impl SequenceDataset {
    pub fn new(item_count: usize, sequences: Vec<Vec<ItemId>>) -> Result<Self> {
        for (u, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::invalid(format!("sequence {u} is empty")));
            }
            if let Some(&bad) = seq.iter().find(|&&i| i as usize >= item_count) {
                return Err(Error::ItemOutOfRange {
                    line: u + 1,
                    item: u64::from(bad),
                    item_count,
                });
            }
        }
        Ok(SequenceDataset {
            item_count,
            sequences,
        })
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn sequences(&self) -> &[Vec<ItemId>] {
        &self.sequences
    }

    pub fn into_sequences(self) -> Vec<Vec<ItemId>> {
        self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Number of distinct items appearing anywhere in the corpus.
    pub fn distinct_items(&self) -> usize {
        let mut seen = vec![false; self.item_count];
        let mut n = 0;
        for &i in self.sequences.iter().flatten() {
            if !std::mem::replace(&mut seen[i as usize], true) {
                n += 1;
            }
        }
        n
    }

    pub fn parse(text: &str, item_count: usize) -> Result<Self> {
        let mut sequences = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut seq = Vec::new();
            for tok in line.split_whitespace() {
                let id: u64 = tok.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("non-integer token `{tok}`"),
                })?;
                if id >= item_count as u64 {
                    return Err(Error::ItemOutOfRange {
                        line: line_no,
                        item: id,
                        item_count,
                    });
                }
                seq.push(id as ItemId);
            }
            sequences.push(seq);
        }
        Ok(SequenceDataset {
            item_count,
            sequences,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(ToString::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads a sequence file, rejecting the whole file on the first bad token.
pub fn load_sequences(path: &Path, catalog: &Catalog) -> Result<SequenceDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SequenceDataset::parse(&text, catalog.len())
}

/// Leave-last-two-out split of users with at least three interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: SequenceDataset,
    pub validation: Vec<ItemId>,
    pub test: Vec<ItemId>,
    /// Index of each kept user in the source dataset.
    pub users: Vec<usize>,
    /// Users dropped for having fewer than three interactions.
    pub excluded: usize,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test.is_empty()
    }

    /// History preceding the test item: train items plus the validation item.
    pub fn test_prefix(&self, user: usize) -> Vec<ItemId> {
        let mut x = self.train.sequences()[user].clone();
        x.push(self.validation[user]);
        x
    }

    /// Writes `user<TAB>validation<TAB>test` rows.
    pub fn heldout_tsv(&self) -> String {
        let mut out = String::from("user\tvalidation\ttest\n");
        for ((u, v), t) in self.users.iter().zip(&self.validation).zip(&self.test) {
            out.push_str(&format!("{u}\t{v}\t{t}\n"));
        }
        out
    }
}

pub fn split_leave_two(data: &SequenceDataset) -> SplitDataset {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut users = Vec::new();
    let mut excluded = 0;
    for (u, seq) in data.sequences().iter().enumerate() {
        let t = seq.len();
        if t < 3 {
            excluded += 1;
            continue;
        }
        train.push(seq[..t - 2].to_vec());
        validation.push(seq[t - 2]);
        test.push(seq[t - 1]);
        users.push(u);
    }
    SplitDataset {
        train: SequenceDataset {
            item_count: data.item_count(),
            sequences: train,
        },
        validation,
        test,
        users,
        excluded,
    }
}

/// Parameters of the synthetic secret-data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub item_count: usize,
    pub user_count: usize,
    pub mean_length: f64,
    pub latent_dim: usize,
    pub seed: u64,
    /// Number of item categories; 0 picks `clamp(item_count / 20, 2, 12)`.
    #[serde(default)]
    pub categories: usize,
    /// Inverse temperature of the next-item softmax.
    #[serde(default = "defaults::sharpness")]
    pub sharpness: f64,
    /// Weight of the last item's latent vector in the context blend.
    #[serde(default = "defaults::recency")]
    pub recency: f64,
    /// Logit bonus for an item's fixed successors.
    #[serde(default = "defaults::transition_boost")]
    pub transition_boost: f64,
    /// Standard deviation of per-item popularity logits.
    #[serde(default = "defaults::popularity_spread")]
    pub popularity_spread: f64,
}

mod defaults {
    pub fn sharpness() -> f64 {
        3.0
    }
    pub fn recency() -> f64 {
        0.5
    }
    pub fn transition_boost() -> f64 {
        2.5
    }
    pub fn popularity_spread() -> f64 {
        0.5
    }
}

impl SyntheticParams {
    pub fn new(item_count: usize, user_count: usize, mean_length: f64, latent_dim: usize, seed: u64) -> Self {
        SyntheticParams {
            item_count,
            user_count,
            mean_length,
            latent_dim,
            seed,
            categories: 0,
            sharpness: defaults::sharpness(),
            recency: defaults::recency(),
            transition_boost: defaults::transition_boost(),
            popularity_spread: defaults::popularity_spread(),
        }
    }
}

const CATEGORY_NAMES: [&str; 12] = [
    "Skincare", "Fragrance", "Haircare", "Makeup", "Puzzle", "Strategy", "Racing", "Shooter",
    "Roleplay", "Sports", "Simulation", "Adventure",
];

const SUCCESSORS_PER_ITEM: usize = 3;

/// Generates a catalog and user sequences with genuine sequential structure.
///
/// Items belong to latent clusters (exposed as categories). Each user has a
/// latent taste near one cluster; the next item is drawn from a softmax over
/// inner products with a blend of the user vector and the last item's
/// vector, plus popularity logits and a bonus for a few fixed successors of
/// the last item. Repeats within a sequence are not allowed.
pub fn synthesize_secret_data(params: &SyntheticParams) -> Result<(Catalog, SequenceDataset)> {
    let n = params.item_count;
    if n < 2 {
        return Err(Error::invalid("item_count must be at least 2"));
    }
    if params.user_count < 1 {
        return Err(Error::invalid("user_count must be at least 1"));
    }
    if params.latent_dim < 1 {
        return Err(Error::invalid("latent_dim must be at least 1"));
    }
    if !(params.mean_length > 0.0) {
        return Err(Error::invalid("mean_length must be positive"));
    }
    let d = params.latent_dim;
    let n_cat = if params.categories == 0 {
        (n / 20).clamp(2, CATEGORY_NAMES.len())
    } else {
        params.categories
    };
    let mut rng = seed::rng(seed::derive(params.seed, "synthetic-catalog"));
    let gauss = |rng: &mut seed::Rng| -> f64 { rng.sample(StandardNormal) };

    let centers: Vec<Vec<f64>> = (0..n_cat)
        .map(|_| (0..d).map(|_| gauss(&mut rng)).collect())
        .collect();
    let mut category = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let c = if i < n_cat { i } else { rng.random_range(0..n_cat) };
        let v: Vec<f64> = centers[c]
            .iter()
            .map(|&m| m + 0.6 * gauss(&mut rng))
            .collect();
        category.push(c);
        latent.push(normalized(v));
    }
    let popularity: Vec<f64> = (0..n)
        .map(|_| params.popularity_spread * gauss(&mut rng))
        .collect();
    let successors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..SUCCESSORS_PER_ITEM.min(n - 1))
                .map(|_| loop {
                    let j = if rng.random_bool(0.7) {
                        // Prefer a successor in the same cluster.
                        let j = rng.random_range(0..n);
                        if category[j] != category[i] {
                            continue;
                        }
                        j
                    } else {
                        rng.random_range(0..n)
                    };
                    if j != i {
                        break j;
                    }
                })
                .collect()
        })
        .collect();

    let items = (0..n)
        .map(|i| {
            let cat = CATEGORY_NAMES
                .get(category[i])
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("Category {}", category[i]));
            ItemMeta {
                title: Some(format!("{cat} item {i}")),
                category: Some(cat),
            }
        })
        .collect();
    let catalog = Catalog::from_items(items)?;

    let extra_mean = (params.mean_length - 3.0).max(0.0);
    let geometric = Geometric::new(1.0 / (extra_mean + 1.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let sequences = (0..params.user_count)
        .map(|u| {
            let mut rng = seed::stream(seed::derive(params.seed, "synthetic-users"), u as u64);
            let home = rng.random_range(0..n_cat);
            let user: Vec<f64> = normalized(
                centers[home]
                    .iter()
                    .map(|&m| m + 0.8 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            let len = (3 + geometric.sample(&mut rng) as usize).min(n);
            let mut used = vec![false; n];
            let mut seq: Vec<ItemId> = Vec::with_capacity(len);
            let mut logits = vec![0.0; n];
            while seq.len() < len {
                let last = seq.last().map(|&i| i as usize);
                let ctx: Vec<f64> = match last {
                    Some(l) => user
                        .iter()
                        .zip(&latent[l])
                        .map(|(a, b)| (1.0 - params.recency) * a + params.recency * b)
                        .collect(),
                    None => user.clone(),
                };
                for (j, logit) in logits.iter_mut().enumerate() {
                    *logit = if used[j] {
                        f64::NEG_INFINITY
                    } else {
                        params.sharpness * dot(&ctx, &latent[j]) + popularity[j]
                    };
                }
                if let Some(l) = last {
                    for &s in &successors[l] {
                        logits[s] += params.transition_boost;
                    }
                }
                let next = sample_softmax(&logits, &mut rng);
                used[next] = true;
                seq.push(next as ItemId);
            }
            seq
        })
        .collect();
    Ok((catalog, SequenceDataset::new(n, sequences)?))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = dot(&v, &v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn sample_softmax(logits: &[f64], rng: &mut seed::Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut fallback = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            fallback = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    fallback
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sequences() {
        let ds = SequenceDataset::parse("1 2 3\n4 5", 6).unwrap();
        assert_eq!(ds.sequences(), &[vec![1, 2, 3], vec![4, 5]]);
        assert!(SequenceDataset::parse("", 6).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_item_names_line_and_id() {
        match SequenceDataset::parse("1 9", 6) {
            Err(Error::ItemOutOfRange { line: 1, item: 9, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match SequenceDataset::parse("1 2\n3 x", 6) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let catalog = Catalog::anonymous(3).unwrap();
        assert!(matches!(
            load_sequences(Path::new("/nonexistent/seqs.txt"), &catalog),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn catalog_needs_two_items() {
        assert!(Catalog::anonymous(1).is_err());
        assert_eq!(Catalog::anonymous(2).unwrap().len(), 2);
    }

    #[test]
    fn catalog_round_trips_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.tsv");
        let (catalog, _) = synthesize_secret_data(&SyntheticParams::new(30, 2, 5.0, 4, 1)).unwrap();
        catalog.save(&path).unwrap();
        assert_eq!(Catalog::load(&path).unwrap(), catalog);
    }

    #[test]
    fn catalog_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.tsv");
        fs::write(&path, "0\ta\tx\n2\tc\ty\n").unwrap();
        assert!(Catalog::load(&path).is_err());
    }

    #[test]
    fn split_examples() {
        let ds = SequenceDataset::new(10, vec![vec![1, 2, 3, 4]]).unwrap();
        let s = split_leave_two(&ds);
        assert_eq!(s.train.sequences(), &[vec![1, 2]]);
        assert_eq!((s.validation[0], s.test[0]), (3, 4));

        let s = split_leave_two(&SequenceDataset::new(10, vec![vec![1, 2]]).unwrap());
        assert_eq!((s.len(), s.excluded), (0, 1));

        let ds = SequenceDataset::new(10, vec![vec![1, 2, 3], vec![4, 5, 6, 7]]).unwrap();
        let s = split_leave_two(&ds);
        assert_eq!(s.train.sequences(), &[vec![1], vec![4, 5]]);
        assert_eq!(s.validation, vec![2, 6]);
        assert_eq!(s.test, vec![3, 7]);
        assert_eq!(s.test_prefix(1), vec![4, 5, 6]);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let p = SyntheticParams::new(50, 100, 10.0, 8, 7);
        let (c1, d1) = synthesize_secret_data(&p).unwrap();
        let (c2, d2) = synthesize_secret_data(&p).unwrap();
        assert_eq!((c1, &d1), (c2, &d2));
        assert_eq!(d1.len(), 100);
        assert!(d1.sequences().iter().all(|s| s.len() >= 3));
        assert!(d1.sequences().iter().flatten().all(|&i| i < 50));
        let mean = d1.interactions() as f64 / d1.len() as f64;
        assert!((mean - 10.0).abs() < 2.0, "mean length {mean}");
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(synthesize_secret_data(&SyntheticParams::new(1, 10, 5.0, 4, 0)).is_err());
        assert!(synthesize_secret_data(&SyntheticParams::new(10, 0, 5.0, 4, 0)).is_err());
    }
}
