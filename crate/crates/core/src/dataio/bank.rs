use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub type ClassId = u32;

/// Per-class text embeddings and the seen/unseen partition.
///
/// `label_embeddings` and `context_embeddings` share the row order of `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBank {
    ids: Vec<ClassId>,
    names: Vec<String>,
    label_embeddings: Matrix,
    context_embeddings: Matrix,
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
    row_of: HashMap<ClassId, usize>,
}

/// A subset of classes with their embedding rows, in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSet {
    pub ids: Vec<ClassId>,
    pub labels: Matrix,
    pub contexts: Matrix,
}

impl ClassSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: ClassId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }
}

impl ClassBank {
    pub fn new(
        ids: Vec<ClassId>,
        names: Vec<String>,
        label_embeddings: Matrix,
        context_embeddings: Matrix,
        seen: Vec<ClassId>,
        unseen: Vec<ClassId>,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        let mut row_of = HashMap::new();
        for (row, &id) in ids.iter().enumerate() {
            if row_of.insert(id, row).is_some() {
                problems.push(format!("duplicate class id {id}"));
            }
        }
        if names.len() != ids.len() {
            problems.push(format!("{} names for {} classes", names.len(), ids.len()));
        }
        for (what, m) in [("label", &label_embeddings), ("context", &context_embeddings)] {
            if m.rows() != ids.len() {
                problems.push(format!(
                    "{what} embeddings have {} rows for {} classes",
                    m.rows(),
                    ids.len()
                ));
            }
        }
        if label_embeddings.cols() != context_embeddings.cols() {
            problems.push(format!(
                "label embeddings are {}-d but context embeddings are {}-d",
                label_embeddings.cols(),
                context_embeddings.cols()
            ));
        }

        let seen_set: BTreeSet<_> = seen.iter().copied().collect();
        let unseen_set: BTreeSet<_> = unseen.iter().copied().collect();
        for id in seen_set.intersection(&unseen_set) {
            problems.push(format!("class {id} in both splits"));
        }
        for id in seen_set.union(&unseen_set) {
            if !row_of.contains_key(id) {
                problems.push(format!("split references unknown class {id}"));
            }
        }
        for id in &ids {
            if !seen_set.contains(id) && !unseen_set.contains(id) {
                problems.push(format!("class {id} is in neither split"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        Ok(Self {
            ids,
            names,
            label_embeddings,
            context_embeddings,
            seen: seen_set.into_iter().collect(),
            unseen: unseen_set.into_iter().collect(),
            row_of,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ClassId] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.row_of.get(&id).map(|&r| self.names[r].as_str())
    }

    pub fn text_dim(&self) -> usize {
        self.label_embeddings.cols()
    }

    pub fn label_embeddings(&self) -> &Matrix {
        &self.label_embeddings
    }

    pub fn context_embeddings(&self) -> &Matrix {
        &self.context_embeddings
    }

    pub fn seen_ids(&self) -> &[ClassId] {
        &self.seen
    }

    pub fn unseen_ids(&self) -> &[ClassId] {
        &self.unseen
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.row_of.contains_key(&id)
    }

    pub fn is_seen(&self, id: ClassId) -> bool {
        self.seen.binary_search(&id).is_ok()
    }

    pub fn is_unseen(&self, id: ClassId) -> bool {
        self.unseen.binary_search(&id).is_ok()
    }

    pub fn subset(&self, ids: &[ClassId]) -> Result<ClassSet> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let rows = ids
            .iter()
            .map(|id| {
                self.row_of
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown class {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassSet {
            labels: self.label_embeddings.select_rows(&rows),
            contexts: self.context_embeddings.select_rows(&rows),
            ids,
        })
    }

    pub fn seen_set(&self) -> ClassSet {
        self.subset(&self.seen).expect("seen ids validated on construction")
    }

    pub fn unseen_set(&self) -> ClassSet {
        self.subset(&self.unseen).expect("unseen ids validated on construction")
    }
}

/// Visual features with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    visual: Matrix,
    labels: Vec<ClassId>,
}

impl FeatureBank {
    pub fn new(visual: Matrix, labels: Vec<ClassId>) -> Result<Self> {
        if visual.rows() != labels.len() {
            return Err(Error::Validation(vec![format!(
                "{} visual rows but {} labels",
                visual.rows(),
                labels.len()
            )]));
        }
        if !visual.is_finite() {
            return Err(Error::Validation(vec!["visual features contain non-finite values".into()]));
        }
        Ok(Self { visual, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.cols()
    }

    /// Rows `idx` as a `(features, labels)` pair.
    pub fn rows(&self, idx: &[usize]) -> (Matrix, Vec<ClassId>) {
        (self.visual.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    fn filter(&self, keep: impl Fn(ClassId) -> bool) -> FeatureBank {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        let (visual, labels) = self.rows(&idx);
        FeatureBank { visual, labels }
    }

    /// Label histogram, keyed by class id.
    pub fn histogram(&self) -> std::collections::BTreeMap<ClassId, usize> {
        let mut h = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_default() += 1;
        }
        h
    }
}

/// Samples whose labels are all in the seen split. The only bank type the
/// trainer accepts.
#[derive(Clone, Debug, PartialEq)]
pub struct SeenBank(FeatureBank);

/// Samples whose labels are all in the unseen split.
#[derive(Clone, Debug, PartialEq)]
pub struct UnseenBank(FeatureBank);

impl std::ops::Deref for SeenBank {
    type Target = FeatureBank;
    fn deref(&self) -> &FeatureBank {
        &self.0
    }
}

impl std::ops::Deref for UnseenBank {
    type Target = FeatureBank;
    fn deref(&self) -> &FeatureBank {
        &self.0
    }
}

impl SeenBank {
    /// Checks every label is a seen class.
    pub fn try_new(bank: FeatureBank, classes: &ClassBank) -> Result<Self> {
        if let Some(bad) = bank.labels.iter().find(|&&l| !classes.is_seen(l)) {
            return Err(Error::Contract(format!("class {bad} is not in the seen split")));
        }
        Ok(SeenBank(bank))
    }
}

impl UnseenBank {
    pub fn try_new(bank: FeatureBank, classes: &ClassBank) -> Result<Self> {
        if let Some(bad) = bank.labels.iter().find(|&&l| !classes.is_unseen(l)) {
            return Err(Error::Contract(format!("class {bad} is not in the unseen split")));
        }
        Ok(UnseenBank(bank))
    }
}

/// A complete benchmark: features for every sample plus the class bank.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: FeatureBank,
    pub classes: ClassBank,
}

impl Dataset {
    pub fn new(features: FeatureBank, classes: ClassBank) -> Result<Self> {
        let mut dangling: Vec<ClassId> =
            features.labels.iter().copied().filter(|&l| !classes.contains(l)).collect();
        dangling.sort_unstable();
        dangling.dedup();
        if !dangling.is_empty() {
            return Err(Error::Validation(
                dangling.into_iter().map(|l| format!("sample label {l} has no class entry")).collect(),
            ));
        }
        Ok(Self { features, classes })
    }

    pub fn seen(&self) -> SeenBank {
        SeenBank(self.features.filter(|l| self.classes.is_seen(l)))
    }

    pub fn unseen(&self) -> UnseenBank {
        UnseenBank(self.features.filter(|l| self.classes.is_unseen(l)))
    }
}
