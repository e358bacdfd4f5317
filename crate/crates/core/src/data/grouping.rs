//! Majority-agreement grouping.
//!
//! For every class and bias type the training split defines a majority
//! attribute. A sample's group label `g` has `g_d = 1` when its attribute for
//! bias type `d` is that majority, and the group id is `g` read as a binary
//! number with the first bias type as the most significant bit. With two bias
//! types id 3 is `GG` and id 0 is `CC`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{DataError, Dataset};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TieBreak {
    /// A tied majority count is an error.
    #[default]
    Error,
    /// Pick the lowest tied attribute index.
    LowestIndex,
}

/// Majority attribute per `(bias type, class)`, computed on one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MajorityTable {
    /// `majority[d][t]`; `None` for classes absent from the split.
    majority: Vec<Vec<Option<usize>>>,
}

impl MajorityTable {
    pub fn compute(data: &Dataset, tie_break: TieBreak) -> Result<Self, DataError> {
        if data.is_empty() {
            return Err(DataError::Empty);
        }
        let c = data.num_classes();
        let mut majority = Vec::with_capacity(data.num_bias_types());
        for (d, &a) in data.alphabets().iter().enumerate() {
            let mut counts = vec![vec![0usize; a]; c];
            for i in 0..data.len() {
                counts[data.target(i)][data.bias(i)[d]] += 1;
            }
            let mut row = Vec::with_capacity(c);
            for (t, cnt) in counts.iter().enumerate() {
                let max = cnt.iter().copied().max().unwrap_or(0);
                if max == 0 {
                    row.push(None);
                    continue;
                }
                let winners: Vec<usize> = (0..a).filter(|&v| cnt[v] == max).collect();
                if winners.len() > 1 && tie_break == TieBreak::Error {
                    return Err(DataError::MajorityTie { class: t, bias: d, attributes: winners });
                }
                row.push(Some(winners[0]));
            }
            majority.push(row);
        }
        Ok(MajorityTable { majority })
    }

    pub fn num_bias_types(&self) -> usize {
        self.majority.len()
    }

    pub fn majority(&self, bias: usize, class: usize) -> Option<usize> {
        self.majority[bias][class]
    }

    /// Guiding flags of a `(class, attributes)` pair over the selected bias types.
    pub fn guiding(&self, class: usize, attributes: &[usize], dims: &[usize]) -> Result<Vec<bool>, DataError> {
        dims.iter()
            .map(|&d| match self.majority[d][class] {
                Some(m) => Ok(attributes[d] == m),
                None => Err(DataError::EmptyClass { class }),
            })
            .collect()
    }
}

/// How samples are partitioned into training groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GroupingScheme {
    /// `2^D` groups keyed by the guiding/conflicting vector `g`.
    #[default]
    Majority,
    /// One group per `(class, attribute tuple)` cell.
    BiasTarget,
    /// One group per `(class, g)` pair.
    MajorityTarget,
}

/// Partition of sample indices into groups; empty groups are kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIndex {
    scheme: GroupingScheme,
    dims: Vec<usize>,
    num_classes: usize,
    alphabets: Vec<usize>,
    members: Vec<Vec<usize>>,
    by_class: Vec<Vec<Vec<usize>>>,
    assignment: Vec<usize>,
    guiding: Vec<Vec<bool>>,
    class_of: Vec<Option<usize>>,
    attributes_of: Vec<Option<Vec<usize>>>,
}

fn bits(id: usize, width: usize) -> Vec<bool> {
    (0..width).map(|d| (id >> (width - 1 - d)) & 1 == 1).collect()
}

fn encode(g: &[bool]) -> usize {
    g.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

impl GroupIndex {
    /// Groups `data` with a majority table (normally computed on the training split)
    /// over the bias types `dims`.
    pub fn build(
        data: &Dataset,
        table: &MajorityTable,
        dims: &[usize],
        scheme: GroupingScheme,
    ) -> Result<Self, DataError> {
        if dims.is_empty() || dims.iter().any(|&d| d >= data.num_bias_types() || d >= table.num_bias_types()) {
            return Err(DataError::InvalidSpec(alloc::format!(
                "bias dims {dims:?} invalid for {} bias types",
                data.num_bias_types()
            )));
        }
        let c = data.num_classes();
        let nd = dims.len();
        let sel_alphabets: Vec<usize> = dims.iter().map(|&d| data.alphabets()[d]).collect();
        let cells_per_class: usize = sel_alphabets.iter().product();
        let num_groups = match scheme {
            GroupingScheme::Majority => 1 << nd,
            GroupingScheme::BiasTarget => c * cells_per_class,
            GroupingScheme::MajorityTarget => c << nd,
        };

        let mut guiding = vec![Vec::new(); num_groups];
        let mut class_of = vec![None; num_groups];
        let mut attributes_of = vec![None; num_groups];
        match scheme {
            GroupingScheme::Majority => {
                for (id, g) in guiding.iter_mut().enumerate() {
                    *g = bits(id, nd);
                }
            }
            GroupingScheme::MajorityTarget => {
                for id in 0..num_groups {
                    guiding[id] = bits(id % (1 << nd), nd);
                    class_of[id] = Some(id >> nd);
                }
            }
            GroupingScheme::BiasTarget => {
                for id in 0..num_groups {
                    let t = id / cells_per_class;
                    let mut rest = id % cells_per_class;
                    let mut attrs = vec![0; nd];
                    for k in (0..nd).rev() {
                        attrs[k] = rest % sel_alphabets[k];
                        rest /= sel_alphabets[k];
                    }
                    let mut full = vec![0; data.num_bias_types()];
                    for (k, &d) in dims.iter().enumerate() {
                        full[d] = attrs[k];
                    }
                    // Classes absent from the majority table have no defined pattern.
                    guiding[id] = table.guiding(t, &full, dims).unwrap_or_else(|_| vec![false; nd]);
                    class_of[id] = Some(t);
                    attributes_of[id] = Some(attrs);
                }
            }
        }

        let mut members = vec![Vec::new(); num_groups];
        let mut by_class = vec![vec![Vec::new(); c]; num_groups];
        let mut assignment = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let t = data.target(i);
            let b = data.bias(i);
            let g = table.guiding(t, b, dims)?;
            let id = match scheme {
                GroupingScheme::Majority => encode(&g),
                GroupingScheme::MajorityTarget => (t << nd) | encode(&g),
                GroupingScheme::BiasTarget => {
                    let cell = dims.iter().zip(&sel_alphabets).fold(0, |acc, (&d, &a)| acc * a + b[d]);
                    t * cells_per_class + cell
                }
            };
            members[id].push(i);
            by_class[id][t].push(i);
            assignment.push(id);
        }

        Ok(GroupIndex {
            scheme,
            dims: dims.to_vec(),
            num_classes: c,
            alphabets: sel_alphabets,
            members,
            by_class,
            assignment,
            guiding,
            class_of,
            attributes_of,
        })
    }

    pub fn scheme(&self) -> GroupingScheme {
        self.scheme
    }

    pub fn bias_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of groups including empty ones.
    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn group(&self, id: usize) -> &[usize] {
        &self.members[id]
    }

    pub fn group_class(&self, id: usize, class: usize) -> &[usize] {
        &self.by_class[id][class]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignment.len()
    }

    pub fn non_empty(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&g| !self.members[g].is_empty()).collect()
    }

    /// Group id of sample `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Guiding/conflicting vector of group `id` (`true` = guiding).
    pub fn guiding(&self, id: usize) -> &[bool] {
        &self.guiding[id]
    }

    /// Class of a per-class group, `None` for [`GroupingScheme::Majority`].
    pub fn class_of(&self, id: usize) -> Option<usize> {
        self.class_of[id]
    }

    /// Report label, e.g. `GC`, `CC(t1)` or `CG(t0:b1-0)`.
    pub fn label(&self, id: usize) -> String {
        let g = crate::metrics::label_groups_for_report(&self.guiding[id]);
        match self.scheme {
            GroupingScheme::Majority => g,
            GroupingScheme::MajorityTarget => alloc::format!("{g}(t{})", self.class_of[id].unwrap_or(0)),
            GroupingScheme::BiasTarget => {
                let attrs = self.attributes_of[id].as_deref().unwrap_or(&[]);
                let mut s = alloc::format!("{g}(t{}:b", self.class_of[id].unwrap_or(0));
                for (k, a) in attrs.iter().enumerate() {
                    if k > 0 {
                        s.push('-');
                    }
                    s.push_str(&alloc::format!("{a}"));
                }
                s.push(')');
                s
            }
        }
    }

    /// Fraction of samples in each group (0 for empty groups).
    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.members.iter().map(|m| m.len() as f64 / total).collect()
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }
}

/// Majority-agreement grouping of a training split over all of its bias types.
pub fn assign_groups(train: &Dataset, tie_break: TieBreak) -> Result<(MajorityTable, GroupIndex), DataError> {
    let table = MajorityTable::compute(train, tie_break)?;
    let dims: Vec<usize> = (0..train.num_bias_types()).collect();
    let index = GroupIndex::build(train, &table, &dims, GroupingScheme::Majority)?;
    Ok((table, index))
}
