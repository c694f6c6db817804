//! Grouped softmax: classes partitioned into groups, each group with an extra
//! trailing "others" slot and its own softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{log_sum_exp, softmax_in_place};
use crate::tensor::Tensor2;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub struct GroupScheme {
    groups: Vec<Vec<usize>>,
    /// class -> (group, index within group)
    lookup: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawScheme {
    groups: Vec<Vec<usize>>,
}

impl TryFrom<RawScheme> for GroupScheme {
    type Error = Error;
    fn try_from(raw: RawScheme) -> Result<Self> {
        GroupScheme::from_groups(raw.groups)
    }
}

impl From<GroupScheme> for RawScheme {
    fn from(s: GroupScheme) -> Self {
        RawScheme { groups: s.groups }
    }
}

impl GroupScheme {
    /// Explicit partition of classes `0..C` into non-empty groups.
    pub fn from_groups(groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(Vec::is_empty) {
            return Err(Error::config("group scheme needs at least one non-empty group"));
        }
        let classes: usize = groups.iter().map(Vec::len).sum();
        let mut lookup = vec![None; classes];
        for (g, members) in groups.iter().enumerate() {
            for (i, &c) in members.iter().enumerate() {
                match lookup.get_mut(c) {
                    Some(slot @ None) => *slot = Some((g, i)),
                    Some(Some(_)) => return Err(Error::config(format!("class {c} appears in more than one group"))),
                    None => {
                        return Err(Error::config(format!(
                            "class {c} outside 0..{classes}; classes must be numbered contiguously"
                        )))
                    }
                }
            }
        }
        let lookup = lookup.into_iter().map(|v| v.unwrap()).collect();
        let mut offsets = Vec::with_capacity(groups.len());
        let mut acc = 0;
        for g in &groups {
            offsets.push(acc);
            acc += g.len() + 1;
        }
        Ok(Self {
            groups,
            lookup,
            offsets,
        })
    }

    /// Contiguous split of `0..classes` into `groups` groups; the remainder
    /// goes one class each to the leading groups.
    pub fn even_split(classes: usize, groups: usize) -> Result<Self> {
        if groups == 0 || groups > classes {
            return Err(Error::config(format!(
                "cannot split {classes} classes into {groups} groups"
            )));
        }
        let base = classes / groups;
        let extra = classes % groups;
        let mut next = 0;
        let parts = (0..groups)
            .map(|g| {
                let size = base + usize::from(g < extra);
                let part: Vec<usize> = (next..next + size).collect();
                next += size;
                part
            })
            .collect();
        Self::from_groups(parts)
    }

    /// Group count used when no taxonomy is given: about eight classes per group.
    pub fn default_group_count(classes: usize) -> usize {
        ((classes as f64 / 8.0).round() as usize).clamp(1, classes.max(1))
    }

    pub fn default_for(classes: usize) -> Result<Self> {
        Self::even_split(classes, Self::default_group_count(classes))
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.lookup.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_size(&self, g: usize) -> usize {
        self.groups[g].len()
    }

    /// Total logit width, `Σ (|c_g| + 1)`.
    pub fn logit_width(&self) -> usize {
        self.num_classes() + self.num_groups()
    }

    /// First column of group `g`.
    pub fn offset(&self, g: usize) -> usize {
        self.offsets[g]
    }

    pub fn others_column(&self, g: usize) -> usize {
        self.offsets[g] + self.groups[g].len()
    }

    pub fn locate(&self, class: usize) -> Option<(usize, usize)> {
        self.lookup.get(class).copied()
    }

    fn check_width(&self, t: &Tensor2) -> Result<()> {
        if t.cols() != self.logit_width() {
            return Err(Error::config(format!(
                "grouped head width {} does not match scheme width {}",
                t.cols(),
                self.logit_width()
            )));
        }
        Ok(())
    }

    /// Per-group softmax; each group's `|c_g| + 1` entries form a simplex.
    pub fn grouped_softmax(&self, logits: &Tensor2) -> Result<Tensor2> {
        self.check_width(logits)?;
        let mut out = logits.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for g in 0..self.num_groups() {
                let (a, b) = (self.offset(g), self.others_column(g) + 1);
                softmax_in_place(&mut row[a..b]);
            }
        }
        Ok(out)
    }

    /// Column targeted in group `g` for an example of class `class`.
    fn target_column(&self, g: usize, class: usize) -> usize {
        let (tg, idx) = self.lookup[class];
        if tg == g {
            self.offset(g) + idx
        } else {
            self.others_column(g)
        }
    }

    fn check_targets(&self, rows: usize, targets: &[usize]) -> Result<()> {
        if rows != targets.len() {
            return Err(Error::config(format!("{rows} rows but {} targets", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= self.num_classes()) {
            return Err(Error::invalid(format!("class {t} is not in the group scheme")));
        }
        Ok(())
    }

    /// Mean over the batch of the summed per-group cross-entropies, with the
    /// gradient with respect to the logits. The true group targets the true
    /// class; every other group targets its "others" slot.
    pub fn grouped_cross_entropy(&self, logits: &Tensor2, targets: &[usize]) -> Result<(f64, Tensor2)> {
        self.check_width(logits)?;
        self.check_targets(logits.rows(), targets)?;
        let n = logits.rows().max(1) as f64;
        let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        for (r, &class) in targets.iter().enumerate() {
            let row = logits.row(r);
            let grow = grad.row_mut(r);
            for g in 0..self.num_groups() {
                let (a, b) = (self.offset(g), self.others_column(g) + 1);
                let lse = log_sum_exp(&row[a..b]);
                let t = self.target_column(g, class);
                loss += lse - row[t];
                for c in a..b {
                    grow[c] = (row[c] - lse).exp() / n;
                }
                grow[t] -= 1.0 / n;
            }
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite grouped cross-entropy".into()));
        }
        Ok((loss.max(0.0), grad))
    }

    /// The same loss evaluated on already normalized grouped probabilities.
    pub fn grouped_nll(&self, probs: &Tensor2, targets: &[usize]) -> Result<f64> {
        self.check_width(probs)?;
        self.check_targets(probs.rows(), targets)?;
        let mut loss = 0.0;
        for (r, &class) in targets.iter().enumerate() {
            let row = probs.row(r);
            for g in 0..self.num_groups() {
                loss -= row[self.target_column(g, class)].max(PROB_FLOOR).ln();
            }
        }
        Ok(loss / probs.rows().max(1) as f64)
    }

    /// Class with the largest non-"others" probability across all groups.
    pub fn predict_class(&self, probs_row: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (g, members) in self.groups.iter().enumerate() {
            for (i, &c) in members.iter().enumerate() {
                let p = probs_row[self.offset(g) + i];
                if p > best.1 {
                    best = (c, p);
                }
            }
        }
        best.0
    }

    /// "Others" probability of every group for one example.
    pub fn others_probs<'a>(&'a self, probs_row: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        (0..self.num_groups()).map(move |g| probs_row[self.others_column(g)])
    }
}
