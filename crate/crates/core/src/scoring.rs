//! In-distribution scores. Every score is oriented so that higher means
//! "more in-distribution"; KLM and MOS are negated to fit that convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupScheme, HeadKind, HeadVariant, PeprModel};
use crate::nn::Network;
use crate::tensor::Tensor2;

/// Weight of the embedding power term.
pub const DEFAULT_PSI: f64 = 0.01;
/// Floor applied to both arguments of every logarithm in KL terms.
pub const KL_FLOOR: f64 = 1e-12;
/// Tolerance on row sums for inputs that must be probability vectors.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;
/// Member count used when a method is written with the `-ensemble` suffix.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseMethod {
    Msp,
    MaxLogit,
    Klm,
    Mos,
    Epow,
    Pepr,
    Cpepr,
}

impl BaseMethod {
    pub const ALL: [BaseMethod; 7] = [
        BaseMethod::Msp,
        BaseMethod::MaxLogit,
        BaseMethod::Klm,
        BaseMethod::Mos,
        BaseMethod::Epow,
        BaseMethod::Pepr,
        BaseMethod::Cpepr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseMethod::Msp => "MSP",
            BaseMethod::MaxLogit => "MLGT",
            BaseMethod::Klm => "KLM",
            BaseMethod::Mos => "MOS",
            BaseMethod::Epow => "EPOW",
            BaseMethod::Pepr => "PEPR",
            BaseMethod::Cpepr => "CPEPR",
        }
    }

    /// Head the scored model must be trained with.
    pub fn head(self) -> HeadKind {
        match self {
            BaseMethod::Msp | BaseMethod::MaxLogit | BaseMethod::Klm => HeadKind::Flat,
            _ => HeadKind::Grouped,
        }
    }

    /// Whether an averaged multi-member variant exists.
    pub fn supports_ensemble(self) -> bool {
        matches!(self, BaseMethod::Mos | BaseMethod::Pepr | BaseMethod::Cpepr)
    }

    fn parse(s: &str) -> Option<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_uppercase();
        Some(match key.as_str() {
            "MSP" => BaseMethod::Msp,
            "MLGT" | "MAXLOGIT" => BaseMethod::MaxLogit,
            "KLM" => BaseMethod::Klm,
            "MOS" => BaseMethod::Mos,
            "EPOW" => BaseMethod::Epow,
            "PEPR" => BaseMethod::Pepr,
            "CPEPR" => BaseMethod::Cpepr,
            _ => return None,
        })
    }
}

/// A scoring method, optionally averaged over `members` ensemble members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub base: BaseMethod,
    /// `1` for the single-model score.
    pub members: usize,
}

impl Method {
    pub fn single(base: BaseMethod) -> Self {
        Self { base, members: 1 }
    }

    pub fn ensemble(base: BaseMethod, members: usize) -> Result<Self> {
        if members == 0 {
            return Err(Error::config(format!(
                "{}: ensemble size must be at least 1",
                base.name()
            )));
        }
        if members > 1 && !base.supports_ensemble() {
            return Err(Error::config(format!(
                "{} has no ensemble variant (only MOS, PEPR and CPEPR do)",
                base.name()
            )));
        }
        Ok(Self { base, members })
    }

    /// Parses `PEPR`, `C-PEPR-10`, `mos-ensemble`, ...; `-ensemble` resolves
    /// to `ensemble_size` members.
    pub fn parse_with(s: &str, ensemble_size: usize) -> Result<Self> {
        let trimmed = s.trim();
        let bad = || Error::config(format!("unknown method '{trimmed}'"));
        let lower = trimmed.to_ascii_lowercase();
        if let Some(head) = lower.strip_suffix("-ensemble") {
            let base = BaseMethod::parse(head).ok_or_else(bad)?;
            return Method::ensemble(base, ensemble_size);
        }
        if let Some((head, tail)) = trimmed.rsplit_once('-') {
            if let Ok(n) = tail.parse::<usize>() {
                let base = BaseMethod::parse(head).ok_or_else(bad)?;
                return Method::ensemble(base, n);
            }
        }
        BaseMethod::parse(trimmed).map(Method::single).ok_or_else(bad)
    }

    pub fn head(self) -> HeadKind {
        self.base.head()
    }

    /// Regressors the grouped model must carry.
    pub fn regressors_needed(self) -> usize {
        match self.base {
            BaseMethod::Pepr | BaseMethod::Cpepr => self.members,
            _ => 0,
        }
    }

    /// Independently trained grouped classifiers needed (the main grouped model counts as one).
    pub fn classifiers_needed(self) -> usize {
        match self.base {
            BaseMethod::Mos => self.members,
            _ => 1,
        }
    }

    /// File-name friendly tag, e.g. `cpepr-10`.
    pub fn slug(self) -> String {
        self.to_string().to_ascii_lowercase()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.members > 1 {
            write!(f, "{}-{}", self.base.name(), self.members)
        } else {
            f.write_str(self.base.name())
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::parse_with(s, DEFAULT_ENSEMBLE_SIZE)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Per-example scores of one method, higher = in-distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub method: Method,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub const HIGHER_IS_IN_DISTRIBUTION: bool = true;

    pub fn new(method: Method, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{method} score {} at row {i}", values[i])));
        }
        Ok(Self { method, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows `[start, end)` as a new vector.
    pub fn slice(&self, start: usize, end: usize) -> ScoreVector {
        ScoreVector {
            method: self.method,
            values: self.values[start..end].to_vec(),
        }
    }
}

fn mean_square_rows(t: &Tensor2, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = t.cols().max(1) as f64;
    t.iter_rows()
        .map(|r| r.iter().map(|&v| f(v) * f(v)).sum::<f64>() / n)
        .collect()
}

/// `(1/n)·Σ ReLU(r_i)²` per row of regressor output.
pub fn pepr_from_output(r: &Tensor2) -> Vec<f64> {
    mean_square_rows(r, |v| v.max(0.0))
}

/// PEPR score of `ŷ` through `regressor`.
pub fn score_pepr(y_hat: &Tensor2, regressor: &Network) -> Result<ScoreVector> {
    if y_hat.cols() != regressor.input_dim() {
        return Err(Error::invalid(format!(
            "regressor expects width {} but ŷ has width {}",
            regressor.input_dim(),
            y_hat.cols()
        )));
    }
    let out = regressor.predict(y_hat)?;
    ScoreVector::new(Method::single(BaseMethod::Pepr), pepr_from_output(&out))
}

/// Embedding power `ψ·(1/n)·Σ z_i²`.
pub fn score_epow(z: &Tensor2, psi: f64) -> Result<ScoreVector> {
    let values = mean_square_rows(z, |v| v).into_iter().map(|p| psi * p).collect();
    ScoreVector::new(Method::single(BaseMethod::Epow), values)
}

/// PEPR plus embedding power.
pub fn score_cpepr(y_hat: &Tensor2, z: &Tensor2, regressor: &Network, psi: f64) -> Result<ScoreVector> {
    let pepr = score_pepr(y_hat, regressor)?;
    let epow = score_epow(z, psi)?;
    combine_cpepr(&pepr, &epow)
}

fn combine_cpepr(pepr: &ScoreVector, epow: &ScoreVector) -> Result<ScoreVector> {
    if pepr.len() != epow.len() {
        return Err(Error::invalid("PEPR and EPOW row counts differ"));
    }
    let values = pepr.values.iter().zip(&epow.values).map(|(a, b)| a + b).collect();
    ScoreVector::new(Method::single(BaseMethod::Cpepr), values)
}

/// Maximum class probability of a flat `ŷ`.
pub fn score_msp(y_hat: &Tensor2) -> Result<ScoreVector> {
    let mut values = Vec::with_capacity(y_hat.rows());
    for (i, row) in y_hat.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("row {i} of ŷ sums to {sum}, not 1")));
        }
        values.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    ScoreVector::new(Method::single(BaseMethod::Msp), values)
}

pub fn score_max_logit(logits: &Tensor2) -> Result<ScoreVector> {
    let values = logits
        .iter_rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ScoreVector::new(Method::single(BaseMethod::MaxLogit), values)
}

/// Per-class mean predicted distributions over the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlmTemplates {
    /// `(class, d_k)` for every class seen in training.
    pub templates: Vec<(usize, Vec<f64>)>,
    pub epsilon: f64,
}

impl KlmTemplates {
    /// `labels` must index the rows of `y_hat`; classes without rows are skipped.
    pub fn fit(y_hat: &Tensor2, labels: &[usize]) -> Result<Self> {
        if y_hat.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} prediction rows but {} labels",
                y_hat.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::invalid("cannot fit templates on an empty set"));
        }
        let width = y_hat.cols();
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(width);
        let mut sums = vec![vec![0.0; width]; classes];
        let mut counts = vec![0usize; classes];
        for (row, &k) in y_hat.iter_rows().zip(labels) {
            counts[k] += 1;
            for (s, v) in sums[k].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut templates = Vec::new();
        for (k, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
            if count == 0 {
                if k < width {
                    log::warn!("class {k} has no training rows; no KLM template");
                }
                continue;
            }
            let inv = 1.0 / count as f64;
            templates.push((k, sum.into_iter().map(|s| s * inv).collect()));
        }
        Ok(Self {
            templates,
            epsilon: KL_FLOOR,
        })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.templates.first().map_or(0, |t| t.1.len())
    }
}

/// `KL(p ‖ q)` with both arguments floored at `eps` inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi > 0.0 {
                pi * (pi.max(eps) / qi.max(eps)).ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// `−min_k KL(ŷ ‖ d_k)`.
pub fn score_klm(y_hat: &Tensor2, templates: &KlmTemplates) -> Result<ScoreVector> {
    score_klm_counted(y_hat, templates).map(|(s, _)| s)
}

/// [`score_klm`] plus the number of template comparisons performed.
pub fn score_klm_counted(y_hat: &Tensor2, templates: &KlmTemplates) -> Result<(ScoreVector, u64)> {
    if templates.is_empty() {
        return Err(Error::invalid("no KLM templates"));
    }
    if y_hat.cols() != templates.width() {
        return Err(Error::invalid(format!(
            "templates have width {} but ŷ has width {}",
            templates.width(),
            y_hat.cols()
        )));
    }
    let mut comparisons = 0u64;
    let mut values = Vec::with_capacity(y_hat.rows());
    for row in y_hat.iter_rows() {
        let mut best = f64::INFINITY;
        for (_, d) in &templates.templates {
            comparisons += 1;
            best = best.min(kl_divergence(row, d, templates.epsilon));
        }
        // 0.0 - x keeps an exact zero positive.
        values.push(0.0 - best);
    }
    Ok((ScoreVector::new(Method::single(BaseMethod::Klm), values)?, comparisons))
}

/// `−min_g p_others^g` of a grouped `ŷ`.
pub fn score_mos(y_hat: &Tensor2, scheme: &GroupScheme) -> Result<ScoreVector> {
    if y_hat.cols() != scheme.logit_width() {
        return Err(Error::invalid(format!(
            "MOS needs grouped ŷ of width {}, got width {}",
            scheme.logit_width(),
            y_hat.cols()
        )));
    }
    let values = y_hat
        .iter_rows()
        .map(|r| 0.0 - scheme.others_probs(r).fold(f64::INFINITY, f64::min))
        .collect();
    ScoreVector::new(Method::single(BaseMethod::Mos), values)
}

/// Elementwise mean of member scores.
pub fn ensemble_score(members: &[ScoreVector]) -> Result<ScoreVector> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("ensemble of zero members"))?;
    if let Some(m) = members.iter().find(|m| m.len() != first.len()) {
        return Err(Error::invalid(format!(
            "ensemble members have lengths {} and {}",
            first.len(),
            m.len()
        )));
    }
    if members.iter().any(|m| m.method.base != first.method.base) {
        return Err(Error::invalid("ensemble mixes different scoring methods"));
    }
    let k = members.len() as f64;
    let values = (0..first.len())
        .map(|i| members.iter().map(|m| m.values[i]).sum::<f64>() / k)
        .collect();
    let method = Method {
        base: first.method.base,
        members: members.len(),
    };
    ScoreVector::new(method, values)
}

/// `true` ("in-distribution") iff `score ≥ threshold`.
pub fn threshold_detector(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

/// Models available for scoring one seed.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelSet<'a> {
    pub flat: Option<&'a PeprModel>,
    pub grouped: Option<&'a PeprModel>,
    /// Extra grouped classifiers for MOS ensembles (member 0 is `grouped`).
    pub grouped_members: &'a [PeprModel],
    pub templates: Option<&'a KlmTemplates>,
    pub psi: f64,
}

impl<'a> ModelSet<'a> {
    fn flat_model(&self, m: Method) -> Result<&'a PeprModel> {
        let model = self
            .flat
            .ok_or_else(|| Error::Usage(format!("{m} needs a flat-head model")))?;
        if model.variant.is_grouped() {
            return Err(Error::Usage(format!("{m} needs a flat head, got a grouped one")));
        }
        Ok(model)
    }

    fn grouped_model(&self, m: Method) -> Result<(&'a PeprModel, &'a GroupScheme)> {
        let model = self
            .grouped
            .ok_or_else(|| Error::Usage(format!("{m} needs a grouped-head model")))?;
        match &model.variant {
            HeadVariant::Grouped(s) => Ok((model, s)),
            HeadVariant::Flat { .. } => Err(Error::Usage(format!("{m} needs a grouped head, got a flat one"))),
        }
    }

    /// Scores `x` under every method in `methods`, sharing forward passes.
    pub fn score(&self, x: &Tensor2, methods: &[Method]) -> Result<Vec<ScoreVector>> {
        let mut flat_out = None;
        let mut grouped_out = None;
        let mut pepr_members: Vec<ScoreVector> = Vec::new();
        let mut mos_members: Vec<ScoreVector> = Vec::new();
        let mut epow_cache: Option<ScoreVector> = None;
        let mut results = Vec::with_capacity(methods.len());

        for &m in methods {
            let score = match m.head() {
                HeadKind::Flat => {
                    let model = self.flat_model(m)?;
                    if flat_out.is_none() {
                        flat_out = Some(model.embed_and_classify(x)?);
                    }
                    let out = flat_out.as_ref().expect("set above");
                    match m.base {
                        BaseMethod::Msp => score_msp(&out.probs)?,
                        BaseMethod::MaxLogit => score_max_logit(&out.logits)?,
                        BaseMethod::Klm => {
                            let t = self
                                .templates
                                .ok_or_else(|| Error::Usage("KLM needs fitted templates".into()))?;
                            score_klm(&out.probs, t)?
                        }
                        _ => unreachable!("flat methods are MSP, MLGT and KLM"),
                    }
                }
                HeadKind::Grouped => {
                    let (model, scheme) = self.grouped_model(m)?;
                    if grouped_out.is_none() {
                        grouped_out = Some(model.embed_and_classify(x)?);
                    }
                    let out = grouped_out.as_ref().expect("set above");
                    match m.base {
                        BaseMethod::Mos => {
                            if mos_members.is_empty() {
                                mos_members.push(score_mos(&out.probs, scheme)?);
                            }
                            if m.members > 1 + self.grouped_members.len() {
                                return Err(Error::Usage(format!(
                                    "{m} needs {} classifiers, {} available",
                                    m.members,
                                    1 + self.grouped_members.len()
                                )));
                            }
                            while mos_members.len() < m.members {
                                let member = &self.grouped_members[mos_members.len() - 1];
                                let s = member
                                    .variant
                                    .scheme()
                                    .ok_or_else(|| Error::Usage("MOS member has a flat head".into()))?;
                                let p = member.embed_and_classify(x)?.probs;
                                mos_members.push(score_mos(&p, s)?);
                            }
                            member_mean(&mos_members[..m.members], m)?
                        }
                        BaseMethod::Epow => epow(&mut epow_cache, &out.embedding, self.psi)?,
                        BaseMethod::Pepr | BaseMethod::Cpepr => {
                            if m.members > model.regressors.len() {
                                return Err(Error::Usage(format!(
                                    "{m} needs {} regressors, model has {}",
                                    m.members,
                                    model.regressors.len()
                                )));
                            }
                            while pepr_members.len() < m.members {
                                let reg = &model.regressors[pepr_members.len()];
                                pepr_members.push(score_pepr(&out.probs, reg)?);
                            }
                            let pepr = member_mean(
                                &pepr_members[..m.members],
                                Method {
                                    base: BaseMethod::Pepr,
                                    ..m
                                },
                            )?;
                            if m.base == BaseMethod::Pepr {
                                pepr
                            } else {
                                let e = epow(&mut epow_cache, &out.embedding, self.psi)?;
                                let mut c = combine_cpepr(&pepr, &e)?;
                                c.method = m;
                                c
                            }
                        }
                        _ => unreachable!("grouped methods are MOS, EPOW, PEPR and CPEPR"),
                    }
                }
            };
            results.push(score);
        }
        Ok(results)
    }
}

fn epow(cache: &mut Option<ScoreVector>, z: &Tensor2, psi: f64) -> Result<ScoreVector> {
    if cache.is_none() {
        *cache = Some(score_epow(z, psi)?);
    }
    Ok(cache.clone().expect("set above"))
}

fn member_mean(members: &[ScoreVector], method: Method) -> Result<ScoreVector> {
    if members.len() == 1 {
        let mut s = members[0].clone();
        s.method = method;
        return Ok(s);
    }
    let mut s = ensemble_score(members)?;
    s.method = method;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pepr_model, LabeledFeatures};

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    #[test]
    fn pepr_examples() {
        let v = pepr_from_output(&t(&[&[-1.0, 2.0, 0.0], &[-3.0, -0.5, 0.0], &[1.5, 1.5, 1.5]]));
        assert_eq!(v[0], 4.0 / 3.0);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 2.25);
    }

    #[test]
    fn epow_examples() {
        let s = score_epow(&t(&[&[0.0, 0.0], &[3.0, -4.0]]), 0.01).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!((s.values[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn cpepr_is_pepr_plus_epow_and_degenerates_at_zero_psi() {
        let model = build_pepr_model(4, 6, Some(GroupScheme::even_split(6, 2).unwrap()), 1.0 / 16.0, 3).unwrap();
        let x = Tensor2::from_vec(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let out = model.embed_and_classify(&x).unwrap();
        let reg = &model.regressors[0];
        let p = score_pepr(&out.probs, reg).unwrap();
        let e = score_epow(&out.embedding, DEFAULT_PSI).unwrap();
        let c = score_cpepr(&out.probs, &out.embedding, reg, DEFAULT_PSI).unwrap();
        for i in 0..5 {
            assert_eq!(c.values[i], p.values[i] + e.values[i]);
        }
        let c0 = score_cpepr(&out.probs, &out.embedding, reg, 0.0).unwrap();
        assert_eq!(c0.values, p.values);
    }

    #[test]
    fn cpepr_with_zero_regressor_output() {
        let zero_out = pepr_from_output(&Tensor2::zeros(1, 2));
        let e = score_epow(&t(&[&[1.0, 1.0]]), 0.01).unwrap();
        assert_eq!(zero_out[0] + e.values[0], 0.01);
    }

    #[test]
    fn pepr_width_mismatch() {
        let model = build_pepr_model(4, 6, None, 1.0 / 16.0, 3).unwrap();
        let err = score_pepr(&Tensor2::zeros(2, 3), &model.regressors[0]).unwrap_err();
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn msp_examples() {
        let s = score_msp(&t(&[&[0.0, 1.0, 0.0], &[1.0 / 3.0; 3], &[0.5, 0.3, 0.2]])).unwrap();
        assert_eq!(s.values[0], 1.0);
        assert!((s.values[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.values[2], 0.5);
        assert!(score_msp(&t(&[&[0.5, 0.4]])).is_err());
    }

    #[test]
    fn max_logit_examples() {
        let s = score_max_logit(&t(&[&[-2.0, 0.0, 5.0], &[1.5, 1.5, 1.5]])).unwrap();
        assert_eq!(s.values, vec![5.0, 1.5]);
    }

    #[test]
    fn klm_templates_are_class_means() {
        let y = t(&[&[0.6, 0.4], &[0.4, 0.6], &[1.0, 0.0]]);
        let tpl = KlmTemplates::fit(&y, &[1, 1, 0]).unwrap();
        assert_eq!(tpl.templates[0], (0, vec![1.0, 0.0]));
        assert_eq!(tpl.templates[1], (1, vec![0.5, 0.5]));
        for (_, d) in &tpl.templates {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn klm_empty_class_is_omitted() {
        let y = t(&[&[0.9, 0.05, 0.05], &[0.1, 0.1, 0.8]]);
        let tpl = KlmTemplates::fit(&y, &[0, 2]).unwrap();
        let classes: Vec<usize> = tpl.templates.iter().map(|t| t.0).collect();
        assert_eq!(classes, vec![0, 2]);
    }

    #[test]
    fn klm_template_input_scores_zero() {
        let y = t(&[&[0.7, 0.2, 0.1], &[0.1, 0.3, 0.6]]);
        let tpl = KlmTemplates::fit(&y, &[0, 1]).unwrap();
        let s = score_klm(&y, &tpl).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
        assert!(s.values[0].is_sign_positive());
    }

    #[test]
    fn klm_counts_comparisons() {
        let y = t(&[&[0.5, 0.5], &[0.2, 0.8], &[0.9, 0.1]]);
        let tpl = KlmTemplates::fit(&t(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
        let (_, n) = score_klm_counted(&y, &tpl).unwrap();
        assert_eq!(n, 6);
    }

    #[test]
    fn mos_examples() {
        let scheme = GroupScheme::even_split(4, 2).unwrap();
        let uniform = [1.0 / 3.0; 6];
        let s = score_mos(&t(&[&[0.5, 0.5, 0.0, 0.2, 0.2, 0.6], &uniform]), &scheme).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!((s.values[1] + 1.0 / 3.0).abs() < 1e-15);

        let single = GroupScheme::even_split(2, 1).unwrap();
        let s = score_mos(&t(&[&[0.3, 0.3, 0.4]]), &single).unwrap();
        assert_eq!(s.values[0], -0.4);

        assert!(score_mos(&Tensor2::zeros(1, 4), &scheme).is_err());
    }

    #[test]
    fn ensemble_examples() {
        let a = ScoreVector::new(Method::single(BaseMethod::Pepr), vec![1.0, -2.0, 3.5]).unwrap();
        let neg = ScoreVector::new(a.method, a.values.iter().map(|v| -v).collect()).unwrap();
        let b = ScoreVector::new(a.method, vec![0.5, 0.25, 8.0]).unwrap();
        assert_eq!(ensemble_score(std::slice::from_ref(&a)).unwrap().values, a.values);
        assert_eq!(ensemble_score(&[a.clone(), neg]).unwrap().values, vec![0.0; 3]);
        assert_eq!(
            ensemble_score(&[a.clone(), b.clone()]).unwrap().values,
            ensemble_score(&[b, a.clone()]).unwrap().values
        );
        let short = ScoreVector::new(a.method, vec![1.0]).unwrap();
        assert!(ensemble_score(&[a, short]).is_err());
        assert!(ensemble_score(&[]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let s = [0.1, 0.5];
        assert_eq!(threshold_detector(&s, f64::NEG_INFINITY), vec![true, true]);
        assert_eq!(threshold_detector(&s, f64::INFINITY), vec![false, false]);
        assert_eq!(threshold_detector(&s, 0.5), vec![false, true]);
    }

    #[test]
    fn method_parsing() {
        let p = |s: &str| s.parse::<Method>().unwrap();
        assert_eq!(p("PEPR"), Method::single(BaseMethod::Pepr));
        assert_eq!(p("C-PEPR-10"), Method::ensemble(BaseMethod::Cpepr, 10).unwrap());
        assert_eq!(p("mos-ensemble").members, DEFAULT_ENSEMBLE_SIZE);
        assert_eq!(Method::parse_with("PEPR-ensemble", 4).unwrap().members, 4);
        assert_eq!(p("MaxLogit").base, BaseMethod::MaxLogit);
        assert_eq!(p("CPEPR-10").to_string(), "CPEPR-10");
        assert_eq!(p("PEPR-1"), p("PEPR"));
        assert!("MSP-10".parse::<Method>().is_err());
        assert!("ODIN".parse::<Method>().is_err());
        assert!("PEPR-0".parse::<Method>().is_err());
        let json = serde_json::to_string(&p("CPEPR-10")).unwrap();
        assert_eq!(json, "\"CPEPR-10\"");
        assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), p("CPEPR-10"));
    }

    #[test]
    fn method_requirements() {
        let p = |s: &str| s.parse::<Method>().unwrap();
        assert_eq!(p("MSP").head(), HeadKind::Flat);
        assert_eq!(p("EPOW").head(), HeadKind::Grouped);
        assert_eq!(p("CPEPR-10").regressors_needed(), 10);
        assert_eq!(p("MOS-10").classifiers_needed(), 10);
        assert_eq!(p("MOS-10").regressors_needed(), 0);
    }

    #[test]
    fn dispatch_rejects_wrong_head() {
        let flat = build_pepr_model(4, 6, None, 1.0 / 16.0, 3).unwrap();
        let set = ModelSet {
            grouped: Some(&flat),
            psi: DEFAULT_PSI,
            ..Default::default()
        };
        let err = set.score(&Tensor2::zeros(2, 4), &["MOS".parse().unwrap()]).unwrap_err();
        assert!(err.to_string().contains("grouped"));
        let none = ModelSet::default();
        assert!(none.score(&Tensor2::zeros(2, 4), &["MSP".parse().unwrap()]).is_err());
    }

    #[test]
    fn dispatch_matches_direct_scores() {
        let scheme = GroupScheme::even_split(6, 2).unwrap();
        let mut grouped = build_pepr_model(4, 6, Some(scheme.clone()), 1.0 / 16.0, 5).unwrap();
        let extra = build_pepr_model(4, 6, Some(scheme.clone()), 1.0 / 16.0, 6).unwrap();
        grouped.regressors.push(extra.regressors[0].clone());
        let flat = build_pepr_model(4, 6, None, 1.0 / 16.0, 7).unwrap();
        let x = Tensor2::from_vec(3, 4, (0..12).map(|i| (i as f64).cos()).collect()).unwrap();
        let train = LabeledFeatures::new(x.clone(), vec![0, 1, 2]).unwrap();
        let tpl = KlmTemplates::fit(&flat.embed_and_classify(&train.features).unwrap().probs, &train.labels).unwrap();
        let members = [extra];
        let set = ModelSet {
            flat: Some(&flat),
            grouped: Some(&grouped),
            grouped_members: &members,
            templates: Some(&tpl),
            psi: DEFAULT_PSI,
        };
        let methods: Vec<Method> = [
            "MSP", "MLGT", "KLM", "MOS", "MOS-2", "EPOW", "PEPR", "PEPR-2", "CPEPR", "CPEPR-2",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        let scores = set.score(&x, &methods).unwrap();
        for (m, s) in methods.iter().zip(&scores) {
            assert_eq!(s.method, *m);
        }
        let g = grouped.embed_and_classify(&x).unwrap();
        let p0 = score_pepr(&g.probs, &grouped.regressors[0]).unwrap();
        let p1 = score_pepr(&g.probs, &grouped.regressors[1]).unwrap();
        let e = score_epow(&g.embedding, DEFAULT_PSI).unwrap();
        assert_eq!(scores[6].values, p0.values);
        let p10 = ensemble_score(&[p0, p1]).unwrap();
        assert_eq!(scores[7].values, p10.values);
        for i in 0..3 {
            assert_eq!(scores[9].values[i], p10.values[i] + e.values[i]);
        }
        let m0 = score_mos(&g.probs, &scheme).unwrap();
        let m1 = score_mos(&members[0].embed_and_classify(&x).unwrap().probs, &scheme).unwrap();
        assert_eq!(scores[4].values, ensemble_score(&[m0, m1]).unwrap().values);

        let too_many: Method = "PEPR-3".parse().unwrap();
        assert!(set.score(&x, &[too_many]).is_err());
    }
}
