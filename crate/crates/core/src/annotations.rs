//! Vote aggregation: soft/silver labels, annotation classes, agreement
//! statistics, class weights, and the Asian-focus label adjustment.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three classification attributes (tasks 1, 2, 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Aggression,
    Target,
    Type,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Aggression, Attribute::Target, Attribute::Type];
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Attribute::Aggression => "aggression",
            Attribute::Target => "target",
            Attribute::Type => "type",
        };
        f.write_str(s)
    }
}

/// Category layout of one attribute: ordered category names plus the default
/// chosen when votes tie for the maximum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attribute: Attribute,
    pub categories: Vec<String>,
    pub tie_default: usize,
}

impl AttributeSchema {
    /// Aggression: Not / Somewhat / Very, ties default to Somewhat.
    pub fn aggression() -> Self {
        AttributeSchema {
            attribute: Attribute::Aggression,
            categories: vec!["not".into(), "somewhat".into(), "very".into()],
            tie_default: 1,
        }
    }

    /// Post-adjustment binary Target: N/A / anti-Asian. No tie is possible at
    /// odd annotator counts; at even counts ties default to N/A, matching the
    /// ensemble tie rule for this attribute.
    pub fn target_binary() -> Self {
        AttributeSchema {
            attribute: Attribute::Target,
            categories: vec!["na".into(), "anti_asian".into()],
            tie_default: 0,
        }
    }

    /// Original four-way Target used before the Asian-focus adjustment.
    /// Ties default to N/A.
    pub fn target_four() -> Self {
        AttributeSchema {
            attribute: Attribute::Target,
            categories: vec![
                "na".into(),
                "anti_asian".into(),
                "anti_black".into(),
                "both".into(),
            ],
            tie_default: 0,
        }
    }

    /// Speech type: Normal / Abusive / Hate, ties default to Abusive.
    pub fn speech_type() -> Self {
        AttributeSchema {
            attribute: Attribute::Type,
            categories: vec!["normal".into(), "abusive".into(), "hate".into()],
            tie_default: 1,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidCategory {
                attribute: self.attribute.to_string(),
                value: name.to_owned(),
            })
    }
}

/// Agreement stratum: A unanimous, B two distinct categories, C all categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationClass {
    A,
    B,
    C,
}

/// One tweet's per-annotator votes for all three attributes, as category names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub tweet_id: String,
    pub votes: VoteSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteSet {
    pub aggression: Vec<String>,
    pub target: Vec<String>,
    #[serde(rename = "type")]
    pub speech_type: Vec<String>,
}

impl AnnotationRecord {
    pub fn annotator_count(&self) -> usize {
        self.votes.aggression.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.votes.aggression.len();
        if n == 0 {
            return Err(Error::Schema(format!("tweet {}: empty votes", self.tweet_id)));
        }
        if self.votes.target.len() != n || self.votes.speech_type.len() != n {
            return Err(Error::Schema(format!(
                "tweet {}: attributes have differing annotator counts",
                self.tweet_id
            )));
        }
        Ok(())
    }

    /// Enforces the annotation hierarchy per annotator: a Not-Aggressive vote
    /// forces Target=N/A and Type=Normal. Returns the number of repaired votes.
    pub fn repair_hierarchy(&mut self) -> usize {
        let mut repaired = 0;
        for i in 0..self.votes.aggression.len() {
            if self.votes.aggression[i] == "not" {
                if self.votes.target[i] != "na" {
                    self.votes.target[i] = "na".into();
                    repaired += 1;
                }
                if self.votes.speech_type[i] != "normal" {
                    self.votes.speech_type[i] = "normal".into();
                    repaired += 1;
                }
            }
        }
        repaired
    }
}

/// Soft label, silver label, and annotation class for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub soft: Vec<f64>,
    pub silver: usize,
    pub annot_class: AnnotationClass,
}

/// Aggregated labels for one tweet across all three attributes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tweet_id: String,
    pub aggression: AttributeLabel,
    pub target: AttributeLabel,
    #[serde(rename = "type")]
    pub speech_type: AttributeLabel,
}

impl LabeledExample {
    pub fn label(&self, attr: Attribute) -> &AttributeLabel {
        match attr {
            Attribute::Aggression => &self.aggression,
            Attribute::Target => &self.target,
            Attribute::Type => &self.speech_type,
        }
    }
}

/// Majority-voting aggregation of one attribute's votes.
///
/// soft[c] = count(c)/n; silver is the plurality winner with ties for the
/// maximum resolved to the schema's tie default; the annotation class is A for
/// one distinct category, B for exactly two, C when every category of the
/// schema received at least one vote.
pub fn aggregate(votes: &[String], schema: &AttributeSchema) -> Result<AttributeLabel> {
    if votes.is_empty() {
        return Err(Error::Schema("empty vote list".into()));
    }
    let k = schema.num_categories();
    let mut counts = vec![0usize; k];
    for v in votes {
        counts[schema.index_of(v)?] += 1;
    }
    Ok(aggregate_counts(&counts, votes.len(), schema))
}

/// Same as [`aggregate`] but over pre-tallied counts.
pub fn aggregate_counts(counts: &[usize], n: usize, schema: &AttributeSchema) -> AttributeLabel {
    debug_assert_eq!(counts.iter().sum::<usize>(), n);
    let soft: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let max = *counts.iter().max().expect("non-empty");
    let leaders: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] == max).collect();
    let silver = if leaders.len() == 1 {
        leaders[0]
    } else {
        schema.tie_default
    };
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    let annot_class = if distinct == 1 {
        AnnotationClass::A
    } else if distinct == 2 {
        AnnotationClass::B
    } else if distinct == counts.len() {
        AnnotationClass::C
    } else {
        // More than two distinct but not all categories (only possible for
        // schemas with 4+ categories).
        AnnotationClass::B
    };
    AttributeLabel {
        soft,
        silver,
        annot_class,
    }
}

/// Aggregates a full record under the given per-attribute schemas.
pub fn aggregate_record(
    rec: &AnnotationRecord,
    aggression: &AttributeSchema,
    target: &AttributeSchema,
    speech_type: &AttributeSchema,
) -> Result<LabeledExample> {
    rec.validate()?;
    Ok(LabeledExample {
        tweet_id: rec.tweet_id.clone(),
        aggression: aggregate(&rec.votes.aggression, aggression)?,
        target: aggregate(&rec.votes.target, target)?,
        speech_type: aggregate(&rec.votes.speech_type, speech_type)?,
    })
}

/// Outcome of the Asian-focus adjustment.
#[derive(Debug, Clone)]
pub struct AdjustOutcome {
    pub records: Vec<AnnotationRecord>,
    pub examples: Vec<LabeledExample>,
    pub dropped: usize,
}

/// Asian-focus adjustment of 4-category Target labels.
///
/// Drops every tweet whose Target silver is anti-Black or Both; for the rest,
/// remaps each individual vote anti-Black -> N/A and Both -> anti-Asian, then
/// re-aggregates Target under the binary schema.
pub fn asian_focus_adjust(records: Vec<AnnotationRecord>) -> Result<AdjustOutcome> {
    let four = AttributeSchema::target_four();
    let binary = AttributeSchema::target_binary();
    let aggression = AttributeSchema::aggression();
    let speech = AttributeSchema::speech_type();
    let mut kept = Vec::new();
    let mut examples = Vec::new();
    let mut dropped = 0;
    for mut rec in records {
        rec.validate()?;
        let silver4 = aggregate(&rec.votes.target, &four)?.silver;
        if silver4 == 2 || silver4 == 3 {
            dropped += 1;
            continue;
        }
        for v in &mut rec.votes.target {
            match v.as_str() {
                "anti_black" => *v = "na".into(),
                "both" => *v = "anti_asian".into(),
                _ => {}
            }
        }
        let ex = aggregate_record(&rec, &aggression, &binary, &speech)?;
        kept.push(rec);
        examples.push(ex);
    }
    Ok(AdjustOutcome {
        records: kept,
        examples,
        dropped,
    })
}

/// Fleiss' kappa, or the degenerate case where chance agreement is exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kappa {
    Value(f64),
    Undefined { undefined: bool },
}

impl Kappa {
    pub const UNDEFINED: Kappa = Kappa::Undefined { undefined: true };

    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined { .. } => None,
        }
    }
}

/// Fleiss' kappa over an items-by-categories count matrix with `n` raters per
/// item. Returns the undefined sentinel when expected chance agreement is 1
/// (a single category ever used).
pub fn fleiss_kappa(vote_counts: &[Vec<usize>], n: usize) -> Result<Kappa> {
    if n < 2 {
        return Err(Error::Schema("fleiss_kappa requires n >= 2 raters".into()));
    }
    let items = vote_counts.len();
    if items == 0 {
        return Err(Error::Schema("fleiss_kappa requires at least one item".into()));
    }
    let k = vote_counts[0].len();
    for (i, row) in vote_counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Schema(format!("row {i} has ragged width")));
        }
        let s: usize = row.iter().sum();
        if s != n {
            return Err(Error::Schema(format!(
                "row {i} sums to {s}, expected {n}"
            )));
        }
    }
    let nf = n as f64;
    let items_f = items as f64;
    let mut p_bar = 0.0;
    let mut category_totals = vec![0usize; k];
    for row in vote_counts {
        let agree: usize = row.iter().map(|&c| c * (c.saturating_sub(1))).sum();
        p_bar += agree as f64 / (nf * (nf - 1.0));
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    p_bar /= items_f;
    let p_e: f64 = category_totals
        .iter()
        .map(|&t| {
            let pj = t as f64 / (items_f * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(Kappa::UNDEFINED);
    }
    Ok(Kappa::Value((p_bar - p_e) / (1.0 - p_e)))
}

/// Per-category class weights `w_c = S / (C * s_c)`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let c = counts.len();
    if c == 0 {
        return Err(Error::Schema("class_weights: no categories".into()));
    }
    if let Some(i) = counts.iter().position(|&s| s == 0) {
        return Err(Error::Schema(format!(
            "class_weights: category {i} has zero count; merge or drop it"
        )));
    }
    let total: usize = counts.iter().sum();
    Ok(counts
        .iter()
        .map(|&s| total as f64 / (c as f64 * s as f64))
        .collect())
}

/// Corpus-level annotation statistics: kappa per attribute, silver counts per
/// category, and the annotation-class cross-tab.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_tweets: usize,
    pub dropped_by_adjustment: usize,
    pub kappa: BTreeMap<String, Kappa>,
    /// Kappa of Target on the original 4-category votes, when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_target_four: Option<Kappa>,
    pub silver_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// attribute -> category -> annotation class -> count (mirrors the
    /// class-by-attribute contingency tables).
    pub class_crosstab: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>,
}

fn count_matrix(records: &[AnnotationRecord], attr: Attribute, schema: &AttributeSchema) -> Result<Vec<Vec<usize>>> {
    records
        .iter()
        .map(|r| {
            let votes = match attr {
                Attribute::Aggression => &r.votes.aggression,
                Attribute::Target => &r.votes.target,
                Attribute::Type => &r.votes.speech_type,
            };
            let mut row = vec![0usize; schema.num_categories()];
            for v in votes {
                row[schema.index_of(v)?] += 1;
            }
            Ok(row)
        })
        .collect()
}

/// Builds corpus statistics from adjusted records and their labels.
/// `four_category_records` holds the pre-adjustment votes when the corpus went
/// through [`asian_focus_adjust`], so Target's kappa can be reported both ways.
pub fn corpus_stats(
    records: &[AnnotationRecord],
    examples: &[LabeledExample],
    dropped: usize,
    four_category_records: Option<&[AnnotationRecord]>,
) -> Result<CorpusStats> {
    let schemas = [
        AttributeSchema::aggression(),
        AttributeSchema::target_binary(),
        AttributeSchema::speech_type(),
    ];
    let n = records
        .first()
        .map(AnnotationRecord::annotator_count)
        .unwrap_or(0);
    let mut kappa = BTreeMap::new();
    let mut silver_counts = BTreeMap::new();
    let mut class_crosstab = BTreeMap::new();
    for schema in &schemas {
        let attr = schema.attribute;
        let matrix = count_matrix(records, attr, schema)?;
        kappa.insert(attr.to_string(), fleiss_kappa(&matrix, n)?);
        let mut counts: BTreeMap<String, usize> = schema
            .categories
            .iter()
            .map(|c| (c.clone(), 0))
            .collect();
        let mut crosstab: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for ex in examples {
            let label = ex.label(attr);
            let cat = &schema.categories[label.silver];
            *counts.get_mut(cat).expect("silver in schema") += 1;
            *crosstab
                .entry(cat.clone())
                .or_default()
                .entry(format!("{:?}", label.annot_class))
                .or_insert(0) += 1;
        }
        silver_counts.insert(attr.to_string(), counts);
        class_crosstab.insert(attr.to_string(), crosstab);
    }
    let kappa_target_four = match four_category_records {
        Some(recs) if !recs.is_empty() => {
            let four = AttributeSchema::target_four();
            let matrix = count_matrix(recs, Attribute::Target, &four)?;
            let n4 = recs[0].annotator_count();
            Some(fleiss_kappa(&matrix, n4)?)
        }
        _ => None,
    };
    Ok(CorpusStats {
        num_tweets: examples.len(),
        dropped_by_adjustment: dropped,
        kappa,
        kappa_target_four,
        silver_counts,
        class_crosstab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn aggregate_three_way_split_defaults_abusive() {
        let schema = AttributeSchema::speech_type();
        let out = aggregate(&v(&["normal", "abusive", "hate"]), &schema).unwrap();
        let third = 1.0 / 3.0;
        for (a, b) in out.soft.iter().zip([third, third, third]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.silver, 1); // abusive
        assert_eq!(out.annot_class, AnnotationClass::C);
    }

    #[test]
    fn aggregate_unanimous() {
        let schema = AttributeSchema::aggression();
        let out = aggregate(&v(&["not", "not", "not"]), &schema).unwrap();
        assert_eq!(out.soft, vec![1.0, 0.0, 0.0]);
        assert_eq!(out.silver, 0);
        assert_eq!(out.annot_class, AnnotationClass::A);
    }

    #[test]
    fn aggregate_two_to_one() {
        let schema = AttributeSchema::aggression();
        let out = aggregate(&v(&["not", "very", "very"]), &schema).unwrap();
        assert!((out.soft[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.soft[1], 0.0);
        assert!((out.soft[2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.silver, 2);
        assert_eq!(out.annot_class, AnnotationClass::B);
    }

    #[test]
    fn aggregate_tie_defaults() {
        // 2-2 tie at n=4 for aggression: Somewhat wins.
        let schema = AttributeSchema::aggression();
        let out = aggregate(&v(&["not", "not", "very", "very"]), &schema).unwrap();
        assert_eq!(out.silver, 1);
        // (Not, Somewhat) tie at n=2 also defaults to Somewhat.
        let out = aggregate(&v(&["not", "somewhat"]), &schema).unwrap();
        assert_eq!(out.silver, 1);
    }

    #[test]
    fn aggregate_rejects_invalid_category() {
        let schema = AttributeSchema::aggression();
        let err = aggregate(&v(&["not", "bogus", "very"]), &schema).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn binary_target_never_class_c() {
        let schema = AttributeSchema::target_binary();
        let out = aggregate(&v(&["na", "anti_asian", "na"]), &schema).unwrap();
        assert_eq!(out.annot_class, AnnotationClass::B);
        assert_eq!(out.silver, 0);
    }

    fn rec(id: &str, agg: &[&str], tgt: &[&str], typ: &[&str]) -> AnnotationRecord {
        AnnotationRecord {
            tweet_id: id.into(),
            votes: VoteSet {
                aggression: v(agg),
                target: v(tgt),
                speech_type: v(typ),
            },
        }
    }

    #[test]
    fn adjust_drops_and_remaps() {
        let records = vec![
            // silver anti_black -> dropped
            rec(
                "t1",
                &["very", "very", "very"],
                &["anti_black", "anti_black", "na"],
                &["hate", "hate", "hate"],
            ),
            // silver both -> dropped
            rec(
                "t2",
                &["very", "very", "very"],
                &["both", "both", "both"],
                &["hate", "hate", "hate"],
            ),
            // survivor with one anti_black vote: remapped to na, class A
            rec(
                "t3",
                &["somewhat", "somewhat", "somewhat"],
                &["anti_black", "na", "na"],
                &["abusive", "abusive", "abusive"],
            ),
            // survivor with both votes in the minority: both -> anti_asian
            rec(
                "t4",
                &["very", "very", "very"],
                &["anti_asian", "anti_asian", "both"],
                &["hate", "hate", "hate"],
            ),
        ];
        let out = asian_focus_adjust(records).unwrap();
        assert_eq!(out.dropped, 2);
        assert_eq!(out.examples.len(), 2);
        let t3 = &out.examples[0];
        assert_eq!(t3.target.soft, vec![1.0, 0.0]);
        assert_eq!(t3.target.silver, 0);
        assert_eq!(t3.target.annot_class, AnnotationClass::A);
        let t4 = &out.examples[1];
        assert_eq!(t4.target.soft, vec![0.0, 1.0]);
        assert_eq!(t4.target.silver, 1);
    }

    #[test]
    fn hierarchy_repair() {
        let mut r = rec(
            "t",
            &["not", "very", "not"],
            &["anti_asian", "anti_asian", "na"],
            &["hate", "hate", "normal"],
        );
        let fixed = r.repair_hierarchy();
        assert_eq!(fixed, 2);
        assert_eq!(r.votes.target, v(&["na", "anti_asian", "na"]));
        assert_eq!(r.votes.speech_type, v(&["normal", "hate", "normal"]));
    }

    #[test]
    fn kappa_unanimous_varied_is_one() {
        let rows = vec![vec![3, 0], vec![0, 3], vec![3, 0]];
        assert_eq!(fleiss_kappa(&rows, 3).unwrap(), Kappa::Value(1.0));
    }

    #[test]
    fn kappa_hand_case() {
        let rows = vec![vec![2, 1], vec![1, 2]];
        let k = fleiss_kappa(&rows, 3).unwrap().value().unwrap();
        assert!((k - (-1.0 / 3.0)).abs() < 1e-9, "kappa = {k}");
    }

    #[test]
    fn kappa_single_category_undefined() {
        let rows = vec![vec![3, 0], vec![3, 0]];
        assert_eq!(fleiss_kappa(&rows, 3).unwrap(), Kappa::UNDEFINED);
    }

    #[test]
    fn kappa_rejects_bad_rows() {
        assert!(fleiss_kappa(&[vec![2, 2]], 3).is_err());
        assert!(fleiss_kappa(&[], 3).is_err());
        assert!(fleiss_kappa(&[vec![1, 0]], 1).is_err());
    }

    #[test]
    fn class_weights_balanced() {
        let w = class_weights(&[800, 800, 800]).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn class_weights_imbalanced() {
        let w = class_weights(&[1800, 450, 150]).unwrap();
        assert!((w[0] - 2400.0 / (3.0 * 1800.0)).abs() < 1e-12);
        assert!((w[1] - 2400.0 / (3.0 * 450.0)).abs() < 1e-12);
        assert!((w[2] - 2400.0 / (3.0 * 150.0)).abs() < 1e-12);
    }

    #[test]
    fn class_weights_table_example() {
        let w = class_weights(&[2505, 454]).unwrap();
        assert!((w[0] - 0.5906).abs() < 1e-4);
        assert!((w[1] - 3.2588).abs() < 1e-4);
    }

    #[test]
    fn class_weights_zero_count_rejected() {
        assert!(class_weights(&[10, 0, 5]).is_err());
    }
}
