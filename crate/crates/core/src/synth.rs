//! Deterministic synthetic-corpus generator so the full pipeline is testable
//! without a real annotated dataset.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationRecord, AttributeSchema, VoteSet};
use crate::error::{Error, Result};
use crate::preprocess::Tweet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_tweets: usize,
    /// Signal tokens available per (attribute, category) class.
    pub vocab_per_class: usize,
    /// Signal tokens drawn per attribute into each tweet's text.
    pub tokens_per_attribute: usize,
    pub aggression_priors: Vec<f64>,
    pub target_priors: Vec<f64>,
    pub type_priors: Vec<f64>,
    pub annotators: usize,
    /// Annotator noise rate: probability of reporting a uniform wrong category.
    pub eta: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_tweets: 600,
            vocab_per_class: 12,
            tokens_per_attribute: 3,
            aggression_priors: vec![0.4, 0.35, 0.25],
            target_priors: vec![0.5, 0.5],
            type_priors: vec![0.4, 0.35, 0.25],
            annotators: 3,
            eta: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_tweets == 0 || self.annotators == 0 {
            return Err(Error::Config("num_tweets and annotators must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("eta must be in [0, 1]".into()));
        }
        for (name, p, k) in [
            ("aggression", &self.aggression_priors, 3usize),
            ("target", &self.target_priors, 2),
            ("type", &self.type_priors, 3),
        ] {
            if p.len() != k {
                return Err(Error::Config(format!("{name} priors must have {k} entries")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < 0.0) {
                return Err(Error::Config(format!("{name} priors must sum to 1")));
            }
        }
        Ok(())
    }
}

/// Hierarchy-consistent true labels for one tweet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueLabels {
    pub aggression: usize,
    pub target: usize,
    pub speech_type: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tweets: Vec<Tweet>,
    pub records: Vec<AnnotationRecord>,
    pub truth: Vec<TrueLabels>,
}

/// Signal token for attribute `attr` (0..3), category `cat`, slot `i`.
/// Tokens are disjoint across categories so the corpus is linearly separable
/// at eta = 0.
fn signal_token(attr: usize, cat: usize, i: usize) -> String {
    let attr_name = ["agg", "tgt", "typ"][attr];
    format!("{attr_name}{cat}sig{i}")
}

fn noisy_vote(truth: usize, k: usize, eta: f64, rng: &mut impl Rng) -> usize {
    if k > 1 && rng.gen::<f64>() < eta {
        // uniform over the other categories
        let mut c = rng.gen_range(0..k - 1);
        if c >= truth {
            c += 1;
        }
        c
    } else {
        truth
    }
}

/// Generates tweets, per-annotator votes, and true labels, deterministically
/// per seed. Annotator votes are hierarchy-coerced after noise: a Not-Aggressive
/// vote forces Target=N/A and Type=Normal.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let agg_dist = WeightedIndex::new(&spec.aggression_priors)
        .map_err(|e| Error::Config(e.to_string()))?;
    let tgt_dist =
        WeightedIndex::new(&spec.target_priors).map_err(|e| Error::Config(e.to_string()))?;
    let typ_dist =
        WeightedIndex::new(&spec.type_priors).map_err(|e| Error::Config(e.to_string()))?;

    let agg_schema = AttributeSchema::aggression();
    let tgt_schema = AttributeSchema::target_binary();
    let typ_schema = AttributeSchema::speech_type();

    let mut tweets = Vec::with_capacity(spec.num_tweets);
    let mut records = Vec::with_capacity(spec.num_tweets);
    let mut truth = Vec::with_capacity(spec.num_tweets);
    for idx in 0..spec.num_tweets {
        let aggression = agg_dist.sample(&mut rng);
        let (target, speech_type) = if aggression == 0 {
            (0, 0)
        } else {
            (tgt_dist.sample(&mut rng), typ_dist.sample(&mut rng))
        };
        let labels = TrueLabels {
            aggression,
            target,
            speech_type,
        };
        let mut words = Vec::new();
        for (attr, cat) in [(0, aggression), (1, target), (2, speech_type)] {
            for _ in 0..spec.tokens_per_attribute {
                let slot = rng.gen_range(0..spec.vocab_per_class);
                words.push(signal_token(attr, cat, slot));
            }
        }
        let text = words.join(" ");
        tweets.push(Tweet {
            id: format!("synth-{idx}"),
            raw_text: text,
            month: format!("2020-{:02}", 1 + idx % 6),
            category: None,
        });
        let mut agg_votes = Vec::with_capacity(spec.annotators);
        let mut tgt_votes = Vec::with_capacity(spec.annotators);
        let mut typ_votes = Vec::with_capacity(spec.annotators);
        for _ in 0..spec.annotators {
            let a = noisy_vote(aggression, 3, spec.eta, &mut rng);
            let mut t = noisy_vote(target, 2, spec.eta, &mut rng);
            let mut y = noisy_vote(speech_type, 3, spec.eta, &mut rng);
            if a == 0 {
                t = 0;
                y = 0;
            }
            agg_votes.push(agg_schema.categories[a].clone());
            tgt_votes.push(tgt_schema.categories[t].clone());
            typ_votes.push(typ_schema.categories[y].clone());
        }
        records.push(AnnotationRecord {
            tweet_id: format!("synth-{idx}"),
            votes: VoteSet {
                aggression: agg_votes,
                target: tgt_votes,
                speech_type: typ_votes,
            },
        });
        truth.push(labels);
    }
    Ok(SynthCorpus {
        tweets,
        records,
        truth,
    })
}
