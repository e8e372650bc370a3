//! Tweet text normalization, keyword categorization, and boosted sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word-frequency list bundled for hashtag segmentation (~50k entries).
const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.txt");

/// Tweet category assigned by targeted-phrase matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "anti-Asian")]
    AntiAsian,
    #[serde(rename = "anti-Black")]
    AntiBlack,
    #[serde(rename = "Interracial")]
    Interracial,
    #[serde(rename = "Normal")]
    Normal,
}

impl Category {
    /// Fixed draw order for the round-robin sampler.
    pub const ALL: [Category; 4] = [
        Category::AntiAsian,
        Category::AntiBlack,
        Category::Interracial,
        Category::Normal,
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::AntiAsian => "anti-Asian",
            Category::AntiBlack => "anti-Black",
            Category::Interracial => "Interracial",
            Category::Normal => "Normal",
        };
        f.write_str(s)
    }
}

/// A raw tweet record as read from newline-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub raw_text: String,
    pub month: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

/// Targeted phrase lists used for categorization, sampling, and hashtag retention.
#[derive(Debug, Clone, Default)]
pub struct PhraseLists {
    anti_asian: BTreeSet<String>,
    anti_black: BTreeSet<String>,
    tracking_keywords: BTreeSet<String>,
}

fn clean_phrases(raw: impl IntoIterator<Item = String>, which: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for p in raw {
        let p = p.trim().to_lowercase();
        if p.is_empty() {
            continue;
        }
        if !p.chars().all(|c| c.is_ascii()) {
            return Err(Error::InvalidPhraseList(format!(
                "{which}: non-ASCII phrase {p:?}"
            )));
        }
        out.insert(p);
    }
    Ok(out)
}

impl PhraseLists {
    pub fn new(
        anti_asian: impl IntoIterator<Item = String>,
        anti_black: impl IntoIterator<Item = String>,
        tracking_keywords: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let anti_asian = clean_phrases(anti_asian, "anti-Asian")?;
        let anti_black = clean_phrases(anti_black, "anti-Black")?;
        let tracking_keywords = clean_phrases(tracking_keywords, "tracking")?;
        if let Some(dup) = anti_asian.intersection(&anti_black).next() {
            return Err(Error::InvalidPhraseList(format!(
                "phrase {dup:?} appears in both target lists"
            )));
        }
        Ok(PhraseLists {
            anti_asian,
            anti_black,
            tracking_keywords,
        })
    }

    /// Loads the three lists from plain-text files, one phrase per line.
    /// `tracking` is optional.
    pub fn from_files(
        anti_asian: &Path,
        anti_black: &Path,
        tracking: Option<&Path>,
    ) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<String>> {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(text.lines().map(str::to_owned).collect())
        };
        let track = match tracking {
            Some(p) => read(p)?,
            None => Vec::new(),
        };
        Self::new(read(anti_asian)?, read(anti_black)?, track)
    }

    pub fn anti_asian(&self) -> &BTreeSet<String> {
        &self.anti_asian
    }

    pub fn anti_black(&self) -> &BTreeSet<String> {
        &self.anti_black
    }

    pub fn tracking_keywords(&self) -> &BTreeSet<String> {
        &self.tracking_keywords
    }

    /// True if `tag` (a fused hashtag body, no spaces) matches any phrase in
    /// any list once the phrase's spaces are removed.
    fn matches_fused(&self, tag: &str) -> bool {
        self.anti_asian
            .iter()
            .chain(self.anti_black.iter())
            .chain(self.tracking_keywords.iter())
            .any(|p| p.replace(' ', "") == tag)
    }

    fn any_match(set: &BTreeSet<String>, text: &str, fused: &str) -> bool {
        set.iter().any(|p| {
            text.contains(p.as_str()) || {
                let unspaced = p.replace(' ', "");
                !unspaced.is_empty() && fused.contains(&unspaced)
            }
        })
    }
}

/// Space-separated lowercase ASCII tokens produced by [`normalize_tweet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedText(pub String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split_ascii_whitespace()
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Maximum-likelihood hashtag segmenter over a word-frequency lexicon.
///
/// Scores a split as the sum of word log-probabilities; characters not covered
/// by any lexicon word cost `min_log_prob - 1` each, so known words always
/// beat residue. Adjacent unknown chunks merge into a single passthrough token.
#[derive(Debug, Clone)]
pub struct Segmenter {
    log_prob: HashMap<String, f64>,
    max_word_len: usize,
    unknown_char_cost: f64,
}

impl Segmenter {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for (w, c) in entries {
            let w = w.trim().to_lowercase();
            // Single letters other than "a"/"i" produce degenerate splits.
            if w.is_empty() || (w.len() == 1 && w != "a" && w != "i") {
                continue;
            }
            *counts.entry(w).or_insert(0) += c;
        }
        let total: u64 = counts.values().sum::<u64>().max(1);
        let mut max_word_len = 1;
        let mut min_lp = 0.0f64;
        let log_prob: HashMap<String, f64> = counts
            .into_iter()
            .map(|(w, c)| {
                let lp = (c.max(1) as f64 / total as f64).ln();
                min_lp = min_lp.min(lp);
                max_word_len = max_word_len.max(w.len());
                (w, lp)
            })
            .collect();
        Segmenter {
            log_prob,
            max_word_len,
            unknown_char_cost: min_lp - 1.0,
        }
    }

    /// Parses "word count" lines.
    pub fn from_lexicon_text(text: &str) -> Self {
        Self::from_entries(text.lines().filter_map(|line| {
            let mut it = line.split_ascii_whitespace();
            let w = it.next()?;
            let c: u64 = it.next()?.parse().ok()?;
            Some((w.to_owned(), c))
        }))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lexicon_text(&text))
    }

    /// Shared instance backed by the bundled lexicon.
    pub fn bundled() -> &'static Segmenter {
        static SEG: OnceLock<Segmenter> = OnceLock::new();
        SEG.get_or_init(|| Segmenter::from_lexicon_text(BUNDLED_LEXICON))
    }

    /// Best segmentation of `tag` into lexicon words; unknown residue stays as-is.
    pub fn segment(&self, tag: &str) -> Vec<String> {
        let chars: Vec<char> = tag.chars().collect();
        let n = chars.len();
        if n == 0 {
            return Vec::new();
        }
        const NEG: f64 = f64::NEG_INFINITY;
        // best[i]: (score, token count) for prefix of length i; fewer tokens break ties.
        let mut best: Vec<(f64, usize)> = vec![(NEG, 0); n + 1];
        let mut back: Vec<(usize, bool)> = vec![(0, false); n + 1];
        best[0] = (0.0, 0);
        for end in 1..=n {
            let lo = end.saturating_sub(self.max_word_len.max(1));
            for start in lo..end {
                if best[start].0 == NEG {
                    continue;
                }
                let word: String = chars[start..end].iter().collect();
                let (score, known) = match self.log_prob.get(&word) {
                    Some(lp) => (*lp, true),
                    None => {
                        // Unknown chunks only extend one char at a time so the
                        // backtrace can merge them into maximal runs.
                        if end - start > 1 {
                            continue;
                        }
                        (self.unknown_char_cost, false)
                    }
                };
                let cand = (best[start].0 + score, best[start].1 + 1);
                if cand.0 > best[end].0 || (cand.0 == best[end].0 && cand.1 < best[end].1) {
                    best[end] = cand;
                    back[end] = (start, known);
                }
            }
        }
        let mut pieces: Vec<(String, bool)> = Vec::new();
        let mut i = n;
        while i > 0 {
            let (start, known) = back[i];
            pieces.push((chars[start..i].iter().collect(), known));
            i = start;
        }
        pieces.reverse();
        // Merge adjacent unknown single-char chunks into one residue token.
        let mut out: Vec<String> = Vec::new();
        let mut run = String::new();
        for (piece, known) in pieces {
            if known {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(piece);
            } else {
                run.push_str(&piece);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
        out
    }
}

/// Segments a hashtag body (no `#`). Hashtags matching a targeted phrase or a
/// tracking keyword are kept whole; everything else goes through the lexicon DP.
pub fn segment_hashtag(tag: &str, lists: &PhraseLists, segmenter: &Segmenter) -> Vec<String> {
    if tag.is_empty() {
        return Vec::new();
    }
    if lists.matches_fused(tag) {
        return vec![tag.to_owned()];
    }
    segmenter.segment(tag)
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:https?://\S+|www\.\S+|\bt\.co/\S+)").expect("static regex")
    })
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").expect("static regex"))
}

fn is_emoji(c: char) -> bool {
    matches!(u32::from(c),
        0x1F300..=0x1F5FF   // symbols & pictographs
        | 0x1F600..=0x1F64F // emoticons
        | 0x1F680..=0x1F6FF // transport & map
        | 0x1F900..=0x1F9FF // supplemental symbols
        | 0x1FA70..=0x1FAFF // extended-A
        | 0x2600..=0x27BF   // misc symbols & dingbats
        | 0x2190..=0x21FF   // arrows (common in kaomoji)
        | 0xFE00..=0xFE0F   // variation selectors
        | 0x200D            // zero-width joiner
        | 0x1F1E6..=0x1F1FF // regional indicators
    )
}

/// Normalizes raw tweet text into space-separated lowercase ASCII tokens.
///
/// Rule order: emoji removal, non-ASCII strip, lowercase, URL replacement,
/// mention replacement, token pass (drop `rt`, hashtag segmentation),
/// consecutive-duplicate collapse, whitespace collapse.
pub fn normalize_tweet(raw: &str, lists: &PhraseLists, segmenter: &Segmenter) -> NormalizedText {
    let no_emoji: String = raw.chars().filter(|c| !is_emoji(*c)).collect();
    let ascii: String = no_emoji.chars().filter(char::is_ascii).collect();
    let lower = ascii.to_lowercase();
    let with_urls = url_regex().replace_all(&lower, " <url> ");
    let with_users = mention_regex().replace_all(&with_urls, " <user> ");

    let mut tokens: Vec<String> = Vec::new();
    for tok in with_users.split_whitespace() {
        if tok == "rt" {
            continue;
        }
        if let Some(body) = tok.strip_prefix('#') {
            let tag: String = body.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
            tokens.extend(segment_hashtag(&tag, lists, segmenter));
        } else {
            let tok = tok.replace('#', "");
            if !tok.is_empty() {
                tokens.push(tok);
            }
        }
    }
    tokens.dedup();
    NormalizedText(tokens.join(" "))
}

/// Assigns a category by substring-matching the targeted phrase lists.
/// Matching runs on lowercased text with collapsed whitespace; both the spaced
/// and unspaced variants of each phrase are tried, since hashtags fuse words.
pub fn categorize_tweet(text: &str, lists: &PhraseLists) -> Category {
    let lower = text.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    let fused = collapsed.replace(' ', "");
    let asian = PhraseLists::any_match(&lists.anti_asian, &collapsed, &fused);
    let black = PhraseLists::any_match(&lists.anti_black, &collapsed, &fused);
    match (asian, black) {
        (true, true) => Category::Interracial,
        (true, false) => Category::AntiAsian,
        (false, true) => Category::AntiBlack,
        (false, false) => Category::Normal,
    }
}

/// Per-month outcome of a boosted-sampling pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonthSummary {
    pub month: String,
    pub quota: usize,
    pub drawn: BTreeMap<Category, usize>,
    /// True when the month's pools ran out before the quota was met.
    pub shortfall: bool,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub tweets: Vec<Tweet>,
    pub months: Vec<MonthSummary>,
}

/// Stratified round-robin sampler: for each month, cycles through the four
/// categories in fixed order, drawing uniformly without replacement, skipping
/// exhausted categories, until the quota is met or every pool is empty.
pub fn boost_sample(
    candidates: impl IntoIterator<Item = Tweet>,
    per_month_quota: usize,
    months: &[String],
    seed: u64,
) -> Result<SampleOutcome> {
    if per_month_quota == 0 {
        return Err(Error::Config("per-month quota must be positive".into()));
    }
    let mut pools: BTreeMap<(String, Category), Vec<Tweet>> = BTreeMap::new();
    for t in candidates {
        let cat = match t.category {
            Some(c) => c,
            None => {
                return Err(Error::Schema(format!(
                    "tweet {} has no category; run categorization first",
                    t.id
                )))
            }
        };
        pools.entry((t.month.clone(), cat)).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shuffle each pool once; drawing then pops from the end.
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }
    let mut tweets = Vec::new();
    let mut summaries = Vec::new();
    for month in months {
        let mut drawn: BTreeMap<Category, usize> =
            Category::ALL.iter().map(|c| (*c, 0)).collect();
        let mut taken = 0;
        'quota: while taken < per_month_quota {
            let mut any = false;
            for cat in Category::ALL {
                if let Some(pool) = pools.get_mut(&(month.clone(), cat)) {
                    if let Some(t) = pool.pop() {
                        tweets.push(t);
                        *drawn.get_mut(&cat).expect("all categories present") += 1;
                        taken += 1;
                        any = true;
                        if taken == per_month_quota {
                            break 'quota;
                        }
                    }
                }
            }
            if !any {
                break;
            }
        }
        summaries.push(MonthSummary {
            month: month.clone(),
            quota: per_month_quota,
            drawn,
            shortfall: taken < per_month_quota,
        });
    }
    Ok(SampleOutcome {
        tweets,
        months: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists() -> PhraseLists {
        PhraseLists::new(
            ["china virus".into(), "chinavirus".into(), "kung flu".into()],
            ["some black phrase".into()],
            ["coronavirus".into()],
        )
        .unwrap()
    }

    #[test]
    fn normalize_mention_url_rt_dupes() {
        let out = normalize_tweet(
            "RT @bob Check https://t.co/x NOW NOW",
            &lists(),
            Segmenter::bundled(),
        );
        assert_eq!(out.as_str(), "<user> check <url> now");
    }

    #[test]
    fn normalize_empty() {
        assert_eq!(
            normalize_tweet("", &lists(), Segmenter::bundled()).as_str(),
            ""
        );
    }

    #[test]
    fn normalize_repeated_tokens() {
        assert_eq!(
            normalize_tweet("a a a", &lists(), Segmenter::bundled()).as_str(),
            "a"
        );
    }

    #[test]
    fn normalize_strips_emoji_and_non_ascii() {
        let out = normalize_tweet("héllo \u{1F600} wörld", &lists(), Segmenter::bundled());
        assert_eq!(out.as_str(), "hllo wrld");
        assert!(out.as_str().chars().all(|c| c.is_ascii()));
    }

    #[test]
    fn normalize_idempotent() {
        let seg = Segmenter::bundled();
        for raw in [
            "RT @bob Check https://t.co/x NOW NOW",
            "a a a #StopAsianHate",
            "#chinavirus is trending @who http://example.com/a?b=c",
            "",
            "plain words only",
        ] {
            let once = normalize_tweet(raw, &lists(), seg);
            let twice = normalize_tweet(once.as_str(), &lists(), seg);
            assert_eq!(once, twice, "not idempotent for {raw:?}");
        }
    }

    #[test]
    fn hashtag_phrase_retained_whole() {
        let out = segment_hashtag("chinavirus", &lists(), Segmenter::bundled());
        assert_eq!(out, vec!["chinavirus"]);
    }

    #[test]
    fn hashtag_segmented_by_dp() {
        let out = segment_hashtag("stopasianhate", &lists(), Segmenter::bundled());
        assert_eq!(out, vec!["stop", "asian", "hate"]);
    }

    #[test]
    fn hashtag_residue_passthrough() {
        let out = segment_hashtag("qzvxj", &lists(), Segmenter::bundled());
        assert_eq!(out, vec!["qzvxj"]);
    }

    #[test]
    fn segmentation_concat_recovers_tag() {
        let seg = Segmenter::bundled();
        for tag in ["stopasianhate", "qzvxj", "washyourhands", "nicetoday"] {
            let joined: String = seg.segment(tag).concat();
            assert_eq!(joined, tag);
        }
    }

    #[test]
    fn categorize_basic() {
        let l = lists();
        assert_eq!(
            categorize_tweet("the chinavirus ruined 2020", &l),
            Category::AntiAsian
        );
        assert_eq!(categorize_tweet("nice weather today", &l), Category::Normal);
        assert_eq!(
            categorize_tweet("china virus and some black phrase", &l),
            Category::Interracial
        );
        // Spaced phrase matches its fused hashtag form.
        assert_eq!(
            categorize_tweet("that kungflu talk", &l),
            Category::AntiAsian
        );
    }

    #[test]
    fn overlapping_target_lists_rejected() {
        let err = PhraseLists::new(
            ["shared".into()],
            ["shared".into()],
            Vec::<String>::new(),
        );
        assert!(err.is_err());
    }

    fn mk_tweet(id: usize, month: &str, cat: Category) -> Tweet {
        Tweet {
            id: format!("t{id}"),
            raw_text: String::new(),
            month: month.into(),
            category: Some(cat),
        }
    }

    #[test]
    fn boost_sample_round_robin_one_each() {
        let months = vec!["2020-03".to_string()];
        let cands: Vec<Tweet> = Category::ALL
            .iter()
            .enumerate()
            .map(|(i, c)| mk_tweet(i, "2020-03", *c))
            .collect();
        let out = boost_sample(cands, 4, &months, 1).unwrap();
        assert_eq!(out.tweets.len(), 4);
        let m = &out.months[0];
        assert!(!m.shortfall);
        assert!(m.drawn.values().all(|&n| n == 1));
    }

    #[test]
    fn boost_sample_shortfall_reporting() {
        let months = vec!["2020-03".to_string()];
        let mut cands = Vec::new();
        let mut id = 0;
        for cat in [Category::AntiAsian, Category::AntiBlack, Category::Normal] {
            for _ in 0..5 {
                cands.push(mk_tweet(id, "2020-03", cat));
                id += 1;
            }
        }
        let out = boost_sample(cands, 8, &months, 1).unwrap();
        assert_eq!(out.tweets.len(), 8);
        let m = &out.months[0];
        assert!(!m.shortfall);
        assert_eq!(m.drawn[&Category::Interracial], 0);

        // Exhaust everything: 15 candidates, quota 20.
        let cands2: Vec<Tweet> = (0..15)
            .map(|i| mk_tweet(i, "2020-03", Category::ALL[i % 3]))
            .collect();
        let out2 = boost_sample(cands2, 20, &months, 1).unwrap();
        assert_eq!(out2.tweets.len(), 15);
        assert!(out2.months[0].shortfall);
    }

    #[test]
    fn boost_sample_deterministic_and_balanced() {
        let months: Vec<String> = vec!["2020-03".into(), "2020-04".into()];
        let cands: Vec<Tweet> = (0..200)
            .map(|i| {
                mk_tweet(
                    i,
                    if i % 2 == 0 { "2020-03" } else { "2020-04" },
                    Category::ALL[(i / 2) % 4],
                )
            })
            .collect();
        let a = boost_sample(cands.clone(), 10, &months, 42).unwrap();
        let b = boost_sample(cands, 10, &months, 42).unwrap();
        let ids = |o: &SampleOutcome| o.tweets.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        for m in &a.months {
            let lo = m.drawn.values().min().unwrap();
            let hi = m.drawn.values().max().unwrap();
            assert!(hi - lo <= 1, "per-category counts differ by more than 1");
        }
    }
}
