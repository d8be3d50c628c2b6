//! Rule-based clinical label extraction from report text.
//!
//! For every finding label a keyword mention is negative when a negation cue
//! ends within the four tokens before it, uncertain when an uncertainty cue
//! appears in the same sentence, and positive otherwise. Uncertain mentions
//! count as positive. "No Finding" is reported exactly when no finding is.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NO_FINDING: &str = "No Finding";
pub const NEGATION_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    #[serde(default)]
    pub keywords: Vec<String>,
}

/// Label names, keywords and cue phrases. Serialized as the lexicon file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLexicon {
    pub labels: Vec<LabelSpec>,
    pub negation_cues: Vec<String>,
    pub uncertainty_cues: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub label: String,
    pub polarity: Polarity,
}

fn strs(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for LabelLexicon {
    /// Thirteen CheXpert-style findings plus "No Finding".
    fn default() -> Self {
        let label = |name: &str, keywords: &[&str]| LabelSpec {
            name: name.to_string(),
            keywords: strs(keywords),
        };
        Self {
            labels: vec![
                label("Atelectasis", &["atelectasis", "atelectatic"]),
                label("Cardiomegaly", &["cardiomegaly", "enlarged heart", "heart is enlarged"]),
                label("Consolidation", &["consolidation"]),
                label("Edema", &["edema", "vascular congestion"]),
                label(
                    "Enlarged Cardiomediastinum",
                    &["enlarged cardiomediastinum", "widened mediastinum"],
                ),
                label("Fracture", &["fracture", "fractures"]),
                label("Lung Lesion", &["lung lesion", "lesion", "mass", "nodule"]),
                label("Lung Opacity", &["lung opacity", "opacity", "opacities", "infiltrate"]),
                label("Pleural Effusion", &["pleural effusion", "effusion", "effusions"]),
                label("Pleural Other", &["pleural thickening", "fibrothorax"]),
                label("Pneumonia", &["pneumonia"]),
                label("Pneumothorax", &["pneumothorax"]),
                label(
                    "Support Devices",
                    &["pacemaker", "catheter", "endotracheal tube", "picc"],
                ),
                label(NO_FINDING, &[]),
            ],
            negation_cues: strs(&["no", "not", "without", "negative for", "free of", "absence of"]),
            uncertainty_cues: strs(&["possible", "possibly", "may", "cannot exclude", "suspicious"]),
        }
    }
}

impl LabelLexicon {
    pub fn validate(&self) -> Result<()> {
        let no_finding = self.labels.iter().filter(|l| l.name == NO_FINDING).count();
        if no_finding != 1 {
            return Err(Error::InvalidParameter(format!(
                "lexicon must contain exactly one `{NO_FINDING}` label, found {no_finding}"
            )));
        }
        if let Some(l) = self
            .labels
            .iter()
            .find(|l| l.name != NO_FINDING && l.keywords.iter().all(|k| tokenize(k).is_empty()))
        {
            return Err(Error::InvalidParameter(format!("label `{}` has no keywords", l.name)));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lexicon: Self = serde_json::from_str(&text)?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn findings(&self) -> impl Iterator<Item = &LabelSpec> {
        self.labels.iter().filter(|l| l.name != NO_FINDING)
    }

    /// Compiles keywords and cues to token sequences.
    pub fn compile(&self) -> Result<CompiledLexicon> {
        self.validate()?;
        let phrases = |items: &[String]| -> Vec<Vec<String>> {
            items.iter().map(|s| tokenize(s)).filter(|t| !t.is_empty()).collect()
        };
        Ok(CompiledLexicon {
            findings: self
                .findings()
                .map(|l| (l.name.clone(), phrases(&l.keywords)))
                .collect(),
            order: self.labels.iter().map(|l| l.name.clone()).collect(),
            negation: phrases(&self.negation_cues),
            uncertainty: phrases(&self.uncertainty_cues),
        })
    }
}

/// A lexicon with every phrase pre-tokenized.
#[derive(Debug, Clone)]
pub struct CompiledLexicon {
    findings: Vec<(String, Vec<Vec<String>>)>,
    order: Vec<String>,
    negation: Vec<Vec<String>>,
    uncertainty: Vec<Vec<String>>,
}

/// Lowercased alphanumeric runs.
fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn occurs_at(tokens: &[String], at: usize, phrase: &[String]) -> bool {
    at + phrase.len() <= tokens.len() && tokens[at..at + phrase.len()] == *phrase
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    (0..tokens.len()).any(|i| occurs_at(tokens, i, phrase))
}

fn merge(current: Polarity, mention: Polarity) -> Polarity {
    use Polarity::*;
    let rank = |p: Polarity| match p {
        Absent => 0,
        Negative => 1,
        Uncertain => 2,
        Positive => 3,
    };
    if rank(mention) > rank(current) {
        mention
    } else {
        current
    }
}

impl CompiledLexicon {
    fn mention_polarity(&self, sentence: &[String], at: usize, uncertain: bool) -> Polarity {
        let start = at.saturating_sub(NEGATION_WINDOW);
        let window = &sentence[start..at];
        if self.negation.iter().any(|cue| contains_phrase(window, cue)) {
            Polarity::Negative
        } else if uncertain {
            Polarity::Uncertain
        } else {
            Polarity::Positive
        }
    }

    /// One decision per lexicon label, in lexicon order.
    pub fn decisions(&self, text: &str) -> Vec<LabelDecision> {
        let sentences: Vec<Vec<String>> = text.split('.').map(tokenize).filter(|s| !s.is_empty()).collect();
        let mut polarities = vec![Polarity::Absent; self.findings.len()];
        for sentence in &sentences {
            let uncertain = self.uncertainty.iter().any(|cue| contains_phrase(sentence, cue));
            for (li, (_, keywords)) in self.findings.iter().enumerate() {
                for keyword in keywords {
                    for at in 0..sentence.len() {
                        if occurs_at(sentence, at, keyword) {
                            let p = self.mention_polarity(sentence, at, uncertain);
                            polarities[li] = merge(polarities[li], p);
                        }
                    }
                }
            }
        }
        let any_finding = polarities
            .iter()
            .any(|p| matches!(p, Polarity::Positive | Polarity::Uncertain));
        self.order
            .iter()
            .map(|name| {
                let polarity = if name == NO_FINDING {
                    if any_finding {
                        Polarity::Absent
                    } else {
                        Polarity::Positive
                    }
                } else {
                    let li = self
                        .findings
                        .iter()
                        .position(|(n, _)| n == name)
                        .expect("finding label");
                    polarities[li]
                };
                LabelDecision {
                    label: name.clone(),
                    polarity,
                }
            })
            .collect()
    }

    /// Labels judged positive or uncertain.
    pub fn extract(&self, text: &str) -> BTreeSet<String> {
        self.decisions(text)
            .into_iter()
            .filter(|d| matches!(d.polarity, Polarity::Positive | Polarity::Uncertain))
            .map(|d| d.label)
            .collect()
    }

    pub fn is_normal(&self, text: &str) -> bool {
        let labels = self.extract(text);
        labels.len() == 1 && labels.contains(NO_FINDING)
    }
}

pub fn extract_labels(text: &str, lexicon: &LabelLexicon) -> Result<BTreeSet<String>> {
    Ok(lexicon.compile()?.extract(text))
}

pub fn is_normal(text: &str, lexicon: &LabelLexicon) -> Result<bool> {
    Ok(lexicon.compile()?.is_normal(text))
}
