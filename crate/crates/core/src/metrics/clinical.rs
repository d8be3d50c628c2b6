use crate::error::{Error, Result};
use crate::labeler::LabelLexicon;

/// Clinical precision and recall of system texts against gold texts.
///
/// Per pair, CP is the share of the system labels found in the gold labels
/// and CR the share of the gold labels found in the system labels (0 for an
/// empty denominator). Both are averaged over pairs.
pub fn clinical_pr(gold_texts: &[String], system_texts: &[String], lexicon: &LabelLexicon) -> Result<(f64, f64)> {
    if gold_texts.len() != system_texts.len() {
        return Err(Error::dim("clinical_pr inputs", gold_texts.len(), system_texts.len()));
    }
    if gold_texts.is_empty() {
        return Ok((0.0, 0.0));
    }
    let lexicon = lexicon.compile()?;
    let (mut cp, mut cr) = (0.0, 0.0);
    for (gold, system) in gold_texts.iter().zip(system_texts) {
        let g = lexicon.extract(gold);
        let s = lexicon.extract(system);
        let shared = g.intersection(&s).count() as f64;
        if !s.is_empty() {
            cp += shared / s.len() as f64;
        }
        if !g.is_empty() {
            cr += shared / g.len() as f64;
        }
    }
    let n = gold_texts.len() as f64;
    Ok((cp / n, cr / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_overlap() {
        let gold = vec!["There is pneumonia. Mild edema.".to_string()];
        let system = vec!["Possible pneumonia.".to_string()];
        let (cp, cr) = clinical_pr(&gold, &system, &LabelLexicon::default()).unwrap();
        assert_eq!((cp, cr), (1.0, 0.5));
    }

    #[test]
    fn identical_texts_have_equal_cp_cr() {
        let texts = vec!["Cardiomegaly is seen.".to_string(), "The lungs are clear.".to_string()];
        let (cp, cr) = clinical_pr(&texts, &texts, &LabelLexicon::default()).unwrap();
        assert_eq!(cp, cr);
        assert_eq!(cp, 1.0);
        assert!(clinical_pr(&texts, &texts[..1], &LabelLexicon::default()).is_err());
    }
}
