use super::ScoreRecord;
use crate::error::{Error, Result};
use crate::features::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    /// Accept-as-bonafide threshold (`score >= threshold`); `+inf` rejects all.
    pub threshold: f64,
}

/// Exact threshold sweep. FAR(θ) is the fraction of spoofs scoring `>= θ`,
/// FRR(θ) the fraction of bonafides scoring `< θ`. Candidates are every
/// distinct score plus `+inf`; the EER is `(FAR + FRR) / 2` at the candidate
/// minimizing `|FAR - FRR|`, ties going to the smaller threshold.
pub fn eer_from_scores(bonafide: &[f64], spoof: &[f64]) -> Result<Eer> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(Error::Contract(format!(
            "EER needs both classes, got {} bonafide and {} spoof",
            bonafide.len(),
            spoof.len()
        )));
    }
    if bonafide.iter().chain(spoof).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut all: Vec<(f64, bool)> = bonafide
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nb, ns) = (bonafide.len() as f64, spoof.len() as f64);
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut best: Option<(f64, Eer)> = None;
    let mut consider = |threshold: f64, far: f64, frr: f64| {
        let gap = (far - frr).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((
                gap,
                Eer {
                    eer: (far + frr) / 2.0,
                    threshold,
                },
            ));
        }
    };
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        let far = (spoof.len() - spoof_below) as f64 / ns;
        let frr = bona_below as f64 / nb;
        consider(threshold, far, frr);
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                bona_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
    }
    consider(f64::INFINITY, 0.0 / ns, bonafide.len() as f64 / nb);
    Ok(best.expect("at least one candidate").1)
}

pub fn compute_eer(records: &[ScoreRecord]) -> Result<Eer> {
    let bona: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Bonafide)
        .map(|r| r.score)
        .collect();
    let spoof: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Spoof)
        .map(|r| r.score)
        .collect();
    eer_from_scores(&bona, &spoof)
}
