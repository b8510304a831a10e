//! Episode summaries and detection scoring against ground truth.
//!
//! An episode detects an attack when their bin ranges overlap and the
//! episode carries the attack's expected label.

use std::collections::BTreeMap;
use std::fmt;

use crate::classify::{AnomalyEvent, Label};
use crate::sim::{AttackKind, GroundTruth};

pub fn expected_label(kind: AttackKind) -> Label {
    match kind {
        AttackKind::UdpFlood | AttackKind::IcmpFlood | AttackKind::DistributedFlood => {
            Label::Flooding
        }
        AttackKind::TcpSyn => Label::TcpSyn,
        AttackKind::Portscan => Label::Portscan,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindRow {
    pub kind: AttackKind,
    pub inserted: usize,
    pub detected: usize,
}

impl KindRow {
    pub fn rate(&self) -> f64 {
        if self.inserted == 0 {
            1.0
        } else {
            self.detected as f64 / self.inserted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scoring {
    pub rows: Vec<KindRow>,
    /// Labeled episodes that overlap no ground-truth window.
    pub false_positives: usize,
    /// Of those, the ones labeled `Other`.
    pub other_false_positives: usize,
}

impl Scoring {
    pub fn row(&self, kind: AttackKind) -> KindRow {
        self.rows
            .iter()
            .copied()
            .find(|r| r.kind == kind)
            .unwrap_or(KindRow {
                kind,
                inserted: 0,
                detected: 0,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub episodes: usize,
    /// Episodes carrying each label; an episode with two labels counts twice.
    pub by_label: BTreeMap<Label, usize>,
    /// Episodes with advisories but no label.
    pub advisory_only: usize,
    pub scoring: Option<Scoring>,
}

pub fn score(episodes: &[AnomalyEvent], truth: &GroundTruth) -> Scoring {
    let rows = AttackKind::ALL
        .iter()
        .map(|&kind| {
            let label = expected_label(kind);
            let windows: Vec<_> = truth.iter().filter(|t| t.kind == kind).collect();
            let detected = windows
                .iter()
                .filter(|t| {
                    episodes
                        .iter()
                        .any(|e| e.labels.contains(&label) && e.overlaps(t.start_bin, t.end_bin))
                })
                .count();
            KindRow {
                kind,
                inserted: windows.len(),
                detected,
            }
        })
        .collect();
    let spurious: Vec<&AnomalyEvent> = episodes
        .iter()
        .filter(|e| !e.labels.is_empty())
        .filter(|e| !truth.iter().any(|t| e.overlaps(t.start_bin, t.end_bin)))
        .collect();
    Scoring {
        rows,
        false_positives: spurious.len(),
        other_false_positives: spurious
            .iter()
            .filter(|e| e.labels.contains(&Label::Other))
            .count(),
    }
}

pub fn summarize(episodes: &[AnomalyEvent], truth: Option<&GroundTruth>) -> Report {
    let mut by_label: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
    for e in episodes {
        for l in &e.labels {
            *by_label.entry(*l).or_default() += 1;
        }
    }
    Report {
        episodes: episodes.len(),
        by_label,
        advisory_only: episodes.iter().filter(|e| e.labels.is_empty()).count(),
        scoring: truth.map(|t| score(episodes, t)),
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "episodes\t{}", self.episodes)?;
        for (label, n) in &self.by_label {
            writeln!(f, "{}\t{}", label.as_str(), n)?;
        }
        writeln!(f, "advisory_only\t{}", self.advisory_only)?;
        if let Some(s) = &self.scoring {
            writeln!(f)?;
            writeln!(f, "{:<20}{:>9} / detected", "attack", "inserted")?;
            for r in &s.rows {
                writeln!(f, "{:<20}{:>9} / {}", r.kind.as_str(), r.inserted, r.detected)?;
            }
            writeln!(f, "{:<20}{:>9} / {}", "other", 0, s.other_false_positives)?;
            writeln!(f)?;
            writeln!(f, "false_positives\t{}", s.false_positives)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::FlagVector;
    use crate::forecast::Flag::*;
    use crate::sim::GroundTruthEntry;

    fn episode(first: i64, last: i64, flags: [crate::forecast::Flag; 4]) -> AnomalyEvent {
        let mut e = AnomalyEvent::from_flags(FlagVector::new(first, flags)).unwrap();
        e.last_bin = last;
        e
    }

    fn gt(kind: AttackKind, start: i64, end: i64) -> GroundTruthEntry {
        GroundTruthEntry {
            kind,
            start_bin: start,
            end_bin: end,
        }
    }

    #[test]
    fn empty_log_is_all_zero() {
        let r = summarize(&[], None);
        assert_eq!(r.episodes, 0);
        assert!(r.by_label.values().all(|n| *n == 0));
        assert!(r.scoring.is_none());
        assert!(r.to_string().contains("Flooding\t0"));
    }

    #[test]
    fn overlap_and_label_both_required() {
        let truth = vec![
            gt(AttackKind::Portscan, 10, 11),
            gt(AttackKind::UdpFlood, 20, 20),
            gt(AttackKind::TcpSyn, 30, 30),
        ];
        let eps = vec![
            episode(11, 12, [Normal, Normal, Normal, High]),
            episode(20, 20, [High, Normal, Normal, Normal]),
            episode(29, 29, [Normal, Normal, High, Normal]),
        ];
        let s = score(&eps, &truth);
        assert_eq!(s.row(AttackKind::Portscan).detected, 1);
        // Bytes alone is Other, not Flooding.
        assert_eq!(s.row(AttackKind::UdpFlood).detected, 0);
        assert_eq!(s.row(AttackKind::TcpSyn).detected, 0);
        assert_eq!(s.false_positives, 1);
        assert_eq!(s.other_false_positives, 0);
    }

    #[test]
    fn spurious_episode_is_a_false_positive() {
        let truth = vec![gt(AttackKind::Portscan, 10, 10)];
        let eps = vec![
            episode(10, 10, [Normal, Normal, Normal, High]),
            episode(50, 50, [High, Normal, Normal, Normal]),
            episode(60, 60, [Low, Normal, Normal, Normal]),
        ];
        let r = summarize(&eps, Some(&truth));
        let s = r.scoring.unwrap();
        assert_eq!(s.false_positives, 1);
        assert_eq!(s.other_false_positives, 1);
        assert_eq!(r.advisory_only, 1);
    }

    #[test]
    fn all_floods_expect_flooding() {
        for k in [AttackKind::UdpFlood, AttackKind::IcmpFlood, AttackKind::DistributedFlood] {
            assert_eq!(expected_label(k), Label::Flooding);
        }
    }

    #[test]
    fn table_shape() {
        let truth: Vec<_> = (0..5).map(|i| gt(AttackKind::Portscan, 10 * i, 10 * i)).collect();
        let eps: Vec<_> = (0..5).map(|i| episode(10 * i, 10 * i, [Normal, Normal, Normal, High])).collect();
        let text = summarize(&eps, Some(&truth)).to_string();
        assert!(text.lines().any(|l| l.starts_with("portscan") && l.ends_with("5 / 5")), "{text}");
    }
}
