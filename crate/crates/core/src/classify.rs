//! Turns the four per-metric flags of a bin into anomaly labels.
//!
//! | anomaly  | bytes | packets | dsocket | dport |
//! |----------|-------|---------|---------|-------|
//! | Flooding | HIGH  | HIGH    | -       | -     |
//! | TcpSyn   | -     | -       | HIGH    | -     |
//! | Portscan | -     | -       | -       | HIGH  |
//!
//! Rules fire independently, so simultaneous attacks yield several labels.
//! A HIGH flag that fires no rule is labelled `Other`; any LOW flag adds the
//! `LowTraffic` advisory.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::forecast::Flag;
use crate::metrics::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Flooding,
    TcpSyn,
    Portscan,
    Other,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Flooding, Label::TcpSyn, Label::Portscan, Label::Other];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Flooding => "Flooding",
            Label::TcpSyn => "TcpSyn",
            Label::Portscan => "Portscan",
            Label::Other => "Other",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Advisory {
    /// Some metric fell below its band; usually an outage upstream.
    LowTraffic,
}

impl Advisory {
    pub fn as_str(&self) -> &'static str {
        match self {
            Advisory::LowTraffic => "LowTraffic",
        }
    }
}

impl fmt::Display for Advisory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Advisory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LowTraffic" => Ok(Advisory::LowTraffic),
            other => Err(format!("unknown advisory `{other}`")),
        }
    }
}

/// Flags of the four metrics for one bin, in metric order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FlagVector {
    pub bin: i64,
    pub total_bytes: Flag,
    pub total_packets: Flag,
    pub dsocket: Flag,
    pub dport: Flag,
}

impl FlagVector {
    pub fn new(bin: i64, flags: [Flag; 4]) -> Self {
        FlagVector {
            bin,
            total_bytes: flags[0],
            total_packets: flags[1],
            dsocket: flags[2],
            dport: flags[3],
        }
    }

    pub fn flags(&self) -> [Flag; 4] {
        [self.total_bytes, self.total_packets, self.dsocket, self.dport]
    }

    pub fn get(&self, metric: Metric) -> Flag {
        self.flags()[metric.index()]
    }

    /// Flag-wise maximum (LOW < NORMAL < HIGH).
    pub fn join(&self, other: &FlagVector) -> FlagVector {
        let a = self.flags();
        let b = other.flags();
        FlagVector::new(self.bin, std::array::from_fn(|i| a[i].max(b[i])))
    }

    /// Compact form used in logs, e.g. `HIGH,HIGH,NORMAL,NORMAL`.
    pub fn to_field(&self) -> String {
        self.flags().map(|f| f.as_str()).join(",")
    }

    pub fn parse_field(bin: i64, s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 4 {
            return Err(format!("expected 4 flags, found {}", parts.len()));
        }
        let mut flags = [Flag::Normal; 4];
        for (slot, part) in flags.iter_mut().zip(parts) {
            *slot = part.parse()?;
        }
        Ok(FlagVector::new(bin, flags))
    }
}

pub type LabelSet = BTreeSet<Label>;
pub type AdvisorySet = BTreeSet<Advisory>;

/// Applies the identification rules to one flag vector. Both sets are empty
/// for an all-NORMAL vector.
pub fn identify(flags: &FlagVector) -> (LabelSet, AdvisorySet) {
    let mut labels = LabelSet::new();
    if flags.total_bytes == Flag::High && flags.total_packets == Flag::High {
        labels.insert(Label::Flooding);
    }
    if flags.dsocket == Flag::High {
        labels.insert(Label::TcpSyn);
    }
    if flags.dport == Flag::High {
        labels.insert(Label::Portscan);
    }
    let flags_arr = flags.flags();
    if labels.is_empty() && flags_arr.contains(&Flag::High) {
        labels.insert(Label::Other);
    }
    let mut advisories = AdvisorySet::new();
    if flags_arr.contains(&Flag::Low) {
        advisories.insert(Advisory::LowTraffic);
    }
    (labels, advisories)
}

/// A classified anomaly covering one or more consecutive bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyEvent {
    pub first_bin: i64,
    pub last_bin: i64,
    pub labels: LabelSet,
    pub advisories: AdvisorySet,
    /// Flags of the first bin.
    pub flags: FlagVector,
}

impl AnomalyEvent {
    /// The event for a single bin, or `None` when nothing is raised.
    pub fn from_flags(flags: FlagVector) -> Option<Self> {
        let (labels, advisories) = identify(&flags);
        if labels.is_empty() && advisories.is_empty() {
            return None;
        }
        Some(AnomalyEvent {
            first_bin: flags.bin,
            last_bin: flags.bin,
            labels,
            advisories,
            flags,
        })
    }

    pub fn overlaps(&self, first: i64, last: i64) -> bool {
        self.first_bin <= last && first <= self.last_bin
    }
}

/// Incremental episode builder: feeds per-bin events in bin order and emits
/// an episode once it can no longer grow.
#[derive(Debug, Clone)]
pub struct EpisodeMerger {
    max_gap: i64,
    open: Option<AnomalyEvent>,
}

impl EpisodeMerger {
    pub fn new(max_gap_bins: u32) -> Self {
        EpisodeMerger {
            max_gap: max_gap_bins as i64,
            open: None,
        }
    }

    /// Adds the next event; returns the episode it closed, if any.
    pub fn push(&mut self, event: AnomalyEvent) -> Option<AnomalyEvent> {
        match self.open.as_mut() {
            Some(ep)
                if ep.labels == event.labels && event.first_bin - ep.last_bin <= self.max_gap =>
            {
                ep.last_bin = ep.last_bin.max(event.last_bin);
                ep.advisories.extend(event.advisories);
                None
            }
            _ => self.open.replace(event),
        }
    }

    /// Closes the open episode if `bin` is already too far ahead for it to
    /// continue.
    pub fn advance_to(&mut self, bin: i64) -> Option<AnomalyEvent> {
        match &self.open {
            Some(ep) if bin - ep.last_bin > self.max_gap => self.open.take(),
            _ => None,
        }
    }

    pub fn finish(&mut self) -> Option<AnomalyEvent> {
        self.open.take()
    }
}

/// Merges bin-sorted events into episodes: consecutive events with the same
/// label set whose bin gap is at most `max_gap_bins` become one episode.
pub fn merge_events(events: &[AnomalyEvent], max_gap_bins: u32) -> Vec<AnomalyEvent> {
    let mut merger = EpisodeMerger::new(max_gap_bins);
    let mut out: Vec<AnomalyEvent> = events
        .iter()
        .cloned()
        .filter_map(|e| merger.push(e))
        .collect();
    out.extend(merger.finish());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Flag::{High as H, Low as L, Normal as N};

    fn fv(flags: [Flag; 4]) -> FlagVector {
        FlagVector::new(0, flags)
    }

    fn labels(flags: [Flag; 4]) -> Vec<Label> {
        identify(&fv(flags)).0.into_iter().collect()
    }

    fn all_vectors() -> Vec<[Flag; 4]> {
        let vals = [L, N, H];
        let mut out = Vec::new();
        for a in vals {
            for b in vals {
                for c in vals {
                    for d in vals {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identification_table_rows() {
        assert_eq!(labels([H, H, N, N]), [Label::Flooding]);
        assert_eq!(labels([N, N, H, N]), [Label::TcpSyn]);
        assert_eq!(labels([N, N, N, H]), [Label::Portscan]);
        assert_eq!(identify(&fv([N, N, N, N])), (LabelSet::new(), AdvisorySet::new()));
        assert!(AnomalyEvent::from_flags(fv([N, N, N, N])).is_none());
    }

    #[test]
    fn simultaneous_rules() {
        assert_eq!(labels([N, N, H, H]), [Label::TcpSyn, Label::Portscan]);
        assert_eq!(labels([H, H, H, N]), [Label::Flooding, Label::TcpSyn]);
        assert_eq!(labels([H, H, H, H]), [Label::Flooding, Label::TcpSyn, Label::Portscan]);
    }

    #[test]
    fn unmatched_high_is_other() {
        assert_eq!(labels([H, N, N, N]), [Label::Other]);
        assert_eq!(labels([N, H, N, N]), [Label::Other]);
        assert_eq!(labels([H, L, N, N]), [Label::Other]);
        // A fired rule suppresses Other.
        assert_eq!(labels([N, H, H, N]), [Label::TcpSyn]);
    }

    #[test]
    fn low_flags_only_advise() {
        let (l, a) = identify(&fv([L, N, N, N]));
        assert!(l.is_empty());
        assert_eq!(a.into_iter().collect::<Vec<_>>(), [Advisory::LowTraffic]);
        let ev = AnomalyEvent::from_flags(fv([N, N, N, L])).unwrap();
        assert!(ev.labels.is_empty());
    }

    #[test]
    fn every_vector_is_classified() {
        let vectors = all_vectors();
        assert_eq!(vectors.len(), 81);
        for v in vectors {
            let (l, a) = identify(&fv(v));
            if v.contains(&H) {
                assert!(!l.is_empty(), "{v:?}");
            } else {
                assert!(l.is_empty(), "{v:?}");
            }
            assert_eq!(a.is_empty(), !v.contains(&L), "{v:?}");
        }
    }

    #[test]
    fn join_preserves_disjoint_rules() {
        for v1 in all_vectors() {
            for v2 in all_vectors() {
                let disjoint = (0..4).all(|i| !(v1[i] == H && v2[i] == H));
                let l1 = identify(&fv(v1)).0;
                let l2 = identify(&fv(v2)).0;
                let fires = |l: &LabelSet| !l.is_empty() && !l.contains(&Label::Other);
                if !disjoint || !fires(&l1) || !fires(&l2) {
                    continue;
                }
                let joined = identify(&fv(v1).join(&fv(v2))).0;
                assert!(l1.union(&l2).all(|l| joined.contains(l)), "{v1:?} {v2:?}");
            }
        }
    }

    fn event(bin: i64, flags: [Flag; 4]) -> AnomalyEvent {
        AnomalyEvent::from_flags(FlagVector::new(bin, flags)).unwrap()
    }

    #[test]
    fn merging_contiguous_bins() {
        let evs = [event(5, [H, H, N, N]), event(6, [H, H, N, N]), event(7, [H, H, N, N])];
        let eps = merge_events(&evs, 1);
        assert_eq!(eps.len(), 1);
        assert_eq!((eps[0].first_bin, eps[0].last_bin), (5, 7));
        assert_eq!(eps[0].flags.bin, 5);
    }

    #[test]
    fn merging_respects_gap_and_labels() {
        let far = [event(5, [H, H, N, N]), event(20, [H, H, N, N])];
        assert_eq!(merge_events(&far, 1).len(), 2);
        let mixed = [event(5, [H, H, N, N]), event(6, [N, N, H, N])];
        assert_eq!(merge_events(&mixed, 1).len(), 2);
        assert!(merge_events(&[], 1).is_empty());
    }

    #[test]
    fn incremental_merger_matches_batch() {
        let evs = [
            event(1, [N, N, H, N]),
            event(2, [N, N, H, L]),
            event(4, [N, N, H, N]),
            event(9, [L, N, N, N]),
        ];
        let mut m = EpisodeMerger::new(1);
        let mut streamed = Vec::new();
        for e in evs.iter().cloned() {
            streamed.extend(m.advance_to(e.first_bin));
            streamed.extend(m.push(e));
        }
        streamed.extend(m.finish());
        let batch = merge_events(&evs, 1);
        assert_eq!(streamed, batch);
        assert_eq!(batch.len(), 3);
        assert!(batch[0].advisories.contains(&Advisory::LowTraffic));
    }

    #[test]
    fn flag_field_round_trip() {
        let v = FlagVector::new(3, [H, N, L, N]);
        assert_eq!(v.to_field(), "HIGH,NORMAL,LOW,NORMAL");
        assert_eq!(FlagVector::parse_field(3, &v.to_field()).unwrap(), v);
        assert!(FlagVector::parse_field(3, "HIGH,LOW").is_err());
    }
}
