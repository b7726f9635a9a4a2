use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Day, DrugCode, PatientId, PrescriptionEvent};

/// Dispensing regime of an inter-arrival interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Renewable,
    NonRenewable,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Renewable, Regime::NonRenewable];

    pub fn from_flag(renewable: bool) -> Regime {
        if renewable {
            Regime::Renewable
        } else {
            Regime::NonRenewable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Renewable => "renewable",
            Regime::NonRenewable => "non_renewable",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "renewable" => Some(Regime::Renewable),
            "non_renewable" => Some(Regime::NonRenewable),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prescription within a trajectory; patient and drug live on the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RxMark {
    pub date: Day,
    pub chronic_label: bool,
    pub renewable: bool,
}

/// Gap between two consecutive prescriptions of one patient-drug pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    /// Whole days, always >= 1.
    pub tau: u32,
    /// Regime of the opening prescription.
    pub regime: Regime,
    /// Chronic label of the opening prescription.
    pub chronic_label: bool,
}

/// Time-ordered prescriptions of one drug for one patient.
///
/// Event dates are strictly increasing; `intervals[i]` spans
/// `events[i]..events[i + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub patient_id: PatientId,
    pub drug_code: DrugCode,
    events: Vec<RxMark>,
    intervals: Vec<Interval>,
}

impl Trajectory {
    /// Builds a trajectory from marks in any order. Same-day marks are merged
    /// with their flags OR-ed together.
    pub fn from_marks(patient_id: PatientId, drug_code: DrugCode, mut marks: Vec<RxMark>) -> Self {
        marks.sort_unstable_by_key(|m| m.date);
        let mut events: Vec<RxMark> = Vec::with_capacity(marks.len());
        for m in marks {
            match events.last_mut() {
                Some(last) if last.date == m.date => {
                    last.chronic_label |= m.chronic_label;
                    last.renewable |= m.renewable;
                }
                _ => events.push(m),
            }
        }
        let intervals = events
            .windows(2)
            .map(|w| Interval {
                tau: w[1].date.days_since(w[0].date) as u32,
                regime: Regime::from_flag(w[0].renewable),
                chronic_label: w[0].chronic_label,
            })
            .collect();
        Trajectory {
            patient_id,
            drug_code,
            events,
            intervals,
        }
    }

    pub fn events(&self) -> &[RxMark] {
        &self.events
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_date(&self) -> Option<Day> {
        self.events.first().map(|e| e.date)
    }

    pub fn last_date(&self) -> Option<Day> {
        self.events.last().map(|e| e.date)
    }

    pub fn taus(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| f64::from(i.tau)).collect()
    }

    /// Rebuilds the prescription records.
    pub fn prescription_events(&self) -> impl Iterator<Item = PrescriptionEvent> + '_ {
        self.events.iter().map(move |m| PrescriptionEvent {
            patient_id: self.patient_id.clone(),
            drug_code: self.drug_code.clone(),
            date: m.date,
            chronic_label: m.chronic_label,
            renewable: m.renewable,
        })
    }

    /// Same trajectory with every date moved by `days`.
    pub fn shifted(&self, days: i32) -> Trajectory {
        let events = self
            .events
            .iter()
            .map(|m| RxMark {
                date: m.date.offset(days),
                ..*m
            })
            .collect();
        Trajectory::from_marks(self.patient_id.clone(), self.drug_code.clone(), events)
    }
}

fn pair_order(a: &PrescriptionEvent, b: &PrescriptionEvent) -> Ordering {
    a.patient_id
        .cmp(&b.patient_id)
        .then_with(|| a.drug_code.cmp(&b.drug_code))
}

/// Groups events into one trajectory per (patient, drug), ordered by
/// `(patient_id, drug_code)`.
pub fn build_trajectories(events: &[PrescriptionEvent]) -> Vec<Trajectory> {
    let mut order: Vec<&PrescriptionEvent> = events.iter().collect();
    order.par_sort_unstable_by(|a, b| pair_order(a, b).then_with(|| a.date.cmp(&b.date)));

    let mut out = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pair_order(order[start], order[end]) == Ordering::Equal {
            end += 1;
        }
        let marks = order[start..end]
            .iter()
            .map(|e| RxMark {
                date: e.date,
                chronic_label: e.chronic_label,
                renewable: e.renewable,
            })
            .collect();
        out.push(Trajectory::from_marks(
            order[start].patient_id.clone(),
            order[start].drug_code.clone(),
            marks,
        ));
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(p: &str, d: &str, day: i32, chronic: bool, renewable: bool) -> PrescriptionEvent {
        PrescriptionEvent {
            patient_id: p.into(),
            drug_code: d.into(),
            date: Day(day),
            chronic_label: chronic,
            renewable,
        }
    }

    #[test]
    fn same_day_events_collapse() {
        let t = build_trajectories(&[
            ev("p", "A", 10, false, false),
            ev("p", "A", 10, true, false),
            ev("p", "A", 40, false, false),
        ]);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 2);
        assert!(t[0].events()[0].chronic_label);
        assert_eq!(t[0].intervals().len(), 1);
        assert_eq!(t[0].intervals()[0].tau, 30);
        assert!(t[0].intervals()[0].chronic_label);
    }

    #[test]
    fn equal_spacing() {
        let t = build_trajectories(&[
            ev("p", "A", 200, false, false),
            ev("p", "A", 0, false, false),
            ev("p", "A", 100, false, false),
        ]);
        let taus: Vec<u32> = t[0].intervals().iter().map(|i| i.tau).collect();
        assert_eq!(taus, vec![100, 100]);
    }

    #[test]
    fn interval_takes_regime_of_opening_event() {
        let t = build_trajectories(&[ev("p", "A", 0, false, true), ev("p", "A", 350, true, false)]);
        assert_eq!(
            t[0].intervals(),
            &[Interval {
                tau: 350,
                regime: Regime::Renewable,
                chronic_label: false
            }]
        );
    }

    #[test]
    fn groups_by_patient_and_drug_in_order() {
        let t = build_trajectories(&[
            ev("p2", "A", 0, false, false),
            ev("p1", "B", 5, false, false),
            ev("p1", "A", 7, false, false),
            ev("p1", "B", 1, false, false),
        ]);
        let keys: Vec<(&str, &str, usize)> = t
            .iter()
            .map(|t| (t.patient_id.as_str(), t.drug_code.as_str(), t.len()))
            .collect();
        assert_eq!(keys, vec![("p1", "A", 1), ("p1", "B", 2), ("p2", "A", 1)]);
        assert!(build_trajectories(&[]).is_empty());
    }

    fn arb_events() -> impl Strategy<Value = Vec<PrescriptionEvent>> {
        prop::collection::vec(
            (0u8..4, 0u8..3, 0i32..400, any::<bool>(), any::<bool>()),
            0..60,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(p, d, day, c, r)| ev(&format!("p{p}"), &format!("D{d}"), day, c, r))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn interval_sum_spans_trajectory(events in arb_events()) {
            for t in build_trajectories(&events) {
                prop_assert_eq!(t.intervals().len() + 1, t.len());
                let total: i64 = t.intervals().iter().map(|i| i64::from(i.tau)).sum();
                let span = t.last_date().unwrap().days_since(t.first_date().unwrap());
                prop_assert_eq!(total, i64::from(span));
                prop_assert!(t.intervals().iter().all(|i| i.tau >= 1));
                prop_assert!(t.events().windows(2).all(|w| w[0].date < w[1].date));
            }
        }

        #[test]
        fn permutation_invariant(events in arb_events(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = events.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(build_trajectories(&events), build_trajectories(&shuffled));
        }

        #[test]
        fn collapsing_is_idempotent(events in arb_events()) {
            let built = build_trajectories(&events);
            let flat: Vec<PrescriptionEvent> =
                built.iter().flat_map(|t| t.prescription_events()).collect();
            prop_assert_eq!(build_trajectories(&flat), built);
        }
    }
}
