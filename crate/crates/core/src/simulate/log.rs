use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    /// Externally driven immigrants (times `S_k`, marks from `H`).
    External,
    /// The Hawkes population itself (times `T_n`, marks from `G`).
    Hawkes,
}

impl Population {
    /// CSV tag: 1 for external, 2 for Hawkes.
    pub fn tag(self) -> u8 {
        match self {
            Population::External => 1,
            Population::Hawkes => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub mark: f64,
    /// Depth in the immigration-birth tree (0 = immigrant), when tracked.
    pub gen: Option<u32>,
    pub pop: Population,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ThinningStats {
    pub candidates: u64,
    pub accepted: u64,
    /// Windows that ran out without a candidate.
    pub empty_windows: u64,
    /// Times the majorant window was halved for low acceptance.
    pub halvings: u64,
}

/// Time-ordered realisation of one population on `(0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
    horizon: f64,
    seed: u64,
    model_id: String,
    max_gen_exceeded: bool,
    stats: ThinningStats,
}

impl EventLog {
    pub fn new(horizon: f64, seed: u64, model_id: impl Into<String>) -> Self {
        EventLog {
            events: Vec::new(),
            horizon,
            seed,
            model_id: model_id.into(),
            max_gen_exceeded: false,
            stats: ThinningStats::default(),
        }
    }

    /// Builds a log from explicit events, checking order and range.
    pub fn from_events(
        events: Vec<Event>,
        horizon: f64,
        seed: u64,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        let mut log = Self::new(horizon, seed, model_id);
        for e in events {
            log.push(e)?;
        }
        Ok(log)
    }

    pub(crate) fn push(&mut self, event: Event) -> Result<()> {
        let prev = self.events.last().map_or(0.0, |e| e.time);
        if !(event.time > prev && event.time <= self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "event at {} breaks strict order after {} or leaves (0, {}]",
                event.time, prev, self.horizon
            )));
        }
        self.events.push(event);
        Ok(())
    }

    pub(crate) fn set_stats(&mut self, stats: ThinningStats) {
        self.stats = stats;
    }

    pub(crate) fn set_max_gen_exceeded(&mut self, flag: bool) {
        self.max_gen_exceeded = flag;
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn stats(&self) -> ThinningStats {
        self.stats
    }

    pub fn max_gen_exceeded(&self) -> bool {
        self.max_gen_exceeded
    }

    /// `N_t`, the number of events in `(0, t]`.
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Number of events before `t` (strictly).
    pub fn count_before(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time < t)
    }

    /// Event counts per generation up to `t`; untagged events are skipped.
    pub fn generation_counts(&self, t: f64) -> Vec<usize> {
        let mut counts = Vec::new();
        for e in &self.events[..self.count_until(t)] {
            if let Some(g) = e.gen {
                let g = g as usize;
                if counts.len() <= g {
                    counts.resize(g + 1, 0);
                }
                counts[g] += 1;
            }
        }
        counts
    }

    /// Same events with generation tags removed.
    pub fn without_generations(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.events {
            e.gen = None;
        }
        out.max_gen_exceeded = false;
        out
    }

    /// CSV with header `t,mark,gen,pop`; `gen` is empty when untracked.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mark", "gen", "pop"])?;
        for e in &self.events {
            let gen = e.gen.map(|g| g.to_string()).unwrap_or_default();
            w.write_record([
                fmt_f64(e.time),
                fmt_f64(e.mark),
                gen,
                e.pop.tag().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(time: f64, gen: Option<u32>) -> Event {
        Event {
            time,
            mark: 1.0,
            gen,
            pop: Population::Hawkes,
        }
    }

    #[test]
    fn order_enforced() {
        assert!(EventLog::from_events(vec![ev(0.5, None), ev(0.5, None)], 1.0, 0, "x").is_err());
        assert!(EventLog::from_events(vec![ev(1.5, None)], 1.0, 0, "x").is_err());
        assert!(EventLog::from_events(vec![ev(0.0, None)], 1.0, 0, "x").is_err());
    }

    #[test]
    fn counting() {
        let log = EventLog::from_events(
            vec![ev(0.2, Some(0)), ev(0.5, Some(1)), ev(0.7, Some(0))],
            1.0,
            0,
            "x",
        )
        .unwrap();
        assert_eq!(log.count_until(0.5), 2);
        assert_eq!(log.count_before(0.5), 1);
        assert_eq!(log.generation_counts(1.0), vec![2, 1]);
        assert_eq!(
            log.without_generations().generation_counts(1.0),
            Vec::<usize>::new()
        );
    }

    #[test]
    fn csv_layout() {
        let log = EventLog::from_events(vec![ev(0.25, Some(3))], 1.0, 0, "x").unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,mark,gen,pop\n2.5000000000000000e-1,1.0000000000000000e0,3,2\n"
        );
    }
}
