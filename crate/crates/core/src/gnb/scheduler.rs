//! Periodic sensing allocations on one TRP's slot grid.
//!
//! Demands on the same TRP are merged into shared periodic allocations when
//! that lowers the total resource cost. A merged allocation runs at the gcd
//! of the merged periods with the largest requested burst, so members with
//! longer periods are over-served; the ratio is recorded per member.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ru::TddPattern;
use crate::sep::{Cause, CauseDiagnostics};

pub const SYMBOLS_PER_SLOT: u32 = 14;

/// Longest slot horizon over which placements are checked for conflicts.
pub const MAX_HORIZON_SLOTS: u64 = 1 << 20;

/// Resource need of one sensing request on one TRP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensingDemand {
    pub period_slots: u32,
    pub symbols: u32,
    pub subcarriers: u32,
}

impl SensingDemand {
    /// Resource elements per slot, averaged over the period.
    pub fn cost(&self) -> f64 {
        f64::from(self.symbols) * f64::from(self.subcarriers) / f64::from(self.period_slots)
    }

    /// Slots touched by one burst, which always starts on a slot boundary.
    pub fn span_slots(&self) -> u64 {
        u64::from(self.symbols.div_ceil(SYMBOLS_PER_SLOT))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// A single allocation serving several demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDemand {
    pub demand: SensingDemand,
    /// Per input demand: how many occasions it gets per occasion it asked for.
    pub over_delivery: Vec<f64>,
}

/// Merges all `demands` into one allocation at the gcd period.
pub fn aggregate_gcd(demands: &[SensingDemand]) -> Option<AggregatedDemand> {
    let first = demands.first()?;
    let mut agg = *first;
    for d in &demands[1..] {
        agg.period_slots = gcd(u64::from(agg.period_slots), u64::from(d.period_slots)) as u32;
        agg.symbols = agg.symbols.max(d.symbols);
        agg.subcarriers = agg.subcarriers.max(d.subcarriers);
    }
    Some(AggregatedDemand {
        demand: agg,
        over_delivery: demands
            .iter()
            .map(|d| f64::from(d.period_slots) / f64::from(agg.period_slots))
            .collect(),
    })
}

/// A placed periodic allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub demand: SensingDemand,
    pub offset_slot: u64,
    /// Owners served by this allocation with their over-delivery ratios.
    pub members: BTreeMap<u64, f64>,
}

impl Allocation {
    pub fn period(&self) -> u64 {
        u64::from(self.demand.period_slots)
    }

    /// First burst start slot at or after `slot`.
    pub fn next_occasion(&self, slot: u64) -> u64 {
        if slot <= self.offset_slot {
            return self.offset_slot;
        }
        let k = (slot - self.offset_slot).div_ceil(self.period());
        self.offset_slot + k * self.period()
    }

    fn occupied_in(&self, horizon: u64) -> impl Iterator<Item = u64> + '_ {
        let span = self.demand.span_slots();
        (0..horizon.div_ceil(self.period()))
            .map(move |k| self.offset_slot + k * self.period())
            .flat_map(move |start| start..start + span)
    }
}

/// Slot grid and sensing allocations of one TRP.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchedulerState {
    /// `None` for FDD and receive-only units: every slot is usable.
    pub pattern: Option<TddPattern>,
    /// Fraction of downlink resources occupied by communication.
    pub comm_load: f64,
    demands: BTreeMap<u64, SensingDemand>,
    allocations: Vec<Allocation>,
}

impl SchedulerState {
    pub fn new(pattern: Option<TddPattern>, comm_load: f64) -> Self {
        Self {
            pattern,
            comm_load,
            ..Default::default()
        }
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn allocation_for(&self, owner: u64) -> Option<&Allocation> {
        self.allocations
            .iter()
            .find(|a| a.members.contains_key(&owner))
    }

    pub fn is_downlink(&self, slot: u64) -> bool {
        self.pattern.as_ref().is_none_or(|p| p.is_downlink(slot))
    }

    /// Total cost of the current allocations.
    pub fn cost(&self) -> f64 {
        self.allocations.iter().map(|a| a.demand.cost()).sum()
    }

    /// Cost if every demand were scheduled on its own.
    pub fn individual_cost(&self) -> f64 {
        self.demands.values().map(SensingDemand::cost).sum()
    }

    /// Admits `demand` for `owner` and re-plans. On failure the state is unchanged.
    pub fn admit(
        &mut self,
        owner: u64,
        demand: SensingDemand,
    ) -> Result<&Allocation, CauseDiagnostics> {
        if demand.period_slots == 0 || demand.symbols == 0 || demand.subcarriers == 0 {
            return Err(CauseDiagnostics::new(
                Cause::InvalidConfig,
                "empty sensing demand",
            ));
        }
        let mut demands = self.demands.clone();
        demands.insert(owner, demand);
        let allocations = schedule_sensing(self.pattern.as_ref(), &demands)?;
        self.demands = demands;
        self.allocations = allocations;
        Ok(self
            .allocation_for(owner)
            .expect("admitted owner is allocated"))
    }

    /// Releases `owner`'s demand and re-plans the remaining ones.
    pub fn release(&mut self, owner: u64) {
        if self.demands.remove(&owner).is_none() {
            return;
        }
        match schedule_sensing(self.pattern.as_ref(), &self.demands) {
            Ok(plan) => self.allocations = plan,
            // A different grouping may not place; keep the current plan without the owner.
            Err(_) => {
                for a in &mut self.allocations {
                    a.members.remove(&owner);
                }
                self.allocations.retain(|a| !a.members.is_empty());
            }
        }
    }
}

/// Groups demands greedily, merging the pair with the largest cost saving
/// until no merge saves anything.
fn group_demands(demands: &BTreeMap<u64, SensingDemand>) -> Vec<Vec<(u64, SensingDemand)>> {
    let mut groups: Vec<Vec<(u64, SensingDemand)>> =
        demands.iter().map(|(o, d)| vec![(*o, *d)]).collect();
    let group_cost = |g: &[(u64, SensingDemand)]| {
        let ds: Vec<_> = g.iter().map(|(_, d)| *d).collect();
        aggregate_gcd(&ds).map_or(0.0, |a| a.demand.cost())
    };
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let merged: Vec<_> = groups[i].iter().chain(&groups[j]).copied().collect();
                let saving = group_cost(&groups[i]) + group_cost(&groups[j]) - group_cost(&merged);
                if saving > 1e-9 && best.is_none_or(|(s, _, _)| saving > s) {
                    best = Some((saving, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let g = groups.remove(j);
        groups[i].extend(g);
    }
    groups
}

/// Plans allocations for all `demands` on a grid with the given TDD
/// pattern. Each allocation starts at the earliest offset whose every
/// occasion lies in a contiguous run of downlink slots and collides with no
/// other allocation.
pub fn schedule_sensing(
    pattern: Option<&TddPattern>,
    demands: &BTreeMap<u64, SensingDemand>,
) -> Result<Vec<Allocation>, CauseDiagnostics> {
    let unavailable = |why: String| CauseDiagnostics::new(Cause::ResourceUnavailable, why);
    let mut groups: Vec<(SensingDemand, BTreeMap<u64, f64>)> = group_demands(demands)
        .into_iter()
        .map(|g| {
            let ds: Vec<_> = g.iter().map(|(_, d)| *d).collect();
            let agg = aggregate_gcd(&ds).expect("groups are non-empty");
            let members = g.iter().map(|(o, _)| *o).zip(agg.over_delivery).collect();
            (agg.demand, members)
        })
        .collect();
    // Short periods are the hardest to place, so they go first.
    groups.sort_by_key(|(d, m)| (d.period_slots, *m.keys().next().expect("non-empty")));

    let mut horizon = pattern.map_or(1, |p| p.len() as u64);
    for (d, _) in &groups {
        horizon = lcm(horizon, u64::from(d.period_slots));
        if horizon > MAX_HORIZON_SLOTS {
            return Err(unavailable(format!(
                "periods too irregular to plan (horizon > {MAX_HORIZON_SLOTS} slots)"
            )));
        }
    }

    let mut busy = vec![false; horizon as usize];
    let mut out = Vec::with_capacity(groups.len());
    for (demand, members) in groups {
        let span = demand.span_slots();
        let period = u64::from(demand.period_slots);
        if span > period {
            return Err(unavailable(format!(
                "a burst of {} symbols spans {span} slots, longer than its period of {period}",
                demand.symbols
            )));
        }
        let fits = |offset: u64| {
            let candidate = Allocation {
                demand,
                offset_slot: offset,
                members: BTreeMap::new(),
            };
            let ok = candidate.occupied_in(horizon).all(|s| {
                let s = s % horizon;
                !busy[s as usize] && pattern.is_none_or(|p| p.is_downlink(s))
            });
            ok
        };
        let Some(offset) = (0..period).find(|o| fits(*o)) else {
            return Err(unavailable(match pattern {
                Some(p) => format!(
                    "no contiguous downlink region of {} symbols at period {period} in a {}-slot frame",
                    demand.symbols,
                    p.len()
                ),
                None => format!("no free occasion for period {period}"),
            }));
        };
        let alloc = Allocation {
            demand,
            offset_slot: offset,
            members,
        };
        for s in alloc.occupied_in(horizon).collect::<Vec<_>>() {
            busy[(s % horizon) as usize] = true;
        }
        out.push(alloc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(period: u32, symbols: u32, subcarriers: u32) -> SensingDemand {
        SensingDemand {
            period_slots: period,
            symbols,
            subcarriers,
        }
    }

    #[test]
    fn divisible_periods_share_one_allocation() {
        let a = aggregate_gcd(&[d(10, 64, 256), d(20, 64, 256)]).unwrap();
        assert_eq!(a.demand.period_slots, 10);
        assert_eq!(a.over_delivery, vec![1.0, 2.0]);
        let mut s = SchedulerState::new(None, 0.0);
        s.admit(1, d(10, 64, 256)).unwrap();
        s.admit(2, d(20, 64, 256)).unwrap();
        assert_eq!(s.allocations().len(), 1);
        assert!(s.cost() < s.individual_cost());
    }

    #[test]
    fn gcd_over_delivery_ratios() {
        let a = aggregate_gcd(&[d(10, 64, 256), d(15, 64, 256)]).unwrap();
        assert_eq!(a.demand.period_slots, 5);
        assert_eq!(a.over_delivery, vec![2.0, 3.0]);
    }

    #[test]
    fn burst_longer_than_downlink_region_rejected() {
        // Three downlink slots hold 42 symbols.
        let pattern = TddPattern::parse("DDDU").unwrap();
        let mut s = SchedulerState::new(Some(pattern), 0.0);
        let e = s.admit(1, d(4, 64, 256)).unwrap_err();
        assert_eq!(e.cause, Cause::ResourceUnavailable);
        assert!(s.allocations().is_empty());
    }

    #[test]
    fn placement_is_in_earliest_downlink_run() {
        let pattern = TddPattern::parse("UDDDDDU").unwrap();
        let mut s = SchedulerState::new(Some(pattern), 0.0);
        let a = s.admit(1, d(7, 64, 256)).unwrap().clone();
        assert_eq!(a.offset_slot, 1);
        for k in 0..20 {
            let start = a.offset_slot + k * a.period();
            for slot in start..start + a.demand.span_slots() {
                assert!(s.is_downlink(slot));
            }
        }
    }

    #[test]
    fn default_tdd_frame_cannot_hold_default_burst() {
        let mut s = SchedulerState::new(Some(TddPattern::default()), 0.0);
        assert!(s.admit(1, d(5, 64, 256)).is_err());
        let mut s = SchedulerState::new(Some(TddPattern::parse("DDDDDU").unwrap()), 0.0);
        assert!(s.admit(1, d(6, 64, 256)).is_ok());
    }

    #[test]
    fn release_replans() {
        let mut s = SchedulerState::new(None, 0.0);
        s.admit(1, d(10, 28, 64)).unwrap();
        s.admit(2, d(20, 28, 64)).unwrap();
        s.release(1);
        let a = s.allocation_for(2).unwrap();
        assert_eq!(a.demand.period_slots, 20);
        assert!(s.allocation_for(1).is_none());
    }

    #[test]
    fn next_occasion_arithmetic() {
        let a = Allocation {
            demand: d(10, 14, 12),
            offset_slot: 3,
            members: BTreeMap::new(),
        };
        assert_eq!(a.next_occasion(0), 3);
        assert_eq!(a.next_occasion(3), 3);
        assert_eq!(a.next_occasion(4), 13);
        assert_eq!(a.next_occasion(23), 23);
    }

    proptest! {
        #[test]
        fn plans_never_cost_more_than_individual_scheduling(
            reqs in prop::collection::vec((1u32..=8, 1u32..=28, 12u32..=256), 1..6)
        ) {
            let demands: BTreeMap<u64, SensingDemand> = reqs
                .iter()
                .enumerate()
                .map(|(i, (p, s, c))| (i as u64, d(p * 4, *s, *c)))
                .collect();
            if let Ok(plan) = schedule_sensing(None, &demands) {
                let cost: f64 = plan.iter().map(|a| a.demand.cost()).sum();
                let individual: f64 = demands.values().map(SensingDemand::cost).sum();
                prop_assert!(cost <= individual + 1e-9);
                let served: usize = plan.iter().map(|a| a.members.len()).sum();
                prop_assert_eq!(served, demands.len());
            }
        }
    }
}
