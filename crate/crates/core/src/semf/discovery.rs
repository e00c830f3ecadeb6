//! TRP discovery through the TRP information exchange, and selection of
//! the TRPs and sensing mode for an area.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::area::Polygon;
use crate::gnb::MONOSTATIC_MIN_SIC_DB;
use crate::sep::{Duplex, GnbId, Role, SepMessage, TrpInfo, TrpInformationRequest};

/// Requests per gNB before it is given up on.
pub const DISCOVERY_ATTEMPTS: u32 = 2;

/// Wait before asking a failed gNB again, in ms.
pub const DISCOVERY_BACKOFF_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GnbStatus {
    /// A request is outstanding; `attempt` counts from 1.
    Pending {
        attempt: u32,
    },
    /// Failed, waiting for the backoff before attempt `attempt + 1`.
    Backoff {
        attempt: u32,
    },
    Known(Vec<TrpInfo>),
    Unavailable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrpRegistry {
    pub gnbs: BTreeMap<GnbId, GnbStatus>,
}

/// What the caller has to do after a TRP information answer.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscoveryOutcome {
    Cached,
    /// Ask again after [`DISCOVERY_BACKOFF_MS`] via [`TrpRegistry::retry`].
    RetryLater,
    GaveUp,
    Ignored,
}

fn info_request(gnb_id: GnbId) -> SepMessage {
    SepMessage::TrpInformationRequest(TrpInformationRequest {
        gnb_id,
        trp_filter: None,
    })
}

impl TrpRegistry {
    /// Every TRP of every known gNB.
    pub fn trps(&self) -> impl Iterator<Item = &TrpInfo> {
        self.gnbs.values().flat_map(|s| match s {
            GnbStatus::Known(l) => l.as_slice(),
            _ => &[],
        })
    }

    pub fn trp(&self, trp_id: u32) -> Option<&TrpInfo> {
        self.trps().find(|t| t.trp_id == trp_id)
    }

    /// No request for any of `gnbs` is outstanding or waiting.
    pub fn settled(&self, gnbs: &[GnbId]) -> bool {
        gnbs.iter().all(|g| {
            matches!(
                self.gnbs.get(g),
                Some(GnbStatus::Known(_) | GnbStatus::Unavailable)
            )
        })
    }

    /// Handles a TRP information response or failure.
    pub fn on_answer(&mut self, msg: &SepMessage) -> DiscoveryOutcome {
        match msg {
            SepMessage::TrpInformationResponse(r) => match self.gnbs.get(&r.gnb_id) {
                Some(GnbStatus::Pending { .. }) => {
                    let mut list = r.trp_info_list.clone();
                    list.sort_by_key(|t| t.trp_id);
                    self.gnbs.insert(r.gnb_id, GnbStatus::Known(list));
                    DiscoveryOutcome::Cached
                }
                _ => DiscoveryOutcome::Ignored,
            },
            SepMessage::TrpInformationFailure(f) => match self.gnbs.get(&f.gnb_id) {
                Some(GnbStatus::Pending { attempt }) => {
                    let attempt = *attempt;
                    if attempt < DISCOVERY_ATTEMPTS {
                        self.gnbs.insert(f.gnb_id, GnbStatus::Backoff { attempt });
                        DiscoveryOutcome::RetryLater
                    } else {
                        self.gnbs.insert(f.gnb_id, GnbStatus::Unavailable);
                        DiscoveryOutcome::GaveUp
                    }
                }
                _ => DiscoveryOutcome::Ignored,
            },
            _ => DiscoveryOutcome::Ignored,
        }
    }

    /// The next attempt for a gNB in backoff.
    pub fn retry(&mut self, gnb: GnbId) -> Option<SepMessage> {
        match self.gnbs.get(&gnb) {
            Some(GnbStatus::Backoff { attempt }) => {
                let attempt = attempt + 1;
                self.gnbs.insert(gnb, GnbStatus::Pending { attempt });
                Some(info_request(gnb))
            }
            _ => None,
        }
    }
}

/// Starts the TRP information exchange towards every gNB of `gnbs` the
/// registry has never heard of. Idempotent.
pub fn trp_discover(registry: &mut TrpRegistry, gnbs: &[GnbId]) -> Vec<(GnbId, SepMessage)> {
    let mut out = Vec::new();
    for &g in gnbs {
        if !registry.gnbs.contains_key(&g) {
            registry.gnbs.insert(g, GnbStatus::Pending { attempt: 1 });
            out.push((g, info_request(g)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionMode {
    MultiMonostatic,
    Multistatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub trp: TrpInfo,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub mode: SessionMode,
    /// Multistatic: the TX first, then RXs by TRP id.
    pub assignments: Vec<RoleAssignment>,
}

pub fn monostatic_capable(t: &TrpInfo) -> bool {
    t.duplex != Duplex::Sniffer
        && t.supports(Role::TxRx)
        && !t.legacy
        && t.sic_total_db >= MONOSTATIC_MIN_SIC_DB
}

pub fn tx_capable(t: &TrpInfo) -> bool {
    t.duplex != Duplex::Sniffer && t.supports(Role::Tx)
}

pub fn rx_capable(t: &TrpInfo) -> bool {
    t.supports(Role::Rx) && (t.duplex == Duplex::Sniffer || !t.legacy || t.can_pause_comm)
}

/// Chooses the sensing mode and TRP roles for `area`.
///
/// Candidates are TRPs whose coverage disc reaches the area. Monostatic
/// sensing by every capable candidate is preferred; otherwise one TX (the
/// closest to the area centroid) with at least two receivers.
pub fn trp_select(registry: &TrpRegistry, area: &Polygon) -> Option<Selection> {
    let mut candidates: Vec<&TrpInfo> = registry
        .trps()
        .filter(|t| {
            t.coverage_radius_m > 0.0 && area.intersects_disc(t.position, t.coverage_radius_m)
        })
        .collect();
    candidates.sort_by_key(|t| t.trp_id);
    let mono: Vec<RoleAssignment> = candidates
        .iter()
        .filter(|t| monostatic_capable(t))
        .map(|t| RoleAssignment {
            trp: (*t).clone(),
            role: Role::TxRx,
        })
        .collect();
    if !mono.is_empty() {
        return Some(Selection {
            mode: SessionMode::MultiMonostatic,
            assignments: mono,
        });
    }
    let centroid = area.centroid();
    let mut txs: Vec<&TrpInfo> = candidates
        .iter()
        .copied()
        .filter(|t| tx_capable(t))
        .collect();
    txs.sort_by(|a, b| {
        let (da, db) = (a.position.distance(centroid), b.position.distance(centroid));
        da.total_cmp(&db).then(a.trp_id.cmp(&b.trp_id))
    });
    for tx in txs {
        let rxs: Vec<&TrpInfo> = candidates
            .iter()
            .copied()
            .filter(|t| t.trp_id != tx.trp_id && rx_capable(t))
            .collect();
        if rxs.len() >= 2 {
            let mut assignments = vec![RoleAssignment {
                trp: tx.clone(),
                role: Role::Tx,
            }];
            assignments.extend(rxs.into_iter().map(|t| RoleAssignment {
                trp: t.clone(),
                role: Role::Rx,
            }));
            return Some(Selection {
                mode: SessionMode::Multistatic,
                assignments,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;
    use crate::sep::{Cause, CauseDiagnostics, TrpInformationFailure, TrpInformationResponse};

    pub(crate) fn info(trp_id: u32, gnb_id: u32, pos: Vec3, duplex: Duplex, sic: f64) -> TrpInfo {
        TrpInfo {
            trp_id,
            gnb_id,
            position: pos,
            duplex,
            roles: if duplex == Duplex::Sniffer {
                vec![Role::Rx]
            } else {
                vec![Role::Tx, Role::Rx, Role::TxRx]
            },
            beam_count: 4,
            beamwidth_rad: 0.3,
            max_bandwidth_hz: 100e6,
            sic_total_db: sic,
            coverage_radius_m: 300.0,
            legacy: false,
            can_pause_comm: false,
        }
    }

    fn registry(trps: Vec<TrpInfo>) -> TrpRegistry {
        let mut r = TrpRegistry::default();
        for t in trps {
            match r
                .gnbs
                .entry(t.gnb_id)
                .or_insert_with(|| GnbStatus::Known(Vec::new()))
            {
                GnbStatus::Known(l) => l.push(t),
                _ => unreachable!(),
            }
        }
        r
    }

    #[test]
    fn discovery_only_asks_unknown_gnbs() {
        let mut r = TrpRegistry::default();
        let sent = trp_discover(&mut r, &[1, 2]);
        assert_eq!(sent.len(), 2);
        assert!(
            trp_discover(&mut r, &[1, 2]).is_empty(),
            "idempotent while pending"
        );
        r.on_answer(&SepMessage::TrpInformationResponse(
            TrpInformationResponse {
                gnb_id: 1,
                trp_info_list: vec![info(3, 1, Vec3::ZERO, Duplex::Fdd, 100.0)],
            },
        ));
        r.on_answer(&SepMessage::TrpInformationResponse(
            TrpInformationResponse {
                gnb_id: 2,
                trp_info_list: vec![],
            },
        ));
        assert!(r.settled(&[1, 2]));
        assert!(trp_discover(&mut r, &[1, 2]).is_empty(), "warm registry");
        assert_eq!(r.trp(3).unwrap().gnb_id, 1);
    }

    #[test]
    fn failing_gnb_is_retried_once_then_unavailable() {
        let mut r = TrpRegistry::default();
        trp_discover(&mut r, &[5]);
        let fail = SepMessage::TrpInformationFailure(TrpInformationFailure {
            gnb_id: 5,
            cause: CauseDiagnostics::new(Cause::ResourceUnavailable, "down"),
        });
        assert_eq!(r.on_answer(&fail), DiscoveryOutcome::RetryLater);
        assert!(!r.settled(&[5]));
        assert!(r.retry(5).is_some());
        assert!(r.retry(5).is_none(), "already pending");
        assert_eq!(r.on_answer(&fail), DiscoveryOutcome::GaveUp);
        assert!(r.settled(&[5]));
        assert_eq!(r.gnbs[&5], GnbStatus::Unavailable);
    }

    #[test]
    fn three_txrx_give_multimonostatic() {
        let r = registry(vec![
            info(1, 1, Vec3::new(0.0, 0.0, 0.0), Duplex::Fdd, 100.0),
            info(2, 2, Vec3::new(200.0, 0.0, 0.0), Duplex::Tdd, 90.0),
            info(3, 3, Vec3::new(100.0, 200.0, 0.0), Duplex::Fdd, 70.0),
        ]);
        let s = trp_select(&r, &Polygon::rect(50.0, 50.0, 150.0, 150.0)).unwrap();
        assert_eq!(s.mode, SessionMode::MultiMonostatic);
        assert_eq!(s.assignments.len(), 3);
        assert!(s.assignments.iter().all(|a| a.role == Role::TxRx));
    }

    #[test]
    fn txrx_plus_sniffers_give_multistatic() {
        let r = registry(vec![
            info(1, 1, Vec3::new(100.0, 0.0, 0.0), Duplex::Fdd, 0.0),
            info(2, 2, Vec3::new(0.0, 100.0, 0.0), Duplex::Sniffer, 0.0),
            info(3, 3, Vec3::new(200.0, 100.0, 0.0), Duplex::Sniffer, 0.0),
        ]);
        let s = trp_select(&r, &Polygon::rect(50.0, 50.0, 150.0, 150.0)).unwrap();
        assert_eq!(s.mode, SessionMode::Multistatic);
        assert_eq!(s.assignments[0].trp.trp_id, 1);
        assert_eq!(s.assignments[0].role, Role::Tx);
        assert_eq!(
            s.assignments[1..]
                .iter()
                .map(|a| (a.trp.trp_id, a.role))
                .collect::<Vec<_>>(),
            vec![(2, Role::Rx), (3, Role::Rx)]
        );
    }

    #[test]
    fn nothing_in_range_is_no_coverage() {
        let r = registry(vec![info(
            1,
            1,
            Vec3::new(5000.0, 0.0, 0.0),
            Duplex::Fdd,
            100.0,
        )]);
        assert!(trp_select(&r, &Polygon::rect(0.0, 0.0, 10.0, 10.0)).is_none());
        // One TX and one sniffer are not enough either.
        let r = registry(vec![
            info(1, 1, Vec3::ZERO, Duplex::Fdd, 0.0),
            info(2, 1, Vec3::new(10.0, 0.0, 0.0), Duplex::Sniffer, 0.0),
        ]);
        assert!(trp_select(&r, &Polygon::rect(0.0, 0.0, 10.0, 10.0)).is_none());
    }
}
