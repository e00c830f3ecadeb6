//! RAN side of the TRP information exchange.

use std::collections::BTreeMap;

use super::{
    Cause, CauseDiagnostics, GnbId, SepMessage, TrpInfo, TrpInformationFailure,
    TrpInformationRequest, TrpInformationResponse,
};

/// The TRP inventory reachable through one SeP endpoint, keyed by gNB.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrpRegistrySide {
    pub gnbs: BTreeMap<GnbId, Vec<TrpInfo>>,
}

impl TrpRegistrySide {
    pub fn insert(&mut self, info: TrpInfo) {
        self.gnbs.entry(info.gnb_id).or_default().push(info);
    }
}

/// Answers a TRP information request.
///
/// An unknown gNB, or a filter naming a TRP the gNB does not have, fails
/// with `UnknownTrp`. A gNB without TRPs answers with an empty list.
pub fn trp_information_procedure(
    side: &TrpRegistrySide,
    req: &TrpInformationRequest,
) -> SepMessage {
    let fail = |diag: String| {
        SepMessage::TrpInformationFailure(TrpInformationFailure {
            gnb_id: req.gnb_id,
            cause: CauseDiagnostics::new(Cause::UnknownTrp, diag),
        })
    };
    let Some(trps) = side.gnbs.get(&req.gnb_id) else {
        return fail(format!("gNB {} is not known", req.gnb_id));
    };
    let mut list: Vec<TrpInfo> = match &req.trp_filter {
        None => trps.clone(),
        Some(filter) => {
            if let Some(missing) = filter
                .iter()
                .find(|id| !trps.iter().any(|t| t.trp_id == **id))
            {
                return fail(format!("gNB {} has no TRP {missing}", req.gnb_id));
            }
            trps.iter()
                .filter(|t| filter.contains(&t.trp_id))
                .cloned()
                .collect()
        }
    };
    list.sort_by_key(|t| t.trp_id);
    SepMessage::TrpInformationResponse(TrpInformationResponse {
        gnb_id: req.gnb_id,
        trp_info_list: list,
    })
}
