//! Behavioral radio-unit models and the capability check that decides
//! whether an RU can take a sensing role, and at what self-interference.

use serde::{Deserialize, Serialize};

use crate::sep::{Cause, CauseDiagnostics, Duplex, Role, SensingMode};

/// Least total suppression with which a co-located TX and RX can sense.
pub const MONOSTATIC_MIN_SIC_DB: f64 = 60.0;

/// Self-interference suppression stages, all in dB.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SicBudget {
    pub isolation_db: f64,
    pub analog_db: f64,
    pub digital_db: f64,
}

impl SicBudget {
    pub fn total_db(&self) -> f64 {
        self.isolation_db + self.analog_db + self.digital_db
    }
}

/// Per-slot downlink flags of a TDD frame, repeated cyclically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TddPattern(pub Vec<bool>);

impl TddPattern {
    /// Parses a pattern such as `"DDDDU"`. `D` is downlink; `U` and `S` are not.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty TDD pattern".into());
        }
        s.chars()
            .map(|c| match c {
                'D' => Ok(true),
                'U' | 'S' => Ok(false),
                other => Err(format!("unknown slot type {other:?} in TDD pattern")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TddPattern)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_downlink(&self, slot: u64) -> bool {
        self.0[(slot % self.0.len() as u64) as usize]
    }
}

impl Default for TddPattern {
    /// Four downlink slots followed by one uplink slot.
    fn default() -> Self {
        TddPattern(vec![true, true, true, true, false])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuModel {
    pub ru_id: u32,
    pub kind: Duplex,
    #[serde(default)]
    pub sic: SicBudget,
    #[serde(default)]
    pub can_pause_comm: bool,
    /// No self-interference cancellation at all.
    #[serde(default)]
    pub legacy: bool,
    pub beams_supported: u32,
    /// Only meaningful for `Tdd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdd_pattern: Option<TddPattern>,
}

impl RuModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.legacy && self.sic.total_db() != 0.0 {
            return Err(format!(
                "RU {}: legacy RUs have no self-interference suppression",
                self.ru_id
            ));
        }
        if self.beams_supported == 0 {
            return Err(format!("RU {}: needs at least one beam", self.ru_id));
        }
        if let Some(p) = &self.tdd_pattern {
            if self.kind != Duplex::Tdd {
                return Err(format!("RU {}: TDD pattern on a non-TDD RU", self.ru_id));
            }
            if p.is_empty() {
                return Err(format!("RU {}: empty TDD pattern", self.ru_id));
            }
        }
        Ok(())
    }

    /// The TDD frame in effect, if the RU is TDD.
    pub fn pattern(&self) -> Option<TddPattern> {
        match self.kind {
            Duplex::Tdd => Some(self.tdd_pattern.clone().unwrap_or_default()),
            _ => None,
        }
    }

    pub fn roles(&self) -> Vec<Role> {
        match self.kind {
            Duplex::Sniffer => vec![Role::Rx],
            _ => vec![Role::Tx, Role::Rx, Role::TxRx],
        }
    }
}

/// How an RU will behave in an admitted sensing role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuVerdict {
    /// Self-interference suppression in dB applied to the received grid;
    /// `None` when no own transmission leaks into the sensing receiver.
    pub si_residual_db: Option<f64>,
    /// Communication on this RU is paused while it receives.
    pub pauses_comm: bool,
}

fn unsupported(ru: &RuModel, why: &str) -> CauseDiagnostics {
    CauseDiagnostics::new(Cause::UnsupportedMode, format!("RU {}: {why}", ru.ru_id))
}

/// Decides whether `ru` can serve `role` in `mode`.
pub fn ru_capability_check(
    ru: &RuModel,
    role: Role,
    mode: SensingMode,
) -> Result<RuVerdict, CauseDiagnostics> {
    if ru.kind == Duplex::Sniffer && role.transmits() {
        return Err(unsupported(ru, "a sniffer has no TX path"));
    }
    match (role, mode) {
        (Role::TxRx, SensingMode::Monostatic) => {
            if ru.legacy {
                return Err(unsupported(
                    ru,
                    "monostatic sensing needs self-interference cancellation",
                ));
            }
            let total = ru.sic.total_db();
            if total < MONOSTATIC_MIN_SIC_DB {
                return Err(unsupported(
                    ru,
                    &format!("{total} dB suppression is below the monostatic minimum of {MONOSTATIC_MIN_SIC_DB} dB"),
                ));
            }
            Ok(RuVerdict {
                si_residual_db: Some(total),
                pauses_comm: false,
            })
        }
        (Role::TxRx, SensingMode::Bistatic) => {
            Err(unsupported(ru, "a bistatic leg is either TX or RX"))
        }
        (Role::Rx, SensingMode::Monostatic) | (Role::Tx, SensingMode::Monostatic) => Err(
            unsupported(ru, "monostatic sensing uses a single TxRx entry"),
        ),
        (Role::Tx, SensingMode::Bistatic) => Ok(RuVerdict {
            si_residual_db: None,
            pauses_comm: false,
        }),
        (Role::Rx, SensingMode::Bistatic) => match ru.kind {
            Duplex::Sniffer => Ok(RuVerdict {
                si_residual_db: None,
                pauses_comm: false,
            }),
            // Both TDD (RX path during the DL part) and FDD (RX on the DL
            // carrier) receive while the own communication TX is on air.
            Duplex::Tdd | Duplex::Fdd => {
                if ru.legacy {
                    if ru.can_pause_comm {
                        Ok(RuVerdict {
                            si_residual_db: None,
                            pauses_comm: true,
                        })
                    } else {
                        Err(unsupported(
                            ru,
                            "legacy RU can only receive with communication paused",
                        ))
                    }
                } else {
                    Ok(RuVerdict {
                        si_residual_db: Some(ru.sic.total_db()),
                        pauses_comm: false,
                    })
                }
            }
        },
    }
}
