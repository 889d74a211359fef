//! Resource ledgers, the fixed conversion rules (Upgrade, Recharge, Shop),
//! and the rule-based verifier producing execution feedback.
//!
//! All conversions are integer arithmetic on non-negative counts. Failures
//! are return values, never panics: an action that cannot run yields an
//! [`ExecutionFeedback`] whose reason names every missing resource.

use serde::{Deserialize, Serialize};

use crate::policy::{P2pMove, StructuredAction};

/// Per-agent holdings of the six economic resources.
///
/// EXP and MAT are the upgrade inputs (MAT is the only tradable good), TOK
/// the in-game currency, CCY the out-of-game currency, CAP the progress
/// score, LAB the labor bookkeeping counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub exp: u64,
    pub mat: u64,
    pub tok: u64,
    pub ccy: u64,
    pub cap: u64,
    pub lab: u64,
}

impl ResourceLedger {
    /// Starting ledger: a configurable CCY endowment, everything else zero.
    pub fn starting(initial_ccy: u64) -> Self {
        ResourceLedger {
            ccy: initial_ccy,
            ..Default::default()
        }
    }
}

/// Outcome of executing (or checking) a structured action.
///
/// `reason` is non-empty exactly when `success` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub action: StructuredAction,
    pub success: bool,
    pub reason: String,
}

impl ExecutionFeedback {
    pub fn ok(action: StructuredAction) -> Self {
        ExecutionFeedback {
            action,
            success: true,
            reason: String::new(),
        }
    }

    pub fn fail(action: StructuredAction, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        debug_assert!(!reason.is_empty());
        ExecutionFeedback {
            action,
            success: false,
            reason,
        }
    }
}

/// Upgrade cost: 1 MAT + 1 EXP + 1 TOK, yielding +10 CAP.
pub const UPGRADE_CAP_GAIN: u64 = 10;
/// Recharge rate: 1 CCY buys 10 TOK.
pub const RECHARGE_TOK_PER_CCY: u64 = 10;

/// Consume 1 MAT, 1 EXP and 1 TOK to gain 10 CAP.
///
/// On failure the ledger is untouched and the reason names every missing
/// resource, e.g. `"insufficient MAT, insufficient TOK"`.
pub fn upgrade(ledger: &mut ResourceLedger) -> ExecutionFeedback {
    let mut missing = Vec::new();
    if ledger.mat < 1 {
        missing.push("insufficient MAT");
    }
    if ledger.exp < 1 {
        missing.push("insufficient EXP");
    }
    if ledger.tok < 1 {
        missing.push("insufficient TOK");
    }
    if !missing.is_empty() {
        return ExecutionFeedback::fail(StructuredAction::Upgrade, missing.join(", "));
    }
    ledger.mat -= 1;
    ledger.exp -= 1;
    ledger.tok -= 1;
    ledger.cap += UPGRADE_CAP_GAIN;
    ExecutionFeedback::ok(StructuredAction::Upgrade)
}

/// Convert 1 CCY into 10 TOK.
pub fn recharge(ledger: &mut ResourceLedger) -> ExecutionFeedback {
    if ledger.ccy < 1 {
        return ExecutionFeedback::fail(StructuredAction::Recharge, "insufficient CCY");
    }
    ledger.ccy -= 1;
    ledger.tok += RECHARGE_TOK_PER_CCY;
    ExecutionFeedback::ok(StructuredAction::Recharge)
}

/// What the NPC shop sold, for conservation bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShopPurchase {
    Mat,
    Exp,
}

/// Buy 1 unit of the scarcer upgrade input (argmin of MAT, EXP; ties go to
/// MAT) from the NPC shop for `shop_price` TOK.
pub fn shop_buy(
    ledger: &mut ResourceLedger,
    shop_price: u64,
) -> (ExecutionFeedback, Option<ShopPurchase>) {
    assert!(shop_price > 0, "shop price must be positive");
    if ledger.tok < shop_price {
        return (
            ExecutionFeedback::fail(StructuredAction::Shop, "insufficient TOK"),
            None,
        );
    }
    ledger.tok -= shop_price;
    let bought = if ledger.mat <= ledger.exp {
        ledger.mat += 1;
        ShopPurchase::Mat
    } else {
        ledger.exp += 1;
        ShopPurchase::Exp
    };
    (ExecutionFeedback::ok(StructuredAction::Shop), Some(bought))
}

// ---------------------------------------------------------------------------
// Verifier
// ---------------------------------------------------------------------------

/// A pending negotiation as the verifier sees it from one agent's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionCheck {
    /// True when the session's next move belongs to this agent.
    pub awaiting_me: bool,
    /// Price currently on the table.
    pub current_offer: u64,
    /// The next move would push the round counter past max_rounds.
    pub move_would_expire: bool,
    /// Seller still holds the MAT (settlement precondition).
    pub seller_has_mat: bool,
    /// Buyer can pay `current_offer` TOK (settlement precondition; only
    /// meaningful for Accept).
    pub buyer_can_pay: bool,
}

/// An unclaimed public sell offer a buyer could respond to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpenOfferCheck {
    pub price: u64,
    /// Seller still holds the MAT (matters when the claim is an Accept).
    pub seller_has_mat: bool,
}

/// Everything the verifier needs to predict whether an action will succeed,
/// assembled by the step resolver from the live state. Checking is pure.
#[derive(Debug, Clone, Copy)]
pub struct VerifyContext<'a> {
    pub ledger: &'a ResourceLedger,
    pub shop_price: u64,
    /// Some collectible resource is currently visible to the agent.
    pub resource_visible: bool,
    /// The agent already has a non-terminal negotiation it opened as seller.
    pub has_active_outbound: bool,
    /// The agent's session awaiting its move, if any.
    pub session: Option<SessionCheck>,
    /// The most recent unclaimed public sell offer from another agent.
    pub open_offer: Option<OpenOfferCheck>,
}

/// Pure precondition check: succeeds iff applying `action` to the state the
/// context was built from would succeed. Failures mirror the exact reasons
/// the execution path produces.
pub fn verify(action: &StructuredAction, ctx: &VerifyContext<'_>) -> ExecutionFeedback {
    let led = ctx.ledger;
    match action {
        StructuredAction::Task => {
            if ctx.resource_visible {
                ExecutionFeedback::ok(action.clone())
            } else {
                ExecutionFeedback::fail(action.clone(), "no resource found nearby")
            }
        }
        StructuredAction::Upgrade => {
            let mut probe = *led;
            let fb = upgrade(&mut probe);
            ExecutionFeedback { action: action.clone(), ..fb }
        }
        StructuredAction::Recharge => {
            if led.ccy < 1 {
                ExecutionFeedback::fail(action.clone(), "insufficient CCY")
            } else {
                ExecutionFeedback::ok(action.clone())
            }
        }
        StructuredAction::Shop => {
            if led.tok < ctx.shop_price {
                ExecutionFeedback::fail(action.clone(), "insufficient TOK")
            } else {
                ExecutionFeedback::ok(action.clone())
            }
        }
        StructuredAction::AuctionBuy { price } => {
            if *price < 1 {
                ExecutionFeedback::fail(action.clone(), "invalid price")
            } else if led.tok < *price {
                ExecutionFeedback::fail(action.clone(), "insufficient TOK to escrow bid")
            } else {
                ExecutionFeedback::ok(action.clone())
            }
        }
        StructuredAction::AuctionSell { price } => {
            if *price < 1 {
                ExecutionFeedback::fail(action.clone(), "invalid price")
            } else if led.mat < 1 {
                ExecutionFeedback::fail(action.clone(), "insufficient MAT to escrow")
            } else {
                ExecutionFeedback::ok(action.clone())
            }
        }
        StructuredAction::P2p { mv, .. } => verify_p2p(action, mv, ctx),
    }
}

fn verify_p2p(
    action: &StructuredAction,
    mv: &P2pMove,
    ctx: &VerifyContext<'_>,
) -> ExecutionFeedback {
    match mv {
        P2pMove::Open { price } => {
            if *price < 1 {
                ExecutionFeedback::fail(action.clone(), "invalid price")
            } else if ctx.has_active_outbound {
                ExecutionFeedback::fail(action.clone(), "negotiation already active")
            } else if ctx.ledger.mat < 1 {
                ExecutionFeedback::fail(action.clone(), "insufficient MAT to offer")
            } else {
                ExecutionFeedback::ok(action.clone())
            }
        }
        P2pMove::Offer { price } => {
            if *price < 1 {
                return ExecutionFeedback::fail(action.clone(), "invalid price");
            }
            match &ctx.session {
                Some(s) if s.awaiting_me => {
                    if s.move_would_expire {
                        ExecutionFeedback::fail(action.clone(), "negotiation expired")
                    } else {
                        ExecutionFeedback::ok(action.clone())
                    }
                }
                Some(_) => ExecutionFeedback::fail(action.clone(), "not your turn to move"),
                None if ctx.open_offer.is_some() => ExecutionFeedback::ok(action.clone()),
                None => ExecutionFeedback::fail(action.clone(), "no negotiation partner"),
            }
        }
        P2pMove::Accept => match &ctx.session {
            Some(s) if s.awaiting_me => {
                if s.move_would_expire {
                    ExecutionFeedback::fail(action.clone(), "negotiation expired")
                } else if !s.seller_has_mat {
                    ExecutionFeedback::fail(action.clone(), "seller has insufficient MAT")
                } else if !s.buyer_can_pay {
                    ExecutionFeedback::fail(action.clone(), "buyer has insufficient TOK")
                } else {
                    ExecutionFeedback::ok(action.clone())
                }
            }
            Some(_) => ExecutionFeedback::fail(action.clone(), "not your turn to move"),
            // Accepting an open public offer claims it at the listed price.
            None => match &ctx.open_offer {
                Some(offer) => {
                    if !offer.seller_has_mat {
                        ExecutionFeedback::fail(action.clone(), "seller has insufficient MAT")
                    } else if ctx.ledger.tok < offer.price {
                        ExecutionFeedback::fail(action.clone(), "buyer has insufficient TOK")
                    } else {
                        ExecutionFeedback::ok(action.clone())
                    }
                }
                None => ExecutionFeedback::fail(action.clone(), "no negotiation partner"),
            },
        },
        P2pMove::Reject => match &ctx.session {
            Some(s) if s.awaiting_me => {
                if s.move_would_expire {
                    ExecutionFeedback::fail(action.clone(), "negotiation expired")
                } else {
                    ExecutionFeedback::ok(action.clone())
                }
            }
            Some(_) => ExecutionFeedback::fail(action.clone(), "not your turn to move"),
            None if ctx.open_offer.is_some() => ExecutionFeedback::ok(action.clone()),
            None => ExecutionFeedback::fail(action.clone(), "no negotiation partner"),
        },
    }
}
