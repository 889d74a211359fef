//! Pluggable decision backends and the structured-action grammar.
//!
//! Backends fulfil three contracts: `decide` (pick one of the seven
//! structured actions), `negotiate` (produce a P2P bargaining move), and
//! `reflect` (periodically rewrite the agent's strategy text). All backends
//! are pure functions of their inputs plus their own private state, which is
//! what makes whole runs replayable.

pub mod llm;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentProfile, Observation, TraitLevel};
use crate::comms::{NegotiationRole, SessionId};
use crate::economy::ExecutionFeedback;
use crate::AgentId;

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// A move inside (or opening) a P2P negotiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum P2pMove {
    /// Broadcast a public sell offer for 1 MAT at `price` TOK.
    Open { price: u64 },
    /// Counter-offer at `price` TOK.
    Offer { price: u64 },
    Accept,
    Reject,
}

/// The seven-action decision alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum StructuredAction {
    /// Navigate to the nearest visible resource and collect it; explores
    /// when nothing is visible.
    Task,
    /// Convert 1 CCY into 10 TOK.
    Recharge,
    /// Buy 1 unit of the scarcer upgrade input from the NPC shop.
    Shop,
    /// Bid for 1 MAT in the auction at `price` TOK (escrowed).
    AuctionBuy { price: u64 },
    /// List 1 MAT for sale in the auction at `price` TOK (escrowed).
    AuctionSell { price: u64 },
    /// Consume 1 MAT + 1 EXP + 1 TOK for +10 CAP.
    Upgrade,
    /// Make a move in a chat-based P2P negotiation.
    P2p {
        target: Option<AgentId>,
        mv: P2pMove,
    },
}

/// The seven action categories, used for histograms and retry exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Task,
    Recharge,
    Shop,
    AuctionBuy,
    AuctionSell,
    Upgrade,
    P2p,
}

pub const ACTION_KINDS: [ActionKind; 7] = [
    ActionKind::Task,
    ActionKind::Recharge,
    ActionKind::Shop,
    ActionKind::AuctionBuy,
    ActionKind::AuctionSell,
    ActionKind::Upgrade,
    ActionKind::P2p,
];

impl ActionKind {
    pub fn index(self) -> usize {
        match self {
            ActionKind::Task => 0,
            ActionKind::Recharge => 1,
            ActionKind::Shop => 2,
            ActionKind::AuctionBuy => 3,
            ActionKind::AuctionSell => 4,
            ActionKind::Upgrade => 5,
            ActionKind::P2p => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Task => "Task",
            ActionKind::Recharge => "Recharge",
            ActionKind::Shop => "Shop",
            ActionKind::AuctionBuy => "AuctionBuy",
            ActionKind::AuctionSell => "AuctionSell",
            ActionKind::Upgrade => "Upgrade",
            ActionKind::P2p => "P2P",
        }
    }
}

impl StructuredAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            StructuredAction::Task => ActionKind::Task,
            StructuredAction::Recharge => ActionKind::Recharge,
            StructuredAction::Shop => ActionKind::Shop,
            StructuredAction::AuctionBuy { .. } => ActionKind::AuctionBuy,
            StructuredAction::AuctionSell { .. } => ActionKind::AuctionSell,
            StructuredAction::Upgrade => ActionKind::Upgrade,
            StructuredAction::P2p { .. } => ActionKind::P2p,
        }
    }
}

// ---------------------------------------------------------------------------
// ACTION-line grammar
// ---------------------------------------------------------------------------

/// Canonical textual form of an action, the right-hand side of an
/// `ACTION:` directive line.
pub fn render_action(action: &StructuredAction) -> String {
    match action {
        StructuredAction::Task => "Task".into(),
        StructuredAction::Recharge => "Recharge".into(),
        StructuredAction::Shop => "Shop".into(),
        StructuredAction::Upgrade => "Upgrade".into(),
        StructuredAction::AuctionBuy { price } => format!("AuctionBuy price={price}"),
        StructuredAction::AuctionSell { price } => format!("AuctionSell price={price}"),
        StructuredAction::P2p { target, mv } => {
            let mut s = String::from("P2P ");
            s.push_str(match mv {
                P2pMove::Open { .. } => "move=open",
                P2pMove::Offer { .. } => "move=offer",
                P2pMove::Accept => "move=accept",
                P2pMove::Reject => "move=reject",
            });
            match mv {
                P2pMove::Open { price } | P2pMove::Offer { price } => {
                    s.push_str(&format!(" price={price}"));
                }
                _ => {}
            }
            if let Some(t) = target {
                s.push_str(&format!(" target={t}"));
            }
            s
        }
    }
}

/// The full directive line a backend is asked to end its reply with.
pub fn render_action_line(action: &StructuredAction) -> String {
    format!("ACTION: {}", render_action(action))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("no ACTION line found")]
    MissingActionLine,
    #[error("unknown action name `{0}`")]
    UnknownAction(String),
    #[error("invalid value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("action `{0}` is missing required argument `{1}`")]
    MissingArgument(String, &'static str),
}

fn parse_price(key: &str, value: &str, warnings: &mut Vec<String>) -> Result<u64, ActionParseError> {
    if let Ok(p) = value.parse::<u64>() {
        return Ok(p);
    }
    // Non-integer prices are rounded half-up with a warning.
    if let Ok(f) = value.parse::<f64>() {
        if f.is_finite() && f >= 0.0 {
            let rounded = (f + 0.5).floor() as u64;
            warnings.push(format!("rounded non-integer {key} {value} to {rounded}"));
            return Ok(rounded);
        }
    }
    Err(ActionParseError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

/// Parse the canonical action text (no `ACTION:` prefix). Returns the action
/// plus any warnings (currently only price rounding).
pub fn parse_action_str(s: &str) -> Result<(StructuredAction, Vec<String>), ActionParseError> {
    let mut warnings = Vec::new();
    let mut parts = s.split_whitespace();
    let name = parts.next().ok_or(ActionParseError::MissingActionLine)?;

    let mut price: Option<u64> = None;
    let mut target: Option<AgentId> = None;
    let mut mv: Option<&str> = None;
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| ActionParseError::BadValue {
                key: part.into(),
                value: String::new(),
            })?;
        match key.to_ascii_lowercase().as_str() {
            "price" => price = Some(parse_price("price", value, &mut warnings)?),
            "target" => {
                let id = value
                    .parse::<u32>()
                    .map_err(|_| ActionParseError::BadValue {
                        key: "target".into(),
                        value: value.into(),
                    })?;
                target = Some(AgentId(id));
            }
            "move" => mv = Some(value),
            other => {
                return Err(ActionParseError::BadValue {
                    key: other.into(),
                    value: value.into(),
                })
            }
        }
    }

    let action = match name.to_ascii_lowercase().as_str() {
        "task" => StructuredAction::Task,
        "recharge" => StructuredAction::Recharge,
        "shop" => StructuredAction::Shop,
        "upgrade" => StructuredAction::Upgrade,
        "auctionbuy" | "auction_buy" => StructuredAction::AuctionBuy {
            price: price.ok_or(ActionParseError::MissingArgument("AuctionBuy".into(), "price"))?,
        },
        "auctionsell" | "auction_sell" => StructuredAction::AuctionSell {
            price: price.ok_or(ActionParseError::MissingArgument("AuctionSell".into(), "price"))?,
        },
        "p2p" => {
            let mv = match mv.map(str::to_ascii_lowercase).as_deref() {
                Some("open") => P2pMove::Open {
                    price: price.ok_or(ActionParseError::MissingArgument("P2P open".into(), "price"))?,
                },
                Some("offer") => P2pMove::Offer {
                    price: price.ok_or(ActionParseError::MissingArgument("P2P offer".into(), "price"))?,
                },
                Some("accept") => P2pMove::Accept,
                Some("reject") => P2pMove::Reject,
                // A bare price defaults to opening a public offer.
                None if price.is_some() => P2pMove::Open {
                    price: price.unwrap(),
                },
                Some(other) => {
                    return Err(ActionParseError::BadValue {
                        key: "move".into(),
                        value: other.into(),
                    })
                }
                None => return Err(ActionParseError::MissingArgument("P2P".into(), "move")),
            };
            StructuredAction::P2p { target, mv }
        }
        other => return Err(ActionParseError::UnknownAction(other.into())),
    };
    Ok((action, warnings))
}

/// Scan a backend reply for its final `ACTION:` line and parse it.
pub fn parse_action_line(reply: &str) -> Result<(StructuredAction, Vec<String>), ActionParseError> {
    for line in reply.lines().rev() {
        let trimmed = line.trim();
        let lower = trimmed.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("action:") {
            let offset = trimmed.len() - rest.len();
            return parse_action_str(trimmed[offset..].trim());
        }
    }
    Err(ActionParseError::MissingActionLine)
}

// ---------------------------------------------------------------------------
// Contexts handed to backends
// ---------------------------------------------------------------------------

/// Rendered prompt fragments assembled for one decision. Rendering is
/// deterministic given the inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub profile_text: String,
    pub observation_text: String,
    pub stm_text: String,
    pub ltm_reference_text: String,
    pub reflection_text: String,
    pub feedback_text: String,
    pub action_catalog_text: String,
}

impl PromptContext {
    /// The full chat prompt for a decision call.
    pub fn render_decision_prompt(&self) -> String {
        let mut out = String::new();
        out.push_str("You are a player in an online game economy.\n\n");
        out.push_str("Your character profile:\n");
        out.push_str(&self.profile_text);
        out.push_str("\n\nCurrent observation:\n");
        out.push_str(&self.observation_text);
        out.push_str("\n\nRecent steps (newest last):\n");
        out.push_str(if self.stm_text.is_empty() { "(none)" } else { &self.stm_text });
        out.push_str("\n\nMost relevant past experience:\n");
        out.push_str(if self.ltm_reference_text.is_empty() {
            "(none)"
        } else {
            &self.ltm_reference_text
        });
        out.push_str("\n\nCurrent strategy:\n");
        out.push_str(if self.reflection_text.is_empty() {
            "(none yet)"
        } else {
            &self.reflection_text
        });
        if !self.feedback_text.is_empty() {
            out.push_str("\n\nExecution feedback:\n");
            out.push_str(&self.feedback_text);
        }
        out.push_str("\n\nAvailable actions:\n");
        out.push_str(&self.action_catalog_text);
        out.push_str(
            "\n\nThink step by step about the best next action, then end your reply with exactly one line:\n\
             ACTION: <name> [price=<integer>] [target=<agent id>] [move=<open|offer|accept|reject>]\n",
        );
        out
    }
}

/// One line per action, in fixed order.
pub fn action_catalog() -> String {
    "- Task: walk to the nearest visible resource tile and collect it (explores when none is visible)\n\
     - Recharge: spend 1 CCY to gain 10 TOK\n\
     - Shop price is fixed: buy 1 unit of your scarcer upgrade input (MAT or EXP) for TOK\n\
     - AuctionBuy price=P: escrow P TOK and bid for 1 MAT in the auction\n\
     - AuctionSell price=P: escrow 1 MAT and list it for sale at P TOK\n\
     - Upgrade: consume 1 EXP + 1 MAT + 1 TOK to gain 10 CAP\n\
     - P2P move=open|offer|accept|reject [price=P] [target=ID]: negotiate a direct MAT sale via chat"
        .into()
}

/// A negotiation as one participant sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionView {
    pub id: SessionId,
    pub role: NegotiationRole,
    pub counterparty: Option<AgentId>,
    pub current_offer: u64,
    pub round: u32,
    pub max_rounds: u32,
    /// The next move belongs to this agent.
    pub awaiting_me: bool,
}

/// Everything a backend may consult for one decision.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    pub agent: AgentId,
    pub observation: &'a Observation,
    pub profile: &'a AgentProfile,
    pub shop_price: u64,
    /// 0 on the first call of a step, 1 on the single in-step retry.
    pub attempt: u32,
    /// Failure feedback from this step's previous attempt, if any.
    pub feedback: Option<&'a ExecutionFeedback>,
    /// The agent's negotiation awaiting its move, if any.
    pub session: Option<SessionView>,
    /// Most recent unclaimed public sell offer from another agent.
    pub open_offer: Option<(AgentId, u64)>,
    pub prompt: PromptContext,
}

/// Context for a dedicated negotiation call.
#[derive(Debug, Clone)]
pub struct NegotiationContext {
    pub session: SessionView,
    pub best_bid: Option<u64>,
    pub best_ask: Option<u64>,
    /// Rendered history of moves so far, oldest first.
    pub history: Vec<String>,
    pub profile_text: String,
}

impl NegotiationContext {
    pub fn render_prompt(&self) -> String {
        let mut out = String::new();
        out.push_str("You are negotiating a direct sale of 1 MAT in an online game.\n");
        out.push_str(&format!(
            "Your role: {}.\n",
            match self.session.role {
                NegotiationRole::Seller => "seller",
                NegotiationRole::Buyer => "buyer",
            }
        ));
        out.push_str("Your character profile:\n");
        out.push_str(&self.profile_text);
        out.push_str(&format!(
            "\nAuction reference: best bid {}, best ask {}.\n",
            self.best_bid.map_or("none".into(), |p| p.to_string()),
            self.best_ask.map_or("none".into(), |p| p.to_string()),
        ));
        out.push_str(&format!(
            "Price on the table: {} TOK (round {} of {}).\n",
            self.session.current_offer, self.session.round, self.session.max_rounds
        ));
        out.push_str("Negotiation so far:\n");
        for h in &self.history {
            out.push_str(h);
            out.push('\n');
        }
        out.push_str(
            "Reply with exactly one line: OFFER <integer price>, ACCEPT, or REJECT.\n",
        );
        out
    }
}

/// Parse a free-text negotiation reply: `OFFER p` / `ACCEPT` / `REJECT`
/// (case-insensitive, scanned from the last line backwards).
pub fn parse_negotiation_reply(reply: &str) -> Option<P2pMove> {
    for line in reply.lines().rev() {
        let t = line.trim().to_ascii_uppercase();
        if t.starts_with("ACCEPT") {
            return Some(P2pMove::Accept);
        }
        if t.starts_with("REJECT") {
            return Some(P2pMove::Reject);
        }
        if let Some(rest) = t.strip_prefix("OFFER") {
            if let Ok(p) = rest.trim().parse::<u64>() {
                if p >= 1 {
                    return Some(P2pMove::Offer { price: p });
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Backend trait
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error(transparent)]
    Parse(#[from] ActionParseError),
}

/// A decision plus any warnings raised while producing it (parse fallbacks,
/// price rounding). Warnings end up in the trace stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub action: StructuredAction,
    pub warnings: Vec<String>,
}

impl DecisionOutcome {
    pub fn clean(action: StructuredAction) -> Self {
        DecisionOutcome {
            action,
            warnings: Vec::new(),
        }
    }
}

/// The decide / negotiate / reflect contract all backends implement.
///
/// Given identical context and identical private state (rng position,
/// script cursor, endpoint transcript), a backend must return identical
/// results.
pub trait PolicyBackend {
    fn name(&self) -> &'static str;

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<DecisionOutcome, PolicyError>;

    fn negotiate(&mut self, ctx: &NegotiationContext) -> Result<P2pMove, PolicyError>;

    /// `window` holds the last n (action, observation text) pairs, oldest
    /// first. Returns the new strategy text.
    fn reflect(
        &mut self,
        window: &[(StructuredAction, String)],
        sr_prev: &str,
    ) -> Result<String, PolicyError>;
}

// ---------------------------------------------------------------------------
// Random backend
// ---------------------------------------------------------------------------

/// Uniform draw over the seven action kinds; prices uniform in [1, 10].
pub struct RandomPolicy {
    rng: ChaCha12Rng,
}

pub const RANDOM_PRICE_RANGE: std::ops::RangeInclusive<u64> = 1..=10;

impl RandomPolicy {
    pub fn new(rng: ChaCha12Rng) -> Self {
        RandomPolicy { rng }
    }

    fn random_price(&mut self) -> u64 {
        self.rng.gen_range(RANDOM_PRICE_RANGE)
    }

    fn random_session_move(&mut self) -> P2pMove {
        match self.rng.gen_range(0..3u8) {
            0 => {
                let price = self.random_price();
                P2pMove::Offer { price }
            }
            1 => P2pMove::Accept,
            _ => P2pMove::Reject,
        }
    }
}

impl PolicyBackend for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<DecisionOutcome, PolicyError> {
        let action = match self.rng.gen_range(0..7u8) {
            0 => StructuredAction::Task,
            1 => StructuredAction::Recharge,
            2 => StructuredAction::Shop,
            3 => StructuredAction::AuctionBuy {
                price: self.random_price(),
            },
            4 => StructuredAction::AuctionSell {
                price: self.random_price(),
            },
            5 => StructuredAction::Upgrade,
            _ => {
                if let Some(s) = ctx.session.filter(|s| s.awaiting_me) {
                    StructuredAction::P2p {
                        target: s.counterparty,
                        mv: self.random_session_move(),
                    }
                } else if let Some((seller, _)) = ctx.open_offer {
                    StructuredAction::P2p {
                        target: Some(seller),
                        mv: self.random_session_move(),
                    }
                } else {
                    StructuredAction::P2p {
                        target: None,
                        mv: P2pMove::Open {
                            price: self.random_price(),
                        },
                    }
                }
            }
        };
        Ok(DecisionOutcome::clean(action))
    }

    fn negotiate(&mut self, _ctx: &NegotiationContext) -> Result<P2pMove, PolicyError> {
        Ok(self.random_session_move())
    }

    fn reflect(
        &mut self,
        _window: &[(StructuredAction, String)],
        _sr_prev: &str,
    ) -> Result<String, PolicyError> {
        Ok("no strategy; acting uniformly at random".into())
    }
}

// ---------------------------------------------------------------------------
// Rule-based backend
// ---------------------------------------------------------------------------

/// Reference price used when the book is empty.
pub const RULE_REFERENCE_PRICE: u64 = 6;

/// Deterministic priority ladder parameterized by the profile's trait
/// levels: upgrade when possible, collect while resources are visible,
/// spend-inclined personas recharge and buy the lacking input, grinders
/// sell surplus MAT, everyone else explores.
#[derive(Debug, Default, Clone)]
pub struct RuleBasedPolicy;

fn trait_at_least(profile: &AgentProfile, key: &str, level: TraitLevel) -> bool {
    profile
        .trait_levels
        .get(key)
        .map_or(false, |l| *l >= level)
}

pub fn spend_inclined(profile: &AgentProfile) -> bool {
    trait_at_least(profile, "recharge_money", TraitLevel::Medium)
}

pub fn grind_inclined(profile: &AgentProfile) -> bool {
    trait_at_least(profile, "online_time", TraitLevel::MediumHigh)
}

/// The ladder itself, exposed so the LLM backend can fall back to it.
pub fn rule_based_decide(ctx: &DecisionContext<'_>) -> StructuredAction {
    // On a retry, never repeat the failed action kind.
    let excluded = ctx.feedback.map(|fb| fb.action.kind());
    let allowed = |k: ActionKind| excluded != Some(k);
    let obs = ctx.observation;
    let led = &obs.inventory;

    // 1. Upgrade whenever all inputs are held.
    if allowed(ActionKind::Upgrade) && led.mat >= 1 && led.exp >= 1 && led.tok >= 1 {
        return StructuredAction::Upgrade;
    }
    // 2. Collect while resources are visible.
    if allowed(ActionKind::Task) && !obs.nearby.is_empty() {
        return StructuredAction::Task;
    }
    // 3. Spend-inclined: recharge, then buy the lacking input (auction when
    //    cheaper than the shop).
    if spend_inclined(ctx.profile) {
        if allowed(ActionKind::Recharge) && led.tok < ctx.shop_price && led.ccy >= 1 {
            return StructuredAction::Recharge;
        }
        let lacking_is_mat = led.mat <= led.exp;
        if lacking_is_mat && allowed(ActionKind::AuctionBuy) {
            if let Some(ask) = obs.auction.best_ask {
                if ask < ctx.shop_price && led.tok >= ask {
                    return StructuredAction::AuctionBuy { price: ask };
                }
            }
        }
        if allowed(ActionKind::Shop) && led.tok >= ctx.shop_price {
            return StructuredAction::Shop;
        }
    }
    // 4. Grind-inclined: sell surplus MAT one tick above the best bid.
    if grind_inclined(ctx.profile) && allowed(ActionKind::AuctionSell) && led.mat >= 2 {
        let price = obs
            .auction
            .best_bid
            .map(|b| b + 1)
            .unwrap_or(RULE_REFERENCE_PRICE);
        return StructuredAction::AuctionSell { price };
    }
    // 5. Exploration no-op.
    if allowed(ActionKind::Task) {
        return StructuredAction::Task;
    }
    // Retry fallbacks when Task itself just failed.
    if allowed(ActionKind::Recharge) && led.ccy >= 1 && led.tok < ctx.shop_price {
        return StructuredAction::Recharge;
    }
    if allowed(ActionKind::AuctionSell) && led.mat >= 1 {
        return StructuredAction::AuctionSell {
            price: RULE_REFERENCE_PRICE,
        };
    }
    StructuredAction::Upgrade
}

fn rule_based_negotiate(ctx: &NegotiationContext) -> P2pMove {
    let s = &ctx.session;
    let last_move_allowed = s.round + 1 < s.max_rounds;
    match s.role {
        NegotiationRole::Seller => {
            let floor = ctx.best_bid.map(|b| b + 1).unwrap_or(RULE_REFERENCE_PRICE);
            if s.current_offer >= floor {
                P2pMove::Accept
            } else if last_move_allowed {
                P2pMove::Offer { price: floor }
            } else {
                P2pMove::Reject
            }
        }
        NegotiationRole::Buyer => {
            let limit = ctx
                .best_ask
                .map(|a| a.saturating_sub(1).max(1))
                .unwrap_or(RULE_REFERENCE_PRICE - 1);
            if s.current_offer <= limit {
                P2pMove::Accept
            } else if last_move_allowed {
                P2pMove::Offer { price: limit }
            } else {
                P2pMove::Reject
            }
        }
    }
}

impl PolicyBackend for RuleBasedPolicy {
    fn name(&self) -> &'static str {
        "rule"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<DecisionOutcome, PolicyError> {
        Ok(DecisionOutcome::clean(rule_based_decide(ctx)))
    }

    fn negotiate(&mut self, ctx: &NegotiationContext) -> Result<P2pMove, PolicyError> {
        Ok(rule_based_negotiate(ctx))
    }

    fn reflect(
        &mut self,
        window: &[(StructuredAction, String)],
        _sr_prev: &str,
    ) -> Result<String, PolicyError> {
        // Switch strategy tag when recent tasks stopped yielding resources.
        let tasks = window
            .iter()
            .filter(|(a, _)| a.kind() == ActionKind::Task)
            .count();
        let strategy = if tasks > window.len() / 2 {
            "gather"
        } else {
            "trade"
        };
        Ok(strategy.into())
    }
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One scripted step: a primary action plus failure branches consulted on
/// the in-step retry. A branch fires when the failure reason contains its
/// pattern; a pattern starting with `=` requires exact equality; the empty
/// pattern matches anything.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub action: StructuredAction,
    pub on_failure: Vec<(String, StructuredAction)>,
}

impl ScriptStep {
    pub fn plain(action: StructuredAction) -> Self {
        ScriptStep {
            action,
            on_failure: Vec::new(),
        }
    }

    pub fn with_fallbacks(
        action: StructuredAction,
        on_failure: Vec<(String, StructuredAction)>,
    ) -> Self {
        ScriptStep { action, on_failure }
    }
}

/// A cyclic action list with optional negotiation moves and a fixed
/// reflection string. Exists so the full pipeline is testable without any
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
    pub reflection: String,
    pub negotiation: VecDeque<P2pMove>,
}

impl Script {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Script {
            steps,
            reflection: "follow the script".into(),
            negotiation: VecDeque::new(),
        }
    }

    /// Time-rich persona: collect, upgrade, recharge only when TOK alone
    /// blocks an upgrade.
    pub fn grinder() -> Self {
        Script::new(vec![
            ScriptStep::with_fallbacks(
                StructuredAction::Task,
                vec![("no resource".into(), StructuredAction::Upgrade)],
            ),
            ScriptStep::with_fallbacks(
                StructuredAction::Upgrade,
                vec![("=insufficient TOK".into(), StructuredAction::Recharge)],
            ),
        ])
    }

    /// Pay-to-win persona: collect when possible, otherwise buy progress
    /// with recharges and shop purchases.
    pub fn pay_to_win() -> Self {
        let upgrade_or_buy = ScriptStep::with_fallbacks(
            StructuredAction::Upgrade,
            vec![
                ("insufficient TOK".into(), StructuredAction::Recharge),
                (String::new(), StructuredAction::Shop),
            ],
        );
        Script::new(vec![
            ScriptStep::with_fallbacks(
                StructuredAction::Task,
                vec![("no resource".into(), StructuredAction::Upgrade)],
            ),
            upgrade_or_buy.clone(),
            ScriptStep::with_fallbacks(
                StructuredAction::Shop,
                vec![("insufficient TOK".into(), StructuredAction::Recharge)],
            ),
            upgrade_or_buy,
        ])
    }
}

/// Consumes one script entry per step, cycling; the in-step retry picks the
/// entry's first matching failure branch.
pub struct ScriptedPolicy {
    script: Script,
    cursor: usize,
    current: Option<usize>,
}

impl ScriptedPolicy {
    pub fn new(script: Script) -> Self {
        ScriptedPolicy {
            script,
            cursor: 0,
            current: None,
        }
    }
}

fn pattern_matches(pattern: &str, reason: &str) -> bool {
    if let Some(exact) = pattern.strip_prefix('=') {
        reason == exact
    } else {
        reason.contains(pattern)
    }
}

impl PolicyBackend for ScriptedPolicy {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<DecisionOutcome, PolicyError> {
        if self.script.steps.is_empty() {
            return Ok(DecisionOutcome::clean(StructuredAction::Task));
        }
        if ctx.attempt == 0 {
            let idx = self.cursor % self.script.steps.len();
            self.cursor += 1;
            self.current = Some(idx);
            return Ok(DecisionOutcome::clean(self.script.steps[idx].action.clone()));
        }
        let idx = self.current.unwrap_or(0);
        let step = &self.script.steps[idx];
        let reason = ctx.feedback.map(|fb| fb.reason.as_str()).unwrap_or("");
        for (pattern, alt) in &step.on_failure {
            if pattern_matches(pattern, reason) {
                return Ok(DecisionOutcome::clean(alt.clone()));
            }
        }
        Ok(DecisionOutcome::clean(step.action.clone()))
    }

    fn negotiate(&mut self, _ctx: &NegotiationContext) -> Result<P2pMove, PolicyError> {
        Ok(self.script.negotiation.pop_front().unwrap_or(P2pMove::Reject))
    }

    fn reflect(
        &mut self,
        _window: &[(StructuredAction, String)],
        _sr_prev: &str,
    ) -> Result<String, PolicyError> {
        Ok(self.script.reflection.clone())
    }
}

// ---------------------------------------------------------------------------
// Backend selection (config level)
// ---------------------------------------------------------------------------

/// Declarative script form used in config files; actions use the same
/// grammar as ACTION lines (without the prefix).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ScriptSpec {
    /// Built-in script name (`grinder`, `pay_to_win`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<ScriptStepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScriptStepSpec {
    pub action: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_failure: Vec<FailureBranchSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailureBranchSpec {
    /// Substring of the failure reason (or `=exact text`); empty matches all.
    #[serde(default)]
    pub when: String,
    pub action: String,
}

impl ScriptSpec {
    pub fn named(name: &str) -> Self {
        ScriptSpec {
            name: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<Script, PolicyError> {
        if let Some(name) = &self.name {
            let mut script = match name.as_str() {
                "grinder" => Script::grinder(),
                "pay_to_win" => Script::pay_to_win(),
                other => {
                    return Err(PolicyError::BackendFailure(format!(
                        "unknown built-in script `{other}`"
                    )))
                }
            };
            if let Some(r) = &self.reflection {
                script.reflection = r.clone();
            }
            return Ok(script);
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        for spec in &self.steps {
            let (action, _) = parse_action_str(&spec.action)?;
            let mut on_failure = Vec::with_capacity(spec.on_failure.len());
            for branch in &spec.on_failure {
                let (alt, _) = parse_action_str(&branch.action)?;
                on_failure.push((branch.when.clone(), alt));
            }
            steps.push(ScriptStep { action, on_failure });
        }
        let mut script = Script::new(steps);
        if let Some(r) = &self.reflection {
            script.reflection = r.clone();
        }
        Ok(script)
    }
}

/// Which backend drives an agent. Exactly one kind per agent per run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Random,
    RuleBased,
    Scripted { script: ScriptSpec },
    RemoteLlm { endpoint: llm::LlmEndpointConfig },
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    use crate::agent::builtin_profiles;
    use crate::market::BookSummary;

    fn observation_with(
        inventory: crate::economy::ResourceLedger,
        nearby: Vec<(crate::world::MapResource, crate::world::Pos, u32)>,
        best_bid: Option<u64>,
        best_ask: Option<u64>,
    ) -> Observation {
        let auction = BookSummary {
            best_bid,
            best_ask,
            top_bids: best_bid.into_iter().collect(),
            top_asks: best_ask.into_iter().collect(),
            bid_count: best_bid.map_or(0, |_| 1),
            ask_count: best_ask.map_or(0, |_| 1),
        };
        crate::agent::parse_observation(1, inventory, 0, 0, auction, nearby, Vec::new())
    }

    fn ctx_for<'a>(
        obs: &'a Observation,
        profile: &'a AgentProfile,
        feedback: Option<&'a ExecutionFeedback>,
    ) -> DecisionContext<'a> {
        DecisionContext {
            agent: AgentId(0),
            observation: obs,
            profile,
            shop_price: 8,
            attempt: if feedback.is_some() { 1 } else { 0 },
            feedback,
            session: None,
            open_offer: None,
            prompt: PromptContext::default(),
        }
    }

    fn profile_named(name: &str) -> AgentProfile {
        builtin_profiles()
            .into_iter()
            .find(|p| p.name == name)
            .expect("profile exists")
    }

    #[test]
    fn grammar_round_trips_canonical_strings() {
        let cases = [
            StructuredAction::Task,
            StructuredAction::Recharge,
            StructuredAction::Shop,
            StructuredAction::Upgrade,
            StructuredAction::AuctionBuy { price: 6 },
            StructuredAction::AuctionSell { price: 10 },
            StructuredAction::P2p {
                target: None,
                mv: P2pMove::Open { price: 7 },
            },
            StructuredAction::P2p {
                target: Some(AgentId(3)),
                mv: P2pMove::Offer { price: 5 },
            },
            StructuredAction::P2p {
                target: Some(AgentId(2)),
                mv: P2pMove::Accept,
            },
            StructuredAction::P2p {
                target: None,
                mv: P2pMove::Reject,
            },
        ];
        for action in cases {
            let line = render_action_line(&action);
            let (parsed, warnings) = parse_action_line(&line).expect("parse");
            assert_eq!(parsed, action, "round trip failed for {line}");
            assert!(warnings.is_empty());
        }
    }

    #[test]
    fn parser_takes_the_last_action_line() {
        let reply = "I could recharge.\nACTION: Recharge\nOn second thought:\nACTION: Upgrade";
        let (action, _) = parse_action_line(reply).unwrap();
        assert_eq!(action, StructuredAction::Upgrade);
    }

    #[test]
    fn parser_rounds_fractional_prices_half_up() {
        let (action, warnings) = parse_action_line("ACTION: AuctionBuy price=6.4").unwrap();
        assert_eq!(action, StructuredAction::AuctionBuy { price: 6 });
        assert_eq!(warnings.len(), 1);
        let (action, _) = parse_action_line("ACTION: AuctionBuy price=6.5").unwrap();
        assert_eq!(action, StructuredAction::AuctionBuy { price: 7 });
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(parse_action_line("let me think...").is_err());
        assert!(parse_action_line("ACTION: Dance").is_err());
        assert!(parse_action_line("ACTION: AuctionBuy").is_err());
    }

    proptest! {
        #[test]
        fn grammar_round_trip_property(
            kind in 0..7usize,
            price in 1u64..=500,
            target in proptest::option::of(0u32..50),
            mv in 0..4usize,
        ) {
            let action = match kind {
                0 => StructuredAction::Task,
                1 => StructuredAction::Recharge,
                2 => StructuredAction::Shop,
                3 => StructuredAction::AuctionBuy { price },
                4 => StructuredAction::AuctionSell { price },
                5 => StructuredAction::Upgrade,
                _ => StructuredAction::P2p {
                    target: target.map(AgentId),
                    mv: match mv {
                        0 => P2pMove::Open { price },
                        1 => P2pMove::Offer { price },
                        2 => P2pMove::Accept,
                        _ => P2pMove::Reject,
                    },
                },
            };
            let line = render_action_line(&action);
            let (parsed, _) = parse_action_line(&line).unwrap();
            prop_assert_eq!(parsed, action);
        }
    }

    #[test]
    fn random_policy_is_seed_deterministic() {
        let obs = observation_with(Default::default(), Vec::new(), None, None);
        let profile = profile_named("Engaged Grinder");
        let mut a = RandomPolicy::new(ChaCha12Rng::seed_from_u64(42));
        let mut b = RandomPolicy::new(ChaCha12Rng::seed_from_u64(42));
        for _ in 0..32 {
            let ctx = ctx_for(&obs, &profile, None);
            assert_eq!(a.decide(&ctx).unwrap(), b.decide(&ctx).unwrap());
        }
    }

    #[test]
    fn random_policy_frequencies_are_uniform() {
        let obs = observation_with(Default::default(), Vec::new(), None, None);
        let profile = profile_named("Engaged Grinder");
        let mut policy = RandomPolicy::new(ChaCha12Rng::seed_from_u64(7));
        let mut counts = [0u64; 7];
        for _ in 0..7000 {
            let ctx = ctx_for(&obs, &profile, None);
            let out = policy.decide(&ctx).unwrap();
            counts[out.action.kind().index()] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            assert!(
                (850..=1150).contains(c),
                "kind {i} frequency {c} outside 1000 +/- 150"
            );
        }
    }

    #[test]
    fn rule_ladder_upgrades_first() {
        let obs = observation_with(
            crate::economy::ResourceLedger {
                exp: 1,
                mat: 1,
                tok: 1,
                ..Default::default()
            },
            vec![(
                crate::world::MapResource::Mat,
                crate::world::Pos { x: 0, y: 0 },
                1,
            )],
            None,
            None,
        );
        let profile = profile_named("Engaged Grinder");
        assert_eq!(
            rule_based_decide(&ctx_for(&obs, &profile, None)),
            StructuredAction::Upgrade
        );
    }

    #[test]
    fn rule_ladder_spender_recharges_when_broke() {
        let obs = observation_with(
            crate::economy::ResourceLedger {
                ccy: 5,
                ..Default::default()
            },
            Vec::new(),
            None,
            None,
        );
        let profile = profile_named("Spending Enthusiast");
        assert_eq!(
            rule_based_decide(&ctx_for(&obs, &profile, None)),
            StructuredAction::Recharge
        );
    }

    #[test]
    fn rule_ladder_grinder_sells_at_reference_price_on_empty_book() {
        let obs = observation_with(
            crate::economy::ResourceLedger {
                mat: 3,
                ..Default::default()
            },
            Vec::new(),
            None,
            None,
        );
        let profile = profile_named("Engaged Grinder");
        assert_eq!(
            rule_based_decide(&ctx_for(&obs, &profile, None)),
            StructuredAction::AuctionSell { price: 6 }
        );
    }

    #[test]
    fn rule_ladder_never_repeats_the_failed_kind_on_retry() {
        let obs = observation_with(
            crate::economy::ResourceLedger {
                ccy: 0,
                ..Default::default()
            },
            Vec::new(),
            None,
            None,
        );
        let profile = profile_named("Spending Enthusiast");
        let fb = ExecutionFeedback::fail(StructuredAction::Recharge, "insufficient CCY");
        let action = rule_based_decide(&ctx_for(&obs, &profile, Some(&fb)));
        assert_ne!(action.kind(), ActionKind::Recharge);
    }

    #[test]
    fn scripted_policy_cycles_and_branches() {
        let script = Script::new(vec![
            ScriptStep::with_fallbacks(
                StructuredAction::Task,
                vec![("no resource".into(), StructuredAction::Upgrade)],
            ),
            ScriptStep::plain(StructuredAction::Recharge),
        ]);
        let mut policy = ScriptedPolicy::new(script);
        let obs = observation_with(Default::default(), Vec::new(), None, None);
        let profile = profile_named("Casual Gamer");

        let out = policy.decide(&ctx_for(&obs, &profile, None)).unwrap();
        assert_eq!(out.action, StructuredAction::Task);
        // Retry within the same step consults the failure branches.
        let fb = ExecutionFeedback::fail(StructuredAction::Task, "no resource found nearby");
        let out = policy.decide(&ctx_for(&obs, &profile, Some(&fb))).unwrap();
        assert_eq!(out.action, StructuredAction::Upgrade);

        let out = policy.decide(&ctx_for(&obs, &profile, None)).unwrap();
        assert_eq!(out.action, StructuredAction::Recharge);
        // Cycle wraps around.
        let out = policy.decide(&ctx_for(&obs, &profile, None)).unwrap();
        assert_eq!(out.action, StructuredAction::Task);
    }

    #[test]
    fn exact_failure_pattern_requires_equality() {
        assert!(pattern_matches("=insufficient TOK", "insufficient TOK"));
        assert!(!pattern_matches(
            "=insufficient TOK",
            "insufficient MAT, insufficient TOK"
        ));
        assert!(pattern_matches(
            "insufficient TOK",
            "insufficient MAT, insufficient TOK"
        ));
        assert!(pattern_matches("", "anything"));
    }

    #[test]
    fn negotiation_reply_parser_handles_canonical_forms() {
        assert_eq!(
            parse_negotiation_reply("thinking...\nOFFER 6"),
            Some(P2pMove::Offer { price: 6 })
        );
        assert_eq!(parse_negotiation_reply("ACCEPT"), Some(P2pMove::Accept));
        assert_eq!(parse_negotiation_reply("reject"), Some(P2pMove::Reject));
        assert_eq!(parse_negotiation_reply("deal!"), None);
    }
}
