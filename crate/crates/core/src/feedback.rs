//! Merging human corrections, critic suggestions and safety signals into one
//! bounded plan for the next delegate turn.
//!
//! Precedence is human > safety > clarity > persuasion. Critic items in the
//! persuasion category form the lowest class; every other critic item ranks as
//! clarity. Human and safety items are kept verbatim and never dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety::Trigger;
use crate::text::token_cost;

/// Critic items allowed per category in one plan.
pub const DIVERSITY_CAP: usize = 2;
/// Items older than this many turns are candidates for compression.
pub const STALE_AFTER_TURNS: u32 = 5;
/// Stale items scoring below this on recency x relevance are compressed.
pub const STALE_SCORE_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Human,
    Safety,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Clarity,
    Persuasion,
    Constraint,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Active,
    Compressed,
    Dropped,
    LoggedIgnored,
}

/// What an item constrains: a topic key and the stance taken on it. Two
/// items conflict when they share a key and take different stances.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Target {
    pub key: String,
    pub stance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub item_id: String,
    pub channel: Channel,
    pub category: Category,
    pub text: String,
    pub relevance: f64,
    pub actionability: f64,
    pub turn_created: u32,
    pub cost_tokens: u32,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

impl FeedbackItem {
    pub fn new(item_id: impl Into<String>, channel: Channel, category: Category, text: impl Into<String>, turn: u32) -> Self {
        let text = text.into();
        FeedbackItem {
            item_id: item_id.into(),
            channel,
            category,
            cost_tokens: token_cost(&text).max(1),
            text,
            relevance: 1.0,
            actionability: 1.0,
            turn_created: turn,
            status: ItemStatus::Active,
            target: None,
        }
    }

    pub fn targeting(mut self, key: impl Into<String>, stance: impl Into<String>) -> Self {
        self.target = Some(Target { key: key.into(), stance: stance.into() });
        self
    }

    pub fn scored(mut self, relevance: f64, actionability: f64) -> Self {
        self.relevance = relevance.clamp(0.0, 1.0);
        self.actionability = actionability.clamp(0.0, 1.0);
        self
    }

    pub fn with_cost(mut self, cost_tokens: u32) -> Self {
        self.cost_tokens = cost_tokens;
        self
    }

    pub fn class(&self) -> PrecedenceClass {
        match (self.channel, self.category) {
            (Channel::Human, _) => PrecedenceClass::Human,
            (Channel::Safety, _) => PrecedenceClass::Safety,
            (Channel::Critic, Category::Persuasion) => PrecedenceClass::Persuasion,
            (Channel::Critic, _) => PrecedenceClass::Clarity,
        }
    }

    pub fn conflicts_with(&self, other: &FeedbackItem) -> bool {
        match (&self.target, &other.target) {
            (Some(a), Some(b)) => a.key == b.key && a.stance != b.stance,
            _ => false,
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self.status, ItemStatus::Active | ItemStatus::Compressed)
    }

    fn score(&self) -> f64 {
        self.relevance * self.actionability
    }

    fn compress(&mut self) {
        let words: Vec<&str> = self.text.split_whitespace().take(8).collect();
        self.text = format!("[summary] {}", words.join(" "));
        self.cost_tokens = compressed_cost(self.cost_tokens);
        self.status = ItemStatus::Compressed;
    }
}

/// Cost of an item after compression to a summary stub.
pub fn compressed_cost(cost: u32) -> u32 {
    cost.div_ceil(4).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecedenceClass {
    Human,
    Safety,
    Clarity,
    Persuasion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictRule {
    Precedence,
    Recency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub winner: String,
    pub loser: String,
    pub rule: ConflictRule,
    pub key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Persuasion withheld until the information gate is met.
    Gate,
    Diversity,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub kept: Vec<FeedbackItem>,
    pub ignored: Vec<FeedbackItem>,
    pub conflicts: Vec<ConflictRecord>,
    /// Set when a human directive collides with a safety signal, or a safety
    /// signal overrules a critic suggestion.
    pub escalation: Option<Trigger>,
}

/// Keep the highest-precedence item on every contested key; within a class
/// the most recent item wins. Each loser gets exactly one conflict record.
pub fn resolve_conflicts(items: Vec<FeedbackItem>) -> Resolution {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&items[a], &items[b]);
        x.class().cmp(&y.class()).then(y.turn_created.cmp(&x.turn_created)).then(b.cmp(&a))
    });
    let mut kept: Vec<usize> = Vec::new();
    let mut ignored = Vec::new();
    let mut conflicts = Vec::new();
    let mut escalation = None;
    for i in order {
        let item = &items[i];
        let rival = kept.iter().copied().find(|&k| items[k].conflicts_with(item));
        match rival {
            Some(k) if items[k].channel == Channel::Human && item.channel == Channel::Safety => {
                escalation = Some(Trigger::BoundaryViolation);
                kept.push(i);
            }
            Some(k) => {
                let winner = &items[k];
                if winner.channel == Channel::Safety && item.channel == Channel::Critic {
                    escalation = Some(Trigger::BoundaryViolation);
                }
                conflicts.push(ConflictRecord {
                    winner: winner.item_id.clone(),
                    loser: item.item_id.clone(),
                    rule: if winner.class() == item.class() { ConflictRule::Recency } else { ConflictRule::Precedence },
                    key: item.target.as_ref().map(|t| t.key.clone()).unwrap_or_default(),
                });
                ignored.push(i);
            }
            None => kept.push(i),
        }
    }
    kept.sort_by_key(|&i| (items[i].class(), i));
    let mut items: Vec<Option<FeedbackItem>> = items.into_iter().map(Some).collect();
    let kept = kept.into_iter().map(|i| items[i].take().expect("kept once")).collect();
    let ignored = ignored
        .into_iter()
        .map(|i| {
            let mut it = items[i].take().expect("ignored once");
            it.status = ItemStatus::LoggedIgnored;
            it
        })
        .collect();
    Resolution { kept, ignored, conflicts, escalation }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub budget: u32,
    pub human: u32,
    pub safety: u32,
    pub clarity: u32,
    /// Tokens left for ranked critic suggestions once the protected tiers are placed.
    pub critic_pool: u32,
    pub critic_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedPlan {
    /// Items the delegate must honor, in precedence order.
    pub directives: Vec<FeedbackItem>,
    /// Everything not in `directives`, with its final status.
    pub excluded: Vec<FeedbackItem>,
    pub total_cost_tokens: u32,
    pub conflicts_resolved: Vec<ConflictRecord>,
    pub exclusions: Vec<Exclusion>,
    pub allocation: BudgetAllocation,
    pub escalation: Option<Trigger>,
}

impl MergedPlan {
    pub fn empty(budget: u32) -> Self {
        MergedPlan {
            directives: Vec::new(),
            excluded: Vec::new(),
            total_cost_tokens: 0,
            conflicts_resolved: Vec::new(),
            exclusions: Vec::new(),
            allocation: BudgetAllocation { budget, critic_pool: budget, ..Default::default() },
            escalation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum MergeError {
    #[error("budget of {budget} tokens cannot hold the {required} tokens of human and safety items")]
    BudgetStarvation { required: u32, budget: u32 },
    #[error("budget must be positive")]
    ZeroBudget,
}

/// Combine the three channels into one plan under `budget_tokens`.
///
/// Tiers are placed in order: human, safety, critic items in the clarity
/// category, then the remaining critic items ranked by relevance x
/// actionability with persuasion last. Items that do
/// not fit are compressed if the stub fits, otherwise dropped with a budget
/// record.
pub fn merge_channels(
    critic: Vec<FeedbackItem>,
    human: Vec<FeedbackItem>,
    safety: Vec<FeedbackItem>,
    budget_tokens: u32,
    tci_gate_met: bool,
) -> Result<MergedPlan, MergeError> {
    if budget_tokens == 0 {
        return Err(MergeError::ZeroBudget);
    }
    let protected: u32 = human.iter().chain(&safety).filter(|i| i.is_live()).map(|i| i.cost_tokens).sum();
    if protected > budget_tokens {
        return Err(MergeError::BudgetStarvation { required: protected, budget: budget_tokens });
    }

    let mut excluded = Vec::new();
    let mut exclusions = Vec::new();
    let exclude = |mut item: FeedbackItem, status, reason, excluded: &mut Vec<FeedbackItem>, exclusions: &mut Vec<Exclusion>| {
        item.status = status;
        exclusions.push(Exclusion { item_id: item.item_id.clone(), reason });
        excluded.push(item);
    };

    let mut candidates: Vec<FeedbackItem> = human.into_iter().chain(safety).collect();
    for item in critic {
        if !tci_gate_met && item.category == Category::Persuasion {
            exclude(item, ItemStatus::Dropped, ExclusionReason::Gate, &mut excluded, &mut exclusions);
        } else {
            candidates.push(item);
        }
    }

    let resolution = resolve_conflicts(candidates);
    excluded.extend(resolution.ignored);

    let (protected_items, mut ranked): (Vec<FeedbackItem>, Vec<FeedbackItem>) =
        resolution.kept.into_iter().partition(|i| i.channel != Channel::Critic);
    ranked.sort_by(|a, b| {
        let tier = |i: &FeedbackItem| match i.category {
            Category::Clarity => 0,
            Category::Persuasion => 2,
            _ => 1,
        };
        tier(a).cmp(&tier(b)).then(b.score().total_cmp(&a.score())).then(b.turn_created.cmp(&a.turn_created))
    });

    let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
    let mut diverse = Vec::new();
    for item in ranked {
        let n = per_category.entry(item.category).or_default();
        if *n >= DIVERSITY_CAP {
            exclude(item, ItemStatus::Dropped, ExclusionReason::Diversity, &mut excluded, &mut exclusions);
        } else {
            *n += 1;
            diverse.push(item);
        }
    }

    let mut alloc = BudgetAllocation { budget: budget_tokens, ..Default::default() };
    for i in &protected_items {
        match i.channel {
            Channel::Human => alloc.human += i.cost_tokens,
            _ => alloc.safety += i.cost_tokens,
        }
    }
    let mut used = alloc.human + alloc.safety;
    let mut directives = protected_items;
    let mut pool_opened = false;
    for mut item in diverse {
        if item.category != Category::Clarity && !pool_opened {
            alloc.critic_pool = budget_tokens - used;
            pool_opened = true;
        }
        let fits = used + item.cost_tokens <= budget_tokens;
        let stub_fits = used + compressed_cost(item.cost_tokens) <= budget_tokens;
        if !fits && stub_fits && item.category != Category::Persuasion {
            item.compress();
        }
        if used + item.cost_tokens <= budget_tokens {
            used += item.cost_tokens;
            if item.category == Category::Clarity {
                alloc.clarity += item.cost_tokens;
            } else {
                alloc.critic_used += item.cost_tokens;
            }
            directives.push(item);
        } else {
            exclude(item, ItemStatus::Dropped, ExclusionReason::Budget, &mut excluded, &mut exclusions);
        }
    }
    if !pool_opened {
        alloc.critic_pool = budget_tokens - used;
    }
    Ok(MergedPlan {
        total_cost_tokens: used,
        directives,
        excluded,
        conflicts_resolved: resolution.conflicts,
        exclusions,
        allocation: alloc,
        escalation: resolution.escalation,
    })
}

/// Compress critic items older than [`STALE_AFTER_TURNS`] whose
/// `relevance / (1 + age / 5)` falls below [`STALE_SCORE_FLOOR`]. Human and
/// safety items are never touched.
pub fn decay_stale(items: Vec<FeedbackItem>, current_turn: u32) -> Vec<FeedbackItem> {
    items
        .into_iter()
        .map(|mut item| {
            let age = current_turn.saturating_sub(item.turn_created);
            if item.channel == Channel::Critic && item.status == ItemStatus::Active && age > STALE_AFTER_TURNS {
                let recency = 1.0 / (1.0 + age as f64 / STALE_AFTER_TURNS as f64);
                if item.relevance * recency < STALE_SCORE_FLOOR {
                    item.compress();
                }
            }
            item
        })
        .collect()
}

/// Per-session feedback memory: the live items plus the history of
/// human-versus-critic collisions used for repeated-conflict escalation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackStore {
    pub items: Vec<FeedbackItem>,
    pub human_critic_conflicts: BTreeMap<String, BTreeSet<u32>>,
    /// Keys already escalated for repeated conflict.
    pub escalated_keys: BTreeSet<String>,
    next_id: u64,
}

impl FeedbackStore {
    pub fn next_id(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}-{}", self.next_id)
    }

    pub fn push(&mut self, item: FeedbackItem) {
        self.items.push(item);
    }

    pub fn human(&self) -> impl Iterator<Item = &FeedbackItem> {
        self.items.iter().filter(|i| i.channel == Channel::Human)
    }

    /// Merge the stored items with this turn's critic suggestions and safety
    /// signals. Critic items stay in the store until a merge retires them;
    /// safety signals apply to this turn only.
    pub fn plan_turn(
        &mut self,
        turn: u32,
        critic: Vec<FeedbackItem>,
        safety: Vec<FeedbackItem>,
        budget: u32,
        gate_met: bool,
    ) -> Result<MergedPlan, MergeError> {
        self.items.extend(critic);
        self.items = decay_stale(std::mem::take(&mut self.items), turn);
        let live = |c: Channel| -> Vec<FeedbackItem> {
            self.items.iter().filter(|i| i.channel == c && i.is_live()).cloned().collect()
        };
        let human = live(Channel::Human);
        let mut plan = merge_channels(live(Channel::Critic), human.clone(), safety, budget, gate_met)?;
        for e in plan.excluded.iter().filter(|e| e.channel == Channel::Critic) {
            if let Some(stored) = self.items.iter_mut().find(|i| i.item_id == e.item_id) {
                stored.status = e.status;
            }
        }
        for c in &plan.conflicts_resolved {
            let human_won = human.iter().any(|h| h.item_id == c.winner);
            let critic_lost = plan.excluded.iter().any(|e| e.item_id == c.loser && e.channel == Channel::Critic);
            if human_won && critic_lost {
                self.human_critic_conflicts.entry(c.key.clone()).or_default().insert(turn);
            }
        }
        let repeated = self
            .human_critic_conflicts
            .iter()
            .find(|(k, turns)| turns.len() >= 2 && !self.escalated_keys.contains(*k))
            .map(|(k, _)| k.clone());
        if let Some(key) = repeated {
            self.escalated_keys.insert(key);
            plan.escalation.get_or_insert(Trigger::HumanCriticConflict);
        }
        Ok(plan)
    }
}
