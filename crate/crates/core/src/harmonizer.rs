//! Constrained annotation harmonization.
//!
//! Each page's source annotations are partitioned into disjoint groups; every
//! group becomes exactly one harmonized annotation under the target rule set.
//! A plan produced by any [`Agent`] must pass [`validate_plan`] before
//! [`apply_plan`] will touch it, so no agent can invent or discard annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, Extra, LayoutDataset, PageRecord};
use crate::geometry::BBox;
use crate::taxonomy::{Mapped, RemapError, Taxonomy, TaxonomyMapping};

const DEFAULT_RULES_JSON: &str = include_str!("../data/default_rules.json");

/// Upper bound on [`Convention::merge_gap_fraction`].
pub const MAX_MERGE_GAP_FRACTION: f64 = 0.25;

/// Annotation convention for one target category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convention {
    /// Prose handed verbatim to model-backed agents.
    pub description: String,
    pub mergeable: bool,
    /// Merge gap budget as a fraction of page height.
    #[serde(default)]
    pub merge_gap_fraction: f64,
    #[serde(default = "default_true")]
    pub clip_to_page: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error, PartialEq)]
pub enum RuleSetError {
    #[error("no convention for target category {0:?}")]
    MissingConvention(String),
    #[error("convention for {0:?}, which is not in the target taxonomy")]
    UnknownCategory(String),
    #[error("merge_gap_fraction {value} for {category:?} is outside [0, 0.25]")]
    GapOutOfRange { category: String, value: f64 },
    #[error("invalid rule set: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct RawRuleSet {
    target_taxonomy: Taxonomy,
    conventions: BTreeMap<String, Convention>,
}

/// The target annotation standard: a taxonomy plus one convention per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRuleSet")]
pub struct RuleSet {
    target_taxonomy: Taxonomy,
    conventions: BTreeMap<String, Convention>,
}

impl TryFrom<RawRuleSet> for RuleSet {
    type Error = RuleSetError;

    fn try_from(raw: RawRuleSet) -> Result<Self, Self::Error> {
        RuleSet::new(raw.target_taxonomy, raw.conventions)
    }
}

impl RuleSet {
    pub fn new(target_taxonomy: Taxonomy, conventions: BTreeMap<String, Convention>) -> Result<Self, RuleSetError> {
        for c in target_taxonomy.iter() {
            if !conventions.contains_key(c) {
                return Err(RuleSetError::MissingConvention(c.to_string()));
            }
        }
        for (c, conv) in &conventions {
            if !target_taxonomy.contains(c) {
                return Err(RuleSetError::UnknownCategory(c.clone()));
            }
            let g = conv.merge_gap_fraction;
            if !(0.0..=MAX_MERGE_GAP_FRACTION).contains(&g) {
                return Err(RuleSetError::GapOutOfRange {
                    category: c.clone(),
                    value: g,
                });
            }
        }
        Ok(Self {
            target_taxonomy,
            conventions,
        })
    }

    /// Bundled conventions over the 17-category target taxonomy.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_RULES_JSON).expect("bundled rule set is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, RuleSetError> {
        serde_json::from_str(text).map_err(|e| RuleSetError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RuleSetError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RuleSetError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn target_taxonomy(&self) -> &Taxonomy {
        &self.target_taxonomy
    }

    pub fn convention(&self, category: &str) -> Option<&Convention> {
        self.conventions.get(category)
    }

    pub fn convention_mut(&mut self, category: &str) -> Option<&mut Convention> {
        self.conventions.get_mut(category)
    }

    /// Conventions in taxonomy order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Convention)> {
        self.target_taxonomy.iter().map(move |c| (c, &self.conventions[c]))
    }
}

/// Disjoint covering grouping of a page's annotation ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Vec<u64>>,
}

impl Partition {
    /// Partition violations against the page's id set: empty groups, ids used
    /// more than once, ids not on the page, and page ids left uncovered.
    pub fn violations(&self, page_ids: &BTreeSet<u64>) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
        for (g, ids) in self.groups.iter().enumerate() {
            if ids.is_empty() {
                out.push(Violation::EmptyGroup { group: g });
            }
            for id in ids {
                *seen.entry(*id).or_default() += 1;
            }
        }
        out.extend(
            seen.iter()
                .filter(|(_, n)| **n > 1)
                .map(|(id, _)| Violation::Disjointness { id: *id }),
        );
        out.extend(
            seen.keys()
                .filter(|id| !page_ids.contains(id))
                .map(|id| Violation::UnknownId { id: *id }),
        );
        out.extend(
            page_ids
                .iter()
                .filter(|id| !seen.contains_key(id))
                .map(|id| Violation::Coverage { id: *id }),
        );
        out
    }
}

/// Instruction for one group: the category it becomes and an optional
/// replacement box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDirective {
    pub ids: Vec<u64>,
    pub target_category: String,
    #[serde(rename = "bbox", default, skip_serializing_if = "Option::is_none")]
    pub bbox_override: Option<BBox>,
}

/// Declarative input to [`apply_plan`]; serializes as `{"groups": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizationPlan {
    pub groups: Vec<GroupDirective>,
}

impl HarmonizationPlan {
    pub fn partition(&self) -> Partition {
        Partition {
            groups: self.groups.iter().map(|g| g.ids.clone()).collect(),
        }
    }
}

/// One reason a plan is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyGroup { group: usize },
    Disjointness { id: u64 },
    UnknownId { id: u64 },
    Coverage { id: u64 },
    UnknownCategory { group: usize, category: String },
    MalformedOverride { group: usize },
    OverrideOutOfPage { group: usize },
    OverrideDetached { group: usize },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::EmptyGroup { .. } => "empty_group",
            Violation::Disjointness { .. } => "disjointness",
            Violation::UnknownId { .. } => "unknown_id",
            Violation::Coverage { .. } => "coverage",
            Violation::UnknownCategory { .. } => "unknown_category",
            Violation::MalformedOverride { .. } => "malformed_override",
            Violation::OverrideOutOfPage { .. } => "override_out_of_page",
            Violation::OverrideDetached { .. } => "override_detached",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGroup { group } => write!(f, "group {group} is empty"),
            Violation::Disjointness { id } => write!(f, "disjointness: id {id} is used more than once"),
            Violation::UnknownId { id } => write!(f, "unknown id {id}: no such annotation on this page"),
            Violation::Coverage { id } => write!(f, "coverage: id {id} is not assigned to any group"),
            Violation::UnknownCategory { group, category } => {
                write!(f, "group {group}: {category:?} is not a target category")
            }
            Violation::MalformedOverride { group } => write!(f, "group {group}: bbox is not a valid box"),
            Violation::OverrideOutOfPage { group } => write!(f, "group {group}: bbox extends outside the page"),
            Violation::OverrideDetached { group } => {
                write!(
                    f,
                    "group {group}: bbox does not overlap any of the group's source boxes"
                )
            }
        }
    }
}

/// Checks a plan against the page and rule set. Returns every violation found.
pub fn validate_plan(page: &PageRecord, plan: &HarmonizationPlan, rules: &RuleSet) -> Result<(), Vec<Violation>> {
    let page_ids: BTreeSet<u64> = page.annotations.iter().map(|a| a.id).collect();
    let mut out = plan.partition().violations(&page_ids);
    for (g, d) in plan.groups.iter().enumerate() {
        if !rules.target_taxonomy().contains(&d.target_category) {
            out.push(Violation::UnknownCategory {
                group: g,
                category: d.target_category.clone(),
            });
        }
    }
    for (g, d) in plan.groups.iter().enumerate() {
        let Some(b) = d.bbox_override else { continue };
        if !b.is_well_formed() || b.area() <= 0.0 {
            out.push(Violation::MalformedOverride { group: g });
            continue;
        }
        if !b.within_page(page.width, page.height) {
            out.push(Violation::OverrideOutOfPage { group: g });
        }
        let attached = d
            .ids
            .iter()
            .filter_map(|id| page.annotation(*id))
            .any(|a| a.bbox.overlaps(&b));
        if !attached {
            out.push(Violation::OverrideDetached { group: g });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Harmonized page plus the source ids behind each output annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizedPage {
    pub page: PageRecord,
    /// Output annotation id to the sorted source ids it was built from.
    pub provenance: BTreeMap<u64, Vec<u64>>,
}

#[derive(Debug, Error)]
pub enum HarmonizeError {
    #[error("plan for page {image_id} violates constraints: {}", join(violations))]
    Contract { image_id: u64, violations: Vec<Violation> },
    #[error("page {image_id}: {source}")]
    Agent {
        image_id: u64,
        #[source]
        source: AgentError,
    },
    #[error("page {image_id}: {source}")]
    Remap {
        image_id: u64,
        #[source]
        source: AgentError,
    },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Applies a validated plan.
///
/// Groups are emitted in ascending order of their smallest source id, and each
/// output annotation takes that smallest id. Without an override the box is the
/// bounding union of the group's sources; it is then clipped to the page when
/// the category convention asks for it.
pub fn apply_plan(
    page: &PageRecord,
    plan: &HarmonizationPlan,
    rules: &RuleSet,
) -> Result<HarmonizedPage, HarmonizeError> {
    validate_plan(page, plan, rules).map_err(|violations| HarmonizeError::Contract {
        image_id: page.image_id,
        violations,
    })?;

    let mut groups: Vec<(Vec<u64>, &GroupDirective)> = plan
        .groups
        .iter()
        .map(|d| {
            let mut ids = d.ids.clone();
            ids.sort_unstable();
            (ids, d)
        })
        .collect();
    groups.sort_by_key(|(ids, _)| ids[0]);

    let mut annotations = Vec::with_capacity(groups.len());
    let mut provenance = BTreeMap::new();
    for (ids, d) in groups {
        let sources: Vec<&Annotation> = ids.iter().filter_map(|id| page.annotation(*id)).collect();
        let clip = rules
            .convention(&d.target_category)
            .map(|c| c.clip_to_page)
            .unwrap_or(false);
        let mut bbox = d
            .bbox_override
            .unwrap_or_else(|| BBox::hull_of(sources.iter().map(|a| &a.bbox)).expect("validated groups are non-empty"));
        if clip {
            bbox = bbox.clamp_to_page(page.width, page.height);
        }
        let out_id = ids[0];
        let annotation = if let [single] = sources.as_slice() {
            Annotation {
                id: out_id,
                bbox,
                category: d.target_category.clone(),
                extra: single.extra.clone(),
            }
        } else {
            Annotation {
                id: out_id,
                bbox,
                category: d.target_category.clone(),
                extra: Extra::new(),
            }
        };
        annotations.push(annotation);
        provenance.insert(out_id, ids);
    }

    Ok(HarmonizedPage {
        page: PageRecord {
            annotations,
            ..page.clone()
        },
        provenance,
    })
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Remap(#[from] RemapError),
    #[error("mapping drops category {0:?}; harmonization may not discard annotations")]
    DropNotAllowed(String),
    #[error("page image unavailable: {0}")]
    Grounding(String),
    #[error("agent gave up after {attempts} attempt(s): {reason}")]
    Failed { attempts: u32, reason: String },
}

/// Proposes a harmonization plan for one page.
pub trait Agent: Send + Sync {
    fn name(&self) -> &str;

    fn propose(
        &self,
        page: &PageRecord,
        mapping: &TaxonomyMapping,
        rules: &RuleSet,
    ) -> Result<HarmonizationPlan, AgentError>;

    /// True when `propose` already validates and retries on its own, so the
    /// job asks it once per page before applying the failure policy.
    fn retries_internally(&self) -> bool {
        false
    }
}

/// Maps one category into the rule set's taxonomy, refusing drops.
pub fn remap_category<'m>(
    mapping: &'m TaxonomyMapping,
    rules: &RuleSet,
    category: &str,
) -> Result<&'m str, AgentError> {
    match mapping.map_label(category)? {
        Mapped::To(t) if rules.target_taxonomy().contains(t) => Ok(t),
        Mapped::To(t) => Err(AgentError::Remap(RemapError::UnknownTarget {
            mapping: format!("{}->{}", mapping.source, mapping.target),
            category: t.to_string(),
        })),
        Mapped::Dropped => Err(AgentError::DropNotAllowed(category.to_string())),
    }
}

/// All-singleton plan carrying only the category remap.
pub fn identity_plan(
    page: &PageRecord,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
) -> Result<HarmonizationPlan, AgentError> {
    let mut anns: Vec<&Annotation> = page.annotations.iter().collect();
    anns.sort_by_key(|a| a.id);
    let groups = anns
        .into_iter()
        .map(|a| {
            Ok(GroupDirective {
                ids: vec![a.id],
                target_category: remap_category(mapping, rules, &a.category)?.to_string(),
                bbox_override: None,
            })
        })
        .collect::<Result<_, AgentError>>()?;
    Ok(HarmonizationPlan { groups })
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Deterministic rule-based proposal.
///
/// Categories are remapped first. Within each mergeable target category, two
/// boxes are linked when both their horizontal and vertical separations are at
/// most `merge_gap_fraction * page height`; linked components become groups.
/// Everything else stays a singleton. Groups are ordered by smallest id.
pub fn rule_agent_propose(
    page: &PageRecord,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
) -> Result<HarmonizationPlan, AgentError> {
    let mut anns: Vec<(&Annotation, &str)> = page
        .annotations
        .iter()
        .map(|a| Ok((a, remap_category(mapping, rules, &a.category)?)))
        .collect::<Result<_, AgentError>>()?;
    anns.sort_by_key(|(a, _)| a.id);

    let mut dsu = DisjointSet::new(anns.len());
    for i in 0..anns.len() {
        let (a, cat) = anns[i];
        let Some(conv) = rules.convention(cat) else { continue };
        if !conv.mergeable {
            continue;
        }
        let budget = conv.merge_gap_fraction * page.height;
        for (j, &(b, cat_b)) in anns.iter().enumerate().skip(i + 1) {
            if cat_b != cat {
                continue;
            }
            let (dx, dy) = a.bbox.separation(&b.bbox);
            if dx <= budget && dy <= budget {
                dsu.union(i, j);
            }
        }
    }

    // roots are the smallest member index, and indices follow id order
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..anns.len() {
        let r = dsu.find(i);
        by_root.entry(r).or_default().push(i);
    }
    let groups = by_root
        .into_values()
        .map(|members| GroupDirective {
            ids: members.iter().map(|&i| anns[i].0.id).collect(),
            target_category: anns[members[0]].1.to_string(),
            bbox_override: None,
        })
        .collect();
    Ok(HarmonizationPlan { groups })
}

/// The deterministic reference agent.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleAgent;

impl Agent for RuleAgent {
    fn name(&self) -> &str {
        "rule"
    }

    fn propose(
        &self,
        page: &PageRecord,
        mapping: &TaxonomyMapping,
        rules: &RuleSet,
    ) -> Result<HarmonizationPlan, AgentError> {
        rule_agent_propose(page, mapping, rules)
    }
}

/// What to do when a page's plan cannot be obtained or is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    FailJob,
    /// Fall back to a remap-only copy of the page.
    IdentityPage,
    /// Ask the agent up to `1 + n` times, then fall back to a remap-only copy.
    RetryThenIdentity(u32),
}

impl Default for FailurePolicy {
    fn default() -> Self {
        FailurePolicy::RetryThenIdentity(2)
    }
}

impl fmt::Display for FailurePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailurePolicy::FailJob => f.write_str("fail_job"),
            FailurePolicy::IdentityPage => f.write_str("identity_page"),
            FailurePolicy::RetryThenIdentity(n) => write!(f, "retry_{n}_then_identity"),
        }
    }
}

impl FromStr for FailurePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail_job" => Ok(FailurePolicy::FailJob),
            "identity_page" => Ok(FailurePolicy::IdentityPage),
            _ => s
                .strip_prefix("retry_")
                .and_then(|r| r.strip_suffix("_then_identity"))
                .and_then(|n| n.parse().ok())
                .map(FailurePolicy::RetryThenIdentity)
                .ok_or_else(|| {
                    format!(
                        "unknown failure policy {s:?} (expected fail_job, identity_page or retry_<n>_then_identity)"
                    )
                }),
        }
    }
}

impl FailurePolicy {
    fn attempts(&self) -> u32 {
        match self {
            FailurePolicy::FailJob | FailurePolicy::IdentityPage => 1,
            FailurePolicy::RetryThenIdentity(n) => 1 + n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PageOutcome {
    Accepted,
    Fallback,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageReport {
    pub image_id: u64,
    pub outcome: PageOutcome,
    pub attempts: u32,
    pub source_count: usize,
    pub harmonized_count: usize,
    pub reasons: Vec<String>,
    pub provenance: BTreeMap<u64, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobReport {
    pub dataset: String,
    pub agent: String,
    pub failure_policy: String,
    pub pages_total: usize,
    pub pages_accepted: usize,
    pub pages_fallback: usize,
    pub pages_empty: usize,
    pub annotations_in: usize,
    pub annotations_out: usize,
    /// Groups with more than one source annotation.
    pub merged_groups: usize,
    /// Source annotations absorbed into merged groups.
    pub merged_sources: usize,
    /// Group size to number of groups.
    pub group_size_histogram: BTreeMap<usize, usize>,
    /// Violation kind (or `agent_error`) to number of rejected attempts.
    pub rejection_reasons: BTreeMap<String, usize>,
    pub pages: Vec<PageReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct HarmonizeOptions {
    pub policy: FailurePolicy,
    pub workers: usize,
}

impl Default for HarmonizeOptions {
    fn default() -> Self {
        Self {
            policy: FailurePolicy::default(),
            workers: 1,
        }
    }
}

struct PageResult {
    harmonized: HarmonizedPage,
    report: PageReport,
    rejections: Vec<String>,
}

fn harmonize_page(
    page: &PageRecord,
    agent: &dyn Agent,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
    policy: FailurePolicy,
) -> Result<PageResult, HarmonizeError> {
    if page.annotations.is_empty() {
        return Ok(PageResult {
            harmonized: HarmonizedPage {
                page: page.clone(),
                provenance: BTreeMap::new(),
            },
            report: PageReport {
                image_id: page.image_id,
                outcome: PageOutcome::Empty,
                attempts: 0,
                source_count: 0,
                harmonized_count: 0,
                reasons: Vec::new(),
                provenance: BTreeMap::new(),
            },
            rejections: Vec::new(),
        });
    }

    let mut reasons = Vec::new();
    let mut rejections = Vec::new();
    let mut attempts = 0;
    let mut accepted = None;
    let mut last_error = None;
    let max_attempts = if agent.retries_internally() {
        1
    } else {
        policy.attempts()
    };
    while attempts < max_attempts {
        attempts += 1;
        match agent.propose(page, mapping, rules) {
            Ok(plan) => match validate_plan(page, &plan, rules) {
                Ok(()) => {
                    accepted = Some(plan);
                    break;
                }
                Err(violations) => {
                    rejections.extend(violations.iter().map(|v| v.kind().to_string()));
                    reasons.push(join(&violations));
                }
            },
            // mapping problems are data errors; retrying cannot fix them
            Err(e @ (AgentError::Remap(_) | AgentError::DropNotAllowed(_))) => {
                return Err(HarmonizeError::Remap {
                    image_id: page.image_id,
                    source: e,
                });
            }
            Err(e) => {
                rejections.push("agent_error".to_string());
                reasons.push(e.to_string());
                last_error = Some(e);
            }
        }
    }

    let (plan, outcome) = match accepted {
        Some(plan) => (plan, PageOutcome::Accepted),
        None if policy == FailurePolicy::FailJob => {
            return Err(HarmonizeError::Agent {
                image_id: page.image_id,
                source: last_error.unwrap_or_else(|| AgentError::Failed {
                    attempts,
                    reason: reasons.join(" | "),
                }),
            });
        }
        None => {
            log::warn!("page {}: falling back to remap-only copy", page.image_id);
            let plan = identity_plan(page, mapping, rules).map_err(|source| HarmonizeError::Remap {
                image_id: page.image_id,
                source,
            })?;
            (plan, PageOutcome::Fallback)
        }
    };
    let harmonized = apply_plan(page, &plan, rules)?;
    Ok(PageResult {
        report: PageReport {
            image_id: page.image_id,
            outcome,
            attempts,
            source_count: page.annotations.len(),
            harmonized_count: harmonized.page.annotations.len(),
            reasons,
            provenance: harmonized.provenance.clone(),
        },
        harmonized,
        rejections,
    })
}

/// Harmonizes every page of a dataset with `agent`.
///
/// Pages are processed independently on up to `options.workers` threads and
/// reassembled in input order, so the output does not depend on the worker
/// count.
pub fn harmonize_dataset(
    dataset: &LayoutDataset,
    agent: &dyn Agent,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
    options: HarmonizeOptions,
) -> Result<(LayoutDataset, JobReport), HarmonizeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| HarmonizeError::Pool(e.to_string()))?;
    let results: Vec<Result<PageResult, HarmonizeError>> = pool.install(|| {
        dataset
            .pages
            .par_iter()
            .map(|p| harmonize_page(p, agent, mapping, rules, options.policy))
            .collect()
    });

    let mut pages = Vec::with_capacity(results.len());
    let mut report = JobReport {
        dataset: dataset.name.clone(),
        agent: agent.name().to_string(),
        failure_policy: options.policy.to_string(),
        pages_total: dataset.pages.len(),
        pages_accepted: 0,
        pages_fallback: 0,
        pages_empty: 0,
        annotations_in: 0,
        annotations_out: 0,
        merged_groups: 0,
        merged_sources: 0,
        group_size_histogram: BTreeMap::new(),
        rejection_reasons: BTreeMap::new(),
        pages: Vec::with_capacity(dataset.pages.len()),
    };
    for r in results {
        let r = r?;
        match r.report.outcome {
            PageOutcome::Accepted => report.pages_accepted += 1,
            PageOutcome::Fallback => report.pages_fallback += 1,
            PageOutcome::Empty => report.pages_empty += 1,
        }
        report.annotations_in += r.report.source_count;
        report.annotations_out += r.report.harmonized_count;
        for ids in r.harmonized.provenance.values() {
            *report.group_size_histogram.entry(ids.len()).or_default() += 1;
            if ids.len() > 1 {
                report.merged_groups += 1;
                report.merged_sources += ids.len();
            }
        }
        for k in r.rejections {
            *report.rejection_reasons.entry(k).or_default() += 1;
        }
        pages.push(r.harmonized.page);
        report.pages.push(r.report);
    }

    Ok((
        LayoutDataset {
            name: dataset.name.clone(),
            taxonomy: rules.target_taxonomy().clone(),
            pages,
            extra: dataset.extra.clone(),
        },
        report,
    ))
}
