//! Staged data-mixture planning: source inventories, per-stage recipes and
//! inventory operations, sampling plans with oversampling epochs, phase
//! boundaries, and the learning-rate / batch-size schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("stage {stage}: proportions sum to {sum}, expected 1")]
    ProportionSumError { stage: String, sum: f64 },
    #[error("stage {stage}: {reason}")]
    BadRecipe { stage: String, reason: String },
    #[error("stage {stage}: recipe asks for {domain} but no {domain} source has tokens available")]
    EmptyDomain { stage: String, domain: Domain },
    #[error("unknown {domain} source {name:?}")]
    UnknownSource { domain: Domain, name: String },
    #[error("bad stage-op parameter: {0}")]
    BadParam(String),
    #[error("inventory: {0}")]
    BadInventory(String),
    #[error("no stage recipes given")]
    EmptyPlan,
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("batch ramp: {0}")]
    BadRamp(String),
    #[error("tokens {tokens_b} B outside the schedule range [0, {total_b}]")]
    OutOfRange { tokens_b: f64, total_b: f64 },
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

/// Data domains of the pretraining corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Web,
    Wiki,
    Paper,
    Textbook,
    Code,
    Knowledge,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Web,
        Domain::Wiki,
        Domain::Paper,
        Domain::Textbook,
        Domain::Code,
        Domain::Knowledge,
    ];
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Code,
    Other,
}

fn default_tier() -> u32 {
    1
}

/// One corpus source. Lower `quality_tier` values are preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub name: String,
    pub domain: Domain,
    pub language: Language,
    pub available_tokens_b: f64,
    #[serde(default)]
    pub batch: u32,
    #[serde(default = "default_tier")]
    pub quality_tier: u32,
}

/// Sources plus any resampling directives recorded for the current stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inventory {
    sources: Vec<DataSource>,
    directives: BTreeMap<Domain, BTreeMap<String, f64>>,
}

impl Inventory {
    pub fn new(sources: Vec<DataSource>) -> Result<Self> {
        let mut inv = Inventory::default();
        for s in sources {
            inv.push(s)?;
        }
        Ok(inv)
    }

    fn push(&mut self, source: DataSource) -> Result<()> {
        if !(source.available_tokens_b.is_finite() && source.available_tokens_b >= 0.0) {
            return Err(PlanError::BadInventory(format!(
                "source {:?}: available_tokens_b must be finite and >= 0, got {}",
                source.name, source.available_tokens_b
            )));
        }
        if self.sources.iter().any(|s| s.name == source.name) {
            return Err(PlanError::BadInventory(format!("duplicate source name {:?}", source.name)));
        }
        self.sources.push(source);
        Ok(())
    }

    /// Reads a JSON list of [`DataSource`].
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file_err = |reason: String| PlanError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let sources: Vec<DataSource> = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        Self::new(sources)
    }

    pub fn sources(&self) -> &[DataSource] {
        &self.sources
    }

    pub fn source(&self, name: &str) -> Option<&DataSource> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn in_domain(&self, domain: Domain) -> impl Iterator<Item = &DataSource> {
        self.sources.iter().filter(move |s| s.domain == domain)
    }

    /// Within-domain target distribution set by a `Resample` op.
    pub fn directive(&self, domain: Domain) -> Option<&BTreeMap<String, f64>> {
        self.directives.get(&domain)
    }

    pub fn clear_directives(&mut self) {
        self.directives.clear();
    }

    fn resolve(&self, domain: Domain, name: &str) -> Result<usize> {
        self.sources
            .iter()
            .position(|s| s.name == name && s.domain == domain)
            .ok_or_else(|| PlanError::UnknownSource {
                domain,
                name: name.to_string(),
            })
    }
}

/// A stage operation on the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOp {
    pub domain: Domain,
    #[serde(flatten)]
    pub action: StageAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StageAction {
    /// Switch a source to a fresh batch holding `tokens_b`. `source` may be
    /// omitted when the domain has exactly one source.
    NewBatch {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
        tokens_b: f64,
    },
    /// Keep `keep_fraction` of a source's tokens (every source of the
    /// domain when `source` is omitted).
    Filter {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
        keep_fraction: f64,
    },
    /// Split the domain budget across the named sources by these weights.
    Resample { weights: BTreeMap<String, f64> },
    /// Add a new source of the op's domain.
    NewDataset { source: DataSource },
}

/// Applies one stage op, returning the updated inventory.
pub fn apply_stage_op(inventory: &Inventory, op: &StageOp) -> Result<Inventory> {
    let mut inv = inventory.clone();
    let domain = op.domain;
    match &op.action {
        StageAction::NewBatch { source, tokens_b } => {
            if !(tokens_b.is_finite() && *tokens_b >= 0.0) {
                return Err(PlanError::BadParam(format!("NewBatch tokens_b must be finite and >= 0, got {tokens_b}")));
            }
            let idx = match source {
                Some(name) => inv.resolve(domain, name)?,
                None => {
                    let idx: Vec<usize> = (0..inv.sources.len()).filter(|&i| inv.sources[i].domain == domain).collect();
                    match idx.as_slice() {
                        [only] => *only,
                        _ => {
                            return Err(PlanError::BadParam(format!(
                                "NewBatch on {domain} needs a source name: the domain has {} sources",
                                idx.len()
                            )))
                        }
                    }
                }
            };
            let s = &mut inv.sources[idx];
            s.batch += 1;
            s.available_tokens_b = *tokens_b;
        }
        StageAction::Filter { source, keep_fraction } => {
            let keep = *keep_fraction;
            if !(keep > 0.0 && keep <= 1.0) {
                return Err(PlanError::BadParam(format!("keep_fraction must be in (0, 1], got {keep}")));
            }
            let targets: Vec<usize> = match source {
                Some(name) => vec![inv.resolve(domain, name)?],
                None => (0..inv.sources.len()).filter(|&i| inv.sources[i].domain == domain).collect(),
            };
            if targets.is_empty() {
                return Err(PlanError::BadParam(format!("Filter on {domain}: the domain has no sources")));
            }
            for i in targets {
                inv.sources[i].available_tokens_b *= keep;
            }
        }
        StageAction::Resample { weights } => {
            if weights.is_empty() {
                return Err(PlanError::BadParam(format!("Resample on {domain}: no weights")));
            }
            let mut total = 0.0;
            for (name, &w) in weights {
                inv.resolve(domain, name)?;
                if !(w.is_finite() && w >= 0.0) {
                    return Err(PlanError::BadParam(format!("Resample weight for {name:?} must be >= 0, got {w}")));
                }
                total += w;
            }
            if !(total > 0.0) {
                return Err(PlanError::BadParam(format!("Resample on {domain}: weights sum to 0")));
            }
            inv.directives.insert(domain, weights.clone());
        }
        StageAction::NewDataset { source } => {
            if source.domain != domain {
                return Err(PlanError::BadParam(format!(
                    "NewDataset {:?} is {} data, op targets {domain}",
                    source.name, source.domain
                )));
            }
            inv.push(source.clone()).map_err(|e| PlanError::BadParam(e.to_string()))?;
        }
    }
    Ok(inv)
}

/// Target domain mix and token budget of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecipe {
    pub stage: String,
    pub proportions: BTreeMap<Domain, f64>,
    pub budget_tokens_b: f64,
    #[serde(default)]
    pub ops: Vec<StageOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationPolicy {
    /// Oversampling epochs above this draw a warning.
    pub epoch_cap: f64,
    /// Accepted zh:en token ratio range, as zh/en.
    pub zh_en_band: [f64; 2],
    pub check_language_ratio: bool,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            epoch_cap: 3.0,
            zh_en_band: [1.0 / 3.0, 1.0 / 2.0],
            check_language_ratio: true,
        }
    }
}

const PROPORTION_TOLERANCE: f64 = 1e-9;
const BAND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Info,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    EpochCapExceeded,
    LanguageRatioOutOfBand,
    LanguageRatioUndefined,
    ScheduleTotalMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub level: Level,
    pub code: DiagnosticCode,
    pub stage: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Info => "info",
            Level::Warning => "warning",
        };
        write!(f, "{level}: stage {}: {}", self.stage, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAllocation {
    pub domain: Domain,
    pub language: Language,
    /// Share of the stage budget.
    pub weight: f64,
    pub target_tokens_b: f64,
    pub available_tokens_b: f64,
    /// `target_tokens_b / available_tokens_b`.
    pub epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub stage: String,
    pub budget_tokens_b: f64,
    pub per_source: BTreeMap<String, SourceAllocation>,
    pub diagnostics: Vec<Diagnostic>,
}

impl SamplingPlan {
    /// Planned tokens per language.
    pub fn language_tokens(&self, language: Language) -> f64 {
        self.per_source
            .values()
            .filter(|a| a.language == language)
            .map(|a| a.target_tokens_b)
            .sum()
    }
}

/// Compensated sum, correctly rounded for short lists of fractions.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn check_shape(recipe: &StageRecipe) -> Result<f64> {
    let bad = |reason: String| PlanError::BadRecipe {
        stage: recipe.stage.clone(),
        reason,
    };
    if !(recipe.budget_tokens_b.is_finite() && recipe.budget_tokens_b > 0.0) {
        return Err(bad(format!("budget_tokens_b must be > 0, got {}", recipe.budget_tokens_b)));
    }
    for (domain, &p) in &recipe.proportions {
        if !(0.0..=1.0).contains(&p) {
            return Err(bad(format!("{domain} fraction {p} is outside [0, 1]")));
        }
    }
    let sum = neumaier_sum(recipe.proportions.values().copied());
    if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
        return Err(PlanError::ProportionSumError {
            stage: recipe.stage.clone(),
            sum,
        });
    }
    Ok(sum)
}

/// Splits one domain's budget across its sources.
///
/// With a resample directive the directive weights decide. Otherwise tiers
/// are drained best-first, proportionally to available tokens within a
/// tier; if the whole domain holds less than the budget, every source is
/// oversampled by the same epoch count.
fn split_domain(
    stage: &str,
    domain: Domain,
    budget: f64,
    inventory: &Inventory,
) -> Result<Vec<(String, f64)>> {
    if let Some(weights) = inventory.directive(domain) {
        let total: f64 = weights.values().sum();
        let mut out = Vec::new();
        for (name, &w) in weights.iter().filter(|(_, &w)| w > 0.0) {
            let src = inventory.source(name).ok_or_else(|| PlanError::UnknownSource {
                domain,
                name: name.clone(),
            })?;
            if src.available_tokens_b <= 0.0 {
                return Err(PlanError::BadParam(format!("Resample targets {name:?}, which has no tokens available")));
            }
            out.push((name.clone(), budget * (w / total)));
        }
        return Ok(out);
    }

    let usable: Vec<&DataSource> = inventory.in_domain(domain).filter(|s| s.available_tokens_b > 0.0).collect();
    if usable.is_empty() {
        return Err(PlanError::EmptyDomain {
            stage: stage.to_string(),
            domain,
        });
    }
    let total: f64 = usable.iter().map(|s| s.available_tokens_b).sum();
    if budget >= total {
        return Ok(usable
            .iter()
            .map(|s| (s.name.clone(), budget * (s.available_tokens_b / total)))
            .collect());
    }
    let mut tiers: BTreeMap<u32, Vec<&DataSource>> = BTreeMap::new();
    for s in usable {
        tiers.entry(s.quality_tier).or_default().push(s);
    }
    let mut remaining = budget;
    let mut out = Vec::new();
    for sources in tiers.values() {
        if remaining <= 0.0 {
            break;
        }
        let tier_total: f64 = sources.iter().map(|s| s.available_tokens_b).sum();
        if remaining <= tier_total {
            out.extend(
                sources
                    .iter()
                    .map(|s| (s.name.clone(), remaining * (s.available_tokens_b / tier_total))),
            );
            remaining = 0.0;
        } else {
            out.extend(sources.iter().map(|s| (s.name.clone(), s.available_tokens_b)));
            remaining -= tier_total;
        }
    }
    Ok(out)
}

/// Allocates the stage budget to sources: domain budget is
/// `proportion * budget`, split within the domain by [`split_domain`] rules.
pub fn plan_stage(recipe: &StageRecipe, inventory: &Inventory, policy: &ValidationPolicy) -> Result<SamplingPlan> {
    check_shape(recipe)?;
    let budget = recipe.budget_tokens_b;
    let mut per_source = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (&domain, &p) in &recipe.proportions {
        if p == 0.0 {
            continue;
        }
        for (name, target) in split_domain(&recipe.stage, domain, p * budget, inventory)? {
            let src = inventory.source(&name).expect("split returns known sources");
            let epochs = target / src.available_tokens_b;
            if epochs > policy.epoch_cap {
                diagnostics.push(Diagnostic {
                    level: Level::Warning,
                    code: DiagnosticCode::EpochCapExceeded,
                    stage: recipe.stage.clone(),
                    message: format!(
                        "source {name} is oversampled {epochs} epochs ({target} of {} B tokens), above the cap of {}",
                        src.available_tokens_b, policy.epoch_cap
                    ),
                });
            }
            per_source.insert(
                name,
                SourceAllocation {
                    domain,
                    language: src.language,
                    weight: target / budget,
                    target_tokens_b: target,
                    available_tokens_b: src.available_tokens_b,
                    epochs,
                },
            );
        }
    }
    Ok(SamplingPlan {
        stage: recipe.stage.clone(),
        budget_tokens_b: budget,
        per_source,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeValidation {
    /// Compensated sum of the recipe fractions.
    pub proportion_sum: f64,
    /// Planned zh tokens over planned en tokens.
    pub zh_en_ratio: Option<f64>,
    pub plan: SamplingPlan,
    pub diagnostics: Vec<Diagnostic>,
}

/// Checks the proportion sum (error), then plans the stage and warns about
/// oversampling beyond the epoch cap and a zh:en ratio outside the band.
pub fn validate_recipe(recipe: &StageRecipe, inventory: &Inventory, policy: &ValidationPolicy) -> Result<RecipeValidation> {
    let proportion_sum = check_shape(recipe)?;
    let plan = plan_stage(recipe, inventory, policy)?;
    let mut diagnostics = plan.diagnostics.clone();

    let zh = plan.language_tokens(Language::Zh);
    let en = plan.language_tokens(Language::En);
    let zh_en_ratio = (en > 0.0).then(|| zh / en);
    if policy.check_language_ratio {
        let [lo, hi] = policy.zh_en_band;
        match zh_en_ratio {
            Some(r) if r < lo - BAND_TOLERANCE || r > hi + BAND_TOLERANCE => diagnostics.push(Diagnostic {
                level: Level::Warning,
                code: DiagnosticCode::LanguageRatioOutOfBand,
                stage: recipe.stage.clone(),
                message: format!(
                    "zh:en token ratio 1:{} is outside recommended band [1:{}, 1:{}]",
                    fmt_inverse(r),
                    fmt_inverse(hi),
                    fmt_inverse(lo)
                ),
            }),
            Some(_) => {}
            None if zh > 0.0 => diagnostics.push(Diagnostic {
                level: Level::Warning,
                code: DiagnosticCode::LanguageRatioOutOfBand,
                stage: recipe.stage.clone(),
                message: format!("plan has {zh} B zh tokens and no en tokens, outside recommended band"),
            }),
            None => diagnostics.push(Diagnostic {
                level: Level::Info,
                code: DiagnosticCode::LanguageRatioUndefined,
                stage: recipe.stage.clone(),
                message: "plan has no zh or en tokens; language ratio not checked".into(),
            }),
        }
    }
    Ok(RecipeValidation {
        proportion_sum,
        zh_en_ratio,
        plan,
        diagnostics,
    })
}

fn fmt_inverse(r: f64) -> String {
    if r == 0.0 {
        "inf".into()
    } else {
        format!("{:.3}", 1.0 / r).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRamp {
    pub start: u64,
    pub increment: u64,
    pub ramp_samples: u64,
    #[serde(rename = "final")]
    pub final_size: u64,
}

impl BatchRamp {
    pub fn validate(&self) -> Result<()> {
        if self.start == 0 {
            return Err(PlanError::BadRamp("start must be > 0".into()));
        }
        if self.final_size < self.start {
            return Err(PlanError::BadRamp(format!("final {} < start {}", self.final_size, self.start)));
        }
        if self.final_size > self.start {
            if self.increment == 0 || (self.final_size - self.start) % self.increment != 0 {
                return Err(PlanError::BadRamp(format!(
                    "increment {} does not divide final - start = {}",
                    self.increment,
                    self.final_size - self.start
                )));
            }
            if self.ramp_samples == 0 {
                return Err(PlanError::BadRamp("ramp_samples must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Number of distinct batch sizes on the staircase, `start` and `final` included.
    pub fn levels(&self) -> u64 {
        if self.final_size == self.start {
            1
        } else {
            (self.final_size - self.start) / self.increment + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub lr_peak: f64,
    pub lr_min: f64,
    pub warmup_tokens_b: f64,
    pub total_tokens_b: f64,
    pub batch_ramp: BatchRamp,
}

impl ScheduleSpec {
    /// 1.5e-4 peak after a 2 B-token warmup, cosine to 1.5e-5, batch 32 to
    /// 1024 in steps of 32 over 2M samples.
    pub fn with_total(total_tokens_b: f64) -> Self {
        ScheduleSpec {
            lr_peak: 1.5e-4,
            lr_min: 1.5e-5,
            warmup_tokens_b: 2.0,
            total_tokens_b,
            batch_ramp: BatchRamp {
                start: 32,
                increment: 32,
                ramp_samples: 2_000_000,
                final_size: 1024,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PlanError::BadSchedule(m));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_peak && self.lr_peak.is_finite()) {
            return bad(format!("need 0 < lr_min <= lr_peak, got {} and {}", self.lr_min, self.lr_peak));
        }
        if !(self.warmup_tokens_b > 0.0 && self.warmup_tokens_b < self.total_tokens_b && self.total_tokens_b.is_finite()) {
            return bad(format!(
                "need 0 < warmup < total, got {} and {}",
                self.warmup_tokens_b, self.total_tokens_b
            ));
        }
        self.batch_ramp.validate()
    }
}

/// Linear warmup from 0, then cosine decay from `lr_peak` to `lr_min` at
/// `total_tokens_b`.
pub fn lr_at(tokens_b: f64, schedule: &ScheduleSpec) -> Result<f64> {
    schedule.validate()?;
    if !(0.0..=schedule.total_tokens_b).contains(&tokens_b) {
        return Err(PlanError::OutOfRange {
            tokens_b,
            total_b: schedule.total_tokens_b,
        });
    }
    let s = schedule;
    if tokens_b <= s.warmup_tokens_b {
        return Ok(s.lr_peak * (tokens_b / s.warmup_tokens_b));
    }
    let progress = (tokens_b - s.warmup_tokens_b) / (s.total_tokens_b - s.warmup_tokens_b);
    Ok(s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Staircase batch size: the `levels()` sizes from `start` to `final` each
/// hold for an equal share of `ramp_samples`; `final` afterwards.
pub fn batch_size_at(samples_seen: u64, ramp: &BatchRamp) -> Result<u64> {
    ramp.validate()?;
    if ramp.final_size == ramp.start {
        return Ok(ramp.start);
    }
    let levels = ramp.levels();
    let step = (samples_seen as u128 * levels as u128 / ramp.ramp_samples as u128).min(levels as u128 - 1) as u64;
    Ok(ramp.start + step * ramp.increment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStage {
    pub recipe: StageRecipe,
    pub start_tokens_b: f64,
    pub end_tokens_b: f64,
    pub plan: SamplingPlan,
    pub zh_en_ratio: Option<f64>,
    /// Inventory after this stage's ops.
    pub inventory: Vec<DataSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub stages: Vec<PlannedStage>,
    pub cumulative_boundaries_b: Vec<f64>,
    pub schedule: ScheduleSpec,
    pub diagnostics: Vec<Diagnostic>,
}

/// Applies each stage's ops in order, plans the stage against the updated
/// inventory and accumulates phase boundaries. Resample directives last for
/// one stage.
pub fn build_training_plan(
    recipes: &[StageRecipe],
    inventory: &Inventory,
    schedule: &ScheduleSpec,
    policy: &ValidationPolicy,
) -> Result<TrainingPlan> {
    if recipes.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    schedule.validate()?;
    let mut inv = inventory.clone();
    let mut stages = Vec::with_capacity(recipes.len());
    let mut boundaries = Vec::with_capacity(recipes.len());
    let mut diagnostics = Vec::new();
    let mut start = 0.0;
    for recipe in recipes {
        inv.clear_directives();
        for op in &recipe.ops {
            inv = apply_stage_op(&inv, op)?;
        }
        let checked = validate_recipe(recipe, &inv, policy)?;
        let end = start + recipe.budget_tokens_b;
        boundaries.push(end);
        diagnostics.extend(checked.diagnostics);
        stages.push(PlannedStage {
            recipe: recipe.clone(),
            start_tokens_b: start,
            end_tokens_b: end,
            plan: checked.plan,
            zh_en_ratio: checked.zh_en_ratio,
            inventory: inv.sources.clone(),
        });
        start = end;
    }
    if schedule.total_tokens_b != start {
        diagnostics.push(Diagnostic {
            level: Level::Warning,
            code: DiagnosticCode::ScheduleTotalMismatch,
            stage: recipes[recipes.len() - 1].stage.clone(),
            message: format!(
                "schedule total {} B differs from the summed stage budgets {start} B",
                schedule.total_tokens_b
            ),
        });
    }
    Ok(TrainingPlan {
        stages,
        cumulative_boundaries_b: boundaries,
        schedule: *schedule,
        diagnostics,
    })
}

/// Machine-readable plan handed to a trainer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub stages: Vec<ManifestStage>,
    pub boundaries_b: Vec<f64>,
    pub total_tokens_b: f64,
    pub schedule: ManifestSchedule,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestStage {
    pub stage: String,
    pub start_tokens_b: f64,
    pub end_tokens_b: f64,
    pub budget_tokens_b: f64,
    pub proportions: BTreeMap<Domain, f64>,
    pub zh_en_ratio: Option<f64>,
    pub sources: BTreeMap<String, SourceAllocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestSchedule {
    #[serde(flatten)]
    pub spec: ScheduleSpec,
    /// Learning rate at the start of each stage and at the end of training.
    pub lr_at_boundaries: Vec<[f64; 2]>,
}

impl TrainingPlan {
    pub fn manifest(&self) -> Manifest {
        let total = self.cumulative_boundaries_b.last().copied().unwrap_or(0.0);
        let lr_points = self
            .stages
            .iter()
            .map(|s| s.start_tokens_b)
            .chain(std::iter::once(self.schedule.total_tokens_b))
            .filter_map(|t| lr_at(t, &self.schedule).ok().map(|lr| [t, lr]))
            .collect();
        Manifest {
            stages: self
                .stages
                .iter()
                .map(|s| ManifestStage {
                    stage: s.recipe.stage.clone(),
                    start_tokens_b: s.start_tokens_b,
                    end_tokens_b: s.end_tokens_b,
                    budget_tokens_b: s.recipe.budget_tokens_b,
                    proportions: s.recipe.proportions.clone(),
                    zh_en_ratio: s.zh_en_ratio,
                    sources: s.plan.per_source.clone(),
                })
                .collect(),
            boundaries_b: self.cumulative_boundaries_b.clone(),
            total_tokens_b: total,
            schedule: ManifestSchedule {
                spec: self.schedule,
                lr_at_boundaries: lr_points,
            },
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n"
    }
}

/// Recipe file: TOML (`[[stages]]`) or JSON (`{"stages": [...]}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub stages: Vec<StageRecipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<ValidationPolicy>,
}

impl RecipeFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file_err = |reason: String| PlanError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| file_err(e.to_string())),
            _ => serde_json::from_str(&text).map_err(|e| file_err(e.to_string())),
        }
    }

    /// The file's schedule, or the default schedule sized to the summed budgets.
    pub fn schedule_or_default(&self) -> ScheduleSpec {
        self.schedule
            .unwrap_or_else(|| ScheduleSpec::with_total(self.stages.iter().map(|s| s.budget_tokens_b).sum()))
    }
}
