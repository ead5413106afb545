//! The two-step workflow for one operator: tune ratios on representatives of
//! a selected group, then propagate them over the group and refine.
//!
//! Every operation checks the current step first and only mutates once all
//! fallible work is done, so a rejected call leaves the session untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sdrec_core::data::PlayerId;
use sdrec_core::features::Channel;
use sdrec_core::metrics::{
    content_diversity, mean_quality, mean_sd, quality, sd_metrics, History, QualityMetrics, SDMetrics, METRIC_CHANNEL,
};
use sdrec_core::pipeline::{
    band_classify, generate_candidates, run_pipeline, sample, sample_seed, InterRatio, IntraRatio, PipelineConfig,
    PipelineRun, PreferenceRatio, BANDS,
};
use sdrec_core::projection::{radial_layout, Axial};
use sdrec_core::propagation::{
    build_similarity_graph, propagate_observed, uncertain_players, PropagationResult,
};
use sdrec_core::ranker::{rank, PairFeaturizer, RankedList};

use crate::config::Config;
use crate::dataset::{attribute_names, DatasetEntry};
use crate::error::{ServiceError, ServiceResult};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Step {
    #[serde(rename = "1.1")]
    GroupSelection,
    #[serde(rename = "1.2")]
    RepresentativeSelection,
    #[serde(rename = "1.3")]
    RatioMediation,
    #[serde(rename = "1.4")]
    SdVerification,
    #[serde(rename = "2.1")]
    Propagation,
    #[serde(rename = "2.2")]
    Evaluation,
    #[serde(rename = "done")]
    Done,
}

impl Step {
    pub fn code(self) -> &'static str {
        match self {
            Step::GroupSelection => "1.1",
            Step::RepresentativeSelection => "1.2",
            Step::RatioMediation => "1.3",
            Step::SdVerification => "1.4",
            Step::Propagation => "2.1",
            Step::Evaluation => "2.2",
            Step::Done => "done",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub seq: usize,
    pub op: String,
    pub from: Step,
    pub to: Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinRef {
    pub channel: Channel,
    pub q: i32,
    pub r: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub bins: Vec<BinRef>,
    pub players: BTreeSet<PlayerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTableEntry {
    pub row_id: String,
    pub representative: PlayerId,
    pub ratio: PreferenceRatio,
    pub seed: u64,
    pub n: usize,
    pub sd: SDMetrics,
}

/// Ratio parameters as sent by a client. `baseline: true` selects the
/// reserved baseline ratio and ignores the maps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioParams {
    pub baseline: bool,
    pub intra: BTreeMap<Channel, [f64; BANDS]>,
    pub inter: BTreeMap<Channel, f64>,
}

impl RatioParams {
    pub fn to_ratio(&self, id: &str) -> ServiceResult<PreferenceRatio> {
        if self.baseline {
            let mut r = PreferenceRatio::baseline();
            r.ratio_id = id.into();
            return Ok(r);
        }
        Ok(PreferenceRatio::new(id, IntraRatio(self.intra.clone()), InterRatio::new(self.inter.clone())?)?)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct SampleRequest {
    pub representative: Option<PlayerId>,
    pub channel: Option<Channel>,
    pub freqs: Option<[f64; BANDS]>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RankRequest {
    pub representative: Option<PlayerId>,
    #[serde(flatten)]
    pub ratio: RatioParams,
    pub seed: Option<u64>,
    pub n: Option<usize>,
}

/// Result of a propagation round, computed without touching the session.
#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub result: PropagationResult,
    pub sd: SDMetrics,
    pub quality: QualityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub step: Step,
    pub trail: Vec<Transition>,
    pub group: Option<Group>,
    pub representatives: Vec<PlayerId>,
    pub current: Option<PlayerId>,
    pub ratio_table: Vec<RatioTableEntry>,
    /// Labelled player -> ratio table row id.
    pub assignments: BTreeMap<PlayerId, String>,
    pub propagation: Option<PropagationResult>,
    pub history: History,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    session: Session,
}

impl Session {
    pub fn new(id: impl Into<String>, dataset_id: impl Into<String>, seed: u64) -> Self {
        Session {
            id: id.into(),
            dataset_id: dataset_id.into(),
            seed,
            step: Step::GroupSelection,
            trail: Vec::new(),
            group: None,
            representatives: Vec::new(),
            current: None,
            ratio_table: Vec::new(),
            assignments: BTreeMap::new(),
            propagation: None,
            history: History::default(),
        }
    }

    pub fn snapshot(&self) -> ServiceResult<String> {
        let s = Snapshot {
            version: SNAPSHOT_VERSION,
            session: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    pub fn from_snapshot(text: &str) -> ServiceResult<Self> {
        let s: Snapshot = serde_json::from_str(text)?;
        if s.version != SNAPSHOT_VERSION {
            return Err(ServiceError::BadRequest(format!("unsupported snapshot version {}", s.version)));
        }
        Ok(s.session)
    }

    fn require(&self, op: &'static str, allowed: &[Step]) -> ServiceResult<()> {
        if allowed.contains(&self.step) {
            Ok(())
        } else {
            Err(ServiceError::IllegalStep { op, step: self.step })
        }
    }

    fn advance(&mut self, op: &str, to: Step) {
        self.trail.push(Transition {
            seq: self.trail.len() + 1,
            op: op.into(),
            from: self.step,
            to,
        });
        self.step = to;
    }

    fn group_players(&self) -> ServiceResult<&BTreeSet<PlayerId>> {
        self.group
            .as_ref()
            .map(|g| &g.players)
            .ok_or_else(|| ServiceError::BadRequest("no group selected".into()))
    }

    fn representative(&self, requested: Option<PlayerId>) -> ServiceResult<PlayerId> {
        let p = requested
            .or(self.current)
            .ok_or_else(|| ServiceError::BadRequest("no representative selected".into()))?;
        if !self.representatives.contains(&p) {
            return Err(ServiceError::BadRequest(format!("player {p} is not a representative")));
        }
        Ok(p)
    }

    fn row(&self, row_id: &str) -> ServiceResult<&RatioTableEntry> {
        self.ratio_table
            .iter()
            .find(|r| r.row_id == row_id)
            .ok_or_else(|| ServiceError::NotFound(format!("ratio row {row_id}")))
    }

    pub fn view(&self) -> Value {
        json!({
            "id": self.id,
            "dataset_id": self.dataset_id,
            "step": self.step,
            "trail": self.trail,
            "group": self.group,
            "representatives": self.representatives,
            "current": self.current,
            "ratio_table": self.ratio_table,
            "assignments": self.assignments,
            "iterations": self.history.len(),
        })
    }

    // ----------------------------------------------------------- step 1.1

    pub fn select_group(&mut self, ctx: &DatasetEntry, bins: &[BinRef]) -> ServiceResult<Value> {
        self.require("select_group", &[Step::GroupSelection])?;
        let mut players = BTreeSet::new();
        let mut unique_bins: Vec<BinRef> = bins.to_vec();
        unique_bins.sort();
        unique_bins.dedup();
        for b in &unique_bins {
            let (_, grid) = &ctx.projections[&b.channel];
            let bin = grid
                .bin(Axial { q: b.q, r: b.r })
                .ok_or_else(|| ServiceError::NotFound(format!("{} hexbin ({}, {})", b.channel, b.q, b.r)))?;
            players.extend(bin.members.iter().copied());
        }
        if players.is_empty() {
            return Err(ServiceError::BadRequest("empty group selection".into()));
        }
        let payload = group_payload(ctx, &players);
        self.group = Some(Group {
            bins: unique_bins,
            players,
        });
        self.advance("select_group", Step::RepresentativeSelection);
        Ok(payload)
    }

    // ----------------------------------------------------------- step 1.2

    pub fn select_representative(&mut self, ctx: &DatasetEntry, player: PlayerId) -> ServiceResult<Value> {
        self.require("select_representative", &[Step::RepresentativeSelection, Step::SdVerification])?;
        if !self.group_players()?.contains(&player) {
            return Err(ServiceError::BadRequest(format!("player {player} is not in the group")));
        }
        let record = ctx.dataset.player(player).ok_or(sdrec_core::Error::UnknownPlayer(player))?;
        let payload = json!({
            "representative": player,
            "attributes": attribute_names(&ctx.dataset).into_iter().zip(ctx.attributes[&player].iter().copied()).collect::<BTreeMap<_, _>>(),
            "friends_before": record.friends_before.len(),
            "displayed_avatar": record.displayed_avatar,
            "inventory": record.inventory().collect::<Vec<_>>(),
        });
        if !self.representatives.contains(&player) {
            self.representatives.push(player);
        }
        self.current = Some(player);
        if self.step == Step::SdVerification {
            self.advance("next_representative", Step::RepresentativeSelection);
        }
        self.advance("select_representative", Step::RatioMediation);
        Ok(payload)
    }

    // ------------------------------------------------------- steps 1.3/1.4

    fn pipeline_config(&self, cfg: &Config, seed: Option<u64>) -> PipelineConfig {
        PipelineConfig {
            k: cfg.recommend.k,
            m: cfg.recommend.m,
            seed: seed.unwrap_or(self.seed),
        }
    }

    pub fn sample(&mut self, ctx: &DatasetEntry, cfg: &Config, req: &SampleRequest) -> ServiceResult<Value> {
        self.require("sample", &[Step::RatioMediation, Step::SdVerification])?;
        let rep = self.representative(req.representative)?;
        let channel = req.channel.ok_or_else(|| ServiceError::BadRequest("channel is required".into()))?;
        let freqs = req.freqs.unwrap_or([1.0; BANDS]);
        IntraRatio(BTreeMap::from([(channel, freqs)])).validate()?;
        let pc = self.pipeline_config(cfg, req.seed);
        let friends = &ctx.dataset.player(rep).ok_or(sdrec_core::Error::UnknownPlayer(rep))?.friends_before;
        let cc = generate_candidates(&ctx.features, rep, friends, channel, pc.k)?;
        let bc = band_classify(&cc)?;
        let drawn = sample(&bc, &freqs, sample_seed(pc.seed, rep, channel))?;
        let chosen: BTreeSet<PlayerId> = drawn.ids().collect();
        let layout = radial_layout(&bc, sample_seed(pc.seed, rep, channel) ^ 1);
        let points: Vec<Value> = layout
            .points
            .iter()
            .map(|p| {
                let [x, y] = p.xy();
                json!({
                    "player": p.player, "band": p.band, "similarity": p.similarity,
                    "radius": p.radius, "angle": p.angle, "x": x, "y": y,
                    "sampled": chosen.contains(&p.player),
                })
            })
            .collect();
        let drawn_ids: Vec<PlayerId> = drawn.ids().collect();
        let all_ids: Vec<PlayerId> = cc.ids().collect();
        let per_band: Vec<usize> = (0..BANDS)
            .map(|b| bc.bands[b].iter().filter(|(p, _)| chosen.contains(p)).count())
            .collect();
        let payload = json!({
            "representative": rep,
            "channel": channel,
            "freqs": freqs,
            "band_sizes": bc.sizes(),
            "sampled_per_band": per_band,
            "ring_radii": layout.ring_radii,
            "points": points,
            "diversity": {
                "sampled": content_diversity(&drawn_ids, &ctx.features, METRIC_CHANNEL)?,
                "candidates": content_diversity(&all_ids, &ctx.features, METRIC_CHANNEL)?,
            },
        });
        if self.step == Step::SdVerification {
            self.advance("adjust", Step::RatioMediation);
        }
        Ok(payload)
    }

    fn run(&self, ctx: &DatasetEntry, cfg: &Config, rep: PlayerId, ratio: &PreferenceRatio, seed: Option<u64>) -> ServiceResult<PipelineRun> {
        let friends = &ctx.dataset.player(rep).ok_or(sdrec_core::Error::UnknownPlayer(rep))?.friends_before;
        Ok(run_pipeline(&ctx.features, rep, friends, ratio, &self.pipeline_config(cfg, seed))?)
    }

    pub fn fuse(&mut self, ctx: &DatasetEntry, cfg: &Config, req: &RankRequest) -> ServiceResult<Value> {
        self.require("fuse", &[Step::RatioMediation, Step::SdVerification])?;
        let rep = self.representative(req.representative)?;
        let ratio = req.ratio.to_ratio("draft")?;
        let run = self.run(ctx, cfg, rep, &ratio, req.seed)?;
        let points: Vec<Value> = run
            .fused
            .entries
            .iter()
            .map(|e| {
                let anchor = e.membership.iter().next().copied().unwrap_or(METRIC_CHANNEL);
                let xy = ctx.projections[&anchor].0.coords.get(&e.player).copied().unwrap_or([0.0, 0.0]);
                let pies: Vec<Value> = e
                    .membership
                    .iter()
                    .map(|c| json!({ "channel": c, "radius": e.similarity[c] }))
                    .collect();
                json!({ "player": e.player, "x": xy[0], "y": xy[1], "membership": e.membership, "pies": pies })
            })
            .collect();
        let ids: Vec<PlayerId> = run.fused.ids().collect();
        let payload = json!({
            "representative": rep,
            "target_size": run.fused.target_size,
            "slots": run.fused.slots,
            "size": run.fused.len(),
            "points": points,
            "content_diversity": content_diversity(&ids, &ctx.features, METRIC_CHANNEL)?,
        });
        if self.step == Step::SdVerification {
            self.advance("adjust", Step::RatioMediation);
        }
        Ok(payload)
    }

    pub fn rank(&mut self, ctx: &DatasetEntry, cfg: &Config, req: &RankRequest) -> ServiceResult<Value> {
        self.require("rank", &[Step::RatioMediation, Step::SdVerification])?;
        let rep = self.representative(req.representative)?;
        let seed = req.seed.unwrap_or(self.seed);
        let n = req.n.unwrap_or(cfg.recommend.n);
        if n == 0 {
            return Err(ServiceError::BadRequest("n must be positive".into()));
        }
        let draft = req.ratio.to_ratio("draft")?;
        let existing = self.ratio_table.iter().find(|r| {
            r.representative == rep && r.seed == seed && r.n == n && r.ratio.intra == draft.intra && r.ratio.inter == draft.inter
        });
        let row_id = match existing {
            Some(r) => r.row_id.clone(),
            None => {
                let k = self.ratio_table.iter().filter(|r| r.representative == rep).count() + 1;
                format!("p{rep}-r{k}")
            }
        };
        let ratio = req.ratio.to_ratio(&row_id)?;
        let run = self.run(ctx, cfg, rep, &ratio, Some(seed))?;
        let featurizer = PairFeaturizer::new(&ctx.dataset, &ctx.features);
        let list = rank(&ctx.model, &featurizer, rep, &run.fused, n)?;
        let friends = &ctx.dataset.player(rep).ok_or(sdrec_core::Error::UnknownPlayer(rep))?.friends_before;
        let recs: Vec<PlayerId> = list.ids().collect();
        let sd = sd_metrics(rep, &recs, friends, &ctx.features, METRIC_CHANNEL)?;
        let lineup = lineup_payload(ctx, rep, &run, &list, &ratio);
        let appended = existing.is_none();
        if appended {
            self.ratio_table.push(RatioTableEntry {
                row_id: row_id.clone(),
                representative: rep,
                ratio,
                seed,
                n,
                sd,
            });
        }
        if self.step == Step::RatioMediation {
            self.advance("rank", Step::SdVerification);
        }
        let table: Vec<&RatioTableEntry> = self.ratio_table.iter().filter(|r| r.representative == rep).collect();
        Ok(json!({
            "row_id": row_id,
            "appended": appended,
            "representative": rep,
            "sd": sd,
            "lineup": lineup,
            "table": table,
        }))
    }

    pub fn assign(&mut self, representative: PlayerId, row_id: &str) -> ServiceResult<Value> {
        self.require("assign", &[Step::SdVerification])?;
        let rep = self.representative(Some(representative))?;
        self.row(row_id)?;
        self.assignments.insert(rep, row_id.to_string());
        Ok(json!({ "assignments": self.assignments }))
    }

    // ------------------------------------------------------------ step 2

    /// Propagates the assigned ratios over the group and scores every member
    /// with its assigned ratio. `progress(fraction)` returning `false` cancels.
    pub fn plan_propagation(
        &self,
        ctx: &DatasetEntry,
        cfg: &Config,
        progress: &mut dyn FnMut(f64) -> bool,
    ) -> ServiceResult<PropagationOutcome> {
        self.require("propagate", &[Step::SdVerification, Step::Propagation])?;
        if self.assignments.is_empty() {
            return Err(ServiceError::BadRequest("propagation needs at least one assigned ratio".into()));
        }
        let group = self.group_players()?;
        let graph = build_similarity_graph(group, &ctx.features, &cfg.similarity)?;
        let max_iter = cfg.propagation.max_iter.max(1) as f64;
        let mut cancelled = false;
        let result = propagate_observed(&graph, &self.assignments, &cfg.propagation, |it, _| {
            if !cancelled && !progress(0.3 * it as f64 / max_iter) {
                cancelled = true;
            }
        })?;
        if cancelled {
            return Err(ServiceError::Cancelled);
        }
        let featurizer = PairFeaturizer::new(&ctx.dataset, &ctx.features);
        let pc = self.pipeline_config(cfg, None);
        let mut sds = Vec::with_capacity(result.players.len());
        let mut qs = Vec::with_capacity(result.players.len());
        for (i, a) in result.players.iter().enumerate() {
            if !progress(0.3 + 0.7 * i as f64 / result.players.len() as f64) {
                return Err(ServiceError::Cancelled);
            }
            let ratio = &self.row(&a.assigned)?.ratio;
            let record = ctx.dataset.player(a.player).ok_or(sdrec_core::Error::UnknownPlayer(a.player))?;
            let run = run_pipeline(&ctx.features, a.player, &record.friends_before, ratio, &pc)?;
            if run.fused.is_empty() {
                continue;
            }
            let list = rank(&ctx.model, &featurizer, a.player, &run.fused, cfg.recommend.n)?;
            let recs: Vec<PlayerId> = list.ids().collect();
            sds.push(sd_metrics(a.player, &recs, &record.friends_before, &ctx.features, METRIC_CHANNEL)?);
            qs.push(quality(&recs, &record.friends_after, cfg.recommend.n));
        }
        Ok(PropagationOutcome {
            result,
            sd: mean_sd(&sds),
            quality: mean_quality(&qs),
        })
    }

    pub fn commit_propagation(&mut self, outcome: PropagationOutcome) -> Value {
        let PropagationOutcome { result, sd, quality } = outcome;
        let group_id = format!("{}/group", self.id);
        let iteration = self.history.record(group_id, sd, quality, result.assignment()).iteration;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &result.players {
            *counts.entry(a.assigned.as_str()).or_default() += 1;
        }
        let payload = json!({
            "iteration": iteration,
            "converged": result.converged,
            "iterations": result.iterations,
            "ratio_ids": result.ratio_ids,
            "counts": counts,
            "mean_max_probability": result.mean_max_probability(),
            "sd": sd,
            "quality": quality,
        });
        self.propagation = Some(result);
        if self.step == Step::SdVerification {
            self.advance("start_propagation", Step::Propagation);
        }
        self.advance("propagate", Step::Evaluation);
        payload
    }

    pub fn uncertain(&self, k: usize) -> ServiceResult<Value> {
        self.require("uncertain", &[Step::Evaluation])?;
        let res = self.propagation.as_ref().ok_or_else(|| ServiceError::Internal("missing propagation result".into()))?;
        let rows: Vec<Value> = uncertain_players(res, k)?
            .into_iter()
            .map(|a| {
                json!({
                    "player": a.player,
                    "uncertainty": a.uncertainty,
                    "assigned": a.assigned,
                    "probabilities": res.ratio_ids.iter().cloned().zip(a.probabilities.iter().copied()).collect::<BTreeMap<_, _>>(),
                })
            })
            .collect();
        Ok(json!({ "rows": rows }))
    }

    pub fn remediate(&mut self, player: PlayerId, row_id: &str) -> ServiceResult<Value> {
        self.require("remediate", &[Step::Evaluation])?;
        if !self.group_players()?.contains(&player) {
            return Err(ServiceError::BadRequest(format!("player {player} is not in the group")));
        }
        self.row(row_id)?;
        self.assignments.insert(player, row_id.to_string());
        if !self.representatives.contains(&player) {
            self.representatives.push(player);
        }
        self.advance("remediate", Step::Propagation);
        Ok(json!({ "player": player, "row_id": row_id, "step": self.step }))
    }

    pub fn finish(&mut self) -> ServiceResult<Value> {
        self.require("finish", &[Step::Evaluation])?;
        self.advance("finish", Step::Done);
        Ok(json!({ "step": self.step }))
    }

    pub fn history_payload(&self) -> Value {
        json!({ "records": self.history.records() })
    }
}

fn group_payload(ctx: &DatasetEntry, players: &BTreeSet<PlayerId>) -> Value {
    let names = attribute_names(&ctx.dataset);
    let axes: Vec<Value> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (lo, hi) = players
                .iter()
                .map(|p| ctx.attributes[p][k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            json!({ "name": name, "min": lo, "max": hi })
        })
        .collect();
    let rows: Vec<Value> = players
        .iter()
        .map(|p| json!({ "player": p, "values": ctx.attributes[p] }))
        .collect();
    json!({
        "group_size": players.len(),
        "players": players,
        "parallel": { "axes": axes, "rows": rows },
    })
}

fn lineup_payload(ctx: &DatasetEntry, rep: PlayerId, run: &PipelineRun, list: &RankedList, ratio: &PreferenceRatio) -> Value {
    let by_player: BTreeMap<PlayerId, &sdrec_core::pipeline::FusedEntry> =
        run.fused.entries.iter().map(|e| (e.player, e)).collect();
    let columns: Vec<Channel> = ratio.active_channels();
    let rows: Vec<Value> = list
        .entries
        .iter()
        .enumerate()
        .map(|(i, (p, score))| {
            let e = by_player[p];
            let similarity: BTreeMap<Channel, f64> = columns
                .iter()
                .map(|c| (*c, ctx.features.cosine(rep, *p, *c).unwrap_or(0.0)))
                .collect();
            json!({
                "rank": i + 1,
                "player": p,
                "score": score,
                "membership": e.membership,
                "similarity": similarity,
            })
        })
        .collect();
    json!({ "columns": columns, "rows": rows })
}

