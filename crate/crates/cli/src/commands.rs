//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use vkge_core::baselines::{
    clip_only_train, eval_vrt_two_stage, eval_vrv_two_stage, Method, TwoStagePipeline,
};
use vkge_core::data::{self, Dataset};
use vkge_core::error::{Error, Result};
use vkge_core::eval::{
    eval_trt, eval_tv, eval_vrt, eval_vrv_scored, eval_vt, video_split, JointTrtScorer, Metrics,
    RankResult, Task, TruthIndex, VrvScore,
};
use vkge_core::export::{export_embeddings, export_projection_2d};
use vkge_core::kge::{train_kge, KgeModel};
use vkge_core::training::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use vkge_core::training::{run_stage, ModelState, Stage, StageReport, TrainConfig};
use vkge_core::VideoId;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserTask {
    Vt,
    Tv,
    Trt,
    Vrt,
    Vrv,
}

impl UserTask {
    pub const ALL: [UserTask; 5] = [
        UserTask::Vt,
        UserTask::Tv,
        UserTask::Trt,
        UserTask::Vrt,
        UserTask::Vrv,
    ];

    pub fn parse(name: &str) -> Result<Vec<UserTask>> {
        match name.to_ascii_lowercase().as_str() {
            "vt" => Ok(vec![UserTask::Vt]),
            "tv" => Ok(vec![UserTask::Tv]),
            "trt" => Ok(vec![UserTask::Trt]),
            "vrt" => Ok(vec![UserTask::Vrt]),
            "vrv" => Ok(vec![UserTask::Vrv]),
            "all" => Ok(Vec::new()),
            other => Err(Error::Config(format!("unknown task: {other}"))),
        }
    }

    fn representative(&self) -> Task {
        match self {
            UserTask::Vt => Task::VT,
            UserTask::Tv => Task::TV,
            UserTask::Trt => Task::TrtTail,
            UserTask::Vrt => Task::VRT,
            UserTask::Vrv => Task::VRV,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSel {
    Raw,
    Filtered,
    Both,
}

impl ModeSel {
    pub fn parse(name: &str) -> Result<ModeSel> {
        match name.to_ascii_lowercase().as_str() {
            "raw" => Ok(ModeSel::Raw),
            "filtered" => Ok(ModeSel::Filtered),
            "both" => Ok(ModeSel::Both),
            other => Err(Error::Config(format!("unknown mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoSel {
    All,
    Train,
    Test,
}

impl VideoSel {
    pub fn parse(name: &str) -> Result<VideoSel> {
        match name.to_ascii_lowercase().as_str() {
            "all" => Ok(VideoSel::All),
            "train" => Ok(VideoSel::Train),
            "test" => Ok(VideoSel::Test),
            other => Err(Error::Config(format!("unknown video selection: {other}"))),
        }
    }
}

pub fn parse_vrv_score(name: &str) -> Result<VrvScore> {
    match name.to_ascii_lowercase().as_str() {
        "distance" => Ok(VrvScore::Distance),
        "cosine" => Ok(VrvScore::Cosine),
        other => Err(Error::Config(format!("unknown vrv score: {other}"))),
    }
}

pub fn select_videos(
    ds: &Dataset,
    sel: VideoSel,
    fraction: f64,
    seed: u64,
) -> Result<Vec<VideoId>> {
    match sel {
        VideoSel::All => Ok(ds.videos.iter().map(|v| v.id).collect()),
        VideoSel::Train => Ok(video_split(ds, fraction, seed)?.0),
        VideoSel::Test => Ok(video_split(ds, fraction, seed)?.1),
    }
}

fn metrics_line(method: &str, task: Task, mode: &str, m: &Metrics, queries: usize, skipped: usize) -> String {
    format!(
        "{method},{task},{mode},{:.4},{:.6},{:.6},{:.6},{queries},{skipped}",
        m.mr, m.hits1, m.hits3, m.hits10
    )
}

pub fn results_csv(method: &str, results: &[RankResult], mode: ModeSel) -> String {
    let mut out = String::from("method,task,mode,mr,hits1,hits3,hits10,queries,skipped\n");
    for r in results {
        if mode != ModeSel::Filtered {
            out.push_str(&metrics_line(method, r.task, "raw", &r.raw, r.queries, r.skipped));
            out.push('\n');
        }
        if mode != ModeSel::Raw {
            out.push_str(&metrics_line(method, r.task, "filtered", &r.filtered, r.queries, r.skipped));
            out.push('\n');
        }
    }
    out
}

fn ranks_csv(results: &[RankResult]) -> String {
    let mut out = String::from("task,mode,query,rank\n");
    for r in results {
        for (q, rank) in r.raw_ranks.iter().enumerate() {
            out.push_str(&format!("{},raw,{q},{rank}\n", r.task));
        }
        for (q, rank) in r.filtered_ranks.iter().enumerate() {
            out.push_str(&format!("{},filtered,{q},{rank}\n", r.task));
        }
    }
    out
}

pub fn cmd_gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let synth = cfg.synth_config()?;
    let ds = data::gen_synthetic(&synth)?;
    data::save_dir(&ds, out)?;
    println!(
        "generated {}: {} entities, {} relations, {} train + {} test triplets, {} tags, {} videos",
        out.display(),
        ds.entity_count(),
        ds.relation_count(),
        ds.train.len(),
        ds.test.len(),
        ds.tag_count(),
        ds.video_count()
    );
    Ok(())
}

fn epochs_for(stage: Stage, cfg: &TrainConfig) -> usize {
    match stage {
        Stage::One => cfg.epochs_stage1,
        Stage::Two => cfg.epochs_stage2,
        Stage::Three => cfg.epochs_stage3,
    }
}

fn loss_log(reports: &[StageReport]) -> String {
    let mut out = String::from("stage,epoch,loss_tag,loss_clip,loss_kg,loss_total\n");
    for rep in reports {
        for row in &rep.rows {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9}\n",
                row.stage, row.epoch, row.tag, row.clip, row.kg, row.total
            ));
        }
    }
    out
}

pub fn cmd_train(
    stage_arg: &str,
    config: &Path,
    data_dir: &Path,
    resume: Option<&Path>,
    out: &Path,
    loss_log_path: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let tcfg = cfg.train_config()?;
    let ds = data::load_dir(data_dir)?;

    let mut state = match resume {
        Some(path) => {
            let state = load_checkpoint(path)?.as_joint()?.clone();
            if state.config_digest != tcfg.digest() {
                return Err(Error::Config(format!(
                    "checkpoint {} was written with a different training config",
                    path.display()
                )));
            }
            state
        }
        None => ModelState::new(&ds, &tcfg)?,
    };

    let stages: Vec<Stage> = match stage_arg {
        "1" => vec![Stage::One],
        "2" => vec![Stage::Two],
        "3" => vec![Stage::Three],
        "all" => [Stage::One, Stage::Two, Stage::Three]
            .into_iter()
            .filter(|s| s.number() > state.stage)
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown stage {other}; expected 1, 2, 3 or all"
            )))
        }
    };
    if stages.is_empty() {
        return Err(Error::Config(
            "checkpoint has already completed every stage".into(),
        ));
    }

    let mut reports = Vec::new();
    for stage in &stages {
        let report = run_stage(&mut state, &ds, &tcfg, *stage, epochs_for(*stage, &tcfg))?;
        if report.kg_skipped > 0 {
            println!(
                "stage {}: {} graph terms skipped (videos without usable train triplets)",
                stage.number(),
                report.kg_skipped
            );
        }
        if let Some(last) = report.rows.last() {
            println!(
                "stage {} done: tag {:.6} clip {:.6} kg {:.6} total {:.6}",
                stage.number(),
                last.tag,
                last.clip,
                last.kg,
                last.total
            );
        }
        reports.push(report);
    }

    save_checkpoint(&Checkpoint::Joint(Box::new(state)), out)?;
    let log_path = match loss_log_path {
        Some(p) => p.to_path_buf(),
        None => out.with_extension("losses.csv"),
    };
    fs::write(&log_path, loss_log(&reports))?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn method_of_checkpoint(cp: &Checkpoint) -> Result<Method> {
    match cp {
        Checkpoint::Joint(state) if state.stage >= 3 => Ok(Method::Ours),
        Checkpoint::Joint(state) if state.stage >= 2 => Ok(Method::Clip),
        Checkpoint::Joint(state) => Err(Error::Config(format!(
            "checkpoint has only completed stage {}; finish stage 2 before evaluating",
            state.stage
        ))),
        Checkpoint::Kge { model, .. } => Method::parse(model.variant.name()),
    }
}

fn requested_tasks(task_arg: &str, method: Method) -> Result<Vec<UserTask>> {
    let parsed = UserTask::parse(task_arg)?;
    if parsed.is_empty() {
        // `all`: everything this method supports
        Ok(UserTask::ALL
            .into_iter()
            .filter(|t| method.supports(t.representative()))
            .collect())
    } else {
        for t in &parsed {
            method.check(t.representative())?;
        }
        Ok(parsed)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    task_arg: &str,
    mode: ModeSel,
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    ranks_out: Option<&Path>,
    videos: VideoSel,
    fraction: f64,
    split_seed: u64,
    vrv_score: VrvScore,
) -> Result<()> {
    let ds = data::load_dir(data_dir)?;
    let cp = load_checkpoint(checkpoint)?;
    let method = method_of_checkpoint(&cp)?;
    let tasks = requested_tasks(task_arg, method)?;
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to evaluate".into()));
    }
    let truth = TruthIndex::new(&ds);
    let selected = select_videos(&ds, videos, fraction, split_seed)?;

    let mut results: Vec<RankResult> = Vec::new();
    for task in tasks {
        match (task, &cp) {
            (UserTask::Vt, Checkpoint::Joint(state)) => {
                results.push(eval_vt(state, &ds, &selected)?);
            }
            (UserTask::Tv, Checkpoint::Joint(state)) => {
                results.push(eval_tv(state, &ds, &selected)?);
            }
            (UserTask::Trt, Checkpoint::Joint(state)) => {
                let scorer = JointTrtScorer::new(state, &ds)?;
                let (head, tail) = eval_trt(&scorer, &ds, &truth)?;
                results.push(head);
                results.push(tail);
            }
            (UserTask::Trt, Checkpoint::Kge { model, .. }) => {
                let (head, tail) = eval_trt(model, &ds, &truth)?;
                results.push(head);
                results.push(tail);
            }
            (UserTask::Vrt, Checkpoint::Joint(state)) => {
                results.push(eval_vrt(state, &ds, &truth)?);
            }
            (UserTask::Vrv, Checkpoint::Joint(state)) => {
                results.push(eval_vrv_scored(state, &ds, &truth, vrv_score)?);
            }
            (task, _) => {
                return Err(Error::Capability {
                    method: method.name().into(),
                    task: task.representative(),
                })
            }
        }
    }

    fs::write(out, results_csv(method.name(), &results, mode))?;
    if let Some(path) = ranks_out {
        fs::write(path, ranks_csv(&results))?;
    }
    for r in &results {
        println!(
            "{}: raw MR {:.2} H@10 {:.4} | filtered MR {:.2} H@10 {:.4} ({} queries, {} skipped)",
            r.task, r.raw.mr, r.raw.hits10, r.filtered.mr, r.filtered.hits10, r.queries, r.skipped
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}

pub fn cmd_export(
    checkpoint: &Path,
    data_dir: &Path,
    what: &str,
    out: &Path,
    videos: VideoSel,
    fraction: f64,
    split_seed: u64,
) -> Result<()> {
    let ds = data::load_dir(data_dir)?;
    let cp = load_checkpoint(checkpoint)?;
    let state = cp.as_joint()?;
    let mut buf = Vec::new();
    match what {
        "embeddings" => export_embeddings(state, &ds, &mut buf)?,
        "projection2d" => {
            let selected = select_videos(&ds, videos, fraction, split_seed)?;
            export_projection_2d(state, &ds, &selected, &mut buf)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown export {other}; expected embeddings or projection2d"
            )))
        }
    }
    fs::write(out, &buf)?;
    println!("export written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_baseline(
    method_arg: &str,
    config: &Path,
    data_dir: &Path,
    out: &Path,
    task_arg: &str,
    videos: VideoSel,
    fraction: f64,
    split_seed: u64,
    save_ckpt: Option<&Path>,
) -> Result<()> {
    let method = Method::parse(method_arg)?;
    if method == Method::Ours {
        return Err(Error::Config(
            "the joint model is trained and evaluated through the train/eval commands".into(),
        ));
    }
    let cfg = RunConfig::load(config)?;
    let ds = data::load_dir(data_dir)?;
    let truth = TruthIndex::new(&ds);
    let tasks = requested_tasks(task_arg, method)?;
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to evaluate".into()));
    }

    // train the pieces the method needs
    let kge_model: Option<KgeModel> = match method.kge_variant() {
        Some(variant) => {
            let kcfg = cfg.kge_config()?;
            let mut model = KgeModel::new_seeded(
                variant,
                ds.entity_count(),
                ds.relation_count(),
                kcfg.dim,
                kcfg.seed,
            );
            let trace = train_kge(&mut model, &ds, &kcfg)?;
            if let Some(last) = trace.last() {
                println!("{} trained: final loss {last:.6}", variant.name());
            }
            Some(model)
        }
        None => None,
    };
    let clip_state: Option<ModelState> = if matches!(
        method,
        Method::Clip | Method::ClipTransE | Method::ClipTransH | Method::ClipTransR
    ) {
        let tcfg = cfg.train_config()?;
        let (state, _) = clip_only_train(&ds, &tcfg)?;
        println!("contrastive encoders trained (stages 1-2)");
        Some(state)
    } else {
        None
    };

    let selected = select_videos(&ds, videos, fraction, split_seed)?;
    let mut results: Vec<RankResult> = Vec::new();
    for task in tasks {
        match task {
            UserTask::Vt => {
                let state = clip_state.as_ref().expect("capability checked");
                results.push(eval_vt(state, &ds, &selected)?);
            }
            UserTask::Tv => {
                let state = clip_state.as_ref().expect("capability checked");
                results.push(eval_tv(state, &ds, &selected)?);
            }
            UserTask::Trt => {
                let model = kge_model.as_ref().expect("capability checked");
                let (head, tail) = eval_trt(model, &ds, &truth)?;
                results.push(head);
                results.push(tail);
            }
            UserTask::Vrt => {
                let pipeline = TwoStagePipeline {
                    kge: kge_model.clone().expect("capability checked"),
                    clip: clip_state.clone().expect("capability checked"),
                };
                results.push(eval_vrt_two_stage(&pipeline, &ds, &truth)?);
            }
            UserTask::Vrv => {
                let pipeline = TwoStagePipeline {
                    kge: kge_model.clone().expect("capability checked"),
                    clip: clip_state.clone().expect("capability checked"),
                };
                results.push(eval_vrv_two_stage(&pipeline, &ds, &truth)?);
            }
        }
    }

    fs::write(out, results_csv(method.name(), &results, ModeSel::Both))?;
    if let Some(path) = save_ckpt {
        if let Some(model) = &kge_model {
            save_checkpoint(
                &Checkpoint::Kge {
                    model: model.clone(),
                    digest: cfg.kge_config()?.digest(),
                },
                path,
            )?;
        }
        if let Some(state) = &clip_state {
            let clip_path: PathBuf = if kge_model.is_some() {
                path.with_extension("clip.ckpt")
            } else {
                path.to_path_buf()
            };
            save_checkpoint(&Checkpoint::Joint(Box::new(state.clone())), clip_path)?;
        }
    }
    for r in &results {
        println!(
            "{}: raw MR {:.2} H@10 {:.4} | filtered MR {:.2} H@10 {:.4} ({} queries, {} skipped)",
            r.task, r.raw.mr, r.raw.hits10, r.filtered.mr, r.filtered.hits10, r.queries, r.skipped
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}
