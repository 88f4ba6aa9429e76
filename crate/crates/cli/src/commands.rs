use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use omnigait::dataset::{scan_manifest, Condition, Manifest, Modality, Split, SplitTable, INDEX_FILE};
use omnigait::evalproto::{
    embed_checkpoint, export_matrix_csv, matrix_reports, modality_matrix, reports_to_csv, run_eval, write_embeddings,
    EvalReport, Metric, ProtocolSpec,
};
use omnigait::model::{Checkpoint, OmniGait};
use omnigait::preprocess::project_point_dataset;
use omnigait::synthgen::generate_dataset;
use omnigait::trainer::{fit, load_checkpoint, ClassMap, SequenceStore, TrainState};

use crate::config::{self, JobConfig};
use crate::lock::OutputLock;
use crate::{Cli, Command, ModelArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    let _lock = OutputLock::acquire(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::SynthGen => {
            let manifest = generate_dataset(&cfg.synth, out)?;
            log::info!("wrote {} sequences to {}", manifest.len(), out.display());
        }
        Command::Preprocess(d) => {
            let manifest = project_point_dataset(&open_dataset(&d.data)?, &cfg.preprocess, out)?;
            log::info!("wrote {} projected sequences to {}", manifest.len(), out.display());
        }
        Command::Train { data, resume } => train(&cfg, &data.data, resume.as_deref(), out)?,
        Command::Eval { model, protocol } => {
            let test = test_split(&model.data.data)?;
            let reports = specs(&cfg, protocol)
                .iter()
                .map(|s| run_eval(&model.checkpoint, &test, s))
                .collect::<Result<Vec<_>, _>>()?;
            write_reports(out, &reports)?;
        }
        Command::ExportEmbeddings { model, protocol } => {
            let test = test_split(&model.data.data)?;
            let dir = out.join("embeddings");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for spec in specs(&cfg, protocol) {
                let set = embed_checkpoint(&model.checkpoint, &test, &spec)?;
                let path = dir.join(format!("{}.bin", slug(&spec)));
                write_embeddings(&path, &set)?;
                log::info!("wrote {} embeddings to {}", set.gallery.len() + set.probes.len(), path.display());
            }
        }
        Command::ReportMatrix { model, modalities } => report_matrix(&cfg, model, modalities, out)?,
    }
    Ok(())
}

fn open_dataset(root: &Path) -> Result<Manifest> {
    if root.join(INDEX_FILE).exists() {
        return Ok(Manifest::read_index(root)?);
    }
    let scan = scan_manifest(root)?;
    for w in &scan.warnings {
        log::warn!("{w}");
    }
    Ok(scan.manifest)
}

fn split(root: &Path, which: Split) -> Result<Manifest> {
    let manifest = open_dataset(root)?;
    let subjects = SplitTable::read(root)
        .with_context(|| format!("{} has no split table", root.display()))?
        .subjects_in(which);
    if subjects.is_empty() {
        bail!("{} has no {} subjects", root.display(), which.name());
    }
    Ok(manifest.with_subjects(&subjects))
}

fn test_split(root: &Path) -> Result<Manifest> {
    split(root, Split::Test)
}

fn specs(cfg: &JobConfig, given: &[ProtocolSpec]) -> Vec<ProtocolSpec> {
    if given.is_empty() {
        cfg.eval.protocols.clone()
    } else {
        given.to_vec()
    }
}

fn slug(spec: &ProtocolSpec) -> String {
    spec.to_string().replace("->", "_to_").replace([':', '+'], "_")
}

fn train(cfg: &JobConfig, data: &Path, resume: Option<&Path>, out: &Path) -> Result<()> {
    let mods = &cfg.model.modalities;
    let train = split(data, Split::Train)?.filter(|e| mods.contains(&e.meta.modality));
    let classes = ClassMap::from_manifest(&train);
    let model_cfg = cfg.model.build(classes.len());
    let mut state = match resume {
        Some(path) => {
            let (state, saved) = load_checkpoint(path)?;
            if state.model.config() != &model_cfg {
                bail!("{} was trained with a different [model] section", path.display());
            }
            if saved != classes {
                bail!("{} was trained on different subjects", path.display());
            }
            log::info!("resuming from step {}", state.step);
            state
        }
        None => TrainState::new(OmniGait::new(model_cfg, cfg.train.seed)?, &cfg.train),
    };
    let mut store = SequenceStore::new(train);
    let outcome = fit(&mut state, &mut store, &classes, &cfg.train, out)?;
    log::info!("ran {} steps; final checkpoint {}", outcome.steps, outcome.final_checkpoint.display());
    Ok(())
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<()> {
    let tables: String = reports.iter().map(|r| r.table() + "\n").collect();
    for line in tables.lines() {
        log::info!("{line}");
    }
    write(out.join("report.txt"), tables)?;
    write(out.join("report.csv"), reports_to_csv(reports))?;
    write(out.join("report.json"), serde_json::to_string_pretty(reports)? + "\n")
}

fn report_matrix(cfg: &JobConfig, model: &ModelArgs, given: &[Modality], out: &Path) -> Result<()> {
    let modalities = if !given.is_empty() {
        given.to_vec()
    } else if !cfg.eval.matrix_modalities.is_empty() {
        cfg.eval.matrix_modalities.clone()
    } else {
        Checkpoint::read(&model.checkpoint)?.config.modalities
    };
    let test = test_split(&model.data.data)?;
    let reports = matrix_reports(&model.checkpoint, &test, &modalities)?;
    let matrix = modality_matrix(&reports)?;
    for (i, &a) in modalities.iter().enumerate() {
        for &b in &modalities[i + 1..] {
            let ab = matrix.get(Metric::Rank1, Condition::Nm, a, b);
            let ba = matrix.get(Metric::Rank1, Condition::Nm, b, a);
            if let (Some(ab), Some(ba)) = (ab, ba) {
                log::info!("NM rank-1 {a}->{b} {ab:.2}, {b}->{a} {ba:.2}, asymmetry {:.2}", (ab - ba).abs());
            }
        }
    }
    export_matrix_csv(&out.join("matrix.csv"), &matrix)?;
    write_reports(out, &reports)?;
    log::info!("wrote {}", out.join("matrix.csv").display());
    Ok(())
}
