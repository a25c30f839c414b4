use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use umd2_core::datamodel::{load_profiles, load_records, write_records, EmbeddingSet, EmbeddingTable, Modality, ModalityMask};
use umd2_core::dataset::{
    build_dataset, dataset_stats, domain_coverage, label_counts, read_articles, read_dump, read_gold, synth_generate,
    temporal_distribution, weak_label, HarvestConfig, DAY,
};
use umd2_core::eval::{evaluate_clusters, pca_project, Averaging};
use umd2_core::pipeline::assemble_partial;
use umd2_core::prop::pretrain_prop;
use umd2_core::source::{pretrain_source, CredibilityDb};
use umd2_core::text::{pretrain_text, FeatureManifest, LexiconSet};
use umd2_core::umd2::{
    kshot_assign, predict, read_predictions, train_umd2, write_predictions, Network, Prediction, PredictionRow, Umd2Model,
};
use umd2_core::user::pretrain_user;

use crate::config::{pick, RunConfig};
use crate::{
    AveragingArg, BuildArgs, Cli, Command, EmbeddingArgs, EvalArgs, KshotArgs, PredictArgs, PretrainArgs, ProjectArgs,
    StatsArgs, SynthArgs, TrainArgs, UsageError,
};

const RUN_CONFIG: &str = "run_config.json";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.resolve_seed(cli.seed)?;
    match cli.command {
        Command::PretrainSource(a) => pretrain(Modality::Source, a, cfg),
        Command::PretrainText(a) => pretrain(Modality::Text, a, cfg),
        Command::PretrainProp(a) => pretrain(Modality::Propagation, a, cfg),
        Command::PretrainUser(a) => pretrain(Modality::User, a, cfg),
        Command::TrainUmd2(a) => train(a, cfg),
        Command::Predict(a) => predict_cmd(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Kshot(a) => kshot(a, cfg),
        Command::BuildDataset(a) => build(a, cfg),
        Command::Synth(a) => synth(a, cfg),
        Command::Stats(a) => stats(a, cfg),
        Command::Project(a) => project(a, cfg),
    }
}

/// `<file>.run.json` beside a file output.
fn sidecar(out: &Path) -> PathBuf {
    let mut s: OsString = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pretrain(kind: Modality, a: PretrainArgs, mut cfg: RunConfig) -> Result<()> {
    let records_path = pick(&a.records, &mut cfg.paths.records, "records")?;
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    let extra = match kind {
        Modality::Source => Some(pick(&a.credibility, &mut cfg.paths.credibility, "credibility")?),
        Modality::User => Some(pick(&a.profiles, &mut cfg.paths.profiles, "profiles")?),
        Modality::Text => a.lexicons.clone().or(cfg.paths.lexicons.clone()),
        Modality::Propagation => None,
    };
    if let Some(e) = a.epochs {
        match kind {
            Modality::Source => cfg.source.epochs = e,
            Modality::Text => cfg.text.epochs = e,
            Modality::Propagation => cfg.prop.epochs = e,
            Modality::User => cfg.user.epochs = e,
        }
    }
    let records = load_records(&records_path)?;
    create_dir(&out)?;
    cfg.record(&out.join(RUN_CONFIG))?;
    let checkpoint = out.join("checkpoint");
    let table = match kind {
        Modality::Source => {
            let db = CredibilityDb::load(&extra.expect("source needs credibility"))?;
            let pre = pretrain_source(&records, &db, &cfg.source)?;
            let mut nodes = EmbeddingTable::new(pre.nodes.dim);
            for (id, v) in &pre.nodes.vectors {
                nodes.push(id.clone(), v.clone())?;
            }
            create_dir(&checkpoint)?;
            nodes.write(&checkpoint.join("nodes.emb"))?;
            pre.embeddings
        }
        Modality::Text => {
            let lex = match &extra {
                Some(dir) => LexiconSet::load_dir(dir)?,
                None => LexiconSet::builtin(),
            };
            let manifest = FeatureManifest::for_lexicons(&lex);
            let (enc, table) = pretrain_text(&records, &lex, &manifest, &cfg.text)?;
            enc.save(&checkpoint)?;
            table
        }
        Modality::Propagation => {
            let (enc, table) = pretrain_prop(&records, &cfg.prop)?;
            enc.save(&checkpoint)?;
            table
        }
        Modality::User => {
            let profiles = load_profiles(&extra.expect("user needs profiles"))?;
            let (enc, table) = pretrain_user(&records, &profiles, &cfg.user)?;
            enc.save(&checkpoint)?;
            table
        }
    };
    let path = out.join("embeddings.emb");
    table.write(&path)?;
    log::info!("wrote {} {} embeddings to {}", table.len(), kind.short(), path.display());
    Ok(())
}

fn read_tables(a: &EmbeddingArgs) -> Result<[Option<EmbeddingTable>; 4]> {
    let mut out: [Option<EmbeddingTable>; 4] = Default::default();
    for (slot, p) in out.iter_mut().zip(&a.embeddings) {
        if p != "-" {
            *slot = Some(EmbeddingTable::read(Path::new(p))?);
        }
    }
    Ok(out)
}

fn load_sets(a: &EmbeddingArgs) -> Result<(Vec<String>, Vec<EmbeddingSet>)> {
    let tables = read_tables(a)?;
    Ok(assemble_partial(std::array::from_fn(|k| tables[k].as_ref()))?)
}

fn train(a: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    let u = &mut cfg.umd2;
    u.epochs = a.epochs.unwrap_or(u.epochs);
    u.clusters = a.clusters.unwrap_or(u.clusters);
    u.batch_size = a.batch_size.unwrap_or(u.batch_size);
    u.learning_rate = a.learning_rate.unwrap_or(u.learning_rate);
    let (ids, sets) = load_sets(&a.emb)?;
    create_dir(&out)?;
    cfg.record(&out.join(RUN_CONFIG))?;
    log::info!("training on {} records", ids.len());
    let model = train_umd2(&sets, &cfg.umd2)?;
    model.save(&out)?;
    log::info!("saved model to {}", out.display());
    Ok(())
}

fn rows(ids: &[String], preds: &[Prediction], labels: Option<&[usize]>) -> Vec<PredictionRow> {
    ids.iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (id, p))| PredictionRow {
            record_id: id.clone(),
            cluster: p.cluster,
            probs: p.probs.clone(),
            label: labels.map(|l| l[i]),
        })
        .collect()
}

fn predict_cmd(a: PredictArgs, mut cfg: RunConfig) -> Result<()> {
    let mask = ModalityMask::parse(&a.mask)?;
    let model_dir = pick(&a.model, &mut cfg.paths.model, "model")?;
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    let model = Umd2Model::load(&model_dir)?;
    let (ids, sets) = load_sets(&a.emb)?;
    let net = if mask.is_all_ones() { Network::Teacher } else { Network::Student };
    log::info!("predicting {} records with the {net:?} network, mask {}", ids.len(), a.mask);
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let preds = predict(&model, &refs, &vec![mask; refs.len()], net)?;
    cfg.record(&sidecar(&out))?;
    write_predictions(&out, &rows(&ids, &preds, None))?;
    Ok(())
}

fn gold_indices(path: &Path, ids: &[String]) -> Result<Vec<usize>> {
    let gold: HashMap<String, usize> = read_gold(path)?.into_iter().map(|(id, l)| (id, l.index())).collect();
    let missing: Vec<&str> = ids.iter().filter(|id| !gold.contains_key(*id)).map(String::as_str).take(10).collect();
    if !missing.is_empty() {
        return Err(UsageError(format!("no gold label for: {}", missing.join(", "))).into());
    }
    Ok(ids.iter().map(|id| gold[id]).collect())
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn eval(a: EvalArgs, mut cfg: RunConfig) -> Result<()> {
    let gold_path = pick(&a.gold, &mut cfg.paths.gold, "gold")?;
    let preds = read_predictions(&a.pred)?;
    let ids: Vec<String> = preds.iter().map(|r| r.record_id.clone()).collect();
    let gold = gold_indices(&gold_path, &ids)?;
    let clusters: Vec<usize> = preds.iter().map(|r| r.cluster).collect();
    let averaging = match a.averaging {
        AveragingArg::Binary => Averaging::Binary,
        AveragingArg::Macro => Averaging::Macro,
    };
    let report = evaluate_clusters(&a.dataset, &clusters, &gold, averaging)?;
    if let Some(out) = &a.out {
        cfg.record(&sidecar(out))?;
    }
    emit_json(&serde_json::to_value(report)?, a.out.as_deref())
}

/// `cluster,label` lines; a non-numeric first line is a header.
fn read_oracle(path: &Path) -> Result<BTreeMap<usize, usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut oracle = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match parts.as_slice() {
            [c, l] => c.parse::<usize>().ok().zip(l.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((c, l)) => {
                if oracle.insert(c, l).is_some() {
                    return Err(UsageError(format!("{}: cluster {c} listed twice", path.display())).into());
                }
            }
            None if i == 0 => continue,
            None => return Err(UsageError(format!("{} line {}: expected `cluster,label`", path.display(), i + 1)).into()),
        }
    }
    Ok(oracle)
}

fn kshot(a: KshotArgs, mut cfg: RunConfig) -> Result<()> {
    let model_dir = pick(&a.model, &mut cfg.paths.model, "model")?;
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    let model = Umd2Model::load(&model_dir)?;
    if model.cfg.clusters != a.k {
        return Err(UsageError(format!("--k {} but the model has {} clusters", a.k, model.cfg.clusters)).into());
    }
    let oracle = read_oracle(&a.oracle_file)?;
    if let Some(c) = oracle.keys().find(|&&c| c >= a.k) {
        return Err(UsageError(format!("oracle names cluster {c}, model has {}", a.k)).into());
    }
    let (ids, sets) = load_sets(&a.emb)?;
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let preds = predict(&model, &refs, &vec![ModalityMask::ones(); refs.len()], Network::Teacher)?;
    let clusters: Vec<usize> = preds.iter().map(|p| p.cluster).collect();
    let labels = kshot_assign(&clusters, &oracle)?;
    cfg.record(&sidecar(&out))?;
    write_predictions(&out, &rows(&ids, &preds, Some(&labels)))?;
    log::info!("labelled {} records from {} oracle answers", ids.len(), oracle.len());
    Ok(())
}

fn build(a: BuildArgs, mut cfg: RunConfig) -> Result<()> {
    let dump_path = pick(&a.dump, &mut cfg.paths.dump, "dump")?;
    let articles_path = pick(&a.articles, &mut cfg.paths.articles, "articles")?;
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    if let Some(p) = &a.harvest {
        cfg.harvest = HarvestConfig::load(p)?;
    }
    let (dump, malformed) = read_dump(&dump_path)?;
    let articles = read_articles(&articles_path)?;
    let (records, report) = build_dataset(&dump, malformed, &articles, &cfg.harvest)?;
    cfg.record(&sidecar(&out))?;
    write_records(&out, &records)?;
    let value = serde_json::to_value(&report)?;
    emit_json(&value, Some(&out.with_extension("report.json")))?;
    emit_json(&value, None)
}

fn synth(a: SynthArgs, mut cfg: RunConfig) -> Result<()> {
    let out = pick(&a.out, &mut cfg.paths.out, "out")?;
    let s = &mut cfg.synth;
    s.n = a.n.unwrap_or(s.n);
    s.fake_fraction = a.fake_fraction.unwrap_or(s.fake_fraction);
    s.n_domains = a.n_domains.unwrap_or(s.n_domains);
    s.noise = a.noise.unwrap_or(s.noise);
    let data = synth_generate(&cfg.synth)?;
    create_dir(&out)?;
    cfg.record(&out.join(RUN_CONFIG))?;
    data.write(&out)?;
    log::info!("wrote {} synthetic records to {}", data.records.len(), out.display());
    Ok(())
}

fn stats(a: StatsArgs, mut cfg: RunConfig) -> Result<()> {
    let records_path = pick(&a.records, &mut cfg.paths.records, "records")?;
    let records = load_records(&records_path)?;
    let mut value = json!({
        "stats": dataset_stats(&records),
        "coverage": domain_coverage(&records),
    });
    let cred = a.credibility.clone().or(cfg.paths.credibility.clone());
    if let Some(p) = cred {
        let db = CredibilityDb::load(&p)?;
        let labels: Vec<_> = records.iter().map(|r| weak_label(r, &db)).collect();
        let counts: BTreeMap<String, usize> = label_counts(&labels)
            .into_iter()
            .map(|(l, n)| (l.map_or("unlabelled".to_string(), |l| format!("{l:?}").to_lowercase()), n))
            .collect();
        value["weak_labels"] = serde_json::to_value(counts)?;
        if let Some(h) = &a.histogram {
            if a.bin_days == 0 {
                return Err(UsageError("--bin-days must be > 0".into()).into());
            }
            temporal_distribution(&records, &labels, a.bin_days * DAY)?.write_csv(h)?;
        }
    } else if a.histogram.is_some() {
        return Err(UsageError("--histogram needs --credibility for labels".into()).into());
    }
    if let Some(out) = &a.out {
        cfg.record(&sidecar(out))?;
    }
    emit_json(&value, a.out.as_deref())
}

fn project(a: ProjectArgs, cfg: RunConfig) -> Result<()> {
    let (ids, data) = match (&a.input, &a.model, &a.embeddings) {
        (Some(p), _, _) => {
            let t = EmbeddingTable::read(p)?;
            (t.ids, t.rows)
        }
        (None, Some(m), Some(e)) => {
            let model = Umd2Model::load(m)?;
            let (ids, sets) = load_sets(&EmbeddingArgs { embeddings: e.clone() })?;
            let refs: Vec<&EmbeddingSet> = sets.iter().collect();
            let batch = model.batch(&refs, &vec![ModalityMask::ones(); refs.len()])?;
            let (z, _) = model.forward(Network::Teacher, &batch)?;
            let rows = (0..z.rows()).map(|r| z.row_vec(r)).collect();
            (ids, rows)
        }
        _ => return Err(UsageError("give --input, or --model with --embeddings".into()).into()),
    };
    if a.dims == 0 {
        return Err(UsageError("--dims must be > 0".into()).into());
    }
    let coords = pca_project(&data, a.dims)?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut header = vec!["record_id".to_string()];
    header.extend((1..=a.dims).map(|d| format!("pc{d}")));
    w.write_record(&header)?;
    for (id, c) in ids.iter().zip(&coords) {
        let mut rec = vec![id.clone()];
        rec.extend(c.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    cfg.record(&sidecar(&a.out))?;
    Ok(())
}
